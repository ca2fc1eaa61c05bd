use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::grammar::Grammar;
use super::lexicon::{g2p, phoneme_id, phoneme_symbol, Lexicon, PhonemeSeq};
use super::waveform::{read_wav, synth_waveform, write_wav};
use crate::labels::{parse_from_string, serialize_to_string, Annotation};
use crate::nn::RngStream;
use crate::{Error, Result};

/// One corpus item: a sentence with its pronunciation and, for paired
/// splits, rendered audio.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub words: Vec<String>,
    pub phonemes: PhonemeSeq,
    pub speaker: usize,
    pub frame: Option<Annotation>,
    pub audio: Option<PathBuf>,
    /// In-memory samples; populated by generation and by [`load_split`].
    pub samples: Option<Vec<f32>>,
}

impl Utterance {
    pub fn sentence(&self) -> String {
        self.words.join(" ")
    }
}

/// Single-line manifest record. Field order is fixed.
#[derive(Debug, Serialize, Deserialize)]
struct ManifestRecord {
    id: String,
    words: String,
    phonemes: String,
    speaker: usize,
    frame: Option<String>,
    audio: Option<String>,
}

/// Generation parameters beyond `(grammar, n, ratios)`.
#[derive(Debug, Clone)]
pub struct CorpusParams {
    /// Sentences in the text-only pool.
    pub text_pool: usize,
    /// Speakers heard in training and the clean test split.
    pub seen_speakers: usize,
    /// Additional held-out speakers for the other test split.
    pub heldout_speakers: usize,
    /// Noise amplitude for train/dev/clean renders.
    pub noise_clean: f64,
    /// Noise amplitude for the other test split.
    pub noise_other: f64,
    /// Extra reserved-value sentences appended to the test sets.
    pub reserved_test: usize,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            text_pool: 200,
            seen_speakers: 4,
            heldout_speakers: 2,
            noise_clean: 0.015,
            noise_other: 0.06,
            reserved_test: 4,
        }
    }
}

/// A full generated corpus.
#[derive(Debug, Clone)]
pub struct CorpusSet {
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test_clean: Vec<Utterance>,
    pub test_other: Vec<Utterance>,
    /// Labeled sentences without audio.
    pub text_pool: Vec<Utterance>,
    pub oov_warnings: usize,
}

impl CorpusSet {
    pub fn splits(&self) -> [(&'static str, &Vec<Utterance>); 5] {
        [
            ("train", &self.train),
            ("dev", &self.dev),
            ("test_clean", &self.test_clean),
            ("test_other", &self.test_other),
            ("text_pool", &self.text_pool),
        ]
    }
}

/// Generate the deterministic synthetic corpus.
///
/// Paired sentences avoid reserved slot values; the text pool and the test
/// sets draw from the full grammar, so the pool contains slot values absent
/// from paired training data and the test sets measure them.
pub fn gen_corpus(
    grammar: &Grammar,
    lexicon: &Lexicon,
    n: usize,
    ratios: (f64, f64, f64),
    params: &CorpusParams,
    rng: &RngStream,
) -> Result<CorpusSet> {
    if n < 10 {
        return Err(Error::Invalid(format!("corpus size {n} < 10")));
    }
    let sum = ratios.0 + ratios.1 + ratios.2;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("split ratios sum to {sum}, expected 1")));
    }
    if params.seen_speakers == 0 || params.heldout_speakers == 0 {
        return Err(Error::Invalid("need at least one seen and one held-out speaker".into()));
    }

    let mut sent_rng = rng.derive("sentences");
    let mut seen = BTreeSet::new();

    let n_train = ((n as f64) * ratios.0).round() as usize;
    let n_dev = ((n as f64) * ratios.1).round() as usize;
    let n_test = n.saturating_sub(n_train + n_dev);

    let paired = grammar.sample_distinct(n, &mut sent_rng, false, false, &mut seen)?;
    let reserved_test = grammar.sample_distinct(params.reserved_test, &mut sent_rng, true, true, &mut seen)?;
    let pool = grammar.sample_distinct(params.text_pool, &mut sent_rng, true, false, &mut seen)?;

    let mut oov_warnings = 0usize;
    let mut speaker_rng = rng.derive("speakers");
    let mut wave_rng = rng.derive("waveform");

    let mut build = |sents: &[super::grammar::GeneratedSentence],
                     prefix: &str,
                     speakers: std::ops::Range<usize>,
                     noise: Option<f64>,
                     oov: &mut usize|
     -> Result<Vec<Utterance>> {
        let mut out = Vec::with_capacity(sents.len());
        for (i, s) in sents.iter().enumerate() {
            let (phonemes, w) = g2p(&s.words, lexicon);
            *oov += w;
            let speaker = speakers.start + speaker_rng.index(speakers.end - speakers.start);
            let samples = match noise {
                Some(amp) => Some(synth_waveform(&phonemes, speaker, &mut wave_rng, amp)?),
                None => None,
            };
            out.push(Utterance {
                id: format!("{prefix}-{i:04}"),
                words: s.words.clone(),
                phonemes,
                speaker,
                frame: Some(Annotation::Frame(s.frame.clone())),
                audio: None,
                samples,
            });
        }
        Ok(out)
    };

    let train = build(&paired[..n_train], "train", 0..params.seen_speakers, Some(params.noise_clean), &mut oov_warnings)?;
    let dev = build(
        &paired[n_train..n_train + n_dev],
        "dev",
        0..params.seen_speakers,
        Some(params.noise_clean),
        &mut oov_warnings,
    )?;

    let mut test_sents = paired[n_train + n_dev..n_train + n_dev + n_test].to_vec();
    test_sents.extend(reserved_test.iter().cloned());

    let test_clean = build(&test_sents, "testc", 0..params.seen_speakers, Some(params.noise_clean), &mut oov_warnings)?;
    let total_speakers = params.seen_speakers + params.heldout_speakers;
    let test_other = build(
        &test_sents,
        "testo",
        params.seen_speakers..total_speakers,
        Some(params.noise_other),
        &mut oov_warnings,
    )?;
    let text_pool = build(&pool, "text", 0..params.seen_speakers, None, &mut oov_warnings)?;

    Ok(CorpusSet {
        train,
        dev,
        test_clean,
        test_other,
        text_pool,
        oov_warnings,
    })
}

/// Names of reserved slot values that appear in the test sentences but in no
/// paired training sentence (the text pool is where the model can learn them).
pub fn reserved_values_in_test(corpus: &CorpusSet, grammar: &Grammar) -> Vec<String> {
    let train_words: BTreeSet<&String> = corpus.train.iter().flat_map(|u| u.words.iter()).collect();
    grammar
        .reserved_values()
        .into_iter()
        .map(|(_, v)| v)
        .filter(|v| {
            !train_words.contains(v)
                && corpus.test_clean.iter().any(|u| u.words.contains(v))
        })
        .collect()
}

/// Write `{split}.jsonl` manifests plus `audio/*.wav` files.
pub fn write_corpus(corpus: &CorpusSet, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("audio"))?;
    for (name, utts) in corpus.splits() {
        let mut file = std::fs::File::create(dir.join(format!("{name}.jsonl")))?;
        for utt in utts {
            let audio_rel = utt.samples.as_ref().map(|s| {
                let rel = format!("audio/{}.wav", utt.id);
                write_wav(&dir.join(&rel), s).expect("write wav");
                rel
            });
            let record = ManifestRecord {
                id: utt.id.clone(),
                words: utt.words.join(" "),
                phonemes: utt.phonemes.iter().map(|&p| phoneme_symbol(p)).collect::<Vec<_>>().join(" "),
                speaker: utt.speaker,
                frame: match &utt.frame {
                    Some(ann) => Some(serialize_to_string(ann)?),
                    None => None,
                },
                audio: audio_rel,
            };
            serde_json::to_writer(&mut file, &record)
                .map_err(|e| Error::Invalid(format!("manifest write: {e}")))?;
            file.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Load one split's manifest (and its audio) back into memory.
pub fn load_split(dir: &Path, split: &str) -> Result<Vec<Utterance>> {
    let path = dir.join(format!("{split}.jsonl"));
    let file = std::fs::File::open(&path)
        .map_err(|e| Error::Invalid(format!("missing manifest {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            pos: lineno,
            msg: format!("manifest record: {e}"),
        })?;
        let phonemes = record
            .phonemes
            .split_whitespace()
            .map(|s| {
                phoneme_id(s).ok_or_else(|| Error::Parse {
                    pos: lineno,
                    msg: format!("unknown phoneme `{s}`"),
                })
            })
            .collect::<Result<PhonemeSeq>>()?;
        let samples = match &record.audio {
            Some(rel) => Some(read_wav(&dir.join(rel))?),
            None => None,
        };
        out.push(Utterance {
            id: record.id,
            words: record.words.split_whitespace().map(|w| w.to_string()).collect(),
            phonemes,
            speaker: record.speaker,
            frame: match record.frame {
                Some(s) => Some(parse_from_string(&s)?),
                None => None,
            },
            audio: record.audio.map(PathBuf::from),
            samples,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::grammar::toy_grammar;
    use crate::corpus::lexicon::toy_lexicon;
    use crate::nn::seeded_stream;

    fn small_params() -> CorpusParams {
        CorpusParams {
            text_pool: 30,
            reserved_test: 3,
            ..CorpusParams::default()
        }
    }

    fn generate(seed: u64) -> CorpusSet {
        let grammar = toy_grammar();
        let lexicon = toy_lexicon();
        let rng = seeded_stream(seed, "corpus");
        gen_corpus(&grammar, &lexicon, 60, (0.7, 0.1, 0.2), &small_params(), &rng).unwrap()
    }

    #[test]
    fn deterministic_across_runs() {
        let a = generate(0);
        let b = generate(0);
        for ((_, ua), (_, ub)) in a.splits().iter().zip(b.splits().iter()) {
            assert_eq!(ua.len(), ub.len());
            for (x, y) in ua.iter().zip(ub.iter()) {
                assert_eq!(x.id, y.id);
                assert_eq!(x.words, y.words);
                assert_eq!(x.samples, y.samples);
            }
        }
    }

    #[test]
    fn phonemes_match_g2p_of_words() {
        let corpus = generate(1);
        let lexicon = toy_lexicon();
        for (_, utts) in corpus.splits() {
            for utt in utts {
                let (seq, _) = g2p(&utt.words, &lexicon);
                assert_eq!(seq, utt.phonemes, "utterance {}", utt.id);
            }
        }
    }

    #[test]
    fn splits_disjoint_by_sentence() {
        let corpus = generate(2);
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for utt in corpus.train.iter().chain(&corpus.dev).chain(&corpus.test_clean) {
            assert!(seen.insert(utt.sentence()) || corpus.test_clean.iter().any(|u| u.sentence() == utt.sentence()));
        }
        // clean and other share sentences by design; train/dev/test do not.
        let train: BTreeSet<String> = corpus.train.iter().map(|u| u.sentence()).collect();
        let dev: BTreeSet<String> = corpus.dev.iter().map(|u| u.sentence()).collect();
        let test: BTreeSet<String> = corpus.test_clean.iter().map(|u| u.sentence()).collect();
        assert!(train.is_disjoint(&dev));
        assert!(train.is_disjoint(&test));
        assert!(dev.is_disjoint(&test));
    }

    #[test]
    fn pool_has_slot_values_absent_from_train() {
        let corpus = generate(3);
        let grammar = toy_grammar();
        let train_words: BTreeSet<&String> = corpus.train.iter().flat_map(|u| u.words.iter()).collect();
        let pool_words: BTreeSet<&String> = corpus.text_pool.iter().flat_map(|u| u.words.iter()).collect();
        let novel: Vec<String> = grammar
            .reserved_values()
            .into_iter()
            .map(|(_, v)| v)
            .filter(|v| pool_words.contains(v) && !train_words.contains(v))
            .collect();
        assert!(!novel.is_empty(), "pool should carry reserved values");
        assert!(!reserved_values_in_test(&corpus, &grammar).is_empty());
    }

    #[test]
    fn text_pool_has_no_audio_and_every_paired_has_frames() {
        let corpus = generate(4);
        assert!(corpus.text_pool.iter().all(|u| u.samples.is_none()));
        for utt in corpus.train.iter().chain(&corpus.test_clean) {
            assert!(utt.frame.is_some());
            assert!(utt.samples.is_some());
        }
    }

    #[test]
    fn manifest_roundtrip() {
        let corpus = generate(5);
        let dir = std::env::temp_dir().join("lasyn-manifest-test");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        write_corpus(&corpus, &dir).unwrap();
        let train = load_split(&dir, "train").unwrap();
        assert_eq!(train.len(), corpus.train.len());
        for (a, b) in corpus.train.iter().zip(&train) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.words, b.words);
            assert_eq!(a.phonemes, b.phonemes);
            assert_eq!(a.speaker, b.speaker);
            assert_eq!(a.frame, b.frame);
            // PCM16 quantization: samples close but not identical.
            let (sa, sb) = (a.samples.as_ref().unwrap(), b.samples.as_ref().unwrap());
            assert_eq!(sa.len(), sb.len());
        }
        let pool = load_split(&dir, "text_pool").unwrap();
        assert!(pool.iter().all(|u| u.samples.is_none()));
    }

    #[test]
    fn too_small_corpus_rejected() {
        let grammar = toy_grammar();
        let lexicon = toy_lexicon();
        let rng = seeded_stream(0, "corpus");
        assert!(gen_corpus(&grammar, &lexicon, 5, (0.8, 0.1, 0.1), &small_params(), &rng).is_err());
    }

    #[test]
    fn bad_ratios_rejected() {
        let grammar = toy_grammar();
        let lexicon = toy_lexicon();
        let rng = seeded_stream(0, "corpus");
        assert!(gen_corpus(&grammar, &lexicon, 20, (0.5, 0.1, 0.1), &small_params(), &rng).is_err());
    }
}

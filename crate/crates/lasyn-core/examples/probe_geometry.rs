use lasyn_core::asr::encode_speech;
use lasyn_core::backbone::TaskTag;
use lasyn_core::corpus::load_split;
use lasyn_core::frontend::{logmel, MelConfig};
use lasyn_core::labels::{parse_frame, serialize_to_string};
use lasyn_core::pipeline::checkpoint::load_checkpoint;
use lasyn_core::pipeline::{backbone_extra_tokens, base_vocab};
use lasyn_core::synth::{project, resample_rows};
use std::path::Path;

fn main() {
    let dir = Path::new("/tmp/lasyn-slu-lasyn-fixed/seed0");
    let asr = load_checkpoint(&dir.join("asr.ckpt")).unwrap();
    let bb_ck = load_checkpoint(&dir.join("backbone_p2.ckpt")).unwrap();
    let synth_ck = load_checkpoint(&dir.join("synth.ckpt")).unwrap();
    let mut vocab = base_vocab();
    vocab.extend(backbone_extra_tokens());
    let mel = MelConfig { mel_bins: 40, ..MelConfig::default() };
    let acfg = lasyn_core::asr::AsrConfig {
        mel_bins: 40, width: 48, heads: 4, blocks_low: 1, blocks_high: 1,
        ffn_mult: 2, head: lasyn_core::asr::HeadKind::Aed, dec_blocks: 1,
        joint_dim: 48, vocab: base_vocab().len(),
    };
    let model = lasyn_core::asr::AsrModel { cfg: acfg.clone(), params: asr.params };
    let split = lasyn_core::asr::split_pretrained(&model, "40ms").unwrap();
    let mut bcfg = acfg.clone();
    bcfg.vocab = vocab.len();
    let backbone = lasyn_core::backbone::Backbone {
        cfg: bcfg, tap: split.tap, params: bb_ck.params, vocab: vocab.clone(),
        has_transducer: false, has_decoder: true,
    };
    let scfg = lasyn_core::synth::FixedSynthConfig {
        filters: 96, kernel: 5, layers: 2, latent_width: 48, upsample: 2,
    };
    let fsynth = lasyn_core::synth::FixedProjSynth { cfg: scfg, params: synth_ck.params };

    // Geometry: pseudo vs uniform-resampled real for TRAIN and TEST utterances.
    for (name, split_name) in [("train", "train"), ("test", "test_clean")] {
        let utts = load_split(&dir.join("data"), split_name).unwrap();
        let mut rel = 0.0; let mut n = 0;
        for utt in utts.iter().take(20) {
            let feats = logmel(utt.samples.as_ref().unwrap(), &mel).unwrap();
            let real = encode_speech(&feats, &split).unwrap();
            let pseudo = project(&utt.phonemes, &fsynth).unwrap();
            let target = resample_rows(&real.data, pseudo.frames());
            let mut d2 = 0.0f64; let mut r2 = 0.0f64;
            for (a, b) in pseudo.data.data().iter().zip(target.data()) {
                d2 += ((a - b) as f64).powi(2);
                r2 += (*b as f64).powi(2);
            }
            rel += (d2 / r2).sqrt();
            n += 1;
        }
        println!("{name}: mean relative latent distance {:.3}", rel / n as f64);
    }

    // Decode test reserved sentences via real latents; show hyps.
    let test = load_split(&dir.join("data"), "test_clean").unwrap();
    let reserved = ["oldies","classic","morning","sunset","seven","nine","kyoto","salem","kate","nina","elena","santos"];
    for utt in test.iter().filter(|u| u.words.iter().any(|w| reserved.contains(&w.as_str()))).take(6) {
        let feats = logmel(utt.samples.as_ref().unwrap(), &mel).unwrap();
        let lat = encode_speech(&feats, &split).unwrap();
        let hyp = backbone.decode_tagged(&lat, TaskTag::Slu).unwrap();
        let toks = backbone.vocab.decode(&hyp);
        let parsed = parse_frame(&toks).map(|a| serialize_to_string(&a).unwrap()).unwrap_or("<err>".into());
        println!("REF {}", serialize_to_string(utt.frame.as_ref().unwrap()).unwrap());
        println!("HYP {parsed}");
    }
}

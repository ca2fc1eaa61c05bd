use lasyn_core::asr::encode_speech;
use lasyn_core::backbone::TaskTag;
use lasyn_core::corpus::load_split;
use lasyn_core::frontend::{logmel, MelConfig};
use lasyn_core::labels::{parse_frame, serialize_to_string, Annotation};
use lasyn_core::pipeline::checkpoint::load_checkpoint;
use lasyn_core::pipeline::{backbone_extra_tokens, base_vocab};
use lasyn_core::synth::project;
use std::path::Path;

fn main() {
    // Reuse artifacts from the smoke_slu lasyn-fixed run, seed 0.
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

    let test = load_split(&dir.join("data"), "test_clean").unwrap();
    let reserved = ["oldies", "classic", "morning", "sunset", "seven", "nine", "kyoto", "salem", "kate", "nina", "elena", "santos"];
    for utt in test.iter() {
        let has_reserved = utt.words.iter().any(|w| reserved.contains(&w.as_str()));
        if !has_reserved { continue; }
        let feats = logmel(utt.samples.as_ref().unwrap(), &mel).unwrap();
        let lat = encode_speech(&feats, &split).unwrap();
        let hyp = backbone.decode_tagged(&lat, TaskTag::Slu).unwrap();
        let toks = backbone.vocab.decode(&hyp);
        let parsed = parse_frame(&toks).map(|a| serialize_to_string(&a).unwrap()).unwrap_or_else(|e| format!("<parse err {e}>"));
        let r = serialize_to_string(utt.frame.as_ref().unwrap()).unwrap();
        println!("SENT: {}", utt.sentence());
        println!("  REF : {r}");
        println!("  HYP : {parsed}");
        // what do the pseudo latents decode to?
        let pseudo = project(&utt.phonemes, &fsynth).unwrap();
        let hyp2 = backbone.decode_tagged(&pseudo, TaskTag::Slu).unwrap();
        let toks2 = backbone.vocab.decode(&hyp2);
        let parsed2 = parse_frame(&toks2).map(|a| serialize_to_string(&a).unwrap()).unwrap_or_else(|e| format!("<parse err {e}>"));
        println!("  PSEU: {parsed2}");
    }
}

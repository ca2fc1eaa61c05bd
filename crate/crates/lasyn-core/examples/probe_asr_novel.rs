use lasyn_core::asr::encode_speech;
use lasyn_core::corpus::load_split;
use lasyn_core::frontend::{logmel, MelConfig};
use lasyn_core::pipeline::checkpoint::load_checkpoint;
use lasyn_core::pipeline::{backbone_extra_tokens, base_vocab};
use std::path::Path;

fn main() {
    let dir = Path::new("/tmp/lasyn-smoke-lasyn-fixed/seed0");
    let asr = load_checkpoint(&dir.join("asr.ckpt")).unwrap();
    let bb_ck = load_checkpoint(&dir.join("backbone_p2.ckpt")).unwrap();
    let mut vocab = base_vocab();
    vocab.extend(backbone_extra_tokens());
    let mel = MelConfig { mel_bins: 40, ..MelConfig::default() };
    let acfg = lasyn_core::asr::AsrConfig {
        mel_bins: 40, width: 48, heads: 4, blocks_low: 1, blocks_high: 1,
        ffn_mult: 2, head: lasyn_core::asr::HeadKind::Transducer, dec_blocks: 1,
        joint_dim: 48, vocab: base_vocab().len(),
    };
    let model = lasyn_core::asr::AsrModel { cfg: acfg.clone(), params: asr.params };
    let split = lasyn_core::asr::split_pretrained(&model, "40ms").unwrap();
    let mut bcfg = acfg.clone();
    bcfg.vocab = vocab.len();
    let backbone = lasyn_core::backbone::Backbone {
        cfg: bcfg, tap: split.tap, params: bb_ck.params, vocab: vocab.clone(),
        has_transducer: true, has_decoder: true,
    };
    let test = load_split(&dir.join("data"), "test_clean").unwrap();
    let reserved = ["oldies", "classic", "morning", "sunset", "seven", "nine", "kyoto", "salem", "kate", "nina", "elena", "santos"];
    let mut hit = 0; let mut total = 0;
    for utt in test.iter() {
        if !utt.words.iter().any(|w| reserved.contains(&w.as_str())) { continue; }
        let feats = logmel(utt.samples.as_ref().unwrap(), &mel).unwrap();
        let lat = encode_speech(&feats, &split).unwrap();
        let hyp = backbone.decode_asr(&lat).unwrap();
        let words = backbone.vocab.decode(&hyp);
        println!("REF: {}", utt.sentence());
        println!("HYP: {}", words.join(" "));
        for w in &utt.words {
            if reserved.contains(&w.as_str()) {
                total += 1;
                if words.contains(w) { hit += 1; }
            }
        }
    }
    println!("reserved word recall: {hit}/{total}");
}

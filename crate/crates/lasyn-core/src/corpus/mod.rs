//! Deterministic synthetic paired speech/text and SLU data, the
//! grapheme-to-phoneme frontend, and phoneme masking.

pub mod grammar;
pub mod lexicon;
pub mod manifest;
pub mod mask;
pub mod waveform;

pub use grammar::{toy_grammar, Grammar};
pub use lexicon::{
    g2p, phoneme_id, phoneme_symbol, toy_lexicon, Lexicon, PhonemeId, PhonemeSeq, MASK_ID,
    MASK_SYMBOL, NUM_PHONEME_SYMBOLS, PHONEMES,
};
pub use manifest::{gen_corpus, load_split, write_corpus, CorpusParams, CorpusSet, Utterance};
pub use mask::mask_phonemes;
pub use waveform::{synth_waveform, SAMPLE_RATE};

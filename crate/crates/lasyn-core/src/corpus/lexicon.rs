use std::collections::BTreeMap;

/// Index into the closed phoneme inventory; `MASK_ID` is the mask symbol.
pub type PhonemeId = usize;

/// Sequence of phoneme ids, possibly containing `MASK_ID`.
pub type PhonemeSeq = Vec<PhonemeId>;

/// The closed toy inventory. 15 speech symbols plus the mask token keep
/// end-to-end runs fast while leaving room for distinct pronunciations.
pub const PHONEMES: [&str; 15] = [
    "AA", "AE", "EH", "IY", "OW", "B", "D", "K", "L", "M", "N", "P", "R", "S", "T",
];

pub const MASK_ID: PhonemeId = PHONEMES.len();
pub const MASK_SYMBOL: &str = "<mask>";

/// Inventory size including the mask symbol (embedding-table size).
pub const NUM_PHONEME_SYMBOLS: usize = PHONEMES.len() + 1;

pub fn phoneme_symbol(id: PhonemeId) -> &'static str {
    if id == MASK_ID {
        MASK_SYMBOL
    } else {
        PHONEMES[id]
    }
}

pub fn phoneme_id(symbol: &str) -> Option<PhonemeId> {
    if symbol == MASK_SYMBOL {
        return Some(MASK_ID);
    }
    PHONEMES.iter().position(|&p| p == symbol)
}

/// Word-to-pronunciation map over the closed inventory.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: BTreeMap<String, PhonemeSeq>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str, phonemes: &[&str]) {
        assert!(!phonemes.is_empty(), "word `{word}` needs >= 1 phoneme");
        let seq: PhonemeSeq = phonemes
            .iter()
            .map(|p| {
                let id = phoneme_id(p).unwrap_or_else(|| panic!("unknown phoneme `{p}`"));
                assert_ne!(id, MASK_ID, "mask cannot appear in lexicon entries");
                id
            })
            .collect();
        let prev = self.entries.insert(word.to_string(), seq);
        assert!(prev.is_none(), "duplicate lexicon entry `{word}`");
    }

    pub fn lookup(&self, word: &str) -> Option<&PhonemeSeq> {
        self.entries.get(word)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }
}

/// Deterministic fallback for out-of-vocabulary words: each letter maps to a
/// fixed inventory phoneme, other characters are skipped (but still count one
/// phoneme so the length contract holds).
fn letter_fallback(word: &str) -> PhonemeSeq {
    word.chars()
        .map(|c| {
            let c = c.to_ascii_lowercase();
            if c.is_ascii_lowercase() {
                (c as usize - 'a' as usize) % PHONEMES.len()
            } else {
                (c as usize) % PHONEMES.len()
            }
        })
        .collect()
}

/// Grapheme-to-phoneme conversion: concatenated per-word pronunciations with
/// letter fallback for OOV words. Returns the sequence and the OOV warning
/// count; never fails.
pub fn g2p(words: &[String], lexicon: &Lexicon) -> (PhonemeSeq, usize) {
    let mut seq = PhonemeSeq::new();
    let mut warnings = 0;
    for word in words {
        match lexicon.lookup(word) {
            Some(pron) => seq.extend_from_slice(pron),
            None => {
                warnings += 1;
                seq.extend(letter_fallback(word));
            }
        }
    }
    (seq, warnings)
}

/// The bundled pronunciation lexicon for the toy grammar.
pub fn toy_lexicon() -> Lexicon {
    let mut lex = Lexicon::new();
    let entries: &[(&str, &[&str])] = &[
        // template words
        ("a", &["AE"]),
        ("alarm", &["AA", "L", "AA", "R", "M"]),
        ("an", &["AE", "N"]),
        ("at", &["AE", "T"]),
        ("bell", &["B", "EH", "L"]),
        ("by", &["B", "AA", "IY"]),
        ("in", &["IY", "N"]),
        ("letter", &["L", "EH", "T", "EH", "R"]),
        ("mail", &["M", "EH", "IY", "L"]),
        ("me", &["M", "IY"]),
        ("note", &["N", "OW", "T"]),
        ("now", &["N", "AA"]),
        ("play", &["P", "L", "EH", "IY"]),
        ("please", &["P", "L", "IY", "S"]),
        ("rain", &["R", "EH", "IY", "N"]),
        ("report", &["R", "EH", "P", "OW", "R", "T"]),
        ("ring", &["R", "IY", "N", "K"]),
        ("send", &["S", "EH", "N", "D"]),
        ("set", &["S", "EH", "T"]),
        ("song", &["S", "AA", "N", "K"]),
        ("start", &["S", "T", "AA", "R", "T"]),
        ("station", &["S", "T", "EH", "S", "AA", "N"]),
        ("tape", &["T", "EH", "IY", "P"]),
        ("tell", &["T", "EH", "L"]),
        ("the", &["D", "EH"]),
        ("to", &["T", "OW"]),
        ("today", &["T", "OW", "D", "EH", "IY"]),
        ("tune", &["T", "IY", "N"]),
        // station names
        ("bebop", &["B", "IY", "B", "AA", "P"]),
        ("classic", &["K", "L", "AE", "S", "IY", "K"]),
        ("disco", &["D", "IY", "S", "K", "OW"]),
        ("metal", &["M", "EH", "T", "AA", "L"]),
        ("morning", &["M", "OW", "R", "N", "IY", "N"]),
        ("news", &["N", "IY", "S"]),
        ("oldies", &["OW", "L", "D", "IY", "S"]),
        ("opera", &["AA", "P", "EH", "R", "AA"]),
        ("piano", &["P", "IY", "AE", "N", "OW"]),
        ("retro", &["R", "EH", "T", "R", "OW"]),
        ("rock", &["R", "AA", "K"]),
        ("salsa", &["S", "AE", "L", "S", "AA"]),
        ("soul", &["S", "OW", "L"]),
        ("sunset", &["S", "AA", "N", "S", "EH", "T"]),
        // times
        ("dawn", &["D", "AA", "N"]),
        ("eight", &["EH", "IY", "T"]),
        ("nine", &["N", "AE", "IY", "N"]),
        ("noon", &["N", "OW", "N"]),
        ("seven", &["S", "EH", "B", "EH", "N"]),
        ("six", &["S", "IY", "K", "S"]),
        ("ten", &["T", "EH", "N"]),
        ("three", &["T", "R", "IY"]),
        // cities
        ("boston", &["B", "AA", "S", "T", "AA", "N"]),
        ("dallas", &["D", "AE", "L", "AE", "S"]),
        ("kyoto", &["K", "IY", "OW", "T", "OW"]),
        ("lima", &["L", "IY", "M", "AA"]),
        ("nome", &["N", "OW", "M"]),
        ("oslo", &["AA", "S", "L", "OW"]),
        ("rome", &["R", "OW", "M"]),
        ("salem", &["S", "EH", "IY", "L", "EH", "M"]),
        // contacts
        ("anna", &["AE", "N", "AA"]),
        ("bob", &["B", "AA", "B"]),
        ("dad", &["D", "AE", "D"]),
        ("kate", &["K", "EH", "IY", "T"]),
        ("leo", &["L", "IY", "OW"]),
        ("mom", &["M", "AA", "M"]),
        ("nina", &["N", "IY", "N", "AA"]),
        ("sam", &["S", "AE", "M"]),
        // artists
        ("baker", &["B", "EH", "IY", "K", "EH", "R"]),
        ("elena", &["EH", "L", "EH", "N", "AA"]),
        ("marlo", &["M", "AA", "R", "L", "OW"]),
        ("otis", &["OW", "T", "IY", "S"]),
        ("pedro", &["P", "EH", "D", "R", "OW"]),
        ("santos", &["S", "AE", "N", "T", "OW", "S"]),
        // extra vocabulary
        ("cat", &["K", "AE", "T"]),
    ];
    for (word, phonemes) in entries {
        lex.insert(word, phonemes);
    }
    lex
}

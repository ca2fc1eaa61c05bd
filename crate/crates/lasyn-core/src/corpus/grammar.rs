use std::collections::BTreeMap;

use crate::labels::SemanticFrame;
use crate::nn::RngStream;
use crate::{Error, Result};

/// One slot's value vocabulary, split into values available to the paired
/// speech splits (`base`) and values reserved for the text pool and the test
/// sets (`reserved`). The reservation is what lets text-only data teach the
/// model vocabulary the speech training set never contains.
#[derive(Debug, Clone)]
pub struct SlotValues {
    pub base: Vec<String>,
    pub reserved: Vec<String>,
}

#[derive(Debug, Clone)]
pub enum Part {
    Lit(String),
    Slot(String),
}

#[derive(Debug, Clone)]
pub struct Template {
    pub intent: String,
    pub parts: Vec<Part>,
    pub weight: f64,
}

impl Template {
    /// Parse `"play the {station} station"` into parts.
    fn parse(intent: &str, pattern: &str, weight: f64) -> Self {
        let parts = pattern
            .split_whitespace()
            .map(|tok| {
                if let Some(name) = tok.strip_prefix('{').and_then(|t| t.strip_suffix('}')) {
                    Part::Slot(name.to_string())
                } else {
                    Part::Lit(tok.to_string())
                }
            })
            .collect();
        Template {
            intent: intent.to_string(),
            parts,
            weight,
        }
    }
}

/// Intent templates with slot placeholders plus slot-value vocabularies.
#[derive(Debug, Clone)]
pub struct Grammar {
    pub templates: Vec<Template>,
    pub slots: BTreeMap<String, SlotValues>,
    /// Optional sentence prefixes/suffixes that do not affect the frame.
    pub prefixes: Vec<String>,
    pub suffixes: Vec<String>,
}

/// A generated sentence paired with its annotation.
#[derive(Debug, Clone)]
pub struct GeneratedSentence {
    pub words: Vec<String>,
    pub frame: SemanticFrame,
    pub uses_reserved: bool,
}

impl Grammar {
    /// Sample one sentence. `allow_reserved` opens the reserved slot values.
    pub fn sample(&self, rng: &mut RngStream, allow_reserved: bool) -> Result<GeneratedSentence> {
        if self.templates.is_empty() {
            return Err(Error::Invalid("grammar has zero templates".into()));
        }
        let total_weight: f64 = self.templates.iter().map(|t| t.weight).sum();
        let mut pick = rng.uniform_f64() * total_weight;
        let mut template = &self.templates[0];
        for t in &self.templates {
            if pick < t.weight {
                template = t;
                break;
            }
            pick -= t.weight;
        }

        let mut words = Vec::new();
        let mut frame = SemanticFrame::new(template.intent.clone());
        let mut uses_reserved = false;
        for part in &template.parts {
            match part {
                Part::Lit(w) => words.push(w.clone()),
                Part::Slot(name) => {
                    let values = self
                        .slots
                        .get(name)
                        .ok_or_else(|| Error::Invalid(format!("template references unknown slot `{name}`")))?;
                    let n_base = values.base.len();
                    let n_all = n_base + if allow_reserved { values.reserved.len() } else { 0 };
                    let i = rng.index(n_all);
                    let value = if i < n_base {
                        &values.base[i]
                    } else {
                        uses_reserved = true;
                        &values.reserved[i - n_base]
                    };
                    words.push(value.clone());
                    frame.slots.push((name.clone(), vec![value.clone()]));
                }
            }
        }
        if !self.prefixes.is_empty() && rng.coin(0.25) {
            let p = self.prefixes[rng.index(self.prefixes.len())].clone();
            words.insert(0, p);
        }
        if !self.suffixes.is_empty() && rng.coin(0.35) {
            let s = self.suffixes[rng.index(self.suffixes.len())].clone();
            words.push(s);
        }
        Ok(GeneratedSentence {
            words,
            frame,
            uses_reserved,
        })
    }

    /// Sample `n` sentences with distinct word strings, skipping any string
    /// in `exclude`. `require_reserved` additionally filters to sentences
    /// that use at least one reserved slot value.
    pub fn sample_distinct(
        &self,
        n: usize,
        rng: &mut RngStream,
        allow_reserved: bool,
        require_reserved: bool,
        exclude: &mut std::collections::BTreeSet<String>,
    ) -> Result<Vec<GeneratedSentence>> {
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0usize;
        let cap = 200 * n.max(1);
        while out.len() < n {
            attempts += 1;
            if attempts > cap {
                return Err(Error::Invalid(format!(
                    "grammar cannot produce {n} more distinct sentences (got {})",
                    out.len()
                )));
            }
            let s = self.sample(rng, allow_reserved)?;
            if require_reserved && !s.uses_reserved {
                continue;
            }
            let key = s.words.join(" ");
            if exclude.insert(key) {
                out.push(s);
            }
        }
        Ok(out)
    }

    /// Every reserved slot value, with its slot name.
    pub fn reserved_values(&self) -> Vec<(String, String)> {
        self.slots
            .iter()
            .flat_map(|(name, v)| v.reserved.iter().map(move |r| (name.clone(), r.clone())))
            .collect()
    }
}

/// The bundled toy grammar: five intents over a small assistant domain.
pub fn toy_grammar() -> Grammar {
    let mut slots = BTreeMap::new();
    let split = |base: &[&str], reserved: &[&str]| SlotValues {
        base: base.iter().map(|s| s.to_string()).collect(),
        reserved: reserved.iter().map(|s| s.to_string()).collect(),
    };
    slots.insert(
        "station".to_string(),
        split(
            &["disco", "metal", "opera", "piano", "retro", "rock", "soul", "news", "salsa", "bebop"],
            &["oldies", "classic", "morning", "sunset"],
        ),
    );
    slots.insert(
        "time".to_string(),
        split(&["dawn", "noon", "ten", "six", "three", "eight"], &["seven", "nine"]),
    );
    slots.insert(
        "city".to_string(),
        split(&["rome", "oslo", "dallas", "boston", "lima", "nome"], &["kyoto", "salem"]),
    );
    slots.insert(
        "contact".to_string(),
        split(&["mom", "dad", "bob", "anna", "leo", "sam"], &["kate", "nina"]),
    );
    slots.insert(
        "artist".to_string(),
        split(&["otis", "baker", "marlo", "pedro"], &["elena", "santos"]),
    );

    let templates = vec![
        Template::parse("radio_play", "play the {station} station", 1.0),
        Template::parse("radio_play", "tune the {station} station", 1.0),
        Template::parse("radio_play", "start the {station} station", 1.0),
        Template::parse("radio_play", "play the {station} station at {time}", 0.8),
        Template::parse("alarm_set", "set an alarm at {time}", 1.0),
        Template::parse("alarm_set", "ring the bell at {time}", 1.0),
        Template::parse("weather_query", "tell me the rain in {city}", 1.0),
        Template::parse("weather_query", "report the rain in {city}", 1.0),
        Template::parse("weather_query", "report the rain in {city} at {time}", 0.8),
        Template::parse("message_send", "send a note to {contact}", 1.0),
        Template::parse("message_send", "mail a letter to {contact}", 1.0),
        Template::parse("message_send", "send a note to {contact} at {time}", 0.8),
        Template::parse("music_play", "play a song by {artist}", 1.0),
        Template::parse("music_play", "play a tape by {artist}", 1.0),
        Template::parse("music_play", "play a song by {artist} at {time}", 0.8),
    ];

    Grammar {
        templates,
        slots,
        prefixes: vec!["please".to_string()],
        suffixes: vec!["now".to_string(), "today".to_string()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::lexicon::toy_lexicon;
    use crate::nn::seeded_stream;

    #[test]
    fn sampled_sentences_are_in_lexicon() {
        let g = toy_grammar();
        let lex = toy_lexicon();
        let mut rng = seeded_stream(0, "grammar");
        for _ in 0..200 {
            let s = g.sample(&mut rng, true).unwrap();
            for w in &s.words {
                assert!(lex.contains(w), "word `{w}` missing from lexicon");
            }
            assert!(!s.frame.slots.is_empty());
        }
    }

    #[test]
    fn reserved_values_never_appear_when_disallowed() {
        let g = toy_grammar();
        let reserved: Vec<String> = g.reserved_values().into_iter().map(|(_, v)| v).collect();
        let mut rng = seeded_stream(1, "grammar");
        for _ in 0..500 {
            let s = g.sample(&mut rng, false).unwrap();
            assert!(!s.uses_reserved);
            for w in &s.words {
                assert!(!reserved.contains(w), "reserved `{w}` leaked");
            }
        }
    }

    #[test]
    fn distinct_sampling_produces_enough_sentences() {
        let g = toy_grammar();
        let mut rng = seeded_stream(2, "grammar");
        let mut seen = std::collections::BTreeSet::new();
        let sentences = g.sample_distinct(900, &mut rng, true, false, &mut seen).unwrap();
        assert_eq!(sentences.len(), 900);
    }

    #[test]
    fn zero_templates_is_error() {
        let g = Grammar {
            templates: vec![],
            slots: BTreeMap::new(),
            prefixes: vec![],
            suffixes: vec![],
        };
        let mut rng = seeded_stream(0, "grammar");
        assert!(g.sample(&mut rng, false).is_err());
    }
}

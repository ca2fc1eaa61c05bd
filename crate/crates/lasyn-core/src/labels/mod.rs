//! Canonical text-sequence serialization of semantic annotations.
//!
//! Every structured target (intent frames and nested parse trees) is
//! rendered as a flat token sequence with reserved meta tokens, so one
//! sequence-to-sequence decoder can serve all tasks. The serialization
//! round-trips losslessly through [`parse_frame`].
//!
//! Grammar:
//!
//! ```text
//! frame := "intent" <label> slot*
//! slot  := "[" <slot_type> <word>+ "]"
//! tree  := "[" <label> (word | tree)* "]"
//! ```

use crate::{Error, Result};

/// Flat intent + slots annotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticFrame {
    pub intent: String,
    /// Ordered `(slot type, slot value words)` pairs. Duplicate types are
    /// allowed and preserved.
    pub slots: Vec<(String, Vec<String>)>,
}

impl SemanticFrame {
    pub fn new(intent: impl Into<String>) -> Self {
        SemanticFrame {
            intent: intent.into(),
            slots: Vec::new(),
        }
    }

    pub fn with_slot(mut self, ty: impl Into<String>, words: &[&str]) -> Self {
        self.slots
            .push((ty.into(), words.iter().map(|w| w.to_string()).collect()));
        self
    }

    /// View as a depth-1 parse tree (intent root, one node per slot).
    pub fn to_tree(&self) -> ParseTree {
        ParseTree {
            label: self.intent.clone(),
            children: self
                .slots
                .iter()
                .map(|(ty, words)| {
                    TreeNode::Node(ParseTree {
                        label: ty.clone(),
                        children: words.iter().map(|w| TreeNode::Word(w.clone())).collect(),
                    })
                })
                .collect(),
        }
    }
}

/// Nested semantic parse with labeled nodes and word leaves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTree {
    pub label: String,
    pub children: Vec<TreeNode>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeNode {
    Word(String),
    Node(ParseTree),
}

/// Either annotation shape, as carried by corpus manifests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Annotation {
    Frame(SemanticFrame),
    Tree(ParseTree),
}

impl Annotation {
    pub fn as_frame(&self) -> Option<&SemanticFrame> {
        match self {
            Annotation::Frame(f) => Some(f),
            Annotation::Tree(_) => None,
        }
    }

    pub fn as_tree(&self) -> ParseTree {
        match self {
            Annotation::Frame(f) => f.to_tree(),
            Annotation::Tree(t) => t.clone(),
        }
    }
}

pub const TOK_INTENT: &str = "intent";
pub const TOK_OPEN: &str = "[";
pub const TOK_CLOSE: &str = "]";

/// Serialize an annotation to its canonical token sequence.
pub fn serialize_frame(ann: &Annotation) -> Result<Vec<String>> {
    match ann {
        Annotation::Frame(frame) => {
            if frame.intent.is_empty() {
                return Err(Error::Invalid("frame has an empty intent".into()));
            }
            let mut out = vec![TOK_INTENT.to_string(), frame.intent.clone()];
            for (ty, words) in &frame.slots {
                if words.is_empty() {
                    return Err(Error::Invalid(format!("slot `{ty}` has an empty value")));
                }
                out.push(TOK_OPEN.to_string());
                out.push(ty.clone());
                out.extend(words.iter().cloned());
                out.push(TOK_CLOSE.to_string());
            }
            Ok(out)
        }
        Annotation::Tree(tree) => {
            let mut out = Vec::new();
            serialize_tree(tree, &mut out)?;
            Ok(out)
        }
    }
}

fn serialize_tree(tree: &ParseTree, out: &mut Vec<String>) -> Result<()> {
    if tree.label.is_empty() {
        return Err(Error::Invalid("tree node has an empty label".into()));
    }
    out.push(TOK_OPEN.to_string());
    out.push(tree.label.clone());
    for child in &tree.children {
        match child {
            TreeNode::Word(w) => out.push(w.clone()),
            TreeNode::Node(n) => serialize_tree(n, out)?,
        }
    }
    out.push(TOK_CLOSE.to_string());
    Ok(())
}

/// Serialize and join with single spaces.
pub fn serialize_to_string(ann: &Annotation) -> Result<String> {
    Ok(serialize_frame(ann)?.join(" "))
}

/// Parse a canonical token sequence back into an annotation.
///
/// Errors carry the token position of the offending token (or the sequence
/// length when input ended early).
pub fn parse_frame(tokens: &[String]) -> Result<Annotation> {
    if tokens.is_empty() {
        return Err(Error::Parse {
            pos: 0,
            msg: "empty annotation".into(),
        });
    }
    match tokens[0].as_str() {
        TOK_INTENT => parse_flat_frame(tokens),
        TOK_OPEN => {
            let (tree, consumed) = parse_tree(tokens, 0)?;
            if consumed != tokens.len() {
                return Err(Error::Parse {
                    pos: consumed,
                    msg: "trailing tokens after tree".into(),
                });
            }
            Ok(Annotation::Tree(tree))
        }
        other => Err(Error::Parse {
            pos: 0,
            msg: format!("expected `intent` or `[`, got `{other}`"),
        }),
    }
}

/// Parse from a whitespace-separated string.
pub fn parse_from_string(s: &str) -> Result<Annotation> {
    let tokens: Vec<String> = s.split_whitespace().map(|t| t.to_string()).collect();
    parse_frame(&tokens)
}

fn parse_flat_frame(tokens: &[String]) -> Result<Annotation> {
    let mut pos = 1;
    let intent = tokens
        .get(pos)
        .ok_or(Error::Parse {
            pos,
            msg: "missing intent label".into(),
        })?
        .clone();
    if intent == TOK_OPEN || intent == TOK_CLOSE {
        return Err(Error::Parse {
            pos,
            msg: format!("`{intent}` cannot be an intent label"),
        });
    }
    pos += 1;
    let mut frame = SemanticFrame::new(intent);
    while pos < tokens.len() {
        if tokens[pos] != TOK_OPEN {
            return Err(Error::Parse {
                pos,
                msg: format!("expected `[`, got `{}`", tokens[pos]),
            });
        }
        pos += 1;
        let ty = tokens
            .get(pos)
            .ok_or(Error::Parse {
                pos,
                msg: "missing slot type".into(),
            })?
            .clone();
        if ty == TOK_OPEN || ty == TOK_CLOSE {
            return Err(Error::Parse {
                pos,
                msg: format!("`{ty}` cannot be a slot type"),
            });
        }
        pos += 1;
        let mut words = Vec::new();
        loop {
            match tokens.get(pos) {
                Some(t) if t == TOK_CLOSE => {
                    pos += 1;
                    break;
                }
                Some(t) if t == TOK_OPEN => {
                    return Err(Error::Parse {
                        pos,
                        msg: "nested `[` inside a flat slot".into(),
                    })
                }
                Some(t) => {
                    words.push(t.clone());
                    pos += 1;
                }
                None => {
                    return Err(Error::Parse {
                        pos,
                        msg: "unclosed slot bracket".into(),
                    })
                }
            }
        }
        if words.is_empty() {
            return Err(Error::Parse {
                pos,
                msg: "slot has no value words".into(),
            });
        }
        frame.slots.push((ty, words));
    }
    Ok(Annotation::Frame(frame))
}

fn parse_tree(tokens: &[String], start: usize) -> Result<(ParseTree, usize)> {
    debug_assert_eq!(tokens[start], TOK_OPEN);
    let mut pos = start + 1;
    let label = tokens
        .get(pos)
        .ok_or(Error::Parse {
            pos,
            msg: "missing node label".into(),
        })?
        .clone();
    if label == TOK_OPEN || label == TOK_CLOSE {
        return Err(Error::Parse {
            pos,
            msg: format!("`{label}` cannot be a node label"),
        });
    }
    pos += 1;
    let mut children = Vec::new();
    loop {
        match tokens.get(pos) {
            Some(t) if t == TOK_CLOSE => {
                pos += 1;
                break;
            }
            Some(t) if t == TOK_OPEN => {
                let (child, next) = parse_tree(tokens, pos)?;
                children.push(TreeNode::Node(child));
                pos = next;
            }
            Some(t) => {
                children.push(TreeNode::Word(t.clone()));
                pos += 1;
            }
            None => {
                return Err(Error::Parse {
                    pos,
                    msg: "unclosed tree bracket".into(),
                })
            }
        }
    }
    Ok((ParseTree { label, children }, pos))
}

/// Serialization with word leaves removed; two trees match structurally iff
/// these strings are equal.
pub fn tree_skeleton(tree: &ParseTree) -> String {
    fn walk(tree: &ParseTree, out: &mut String) {
        out.push_str("[ ");
        out.push_str(&tree.label);
        out.push(' ');
        for child in &tree.children {
            if let TreeNode::Node(n) = child {
                walk(n, out);
            }
        }
        out.push_str("] ");
    }
    let mut s = String::new();
    walk(tree, &mut s);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_with_slot_serializes_in_order() {
        let frame = SemanticFrame::new("radio_play").with_slot("station", &["oldies", "station"]);
        let s = serialize_to_string(&Annotation::Frame(frame)).unwrap();
        assert_eq!(s, "intent radio_play [ station oldies station ]");
    }

    #[test]
    fn frame_without_slots() {
        let frame = SemanticFrame::new("greet");
        let s = serialize_to_string(&Annotation::Frame(frame)).unwrap();
        assert_eq!(s, "intent greet");
    }

    #[test]
    fn empty_intent_rejected() {
        let frame = SemanticFrame::new("");
        assert!(serialize_frame(&Annotation::Frame(frame)).is_err());
    }

    #[test]
    fn nested_tree_depth_two_balances() {
        let tree = ParseTree {
            label: "in:play".into(),
            children: vec![
                TreeNode::Word("play".into()),
                TreeNode::Node(ParseTree {
                    label: "sl:station".into(),
                    children: vec![TreeNode::Word("oldies".into())],
                }),
            ],
        };
        let toks = serialize_frame(&Annotation::Tree(tree.clone())).unwrap();
        let opens = toks.iter().filter(|t| *t == TOK_OPEN).count();
        let closes = toks.iter().filter(|t| *t == TOK_CLOSE).count();
        assert_eq!(opens, 2);
        assert_eq!(opens, closes);
        let back = parse_frame(&toks).unwrap();
        assert_eq!(back, Annotation::Tree(tree));
    }

    #[test]
    fn unclosed_bracket_reports_position() {
        let toks: Vec<String> = ["intent", "a", "["].iter().map(|s| s.to_string()).collect();
        match parse_frame(&toks) {
            Err(Error::Parse { pos, .. }) => assert_eq!(pos, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn repeated_slot_types_kept() {
        let s = "intent order [ item cat ] [ item bob ]";
        let ann = parse_from_string(s).unwrap();
        let frame = ann.as_frame().unwrap().clone();
        assert_eq!(frame.slots.len(), 2);
        assert_eq!(frame.slots[0].0, "item");
        assert_eq!(frame.slots[1].0, "item");
    }

    #[test]
    fn skeleton_ignores_leaves() {
        let a = parse_from_string("[ in:x foo [ sl:y bar ] ]").unwrap().as_tree();
        let b = parse_from_string("[ in:x baz [ sl:y qux quux ] ]").unwrap().as_tree();
        assert_eq!(tree_skeleton(&a), tree_skeleton(&b));
    }
}

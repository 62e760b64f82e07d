//! Convolution window templates over dependency trees.
//!
//! A template maps every word `m` of a sentence to a fixed-length list of
//! [`Slot`]s. Three families exist:
//!
//! * ancestor paths `m, h, g, g², …` padded with ROOT above the root word,
//! * sibling patterns mixing `m`, its nearest left/right siblings and its
//!   head (and grandparent), with absent siblings zero-padded,
//! * sequential n-grams `m, m+1, …` zero-padded past the sentence end.
//!
//! Word indices are 1-based as in [`crate::ingest::Token::index`].
//!
//! Templates are written in a small DSL: `anc:N`, `seq:N` and `sib:P-P-…`
//! with parts `ls`, `rs`, `m`, `h`, `g`. A comma-separated list may mix
//! single templates with the presets `default`, `ancestor`, `sibling`,
//! `sequential` and `ancestor+sibling`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::DepSentence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Slot {
    Word(usize),
    /// Vertical padding above the root; embeds as the ROOT vector.
    Root,
    /// Absent word; embeds as the zero vector.
    Zero,
}

/// A tree node: a word or the virtual ROOT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node {
    Word(usize),
    Root,
}

impl From<Node> for Slot {
    fn from(n: Node) -> Slot {
        match n {
            Node::Word(i) => Slot::Word(i),
            Node::Root => Slot::Root,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    Ancestor,
    Sibling,
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SiblingPart {
    LeftSibling,
    RightSibling,
    Modifier,
    Head,
    GrandParent,
}

impl SiblingPart {
    fn code(self) -> &'static str {
        match self {
            SiblingPart::LeftSibling => "ls",
            SiblingPart::RightSibling => "rs",
            SiblingPart::Modifier => "m",
            SiblingPart::Head => "h",
            SiblingPart::GrandParent => "g",
        }
    }
}

impl FromStr for SiblingPart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ls" => SiblingPart::LeftSibling,
            "rs" => SiblingPart::RightSibling,
            "m" => SiblingPart::Modifier,
            "h" => SiblingPart::Head,
            "g" => SiblingPart::GrandParent,
            other => return Err(Error::Template(format!("unknown sibling part {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum WindowTemplate {
    Ancestor(usize),
    Sibling(Vec<SiblingPart>),
    Sequential(usize),
}

impl WindowTemplate {
    pub fn family(&self) -> Family {
        match self {
            WindowTemplate::Ancestor(_) => Family::Ancestor,
            WindowTemplate::Sibling(_) => Family::Sibling,
            WindowTemplate::Sequential(_) => Family::Sequential,
        }
    }

    /// Slots per window.
    pub fn arity(&self) -> usize {
        match self {
            WindowTemplate::Ancestor(n) | WindowTemplate::Sequential(n) => *n,
            WindowTemplate::Sibling(parts) => parts.len(),
        }
    }

    pub fn name(&self) -> String {
        self.to_string()
    }

    /// Window for 1-based word `i`.
    pub fn window(&self, s: &DepSentence, i: usize) -> Vec<Slot> {
        match self {
            WindowTemplate::Ancestor(n) => ancestor_window(s, i, *n),
            WindowTemplate::Sibling(parts) => sibling_window(s, i, parts),
            WindowTemplate::Sequential(n) => sequential_window(s, i, *n),
        }
    }

    pub fn windows(&self, s: &DepSentence) -> WindowSet {
        WindowSet {
            template: self.name(),
            windows: (1..=s.len()).map(|i| self.window(s, i)).collect(),
        }
    }
}

impl fmt::Display for WindowTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowTemplate::Ancestor(n) => write!(f, "anc:{n}"),
            WindowTemplate::Sequential(n) => write!(f, "seq:{n}"),
            WindowTemplate::Sibling(parts) => {
                let codes: Vec<&str> = parts.iter().map(|p| p.code()).collect();
                write!(f, "sib:{}", codes.join("-"))
            }
        }
    }
}

impl FromStr for WindowTemplate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::Template(format!("expected kind:arg, got {s:?}")))?;
        let arity = |arg: &str| -> Result<usize> {
            match arg.parse::<usize>() {
                Ok(n) if n >= 1 => Ok(n),
                _ => Err(Error::Template(format!("bad window size {arg:?} in {s:?}"))),
            }
        };
        match kind {
            "anc" => Ok(WindowTemplate::Ancestor(arity(arg)?)),
            "seq" => Ok(WindowTemplate::Sequential(arity(arg)?)),
            "sib" => {
                let parts = arg
                    .split('-')
                    .map(SiblingPart::from_str)
                    .collect::<Result<Vec<_>>>()?;
                if !parts.contains(&SiblingPart::Modifier) {
                    return Err(Error::Template(format!("{s:?} must include m")));
                }
                Ok(WindowTemplate::Sibling(parts))
            }
            other => Err(Error::Template(format!("unknown template kind {other:?}"))),
        }
    }
}

/// The windows one template produces for one sentence, one per word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowSet {
    pub template: String,
    pub windows: Vec<Vec<Slot>>,
}

/// Ordered template list; ancestors first, then siblings, then sequential.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TemplateSet {
    templates: Vec<WindowTemplate>,
}

impl TemplateSet {
    pub fn new(mut templates: Vec<WindowTemplate>) -> Result<Self> {
        if templates.is_empty() {
            return Err(Error::Template("template set is empty".into()));
        }
        templates.sort_by_key(WindowTemplate::family);
        Ok(TemplateSet { templates })
    }

    pub fn parse(dsl: &str) -> Result<Self> {
        let mut templates = Vec::new();
        for item in dsl.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match preset(item) {
                Some(set) => templates.extend(set),
                None => templates.push(item.parse()?),
            }
        }
        TemplateSet::new(templates)
    }

    pub fn templates(&self) -> &[WindowTemplate] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, WindowTemplate> {
        self.templates.iter()
    }

    /// Number of templates per family, in layout order.
    pub fn family_counts(&self) -> [(Family, usize); 3] {
        let count = |f| self.templates.iter().filter(|t| t.family() == f).count();
        [
            (Family::Ancestor, count(Family::Ancestor)),
            (Family::Sibling, count(Family::Sibling)),
            (Family::Sequential, count(Family::Sequential)),
        ]
    }
}

impl fmt::Display for TemplateSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.templates.iter().map(|t| t.to_string()).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for TemplateSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TemplateSet::parse(s)
    }
}

impl Serialize for TemplateSet {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TemplateSet {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        TemplateSet::parse(&s).map_err(serde::de::Error::custom)
    }
}

fn ancestor_templates() -> Vec<WindowTemplate> {
    (3..=5).map(WindowTemplate::Ancestor).collect()
}

fn sequential_templates() -> Vec<WindowTemplate> {
    (3..=5).map(WindowTemplate::Sequential).collect()
}

fn sibling_templates() -> Vec<WindowTemplate> {
    use SiblingPart::*;
    [
        vec![LeftSibling, Modifier],
        vec![Modifier, RightSibling],
        vec![LeftSibling, Modifier, Head],
        vec![Modifier, RightSibling, Head],
        vec![LeftSibling, Modifier, RightSibling, Head],
    ]
    .into_iter()
    .map(WindowTemplate::Sibling)
    .collect()
}

fn preset(name: &str) -> Option<Vec<WindowTemplate>> {
    let set = match name {
        "default" | "full" | "ancestor+sibling+sequential" => {
            let mut v = ancestor_templates();
            v.extend(sibling_templates());
            v.extend(sequential_templates());
            v
        }
        "ancestor+sibling" => {
            let mut v = ancestor_templates();
            v.extend(sibling_templates());
            v
        }
        "ancestor" => ancestor_templates(),
        "sibling" => sibling_templates(),
        "sequential" => sequential_templates(),
        _ => return None,
    };
    Some(set)
}

/// The eleven-template combined set: ancestor paths and sequential n-grams of
/// sizes 3 to 5 plus five sibling patterns.
pub fn default_templates() -> TemplateSet {
    TemplateSet::parse("default").expect("preset parses")
}

impl Default for TemplateSet {
    fn default() -> Self {
        default_templates()
    }
}

fn parent(s: &DepSentence, node: Node) -> Node {
    match node {
        Node::Root => Node::Root,
        Node::Word(i) => match s.head_of(i) {
            0 => Node::Root,
            h => Node::Word(h),
        },
    }
}

/// `k`-th ancestor of word `i`; order 0 is the word itself and every order at
/// or past the root is ROOT.
pub fn ancestor(s: &DepSentence, i: usize, k: usize) -> Node {
    let mut node = Node::Word(i);
    for _ in 0..k {
        node = parent(s, node);
        if node == Node::Root {
            break;
        }
    }
    node
}

/// `[i, p(i), …, p^{n-1}(i)]` with ROOT filling past the root.
pub fn ancestor_window(s: &DepSentence, i: usize, n: usize) -> Vec<Slot> {
    let mut slots = Vec::with_capacity(n);
    let mut node = Node::Word(i);
    for _ in 0..n {
        slots.push(node.into());
        node = parent(s, node);
    }
    slots
}

/// Nearest siblings of word `i` (other words sharing its head; roots share
/// the virtual ROOT), as `(left, right)`.
pub fn nearest_siblings(s: &DepSentence, i: usize) -> (Option<usize>, Option<usize>) {
    let h = s.head_of(i);
    let left = (1..i).rev().find(|&j| s.head_of(j) == h);
    let right = (i + 1..=s.len()).find(|&j| s.head_of(j) == h);
    (left, right)
}

pub fn sibling_window(s: &DepSentence, i: usize, parts: &[SiblingPart]) -> Vec<Slot> {
    let (left, right) = nearest_siblings(s, i);
    parts
        .iter()
        .map(|part| match part {
            SiblingPart::Modifier => Slot::Word(i),
            SiblingPart::LeftSibling => left.map_or(Slot::Zero, Slot::Word),
            SiblingPart::RightSibling => right.map_or(Slot::Zero, Slot::Word),
            SiblingPart::Head => ancestor(s, i, 1).into(),
            SiblingPart::GrandParent => ancestor(s, i, 2).into(),
        })
        .collect()
}

/// `[i, i+1, …, i+n-1]`, zero-padded past the last word.
pub fn sequential_window(s: &DepSentence, i: usize, n: usize) -> Vec<Slot> {
    (i..i + n)
        .map(|j| {
            if j <= s.len() {
                Slot::Word(j)
            } else {
                Slot::Zero
            }
        })
        .collect()
}

/// One inspect line: `template m=word slots=[…]`.
pub fn describe_window(s: &DepSentence, template: &WindowTemplate, i: usize) -> String {
    let slots: Vec<&str> = template
        .window(s, i)
        .into_iter()
        .map(|slot| match slot {
            Slot::Word(j) => s.form(j),
            Slot::Root => "ROOT",
            Slot::Zero => "PAD",
        })
        .collect();
    format!("{template} m={} slots=[{}]", s.form(i), slots.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree(heads: &[usize]) -> DepSentence {
        let forms: Vec<String> = (1..=heads.len()).map(|i| format!("w{i}")).collect();
        let forms: Vec<&str> = forms.iter().map(String::as_str).collect();
        DepSentence::from_heads("t", &forms, heads)
    }

    use Slot::{Root, Word, Zero};

    #[test]
    fn ancestor_examples() {
        let s = tree(&[2, 0, 2]);
        assert_eq!(ancestor(&s, 1, 0), Node::Word(1));
        assert_eq!(ancestor(&s, 1, 1), Node::Word(2));
        assert_eq!(ancestor(&s, 1, 2), Node::Root);
        assert_eq!(ancestor(&s, 1, 3), Node::Root);
        let s = tree(&[3, 3, 0, 6, 6, 3]);
        assert_eq!(ancestor(&s, 4, 2), Node::Word(3));
    }

    #[test]
    fn ancestor_window_examples() {
        assert_eq!(
            ancestor_window(&tree(&[0]), 1, 3),
            vec![Word(1), Root, Root]
        );
        let s = tree(&[2, 0, 2]);
        assert_eq!(ancestor_window(&s, 1, 3), vec![Word(1), Word(2), Root]);
        assert_eq!(ancestor_window(&s, 2, 4), vec![Word(2), Root, Root, Root]);
    }

    #[test]
    fn sibling_examples() {
        let s = tree(&[2, 0, 2]);
        let ls_m_h: WindowTemplate = "sib:ls-m-h".parse().unwrap();
        assert_eq!(ls_m_h.window(&s, 3), vec![Word(1), Word(3), Word(2)]);
        assert_eq!(ls_m_h.window(&s, 1), vec![Zero, Word(1), Word(2)]);
        let one = tree(&[0]);
        for t in sibling_templates() {
            let w = t.window(&one, 1);
            let WindowTemplate::Sibling(parts) = &t else {
                unreachable!()
            };
            for (slot, part) in w.iter().zip(parts) {
                match part {
                    SiblingPart::LeftSibling | SiblingPart::RightSibling => assert_eq!(*slot, Zero),
                    SiblingPart::Head => assert_eq!(*slot, Root),
                    SiblingPart::Modifier => assert_eq!(*slot, Word(1)),
                    SiblingPart::GrandParent => unreachable!(),
                }
            }
        }
    }

    #[test]
    fn nearest_siblings_pick_closest() {
        // 1..5 all attach to 6
        let s = tree(&[6, 6, 6, 6, 6, 0]);
        assert_eq!(nearest_siblings(&s, 3), (Some(2), Some(4)));
        assert_eq!(nearest_siblings(&s, 1), (None, Some(2)));
        assert_eq!(nearest_siblings(&s, 6), (None, None));
        let g: WindowTemplate = "sib:m-h-g".parse().unwrap();
        let s = tree(&[2, 3, 0]);
        assert_eq!(g.window(&s, 1), vec![Word(1), Word(2), Word(3)]);
        assert_eq!(g.window(&s, 2), vec![Word(2), Word(3), Root]);
    }

    #[test]
    fn sequential_examples() {
        assert_eq!(
            sequential_window(&tree(&[0, 1]), 1, 3),
            vec![Word(1), Word(2), Zero]
        );
        assert_eq!(
            sequential_window(&tree(&[0, 1, 2, 3, 4]), 2, 3),
            vec![Word(2), Word(3), Word(4)]
        );
        assert_eq!(
            sequential_window(&tree(&[0]), 1, 5),
            vec![Word(1), Zero, Zero, Zero, Zero]
        );
    }

    #[test]
    fn default_set_layout() {
        let set = default_templates();
        assert_eq!(set.len(), 11);
        assert_eq!(
            set.family_counts(),
            [
                (Family::Ancestor, 3),
                (Family::Sibling, 5),
                (Family::Sequential, 3)
            ]
        );
        assert_eq!(
            set.to_string(),
            "anc:3,anc:4,anc:5,sib:ls-m,sib:m-rs,sib:ls-m-h,sib:m-rs-h,sib:ls-m-rs-h,seq:3,seq:4,seq:5"
        );
        assert_eq!(TemplateSet::parse(&set.to_string()).unwrap(), set);
        assert_eq!(TemplateSet::parse("sequential").unwrap().len(), 3);
        assert_eq!(TemplateSet::parse("ancestor").unwrap().len(), 3);
        assert_eq!(TemplateSet::parse("ancestor+sibling").unwrap().len(), 8);
    }

    #[test]
    fn dsl_reorders_by_family_and_rejects_junk() {
        let set = TemplateSet::parse("seq:3, sib:ls-m-h, anc:2").unwrap();
        assert_eq!(set.to_string(), "anc:2,sib:ls-m-h,seq:3");
        for bad in [
            "",
            "anc:0",
            "anc",
            "foo:3",
            "sib:ls-h",
            "sib:ls-x-m",
            "seq:-1",
        ] {
            assert!(TemplateSet::parse(bad).is_err(), "{bad:?} should fail");
        }
    }

    #[test]
    fn describe_lines() {
        let s = DepSentence::from_heads("x", &["moving", "stories"], &[0, 1]);
        let t = WindowTemplate::Ancestor(3);
        assert_eq!(
            describe_window(&s, &t, 2),
            "anc:3 m=stories slots=[stories, moving, ROOT]"
        );
        let t = WindowTemplate::Sequential(3);
        assert_eq!(
            describe_window(&s, &t, 2),
            "seq:3 m=stories slots=[stories, PAD, PAD]"
        );
    }
}

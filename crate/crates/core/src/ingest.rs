//! CoNLL-X/U ingestion, tree validation and data splits.
//!
//! Token and head indices follow CoNLL conventions: tokens are numbered from
//! 1 and a head of 0 denotes the virtual ROOT.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, TreeProblem};
use crate::numerics::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    /// 1-based position in the sentence.
    pub index: usize,
    pub form: String,
    /// Head token index, 0 for ROOT.
    pub head: usize,
    pub deprel: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepSentence {
    pub tokens: Vec<Token>,
    /// Index into the owning dataset's `label_names`; `None` when unlabeled.
    pub label: Option<usize>,
    pub source_id: String,
}

impl DepSentence {
    /// Builds a sentence from forms and heads, numbering tokens from 1.
    pub fn from_heads(source_id: impl Into<String>, forms: &[&str], heads: &[usize]) -> Self {
        assert_eq!(forms.len(), heads.len(), "one head per form");
        let tokens = forms
            .iter()
            .zip(heads)
            .enumerate()
            .map(|(i, (form, &head))| Token {
                index: i + 1,
                form: (*form).to_string(),
                head,
                deprel: "dep".to_string(),
            })
            .collect();
        DepSentence {
            tokens,
            label: None,
            source_id: source_id.into(),
        }
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn heads(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.head).collect()
    }

    /// Head of 1-based token `i`.
    pub fn head_of(&self, i: usize) -> usize {
        self.tokens[i - 1].head
    }

    pub fn form(&self, i: usize) -> &str {
        &self.tokens[i - 1].form
    }

    pub fn text(&self) -> String {
        let forms: Vec<&str> = self.tokens.iter().map(|t| t.form.as_str()).collect();
        forms.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub sentences: Vec<DepSentence>,
    pub label_names: Vec<String>,
    pub vocab_counts: BTreeMap<String, usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn kfold_split(&self, k: usize, seed: u64) -> Result<Vec<Fold>> {
        kfold_split(self.len(), k, seed)
    }

    pub fn select(&self, indices: &[usize]) -> Vec<&DepSentence> {
        indices.iter().map(|&i| &self.sentences[i]).collect()
    }

    /// Concatenates datasets that share a label space, merging vocab counts.
    pub fn merge(parts: &[&Dataset]) -> Result<Dataset> {
        let mut out = Dataset::default();
        for (n, part) in parts.iter().enumerate() {
            if n == 0 {
                out.label_names = part.label_names.clone();
            } else if part.label_names != out.label_names {
                return Err(Error::ConfigMismatch(format!(
                    "label spaces differ: {:?} vs {:?}",
                    out.label_names, part.label_names
                )));
            }
            out.sentences.extend(part.sentences.iter().cloned());
            for (w, c) in &part.vocab_counts {
                *out.vocab_counts.entry(w.clone()).or_default() += c;
            }
        }
        Ok(out)
    }
}

/// Granularity of hierarchical labels such as TREC's `NUM:temp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelLevel {
    /// Keep only the part before the first `:`.
    Coarse,
    /// Keep the label verbatim.
    #[default]
    Fine,
}

impl LabelLevel {
    pub fn apply(self, label: &str) -> &str {
        match self {
            LabelLevel::Fine => label,
            LabelLevel::Coarse => label.split(':').next().unwrap_or(label),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadOptions {
    /// Reject sentences with more than one token attached to ROOT.
    pub strict_roots: bool,
    /// Lowercase forms when counting vocabulary.
    pub lowercase: bool,
    pub label_level: LabelLevel,
    /// Fixed label space; labels outside it are errors. When `None` the label
    /// names are the sorted distinct labels of the input.
    pub label_space: Option<Vec<String>>,
    /// Prefix for generated source ids of blocks without a `# sent_id`.
    pub id_prefix: String,
}

impl Default for ReadOptions {
    fn default() -> Self {
        ReadOptions {
            strict_roots: false,
            lowercase: true,
            label_level: LabelLevel::Fine,
            label_space: None,
            id_prefix: "s".to_string(),
        }
    }
}

/// Reads a label sidecar: one class name per non-blank line.
pub fn read_labels(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Parses CoNLL text with labels from a sidecar stream, using default options.
pub fn parse_conllu<S: AsRef<str>>(text: &str, labels: &[S]) -> Result<Dataset> {
    let labels: Vec<String> = labels.iter().map(|s| s.as_ref().to_string()).collect();
    read_conllu(text, Some(&labels), &ReadOptions::default())
}

struct RawBlock {
    tokens: Vec<Token>,
    sent_id: Option<String>,
    inline_label: Option<String>,
}

/// Parses CoNLL text. Labels come from `labels` when given, otherwise from
/// `# label = X` comments; sentences without either stay unlabeled.
pub fn read_conllu(text: &str, labels: Option<&[String]>, opts: &ReadOptions) -> Result<Dataset> {
    let blocks = split_blocks(text)?;
    if let Some(labels) = labels {
        if labels.len() != blocks.len() {
            return Err(Error::LabelCountMismatch {
                sentences: blocks.len(),
                labels: labels.len(),
            });
        }
    }

    let raw_labels: Vec<Option<String>> = blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            labels
                .map(|l| Some(l[i].clone()))
                .unwrap_or_else(|| b.inline_label.clone())
                .map(|l| opts.label_level.apply(&l).to_string())
        })
        .collect();

    let label_names = match &opts.label_space {
        Some(space) => space.clone(),
        None => raw_labels
            .iter()
            .flatten()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let label_ids: BTreeMap<&str, usize> = label_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    let mut dataset = Dataset {
        label_names: label_names.clone(),
        ..Dataset::default()
    };
    for (n, (block, raw)) in blocks.into_iter().zip(raw_labels).enumerate() {
        let source_id = block
            .sent_id
            .unwrap_or_else(|| format!("{}{}", opts.id_prefix, n + 1));
        let label = match raw {
            Some(l) => Some(
                *label_ids
                    .get(l.as_str())
                    .ok_or(Error::UnknownLabel { label: l.clone() })?,
            ),
            None => None,
        };
        let sentence = DepSentence {
            tokens: block.tokens,
            label,
            source_id,
        };
        validate_tree(&sentence, opts.strict_roots).map_err(|problem| Error::InvalidTree {
            source_id: sentence.source_id.clone(),
            problem,
        })?;
        for t in &sentence.tokens {
            let key = if opts.lowercase {
                t.form.to_lowercase()
            } else {
                t.form.clone()
            };
            *dataset.vocab_counts.entry(key).or_default() += 1;
        }
        dataset.sentences.push(sentence);
    }
    Ok(dataset)
}

fn split_blocks(text: &str) -> Result<Vec<RawBlock>> {
    let mut blocks = Vec::new();
    let mut current: Option<RawBlock> = None;
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if let Some(block) = current.take() {
                if !block.tokens.is_empty() {
                    blocks.push(block);
                }
            }
            continue;
        }
        let block = current.get_or_insert_with(|| RawBlock {
            tokens: Vec::new(),
            sent_id: None,
            inline_label: None,
        });
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                match key.trim() {
                    "sent_id" => block.sent_id = Some(value.trim().to_string()),
                    "label" => block.inline_label = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            continue;
        }
        if let Some(token) = parse_token_line(line, lineno)? {
            if token.index != block.tokens.len() + 1 {
                return Err(Error::MalformedLine {
                    line: lineno,
                    message: format!(
                        "token id {} out of sequence (expected {})",
                        token.index,
                        block.tokens.len() + 1
                    ),
                });
            }
            block.tokens.push(token);
        }
    }
    if let Some(block) = current {
        if !block.tokens.is_empty() {
            blocks.push(block);
        }
    }
    Ok(blocks)
}

/// Parses one token line; `None` for multiword ranges and empty nodes.
fn parse_token_line(line: &str, lineno: usize) -> Result<Option<Token>> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() < 8 {
        return Err(Error::MalformedLine {
            line: lineno,
            message: format!(
                "expected at least 8 tab-separated columns, got {}",
                cols.len()
            ),
        });
    }
    let id = cols[0].trim();
    if id.contains('-') || id.contains('.') {
        return Ok(None);
    }
    let malformed = |message: String| Error::MalformedLine {
        line: lineno,
        message,
    };
    let index: usize = id
        .parse()
        .map_err(|_| malformed(format!("non-integer ID {id:?}")))?;
    if index == 0 {
        return Err(malformed("token ID must be at least 1".into()));
    }
    let head_col = cols[6].trim();
    let head: usize = head_col
        .parse()
        .map_err(|_| malformed(format!("non-integer HEAD {head_col:?}")))?;
    let form = cols[1].trim();
    if form.is_empty() {
        return Err(malformed("empty FORM".into()));
    }
    Ok(Some(Token {
        index,
        form: form.to_string(),
        head,
        deprel: cols[7].trim().to_string(),
    }))
}

/// Serializes sentences to CoNLL-U with `sent_id` and `label` comments.
pub fn write_conllu(sentences: &[DepSentence], label_names: &[String]) -> String {
    let mut out = String::new();
    for s in sentences {
        let _ = writeln!(out, "# sent_id = {}", s.source_id);
        if let Some(l) = s.label.and_then(|l| label_names.get(l)) {
            let _ = writeln!(out, "# label = {l}");
        }
        for t in &s.tokens {
            let deprel = if t.deprel.is_empty() { "_" } else { &t.deprel };
            let _ = writeln!(
                out,
                "{}\t{}\t_\t_\t_\t_\t{}\t{}\t_\t_",
                t.index, t.form, t.head, deprel
            );
        }
        out.push('\n');
    }
    out
}

/// Checks the head relation of `s` without modifying it.
pub fn validate_tree(s: &DepSentence, strict_roots: bool) -> std::result::Result<(), TreeProblem> {
    let n = s.tokens.len();
    if n == 0 {
        return Err(TreeProblem::Empty);
    }
    for t in &s.tokens {
        if t.form.trim().is_empty() {
            return Err(TreeProblem::EmptyForm { index: t.index });
        }
        if t.head > n {
            return Err(TreeProblem::HeadOutOfRange {
                index: t.index,
                head: t.head,
            });
        }
        if t.head == t.index {
            return Err(TreeProblem::SelfLoop { index: t.index });
        }
    }
    let heads = s.heads();
    for start in 1..=n {
        let mut node = start;
        let mut steps = 0;
        while node != 0 && steps <= n {
            node = heads[node - 1];
            steps += 1;
        }
        if node != 0 {
            return Err(TreeProblem::Cycle {
                members: cycle_from(&heads, start),
            });
        }
    }
    let roots: Vec<usize> = s
        .tokens
        .iter()
        .filter(|t| t.head == 0)
        .map(|t| t.index)
        .collect();
    if roots.is_empty() {
        return Err(TreeProblem::NoRoot);
    }
    if strict_roots && roots.len() > 1 {
        return Err(TreeProblem::MultipleRoots { roots });
    }
    Ok(())
}

/// Cycle reached from `start`, rotated to begin at its smallest member.
fn cycle_from(heads: &[usize], start: usize) -> Vec<usize> {
    let mut seen = vec![false; heads.len() + 1];
    let mut node = start;
    while !seen[node] {
        seen[node] = true;
        node = heads[node - 1];
    }
    let mut members = vec![node];
    let mut next = heads[node - 1];
    while next != node {
        members.push(next);
        next = heads[next - 1];
    }
    let min_at = members
        .iter()
        .enumerate()
        .min_by_key(|(_, &m)| m)
        .map(|(i, _)| i)
        .unwrap_or(0);
    members.rotate_left(min_at);
    members
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partitions `0..len` into `k` test folds whose sizes differ by at most one.
pub fn kfold_split(len: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "k must be at least 2, got {k}"
        )));
    }
    if k > len {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {len} available sentences"
        )));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng_from_seed(seed));

    let base = len / k;
    let extra = len % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut test = order[start..start + size].to_vec();
        test.sort_unstable();
        let mut train: Vec<usize> = order[..start]
            .iter()
            .chain(&order[start + size..])
            .copied()
            .collect();
        train.sort_unstable();
        folds.push(Fold { train, test });
        start += size;
    }
    Ok(folds)
}

/// Holds out `round(fraction · |train|)` indices (half up, at least one) as a
/// development set. Returns `(train, dev)`, both sorted.
pub fn dev_split(train: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "dev fraction must be in (0, 1), got {fraction}"
        )));
    }
    if train.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "cannot carve a dev set out of {} sentences",
            train.len()
        )));
    }
    let dev_size = ((fraction * train.len() as f64 + 0.5).floor() as usize)
        .max(1)
        .min(train.len() - 1);
    let mut order = train.to_vec();
    order.shuffle(&mut rng_from_seed(seed));
    let mut dev = order[..dev_size].to_vec();
    let mut rest = order[dev_size..].to_vec();
    dev.sort_unstable();
    rest.sort_unstable();
    Ok((rest, dev))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentence(heads: &[usize]) -> DepSentence {
        let forms: Vec<String> = (1..=heads.len()).map(|i| format!("w{i}")).collect();
        let forms: Vec<&str> = forms.iter().map(String::as_str).collect();
        DepSentence::from_heads("t", &forms, heads)
    }

    /// Independent reachability check: BFS down from ROOT over child lists.
    fn reachable_from_root(heads: &[usize]) -> bool {
        let n = heads.len();
        let mut seen = vec![false; n + 1];
        let mut stack = vec![0];
        while let Some(p) = stack.pop() {
            for (i, &h) in heads.iter().enumerate() {
                if h == p && !seen[i + 1] {
                    seen[i + 1] = true;
                    stack.push(i + 1);
                }
            }
        }
        seen[1..].iter().all(|&s| s)
    }

    #[test]
    fn single_token_block() {
        let ds = parse_conllu("1\tHi\thi\tINTJ\tUH\t_\t0\troot\t_\t_\n", &["pos"]).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.sentences[0].tokens.len(), 1);
        assert_eq!(ds.sentences[0].tokens[0].head, 0);
        assert_eq!(ds.sentences[0].tokens[0].form, "Hi");
        assert_eq!(ds.label_names, vec!["pos"]);
        assert_eq!(ds.sentences[0].label, Some(0));
        assert_eq!(ds.vocab_counts.get("hi"), Some(&1));
    }

    #[test]
    fn two_cycle_is_rejected_with_source_id() {
        let text = "# sent_id = bad-one\n1\ta\t_\t_\t_\t_\t2\tdep\n2\tb\t_\t_\t_\t_\t1\tdep\n";
        let err = parse_conllu(text, &["x"]).unwrap_err();
        match err {
            Error::InvalidTree { source_id, problem } => {
                assert_eq!(source_id, "bad-one");
                assert_eq!(
                    problem,
                    TreeProblem::Cycle {
                        members: vec![1, 2]
                    }
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn label_count_mismatch() {
        let block = "1\ta\t_\t_\t_\t_\t0\troot\n";
        let text = format!("{block}\n{block}\n{block}");
        let err = parse_conllu(&text, &["a", "b"]).unwrap_err();
        assert!(matches!(
            err,
            Error::LabelCountMismatch {
                sentences: 3,
                labels: 2
            }
        ));
    }

    #[test]
    fn malformed_lines_name_line_number() {
        let err = parse_conllu("# c\n1\ta\t_\t_\t_\t_\t0\n", &["x"]).unwrap_err();
        assert!(matches!(err, Error::MalformedLine { line: 2, .. }), "{err}");
        let err = parse_conllu("1\ta\t_\t_\t_\t_\tzero\troot\n", &["x"]).unwrap_err();
        assert!(matches!(err, Error::MalformedLine { line: 1, .. }), "{err}");
        let err = parse_conllu("x\ta\t_\t_\t_\t_\t0\troot\n", &["x"]).unwrap_err();
        assert!(matches!(err, Error::MalformedLine { line: 1, .. }), "{err}");
    }

    #[test]
    fn out_of_range_head() {
        let err = parse_conllu("1\ta\t_\t_\t_\t_\t5\troot\n", &["x"]).unwrap_err();
        assert!(matches!(
            err,
            Error::InvalidTree {
                problem: TreeProblem::HeadOutOfRange { index: 1, head: 5 },
                ..
            }
        ));
    }

    #[test]
    fn skips_ranges_empty_nodes_and_comments() {
        let text = "# text = don't go\n# label = neg\n\
                    1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n\
                    1\tdo\tdo\tAUX\t_\t_\t3\taux\t_\t_\n\
                    2\tn't\tnot\tPART\t_\t_\t3\tadvmod\t_\t_\n\
                    3\tgo\tgo\tVERB\t_\t_\t0\troot\t_\t_\n\
                    3.1\tgone\t_\t_\t_\t_\t_\t_\t3:dep\t_\n";
        let ds = read_conllu(text, None, &ReadOptions::default()).unwrap();
        assert_eq!(ds.sentences[0].len(), 3);
        assert_eq!(ds.label_names, vec!["neg"]);
        assert_eq!(ds.sentences[0].heads(), vec![3, 3, 0]);
    }

    #[test]
    fn sidecar_overrides_inline_and_coarse_labels() {
        let text = "# label = ignored\n1\ta\t_\t_\t_\t_\t0\troot\n\n1\tb\t_\t_\t_\t_\t0\troot\n";
        let opts = ReadOptions {
            label_level: LabelLevel::Coarse,
            ..ReadOptions::default()
        };
        let labels = vec!["NUM:temp".to_string(), "LOC:city".to_string()];
        let ds = read_conllu(text, Some(&labels), &opts).unwrap();
        assert_eq!(ds.label_names, vec!["LOC", "NUM"]);
        assert_eq!(ds.sentences[0].label, Some(1));

        let fixed = ReadOptions {
            label_space: Some(vec!["LOC".into()]),
            ..opts
        };
        assert!(matches!(
            read_conllu(text, Some(&labels), &fixed),
            Err(Error::UnknownLabel { .. })
        ));
    }

    #[test]
    fn multiple_roots_policy() {
        let s = sentence(&[0, 0, 1]);
        assert!(validate_tree(&s, false).is_ok());
        assert_eq!(
            validate_tree(&s, true),
            Err(TreeProblem::MultipleRoots { roots: vec![1, 2] })
        );
    }

    #[test]
    fn validate_examples() {
        assert!(validate_tree(&sentence(&[0]), true).is_ok());
        assert!(validate_tree(&sentence(&[2, 0, 2]), true).is_ok());
        let heads = [3, 3, 0, 6, 6, 3];
        assert!(reachable_from_root(&heads));
        assert!(validate_tree(&sentence(&heads), true).is_ok());
        assert_eq!(
            validate_tree(&sentence(&[2, 3, 1, 0]), false),
            Err(TreeProblem::Cycle {
                members: vec![1, 2, 3]
            })
        );
        assert_eq!(
            validate_tree(&sentence(&[1]), false),
            Err(TreeProblem::SelfLoop { index: 1 })
        );
        assert_eq!(
            validate_tree(&sentence(&[]), false),
            Err(TreeProblem::Empty)
        );
    }

    #[test]
    fn kfold_examples() {
        let folds = kfold_split(10, 10, 1).unwrap();
        assert_eq!(folds.len(), 10);
        assert!(folds
            .iter()
            .all(|f| f.test.len() == 1 && f.train.len() == 9));

        let folds = kfold_split(10_662, 10, 7).unwrap();
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        assert!(folds
            .iter()
            .all(|f| f.test.len() == 1066 || f.test.len() == 1067));
        all.sort_unstable();
        assert_eq!(all, (0..10_662).collect::<Vec<_>>());

        assert_eq!(
            kfold_split(50, 5, 9).unwrap(),
            kfold_split(50, 5, 9).unwrap()
        );
        assert_ne!(
            kfold_split(50, 5, 9).unwrap(),
            kfold_split(50, 5, 10).unwrap()
        );
        assert!(kfold_split(3, 4, 0).is_err());
        assert!(kfold_split(3, 1, 0).is_err());
    }

    #[test]
    fn dev_split_examples() {
        let idx: Vec<usize> = (0..100).collect();
        let (train, dev) = dev_split(&idx, 0.1, 3).unwrap();
        assert_eq!((train.len(), dev.len()), (90, 10));
        assert!(dev.iter().all(|d| !train.contains(d)));

        let idx: Vec<usize> = (0..9).collect();
        let (train, dev) = dev_split(&idx, 0.1, 3).unwrap();
        assert_eq!((train.len(), dev.len()), (8, 1));

        // 0.1 * 15 = 1.5 rounds half up to 2
        let idx: Vec<usize> = (0..15).collect();
        assert_eq!(dev_split(&idx, 0.1, 0).unwrap().1.len(), 2);

        assert_eq!(
            dev_split(&idx, 0.1, 5).unwrap(),
            dev_split(&idx, 0.1, 5).unwrap()
        );
        assert!(dev_split(&idx, 0.0, 5).is_err());
        assert!(dev_split(&idx, 1.0, 5).is_err());
    }
}

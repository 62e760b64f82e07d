//! Vocabulary and word-vector tables.
//!
//! Rows 0, 1 and 2 are reserved for PAD, ROOT and UNK. PAD is the zero
//! vector and never trains; ROOT is an ordinary trainable row used for
//! vertical padding above the tree root.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{rng_from_seed, Matrix, Real};

pub const PAD: usize = 0;
pub const ROOT: usize = 1;
pub const UNK: usize = 2;
pub const RESERVED: usize = 3;

pub const PAD_SYMBOL: &str = "<pad>";
pub const ROOT_SYMBOL: &str = "<root>";
pub const UNK_SYMBOL: &str = "<unk>";

/// Half-width of the uniform distribution for vectors without a pretrained row.
pub const OOV_RANGE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
    lowercase: bool,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    words: Vec<String>,
    lowercase: bool,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        Vocab::from_rows(r.words, r.lowercase)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            words: v.words,
            lowercase: v.lowercase,
        }
    }
}

impl Vocab {
    /// Builds a vocabulary from word counts, most frequent first (ties
    /// alphabetical). Words below `min_count` map to UNK.
    pub fn from_counts(
        counts: &BTreeMap<String, usize>,
        min_count: usize,
        lowercase: bool,
    ) -> Self {
        let mut entries: Vec<(&String, usize)> = counts
            .iter()
            .filter(|(_, &c)| c >= min_count)
            .map(|(w, &c)| (w, c))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut words = reserved_words();
        words.extend(entries.into_iter().map(|(w, _)| norm(w, lowercase)));
        Vocab::from_rows(words, lowercase)
    }

    /// Builds a vocabulary whose non-reserved rows are `words` in order.
    pub fn from_words<S: AsRef<str>>(words: &[S], lowercase: bool) -> Self {
        let mut rows = reserved_words();
        rows.extend(words.iter().map(|w| norm(w.as_ref(), lowercase)));
        Vocab::from_rows(rows, lowercase)
    }

    /// `rows` must start with the three reserved symbols.
    fn from_rows(words: Vec<String>, lowercase: bool) -> Self {
        let mut index = HashMap::with_capacity(words.len());
        let mut deduped = Vec::with_capacity(words.len());
        for w in words {
            if !index.contains_key(&w) {
                index.insert(w.clone(), deduped.len());
                deduped.push(w);
            }
        }
        Vocab {
            words: deduped,
            index,
            lowercase,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() == RESERVED
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    /// Row for `word`; reserved symbols map to their rows, unknown words to UNK.
    pub fn lookup(&self, word: &str) -> usize {
        if let Some(&row) = self.index.get(word) {
            return row;
        }
        if self.lowercase {
            if let Some(&row) = self.index.get(&word.to_lowercase()) {
                return row;
            }
        }
        UNK
    }

    /// Row of `word` if it is an actual vocabulary entry.
    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied().filter(|&r| r >= RESERVED)
    }

    pub fn word(&self, row: usize) -> &str {
        &self.words[row]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

fn reserved_words() -> Vec<String> {
    vec![
        PAD_SYMBOL.to_string(),
        ROOT_SYMBOL.to_string(),
        UNK_SYMBOL.to_string(),
    ]
}

fn norm(w: &str, lowercase: bool) -> String {
    if lowercase {
        w.to_lowercase()
    } else {
        w.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<T> {
    pub matrix: Matrix<T>,
    /// Non-static embeddings are updated during training.
    pub trainable: bool,
}

impl<T: Real> EmbeddingMatrix<T> {
    /// Every row except PAD drawn from the OOV distribution.
    pub fn random(vocab: &Vocab, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding dimension must be ≥ 1".into(),
            ));
        }
        let mut matrix = Matrix::zeros(vocab.len(), dim);
        let rows: Vec<usize> = (ROOT..vocab.len()).collect();
        init_oov(&mut matrix, &rows, seed);
        Ok(EmbeddingMatrix {
            matrix,
            trainable: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn row(&self, r: usize) -> &[T] {
        self.matrix.row(r)
    }
}

/// Fills `rows` of `matrix` i.i.d. uniform on `[-0.25, 0.25]`, in the given
/// row order.
pub fn init_oov<T: Real>(matrix: &mut Matrix<T>, rows: &[usize], seed: u64) {
    let mut rng = rng_from_seed(seed);
    for &r in rows {
        for v in matrix.row_mut(r) {
            *v = T::of(rng.random_range(-OOV_RANGE..=OOV_RANGE));
        }
    }
}

pub fn lookup<'a, T: Real>(vocab: &Vocab, matrix: &'a EmbeddingMatrix<T>, word: &str) -> &'a [T] {
    matrix.row(vocab.lookup(word))
}

/// Loads word2vec text vectors (`V d` header, then `word v1 … vd` lines) for
/// the words of `vocab`. Rows without a pretrained vector, plus ROOT and UNK,
/// are drawn with [`init_oov`] using `seed`.
pub fn load_pretrained<T: Real>(
    path: &Path,
    vocab: &Vocab,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingMatrix<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_word2vec_text(std::io::BufReader::new(file), vocab, dim, seed).map_err(|e| match e {
        Error::Embeddings { message, .. } => Error::Embeddings {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

pub fn read_word2vec_text<T: Real, R: BufRead>(
    reader: R,
    vocab: &Vocab,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingMatrix<T>> {
    let fail = |message: String| Error::Embeddings {
        path: Default::default(),
        message,
    };
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| fail("empty file".into()))?
        .map_err(|e| fail(e.to_string()))?;
    let mut parts = header.split_whitespace();
    let (_count, file_dim) = match (
        parts.next().and_then(|v| v.parse::<usize>().ok()),
        parts.next().and_then(|v| v.parse::<usize>().ok()),
        parts.next(),
    ) {
        (Some(v), Some(d), None) => (v, d),
        _ => return Err(fail(format!("unreadable header {header:?}"))),
    };
    if file_dim != dim {
        return Err(fail(format!(
            "file has dimension {file_dim}, model expects {dim}"
        )));
    }

    let mut matrix = Matrix::<T>::zeros(vocab.len(), dim);
    // 2 = exact match, 1 = case-folded match
    let mut filled = vec![0u8; vocab.len()];
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| fail(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields.next().unwrap_or_default();
        let values: Vec<&str> = fields.collect();
        if values.len() != dim {
            return Err(fail(format!(
                "line {}: {} values, expected {dim}",
                n + 2,
                values.len()
            )));
        }
        let (row, quality) = match vocab.get(word) {
            Some(r) => (r, 2),
            None if vocab.lowercase() => match vocab.get(&word.to_lowercase()) {
                Some(r) => (r, 1),
                None => continue,
            },
            None => continue,
        };
        if filled[row] >= quality {
            continue;
        }
        for (slot, v) in matrix.row_mut(row).iter_mut().zip(&values) {
            let x: f64 = v
                .parse()
                .map_err(|_| fail(format!("line {}: bad number {v:?}", n + 2)))?;
            if !x.is_finite() {
                return Err(fail(format!("line {}: non-finite value", n + 2)));
            }
            *slot = T::of(x);
        }
        filled[row] = quality;
    }

    let missing: Vec<usize> = (ROOT..vocab.len())
        .filter(|&r| r < RESERVED || filled[r] == 0)
        .collect();
    init_oov(&mut matrix, &missing, seed);
    Ok(EmbeddingMatrix {
        matrix,
        trainable: true,
    })
}

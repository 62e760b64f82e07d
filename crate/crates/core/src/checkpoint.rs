//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "DCNNCKPT"
//! version  u32
//! hlen     u64      length of the JSON header
//! header   hlen bytes of UTF-8 JSON (kind, precision, config, vocab, labels, …)
//! payload  parameter groups in `ModelParams::groups` order, then for
//!          training checkpoints the Adadelta accumulators, as f32/f64 LE
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embeddings::{EmbeddingMatrix, Vocab};
use crate::error::{Error, Result};
use crate::model::{FilterBank, ModelConfig, ModelParams, SoftmaxLayer};
use crate::numerics::{Matrix, Precision, Real};
use crate::training::AdadeltaState;

pub const MAGIC: &[u8; 8] = b"DCNNCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Model,
    Training,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: Kind,
    precision: Precision,
    config: ModelConfig,
    vocab: Vocab,
    label_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    training: Option<TrainingHeader>,
}

#[derive(Serialize, Deserialize)]
struct TrainingHeader {
    epoch: usize,
    rho: f64,
    epsilon: f64,
}

/// Model parameters plus optimizer state for resuming training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCheckpoint<T> {
    pub params: ModelParams<T>,
    pub state: AdadeltaState<T>,
    /// Epochs completed.
    pub epoch: usize,
}

fn encode<T: Real>(
    params: &ModelParams<T>,
    state: Option<(&AdadeltaState<T>, usize)>,
) -> Result<Vec<u8>> {
    params.check_shapes()?;
    let header = Header {
        kind: if state.is_some() {
            Kind::Training
        } else {
            Kind::Model
        },
        precision: T::PRECISION,
        config: params.config.clone(),
        vocab: params.vocab.clone(),
        label_names: params.label_names.clone(),
        training: state.map(|(s, epoch)| TrainingHeader {
            epoch,
            rho: s.rho,
            epsilon: s.epsilon,
        }),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + params.num_parameters() * T::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, group) in params.groups() {
        group.iter().for_each(|v| v.write_le(&mut out));
    }
    if let Some((s, _)) = state {
        s.check_against(params)?;
        for acc in s.accumulators() {
            acc.iter().for_each(|v| v.write_le(&mut out));
        }
    }
    Ok(out)
}

pub fn to_bytes<T: Real>(params: &ModelParams<T>) -> Result<Vec<u8>> {
    encode(params, None)
}

pub fn training_to_bytes<T: Real>(ckpt: &TrainingCheckpoint<T>) -> Result<Vec<u8>> {
    encode(&ckpt.params, Some((&ckpt.state, ckpt.epoch)))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Corrupt(format!(
                "truncated while reading {what} (need {n} bytes at offset {}, {} left)",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn values<T: Real>(&mut self, n: usize, what: &str) -> Result<Vec<T>> {
        let raw = self.take(n * T::BYTES, what)?;
        let v: Vec<T> = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Corrupt(format!("non-finite value in {what}")));
        }
        Ok(v)
    }
}

fn decode<T: Real>(bytes: &[u8]) -> Result<(ModelParams<T>, Option<TrainingCheckpoint<T>>)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8, "magic")? != MAGIC {
        return Err(Error::Corrupt("bad magic, not a checkpoint".into()));
    }
    let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Corrupt(format!(
            "unsupported format version {version} (expected {VERSION})"
        )));
    }
    let hlen = u64::from_le_bytes(cur.take(8, "header length")?.try_into().unwrap());
    let hlen =
        usize::try_from(hlen).map_err(|_| Error::Corrupt("header length overflow".into()))?;
    let header: Header = serde_json::from_slice(cur.take(hlen, "header")?)
        .map_err(|e| Error::Corrupt(format!("header: {e}")))?;
    if header.precision != T::PRECISION {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint holds {}-bit parameters, loader expects {}-bit",
            header.precision.bits(),
            T::PRECISION.bits()
        )));
    }
    let config = header.config;
    config.validate()?;
    let d = config.embedding_dim;
    let f = config.filters_per_template;

    let emb = cur.values(header.vocab.len() * d, "embeddings")?;
    let embeddings = EmbeddingMatrix {
        matrix: Matrix::from_vec(header.vocab.len(), d, emb)?,
        trainable: config.trainable_embeddings,
    };
    let mut banks = Vec::with_capacity(config.templates.len());
    for t in config.templates.iter() {
        let w = cur.values(f * t.arity() * d, &format!("{t} filters"))?;
        let b = cur.values(f, &format!("{t} biases"))?;
        banks.push(FilterBank {
            template: t.clone(),
            filters: Matrix::from_vec(f, t.arity() * d, w)?,
            biases: b,
        });
    }
    let classes = header.label_names.len();
    let rep = config.representation_len();
    let sw = cur.values(classes * rep, "softmax weights")?;
    let sb = cur.values(classes, "softmax biases")?;
    let params = ModelParams {
        config,
        vocab: header.vocab,
        label_names: header.label_names,
        embeddings,
        banks,
        softmax: SoftmaxLayer {
            weights: Matrix::from_vec(classes, rep, sw)?,
            biases: sb,
        },
    };
    params.check_shapes()?;

    let training = match (header.kind, header.training) {
        (Kind::Model, _) => None,
        (Kind::Training, None) => {
            return Err(Error::Corrupt(
                "training checkpoint without optimizer header".into(),
            ))
        }
        (Kind::Training, Some(th)) => {
            let mut state = AdadeltaState::new(&params, th.rho, th.epsilon)?;
            for (i, acc) in state.accumulators_mut().into_iter().enumerate() {
                let v: Vec<T> = cur.values(acc.len(), &format!("optimizer accumulator {i}"))?;
                if v.iter().any(|x| *x < T::zero()) {
                    return Err(Error::Corrupt("negative optimizer accumulator".into()));
                }
                acc.copy_from_slice(&v);
            }
            Some(TrainingCheckpoint {
                params: params.clone(),
                state,
                epoch: th.epoch,
            })
        }
    };
    if cur.pos != bytes.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after payload",
            bytes.len() - cur.pos
        )));
    }
    Ok((params, training))
}

pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<ModelParams<T>> {
    decode(bytes).map(|(p, _)| p)
}

pub fn training_from_bytes<T: Real>(bytes: &[u8]) -> Result<TrainingCheckpoint<T>> {
    decode(bytes)?
        .1
        .ok_or_else(|| Error::Corrupt("checkpoint carries no optimizer state".into()))
}

pub fn save<T: Real>(params: &ModelParams<T>, path: &Path) -> Result<()> {
    let bytes = to_bytes(params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load<T: Real>(path: &Path) -> Result<ModelParams<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

pub fn save_training<T: Real>(ckpt: &TrainingCheckpoint<T>, path: &Path) -> Result<()> {
    let bytes = training_to_bytes(ckpt)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_training<T: Real>(path: &Path) -> Result<TrainingCheckpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    training_from_bytes(&bytes)
}

/// Reads only the precision recorded in a checkpoint header.
pub fn peek_precision(path: &Path) -> Result<Precision> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(8, "magic")? != MAGIC {
        return Err(Error::Corrupt("bad magic, not a checkpoint".into()));
    }
    cur.take(4, "version")?;
    let hlen = u64::from_le_bytes(cur.take(8, "header length")?.try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(cur.take(hlen, "header")?)
        .map_err(|e| Error::Corrupt(format!("header: {e}")))?;
    serde_json::from_value(header["precision"].clone())
        .map_err(|e| Error::Corrupt(format!("header precision: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::numerics::rng_from_seed;
    use crate::patterns::TemplateSet;

    fn model(templates: &str) -> ModelParams<f64> {
        let config = ModelConfig {
            embedding_dim: 3,
            templates: TemplateSet::parse(templates).unwrap(),
            filters_per_template: 2,
            ..ModelConfig::default()
        };
        let vocab = Vocab::from_words(&["a", "b", "c"], true);
        let mut p = init_params(
            &config,
            vocab,
            vec!["neg".into(), "pos".into()],
            None,
            &mut rng_from_seed(4),
        )
        .unwrap();
        p.softmax.weights.as_mut_slice()[0] = 0.1 + 0.2;
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = model("default");
        let bytes = to_bytes(&p).unwrap();
        let back: ModelParams<f64> = from_bytes(&bytes).unwrap();
        assert_eq!(back, p);
        assert_eq!(to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn round_trip_f32() {
        let config = ModelConfig {
            embedding_dim: 2,
            filters_per_template: 1,
            ..ModelConfig::default()
        };
        let p: ModelParams<f32> = init_params(
            &config,
            Vocab::from_words(&["x"], true),
            vec!["a".into(), "b".into()],
            None,
            &mut rng_from_seed(1),
        )
        .unwrap();
        let bytes = to_bytes(&p).unwrap();
        assert_eq!(from_bytes::<f32>(&bytes).unwrap(), p);
        assert!(matches!(
            from_bytes::<f64>(&bytes),
            Err(Error::ConfigMismatch(_))
        ));
    }

    #[test]
    fn truncation_and_garbage() {
        let bytes = to_bytes(&model("anc:3")).unwrap();
        for cut in [0, 5, 13, 30, bytes.len() - 1] {
            assert!(
                matches!(from_bytes::<f64>(&bytes[..cut]), Err(Error::Corrupt(_))),
                "cut at {cut}"
            );
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(from_bytes::<f64>(&extra), Err(Error::Corrupt(_))));
        let mut bad_version = bytes.clone();
        bad_version[8] = 99;
        assert!(matches!(
            from_bytes::<f64>(&bad_version),
            Err(Error::Corrupt(_))
        ));
        let mut bad_magic = bytes;
        bad_magic[0] = b'X';
        assert!(matches!(
            from_bytes::<f64>(&bad_magic),
            Err(Error::Corrupt(_))
        ));
    }

    #[test]
    fn loaded_model_checks_templates() {
        let p = model("sequential");
        let back: ModelParams<f64> = from_bytes(&to_bytes(&p).unwrap()).unwrap();
        assert!(matches!(
            back.ensure_templates(&TemplateSet::parse("ancestor").unwrap()),
            Err(Error::ConfigMismatch(_))
        ));
    }

    #[test]
    fn training_state_round_trip() {
        let p = model("default");
        let mut state = AdadeltaState::new(&p, 0.95, 1e-6).unwrap();
        state.accumulators_mut()[0][4] = 0.25;
        let ckpt = TrainingCheckpoint {
            params: p,
            state,
            epoch: 7,
        };
        let bytes = training_to_bytes(&ckpt).unwrap();
        let back: TrainingCheckpoint<f64> = training_from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        // A model-only checkpoint has no optimizer state.
        let model_only = to_bytes(&ckpt.params).unwrap();
        assert!(training_from_bytes::<f64>(&model_only).is_err());
        // But a training checkpoint still loads as a model.
        assert_eq!(from_bytes::<f64>(&bytes).unwrap(), ckpt.params);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let p = model("default");
        save(&p, &path).unwrap();
        assert_eq!(peek_precision(&path).unwrap(), Precision::F64);
        assert_eq!(load::<f64>(&path).unwrap(), p);
        assert!(load::<f64>(&dir.path().join("missing")).is_err());
    }
}

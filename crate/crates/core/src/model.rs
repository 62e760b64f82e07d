//! The dependency-based CNN: window assembly, per-template filter banks,
//! max-over-tree pooling, dropout on the pooled vector and a softmax layer,
//! with hand-written backward to every parameter group.

use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::embeddings::{EmbeddingMatrix, Vocab, PAD, ROOT};
use crate::error::{Error, Result};
use crate::ingest::DepSentence;
use crate::numerics::{
    add_into, axpy, dot, dropout_mask, grad_check_piecewise, max_pool, rng_from_seed, softmax,
    softmax_xent, Activation, GradCheckReport, Matrix, Real, Rng,
};
use crate::patterns::{default_templates, Family, Slot, TemplateSet, WindowTemplate};

/// Half-width of the uniform filter initialization.
pub const FILTER_INIT_RANGE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub templates: TemplateSet,
    pub filters_per_template: usize,
    pub activation: Activation,
    /// Dropout rate on the pooled representation.
    pub dropout: f64,
    pub trainable_embeddings: bool,
    /// Optional L2 cap on each softmax weight row, enforced after every step.
    pub max_norm: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding_dim: 300,
            templates: default_templates(),
            filters_per_template: 100,
            activation: Activation::Relu,
            dropout: 0.5,
            trainable_embeddings: true,
            max_norm: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::InvalidArgument("embedding_dim must be ≥ 1".into()));
        }
        if self.filters_per_template == 0 {
            return Err(Error::InvalidArgument(
                "filters_per_template must be ≥ 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if let Some(s) = self.max_norm {
            if s.is_nan() || s <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "max_norm must be positive, got {s}"
                )));
            }
        }
        Ok(())
    }

    /// Length of the pooled sentence representation.
    pub fn representation_len(&self) -> usize {
        self.templates.len() * self.filters_per_template
    }

    /// Pooled-vector segment lengths `[ancestors, siblings, sequential]`.
    pub fn segments(&self) -> [(Family, usize); 3] {
        self.templates
            .family_counts()
            .map(|(f, n)| (f, n * self.filters_per_template))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank<T> {
    pub template: WindowTemplate,
    /// One filter per row, `arity · d` wide.
    pub filters: Matrix<T>,
    pub biases: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxLayer<T> {
    /// `classes × representation_len`.
    pub weights: Matrix<T>,
    pub biases: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub label_names: Vec<String>,
    pub embeddings: EmbeddingMatrix<T>,
    pub banks: Vec<FilterBank<T>>,
    pub softmax: SoftmaxLayer<T>,
}

/// Pooled representation with its family layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceRep<T> {
    pub values: Vec<T>,
    pub segments: [(Family, usize); 3],
}

/// A sentence resolved to embedding rows for every template window.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub len: usize,
    /// Per template, `len · arity` entries; `None` is a zero-pad slot.
    pub windows: Vec<Vec<Option<usize>>>,
    pub label: Option<usize>,
}

pub enum Mode<'a> {
    Train(&'a mut Rng),
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    pub train: bool,
    /// Per template, `len × filters` pre-activations.
    pub pre_activations: Vec<Matrix<T>>,
    /// Per template, `len × filters` activations; column `f` is filter `f`'s
    /// feature map.
    pub feature_maps: Vec<Matrix<T>>,
    /// Per template, argmax word (0-based) of each filter.
    pub argmax: Vec<Vec<usize>>,
    pub pooled: Vec<T>,
    pub mask: Vec<T>,
    pub hidden: Vec<T>,
    pub logits: Vec<T>,
    pub probs: Vec<T>,
    pub loss: Option<T>,
    dlogits: Option<Vec<T>>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn feature_map(&self, template: usize, filter: usize) -> Vec<T> {
        let m = &self.feature_maps[template];
        (0..m.rows()).map(|r| m.get(r, filter)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankGradient<T> {
    pub filters: Matrix<T>,
    pub biases: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    /// Sparse by embedding row; PAD never appears.
    pub embeddings: BTreeMap<usize, Vec<T>>,
    pub banks: Vec<BankGradient<T>>,
    pub softmax_weights: Matrix<T>,
    pub softmax_biases: Vec<T>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(params: &ModelParams<T>) -> Self {
        Gradients {
            embeddings: BTreeMap::new(),
            banks: params
                .banks
                .iter()
                .map(|b| BankGradient {
                    filters: Matrix::zeros(b.filters.rows(), b.filters.cols()),
                    biases: vec![T::zero(); b.biases.len()],
                })
                .collect(),
            softmax_weights: Matrix::zeros(
                params.softmax.weights.rows(),
                params.softmax.weights.cols(),
            ),
            softmax_biases: vec![T::zero(); params.softmax.biases.len()],
        }
    }

    pub fn accumulate(&mut self, other: &Gradients<T>) {
        for (row, g) in &other.embeddings {
            match self.embeddings.get_mut(row) {
                Some(acc) => add_into(acc, g),
                None => {
                    self.embeddings.insert(*row, g.clone());
                }
            }
        }
        for (a, b) in self.banks.iter_mut().zip(&other.banks) {
            a.filters.add_assign(&b.filters);
            add_into(&mut a.biases, &b.biases);
        }
        self.softmax_weights.add_assign(&other.softmax_weights);
        add_into(&mut self.softmax_biases, &other.softmax_biases);
    }

    /// Dense flat vector in [`ModelParams::flatten`] order.
    pub fn flatten(&self, params: &ModelParams<T>) -> Vec<f64> {
        let d = params.embeddings.dim();
        let mut out = vec![0.0; params.embeddings.rows() * d];
        for (row, g) in &self.embeddings {
            for (k, v) in g.iter().enumerate() {
                out[row * d + k] = v.f64();
            }
        }
        for b in &self.banks {
            out.extend(b.filters.as_slice().iter().map(|v| v.f64()));
            out.extend(b.biases.iter().map(|v| v.f64()));
        }
        out.extend(self.softmax_weights.as_slice().iter().map(|v| v.f64()));
        out.extend(self.softmax_biases.iter().map(|v| v.f64()));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings.values().flatten().all(|v| v.is_finite())
            && self
                .banks
                .iter()
                .all(|b| b.filters.is_finite() && b.biases.iter().all(|v| v.is_finite()))
            && self.softmax_weights.is_finite()
            && self.softmax_biases.iter().all(|v| v.is_finite())
    }
}

/// Builds a model with filters uniform on `[-0.01, 0.01]`, zero biases and a
/// zero softmax layer. Without `embeddings` every non-PAD row is random.
pub fn init_params<T: Real>(
    config: &ModelConfig,
    vocab: Vocab,
    label_names: Vec<String>,
    embeddings: Option<EmbeddingMatrix<T>>,
    rng: &mut Rng,
) -> Result<ModelParams<T>> {
    config.validate()?;
    if label_names.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {}",
            label_names.len()
        )));
    }
    let d = config.embedding_dim;
    let mut embeddings = match embeddings {
        Some(e) => e,
        None => EmbeddingMatrix::random(&vocab, d, rng.next_u64())?,
    };
    if embeddings.matrix.shape() != (vocab.len(), d) {
        return Err(Error::Shape(format!(
            "embedding matrix is {:?}, expected {:?}",
            embeddings.matrix.shape(),
            (vocab.len(), d)
        )));
    }
    embeddings.trainable = config.trainable_embeddings;
    embeddings.matrix.row_mut(PAD).fill(T::zero());

    let f = config.filters_per_template;
    let banks = config
        .templates
        .iter()
        .map(|t| FilterBank {
            template: t.clone(),
            filters: Matrix::uniform(f, t.arity() * d, -FILTER_INIT_RANGE, FILTER_INIT_RANGE, rng),
            biases: vec![T::zero(); f],
        })
        .collect();
    let classes = label_names.len();
    Ok(ModelParams {
        softmax: SoftmaxLayer {
            weights: Matrix::zeros(classes, config.representation_len()),
            biases: vec![T::zero(); classes],
        },
        config: config.clone(),
        vocab,
        label_names,
        embeddings,
        banks,
    })
}

impl<T: Real> ModelParams<T> {
    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    /// Checks every shape against the config, vocab and label space.
    pub fn check_shapes(&self) -> Result<()> {
        let d = self.config.embedding_dim;
        let mismatch = |what: &str| Err(Error::Shape(format!("{what} inconsistent with config")));
        if self.embeddings.matrix.shape() != (self.vocab.len(), d) {
            return mismatch("embedding matrix");
        }
        if self.banks.len() != self.config.templates.len() {
            return mismatch("filter bank count");
        }
        for (bank, t) in self.banks.iter().zip(self.config.templates.iter()) {
            if &bank.template != t
                || bank.filters.shape() != (self.config.filters_per_template, t.arity() * d)
                || bank.biases.len() != self.config.filters_per_template
            {
                return mismatch(&format!("filter bank {t}"));
            }
        }
        let rep = self.config.representation_len();
        if self.softmax.weights.shape() != (self.num_classes(), rep)
            || self.softmax.biases.len() != self.num_classes()
        {
            return mismatch("softmax layer");
        }
        Ok(())
    }

    /// Errors unless this model was built with exactly `templates`.
    pub fn ensure_templates(&self, templates: &TemplateSet) -> Result<()> {
        if &self.config.templates != templates {
            return Err(Error::ConfigMismatch(format!(
                "model was trained with templates {} but {} were requested",
                self.config.templates, templates
            )));
        }
        Ok(())
    }

    pub fn prepare(&self, s: &DepSentence) -> Prepared {
        let rows: Vec<usize> = s
            .tokens
            .iter()
            .map(|t| self.vocab.lookup(&t.form))
            .collect();
        let windows = self
            .config
            .templates
            .iter()
            .map(|t| {
                (1..=s.len())
                    .flat_map(|i| t.window(s, i))
                    .map(|slot| match slot {
                        Slot::Word(j) => Some(rows[j - 1]),
                        Slot::Root => Some(ROOT),
                        Slot::Zero => None,
                    })
                    .collect()
            })
            .collect();
        Prepared {
            len: s.len(),
            windows,
            label: s.label,
        }
    }

    fn fill_window(&self, slots: &[Option<usize>], x: &mut [T]) {
        let d = self.dim();
        for (k, slot) in slots.iter().enumerate() {
            let dst = &mut x[k * d..(k + 1) * d];
            match slot {
                Some(row) => dst.copy_from_slice(self.embeddings.row(*row)),
                None => dst.fill(T::zero()),
            }
        }
    }

    pub fn forward(&self, s: &DepSentence, mode: Mode<'_>) -> Result<ForwardTrace<T>> {
        self.forward_prepared(&self.prepare(s), mode)
    }

    pub fn forward_prepared(&self, p: &Prepared, mode: Mode<'_>) -> Result<ForwardTrace<T>> {
        if p.len == 0 {
            return Err(Error::InvalidArgument(
                "cannot classify an empty sentence".into(),
            ));
        }
        let act = self.config.activation;
        let mut pre_activations = Vec::with_capacity(self.banks.len());
        let mut feature_maps = Vec::with_capacity(self.banks.len());
        let mut argmax = Vec::with_capacity(self.banks.len());
        let mut pooled = Vec::with_capacity(self.config.representation_len());

        for (bank, windows) in self.banks.iter().zip(&p.windows) {
            let n = bank.template.arity();
            let nf = bank.filters.rows();
            let mut pre = Matrix::zeros(p.len, nf);
            let mut maps = Matrix::zeros(p.len, nf);
            let mut x = vec![T::zero(); bank.filters.cols()];
            for w in 0..p.len {
                self.fill_window(&windows[w * n..(w + 1) * n], &mut x);
                for f in 0..nf {
                    let z = dot(bank.filters.row(f), &x) + bank.biases[f];
                    pre.set(w, f, z);
                    maps.set(w, f, act.apply(z));
                }
            }
            let mut arg = Vec::with_capacity(nf);
            let mut column = vec![T::zero(); p.len];
            for f in 0..nf {
                for (w, c) in column.iter_mut().enumerate() {
                    *c = maps.get(w, f);
                }
                let (v, i) = max_pool(&column)?;
                pooled.push(v);
                arg.push(i);
            }
            pre_activations.push(pre);
            feature_maps.push(maps);
            argmax.push(arg);
        }

        let train = matches!(mode, Mode::Train(_));
        let mask = match mode {
            Mode::Train(rng) => dropout_mask(pooled.len(), self.config.dropout, Some(rng))?,
            Mode::Eval => vec![T::one(); pooled.len()],
        };
        let hidden: Vec<T> = pooled.iter().zip(&mask).map(|(&c, &m)| c * m).collect();
        let logits = self.softmax.weights.matvec(&hidden, &self.softmax.biases);
        let (probs, loss, dlogits) = match p.label {
            Some(gold) => {
                let out = softmax_xent(&logits, gold)?;
                (out.probs, Some(out.loss), Some(out.dlogits))
            }
            None => (softmax(&logits), None, None),
        };
        Ok(ForwardTrace {
            train,
            pre_activations,
            feature_maps,
            argmax,
            pooled,
            mask,
            hidden,
            logits,
            probs,
            loss,
            dlogits,
        })
    }

    /// Gradient of the trace's loss with respect to every parameter.
    pub fn backward(&self, p: &Prepared, trace: &ForwardTrace<T>) -> Result<Gradients<T>> {
        if !trace.train {
            return Err(Error::InvalidArgument(
                "backward needs a trace produced in train mode".into(),
            ));
        }
        let dlogits = trace
            .dlogits
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("backward needs a labeled sentence".into()))?;
        let mut grads = Gradients::zeros_like(self);
        grads.softmax_weights.add_outer(dlogits, &trace.hidden);
        grads.softmax_biases.copy_from_slice(dlogits);

        let dhidden = self.softmax.weights.transpose_matvec(dlogits);
        let dpooled: Vec<T> = dhidden
            .iter()
            .zip(&trace.mask)
            .map(|(&g, &m)| g * m)
            .collect();

        let d = self.dim();
        let act = self.config.activation;
        let trainable = self.embeddings.trainable;
        let mut offset = 0;
        for (t, bank) in self.banks.iter().enumerate() {
            let n = bank.template.arity();
            let windows = &p.windows[t];
            let mut x = vec![T::zero(); bank.filters.cols()];
            let bank_grad = &mut grads.banks[t];
            for f in 0..bank.filters.rows() {
                let w = trace.argmax[t][f];
                let dz = dpooled[offset + f] * act.derivative(trace.pre_activations[t].get(w, f));
                if dz == T::zero() {
                    continue;
                }
                let slots = &windows[w * n..(w + 1) * n];
                self.fill_window(slots, &mut x);
                axpy(dz, &x, bank_grad.filters.row_mut(f));
                bank_grad.biases[f] += dz;
                if !trainable {
                    continue;
                }
                let filter = bank.filters.row(f);
                for (k, slot) in slots.iter().enumerate() {
                    let Some(row) = *slot else { continue };
                    if row == PAD {
                        continue;
                    }
                    let g = grads
                        .embeddings
                        .entry(row)
                        .or_insert_with(|| vec![T::zero(); d]);
                    axpy(dz, &filter[k * d..(k + 1) * d], g);
                }
            }
            offset += bank.filters.rows();
        }
        Ok(grads)
    }

    /// Loss and gradients for one labeled sentence in train mode.
    pub fn loss_and_gradients(&self, p: &Prepared, rng: &mut Rng) -> Result<(T, Gradients<T>)> {
        let trace = self.forward_prepared(p, Mode::Train(rng))?;
        let grads = self.backward(p, &trace)?;
        Ok((trace.loss.expect("labeled"), grads))
    }

    /// Eval-mode class and distribution; ties go to the lowest class index.
    pub fn predict(&self, s: &DepSentence) -> Result<(usize, Vec<T>)> {
        self.predict_prepared(&self.prepare(s))
    }

    pub fn predict_prepared(&self, p: &Prepared) -> Result<(usize, Vec<T>)> {
        let trace = self.forward_prepared(p, Mode::Eval)?;
        let (_, class) = max_pool(&trace.probs)?;
        Ok((class, trace.probs))
    }

    /// Eval-mode pooled representation.
    pub fn represent(&self, s: &DepSentence) -> Result<SentenceRep<T>> {
        let trace = self.forward(s, Mode::Eval)?;
        Ok(SentenceRep {
            values: trace.pooled,
            segments: self.config.segments(),
        })
    }

    /// Rescales softmax rows whose L2 norm exceeds `config.max_norm`.
    pub fn apply_max_norm(&mut self) {
        let Some(cap) = self.config.max_norm else {
            return;
        };
        let cap = T::of(cap);
        for r in 0..self.softmax.weights.rows() {
            let row = self.softmax.weights.row_mut(r);
            let norm = dot(row, row).sqrt();
            if norm > cap {
                let scale = cap / norm;
                row.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }

    /// Named parameter groups in a fixed order: embeddings, each bank's filters
    /// and biases, softmax weights and biases.
    pub fn groups(&self) -> Vec<(String, &[T])> {
        let mut out: Vec<(String, &[T])> =
            vec![("embeddings".into(), self.embeddings.matrix.as_slice())];
        for b in &self.banks {
            out.push((format!("{}.filters", b.template), b.filters.as_slice()));
            out.push((format!("{}.biases", b.template), &b.biases));
        }
        out.push(("softmax.weights".into(), self.softmax.weights.as_slice()));
        out.push(("softmax.biases".into(), &self.softmax.biases));
        out
    }

    pub fn groups_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![self.embeddings.matrix.as_mut_slice()];
        for b in &mut self.banks {
            out.push(b.filters.as_mut_slice());
            out.push(&mut b.biases);
        }
        out.push(self.softmax.weights.as_mut_slice());
        out.push(&mut self.softmax.biases);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.groups().iter().map(|(_, g)| g.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.groups()
            .into_iter()
            .flat_map(|(_, g)| g.iter().map(|v| v.f64()))
            .collect()
    }

    pub fn unflatten(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for group in self.groups_mut() {
            for v in group {
                *v = T::of(*it.next().expect("flat vector long enough"));
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.groups()
            .iter()
            .all(|(_, g)| g.iter().all(|v| v.is_finite()))
    }
}

/// Region of the piecewise-linear loss surface: pooling argmaxes and whether
/// each pooled pre-activation is positive.
fn region_signature<T: Real>(trace: &ForwardTrace<T>) -> Vec<(usize, bool)> {
    trace
        .argmax
        .iter()
        .zip(&trace.pre_activations)
        .flat_map(|(args, pre)| {
            args.iter()
                .enumerate()
                .map(move |(f, &w)| (w, pre.get(w, f) > T::zero()))
        })
        .collect()
}

/// Central-difference check of the full sentence loss against [`ModelParams::backward`].
///
/// The dropout mask is drawn from `seed` on every evaluation so all probes
/// see the same mask. `coords` are indices into [`ModelParams::flatten`];
/// `None` checks every parameter.
pub fn check_gradients(
    params: &ModelParams<f64>,
    sentence: &DepSentence,
    seed: u64,
    h: f64,
    coords: Option<&[usize]>,
) -> Result<GradCheckReport> {
    let prepared = params.prepare(sentence);
    let (_, grads) = params.loss_and_gradients(&prepared, &mut rng_from_seed(seed))?;
    let analytic = grads.flatten(params);
    let theta = params.flatten();
    let mut probe = params.clone();
    let f = |flat: &[f64]| {
        probe.unflatten(flat);
        let trace = probe
            .forward_prepared(&prepared, Mode::Train(&mut rng_from_seed(seed)))
            .expect("forward on a prepared sentence");
        (trace.loss.expect("labeled"), region_signature(&trace))
    };
    match coords {
        Some(c) => grad_check_piecewise(f, &theta, &analytic, c.iter().copied(), h),
        None => grad_check_piecewise(f, &theta, &analytic, 0..theta.len(), h),
    }
}

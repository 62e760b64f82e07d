//! Adadelta over shuffled mini-batches, dev-set early stopping,
//! cross-validation and evaluation reports.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::TrainingCheckpoint;
use crate::embeddings::PAD;
use crate::error::{Error, Result};
use crate::ingest::{dev_split, kfold_split, Dataset, DepSentence};
use crate::model::{Gradients, ModelParams, Prepared};
use crate::numerics::{rng_from_seed, Real, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    /// Adadelta decay.
    pub rho: f64,
    /// Adadelta smoothing term.
    pub epsilon: f64,
    pub seed: u64,
    /// Share of the training side held out for early stopping when no dev
    /// set is given.
    pub dev_fraction: f64,
    /// Compute per-example gradients of a batch on the rayon pool.
    pub parallel: bool,
    /// Sum per-example gradients in example order (bit-reproducible).
    pub ordered_reduction: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 50,
            max_epochs: 100,
            patience: 10,
            rho: 0.95,
            epsilon: 1e-6,
            seed: 1,
            dev_fraction: 0.1,
            parallel: true,
            ordered_reduction: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be ≥ 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be ≥ 1".into());
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho must be in (0, 1), got {}", self.rho));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return bad(format!(
                "dev_fraction must be in (0, 1), got {}",
                self.dev_fraction
            ));
        }
        Ok(())
    }
}

/// One Adadelta update of `x` in place:
///
/// ```text
/// E[g²]  ← ρ E[g²] + (1 − ρ) g²
/// Δx     = −(√(E[Δx²] + ε) / √(E[g²] + ε)) g
/// E[Δx²] ← ρ E[Δx²] + (1 − ρ) Δx²
/// x      ← x + Δx
/// ```
pub fn adadelta_update<T: Real>(
    x: &mut [T],
    g: &[T],
    grad_sq: &mut [T],
    delta_sq: &mut [T],
    rho: T,
    eps: T,
) {
    let one_minus = T::one() - rho;
    for (((x, &g), eg), ed) in x.iter_mut().zip(g).zip(grad_sq).zip(delta_sq) {
        *eg = rho * *eg + one_minus * g * g;
        let dx = -((*ed + eps).sqrt() / (*eg + eps).sqrt()) * g;
        *ed = rho * *ed + one_minus * dx * dx;
        *x += dx;
    }
}

/// Running averages `E[g²]` and `E[Δx²]` for every parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdadeltaState<T> {
    pub rho: f64,
    pub epsilon: f64,
    grad_sq: Vec<Vec<T>>,
    delta_sq: Vec<Vec<T>>,
}

impl<T: Real> AdadeltaState<T> {
    pub fn new(params: &ModelParams<T>, rho: f64, epsilon: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) || epsilon.is_nan() || epsilon <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "Adadelta needs 0 < rho < 1 and epsilon > 0, got rho={rho}, epsilon={epsilon}"
            )));
        }
        let zeros: Vec<Vec<T>> = params
            .groups()
            .iter()
            .map(|(_, g)| vec![T::zero(); g.len()])
            .collect();
        Ok(AdadeltaState {
            rho,
            epsilon,
            grad_sq: zeros.clone(),
            delta_sq: zeros,
        })
    }

    /// Accumulators interleaved per group: `E[g²]`, `E[Δx²]`, …
    pub fn accumulators(&self) -> Vec<&[T]> {
        self.grad_sq
            .iter()
            .zip(&self.delta_sq)
            .flat_map(|(a, b)| [a.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn accumulators_mut(&mut self) -> Vec<&mut [T]> {
        self.grad_sq
            .iter_mut()
            .zip(self.delta_sq.iter_mut())
            .flat_map(|(a, b)| [a.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }

    pub fn check_against(&self, params: &ModelParams<T>) -> Result<()> {
        let groups = params.groups();
        let ok = groups.len() == self.grad_sq.len()
            && groups
                .iter()
                .zip(self.grad_sq.iter().zip(&self.delta_sq))
                .all(|((_, g), (a, b))| g.len() == a.len() && g.len() == b.len());
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(
                "optimizer state does not match the parameters".into(),
            ))
        }
    }

    /// Applies one update from summed batch gradients. The PAD row and frozen
    /// embeddings are left untouched.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &Gradients<T>) -> Result<()> {
        self.check_against(params)?;
        check_finite(params, grads)?;
        let rho = T::of(self.rho);
        let eps = T::of(self.epsilon);
        let trainable = params.embeddings.trainable;
        let d = params.embeddings.dim();

        let mut dense: Vec<&[T]> = Vec::with_capacity(self.grad_sq.len() - 1);
        for b in &grads.banks {
            dense.push(b.filters.as_slice());
            dense.push(&b.biases);
        }
        dense.push(grads.softmax_weights.as_slice());
        dense.push(&grads.softmax_biases);

        let mut groups = params.groups_mut().into_iter();
        let emb = groups.next().expect("embedding group");
        if trainable {
            let zeros = vec![T::zero(); d];
            let (eg, ed) = (&mut self.grad_sq[0], &mut self.delta_sq[0]);
            for row in (0..emb.len() / d).filter(|&r| r != PAD) {
                let g = grads.embeddings.get(&row).unwrap_or(&zeros);
                let span = row * d..(row + 1) * d;
                adadelta_update(
                    &mut emb[span.clone()],
                    g,
                    &mut eg[span.clone()],
                    &mut ed[span],
                    rho,
                    eps,
                );
            }
        }
        for (i, (x, g)) in groups.zip(dense).enumerate() {
            adadelta_update(
                x,
                g,
                &mut self.grad_sq[i + 1],
                &mut self.delta_sq[i + 1],
                rho,
                eps,
            );
        }
        params.apply_max_norm();
        Ok(())
    }
}

fn check_finite<T: Real>(params: &ModelParams<T>, grads: &Gradients<T>) -> Result<()> {
    if grads.embeddings.values().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient of embeddings".into()));
    }
    for (bank, g) in params.banks.iter().zip(&grads.banks) {
        if !g.filters.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of {}.filters",
                bank.template
            )));
        }
        if g.biases.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of {}.biases",
                bank.template
            )));
        }
    }
    if !grads.softmax_weights.is_finite() {
        return Err(Error::NonFinite("gradient of softmax.weights".into()));
    }
    if grads.softmax_biases.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient of softmax.biases".into()));
    }
    Ok(())
}

pub fn adadelta_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &Gradients<T>,
    state: &mut AdadeltaState<T>,
) -> Result<()> {
    state.step(params, grads)
}

/// Per-example dropout stream: independent of batch scheduling.
fn example_rng(batch_seed: u64, position: usize) -> Rng {
    let mut rng = rng_from_seed(batch_seed);
    rng.set_stream(position as u64);
    rng
}

fn epoch_rng(seed: u64, epoch: usize) -> Rng {
    let mut rng = rng_from_seed(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// One pass over `train` in shuffled mini-batches, one Adadelta step per
/// batch on the summed gradients. Returns the mean per-example loss.
pub fn train_epoch<T: Real>(
    params: &mut ModelParams<T>,
    state: &mut AdadeltaState<T>,
    train: &[Prepared],
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);

    let mut total = 0.0;
    for batch in order.chunks(config.batch_size) {
        let batch_seed = rng.next_u64();
        let model = &*params;
        let one = |(pos, &idx): (usize, &usize)| -> Result<(f64, Gradients<T>)> {
            let (loss, grads) =
                model.loss_and_gradients(&train[idx], &mut example_rng(batch_seed, pos))?;
            Ok((loss.f64(), grads))
        };
        let (loss, grads) = if config.parallel && !config.ordered_reduction {
            batch
                .par_iter()
                .enumerate()
                .map(one)
                .try_reduce_with(|(la, mut ga), (lb, gb)| {
                    ga.accumulate(&gb);
                    Ok((la + lb, ga))
                })
                .expect("batch is non-empty")?
        } else {
            let per_example: Vec<(f64, Gradients<T>)> = if config.parallel {
                batch
                    .par_iter()
                    .enumerate()
                    .map(one)
                    .collect::<Result<_>>()?
            } else {
                batch.iter().enumerate().map(one).collect::<Result<_>>()?
            };
            let mut sum = Gradients::zeros_like(params);
            let mut loss = 0.0;
            for (l, g) in &per_example {
                loss += l;
                sum.accumulate(g);
            }
            (loss, sum)
        };
        total += loss;
        state.step(params, &grads)?;
    }
    Ok(total / train.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,dev_acc\n");
    for r in history {
        let _ = writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.dev_accuracy);
    }
    out
}

/// Patience-based stopping on a score to maximize. Ties keep the earliest
/// epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(f64, usize)>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
        }
    }

    /// Records `score` for `epoch`; returns (new best, stop now).
    pub fn observe(&mut self, epoch: usize, score: f64) -> (bool, bool) {
        let improved = self.best.is_none_or(|(b, _)| score > b);
        if improved {
            self.best = Some((score, epoch));
        }
        let best_epoch = self.best.map_or(epoch, |(_, e)| e);
        (improved, epoch - best_epoch >= self.patience)
    }

    pub fn best(&self) -> Option<(f64, usize)> {
        self.best
    }
}

#[derive(Debug, Clone)]
pub struct FitResult<T> {
    /// Snapshot with the best dev accuracy (earliest on ties).
    pub best: ModelParams<T>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    /// State after the final epoch, for resuming.
    pub last: TrainingCheckpoint<T>,
}

/// Trains with early stopping on dev accuracy.
pub fn fit<T: Real>(
    params: ModelParams<T>,
    train: &[&DepSentence],
    dev: &[&DepSentence],
    config: &TrainConfig,
) -> Result<FitResult<T>> {
    let state = AdadeltaState::new(&params, config.rho, config.epsilon)?;
    fit_resume(
        TrainingCheckpoint {
            params,
            state,
            epoch: 0,
        },
        train,
        dev,
        config,
    )
}

/// Continues training from a checkpoint. Epoch `e` always draws from the same
/// random stream, so resuming reproduces an uninterrupted run.
pub fn fit_resume<T: Real>(
    start: TrainingCheckpoint<T>,
    train: &[&DepSentence],
    dev: &[&DepSentence],
    config: &TrainConfig,
) -> Result<FitResult<T>> {
    config.validate()?;
    if dev.is_empty() {
        return Err(Error::InvalidArgument("development set is empty".into()));
    }
    let TrainingCheckpoint {
        mut params,
        mut state,
        epoch: first,
    } = start;
    let train_prepared: Vec<Prepared> = train.iter().map(|s| params.prepare(s)).collect();
    if train_prepared.iter().any(|p| p.label.is_none()) {
        return Err(Error::InvalidArgument(
            "training sentences must be labeled".into(),
        ));
    }
    let dev_prepared: Vec<Prepared> = dev.iter().map(|s| params.prepare(s)).collect();

    let mut history = Vec::new();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_params = params.clone();
    for epoch in first + 1..=config.max_epochs {
        let mut rng = epoch_rng(config.seed, epoch);
        let loss = train_epoch(&mut params, &mut state, &train_prepared, config, &mut rng)?;
        let dev_accuracy = accuracy(&params, &dev_prepared, config.parallel)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss,
            dev_accuracy,
        });
        let (improved, stop) = stopper.observe(epoch, dev_accuracy);
        if improved {
            best_params = params.clone();
        }
        if stop {
            break;
        }
    }
    let last_epoch = history.last().map_or(first, |r| r.epoch);
    let best_epoch = stopper.best().map_or(first, |(_, e)| e);
    Ok(FitResult {
        best: best_params,
        best_epoch,
        history,
        last: TrainingCheckpoint {
            params,
            state,
            epoch: last_epoch,
        },
    })
}

fn accuracy<T: Real>(params: &ModelParams<T>, data: &[Prepared], parallel: bool) -> Result<f64> {
    let hit = |p: &Prepared| -> Result<bool> {
        let (class, _) = params.predict_prepared(p)?;
        Ok(Some(class) == p.label)
    };
    let hits: Vec<bool> = if parallel {
        data.par_iter().map(hit).collect::<Result<_>>()?
    } else {
        data.iter().map(hit).collect::<Result<_>>()?
    };
    Ok(hits.iter().filter(|&&h| h).count() as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Misclassified {
    pub source_id: String,
    pub text: String,
    pub gold: String,
    pub predicted: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub total: usize,
    pub label_names: Vec<String>,
    /// `confusion[gold][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Ordered by source id.
    pub misclassified: Vec<Misclassified>,
}

impl EvalReport {
    pub fn correct(&self) -> usize {
        (0..self.confusion.len())
            .map(|i| self.confusion[i][i])
            .sum()
    }

    /// Dump of errors as `source_id`, sentence, gold and predicted lines.
    pub fn error_dump(&self) -> String {
        let mut out = String::new();
        for m in &self.misclassified {
            let _ = writeln!(
                out,
                "[{}] {}\n  gold: {}  predicted: {}\n",
                m.source_id, m.text, m.gold, m.predicted
            );
        }
        out
    }
}

fn gold_of(s: &DepSentence, classes: usize) -> Result<usize> {
    match s.label {
        Some(l) if l < classes => Ok(l),
        Some(l) => Err(Error::UnknownLabel {
            label: format!("id {l} (model has {classes} classes)"),
        }),
        None => Err(Error::MissingLabel {
            source_id: s.source_id.clone(),
        }),
    }
}

/// Predicted class of each sentence, in input order.
pub fn predict_all<T: Real>(
    params: &ModelParams<T>,
    sentences: &[&DepSentence],
) -> Result<Vec<(usize, Vec<T>)>> {
    sentences.par_iter().map(|s| params.predict(s)).collect()
}

pub fn evaluate<T: Real>(params: &ModelParams<T>, test: &[&DepSentence]) -> Result<EvalReport> {
    let classes = params.num_classes();
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let golds: Vec<usize> = test
        .iter()
        .map(|s| gold_of(s, classes))
        .collect::<Result<_>>()?;
    let predictions = predict_all(params, test)?;
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut misclassified = Vec::new();
    for ((s, &gold), (pred, _)) in test.iter().zip(&golds).zip(&predictions) {
        confusion[gold][*pred] += 1;
        if gold != *pred {
            misclassified.push(Misclassified {
                source_id: s.source_id.clone(),
                text: s.text(),
                gold: params.label_names[gold].clone(),
                predicted: params.label_names[*pred].clone(),
            });
        }
    }
    misclassified.sort_by(|a, b| a.source_id.cmp(&b.source_id));
    let correct: usize = (0..classes).map(|i| confusion[i][i]).sum();
    Ok(EvalReport {
        accuracy: correct as f64 / test.len() as f64,
        total: test.len(),
        label_names: params.label_names.clone(),
        confusion,
        misclassified,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    /// Unweighted mean of fold accuracies.
    pub mean_accuracy: f64,
}

/// k-fold cross-validation: each fold's training side is split again for
/// early stopping, a fresh model from `init(fold)` is fit, and the held-out
/// fold is evaluated.
pub fn cross_validate<T, F>(
    dataset: &Dataset,
    k: usize,
    config: &TrainConfig,
    init: F,
) -> Result<CvReport>
where
    T: Real,
    F: Fn(usize) -> Result<ModelParams<T>> + Sync,
{
    let folds = kfold_split(dataset.len(), k, config.seed)?;
    let run = |(i, fold): (usize, &crate::ingest::Fold)| -> Result<FoldReport> {
        let (train_idx, dev_idx) = dev_split(
            &fold.train,
            config.dev_fraction,
            config.seed.wrapping_add(i as u64),
        )?;
        let fold_config = TrainConfig {
            seed: config.seed.wrapping_add(i as u64),
            ..config.clone()
        };
        let result = fit(
            init(i)?,
            &dataset.select(&train_idx),
            &dataset.select(&dev_idx),
            &fold_config,
        )?;
        let report = evaluate(&result.best, &dataset.select(&fold.test))?;
        Ok(FoldReport {
            fold: i,
            train_size: train_idx.len(),
            dev_size: dev_idx.len(),
            best_epoch: result.best_epoch,
            history: result.history,
            report,
        })
    };
    let reports: Vec<FoldReport> = if config.parallel {
        folds
            .par_iter()
            .enumerate()
            .map(run)
            .collect::<Result<_>>()?
    } else {
        folds.iter().enumerate().map(run).collect::<Result<_>>()?
    };
    let mean_accuracy =
        reports.iter().map(|r| r.report.accuracy).sum::<f64>() / reports.len() as f64;
    Ok(CvReport {
        folds: reports,
        mean_accuracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub source_id: String,
    pub text: String,
    pub gold: String,
    pub predicted_a: String,
    pub predicted_b: String,
}

/// Sentences where two models disagree in correctness.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Disagreements {
    pub a_right_b_wrong: Vec<Comparison>,
    pub b_right_a_wrong: Vec<Comparison>,
    pub both_wrong: Vec<Comparison>,
}

pub fn compare_models<T: Real>(
    a: &ModelParams<T>,
    b: &ModelParams<T>,
    sentences: &[&DepSentence],
) -> Result<Disagreements> {
    if a.label_names != b.label_names {
        return Err(Error::ConfigMismatch(format!(
            "models have different label spaces: {:?} vs {:?}",
            a.label_names, b.label_names
        )));
    }
    let classes = a.num_classes();
    let pa = predict_all(a, sentences)?;
    let pb = predict_all(b, sentences)?;
    let mut out = Disagreements::default();
    for ((s, (ca, _)), (cb, _)) in sentences.iter().zip(&pa).zip(&pb) {
        let gold = gold_of(s, classes)?;
        let row = Comparison {
            source_id: s.source_id.clone(),
            text: s.text(),
            gold: a.label_names[gold].clone(),
            predicted_a: a.label_names[*ca].clone(),
            predicted_b: a.label_names[*cb].clone(),
        };
        match (*ca == gold, *cb == gold) {
            (true, false) => out.a_right_b_wrong.push(row),
            (false, true) => out.b_right_a_wrong.push(row),
            (false, false) => out.both_wrong.push(row),
            (true, true) => {}
        }
    }
    Ok(out)
}

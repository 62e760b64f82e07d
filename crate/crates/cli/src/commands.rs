use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use dcnn::checkpoint::{self, TrainingCheckpoint};
use dcnn::embeddings::{load_pretrained, EmbeddingMatrix, Vocab};
use dcnn::ingest::{dev_split, read_conllu, read_labels, LabelLevel, ReadOptions};
use dcnn::numerics::rng_from_seed;
use dcnn::patterns::describe_window;
use dcnn::training::{
    compare_models, cross_validate, fit_resume, history_csv, AdadeltaState, Comparison, EvalReport,
};
use dcnn::{
    evaluate, init_params, Dataset, DepSentence, ModelParams, Precision, Real, TemplateSet,
};

use crate::config::{RunConfig, RunMode};

fn read_dataset(data: &Path, labels: Option<&Path>, opts: &ReadOptions) -> Result<Dataset> {
    let text = fs::read_to_string(data).with_context(|| format!("reading {}", data.display()))?;
    let sidecar = labels
        .map(|p| {
            fs::read_to_string(p)
                .map(|t| read_labels(&t))
                .with_context(|| format!("reading {}", p.display()))
        })
        .transpose()?;
    read_conllu(&text, sidecar.as_deref(), opts)
        .with_context(|| format!("parsing {}", data.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write(path, serde_json::to_string_pretty(value)? + "\n")
}

/// Checkpoints trained on `X:y` labels are read at the fine level.
fn read_options_for<T>(params: &ModelParams<T>) -> ReadOptions {
    let fine = params.label_names.iter().any(|l| l.contains(':'));
    ReadOptions {
        label_level: if fine {
            LabelLevel::Fine
        } else {
            LabelLevel::Coarse
        },
        label_space: Some(params.label_names.clone()),
        ..ReadOptions::default()
    }
}

fn all(ds: &Dataset) -> Vec<&DepSentence> {
    ds.sentences.iter().collect()
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    match cfg.precision {
        Precision::F32 => train_as::<f32>(cfg),
        Precision::F64 => train_as::<f64>(cfg),
    }
}

fn embeddings_for<T: Real>(cfg: &RunConfig, vocab: &Vocab) -> Result<Option<EmbeddingMatrix<T>>> {
    let Some(path) = &cfg.embeddings else {
        return Ok(None);
    };
    if !path.exists() {
        if cfg.random_embeddings {
            eprintln!(
                "warning: embedding file {} not found, using random vectors",
                path.display()
            );
            return Ok(None);
        }
        bail!(
            "embedding file {} not found (pass --random-embeddings to train without it)",
            path.display()
        );
    }
    let mut emb = load_pretrained::<T>(path, vocab, cfg.model.embedding_dim, cfg.train.seed)?;
    emb.trainable = cfg.model.trainable_embeddings;
    Ok(Some(emb))
}

fn train_as<T: Real>(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out.as_deref().expect("validated");
    let data = cfg.data.as_deref().expect("validated");
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("config.json"), cfg)?;

    let opts = ReadOptions {
        strict_roots: cfg.strict_roots,
        label_level: if cfg.fine_labels {
            LabelLevel::Fine
        } else {
            LabelLevel::Coarse
        },
        ..ReadOptions::default()
    };
    let train = read_dataset(data, cfg.labels.as_deref(), &opts)?;
    if train.sentences.iter().any(|s| s.label.is_none()) {
        bail!("{}: every training sentence needs a label", data.display());
    }
    let fixed = ReadOptions {
        label_space: Some(train.label_names.clone()),
        ..opts
    };
    let dev = match &cfg.dev_data {
        Some(p) => Some(read_dataset(p, cfg.dev_labels.as_deref(), &fixed)?),
        None => None,
    };
    let test = match &cfg.test_data {
        Some(p) => Some(read_dataset(p, cfg.test_labels.as_deref(), &fixed)?),
        None => None,
    };
    write_json(&out.join("labels.json"), &train.label_names)?;

    let mut counts = BTreeMap::new();
    for ds in [Some(&train), dev.as_ref(), test.as_ref()]
        .into_iter()
        .flatten()
    {
        for (w, c) in &ds.vocab_counts {
            *counts.entry(w.clone()).or_insert(0) += c;
        }
    }
    let vocab = Vocab::from_counts(&counts, cfg.min_count, true);
    let embeddings = embeddings_for::<T>(cfg, &vocab)?;
    let seed = cfg.train.seed;
    eprintln!(
        "{} training sentences, {} classes, vocabulary {}",
        train.len(),
        train.label_names.len(),
        vocab.len()
    );

    match cfg.mode {
        RunMode::Split => {
            let (train_refs, dev_refs) = match &dev {
                Some(d) => (all(&train), all(d)),
                None => {
                    let idx: Vec<usize> = (0..train.len()).collect();
                    let (t, d) = dev_split(&idx, cfg.train.dev_fraction, seed)?;
                    (train.select(&t), train.select(&d))
                }
            };
            let start = match &cfg.resume {
                Some(path) => {
                    let ck = checkpoint::load_training::<T>(path)?;
                    if ck.params.label_names != train.label_names {
                        bail!(
                            "{}: label space {:?} differs from the data's {:?}",
                            path.display(),
                            ck.params.label_names,
                            train.label_names
                        );
                    }
                    if ck.params.config != cfg.model {
                        bail!(
                            "{}: model configuration differs from this run's",
                            path.display()
                        );
                    }
                    ck
                }
                None => {
                    let params = init_params(
                        &cfg.model,
                        vocab,
                        train.label_names.clone(),
                        embeddings,
                        &mut rng_from_seed(seed),
                    )?;
                    let state = AdadeltaState::new(&params, cfg.train.rho, cfg.train.epsilon)?;
                    TrainingCheckpoint {
                        params,
                        state,
                        epoch: 0,
                    }
                }
            };
            let result = fit_resume(start, &train_refs, &dev_refs, &cfg.train)?;
            write(&out.join("history.csv"), history_csv(&result.history))?;
            checkpoint::save(&result.best, &out.join("model.ckpt"))?;
            checkpoint::save_training(&result.last, &out.join("train_state.ckpt"))?;
            let best_dev = result
                .history
                .iter()
                .find(|h| h.epoch == result.best_epoch)
                .map_or(f64::NAN, |h| h.dev_accuracy);
            println!(
                "epochs={} best_epoch={} dev_accuracy={best_dev:?}",
                result.history.len(),
                result.best_epoch
            );
            if let Some(test) = &test {
                let report = evaluate(&result.best, &all(test))?;
                write_report(out, &report)?;
                println!("accuracy={:?}", report.accuracy);
            }
        }
        RunMode::MrCv => {
            let labels = train.label_names.clone();
            let cv = cross_validate(&train, cfg.folds, &cfg.train, |fold| {
                init_params(
                    &cfg.model,
                    vocab.clone(),
                    labels.clone(),
                    embeddings.clone(),
                    &mut rng_from_seed(seed.wrapping_add(fold as u64)),
                )
            })?;
            for f in &cv.folds {
                write(
                    &out.join(format!("fold{}_history.csv", f.fold)),
                    history_csv(&f.history),
                )?;
                println!(
                    "fold={} accuracy={:?} best_epoch={} test_size={}",
                    f.fold, f.report.accuracy, f.best_epoch, f.report.total
                );
            }
            write_json(&out.join("cv_report.json"), &cv)?;
            println!("mean_accuracy={:?}", cv.mean_accuracy);
            println!("accuracy={:?}", cv.mean_accuracy);
        }
    }
    Ok(())
}

fn write_report(out: &Path, report: &EvalReport) -> Result<()> {
    write_json(&out.join("eval.json"), report)?;
    write(&out.join("errors.txt"), report.error_dump())
}

pub fn eval(model: &Path, data: &Path, labels: Option<&Path>, out: &Path) -> Result<()> {
    match checkpoint::peek_precision(model)? {
        Precision::F32 => eval_as::<f32>(model, data, labels, out),
        Precision::F64 => eval_as::<f64>(model, data, labels, out),
    }
}

fn eval_as<T: Real>(model: &Path, data: &Path, labels: Option<&Path>, out: &Path) -> Result<()> {
    let params = checkpoint::load::<T>(model)?;
    let ds = read_dataset(data, labels, &read_options_for(&params))?;
    let report = evaluate(&params, &all(&ds))?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_report(out, &report)?;
    println!("classes={}", report.label_names.join(","));
    println!("accuracy={:?}", report.accuracy);
    Ok(())
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    source_id: &'a str,
    predicted: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    gold: Option<&'a str>,
    probs: Vec<f64>,
}

pub fn predict(model: &Path, data: &Path, labels: Option<&Path>, out: Option<&Path>) -> Result<()> {
    match checkpoint::peek_precision(model)? {
        Precision::F32 => predict_as::<f32>(model, data, labels, out),
        Precision::F64 => predict_as::<f64>(model, data, labels, out),
    }
}

fn predict_as<T: Real>(
    model: &Path,
    data: &Path,
    labels: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let params = checkpoint::load::<T>(model)?;
    let ds = read_dataset(data, labels, &read_options_for(&params))?;
    let predictions = dcnn::training::predict_all(&params, &all(&ds))?;
    let mut text = String::new();
    for (s, (class, probs)) in ds.sentences.iter().zip(predictions) {
        let line = PredictionLine {
            source_id: &s.source_id,
            predicted: &params.label_names[class],
            gold: s.label.map(|g| params.label_names[g].as_str()),
            probs: probs.iter().map(|p| p.f64()).collect(),
        };
        text += &serde_json::to_string(&line)?;
        text.push('\n');
    }
    match out {
        Some(path) => write(path, text),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

pub struct InspectRequest<'a> {
    pub data: &'a Path,
    pub labels: Option<&'a Path>,
    pub templates: Option<TemplateSet>,
    pub model_a: Option<&'a Path>,
    pub model_b: Option<&'a Path>,
    pub out: &'a Path,
}

pub fn inspect(req: InspectRequest<'_>) -> Result<()> {
    match (req.model_a, req.model_b) {
        (Some(a), Some(b)) => {
            let (pa, pb) = (
                checkpoint::peek_precision(a)?,
                checkpoint::peek_precision(b)?,
            );
            if pa != pb {
                bail!(
                    "{} is {}-bit but {} is {}-bit",
                    a.display(),
                    pa.bits(),
                    b.display(),
                    pb.bits()
                );
            }
            match pa {
                Precision::F32 => compare_as::<f32>(&req, a, b),
                Precision::F64 => compare_as::<f64>(&req, a, b),
            }
        }
        (Some(a), None) => {
            let templates = match req.templates.clone() {
                Some(t) => t,
                None => match checkpoint::peek_precision(a)? {
                    Precision::F32 => checkpoint::load::<f32>(a)?.config.templates,
                    Precision::F64 => checkpoint::load::<f64>(a)?.config.templates,
                },
            };
            dump_windows(&req, &templates)
        }
        _ => {
            let templates = req.templates.clone().unwrap_or_default();
            dump_windows(&req, &templates)
        }
    }
}

fn dump_windows(req: &InspectRequest<'_>, templates: &TemplateSet) -> Result<()> {
    let ds = read_dataset(req.data, req.labels, &ReadOptions::default())?;
    let mut text = String::new();
    for s in &ds.sentences {
        writeln!(text, "# {}: {}", s.source_id, s.text())?;
        for t in templates.iter() {
            for i in 1..=s.len() {
                writeln!(text, "{}", describe_window(s, t, i))?;
            }
        }
    }
    std::io::stdout().write_all(text.as_bytes())?;
    Ok(())
}

fn comparison_dump(rows: &[Comparison]) -> String {
    let mut out = String::new();
    for r in rows {
        let _ = writeln!(
            out,
            "[{}] {}\n  gold: {}  a: {}  b: {}\n",
            r.source_id, r.text, r.gold, r.predicted_a, r.predicted_b
        );
    }
    out
}

fn compare_as<T: Real>(req: &InspectRequest<'_>, a: &Path, b: &Path) -> Result<()> {
    let pa = checkpoint::load::<T>(a)?;
    let pb = checkpoint::load::<T>(b)?;
    let ds = read_dataset(req.data, req.labels, &read_options_for(&pa))?;
    let d = compare_models(&pa, &pb, &all(&ds))?;
    fs::create_dir_all(req.out).with_context(|| format!("creating {}", req.out.display()))?;
    for (name, rows) in [
        ("a_right_b_wrong.txt", &d.a_right_b_wrong),
        ("b_right_a_wrong.txt", &d.b_right_a_wrong),
        ("both_wrong.txt", &d.both_wrong),
    ] {
        write(&req.out.join(name), comparison_dump(rows))?;
    }
    write_json(&req.out.join("disagreements.json"), &d)?;
    println!(
        "a_right_b_wrong={} b_right_a_wrong={} both_wrong={}",
        d.a_right_b_wrong.len(),
        d.b_right_a_wrong.len(),
        d.both_wrong.len()
    );
    Ok(())
}

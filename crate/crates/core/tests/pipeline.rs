use std::fmt::Write as _;

use dcnn::checkpoint::{self, TrainingCheckpoint};
use dcnn::embeddings::{load_pretrained, Vocab, PAD};
use dcnn::ingest::{parse_conllu, write_conllu};
use dcnn::model::Mode;
use dcnn::numerics::rng_from_seed;
use dcnn::synthetic::cue_corpus;
use dcnn::training::{fit_resume, AdadeltaState};
use dcnn::*;

fn small_config(dim: usize) -> ModelConfig {
    ModelConfig {
        embedding_dim: dim,
        filters_per_template: 8,
        ..ModelConfig::default()
    }
}

#[test]
fn files_to_trained_checkpoint_and_back() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = cue_corpus(40, 3, 9, 12);

    // Round-trip through CoNLL text and a label sidecar.
    let mut blank = corpus.sentences.clone();
    for s in &mut blank {
        s.label = None;
    }
    let conll = write_conllu(&blank, &corpus.label_names);
    let labels: Vec<&str> = corpus
        .sentences
        .iter()
        .map(|s| corpus.label_names[s.label.unwrap()].as_str())
        .collect();
    let ds = parse_conllu(&conll, &labels).unwrap();
    assert_eq!(ds.label_names, corpus.label_names);
    assert_eq!(
        ds.sentences.iter().map(|s| s.label).collect::<Vec<_>>(),
        corpus.sentences.iter().map(|s| s.label).collect::<Vec<_>>()
    );

    // Pretrained vectors for part of the vocabulary.
    let vocab = Vocab::from_counts(&ds.vocab_counts, 1, true);
    let mut vectors = String::from("3 4\n");
    for (w, v) in [("the", 0.5), ("film", -0.25), ("zzz-unused", 1.0)] {
        writeln!(vectors, "{w} {v} {v} {v} {v}").unwrap();
    }
    let vec_path = dir.path().join("vectors.txt");
    std::fs::write(&vec_path, vectors).unwrap();
    let emb = load_pretrained::<f64>(&vec_path, &vocab, 4, 1).unwrap();
    assert_eq!(emb.row(vocab.lookup("the")), &[0.5; 4]);
    assert!(emb.row(PAD).iter().all(|&v| v == 0.0));

    let params = init_params(
        &small_config(4),
        vocab,
        ds.label_names.clone(),
        Some(emb),
        &mut rng_from_seed(3),
    )
    .unwrap();
    let all: Vec<&DepSentence> = ds.sentences.iter().collect();
    let (train, dev) = all.split_at(32);
    let config = TrainConfig {
        batch_size: 8,
        max_epochs: 5,
        ..TrainConfig::default()
    };
    let result = fit(params, train, dev, &config).unwrap();
    assert!(result.best.is_finite());

    let path = dir.path().join("model.ckpt");
    checkpoint::save(&result.best, &path).unwrap();
    let loaded: ModelParams<f64> = checkpoint::load(&path).unwrap();
    assert_eq!(loaded, result.best);
    assert_eq!(
        evaluate(&loaded, dev).unwrap(),
        evaluate(&result.best, dev).unwrap()
    );
}

#[test]
fn one_sentence_overfits_confidently() {
    let s = DepSentence::from_heads("one", &["a", "quietly", "moving", "film"], &[4, 3, 4, 0])
        .with_label(1);
    let vocab = Vocab::from_words(&["a", "quietly", "moving", "film"], true);
    let config = ModelConfig {
        dropout: 0.0,
        ..small_config(8)
    };
    let mut params = init_params::<f64>(
        &config,
        vocab,
        vec!["neg".into(), "pos".into()],
        None,
        &mut rng_from_seed(0),
    )
    .unwrap();
    let mut state = AdadeltaState::new(&params, 0.95, 1e-6).unwrap();
    let prepared = params.prepare(&s);
    let mut rng = rng_from_seed(1);
    for _ in 0..300 {
        let (_, grads) = params.loss_and_gradients(&prepared, &mut rng).unwrap();
        state.step(&mut params, &grads).unwrap();
    }
    let (class, probs) = params.predict(&s).unwrap();
    assert_eq!(class, 1);
    assert!(probs[1] > 0.99, "{probs:?}");
}

#[test]
fn single_precision_trains() {
    let ds = cue_corpus(24, 2, 8, 4);
    let vocab = Vocab::from_counts(&ds.vocab_counts, 1, true);
    let params = init_params::<f32>(
        &small_config(8),
        vocab,
        ds.label_names.clone(),
        None,
        &mut rng_from_seed(2),
    )
    .unwrap();
    let all: Vec<&DepSentence> = ds.sentences.iter().collect();
    let config = TrainConfig {
        batch_size: 6,
        max_epochs: 30,
        patience: 30,
        ..TrainConfig::default()
    };
    let result = fit(params, &all, &all, &config).unwrap();
    assert!(result.best.is_finite());
    assert_eq!(evaluate(&result.best, &all).unwrap().accuracy, 1.0);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f32.ckpt");
    checkpoint::save(&result.best, &path).unwrap();
    assert_eq!(checkpoint::peek_precision(&path).unwrap(), Precision::F32);
    assert!(checkpoint::load::<f64>(&path).is_err());
}

#[test]
fn resume_from_saved_training_state() {
    let ds = cue_corpus(20, 2, 8, 6);
    let vocab = Vocab::from_counts(&ds.vocab_counts, 1, true);
    let params = init_params::<f64>(
        &small_config(6),
        vocab,
        ds.label_names.clone(),
        None,
        &mut rng_from_seed(5),
    )
    .unwrap();
    let all: Vec<&DepSentence> = ds.sentences.iter().collect();
    let (train, dev) = all.split_at(15);
    let full_cfg = TrainConfig {
        batch_size: 4,
        max_epochs: 6,
        patience: 100,
        ..TrainConfig::default()
    };
    let full = fit(params.clone(), train, dev, &full_cfg).unwrap();

    let half = fit(
        params,
        train,
        dev,
        &TrainConfig {
            max_epochs: 2,
            ..full_cfg.clone()
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.state");
    checkpoint::save_training(&half.last, &path).unwrap();
    let restored: TrainingCheckpoint<f64> = checkpoint::load_training(&path).unwrap();
    assert_eq!(restored.epoch, 2);
    let resumed = fit_resume(restored, train, dev, &full_cfg).unwrap();
    assert_eq!(resumed.last.params, full.last.params);
    assert_eq!(&full.history[2..], &resumed.history[..]);
}

#[test]
fn eval_mode_ignores_rng_and_dropout() {
    let ds = cue_corpus(5, 2, 8, 9);
    let vocab = Vocab::from_counts(&ds.vocab_counts, 1, true);
    let params = init_params::<f64>(
        &small_config(6),
        vocab,
        ds.label_names.clone(),
        None,
        &mut rng_from_seed(5),
    )
    .unwrap();
    for s in &ds.sentences {
        let a = params.forward(s, Mode::Eval).unwrap();
        let b = params.forward(s, Mode::Eval).unwrap();
        assert_eq!(a.probs, b.probs);
        assert!(a.mask.iter().all(|&m| m == 1.0));
    }
}

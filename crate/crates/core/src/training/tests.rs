use proptest::prelude::*;

use super::*;
use crate::data::{generate_synthetic, mix_and_shuffle, Split, SyntheticSpec, SyntheticTask};
use crate::model::{load_checkpoint, HEAD_PREFIX};
use crate::numerics::cross_entropy;

/// Uniform f_a over 4 and uniform start/end over an 8-token context at
/// positions 2..10 of a 10-token sequence.
fn uniform_outputs() -> ModelOutputs {
    let mut span = vec![0.0; 10];
    span[2..].fill(1.0 / 8.0);
    ModelOutputs {
        f_a: vec![0.25; 4],
        f_s: Some(span.clone()),
        f_e: Some(span),
        trace: None,
    }
}

#[test]
fn uniform_span_sample_costs_ln32() {
    let label = AnswerLabel::Span {
        token_start: 3,
        token_end: 5,
    };
    let loss = sample_loss(&uniform_outputs(), &label, Regime::AllPurpose).unwrap();
    let expected = 4f64.ln() + 0.5 * 8f64.ln() + 0.5 * 8f64.ln();
    assert!((loss - 3.465_735_902_799_726_5).abs() < 1e-9);
    assert!((loss - expected).abs() < 1e-12);
    assert!((loss - 32f64.ln()).abs() < 1e-12);
}

#[test]
fn perfect_span_prediction_costs_nothing() {
    let mut start = vec![0.0; 10];
    start[4] = 1.0;
    let mut end = vec![0.0; 10];
    end[6] = 1.0;
    let outputs = ModelOutputs {
        f_a: vec![0.0, 0.0, 0.0, 1.0],
        f_s: Some(start),
        f_e: Some(end),
        trace: None,
    };
    let label = AnswerLabel::Span {
        token_start: 4,
        token_end: 6,
    };
    assert_eq!(sample_loss(&outputs, &label, Regime::AllPurpose).unwrap(), 0.0);
}

#[test]
fn span_label_needs_span_heads() {
    let outputs = ModelOutputs {
        f_a: vec![0.5, 0.5],
        f_s: None,
        f_e: None,
        trace: None,
    };
    let label = AnswerLabel::Span {
        token_start: 1,
        token_end: 1,
    };
    assert!(matches!(sample_loss(&outputs, &label, Regime::Boolean), Err(Error::Regime(_))));
    let target = Target {
        category: 1,
        span: Some((1, 1)),
    };
    assert!(matches!(target_loss(&outputs, &target), Err(Error::Regime(_))));
}

#[test]
fn boolean_regime_uses_only_the_answer_term() {
    let outputs = ModelOutputs {
        f_a: vec![0.2, 0.8],
        f_s: None,
        f_e: None,
        trace: None,
    };
    assert_eq!(
        sample_loss(&outputs, &AnswerLabel::Yes, Regime::Boolean).unwrap(),
        -(0.8f64.ln())
    );
    assert!(sample_loss(&outputs, &AnswerLabel::NoAnswer, Regime::Boolean).is_err());
}

fn label_strategy() -> impl Strategy<Value = AnswerLabel> {
    prop_oneof![Just(AnswerLabel::No), Just(AnswerLabel::Yes), Just(AnswerLabel::NoAnswer)]
}

fn distribution(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.001f64..1.0, len).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn span_terms_are_gated_off(
        label in label_strategy(),
        f_a in distribution(4),
        f_s in distribution(10),
        f_e in distribution(10),
    ) {
        let base = ModelOutputs { f_a: f_a.clone(), ..uniform_outputs() };
        let perturbed = ModelOutputs { f_a: f_a.clone(), f_s: Some(f_s), f_e: Some(f_e), trace: None };
        let idx = Regime::AllPurpose.category_index(label.category()).unwrap();
        let answer_only = cross_entropy(&f_a, idx).loss;
        let l1 = sample_loss(&base, &label, Regime::AllPurpose).unwrap();
        let l2 = sample_loss(&perturbed, &label, Regime::AllPurpose).unwrap();
        prop_assert_eq!(l1.to_bits(), answer_only.to_bits());
        prop_assert_eq!(l2.to_bits(), answer_only.to_bits());
        prop_assert!(l1 >= 0.0);
    }
}

#[test]
fn hyperparameters_read_table_names() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hp.json");
    std::fs::write(
        &path,
        r#"{"epochs": 3, "warmup_ratio": 0.06, "batch_size": 16, "learning_rate": 1.5e-5,
            "adam_beta1": 0.9, "adam_beta2": 0.999, "max_grad_norm": 1.0, "dropout": 0.1,
            "sequence_length": 384, "seed": 7}"#,
    )
    .unwrap();
    let hp = Hyperparameters::from_json_file(&path).unwrap();
    assert_eq!(hp, Hyperparameters { seed: 7, ..Hyperparameters::reference_squad() });
    assert_eq!(hp.adam_epsilon, 1e-8);

    std::fs::write(&path, r#"{"epochs": 0}"#).unwrap();
    assert!(Hyperparameters::from_json_file(&path).is_err());
    let bad = Hyperparameters {
        warmup_ratio: 1.0,
        ..Hyperparameters::toy()
    };
    assert!(bad.validate().is_err());
}

fn tiny_hp(seed: u64) -> Hyperparameters {
    Hyperparameters {
        epochs: 5,
        batch_size: 16,
        learning_rate: 1e-3,
        max_seq_len: 40,
        seed,
        ..Hyperparameters::toy()
    }
}

fn task_data(task: SyntheticTask, n: usize, seed: u64) -> Dataset {
    let spec = SyntheticSpec {
        context_len: 16,
        ..SyntheticSpec::new(n, seed)
    };
    generate_synthetic(&spec, task, Split::Train, 40).unwrap()
}

fn values(m: &Model) -> Vec<&Matrix> {
    m.params().iter().map(|p| &p.value).collect()
}

fn small_config(regime: Regime) -> ModelConfig {
    ModelConfig::new(regime, 2, 32, 2, 40)
}

#[test]
fn training_is_deterministic_and_learns() {
    let data = task_data(SyntheticTask::A, 128, 1);
    let hp = tiny_hp(3);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let runs: Vec<_> = dirs
        .iter()
        .map(|d| {
            train(
                Regime::Extractive,
                &data,
                None,
                &hp,
                Init::Random(small_config(Regime::Extractive)),
                Some(d.path()),
            )
            .unwrap()
        })
        .collect();
    let bytes = |d: &tempfile::TempDir| std::fs::read(d.path().join("weights.bin")).unwrap();
    assert_eq!(bytes(&dirs[0]), bytes(&dirs[1]));
    let (r0, r1) = (&runs[0].1, &runs[1].1);
    let losses = |r: &TrainReport| r.epochs.iter().map(|e| e.mean_loss).collect::<Vec<_>>();
    assert_eq!(losses(r0), losses(r1));
    assert_eq!(r0.epochs.len(), 5);
    assert_eq!(r0.steps, 5 * 8);
    assert!(r0.epochs[4].mean_loss < r0.epochs[0].mean_loss, "{:?}", losses(r0));
    assert_eq!(r0.floor_hits, 0);

    let (loaded, manifest) = load_checkpoint(dirs[0].path()).unwrap();
    assert_eq!(values(&loaded), values(&runs[0].0));
    assert_eq!(manifest.training_seed, 3);

    let other = train(
        Regime::Extractive,
        &data,
        None,
        &tiny_hp(4),
        Init::Random(small_config(Regime::Extractive)),
        None,
    )
    .unwrap();
    assert_ne!(values(&other.0), values(&runs[0].0));
}

#[test]
fn dev_metrics_are_reported_each_epoch() {
    let data = task_data(SyntheticTask::B, 48, 2);
    let dev = task_data(SyntheticTask::B, 16, 9);
    let hp = Hyperparameters {
        epochs: 2,
        ..tiny_hp(1)
    };
    let (_, report) = train(
        Regime::Boolean,
        &data,
        Some(&dev),
        &hp,
        Init::Random(small_config(Regime::Boolean)),
        None,
    )
    .unwrap();
    assert_eq!(report.epochs.len(), 2);
    for e in &report.epochs {
        let m = e.dev.as_ref().unwrap();
        assert_eq!(m.n, 16);
        assert!(m.accuracy.is_some() && m.f1.is_none());
    }
}

#[test]
fn transfer_keeps_backbone_and_refreshes_heads() {
    let b = task_data(SyntheticTask::B, 32, 5);
    let hp = Hyperparameters {
        epochs: 1,
        ..tiny_hp(2)
    };
    let src_dir = tempfile::tempdir().unwrap();
    let (source, _) = train(
        Regime::Boolean,
        &b,
        None,
        &hp,
        Init::Random(small_config(Regime::Boolean)),
        Some(src_dir.path()),
    )
    .unwrap();
    assert_eq!(values(&load_checkpoint(src_dir.path()).unwrap().0), values(&source));

    let mixed = mix_and_shuffle(task_data(SyntheticTask::A, 32, 6), task_data(SyntheticTask::B, 32, 7), &RngState::new(1)).unwrap();
    let out_dir = tempfile::tempdir().unwrap();
    let (model, report) = train(
        Regime::AllPurpose,
        &mixed,
        None,
        &hp,
        Init::Transfer(&source),
        Some(out_dir.path()),
    )
    .unwrap();
    let (_, src_manifest) = load_checkpoint(src_dir.path()).unwrap();
    let (_, new_manifest) = load_checkpoint(out_dir.path()).unwrap();
    let names = |m: &crate::model::Manifest| {
        m.tensors
            .iter()
            .filter(|t| !t.name.starts_with(HEAD_PREFIX))
            .map(|t| t.name.clone())
            .collect::<Vec<_>>()
    };
    assert_eq!(names(&src_manifest), names(&new_manifest));
    assert!(!report.reinitialized.is_empty());
    assert!(report.reinitialized.iter().all(|n| n.starts_with(HEAD_PREFIX)));
    assert!(report.reinitialized.contains(&"head.span_start.weight".to_string()));
    assert_eq!(model.param("head.answer.weight").unwrap().value.shape(), (32, 4));
}

#[test]
fn rejects_empty_and_mismatched_data() {
    let empty = Dataset {
        samples: vec![],
        split: Split::Train,
        provenance: crate::data::Provenance::SyntheticA,
        name: "empty".into(),
        downgraded: 0,
    };
    let hp = tiny_hp(0);
    assert!(matches!(
        train(Regime::Extractive, &empty, None, &hp, Init::Random(small_config(Regime::Extractive)), None),
        Err(Error::Usage(_))
    ));
    let a = task_data(SyntheticTask::A, 8, 1);
    assert!(matches!(
        train(Regime::Boolean, &a, None, &hp, Init::Random(small_config(Regime::Boolean)), None),
        Err(Error::Regime(_))
    ));
}

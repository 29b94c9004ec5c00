// SPDX-License-Identifier: Apache-2.0

use oodscore::error::OodError;
use oodscore::interchange::Dataset;
use oodscore::registry::{with_threads, Hyperparams, MethodSpec};
use oodscore::synth::{generate, SynthParams};

const ALL_METHODS: &[&str] = &[
    "msp",
    "maxlogit",
    "energy",
    "gen",
    "react",
    "react+msp",
    "ash_s",
    "ash_p+maxlogit",
    "ash_b+gen",
    "dice",
    "dice+msp",
    "vim",
    "vim+gen",
    "residual",
    "caref",
    "l1_distance",
    "l1_norm",
    "cadref",
    "cadref+maxlogit",
];

fn dataset() -> Dataset {
    generate(&SynthParams {
        classes: 4,
        dim: 12,
        train_per_class: 25,
        n_id: 30,
        n_ood: 30,
        ..SynthParams::default()
    })
    .unwrap()
}

fn fitted(name: &str, hp: &Hyperparams, data: &Dataset) -> MethodSpec {
    let mut spec = MethodSpec::parse(name, hp).unwrap();
    spec.fit(&data.split("train").unwrap().features, &data.head)
        .unwrap();
    spec
}

#[test]
fn batch_equals_single_sample_scoring() {
    let data = dataset();
    let hp = Hyperparams::default();
    for name in ALL_METHODS {
        let spec = fitted(name, &hp, &data);
        for split in ["test", "ood"] {
            let feats = &data.split(split).unwrap().features;
            let batch = spec.score_batch(feats, &data.head).unwrap();
            assert_eq!(batch.scores.len(), feats.rows());
            for (i, s) in batch.scores.iter().enumerate() {
                let one = spec
                    .score_one(feats.row(i), &data.head)
                    .unwrap_or(f64::NEG_INFINITY);
                assert_eq!(s.to_bits(), one.to_bits(), "{name} row {i}");
            }
        }
    }
}

#[test]
fn saved_state_reloads_bit_identical() {
    let data = dataset();
    let hp = Hyperparams {
        vim_dim: Some(5),
        ..Hyperparams::default()
    };
    let tmp = tempfile::tempdir().unwrap();
    for (k, name) in ALL_METHODS.iter().enumerate() {
        let spec = fitted(name, &hp, &data);
        let dir = tmp.path().join(k.to_string());
        spec.save(&dir).unwrap();
        let back = MethodSpec::load(&dir).unwrap();
        assert_eq!(back, spec, "{name}");
        let feats = &data.split("ood").unwrap().features;
        let a = spec.score_batch(feats, &data.head).unwrap();
        let b = back.score_batch(feats, &data.head).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.scores), bits(&b.scores), "{name}");
    }
}

#[test]
fn refit_replaces_state() {
    let data = dataset();
    let mut spec = MethodSpec::parse("caref", &Hyperparams::default()).unwrap();
    let train = &data.split("train").unwrap().features;
    let ood = &data.split("ood").unwrap().features;
    spec.fit(ood, &data.head).unwrap();
    let first = spec.clone();
    spec.fit(train, &data.head).unwrap();
    assert_ne!(first, spec);
    assert_eq!(spec, fitted("caref", &Hyperparams::default(), &data));
}

#[test]
fn worker_count_never_changes_scores() {
    let data = dataset();
    let hp = Hyperparams::default();
    for name in ALL_METHODS {
        let spec = fitted(name, &hp, &data);
        let feats = &data.split("test").unwrap().features;
        let runs: Vec<Vec<u64>> = [1, 2, 7]
            .into_iter()
            .map(|t| {
                with_threads(Some(t), || spec.score_batch(feats, &data.head).unwrap())
                    .scores
                    .iter()
                    .map(|x| x.to_bits())
                    .collect()
            })
            .collect();
        assert!(runs.windows(2).all(|w| w[0] == w[1]), "{name}");
    }
}

#[test]
fn fitting_is_thread_count_independent() {
    let data = dataset();
    let hp = Hyperparams::default();
    for name in ["vim", "dice", "react", "cadref"] {
        let one = with_threads(Some(1), || fitted(name, &hp, &data));
        let many = with_threads(Some(6), || fitted(name, &hp, &data));
        assert_eq!(one, many, "{name}");
    }
}

#[test]
fn cadref_rejects_non_positive_training_mean() {
    let data = dataset();
    let mut spec = MethodSpec::parse("cadref+gen", &Hyperparams::default()).unwrap();
    let err = spec
        .fit(&data.split("train").unwrap().features, &data.head)
        .unwrap_err();
    assert!(matches!(err, OodError::NonPositiveMean(m) if m < 0.0));
}

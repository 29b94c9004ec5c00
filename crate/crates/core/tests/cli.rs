// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use oodscore::cli::{cmd_eval, cmd_synth, RunConfig};
use oodscore::interchange::{load_dataset, write_dataset};
use oodscore::metrics::auroc;
use oodscore::registry::{Hyperparams, MethodSpec};
use oodscore::synth::SynthParams;

fn oodscore(args: &[&str], paths: &[&Path]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_oodscore"));
    cmd.args(args);
    for p in paths {
        cmd.arg(p);
    }
    cmd.output().unwrap()
}

fn small_synth(dir: &Path) -> PathBuf {
    cmd_synth(
        &SynthParams {
            classes: 3,
            dim: 8,
            train_per_class: 10,
            n_id: 20,
            n_ood: 20,
            ..SynthParams::default()
        },
        dir,
    )
    .unwrap()
}

#[test]
fn missing_train_split_exits_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_synth(&tmp.path().join("data"));
    let out = tmp.path().join("out");
    let run = oodscore(
        &[
            "fit",
            "--methods",
            "caref",
            "--train-split",
            "absent",
            "--manifest",
        ],
        &[&manifest],
    );
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("absent"));
    assert!(!out.exists());
}

#[test]
fn bad_flags_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_synth(&tmp.path().join("data"));
    for args in [
        &["eval", "--methods", "bogus", "--manifest"][..],
        &["eval", "--decouple-mode", "sideways", "--manifest"][..],
        &["eval", "--gen-M", "9", "--methods", "gen", "--manifest"][..],
    ] {
        let run = oodscore(args, &[&manifest]);
        assert_eq!(run.status.code(), Some(2), "{args:?}");
    }
    let run = oodscore(&["eval", "--manifest"], &[&tmp.path().join("nope.json")]);
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn fit_writes_profile_with_one_row_per_class() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_synth(&tmp.path().join("data"));
    let out = tmp.path().join("fit");
    let run = oodscore(
        &["fit", "--methods", "caref,vim", "--manifest"],
        &[&manifest, Path::new("--out"), &out],
    );
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let means =
        oodscore::interchange::read_tensor(out.join("fitted/caref/class_means.bin")).unwrap();
    assert_eq!(means.shape, vec![3, 8]);
    let log_text = fs::read_to_string(out.join("fit.log")).unwrap();
    assert!(log_text.contains("orthonormality_error="));

    let eval_out = tmp.path().join("eval");
    let run = oodscore(
        &["eval", "--methods", "caref,vim,msp", "--manifest"],
        &[
            &manifest,
            Path::new("--fitted"),
            &out.join("fitted"),
            Path::new("--out"),
            &eval_out,
        ],
    );
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );

    let run = oodscore(
        &["eval", "--methods", "cadref", "--manifest"],
        &[
            &manifest,
            Path::new("--fitted"),
            &out.join("fitted"),
            Path::new("--out"),
            &eval_out,
        ],
    );
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("fitted"));
}

#[test]
fn two_ood_splits_give_two_rows_per_method() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_synth(&tmp.path().join("data"));
    let mut data = load_dataset(&manifest).unwrap();
    let far = data.splits["ood"].clone();
    data.splits.insert("far".into(), far);
    let manifest = write_dataset(tmp.path().join("two"), &data).unwrap();
    let out = tmp.path().join("out");
    let run = oodscore(
        &[
            "eval",
            "--methods",
            "msp,energy,caref",
            "--ood-splits",
            "ood,far",
            "--manifest",
        ],
        &[&manifest, Path::new("--out"), &out],
    );
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let jsonl = fs::read_to_string(out.join("report.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 6);
    let md = fs::read_to_string(out.join("report.md")).unwrap();
    assert!(md.contains("far AUROC") && md.contains("Average AUROC"));
    assert!(out.join("hist_caref_far.csv").is_file());
}

#[test]
fn perfect_separation_gives_unit_auroc() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = cmd_synth(
        &SynthParams {
            classes: 4,
            dim: 16,
            train_per_class: 30,
            n_id: 40,
            n_ood: 40,
            ood_shift: 50.0,
            center_scale: 20.0,
            ..SynthParams::default()
        },
        &tmp.path().join("data"),
    )
    .unwrap();
    let reports = cmd_eval(&RunConfig {
        manifest,
        methods: vec!["caref".into(), "l1_distance".into(), "cadref".into()],
        out: tmp.path().join("out"),
        ..RunConfig::default()
    })
    .unwrap();
    for r in reports {
        assert_eq!(r.auroc, 1.0, "{}", r.method);
        assert_eq!(r.fpr95, 0.0, "{}", r.method);
    }
}

#[test]
fn rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_synth(&tmp.path().join("data"));
    let mut reports = Vec::new();
    for k in 0..2 {
        let out = tmp.path().join(format!("out{k}"));
        let run = oodscore(
            &[
                "eval",
                "--seed",
                "7",
                "--methods",
                "vim,ash_b,cadref",
                "--manifest",
            ],
            &[&manifest, Path::new("--out"), &out],
        );
        assert!(run.status.success());
        reports.push(fs::read(out.join("report.jsonl")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn synth_is_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for (k, seed) in ["3", "3", "4"].iter().enumerate() {
        let dir = tmp.path().join(k.to_string());
        let run = oodscore(
            &[
                "synth",
                "--classes",
                "3",
                "--dim",
                "5",
                "--seed",
                seed,
                "--out",
            ],
            &[&dir],
        );
        assert!(run.status.success());
        bytes.push(fs::read(dir.join("ood_features.bin")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    assert_ne!(bytes[0], bytes[2]);
}

#[test]
fn zero_shift_is_the_null_case() {
    let params = SynthParams {
        n_id: 1000,
        n_ood: 1000,
        ood_shift: 0.0,
        ..SynthParams::default()
    };
    let data = oodscore::synth::generate(&params).unwrap();
    let mut spec = MethodSpec::parse("caref", &Hyperparams::default()).unwrap();
    spec.fit(&data.split("train").unwrap().features, &data.head)
        .unwrap();
    let id = spec
        .score_batch(&data.split("test").unwrap().features, &data.head)
        .unwrap();
    let ood = spec
        .score_batch(&data.split("ood").unwrap().features, &data.head)
        .unwrap();
    let a = auroc(&id.scores, &ood.scores).unwrap();
    assert!((a - 0.5).abs() <= 0.05, "AUROC {a}");
}

#[test]
fn large_shift_separates_caref() {
    let data = oodscore::synth::generate(&SynthParams {
        ood_shift: 10.0,
        ..SynthParams::default()
    })
    .unwrap();
    let mut spec = MethodSpec::parse("caref", &Hyperparams::default()).unwrap();
    spec.fit(&data.split("train").unwrap().features, &data.head)
        .unwrap();
    let id = spec
        .score_batch(&data.split("test").unwrap().features, &data.head)
        .unwrap();
    let ood = spec
        .score_batch(&data.split("ood").unwrap().features, &data.head)
        .unwrap();
    assert!(auroc(&id.scores, &ood.scores).unwrap() >= 0.99);
}

#[test]
fn list_methods_prints_roster() {
    let run = oodscore(&["list-methods"], &[]);
    assert!(run.status.success());
    let text = String::from_utf8(run.stdout).unwrap();
    assert!(text.contains("cadref[+<logit>]") && text.contains("--decouple-mode"));
}

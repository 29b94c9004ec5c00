// SPDX-License-Identifier: Apache-2.0

//! Command implementations behind the `oodscore` binary. Each command takes
//! a [`RunConfig`], does its work on a pool sized by `threads`, and writes
//! its outputs single-threaded.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::cadref::Ablation;
use crate::error::{OodError, Result};
use crate::interchange::{load_csv_dataset, load_dataset, write_dataset, Dataset};
use crate::linalg;
use crate::metrics::{self, DetectionReport};
use crate::registry::{with_threads, FittedState, Hyperparams, MethodKind, MethodSpec, ROSTER};
use crate::synth::{self, SynthParams};

/// Environment variable read by the binary to cap worker threads.
pub const THREADS_ENV: &str = "OODSCORE_THREADS";
pub const DEFAULT_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Manifest JSON, or a CSV directory when `from_csv` is set.
    pub manifest: PathBuf,
    pub from_csv: bool,
    pub methods: Vec<String>,
    pub train_split: String,
    pub id_split: String,
    /// Empty means every split other than the train and ID splits.
    pub ood_splits: Vec<String>,
    pub out: PathBuf,
    /// Directory written by [`cmd_fit`]; when absent, methods are fitted on
    /// the train split as part of the command.
    pub fitted: Option<PathBuf>,
    pub seed: u64,
    pub hyper: Hyperparams,
    pub bins: usize,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: PathBuf::from("manifest.json"),
            from_csv: false,
            methods: vec!["caref".into(), "cadref".into()],
            train_split: "train".into(),
            id_split: "test".into(),
            ood_splits: Vec::new(),
            out: PathBuf::from("out"),
            fitted: None,
            seed: 0,
            hyper: Hyperparams::default(),
            bins: DEFAULT_BINS,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn load_dataset(&self) -> Result<Dataset> {
        if self.from_csv {
            load_csv_dataset(&self.manifest)
        } else {
            load_dataset(&self.manifest)
        }
    }

    fn resolve_ood_splits(&self, data: &Dataset) -> Result<Vec<String>> {
        let splits: Vec<String> = if self.ood_splits.is_empty() {
            data.splits
                .keys()
                .filter(|k| **k != self.train_split && **k != self.id_split)
                .cloned()
                .collect()
        } else {
            self.ood_splits.clone()
        };
        if splits.is_empty() {
            return Err(OodError::InvalidConfig("no OOD splits to evaluate".into()));
        }
        for s in &splits {
            data.split(s)?;
        }
        Ok(splits)
    }

    fn parse_methods(&self) -> Result<Vec<MethodSpec>> {
        if self.methods.is_empty() {
            return Err(OodError::InvalidConfig("no methods given".into()));
        }
        self.methods
            .iter()
            .map(|m| MethodSpec::parse(m, &self.hyper))
            .collect()
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| OodError::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| OodError::io(path, e))
}

/// File-system-safe form of a method name.
pub fn method_dir_name(name: &str) -> String {
    name.chars()
        .map(|ch| {
            if ch.is_ascii_alphanumeric() || ch == '_' || ch == '-' {
                ch
            } else {
                '-'
            }
        })
        .collect()
}

fn fit_log_line(spec: &MethodSpec) -> String {
    let mut line = format!("{}\tfitted", spec.name());
    match spec.state() {
        None => line.push_str("\tno state"),
        Some(FittedState::React { threshold }) => {
            let _ = write!(line, "\tthreshold={threshold:e}");
        }
        Some(FittedState::Dice(mask)) => {
            let kept = mask.as_slice().iter().filter(|&&k| k).count();
            let _ = write!(line, "\tkept={kept}/{}", mask.as_slice().len());
        }
        Some(FittedState::Vim(model)) => {
            let _ = write!(
                line,
                "\tD={}\talpha={:e}\torthonormality_error={:e}",
                model.subspace_dim(),
                model.alpha,
                linalg::orthonormality_error(&model.basis)
            );
            if model.degenerate_spectrum {
                line.push_str("\twarning=degenerate_spectrum");
            }
            if model.alpha_fallback {
                line.push_str("\twarning=alpha_fallback");
            }
        }
        Some(FittedState::Profile(p)) => {
            let empty = p.class_counts.iter().filter(|&&n| n == 0).count();
            let _ = write!(line, "\tclasses={}\tempty_classes={empty}", p.num_classes());
            if let Some(s) = p.mean_logit_score {
                let _ = write!(line, "\tmean_logit_score={s:e}");
            }
        }
    }
    line.push('\n');
    line
}

/// Fits every method on the train split and writes
/// `<out>/fitted/<method>/` plus `<out>/fit.log`.
pub fn cmd_fit(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let specs = cfg.parse_methods()?;
    let data = cfg.load_dataset()?;
    let train = &data.split(&cfg.train_split)?.features;
    let fitted = with_threads(cfg.threads, || -> Result<Vec<MethodSpec>> {
        specs
            .into_iter()
            .map(|mut spec| {
                spec.fit(train, &data.head)?;
                Ok(spec)
            })
            .collect()
    })?;
    let root = cfg.out.join("fitted");
    create_dir(&root)?;
    let mut log_text = String::new();
    let mut dirs = Vec::new();
    for spec in &fitted {
        let dir = root.join(method_dir_name(spec.name()));
        spec.save(&dir)?;
        log_text.push_str(&fit_log_line(spec));
        dirs.push(dir);
    }
    write_file(&cfg.out.join("fit.log"), &log_text)?;
    Ok(dirs)
}

fn prepare_methods(cfg: &RunConfig, data: &Dataset) -> Result<Vec<MethodSpec>> {
    let specs = cfg.parse_methods()?;
    match &cfg.fitted {
        Some(root) => specs
            .into_iter()
            .map(|spec| {
                if !spec.requires_fit() {
                    return Ok(spec);
                }
                let dir = root.join(method_dir_name(spec.name()));
                if !dir.join("state.json").is_file() {
                    return Err(OodError::NotFitted(spec.name().to_string()));
                }
                let loaded = MethodSpec::load(&dir)?;
                if loaded.kind() != spec.kind() {
                    return Err(OodError::InvalidState(format!(
                        "{} was fitted with different settings",
                        spec.name()
                    )));
                }
                Ok(loaded)
            })
            .collect(),
        None => {
            let train = &data.split(&cfg.train_split)?.features;
            specs
                .into_iter()
                .map(|mut spec| {
                    if spec.requires_fit() {
                        spec.fit(train, &data.head)?;
                    }
                    Ok(spec)
                })
                .collect()
        }
    }
}

struct Scored {
    reports: Vec<DetectionReport>,
    histograms: Vec<(String, String)>,
}

fn score_and_report(
    cfg: &RunConfig,
    data: &Dataset,
    specs: &[MethodSpec],
    ood_splits: &[String],
    label: impl Fn(&MethodSpec) -> String,
) -> Result<Scored> {
    let id = &data.split(&cfg.id_split)?.features;
    let mut reports = Vec::new();
    let mut histograms = Vec::new();
    for spec in specs {
        let id_batch = spec.score_batch(id, &data.head)?;
        for ood_name in ood_splits {
            let ood_batch = spec.score_batch(&data.split(ood_name)?.features, &data.head)?;
            let name = label(spec);
            reports.push(DetectionReport::evaluate(
                &name,
                &cfg.id_split,
                ood_name,
                &id_batch.scores,
                &ood_batch.scores,
                id_batch.warnings.merge(ood_batch.warnings),
            )?);
            if cfg.bins > 0 {
                let hist = metrics::histogram(&id_batch.scores, &ood_batch.scores, cfg.bins)?;
                histograms.push((
                    format!(
                        "hist_{}_{}.csv",
                        method_dir_name(&name),
                        method_dir_name(ood_name)
                    ),
                    hist.to_csv(),
                ));
            }
        }
    }
    Ok(Scored {
        reports,
        histograms,
    })
}

/// Scores the ID split against every OOD split and writes `report.jsonl`,
/// `report.md` and one `hist_<method>_<ood>.csv` per cell.
pub fn cmd_eval(cfg: &RunConfig) -> Result<Vec<DetectionReport>> {
    let data = cfg.load_dataset()?;
    data.split(&cfg.id_split)?;
    let ood_splits = cfg.resolve_ood_splits(&data)?;
    let scored = with_threads(cfg.threads, || -> Result<Scored> {
        let specs = prepare_methods(cfg, &data)?;
        score_and_report(cfg, &data, &specs, &ood_splits, |s| s.name().to_string())
    })?;
    create_dir(&cfg.out)?;
    write_file(
        &cfg.out.join("report.jsonl"),
        &metrics::reports_to_jsonl(&scored.reports),
    )?;
    write_file(
        &cfg.out.join("report.md"),
        &metrics::reports_to_markdown(&scored.reports),
    )?;
    for (file, csv) in &scored.histograms {
        write_file(&cfg.out.join(file), csv)?;
    }
    Ok(scored.reports)
}

/// Labels and component toggles of the five ablation rows; `None` is plain
/// CARef.
pub const ABLATION_ROWS: [(&str, Option<Ablation>); 5] = [
    ("CARef", None),
    (
        "E_p only (no ES)",
        Some(Ablation {
            use_pos: true,
            use_neg: false,
            use_scaling: false,
        }),
    ),
    (
        "E_n only",
        Some(Ablation {
            use_pos: false,
            use_neg: true,
            use_scaling: true,
        }),
    ),
    (
        "E_p + ES",
        Some(Ablation {
            use_pos: true,
            use_neg: false,
            use_scaling: true,
        }),
    ),
    (
        "CADRef",
        Some(Ablation {
            use_pos: true,
            use_neg: true,
            use_scaling: true,
        }),
    ),
];

/// Builds the five ablation methods from the decoupling settings in `hyper`.
pub fn ablation_specs(hyper: &Hyperparams) -> Result<Vec<(String, MethodSpec)>> {
    ABLATION_ROWS
        .iter()
        .map(|(label, ablation)| {
            let spec = match ablation {
                None => MethodSpec::parse("caref", hyper)?,
                Some(a) => {
                    let config = hyper.cadref_config(hyper.logit_score("energy")?, *a);
                    MethodSpec::new("cadref", MethodKind::Cadref { config })
                }
            };
            Ok((label.to_string(), spec))
        })
        .collect()
}

/// Runs the five CADRef component configurations and writes
/// `ablation.jsonl` and `ablation.md`.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<DetectionReport>> {
    let data = cfg.load_dataset()?;
    data.split(&cfg.id_split)?;
    let ood_splits = cfg.resolve_ood_splits(&data)?;
    let rows = ablation_specs(&cfg.hyper)?;
    let reports = with_threads(cfg.threads, || -> Result<Vec<DetectionReport>> {
        let train = &data.split(&cfg.train_split)?.features;
        let mut specs = Vec::with_capacity(rows.len());
        let mut labels = Vec::with_capacity(rows.len());
        for (label, mut spec) in rows {
            spec.fit(train, &data.head)?;
            specs.push(spec);
            labels.push(label);
        }
        let mut reports = Vec::new();
        for (spec, label) in specs.iter().zip(&labels) {
            let scored = score_and_report(
                &RunConfig {
                    bins: 0,
                    ..cfg.clone()
                },
                &data,
                std::slice::from_ref(spec),
                &ood_splits,
                |_| label.clone(),
            )?;
            reports.extend(scored.reports);
        }
        Ok(reports)
    })?;
    create_dir(&cfg.out)?;
    write_file(
        &cfg.out.join("ablation.jsonl"),
        &metrics::reports_to_jsonl(&reports),
    )?;
    write_file(
        &cfg.out.join("ablation.md"),
        &metrics::reports_to_markdown(&reports),
    )?;
    Ok(reports)
}

#[derive(Serialize)]
struct SynthRecord<'a> {
    params: &'a SynthParams,
}

/// Writes a synthetic dataset (`manifest.json` plus tensors) under `out`
/// and returns the manifest path.
pub fn cmd_synth(params: &SynthParams, out: &Path) -> Result<PathBuf> {
    let data = synth::generate(params)?;
    let manifest = write_dataset(out, &data)?;
    let record = serde_json::to_string_pretty(&SynthRecord { params }).expect("params serialize");
    write_file(&out.join("synth.json"), &(record + "\n"))?;
    Ok(manifest)
}

/// The method roster, one `name<TAB>settings` line each.
pub fn list_methods() -> String {
    let width = ROSTER.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (name, settings) in ROSTER {
        let _ = writeln!(out, "{name:<width$}  {settings}");
    }
    out.push_str("\n<logit> is one of msp, maxlogit, energy, gen; composites default to energy.\n");
    out
}

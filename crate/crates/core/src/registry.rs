// SPDX-License-Identifier: Apache-2.0

//! Named scoring methods behind one fit/score interface.
//!
//! Names are `msp`, `maxlogit`, `energy`, `gen`, `caref`, `l1_distance`,
//! `l1_norm`, `residual`, and the composites `<base>[+<logit>]` where
//! `<base>` is one of `react`, `ash_s`, `ash_p`, `ash_b`, `dice`, `vim`,
//! `cadref` and `<logit>` one of the four logit scores (default `energy`).

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cadref::{self, Ablation, CadrefConfig, DecoupleAggregation, DecoupleMode};
use crate::caref::{self, ClassProfile};
use crate::error::{OodError, Result};
use crate::interchange::{
    read_tensor, write_tensor, ClassifierHead, FeatureMatrix, TensorData, TensorFile,
};
use crate::linalg;
use crate::logit::{self, LogitScore};
use crate::metrics::ScoreWarnings;
use crate::shaping::{self, AshVariant, DiceMask};
use crate::vim::{self, VimCenter, VimModel};

/// Score assigned to samples that cannot be scored; ranks below everything.
pub const SURROGATE_SCORE: f64 = f64::NEG_INFINITY;

/// Method hyperparameters shared by every name in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub energy_temperature: f64,
    /// `None` means `min(100, c)`.
    pub gen_top_m: Option<usize>,
    pub gen_gamma: f64,
    pub react_percentile: f64,
    pub ash_prune_percent: f64,
    pub dice_sparsity: f64,
    /// `None` picks [`vim::default_subspace_dim`] at fit time.
    pub vim_dim: Option<usize>,
    pub vim_center: VimCenter,
    pub decouple_mode: DecoupleMode,
    pub decouple_aggregation: DecoupleAggregation,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            energy_temperature: logit::DEFAULT_TEMPERATURE,
            gen_top_m: None,
            gen_gamma: logit::DEFAULT_GEN_GAMMA,
            react_percentile: shaping::DEFAULT_REACT_PERCENTILE,
            ash_prune_percent: shaping::DEFAULT_ASH_PRUNE_PERCENT,
            dice_sparsity: shaping::DEFAULT_DICE_SPARSITY,
            vim_dim: None,
            vim_center: VimCenter::None,
            decouple_mode: DecoupleMode::default(),
            decouple_aggregation: DecoupleAggregation::default(),
        }
    }
}

impl Hyperparams {
    pub fn logit_score(&self, name: &str) -> Result<LogitScore> {
        let score = match name {
            "msp" => LogitScore::Msp,
            "maxlogit" => LogitScore::MaxLogit,
            "energy" => LogitScore::Energy {
                temperature: self.energy_temperature,
            },
            "gen" => LogitScore::Gen {
                top_m: self.gen_top_m,
                gamma: self.gen_gamma,
            },
            other => return Err(OodError::UnknownMethod(other.to_string())),
        };
        score.validate()?;
        Ok(score)
    }

    pub fn cadref_config(&self, logit_score: LogitScore, ablation: Ablation) -> CadrefConfig {
        CadrefConfig {
            mode: self.decouple_mode,
            aggregation: self.decouple_aggregation,
            logit_score,
            ablation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodKind {
    Logit {
        score: LogitScore,
    },
    React {
        percentile: f64,
        inner: LogitScore,
    },
    Ash {
        variant: AshVariant,
        prune_percent: f64,
        inner: LogitScore,
    },
    Dice {
        sparsity: f64,
        inner: LogitScore,
    },
    Vim {
        dim: Option<usize>,
        center: VimCenter,
        inner: LogitScore,
    },
    Residual {
        dim: Option<usize>,
        center: VimCenter,
    },
    Caref,
    L1Distance,
    L1Norm,
    Cadref {
        config: CadrefConfig,
    },
}

/// Everything a method learns from the training split.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedState {
    React { threshold: f64 },
    Dice(DiceMask),
    Vim(VimModel),
    Profile(ClassProfile),
}

/// Roster for `list-methods`: name and the hyperparameters it reads.
pub const ROSTER: &[(&str, &str)] = &[
    ("msp", "none"),
    ("maxlogit", "none"),
    ("energy", "--energy-T"),
    ("gen", "--gen-M (default min(100, c)), --gen-gamma"),
    (
        "react[+<logit>]",
        "--react-p (percentile of training activations), inner logit score",
    ),
    (
        "ash_s[+<logit>]",
        "--ash-p (per-sample pruning percentile), inner logit score",
    ),
    ("ash_p[+<logit>]", "--ash-p, inner logit score"),
    ("ash_b[+<logit>]", "--ash-p, inner logit score"),
    (
        "dice[+<logit>]",
        "--dice-p (weight sparsity in [0, 1)), inner logit score",
    ),
    (
        "vim[+<logit>]",
        "--vim-dim (principal dimension), --vim-center, inner logit score",
    ),
    ("residual", "--vim-dim, --vim-center"),
    ("caref", "none (class means fitted on the training split)"),
    ("l1_distance", "none"),
    ("l1_norm", "none"),
    (
        "cadref[+<logit>]",
        "--decouple-mode, --decouple-aggregation, logit score for error scaling",
    ),
];

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    name: String,
    kind: MethodKind,
    state: Option<FittedState>,
}

/// Scores for one split plus the surrogate counters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBatch {
    pub scores: Vec<f64>,
    pub warnings: ScoreWarnings,
}

impl MethodSpec {
    pub fn new(name: impl Into<String>, kind: MethodKind) -> Self {
        MethodSpec {
            name: name.into(),
            kind,
            state: None,
        }
    }

    pub fn parse(name: &str, hp: &Hyperparams) -> Result<Self> {
        let name = name.trim();
        let (base, inner_name) = match name.split_once('+') {
            Some((b, l)) => (b, Some(l)),
            None => (name, None),
        };
        let inner = hp.logit_score(inner_name.unwrap_or("energy"))?;
        let composite_only = |kind: MethodKind| -> Result<MethodKind> {
            match inner_name {
                Some(_) => Err(OodError::UnknownMethod(name.to_string())),
                None => Ok(kind),
            }
        };
        let kind = match base {
            "msp" | "maxlogit" | "energy" | "gen" => composite_only(MethodKind::Logit {
                score: hp.logit_score(base)?,
            })?,
            "react" => MethodKind::React {
                percentile: hp.react_percentile,
                inner,
            },
            "ash_s" | "ash_p" | "ash_b" => MethodKind::Ash {
                variant: match base {
                    "ash_s" => AshVariant::S,
                    "ash_p" => AshVariant::P,
                    _ => AshVariant::B,
                },
                prune_percent: hp.ash_prune_percent,
                inner,
            },
            "dice" => MethodKind::Dice {
                sparsity: hp.dice_sparsity,
                inner,
            },
            "vim" => MethodKind::Vim {
                dim: hp.vim_dim,
                center: hp.vim_center,
                inner,
            },
            "residual" => composite_only(MethodKind::Residual {
                dim: hp.vim_dim,
                center: hp.vim_center,
            })?,
            "caref" => composite_only(MethodKind::Caref)?,
            "l1_distance" => composite_only(MethodKind::L1Distance)?,
            "l1_norm" => composite_only(MethodKind::L1Norm)?,
            "cadref" => MethodKind::Cadref {
                config: hp.cadref_config(inner, Ablation::default()),
            },
            _ => return Err(OodError::UnknownMethod(name.to_string())),
        };
        Ok(MethodSpec::new(name, kind))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &MethodKind {
        &self.kind
    }

    pub fn state(&self) -> Option<&FittedState> {
        self.state.as_ref()
    }

    pub fn requires_fit(&self) -> bool {
        !matches!(
            self.kind,
            MethodKind::Logit { .. } | MethodKind::Ash { .. } | MethodKind::L1Norm
        )
    }

    pub fn is_ready(&self) -> bool {
        !self.requires_fit() || self.state.is_some()
    }

    /// Fits on the training split, replacing any previous state.
    pub fn fit(&mut self, train: &FeatureMatrix, head: &ClassifierHead) -> Result<()> {
        if train.dim() != head.feature_dim() {
            return Err(OodError::DimensionMismatch(format!(
                "training features have {} columns, head expects {}",
                train.dim(),
                head.feature_dim()
            )));
        }
        self.state = match &self.kind {
            MethodKind::Logit { .. } | MethodKind::L1Norm => None,
            MethodKind::React { percentile, .. } => Some(FittedState::React {
                threshold: shaping::fit_react_threshold(train, *percentile)?,
            }),
            MethodKind::Ash { .. } => {
                // nothing to learn, but validate the percentage up front
                None
            }
            MethodKind::Dice { sparsity, .. } => Some(FittedState::Dice(shaping::fit_dice_mask(
                train, head, *sparsity,
            )?)),
            MethodKind::Vim { dim, center, .. } | MethodKind::Residual { dim, center } => {
                let dim = dim.unwrap_or_else(|| vim::default_subspace_dim(train.dim()));
                Some(FittedState::Vim(vim::fit_vim(train, head, dim, *center)?))
            }
            MethodKind::Caref | MethodKind::L1Distance => {
                Some(FittedState::Profile(caref::fit_class_means(train, head)?))
            }
            MethodKind::Cadref { config } => Some(FittedState::Profile(cadref::fit_cadref(
                train, head, config,
            )?)),
        };
        if let MethodKind::Ash { prune_percent, .. } = self.kind {
            if !(0.0..100.0).contains(&prune_percent) {
                return Err(OodError::InvalidConfig(format!(
                    "ASH prune percent {prune_percent} outside [0, 100)"
                )));
            }
        }
        Ok(())
    }

    fn ready_state(&self) -> Result<Option<&FittedState>> {
        if !self.is_ready() {
            return Err(OodError::NotFitted(self.name.clone()));
        }
        Ok(self.state.as_ref())
    }

    /// Scores one feature vector, surfacing every failure as an error.
    pub fn score_one(&self, feature: &[f64], head: &ClassifierHead) -> Result<f64> {
        let state = self.ready_state()?;
        let mismatch =
            || OodError::InvalidState(format!("{} has the wrong fitted state", self.name));
        match (&self.kind, state) {
            (MethodKind::Logit { score }, _) => score.score(&logit::logits_for(feature, head)?),
            (MethodKind::L1Norm, _) => Ok(caref::l1_norm_score(feature)),
            (MethodKind::React { inner, .. }, Some(FittedState::React { threshold })) => {
                shaping::react_score(feature, *threshold, head, inner)
            }
            (
                MethodKind::Ash {
                    variant,
                    prune_percent,
                    inner,
                },
                _,
            ) => shaping::ash_score(feature, *variant, *prune_percent, head, inner),
            (MethodKind::Dice { inner, .. }, Some(FittedState::Dice(mask))) => {
                shaping::dice_score(feature, mask, head, inner)
            }
            (MethodKind::Vim { inner, .. }, Some(FittedState::Vim(model))) => {
                vim::vim_score(feature, model, head, inner)
            }
            (MethodKind::Residual { .. }, Some(FittedState::Vim(model))) => {
                vim::residual_score(feature, model)
            }
            (MethodKind::Caref, Some(FittedState::Profile(p))) => {
                caref::caref_score(feature, p, head)
            }
            (MethodKind::L1Distance, Some(FittedState::Profile(p))) => {
                caref::l1_distance_score(feature, p, head)
            }
            (MethodKind::Cadref { config }, Some(FittedState::Profile(p))) => {
                cadref::cadref_score(feature, p, head, config)
            }
            _ => Err(mismatch()),
        }
    }

    /// Scores every row. Samples that cannot be scored (unusable predicted
    /// class, zero-norm feature, non-positive logit score under error
    /// scaling, fully pruned ASH input) get [`SURROGATE_SCORE`] and are
    /// counted; any other failure aborts the batch.
    pub fn score_batch(
        &self,
        features: &FeatureMatrix,
        head: &ClassifierHead,
    ) -> Result<ScoreBatch> {
        self.ready_state()?;
        if features.dim() != head.feature_dim() {
            return Err(OodError::DimensionMismatch(format!(
                "features have {} columns, head expects {}",
                features.dim(),
                head.feature_dim()
            )));
        }
        let results: Vec<Result<f64>> = (0..features.rows())
            .into_par_iter()
            .map(|i| self.score_one(features.row(i), head))
            .collect();
        let mut warnings = ScoreWarnings::default();
        let mut scores = Vec::with_capacity(results.len());
        for r in results {
            scores.push(match r {
                Ok(s) => s,
                Err(OodError::UnusableClass(_)) => {
                    warnings.unusable_class += 1;
                    SURROGATE_SCORE
                }
                Err(OodError::ZeroNormFeature) => {
                    warnings.zero_norm_feature += 1;
                    SURROGATE_SCORE
                }
                Err(OodError::NonPositiveSampleScore(_)) => {
                    warnings.nonpositive_logit_score += 1;
                    SURROGATE_SCORE
                }
                Err(OodError::AllPruned(_)) => {
                    warnings.all_pruned += 1;
                    SURROGATE_SCORE
                }
                Err(e) => return Err(e),
            });
        }
        if warnings.total() > 0 {
            log::warn!(
                "{}: {} samples scored with the most-OOD surrogate ({warnings:?})",
                self.name,
                warnings.total()
            );
        }
        Ok(ScoreBatch { scores, warnings })
    }

    /// Writes `state.json` and any tensors into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let state = self.ready_state()?;
        fs::create_dir_all(dir).map_err(|e| OodError::io(dir, e))?;
        let meta = match state {
            None => StateMeta::None,
            Some(FittedState::React { threshold }) => StateMeta::React {
                threshold: *threshold,
            },
            Some(FittedState::Dice(mask)) => {
                let values = mask.as_slice().iter().map(|&k| i32::from(k)).collect();
                let t = TensorFile::new(vec![mask.classes(), mask.dim()], TensorData::I32(values))?;
                write_tensor(dir.join("dice_mask.bin"), &t)?;
                StateMeta::Dice
            }
            Some(FittedState::Vim(model)) => {
                write_tensor(
                    dir.join("vim_basis.bin"),
                    &TensorFile::from_matrix(&model.basis),
                )?;
                write_tensor(
                    dir.join("vim_offset.bin"),
                    &TensorFile::from_f64(&model.offset),
                )?;
                StateMeta::Vim {
                    alpha: model.alpha,
                    center: model.center,
                    degenerate_spectrum: model.degenerate_spectrum,
                    alpha_fallback: model.alpha_fallback,
                }
            }
            Some(FittedState::Profile(p)) => {
                write_tensor(
                    dir.join("class_means.bin"),
                    &TensorFile::from_matrix(&p.class_means),
                )?;
                let counts = p.class_counts.iter().map(|&n| n as i32).collect();
                write_tensor(dir.join("class_counts.bin"), &TensorFile::from_i32(counts))?;
                StateMeta::Profile {
                    mean_logit_score: p.mean_logit_score,
                    fitted_with: p.fitted_with,
                }
            }
        };
        let file = StateFile {
            name: self.name.clone(),
            kind: self.kind.clone(),
            state: meta,
        };
        let path = dir.join("state.json");
        let text = serde_json::to_string_pretty(&file).expect("state serializes");
        fs::write(&path, text + "\n").map_err(|e| OodError::io(&path, e))
    }

    /// Reads back what [`MethodSpec::save`] wrote.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("state.json");
        let text = fs::read_to_string(&path).map_err(|e| OodError::io(&path, e))?;
        let file: StateFile =
            serde_json::from_str(&text).map_err(|e| OodError::InvalidState(e.to_string()))?;
        let state = match file.state {
            StateMeta::None => None,
            StateMeta::React { threshold } => Some(FittedState::React { threshold }),
            StateMeta::Dice => {
                let t = read_tensor(dir.join("dice_mask.bin"))?;
                let TensorData::I32(values) = &t.data else {
                    return Err(OodError::InvalidState("dice mask must be i32".into()));
                };
                if t.shape.len() != 2 {
                    return Err(OodError::InvalidState("dice mask must be rank 2".into()));
                }
                let keep = values.iter().map(|&v| v != 0).collect();
                Some(FittedState::Dice(DiceMask::from_keep(
                    t.shape[0], t.shape[1], keep,
                )?))
            }
            StateMeta::Vim {
                alpha,
                center,
                degenerate_spectrum,
                alpha_fallback,
            } => {
                let basis = read_tensor(dir.join("vim_basis.bin"))?.to_matrix("vim_basis")?;
                let offset = read_tensor(dir.join("vim_offset.bin"))?.to_f64();
                if offset.len() != basis.rows() {
                    return Err(OodError::InvalidState("vim offset length".into()));
                }
                let drift = linalg::orthonormality_error(&basis);
                if drift > 1e-8 {
                    return Err(OodError::InvalidState(format!(
                        "vim basis is not orthonormal (max |PᵀP - I| = {drift:e})"
                    )));
                }
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return Err(OodError::InvalidState(format!("vim alpha {alpha}")));
                }
                Some(FittedState::Vim(VimModel {
                    basis,
                    alpha,
                    center,
                    offset,
                    degenerate_spectrum,
                    alpha_fallback,
                }))
            }
            StateMeta::Profile {
                mean_logit_score,
                fitted_with,
            } => {
                let class_means =
                    read_tensor(dir.join("class_means.bin"))?.to_matrix("class_means")?;
                let counts = read_tensor(dir.join("class_counts.bin"))?;
                let TensorData::I32(raw) = &counts.data else {
                    return Err(OodError::InvalidState("class counts must be i32".into()));
                };
                if raw.len() != class_means.rows() || raw.iter().any(|&n| n < 0) {
                    return Err(OodError::InvalidState("class counts".into()));
                }
                Some(FittedState::Profile(ClassProfile {
                    class_means,
                    class_counts: raw.iter().map(|&n| n as usize).collect(),
                    mean_logit_score,
                    fitted_with,
                }))
            }
        };
        let spec = MethodSpec {
            name: file.name,
            kind: file.kind,
            state,
        };
        if !spec.is_ready() {
            return Err(OodError::InvalidState(format!(
                "{} has no fitted state",
                spec.name
            )));
        }
        Ok(spec)
    }
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    name: String,
    #[serde(flatten)]
    kind: MethodKind,
    state: StateMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum StateMeta {
    None,
    React {
        threshold: f64,
    },
    Dice,
    Vim {
        alpha: f64,
        center: VimCenter,
        degenerate_spectrum: bool,
        alpha_fallback: bool,
    },
    Profile {
        mean_logit_score: Option<f64>,
        fitted_with: Option<LogitScore>,
    },
}

/// Runs `f` on a pool of `threads` workers, or the global pool for `None`.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
        {
            Ok(pool) => pool.install(f),
            Err(e) => {
                log::warn!("could not build a {n}-worker pool ({e}); using the global pool");
                f()
            }
        },
        None => f(),
    }
}

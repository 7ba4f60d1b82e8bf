//! Sharpness-aware update rules.
//!
//! Every rule shares the same pipeline: a normalized ascent trail from the
//! current parameters, a rule-specific unit descent direction, a magnitude
//! from the configured [`ScaleStrategy`], and a heavy-ball base step
//! ([`apply_update`]) that carries the resulting vector.
//!
//! | rule               | direction (before renormalization)            |
//! |--------------------|-----------------------------------------------|
//! | `sgd`              | `g_0`                                          |
//! | `sam`              | `g_k`                                          |
//! | `xsam`             | `v(alpha*)` in the plane of `theta_k - theta_0` and `g_k` |
//! | `wsam_fixed_alpha` | `v(fixed_alpha)` in the same plane             |
//! | `msam`             | `sum_{i=1..k} g_i`                             |
//! | `lsam`             | `sum_{i=1..k} g_i / |g_i|`                     |
//! | `msam_plus`        | `sum_{i=0..k} g_i`                             |
//! | `lsam_plus`        | `sum_{i=0..k} g_i / |g_i|`                     |

mod alpha;
mod ascent;
mod scale;
mod schedule;
mod slerp;
mod update;

use serde::{Deserialize, Serialize};

pub(crate) use alpha::first_argmax;
pub use alpha::{alpha_grid, probe_losses, search_alpha, AlphaSearch};
pub use ascent::{ascend, AscentTrail, MIN_GRAD_NORM};
pub use scale::{gradient_scale, ScaleStrategy};
pub use schedule::{lr_at, LrSchedule};
pub use slerp::{slerp, SlerpFrame, MIN_FRAME_ANGLE};
pub use update::apply_update;

use crate::autodiff::{LossSurface, PassCount};
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::param::{GradVector, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Sgd,
    Sam,
    Xsam,
    WsamFixedAlpha,
    Msam,
    Lsam,
    MsamPlus,
    LsamPlus,
}

impl Rule {
    pub const ALL: [Rule; 8] = [
        Rule::Sgd,
        Rule::Sam,
        Rule::Xsam,
        Rule::WsamFixedAlpha,
        Rule::Msam,
        Rule::Lsam,
        Rule::MsamPlus,
        Rule::LsamPlus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rule::Sgd => "sgd",
            Rule::Sam => "sam",
            Rule::Xsam => "xsam",
            Rule::WsamFixedAlpha => "wsam_fixed_alpha",
            Rule::Msam => "msam",
            Rule::Lsam => "lsam",
            Rule::MsamPlus => "msam_plus",
            Rule::LsamPlus => "lsam_plus",
        }
    }
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Rule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Rule::ALL.iter().copied().find(|r| r.name() == s).ok_or_else(|| invalid(format!("unknown rule '{s}'")))
    }
}

/// When the stored `alpha*` is re-searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRefresh {
    /// At the first iteration of each epoch.
    #[default]
    PerEpoch,
    /// Whenever `iteration % n == 0`.
    Every(usize),
    /// Never; the initial value is kept for the whole run.
    Never,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub rule: Rule,
    /// Ascent steps. Ignored by `sgd`.
    pub k: usize,
    /// Per-step ascent radius.
    pub rho: f64,
    /// Probe radius for the alpha search and `slope_m`.
    pub rho_m: f64,
    /// Upper end `a` of the alpha search interval `[0, a]`.
    pub alpha_range: f64,
    pub alpha_samples: usize,
    pub alpha_refresh: AlphaRefresh,
    /// Stored alpha* before the first search.
    pub initial_alpha: f64,
    /// Interpolation factor for `wsam_fixed_alpha`.
    pub fixed_alpha: f64,
    pub scale_strategy: ScaleStrategy,
    pub lr_schedule: LrSchedule,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            rule: Rule::Xsam,
            k: 1,
            rho: 0.05,
            rho_m: 0.1,
            alpha_range: 2.0,
            alpha_samples: 21,
            alpha_refresh: AlphaRefresh::PerEpoch,
            initial_alpha: 1.0,
            fixed_alpha: 1.0,
            scale_strategy: ScaleStrategy::GK,
            lr_schedule: LrSchedule::Constant,
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn with_rule(rule: Rule) -> Self {
        Self { rule, ..Self::default() }
    }

    /// Ascent steps actually taken.
    pub fn ascent_steps(&self) -> usize {
        if self.rule == Rule::Sgd {
            0
        } else {
            self.k
        }
    }

    /// Hard errors, plus soft warnings returned on success.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if self.rule != Rule::Sgd {
            if self.k == 0 {
                return Err(invalid(format!("rule {} needs k >= 1", self.rule)));
            }
            if !(self.rho > 0.0 && self.rho.is_finite()) {
                return Err(invalid(format!("rho must be positive, got {}", self.rho)));
            }
        }
        if !(self.rho_m > 0.0 && self.rho_m.is_finite()) {
            return Err(invalid(format!("rho_m must be positive, got {}", self.rho_m)));
        }
        if self.rule == Rule::Xsam {
            if self.alpha_samples < 2 {
                return Err(invalid("xsam needs alpha_samples >= 2"));
            }
            if !self.alpha_range.is_finite() {
                return Err(invalid("alpha_range must be finite"));
            }
            if self.rho_m < self.rho {
                warnings.push(format!("rho_m ({}) is smaller than rho ({})", self.rho_m, self.rho));
            }
        }
        if let AlphaRefresh::Every(0) = self.alpha_refresh {
            return Err(invalid("alpha_refresh every(0) is not a frequency"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) || !(self.lr0 >= 0.0) {
            return Err(invalid("weight_decay and lr0 must be non-negative"));
        }
        if !self.initial_alpha.is_finite() || !self.fixed_alpha.is_finite() {
            return Err(invalid("alpha values must be finite"));
        }
        Ok(warnings)
    }
}

/// Multi-step configs with the single-step budget split evenly: `rho = rho_star / k`.
pub fn k_sweep(base: &OptimizerConfig, rho_star: f64, ks: &[usize]) -> Vec<OptimizerConfig> {
    ks.iter().map(|&k| OptimizerConfig { k, rho: rho_star / k as f64, ..base.clone() }).collect()
}

/// Position of an iteration within the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepClock {
    pub iteration: usize,
    pub first_in_epoch: bool,
}

/// Recoverable events met during a step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepNote {
    /// Vanishing gradient during ascent; this step used the local gradient.
    DegenerateGradient { step: usize, norm: f64 },
    /// `v0`, `v1` (anti-)parallel; the final ascent gradient direction was used.
    DegenerateFrame { psi: f64 },
    /// Every alpha probe was non-finite; `alpha = 1` was used.
    ProbeFailure,
    /// Rule-specific gradient sum vanished; fell back to `g_k`.
    DegenerateSum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    /// Unit vector, or all zeros when the local gradient itself vanished.
    pub descent_direction: GradVector,
    pub scale: f64,
    pub alpha_star: Option<f64>,
    pub trail: AscentTrail,
    pub loss_at_theta: f64,
    /// Present on iterations that ran the alpha search.
    pub search: Option<AlphaSearch>,
    pub notes: Vec<StepNote>,
}

impl StepResult {
    /// `direction * scale`.
    pub fn update_vector(&self) -> Vec<f64> {
        linalg::scale(&self.descent_direction, self.scale)
    }
}

/// Stateful optimizer: config, momentum buffer and the stored `alpha*`.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    momentum_buf: Vec<f64>,
    alpha_star: f64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        let alpha_star = config.initial_alpha;
        Ok(Self { config, momentum_buf: vec![0.0; dim], alpha_star })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn alpha_star(&self) -> f64 {
        self.alpha_star
    }

    pub fn momentum_buffer(&self) -> &[f64] {
        &self.momentum_buf
    }

    fn refresh_due(&self, clock: StepClock) -> bool {
        match self.config.alpha_refresh {
            AlphaRefresh::PerEpoch => clock.first_in_epoch,
            AlphaRefresh::Every(n) => clock.iteration.is_multiple_of(n),
            AlphaRefresh::Never => false,
        }
    }

    /// Computes this iteration's descent vector without touching `theta`.
    pub fn step<S: LossSurface + ?Sized>(
        &mut self,
        surface: &S,
        theta: &ParamVector,
        clock: StepClock,
        passes: &mut PassCount,
    ) -> Result<StepResult> {
        let cfg = self.config.clone();
        let mut notes = Vec::new();
        let trail = match ascent::run_ascent(surface, theta, cfg.ascent_steps(), cfg.rho, passes)? {
            Ok(trail) => trail,
            Err(stalled) => {
                notes.push(StepNote::DegenerateGradient { step: stalled.step, norm: stalled.norm });
                return Ok(local_gradient_step(stalled.trail, notes));
            }
        };
        let loss_at_theta = trail.losses[0];
        let gk = trail.last_grad();
        let unit_gk = || GradVector::from_raw(linalg::normalized(gk, MIN_GRAD_NORM).expect("non-degenerate g_k"));

        let mut search = None;
        let mut alpha_star = None;
        let direction = match cfg.rule {
            Rule::Sgd => {
                if trail.grads[0].norm() < MIN_GRAD_NORM {
                    notes.push(StepNote::DegenerateGradient { step: 0, norm: trail.grads[0].norm() });
                    return Ok(local_gradient_step(trail, notes));
                }
                unit_gk()
            }
            Rule::Sam => {
                if gk.norm() < MIN_GRAD_NORM {
                    notes.push(StepNote::DegenerateGradient { step: trail.k(), norm: gk.norm() });
                    return Ok(local_gradient_step(trail, notes));
                }
                unit_gk()
            }
            Rule::Xsam | Rule::WsamFixedAlpha => {
                let displacement = linalg::sub(trail.last_point(), trail.origin());
                match SlerpFrame::from_directions(&displacement, gk) {
                    Err(Error::DegenerateFrame { psi }) => {
                        notes.push(StepNote::DegenerateFrame { psi });
                        if gk.norm() < MIN_GRAD_NORM {
                            notes.push(StepNote::DegenerateGradient { step: trail.k(), norm: gk.norm() });
                            return Ok(local_gradient_step(trail, notes));
                        }
                        alpha_star = Some(if cfg.rule == Rule::Xsam { self.alpha_star } else { cfg.fixed_alpha });
                        unit_gk()
                    }
                    Err(e) => return Err(e),
                    Ok(frame) => {
                        let alpha = if cfg.rule == Rule::WsamFixedAlpha {
                            cfg.fixed_alpha
                        } else if self.refresh_due(clock) {
                            match search_alpha(
                                surface,
                                theta,
                                &frame,
                                cfg.rho_m,
                                cfg.alpha_range,
                                cfg.alpha_samples,
                                passes,
                            ) {
                                Ok(s) => {
                                    self.alpha_star = s.alpha_star;
                                    search = Some(s);
                                    self.alpha_star
                                }
                                Err(Error::ProbeFailure(_)) => {
                                    notes.push(StepNote::ProbeFailure);
                                    1.0
                                }
                                Err(e) => return Err(e),
                            }
                        } else {
                            self.alpha_star
                        };
                        alpha_star = Some(alpha);
                        frame.at(alpha)
                    }
                }
            }
            Rule::Msam | Rule::Lsam | Rule::MsamPlus | Rule::LsamPlus => {
                let from = if matches!(cfg.rule, Rule::MsamPlus | Rule::LsamPlus) { 0 } else { 1 };
                let per_step_unit = matches!(cfg.rule, Rule::Lsam | Rule::LsamPlus);
                let mut sum = vec![0.0; theta.dim()];
                for g in &trail.grads[from..] {
                    let w = if per_step_unit { 1.0 / g.norm() } else { 1.0 };
                    if !w.is_finite() {
                        continue;
                    }
                    for (s, x) in sum.iter_mut().zip(g.iter()) {
                        *s += w * x;
                    }
                }
                match linalg::normalized(&sum, MIN_GRAD_NORM) {
                    Some(d) => GradVector::from_raw(d),
                    None => {
                        notes.push(StepNote::DegenerateSum);
                        if gk.norm() < MIN_GRAD_NORM {
                            return Ok(local_gradient_step(trail, notes));
                        }
                        unit_gk()
                    }
                }
            }
        };

        let probe_loss = search.as_ref().map(AlphaSearch::best_loss);
        let scale = gradient_scale(
            cfg.scale_strategy,
            &trail,
            surface,
            theta,
            Some(&direction),
            cfg.rho_m,
            probe_loss,
            passes,
        )?;
        Ok(StepResult { descent_direction: direction, scale, alpha_star, trail, loss_at_theta, search, notes })
    }

    /// Feeds `result` into the momentum buffer and returns the next iterate.
    pub fn apply(&mut self, theta: &ParamVector, result: &StepResult, lr: f64) -> Result<ParamVector> {
        apply_update(
            theta,
            &result.descent_direction,
            result.scale,
            lr,
            &mut self.momentum_buf,
            self.config.momentum,
            self.config.weight_decay,
        )
    }
}

/// Plain gradient step from the first point of `trail`; zero update at a stationary point.
fn local_gradient_step(mut trail: AscentTrail, notes: Vec<StepNote>) -> StepResult {
    let g0 = trail.grads[0].clone();
    let loss_at_theta = trail.losses[0];
    let (direction, scale) = match linalg::normalized(&g0, MIN_GRAD_NORM) {
        Some(d) => (GradVector::from_raw(d), g0.norm()),
        None => (GradVector::from_raw(vec![0.0; g0.dim()]), 0.0),
    };
    trail.points.truncate(1);
    trail.grads.truncate(1);
    trail.losses.truncate(1);
    trail.radii.clear();
    StepResult { descent_direction: direction, scale, alpha_star: None, trail, loss_at_theta, search: None, notes }
}

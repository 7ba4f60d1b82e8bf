//! Brute-force and closed-form verifiers on exact quadratics.
//!
//! On `L(x) = L0 + g0'(x - t0) + (x - t0)'H(x - t0)/2` the gradient is affine,
//! so one normalized ascent step of radius `rho` gives exactly
//! `g1 = g0 + rho H g0 / |g0|` and every directional comparison is a
//! polynomial in the probe radius.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{raw_loss, LossSurface};
use crate::error::{invalid, Error, Result};
use crate::landscapes::make_quadratic;
use crate::linalg;
use crate::optimizers::SlerpFrame;
use crate::param::ParamVector;

/// `g0` counts as an eigenvector of `H` when `|cos(g0, H g0)|` exceeds this.
pub const EIGENVECTOR_COS: f64 = 1.0 - 1e-8;

/// Replayable trial parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    /// Row-major rows of `H`.
    pub h: Vec<Vec<f64>>,
    pub g0: Vec<f64>,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prop1Trial {
    h: DMatrix<f64>,
    g0: Vec<f64>,
    rho: f64,
    g1: Vec<f64>,
    lambda1: f64,
}

fn matvec(h: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (h * DVector::from_column_slice(v)).as_slice().to_vec()
}

impl Prop1Trial {
    pub fn new(h: DMatrix<f64>, g0: Vec<f64>, rho: f64) -> Result<Self> {
        let n = g0.len();
        if h.nrows() != n || h.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: h.nrows() });
        }
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(invalid(format!("rho must be positive, got {rho}")));
        }
        if crate::autodiff::asymmetry(&h) > 1e-12 {
            return Err(Error::Asymmetric(crate::autodiff::asymmetry(&h)));
        }
        let eig = SymmetricEigen::new(h.clone()).eigenvalues;
        let lambda1 = eig.max();
        if !(eig.min() > 0.0) {
            return Err(Error::RejectedTrial("H is not positive definite".into()));
        }
        let g0_norm = linalg::norm(&g0);
        if !(g0_norm > 0.0) || !g0_norm.is_finite() {
            return Err(Error::RejectedTrial("g0 must be a finite nonzero vector".into()));
        }
        let hg0 = matvec(&h, &g0);
        let cos = linalg::dot(&g0, &hg0) / (g0_norm * linalg::norm(&hg0));
        if cos.abs() > EIGENVECTOR_COS {
            return Err(Error::RejectedTrial(format!("g0 is an eigenvector of H (|cos| = {})", cos.abs())));
        }
        let g1 = linalg::add_scaled(&g0, rho / g0_norm, &hg0);
        Ok(Self { h, g0, rho, g1, lambda1 })
    }

    pub fn from_spec(spec: &TrialSpec) -> Result<Self> {
        let n = spec.h.len();
        if spec.h.iter().any(|r| r.len() != n) {
            return Err(invalid("H rows have unequal lengths"));
        }
        let h = DMatrix::from_row_iterator(n, n, spec.h.iter().flatten().copied());
        Self::new(h, spec.g0.clone(), spec.rho)
    }

    pub fn spec(&self) -> TrialSpec {
        TrialSpec {
            h: self.h.row_iter().map(|r| r.iter().copied().collect()).collect(),
            g0: self.g0.clone(),
            rho: self.rho,
        }
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn g0(&self) -> &[f64] {
        &self.g0
    }

    pub fn g1(&self) -> &[f64] {
        &self.g1
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    fn quad_form(&self, v: &[f64]) -> f64 {
        linalg::dot(v, &matvec(&self.h, v))
    }

    /// `L(t0 + r g1/|g1|) - L(t0 + r g0/|g0|)` on the exact quadratic.
    ///
    /// The linear part is written as `-r |g0| |u1 - u0|^2 / 2`, which avoids
    /// cancelling two nearly equal projections at small `r`.
    pub fn gap(&self, r: f64) -> f64 {
        let (lin, quad) = self.gap_coefficients();
        r * lin + r * r * quad
    }

    /// `(c1, c2)` with `gap(r) = c1 r + c2 r^2`.
    pub fn gap_coefficients(&self) -> (f64, f64) {
        let u0 = linalg::scale(&self.g0, 1.0 / linalg::norm(&self.g0));
        let u1 = linalg::scale(&self.g1, 1.0 / linalg::norm(&self.g1));
        let d = linalg::sub(&u1, &u0);
        let lin = -linalg::norm(&self.g0) * linalg::dot(&d, &d) / 2.0;
        let quad = (self.quad_form(&u1) - self.quad_form(&u0)) / 2.0;
        (lin, quad)
    }

    /// Rayleigh quotient of `g_alpha = alpha g1 + (1 - alpha) g0`.
    pub fn ratio(&self, alpha: f64) -> f64 {
        let ga: Vec<f64> = self.g0.iter().zip(&self.g1).map(|(a, b)| alpha * b + (1.0 - alpha) * a).collect();
        self.quad_form(&ga) / linalg::dot(&ga, &ga)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Part1Report {
    /// Refined crossing radius, when the scan found one.
    pub rho0: Option<f64>,
    /// `-c1 / c2` from the gap polynomial, for comparison.
    pub rho0_closed_form: Option<f64>,
    pub verified: bool,
    /// Every sample below the crossing had a negative gap.
    pub single_crossing: bool,
    pub holds_at: Vec<(f64, bool)>,
    pub diagnostics: String,
}

const SCAN_POINTS: usize = 241;

/// Scans the probe radius over `[1e-3, 1e3] |g0| / lambda1` (extended downward until the
/// gap turns negative) and locates the radius above which the `g1` direction climbs higher.
pub fn run_prop1_part1(trial: &Prop1Trial) -> Part1Report {
    let unit = linalg::norm(&trial.g0) / trial.lambda1;
    let mut lo = 1e-3 * unit;
    let hi = 1e3 * unit;
    let mut extensions = 0;
    while trial.gap(lo) >= 0.0 && extensions < 12 {
        lo /= 10.0;
        extensions += 1;
    }
    let ratio = (hi / lo).ln();
    let radii: Vec<f64> = (0..SCAN_POINTS).map(|i| lo * (ratio * i as f64 / (SCAN_POINTS - 1) as f64).exp()).collect();
    let gaps: Vec<f64> = radii.iter().map(|&r| trial.gap(r)).collect();
    let holds_at: Vec<(f64, bool)> = radii.iter().zip(&gaps).map(|(&r, &g)| (r, g > 0.0)).collect();
    let (c1, c2) = trial.gap_coefficients();
    let rho0_closed_form = (c2 > 0.0 && c1 < 0.0).then(|| -c1 / c2);

    let last_non_positive = gaps.iter().rposition(|&g| g <= 0.0);
    let report = |rho0, verified, single, diagnostics: String| Part1Report {
        rho0,
        rho0_closed_form,
        verified,
        single_crossing: single,
        holds_at: holds_at.clone(),
        diagnostics,
    };
    match last_non_positive {
        None => report(None, false, false, format!("gap positive down to r = {lo:e}; no crossing")),
        Some(i) if i + 1 == SCAN_POINTS => {
            report(None, false, false, format!("gap not positive at r = {hi:e}; c1 = {c1:e}, c2 = {c2:e}"))
        }
        Some(i) => {
            let (mut a, mut b) = (radii[i], radii[i + 1]);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if m <= a || m >= b {
                    break;
                }
                if trial.gap(m) > 0.0 {
                    b = m;
                } else {
                    a = m;
                }
            }
            let single = gaps[..=i].iter().all(|&g| g < 0.0);
            report(Some(b), true, single, format!("{extensions} downward extensions"))
        }
    }
}

pub const PART2_GRID: (f64, f64, usize) = (-2.0, 4.0, 601);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Part2Report {
    pub alpha_witness: Option<f64>,
    /// `f(witness) - f(1)`.
    pub gain: f64,
}

/// Searches `alphas` for `f(alpha) > f(1)`, preferring the best witness with `alpha > 1`.
pub fn run_prop1_part2(trial: &Prop1Trial, alphas: &[f64]) -> Part2Report {
    let f1 = trial.ratio(1.0);
    let scored: Vec<(f64, f64)> = alphas.iter().map(|&a| (a, trial.ratio(a) - f1)).collect();
    let best = |pred: &dyn Fn(f64) -> bool| {
        scored.iter().filter(|(a, d)| pred(*a) && *d > 0.0 && d.is_finite()).fold(
            None,
            |acc: Option<(f64, f64)>, &(a, d)| match acc {
                Some((_, bd)) if bd >= d => acc,
                _ => Some((a, d)),
            },
        )
    };
    match best(&|a| a > 1.0).or_else(|| best(&|_| true)) {
        Some((a, d)) => Part2Report { alpha_witness: Some(a), gain: d },
        None => Part2Report { alpha_witness: None, gain: 0.0 },
    }
}

pub fn part2_grid() -> Vec<f64> {
    let (lo, hi, n) = PART2_GRID;
    (0..n).map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTermReport {
    pub cauchy_schwarz_gap: f64,
    pub chebyshev_gap_1: f64,
    pub chebyshev_gap_2: f64,
    /// Magnitudes of the subtracted products, for relative slack.
    pub scales: [f64; 3],
}

impl SignTermReport {
    /// CS gap strictly positive, Chebyshev gaps non-negative within `slack` relative to their scale.
    pub fn holds(&self, slack: f64) -> bool {
        self.cauchy_schwarz_gap > -slack * self.scales[0]
            && self.chebyshev_gap_1 >= -slack * self.scales[1]
            && self.chebyshev_gap_2 >= -slack * self.scales[2]
    }
}

pub fn sign_terms(h: &DMatrix<f64>, g0: &[f64]) -> SignTermReport {
    let hg = matvec(h, g0);
    let h2g = matvec(h, &hg);
    let m0 = linalg::dot(g0, g0);
    let m1 = linalg::dot(g0, &hg);
    let m2 = linalg::dot(&hg, &hg);
    let m3 = linalg::dot(&hg, &h2g);
    SignTermReport {
        cauchy_schwarz_gap: m0 * m2 - m1 * m1,
        chebyshev_gap_1: m0 * m3 - m1 * m2,
        chebyshev_gap_2: m3 * m1 - m2 * m2,
        scales: [m0 * m2, m0 * m3, m3 * m1],
    }
}

/// Brute-force argmax of `L(theta + rho_m v(alpha))` over `n_dense` points of `[0, a]`.
///
/// Builds the direction as `cos(alpha psi) v0 + sin(alpha psi) u` with `u` the unit
/// component of `v1` orthogonal to `v0`, evaluates sequentially, and breaks ties
/// toward the smallest alpha. Returns None when no probe is finite.
pub fn dense_argmax_direction<S: LossSurface + ?Sized>(
    surface: &S,
    theta: &ParamVector,
    frame: &SlerpFrame,
    rho_m: f64,
    a: f64,
    n_dense: usize,
) -> Option<f64> {
    let v0 = frame.v0();
    let v1 = frame.v1();
    let c = linalg::dot(v0, v1).clamp(-1.0, 1.0);
    let psi = c.acos();
    let u = linalg::normalized(&linalg::add_scaled(v1, -c, v0), 0.0)?;
    let mut best: Option<(f64, f64)> = None;
    for i in 0..n_dense {
        let alpha = a * i as f64 / (n_dense - 1) as f64;
        let (s, co) = (alpha * psi).sin_cos();
        let p: Vec<f64> = theta.iter().zip(v0.iter().zip(&u)).map(|(t, (x, y))| t + rho_m * (co * x + s * y)).collect();
        let l = raw_loss(surface, &p);
        if l.is_finite() && best.is_none_or(|(_, bl)| l > bl) {
            best = Some((alpha, l));
        }
    }
    best.map(|(alpha, _)| alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub trials: usize,
    /// Inclusive dimension range.
    pub dims: (usize, usize),
    pub eig_range: (f64, f64),
    /// `rho` is log-uniform on this range times `|g0| / lambda1`.
    pub rho_range: (f64, f64),
    pub seed: u64,
    /// Extra hand-written trials, checked after the random ones.
    pub extra_trials: Vec<TrialSpec>,
    /// Relative slack for the sign-term contracts.
    pub sign_slack: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            dims: (2, 10),
            eig_range: (0.1, 10.0),
            rho_range: (1e-3, 1.0),
            seed: 0,
            extra_trials: Vec::new(),
            sign_slack: 1e-12,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.0 < 2 || self.dims.1 < self.dims.0 {
            return Err(invalid("dims must satisfy 2 <= lo <= hi"));
        }
        if !(self.eig_range.0 > 0.0 && self.eig_range.1 >= self.eig_range.0) {
            return Err(invalid("eig_range must satisfy 0 < lo <= hi"));
        }
        if !(self.rho_range.0 > 0.0 && self.rho_range.1 >= self.rho_range.0) {
            return Err(invalid("rho_range must satisfy 0 < lo <= hi"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub index: usize,
    pub dim: usize,
    pub rho: f64,
    pub rho0: Option<f64>,
    pub rho0_closed_form: Option<f64>,
    pub part1_verified: bool,
    pub alpha_witness: Option<f64>,
    pub witness_gain: f64,
    pub sign_terms: SignTermReport,
    pub sign_terms_hold: bool,
}

impl TrialOutcome {
    pub fn passed(&self) -> bool {
        self.part1_verified && self.alpha_witness.is_some() && self.sign_terms_hold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub index: usize,
    pub reason: String,
    pub trial: TrialSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub trials: usize,
    pub valid: usize,
    /// Hand-written trials rejected at construction.
    pub rejected: usize,
    /// Invalid random draws replaced before evaluation.
    pub redraws: usize,
    pub part1_verified: usize,
    pub part2_witnessed: usize,
    pub sign_terms_ok: usize,
    pub verified: usize,
    pub failures: Vec<TrialFailure>,
    pub rejections: Vec<TrialFailure>,
    /// Crossing radii relative to `|g0| / lambda1`: min, median, max over verified trials.
    pub rho0_relative: Option<[f64; 3]>,
}

impl OracleReport {
    pub fn all_verified(&self) -> bool {
        self.failures.is_empty() && self.verified == self.valid
    }
}

/// Draws allowed per random trial before giving up.
const MAX_DRAWS: usize = 64;

/// The random trial with index `i` of a batch, and how many invalid draws were discarded first.
///
/// Draws continue on the trial's own stream until the trial is valid, so nearly
/// degenerate spectra (every `g0` close to an eigenvector) do not shrink the batch.
pub fn random_trial_spec(cfg: &OracleConfig, i: usize) -> Result<(TrialSpec, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(i as u64);
    for draw in 0..MAX_DRAWS {
        let dim = rng.random_range(cfg.dims.0..=cfg.dims.1);
        let q = make_quadratic(dim, cfg.eig_range, rng.random())?;
        let g0: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let lambda1 = q.eigenvalues.as_ref().map(|e| e.iter().copied().fold(0.0, f64::max)).unwrap_or(cfg.eig_range.1);
        let (lo, hi) = (cfg.rho_range.0.ln(), cfg.rho_range.1.ln());
        let rel = if hi > lo { rng.random_range(lo..hi).exp() } else { cfg.rho_range.0 };
        let rho = rel * linalg::norm(&g0) / lambda1;
        let spec = TrialSpec { h: q.h.row_iter().map(|r| r.iter().copied().collect()).collect(), g0, rho };
        if Prop1Trial::from_spec(&spec).is_ok() {
            return Ok((spec, draw));
        }
    }
    Err(Error::Config(format!("trial {i}: no valid draw in {MAX_DRAWS} attempts; widen eig_range")))
}

pub fn evaluate_trial(index: usize, trial: &Prop1Trial, sign_slack: f64) -> TrialOutcome {
    let p1 = run_prop1_part1(trial);
    let p2 = run_prop1_part2(trial, &part2_grid());
    let st = sign_terms(trial.h(), trial.g0());
    TrialOutcome {
        index,
        dim: trial.g0().len(),
        rho: trial.rho(),
        rho0: p1.rho0,
        rho0_closed_form: p1.rho0_closed_form,
        part1_verified: p1.verified,
        alpha_witness: p2.alpha_witness,
        witness_gain: p2.gain,
        sign_terms: st,
        sign_terms_hold: st.holds(sign_slack) && st.cauchy_schwarz_gap > 0.0,
    }
}

/// Runs the random batch plus `extra_trials` in parallel and aggregates the outcomes.
pub fn run_oracle_batch(cfg: &OracleConfig) -> Result<OracleReport> {
    cfg.validate()?;
    let drawn = (0..cfg.trials).map(|i| random_trial_spec(cfg, i)).collect::<Result<Vec<_>>>()?;
    let redraws = drawn.iter().map(|(_, d)| d).sum();
    let mut specs: Vec<TrialSpec> = drawn.into_iter().map(|(s, _)| s).collect();
    specs.extend(cfg.extra_trials.iter().cloned());
    let results: Vec<(TrialSpec, std::result::Result<TrialOutcome, String>)> = specs
        .into_par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let out = match Prop1Trial::from_spec(&spec) {
                Ok(t) => Ok(evaluate_trial(i, &t, cfg.sign_slack)),
                Err(e) => Err(e.to_string()),
            };
            (spec, out)
        })
        .collect();

    let mut report = OracleReport {
        trials: results.len(),
        valid: 0,
        rejected: 0,
        redraws,
        part1_verified: 0,
        part2_witnessed: 0,
        sign_terms_ok: 0,
        verified: 0,
        failures: Vec::new(),
        rejections: Vec::new(),
        rho0_relative: None,
    };
    let mut rel = Vec::new();
    for (i, (spec, out)) in results.into_iter().enumerate() {
        match out {
            Err(reason) => {
                report.rejected += 1;
                report.rejections.push(TrialFailure { index: i, reason, trial: spec });
            }
            Ok(o) => {
                report.valid += 1;
                report.part1_verified += o.part1_verified as usize;
                report.part2_witnessed += o.alpha_witness.is_some() as usize;
                report.sign_terms_ok += o.sign_terms_hold as usize;
                if o.passed() {
                    report.verified += 1;
                    let t = Prop1Trial::from_spec(&spec).expect("validated above");
                    if let Some(r0) = o.rho0 {
                        rel.push(r0 * t.lambda1() / linalg::norm(t.g0()));
                    }
                } else {
                    let mut why = Vec::new();
                    if !o.part1_verified {
                        why.push("part 1 unverified");
                    }
                    if o.alpha_witness.is_none() {
                        why.push("no part 2 witness");
                    }
                    if !o.sign_terms_hold {
                        why.push("sign terms violated");
                    }
                    report.failures.push(TrialFailure { index: i, reason: why.join(", "), trial: spec });
                }
            }
        }
    }
    if !rel.is_empty() {
        rel.sort_by(f64::total_cmp);
        report.rho0_relative = Some([rel[0], rel[rel.len() / 2], rel[rel.len() - 1]]);
    }
    Ok(report)
}

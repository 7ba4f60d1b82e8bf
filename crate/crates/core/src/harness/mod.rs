//! Experiment driver: trajectories, training runs, probes and oracle batches,
//! with pass-count ledgers and file output.

mod config;
pub mod io;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{DataConfig, ExperimentConfig, ProbeRequest, Surface, SurfaceConfig};
pub use io::Checkpoint;

use crate::autodiff::{gradient, raw_loss, LossSurface, PassCount};
use crate::error::{Error, Result};
use crate::linalg;
use crate::optimizers::{ascend, lr_at, Optimizer, Rule, SlerpFrame, StepClock};
use crate::oracle::{run_oracle_batch, OracleReport};
use crate::param::ParamVector;
use crate::probes::{self, SharpnessReport, SurfaceGrid};
use config::{config_error, require};
use io::{fmt_f64, fmt_opt, write_csv, write_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub epoch: usize,
    /// Loss at the iterate before the update, on the iteration's batch.
    pub loss: f64,
    pub alpha_star: Option<f64>,
    /// Norm of the gradient at the iterate.
    pub grad_norm: f64,
    pub lr: f64,
    /// 1 when the update left the domain and was projected back.
    pub clamps_triggered: u32,
    /// Cumulative counts after this iteration.
    pub forwards: u64,
    pub backwards: u64,
}

/// Optimizer pass accounting for one run. Evaluation passes (metrics, final
/// losses, probes) are not included.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub rule: String,
    pub forwards: u64,
    pub backwards: u64,
    /// Forwards spent inside alpha searches.
    pub probe_forwards: u64,
    pub alpha_searches: u64,
    pub per_iteration: Vec<IterRecord>,
    pub wall_time_ms: u64,
}

impl RunLedger {
    pub fn passes(&self) -> PassCount {
        PassCount { forwards: self.forwards, backwards: self.backwards }
    }
}

struct Driver {
    optimizer: Optimizer,
    passes: PassCount,
    ledger: RunLedger,
}

impl Driver {
    fn new(cfg: &ExperimentConfig, dim: usize) -> Result<Self> {
        let optimizer = Optimizer::new(cfg.optimizer.clone(), dim).map_err(config_error)?;
        let ledger = RunLedger { rule: cfg.optimizer.rule.to_string(), ..RunLedger::default() };
        Ok(Self { optimizer, passes: PassCount::default(), ledger })
    }

    fn iterate(
        &mut self,
        surface: &dyn LossSurface,
        theta: &ParamVector,
        clock: StepClock,
        epoch: usize,
        lr: f64,
    ) -> Result<ParamVector> {
        let r = self.optimizer.step(surface, theta, clock, &mut self.passes)?;
        let mut next = self.optimizer.apply(theta, &r, lr)?.into_inner();
        let clamped = surface.clamp_to_domain(&mut next);
        if let Some(s) = &r.search {
            self.ledger.alpha_searches += 1;
            self.ledger.probe_forwards += s.alphas.len() as u64;
        }
        self.ledger.per_iteration.push(IterRecord {
            iter: clock.iteration,
            epoch,
            loss: r.loss_at_theta,
            alpha_star: r.alpha_star,
            grad_norm: r.trail.grads[0].norm(),
            lr,
            clamps_triggered: clamped as u32,
            forwards: self.passes.forwards,
            backwards: self.passes.backwards,
        });
        ParamVector::new(next)
    }

    fn finish(mut self, started: Instant) -> RunLedger {
        self.ledger.forwards = self.passes.forwards;
        self.ledger.backwards = self.passes.backwards;
        self.ledger.wall_time_ms = started.elapsed().as_millis() as u64;
        self.ledger
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRun {
    /// `iterations + 1` iterates, starting point first.
    pub points: Vec<ParamVector>,
    /// Loss at each iterate.
    pub losses: Vec<f64>,
    pub ledger: RunLedger,
}

impl TrajectoryRun {
    pub fn endpoint(&self) -> &ParamVector {
        self.points.last().expect("non-empty trajectory")
    }
}

/// Runs `iterations` optimizer steps on a 2D analytic surface. Every iteration is its own epoch.
pub fn run_trajectory(cfg: &ExperimentConfig) -> Result<TrajectoryRun> {
    cfg.validate()?;
    require(!cfg.surface.is_mlp(), "trajectory needs an analytic surface, not an MLP")?;
    let (surface, start) = cfg.instantiate()?;
    let s = surface.as_dyn();
    require(s.dim() == 2, "trajectory needs a 2D surface")?;
    let started = Instant::now();
    let mut driver = Driver::new(cfg, s.dim())?;
    let mut theta = start;
    let mut points = vec![theta.clone()];
    let mut losses = vec![raw_loss(s, &theta)];
    for t in 0..cfg.iterations {
        let lr = lr_at(cfg.optimizer.lr_schedule, cfg.optimizer.lr0, t, cfg.iterations);
        theta = driver.iterate(s, &theta, StepClock { iteration: t, first_in_epoch: true }, t, lr)?;
        losses.push(raw_loss(s, &theta));
        points.push(theta.clone());
    }
    Ok(TrajectoryRun { points, losses, ledger: driver.finish(started) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub alpha_star: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub metrics: Vec<EpochMetrics>,
    pub final_params: ParamVector,
    pub ledger: RunLedger,
    /// `(epoch, alpha, loss)` rows when an alpha probe was requested.
    pub alpha_curves: Vec<(usize, f64, f64)>,
    pub snapshots: Vec<(usize, ParamVector)>,
}

fn checkpoint_for(cfg: &ExperimentConfig, surface: &Surface, params: ParamVector) -> Checkpoint {
    Checkpoint {
        params,
        layer_widths: surface.mlp().map(|m| m.spec().layer_widths.clone()),
        seed: cfg.seed,
        rule: cfg.optimizer.rule.to_string(),
    }
}

/// Alpha probe curve at `theta` from a fresh ascent; passes go to a scratch count.
fn alpha_curve(
    cfg: &ExperimentConfig,
    s: &dyn LossSurface,
    theta: &ParamVector,
    normalize: bool,
) -> Result<Vec<(f64, f64)>> {
    let o = &cfg.optimizer;
    let mut scratch = PassCount::default();
    let trail = ascend(s, theta, o.k.max(1), o.rho, &mut scratch)?;
    let frame = SlerpFrame::from_directions(&linalg::sub(trail.last_point(), trail.origin()), trail.last_grad())?;
    probes::alpha_landscape(s, theta, &frame, o.rho_m, o.alpha_range, o.alpha_samples, normalize, &mut scratch)
}

/// Minibatch training of an MLP surface.
///
/// `snapshot_dir` receives periodic checkpoints and, if the loss diverges, a
/// checkpoint of the last finite iterate before the error is returned.
pub fn run_training(cfg: &ExperimentConfig, snapshot_dir: Option<&Path>) -> Result<TrainingRun> {
    cfg.validate()?;
    require(cfg.surface.is_mlp(), "train needs an MLP surface")?;
    let (mut surface, start) = cfg.instantiate()?;
    let batches = surface.as_dyn().num_batches();
    let total = cfg.epochs * batches;
    let started = Instant::now();
    let mut driver = Driver::new(cfg, start.dim())?;
    let alpha_probe = cfg.probes.iter().find_map(|p| match p {
        ProbeRequest::Alpha { normalize } => Some(*normalize),
        _ => None,
    });
    let mut theta = start;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut alpha_curves = Vec::new();
    let mut snapshots = Vec::new();
    for epoch in 0..cfg.epochs {
        let epoch_lr = lr_at(cfg.optimizer.lr_schedule, cfg.optimizer.lr0, epoch * batches, total);
        for b in 0..batches {
            let t = epoch * batches + b;
            surface.as_dyn_mut().set_batch(b);
            let s = surface.as_dyn();
            if b == 0 {
                if let Some(normalize) = alpha_probe {
                    match alpha_curve(cfg, s, &theta, normalize) {
                        Ok(curve) => alpha_curves.extend(curve.into_iter().map(|(a, l)| (epoch, a, l))),
                        Err(Error::DegenerateFrame { .. } | Error::DegenerateGradient { .. }) => {}
                        Err(e) => return Err(e),
                    }
                }
            }
            let lr = lr_at(cfg.optimizer.lr_schedule, cfg.optimizer.lr0, t, total);
            match driver.iterate(s, &theta, StepClock { iteration: t, first_in_epoch: b == 0 }, epoch, lr) {
                Ok(next) => theta = next,
                Err(e) => {
                    if let Some(dir) = snapshot_dir {
                        checkpoint_for(cfg, &surface, theta.clone()).save(&dir.join("diverged_checkpoint.txt"))?;
                    }
                    return Err(Error::NonFinite(format!("training diverged at epoch {epoch}, iteration {t}: {e}")));
                }
            }
        }
        let m = surface.mlp().expect("checked above");
        let train_loss = m.full_loss(&theta);
        if !train_loss.is_finite() {
            if let Some(dir) = snapshot_dir {
                checkpoint_for(cfg, &surface, theta.clone()).save(&dir.join("diverged_checkpoint.txt"))?;
            }
            return Err(Error::NonFinite(format!("training loss {train_loss} after epoch {epoch}")));
        }
        let alpha_star = match cfg.optimizer.rule {
            Rule::Xsam => Some(driver.optimizer.alpha_star()),
            Rule::WsamFixedAlpha => Some(cfg.optimizer.fixed_alpha),
            _ => None,
        };
        metrics.push(EpochMetrics { epoch, train_loss, train_acc: m.accuracy(&theta), alpha_star, lr: epoch_lr });
        if cfg.snapshot_every > 0 && (epoch + 1) % cfg.snapshot_every == 0 {
            if let Some(dir) = snapshot_dir {
                checkpoint_for(cfg, &surface, theta.clone())
                    .save(&dir.join(format!("checkpoint_epoch{}.txt", epoch + 1)))?;
            }
            snapshots.push((epoch + 1, theta.clone()));
        }
    }
    surface.as_dyn_mut().set_batch(0);
    Ok(TrainingRun { metrics, final_params: theta, ledger: driver.finish(started), alpha_curves, snapshots })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProbeRun {
    pub grid: Option<SurfaceGrid>,
    pub gap: Option<Vec<(f64, f64)>>,
    pub alpha: Option<Vec<(usize, f64, f64)>>,
    pub sharpness: Option<SharpnessReport>,
    /// Non-fatal problems, one line each.
    pub notes: Vec<String>,
}

/// Parameters a probe run is centred on: the checkpoint, else `start`, else the surface default.
pub fn probe_point(cfg: &ExperimentConfig) -> Result<(Surface, ParamVector)> {
    let (surface, start) = cfg.instantiate()?;
    let theta = match &cfg.checkpoint {
        Some(p) => {
            let c = Checkpoint::load(p)?;
            c.params.check_dim(surface.as_dyn().dim()).map_err(config_error)?;
            c.params
        }
        None => start,
    };
    Ok((surface, theta))
}

/// Runs every requested probe on the first batch. Degenerate geometry is noted, not fatal.
pub fn run_probe(cfg: &ExperimentConfig) -> Result<ProbeRun> {
    cfg.validate()?;
    let (mut surface, theta) = probe_point(cfg)?;
    surface.as_dyn_mut().set_batch(0);
    let s = surface.as_dyn();
    let o = &cfg.optimizer;
    let mut out = ProbeRun::default();
    let mut scratch = PassCount::default();
    let g0 = gradient(s, &theta, &mut scratch)?;
    let g1 = ascend(s, &theta, 1, o.rho, &mut scratch).map(|t| t.last_grad().clone());
    for req in &cfg.probes {
        match req {
            ProbeRequest::Grid { resolution, x_range, y_range } => {
                let basis = match g1.as_ref().map_err(Clone::clone).and_then(|g1| probes::plane_basis(&theta, &g0, g1))
                {
                    Ok(b) => b,
                    Err(e) => {
                        out.notes.push(format!("grid: {e}"));
                        continue;
                    }
                };
                let r = 2.0 * o.rho_m;
                let grid = probes::surface_grid(
                    s,
                    &basis,
                    x_range.unwrap_or((-r, r)),
                    y_range.unwrap_or((-r, r)),
                    *resolution,
                    &mut scratch,
                )?;
                if !grid.flagged.is_empty() {
                    out.notes.push(format!("grid: {} non-finite cells", grid.flagged.len()));
                }
                out.grid = Some(grid);
            }
            ProbeRequest::Gap { rho_ms } => match &g1 {
                Ok(g1) => out.gap = Some(probes::directional_loss_gap(s, &theta, &g0, g1, rho_ms, &mut scratch)?),
                Err(e) => out.notes.push(format!("gap: {e}")),
            },
            ProbeRequest::Alpha { normalize } => match alpha_curve(cfg, s, &theta, *normalize) {
                Ok(curve) => out.alpha = Some(curve.into_iter().map(|(a, l)| (0, a, l)).collect()),
                Err(
                    e @ (Error::DegenerateFrame { .. } | Error::DegenerateGradient { .. } | Error::ProbeFailure(_)),
                ) => out.notes.push(format!("alpha: {e}")),
                Err(e) => return Err(e),
            },
            ProbeRequest::Sharpness { radii, n_directions, mode, spectrum } => {
                let report = probes::sharpness_report(s, &theta, radii, *n_directions, *mode, cfg.seed, *spectrum);
                match report {
                    Err(Error::DimensionTooLarge(n)) => {
                        out.notes.push(format!("sharpness: no spectrum for {n} parameters"));
                        out.sharpness =
                            Some(probes::sharpness_report(s, &theta, radii, *n_directions, *mode, cfg.seed, false)?);
                    }
                    r => out.sharpness = Some(r?),
                }
            }
        }
    }
    Ok(out)
}

pub fn run_oracle(cfg: &ExperimentConfig) -> Result<OracleReport> {
    cfg.validate()?;
    run_oracle_batch(&cfg.oracle).map_err(config_error)
}

/// Pass counts of a rule against SAM with the same settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerComparison {
    pub rule: String,
    pub iterations: usize,
    pub rule_passes: PassCount,
    pub sam_passes: PassCount,
    pub extra_forwards: i64,
    pub extra_backwards: i64,
    /// `(rule total - SAM total) / SAM total`.
    pub overhead: f64,
}

pub fn compare_ledgers(cfg: &ExperimentConfig) -> Result<LedgerComparison> {
    let run = |c: &ExperimentConfig| -> Result<RunLedger> {
        if c.surface.is_mlp() {
            Ok(run_training(c, None)?.ledger)
        } else {
            Ok(run_trajectory(c)?.ledger)
        }
    };
    let mine = run(cfg)?;
    let mut sam_cfg = cfg.clone();
    sam_cfg.optimizer.rule = Rule::Sam;
    let sam = run(&sam_cfg)?;
    let (a, b) = (mine.passes(), sam.passes());
    Ok(LedgerComparison {
        rule: mine.rule.clone(),
        iterations: mine.per_iteration.len(),
        rule_passes: a,
        sam_passes: b,
        extra_forwards: a.forwards as i64 - b.forwards as i64,
        extra_backwards: a.backwards as i64 - b.backwards as i64,
        overhead: (a.total() as f64 - b.total() as f64) / b.total() as f64,
    })
}

pub fn write_trajectory(dir: &Path, run: &TrajectoryRun) -> Result<()> {
    let rows = run
        .points
        .iter()
        .zip(&run.losses)
        .enumerate()
        .map(|(i, (p, l))| vec![i.to_string(), fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(*l)]);
    write_csv(&dir.join("trajectory.csv"), &["iter", "mu", "sigma", "loss"], rows)?;
    write_json(&dir.join("ledger.json"), &run.ledger)
}

pub fn write_training(dir: &Path, cfg: &ExperimentConfig, run: &TrainingRun) -> Result<()> {
    let rows = run.metrics.iter().map(|m| {
        vec![m.epoch.to_string(), fmt_f64(m.train_loss), fmt_f64(m.train_acc), fmt_opt(m.alpha_star), fmt_f64(m.lr)]
    });
    write_csv(&dir.join("metrics.csv"), &["epoch", "train_loss", "train_acc", "alpha_star", "lr"], rows)?;
    if !run.alpha_curves.is_empty() {
        write_alpha(dir, &run.alpha_curves)?;
    }
    let surface = cfg.surface.build()?;
    checkpoint_for(cfg, &surface, run.final_params.clone()).save(&dir.join("final_checkpoint.txt"))?;
    write_json(&dir.join("ledger.json"), &run.ledger)
}

fn write_alpha(dir: &Path, rows: &[(usize, f64, f64)]) -> Result<()> {
    let rows = rows.iter().map(|(e, a, l)| vec![e.to_string(), fmt_f64(*a), fmt_f64(*l)]);
    write_csv(&dir.join("alpha.csv"), &["epoch", "alpha", "loss"], rows)
}

pub fn write_probe(dir: &Path, run: &ProbeRun) -> Result<()> {
    if let Some(g) = &run.grid {
        let rows = g.rows().map(|(x, y, l)| vec![fmt_f64(x), fmt_f64(y), fmt_f64(l)]);
        write_csv(&dir.join("grid.csv"), &["x", "y", "loss"], rows)?;
    }
    if let Some(gap) = &run.gap {
        let rows = gap.iter().map(|(r, g)| vec![fmt_f64(*r), fmt_f64(*g)]);
        write_csv(&dir.join("gap.csv"), &["rho_m", "gap"], rows)?;
    }
    if let Some(a) = &run.alpha {
        write_alpha(dir, a)?;
    }
    if let Some(rep) = &run.sharpness {
        let rows = rep
            .avg_sharpness_curve
            .iter()
            .map(|(r, m)| vec![fmt_f64(*r), fmt_f64(*m), rep.mode.name().to_string(), rep.n_directions.to_string()]);
        write_csv(&dir.join("sharpness.csv"), &["radius", "mean_delta", "mode", "n_directions"], rows)?;
        write_json(&dir.join("sharpness.json"), rep)?;
    }
    if !run.notes.is_empty() {
        write_json(&dir.join("probe_notes.json"), &run.notes)?;
    }
    Ok(())
}

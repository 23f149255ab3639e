//! Monte-Carlo ensembles of conditional trajectories for the damped cavity
//! monitored through a beam splitter, plus the analytic reference laws,
//! paired-filter comparison runs, record replay and the CSV/metadata
//! writers used by the command-line front end.
//!
//! Determinism contract: trajectory j draws from stream j of a counter
//! based generator seeded with `config.seed`, trajectories are reduced in
//! index order after the parallel map, and every step draws the same number
//! of variates whichever branches fire. Results are bit-identical for any
//! thread count.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{QtrajError, Result};
use crate::filter::{
    increments_from_record, sample_increments, sme_step, sse_step, sse_step_kuramochi, FilterKind,
    FilterSetup, Increments,
};
use crate::hilbert::{annihilation, fock_state, CMatrix, CVector};

/// Longest output grid written to disk; denser runs are decimated.
pub const MAX_OUTPUT_POINTS: usize = 501;

/// Levels that must separate the initial excitation from the truncation
/// edge.
pub const TRUNCATION_MARGIN: usize = 3;

/// Full description of one ensemble run of the monitored damped cavity
/// (coupling sqrt(gamma) a, no Hamiltonian drive, reflected-arm counting
/// and transmitted-arm homodyne at phase theta).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Fock-space truncation.
    pub dim: usize,
    /// Initial excitation level; the run starts from that number state.
    pub n0: usize,
    /// Cavity energy decay rate.
    pub gamma: f64,
    /// Beam-splitter power reflectivity (fraction sent to the counter).
    pub r2: f64,
    /// Homodyne phase on the transmitted arm.
    pub theta: f64,
    /// Integration step.
    pub dt: f64,
    /// Final time; must be an integer number of steps.
    pub t_final: f64,
    /// Ensemble size.
    pub n_traj: usize,
    /// Base seed; trajectory j uses stream j.
    pub seed: u64,
    /// Which conditional equation to propagate.
    pub filter: FilterKind,
    /// Times at which ensemble-mean density matrices are captured.
    pub snapshot_times: Vec<f64>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            n0: 5,
            gamma: 1.0,
            r2: 0.5,
            theta: 0.0,
            dt: 1e-3,
            t_final: 5.0,
            n_traj: 100,
            seed: 71_142_014,
            filter: FilterKind::Corrected,
            snapshot_times: Vec::new(),
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < self.n0 + TRUNCATION_MARGIN {
            return Err(QtrajError::Config(format!(
                "dim {} leaves no truncation margin above the initial level {}; need dim >= n0 + {}",
                self.dim, self.n0, TRUNCATION_MARGIN
            )));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(QtrajError::Config(format!(
                "decay rate must be positive, got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.r2) {
            return Err(QtrajError::Config(format!(
                "power reflectivity must lie in [0, 1], got {}",
                self.r2
            )));
        }
        if !self.theta.is_finite() {
            return Err(QtrajError::Config("homodyne phase must be finite".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(QtrajError::Config(format!(
                "step size must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(QtrajError::Config(format!(
                "final time must be positive, got {}",
                self.t_final
            )));
        }
        let ratio = self.t_final / self.dt;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) {
            return Err(QtrajError::Config(format!(
                "t_final = {} is not an integer number of dt = {} steps",
                self.t_final, self.dt
            )));
        }
        if self.n_traj == 0 {
            return Err(QtrajError::Config(
                "ensemble size must be at least 1".into(),
            ));
        }
        for &t in &self.snapshot_times {
            if !(0.0..=self.t_final + 1e-12).contains(&t) {
                return Err(QtrajError::Config(format!(
                    "snapshot time {t} outside [0, t_final]"
                )));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// The monitored system this configuration describes.
    pub fn setup(&self) -> Result<FilterSetup> {
        self.validate()?;
        let a = annihilation(self.dim)?;
        let root_gamma = Complex64::new(self.gamma.sqrt(), 0.0);
        let l = a.map(|v| v * root_gamma);
        let h = CMatrix::zeros(self.dim, self.dim);
        FilterSetup::new(l, h, self.r2.sqrt(), self.theta)
    }
}

/// Mean excitation of the unconditional law: n0 exp(-gamma t).
pub fn analytic_mean_number(n0: usize, gamma: f64, t: f64) -> f64 {
    n0 as f64 * (-gamma * t).exp()
}

/// Unconditional number distribution at time t for an initial number state:
/// each quantum survives independently with probability exp(-gamma t), so
/// the level populations are binomial.
pub fn analytic_number_distribution(n0: usize, gamma: f64, t: f64) -> Vec<f64> {
    let s = (-gamma * t).exp();
    let mut probs = Vec::with_capacity(n0 + 1);
    let mut coeff = 1.0f64;
    for k in 0..=n0 {
        if k > 0 {
            coeff *= (n0 - k + 1) as f64 / k as f64;
        }
        probs.push(coeff * s.powi(k as i32) * (1.0 - s).powi((n0 - k) as i32));
    }
    probs
}

/// Total variation distance between two distributions; shorter vectors are
/// zero-padded.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let len = p.len().max(q.len());
    let mut sum = 0.0;
    for i in 0..len {
        let a = p.get(i).copied().unwrap_or(0.0);
        let b = q.get(i).copied().unwrap_or(0.0);
        sum += (a - b).abs();
    }
    0.5 * sum
}

/// Sampled output grid: every `stride` steps plus the final step.
#[derive(Debug, Clone)]
pub struct OutputGrid {
    pub steps: usize,
    pub stride: usize,
    pub times: Vec<f64>,
    snapshot_steps: Vec<usize>,
}

impl OutputGrid {
    pub fn for_config(config: &SimulationConfig) -> OutputGrid {
        let steps = config.steps();
        let stride = steps.div_ceil(MAX_OUTPUT_POINTS - 1).max(1);
        let mut times = Vec::new();
        for s in 0..=steps {
            if s % stride == 0 || s == steps {
                times.push(s as f64 * config.dt);
            }
        }
        let snapshot_steps = config
            .snapshot_times
            .iter()
            .map(|t| ((t / config.dt).round() as usize).min(steps))
            .collect();
        OutputGrid {
            steps,
            stride,
            times,
            snapshot_steps,
        }
    }

    fn is_sample(&self, step: usize) -> bool {
        step.is_multiple_of(self.stride) || step == self.steps
    }

    /// Index into `times` of the grid point at time `t`, if `t` is on the
    /// sampled grid.
    pub fn index_of_time(&self, t: f64, dt: f64) -> Option<usize> {
        self.times.iter().position(|&x| (x - t).abs() < 0.5 * dt)
    }
}

enum TrajState {
    Pure(CVector),
    Density(CMatrix),
}

impl TrajState {
    fn populations(&self) -> Vec<f64> {
        match self {
            TrajState::Pure(psi) => {
                let total: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
                psi.iter().map(|c| c.norm_sqr() / total).collect()
            }
            TrajState::Density(rho) => {
                let total = rho.trace().re;
                (0..rho.nrows()).map(|i| rho[(i, i)].re / total).collect()
            }
        }
    }

    fn density(&self) -> CMatrix {
        match self {
            TrajState::Pure(psi) => {
                let norm_sqr: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
                (psi * psi.adjoint()).map(|v| v / Complex64::new(norm_sqr, 0.0))
            }
            TrajState::Density(rho) => {
                let total = rho.trace().re;
                rho.map(|v| v / Complex64::new(total, 0.0))
            }
        }
    }
}

fn mean_from_populations(populations: &[f64]) -> f64 {
    populations
        .iter()
        .enumerate()
        .map(|(n, p)| n as f64 * p)
        .sum()
}

/// Everything one trajectory contributes to the ensemble reduction.
#[derive(Debug, Clone)]
pub struct TrajectoryOutput {
    pub mean_n: Vec<f64>,
    pub populations: Vec<Vec<f64>>,
    pub snapshot_densities: Vec<CMatrix>,
    pub jump_count: usize,
    pub leakage_max: f64,
    pub rate_warning_steps: usize,
    /// Worst post-step norm defect (pure) or post-repair trace defect
    /// (density) seen along the trajectory.
    pub max_norm_defect: f64,
    /// Worst pre-repair negative eigenvalue seen (density runs only).
    pub most_negative_seen: f64,
}

/// One raw measurement row: step start time, homodyne increment, click.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordRow {
    pub t: f64,
    pub dy1: f64,
    pub dn: bool,
}

// Short-lived stack local; boxing the RNG would only add indirection.
#[allow(clippy::large_enum_variant)]
enum StepDriver<'a> {
    Sample(ChaCha8Rng),
    Replay(&'a [RecordRow]),
}

fn run_trajectory_inner(
    config: &SimulationConfig,
    setup: &FilterSetup,
    grid: &OutputGrid,
    mut driver: StepDriver,
    mut record_sink: Option<&mut Vec<RecordRow>>,
) -> Result<TrajectoryOutput> {
    let dim = config.dim;
    let dt = config.dt;
    let mut state = match config.filter {
        FilterKind::Corrected | FilterKind::Kuramochi => {
            TrajState::Pure(fock_state(dim, config.n0)?)
        }
        FilterKind::Sme => {
            let psi = fock_state(dim, config.n0)?;
            TrajState::Density(&psi * psi.adjoint())
        }
    };

    let mut out = TrajectoryOutput {
        mean_n: Vec::with_capacity(grid.times.len()),
        populations: Vec::with_capacity(grid.times.len()),
        snapshot_densities: Vec::with_capacity(grid.snapshot_steps.len()),
        jump_count: 0,
        leakage_max: 0.0,
        rate_warning_steps: 0,
        max_norm_defect: 0.0,
        most_negative_seen: 0.0,
    };

    let observe = |state: &TrajState, step: usize, out: &mut TrajectoryOutput| {
        if grid.is_sample(step) {
            let pops = state.populations();
            out.mean_n.push(mean_from_populations(&pops));
            out.populations.push(pops);
        }
        for (i, &snap_step) in grid.snapshot_steps.iter().enumerate() {
            if snap_step == step {
                let rho = state.density();
                if out.snapshot_densities.len() <= i {
                    out.snapshot_densities
                        .resize(i + 1, CMatrix::zeros(dim, dim));
                }
                out.snapshot_densities[i] = rho;
            }
        }
    };

    observe(&state, 0, &mut out);

    for s in 1..=grid.steps {
        let expect = match &state {
            TrajState::Pure(psi) => setup.expectations_state(psi),
            TrajState::Density(rho) => setup.expectations_density(rho),
        };
        let inc: Increments = match &mut driver {
            StepDriver::Sample(rng) => sample_increments(expect.jump_rate, dt, rng),
            StepDriver::Replay(rows) => {
                let row = rows[s - 1];
                let expected_t = (s - 1) as f64 * dt;
                if (row.t - expected_t).abs() > 1e-6 * expected_t.max(dt) {
                    return Err(QtrajError::Records(format!(
                        "row {} carries time {} but the step grid expects {}",
                        s - 1,
                        row.t,
                        expected_t
                    )));
                }
                increments_from_record(expect, dt, row.dy1, row.dn)
            }
        };

        match &mut state {
            TrajState::Pure(psi) => {
                let (next, record) = match config.filter {
                    FilterKind::Corrected => sse_step(psi, setup, dt, inc)?,
                    FilterKind::Kuramochi => sse_step_kuramochi(psi, setup, dt, inc)?,
                    FilterKind::Sme => unreachable!(),
                };
                if record.dn {
                    out.jump_count += 1;
                }
                if record.rate_warning {
                    out.rate_warning_steps += 1;
                }
                if let Some(sink) = record_sink.as_deref_mut() {
                    sink.push(RecordRow {
                        t: (s - 1) as f64 * dt,
                        dy1: record.dy1,
                        dn: record.dn,
                    });
                }
                let defect = (next.norm() - 1.0).abs();
                if defect > out.max_norm_defect {
                    out.max_norm_defect = defect;
                }
                *psi = next;
            }
            TrajState::Density(rho) => {
                let (next, record) = sme_step(rho, setup, dt, inc)?;
                if record.dn {
                    out.jump_count += 1;
                }
                if record.rate_warning {
                    out.rate_warning_steps += 1;
                }
                if record.most_negative < out.most_negative_seen {
                    out.most_negative_seen = record.most_negative;
                }
                if let Some(sink) = record_sink.as_deref_mut() {
                    sink.push(RecordRow {
                        t: (s - 1) as f64 * dt,
                        dy1: record.dy1,
                        dn: record.dn,
                    });
                }
                let defect = (next.trace().re - 1.0).abs();
                if defect > out.max_norm_defect {
                    out.max_norm_defect = defect;
                }
                *rho = next;
            }
        }

        let top = match &state {
            TrajState::Pure(psi) => psi[dim - 1].norm_sqr(),
            TrajState::Density(rho) => rho[(dim - 1, dim - 1)].re,
        };
        if top > out.leakage_max {
            out.leakage_max = top;
        }

        observe(&state, s, &mut out);
    }

    Ok(out)
}

/// Propagate trajectory `index` of the configured ensemble.
pub fn run_trajectory(
    config: &SimulationConfig,
    setup: &FilterSetup,
    grid: &OutputGrid,
    index: u64,
) -> Result<TrajectoryOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index);
    run_trajectory_inner(config, setup, grid, StepDriver::Sample(rng), None)
}

/// Run trajectory 0 and keep its full-resolution measurement record.
pub fn simulate_records(config: &SimulationConfig) -> Result<(Vec<RecordRow>, TrajectoryOutput)> {
    config.validate()?;
    let setup = config.setup()?;
    let grid = OutputGrid::for_config(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    let mut rows = Vec::with_capacity(grid.steps);
    let out = run_trajectory_inner(
        config,
        &setup,
        &grid,
        StepDriver::Sample(rng),
        Some(&mut rows),
    )?;
    Ok((rows, out))
}

/// Ensemble reduction of an entire run.
#[derive(Debug, Clone)]
pub struct EnsembleSummary {
    pub times: Vec<f64>,
    pub mean_n: Vec<f64>,
    pub stderr_n: Vec<f64>,
    pub analytic_n: Vec<f64>,
    pub mean_populations: Vec<Vec<f64>>,
    pub snapshot_times: Vec<f64>,
    /// Ensemble-mean density matrices, aligned with `snapshot_times`.
    pub snapshot_densities: Vec<CMatrix>,
    pub jump_counts: Vec<usize>,
    pub leakage_max: f64,
    pub rate_warning_steps: usize,
    pub max_norm_defect: f64,
    pub most_negative_seen: f64,
    pub config: SimulationConfig,
}

impl EnsembleSummary {
    pub fn jump_histogram(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for &c in &self.jump_counts {
            *hist.entry(c).or_insert(0) += 1;
        }
        hist
    }

    pub fn mean_jumps(&self) -> f64 {
        if self.jump_counts.is_empty() {
            return 0.0;
        }
        self.jump_counts.iter().sum::<usize>() as f64 / self.jump_counts.len() as f64
    }
}

fn reduce_outputs(
    config: &SimulationConfig,
    grid: &OutputGrid,
    outputs: Vec<TrajectoryOutput>,
) -> EnsembleSummary {
    let m = outputs.len();
    let points = grid.times.len();
    let dim = config.dim;
    let mut mean_n = vec![0.0; points];
    let mut mean_sq = vec![0.0; points];
    let mut mean_populations = vec![vec![0.0; dim]; points];
    let mut snapshot_densities: Vec<CMatrix> = config
        .snapshot_times
        .iter()
        .map(|_| CMatrix::zeros(dim, dim))
        .collect();
    let mut jump_counts = Vec::with_capacity(m);
    let mut leakage_max = 0.0f64;
    let mut rate_warning_steps = 0;
    let mut max_norm_defect = 0.0f64;
    let mut most_negative_seen = 0.0f64;

    for out in &outputs {
        for i in 0..points {
            mean_n[i] += out.mean_n[i];
            mean_sq[i] += out.mean_n[i] * out.mean_n[i];
            for (j, p) in out.populations[i].iter().enumerate() {
                mean_populations[i][j] += p;
            }
        }
        for (acc, rho) in snapshot_densities.iter_mut().zip(&out.snapshot_densities) {
            *acc += rho;
        }
        jump_counts.push(out.jump_count);
        leakage_max = leakage_max.max(out.leakage_max);
        rate_warning_steps += out.rate_warning_steps;
        max_norm_defect = max_norm_defect.max(out.max_norm_defect);
        most_negative_seen = most_negative_seen.min(out.most_negative_seen);
    }

    let mf = m as f64;
    let inv = Complex64::new(1.0 / mf, 0.0);
    for i in 0..points {
        mean_n[i] /= mf;
        for p in &mut mean_populations[i] {
            *p /= mf;
        }
    }
    for rho in &mut snapshot_densities {
        *rho = rho.map(|v| v * inv);
    }
    let stderr_n: Vec<f64> = (0..points)
        .map(|i| {
            if m < 2 {
                0.0
            } else {
                let var = (mean_sq[i] - mf * mean_n[i] * mean_n[i]) / (mf - 1.0);
                (var.max(0.0) / mf).sqrt()
            }
        })
        .collect();
    let analytic_n = grid
        .times
        .iter()
        .map(|&t| analytic_mean_number(config.n0, config.gamma, t))
        .collect();

    EnsembleSummary {
        times: grid.times.clone(),
        mean_n,
        stderr_n,
        analytic_n,
        mean_populations,
        snapshot_times: config.snapshot_times.clone(),
        snapshot_densities,
        jump_counts,
        leakage_max,
        rate_warning_steps,
        max_norm_defect,
        most_negative_seen,
        config: config.clone(),
    }
}

fn with_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(job()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| QtrajError::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// Run the configured ensemble. `threads` pins the worker count; `None`
/// uses the global pool. The reduction is bit-identical either way.
pub fn run_ensemble(config: &SimulationConfig, threads: Option<usize>) -> Result<EnsembleSummary> {
    config.validate()?;
    let setup = config.setup()?;
    let grid = OutputGrid::for_config(config);
    let outputs: Vec<TrajectoryOutput> = with_pool(threads, || {
        (0..config.n_traj as u64)
            .into_par_iter()
            .map(|i| run_trajectory(config, &setup, &grid, i))
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(reduce_outputs(config, &grid, outputs))
}

/// Re-run the configured filter against an externally supplied record,
/// producing a single-trajectory summary.
pub fn filter_from_records(
    config: &SimulationConfig,
    rows: &[RecordRow],
) -> Result<EnsembleSummary> {
    config.validate()?;
    let setup = config.setup()?;
    let grid = OutputGrid::for_config(config);
    if rows.len() != grid.steps {
        return Err(QtrajError::Records(format!(
            "record has {} rows but the configured grid has {} steps",
            rows.len(),
            grid.steps
        )));
    }
    let out = run_trajectory_inner(config, &setup, &grid, StepDriver::Replay(rows), None)?;
    let mut summary_config = config.clone();
    summary_config.n_traj = 1;
    Ok(reduce_outputs(&summary_config, &grid, vec![out]))
}

/// Paired run of the reflectivity-aware and comparison filters on shared
/// random streams.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub times: Vec<f64>,
    pub mean_corrected: Vec<f64>,
    pub stderr_corrected: Vec<f64>,
    pub mean_kuramochi: Vec<f64>,
    pub stderr_kuramochi: Vec<f64>,
    pub analytic_n: Vec<f64>,
    pub z_corrected: Vec<f64>,
    pub z_kuramochi: Vec<f64>,
    pub jumps_corrected: Vec<usize>,
    pub jumps_kuramochi: Vec<usize>,
    pub leakage_max: f64,
    pub rate_warning_steps: usize,
    pub config: SimulationConfig,
}

impl ComparisonReport {
    pub fn max_abs_z_corrected(&self) -> f64 {
        self.z_corrected.iter().fold(0.0f64, |a, &z| a.max(z.abs()))
    }

    pub fn max_abs_z_kuramochi(&self) -> f64 {
        self.z_kuramochi.iter().fold(0.0f64, |a, &z| a.max(z.abs()))
    }
}

fn z_score(mean: f64, analytic: f64, stderr: f64) -> f64 {
    let dev = mean - analytic;
    if stderr > 0.0 {
        dev / stderr
    } else if dev.abs() < 1e-9 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Run both pure-state filters trajectory by trajectory on identical
/// random streams and reduce each side.
pub fn compare_filters(
    config: &SimulationConfig,
    threads: Option<usize>,
) -> Result<ComparisonReport> {
    config.validate()?;
    if config.n_traj < 2 {
        return Err(QtrajError::Config(
            "comparison z-scores need a standard error; n_traj must be at least 2".into(),
        ));
    }
    let mut corrected_cfg = config.clone();
    corrected_cfg.filter = FilterKind::Corrected;
    let mut kuramochi_cfg = config.clone();
    kuramochi_cfg.filter = FilterKind::Kuramochi;
    let setup = config.setup()?;
    let grid = OutputGrid::for_config(config);

    let pairs: Vec<(TrajectoryOutput, TrajectoryOutput)> = with_pool(threads, || {
        (0..config.n_traj as u64)
            .into_par_iter()
            .map(|i| {
                let a = run_trajectory(&corrected_cfg, &setup, &grid, i)?;
                let b = run_trajectory(&kuramochi_cfg, &setup, &grid, i)?;
                Ok((a, b))
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let (outs_a, outs_b): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let sum_a = reduce_outputs(&corrected_cfg, &grid, outs_a);
    let sum_b = reduce_outputs(&kuramochi_cfg, &grid, outs_b);

    let z_a: Vec<f64> = (0..grid.times.len())
        .map(|i| z_score(sum_a.mean_n[i], sum_a.analytic_n[i], sum_a.stderr_n[i]))
        .collect();
    let z_b: Vec<f64> = (0..grid.times.len())
        .map(|i| z_score(sum_b.mean_n[i], sum_b.analytic_n[i], sum_b.stderr_n[i]))
        .collect();

    Ok(ComparisonReport {
        times: grid.times,
        mean_corrected: sum_a.mean_n,
        stderr_corrected: sum_a.stderr_n,
        mean_kuramochi: sum_b.mean_n,
        stderr_kuramochi: sum_b.stderr_n,
        analytic_n: sum_a.analytic_n,
        z_corrected: z_a,
        z_kuramochi: z_b,
        jumps_corrected: sum_a.jump_counts,
        jumps_kuramochi: sum_b.jump_counts,
        leakage_max: sum_a.leakage_max.max(sum_b.leakage_max),
        rate_warning_steps: sum_a.rate_warning_steps + sum_b.rate_warning_steps,
        config: config.clone(),
    })
}

/// sha256 over a git-style blob header plus content, hex encoded.
pub fn git_blob_sha256(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("blob {}\0", bytes.len()).as_bytes());
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

fn float_field(v: f64) -> String {
    format!("{v}")
}

/// Serialize the decay-curve table: t, mean_N, stderr_N, analytic_N.
pub fn ensemble_csv_bytes(summary: &EnsembleSummary) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "mean_N", "stderr_N", "analytic_N"])?;
    for i in 0..summary.times.len() {
        w.write_record([
            float_field(summary.times[i]),
            float_field(summary.mean_n[i]),
            float_field(summary.stderr_n[i]),
            float_field(summary.analytic_n[i]),
        ])?;
    }
    w.into_inner()
        .map_err(|e| QtrajError::Records(format!("csv flush: {e}")))
}

/// Serialize the paired-filter table:
/// t, mean_corrected, mean_kuramochi, analytic, z_corrected, z_kuramochi.
pub fn comparison_csv_bytes(report: &ComparisonReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "t",
        "mean_corrected",
        "mean_kuramochi",
        "analytic",
        "z_corrected",
        "z_kuramochi",
    ])?;
    for i in 0..report.times.len() {
        w.write_record([
            float_field(report.times[i]),
            float_field(report.mean_corrected[i]),
            float_field(report.mean_kuramochi[i]),
            float_field(report.analytic_n[i]),
            float_field(report.z_corrected[i]),
            float_field(report.z_kuramochi[i]),
        ])?;
    }
    w.into_inner()
        .map_err(|e| QtrajError::Records(format!("csv flush: {e}")))
}

/// Serialize a raw measurement record: t, dY1, dN.
pub fn records_csv_bytes(rows: &[RecordRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "dY1", "dN"])?;
    for row in rows {
        w.write_record([
            float_field(row.t),
            float_field(row.dy1),
            (row.dn as u8).to_string(),
        ])?;
    }
    w.into_inner()
        .map_err(|e| QtrajError::Records(format!("csv flush: {e}")))
}

/// Parse a raw measurement record written by [`records_csv_bytes`] or an
/// external source with the same t, dY1, dN header.
pub fn read_records_csv(path: &Path) -> Result<Vec<RecordRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let want = ["t", "dY1", "dN"];
    let idx: Vec<usize> = want
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or_else(|| QtrajError::Records(format!("missing column {name}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            record
                .get(idx[i])
                .ok_or_else(|| QtrajError::Records(format!("row {line} is short")))?
                .trim()
                .parse::<f64>()
                .map_err(|e| QtrajError::Records(format!("row {line}: {e}")))
        };
        let t = parse(0)?;
        let dy1 = parse(1)?;
        let dn_raw = record
            .get(idx[2])
            .ok_or_else(|| QtrajError::Records(format!("row {line} is short")))?
            .trim();
        let dn = match dn_raw {
            "0" | "false" => false,
            "1" | "true" => true,
            other => {
                return Err(QtrajError::Records(format!(
                    "row {line}: click column must be 0/1, got {other}"
                )))
            }
        };
        rows.push(RecordRow { t, dy1, dn });
    }
    Ok(rows)
}

fn jump_stats_json(jump_counts: &[usize]) -> serde_json::Value {
    let mut hist = BTreeMap::new();
    for &c in jump_counts {
        *hist.entry(c.to_string()).or_insert(0u64) += 1;
    }
    let total: usize = jump_counts.iter().sum();
    let mean = if jump_counts.is_empty() {
        0.0
    } else {
        total as f64 / jump_counts.len() as f64
    };
    serde_json::json!({
        "total": total,
        "mean_per_trajectory": mean,
        "histogram": hist,
    })
}

/// Sidecar metadata for an ensemble CSV.
pub fn ensemble_metadata(
    summary: &EnsembleSummary,
    csv_name: &str,
    csv_bytes: &[u8],
) -> serde_json::Value {
    serde_json::json!({
        "config": summary.config,
        "csv": {
            "file": csv_name,
            "content_hash": format!("sha256:{}", git_blob_sha256(csv_bytes)),
        },
        "leakage_max": summary.leakage_max,
        "rate_warning_steps": summary.rate_warning_steps,
        "max_norm_defect": summary.max_norm_defect,
        "most_negative_eigenvalue_prerepair": summary.most_negative_seen,
        "jumps": jump_stats_json(&summary.jump_counts),
        "jump_rate_model": "clicks are Bernoulli(min(r2 * <Ldag L> dt, 1)) in both filters",
    })
}

/// Sidecar metadata for a comparison CSV.
pub fn comparison_metadata(
    report: &ComparisonReport,
    csv_name: &str,
    csv_bytes: &[u8],
) -> serde_json::Value {
    serde_json::json!({
        "config": report.config,
        "csv": {
            "file": csv_name,
            "content_hash": format!("sha256:{}", git_blob_sha256(csv_bytes)),
        },
        "leakage_max": report.leakage_max,
        "rate_warning_steps": report.rate_warning_steps,
        "max_abs_z_corrected": report.max_abs_z_corrected(),
        "max_abs_z_kuramochi": report.max_abs_z_kuramochi(),
        "jumps_corrected": jump_stats_json(&report.jumps_corrected),
        "jumps_kuramochi": jump_stats_json(&report.jumps_kuramochi),
        "jump_rate_model": "clicks are Bernoulli(min(r2 * <Ldag L> dt, 1)) in both filters",
    })
}

/// Write `name.csv` plus `name.meta.json` under `dir`; returns both paths.
pub fn write_table_with_metadata(
    dir: &Path,
    name: &str,
    csv_bytes: &[u8],
    metadata: &serde_json::Value,
) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{name}.csv"));
    fs::write(&csv_path, csv_bytes)?;
    let meta_path = dir.join(format!("{name}.meta.json"));
    let mut pretty = serde_json::to_vec_pretty(metadata)?;
    pretty.push(b'\n');
    fs::write(&meta_path, pretty)?;
    Ok((csv_path, meta_path))
}

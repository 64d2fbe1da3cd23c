//! Scans that pit the Monte Carlo chain (wavicle → sampler → estimator)
//! against the oracle.
//!
//! Trials of one scan point are split into `workers` contiguous chunks that
//! run in parallel and are merged in chunk order. Every trial draws from its
//! own counter-based window, so the readings do not depend on the split;
//! only the summation order does.

use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    spectral_decompose, spin_operator, Direction, HermitianOperator, StateVector,
};
use crate::error::{Error, Result};
use crate::estimator::{Accumulator, CorrelationEstimate, Estimate, Moments};
use crate::oracle::{
    self, cosine_cdf, expected_joint_corr, expected_joint_total, expected_joint_uncorr,
    hbt_correlation, hbt_phase, mixed_noise_variance, SpinScenario, TwoSourceScenario,
};
use crate::rng::RngStream;
use crate::sampler::{
    ChannelSampler, Detector, DetectorReading, DetectorSetup, PureTable, SamplingMode,
    EXCHANGE_CALIBRATION,
};
use crate::wavicle::{
    draw_event, enumerate_channels, Channel, ChannelKind, SourcePair, SourceSpec, Statistics,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Epr,
    Hbt,
    SpinFlow,
    Noise,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Epr => "epr",
            ExperimentKind::Hbt => "hbt",
            ExperimentKind::SpinFlow => "spinflow",
            ExperimentKind::Noise => "noise",
        }
    }

    /// Scan-point column names, in output order.
    pub fn point_columns(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::Epr => &["theta_a", "phi_a", "theta_b", "phi_b", "gamma"],
            ExperimentKind::Hbt => &["r", "phase"],
            ExperimentKind::SpinFlow => &[
                "theta",
                "f_up",
                "f_down",
                "p_plus",
                "stderr_p_plus",
                "oracle_p_plus",
            ],
            ExperimentKind::Noise => &[
                "theta_a",
                "phi_a",
                "theta_b",
                "phi_b",
                "var_a",
                "var_b",
                "oracle_var_a",
                "oracle_var_b",
                "ks_a",
                "ks_critical",
            ],
        }
    }

    /// Every output column: scan-point columns, then [`FIXED_COLUMNS`].
    pub fn columns(self) -> Vec<&'static str> {
        self.point_columns()
            .iter()
            .chain(&FIXED_COLUMNS)
            .copied()
            .collect()
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epr" => Ok(ExperimentKind::Epr),
            "hbt" => Ok(ExperimentKind::Hbt),
            "spinflow" => Ok(ExperimentKind::SpinFlow),
            "noise" => Ok(ExperimentKind::Noise),
            other => Err(Error::Config(format!(
                "kind must be one of epr, hbt, spinflow, noise; got {other:?}"
            ))),
        }
    }
}

/// Columns that follow the scan-point columns in every result table.
pub const FIXED_COLUMNS: [&str; 12] = [
    "mc_mean_a",
    "stderr_a",
    "mc_mean_b",
    "stderr_b",
    "mc_mean_ab",
    "stderr_ab",
    "mc_uncorr",
    "mc_corr",
    "oracle_uncorr",
    "oracle_corr",
    "oracle_total",
    "z_score",
];

/// Flat experiment configuration. Keys not used by an experiment kind are
/// ignored by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub trials: u64,
    pub seed: u64,
    pub stats: Statistics,
    pub mode: SamplingMode,
    pub workers: usize,
    /// Occupancy of source U (spin up, or wavevector `p`).
    pub occ_u: f64,
    /// Occupancy of source V (spin down, or wavevector `p′`).
    pub occ_v: f64,
    pub omega_u: f64,
    pub omega_v: f64,
    /// Emission time of trial `t` is `t · time_step`.
    pub time_step: f64,
    pub exchange_calibration: f64,

    pub epr_points: usize,
    pub epr_theta_a: f64,
    pub epr_phi_a: f64,
    pub epr_theta_b: f64,
    /// Detector B azimuth runs from `epr_phi_a` to `epr_phi_a + epr_phi_span`.
    pub epr_phi_span: f64,

    pub hbt_p: Vec<f64>,
    pub hbt_p_prime: Vec<f64>,
    pub hbt_r_dir: Vec<f64>,
    pub hbt_r_max: f64,
    pub hbt_points: usize,

    pub spinflow_thetas: Vec<f64>,

    pub noise_theta_a: f64,
    pub noise_phi_a: f64,
    pub noise_theta_b: f64,
    pub noise_phi_b: f64,
    pub noise_bins: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Epr,
            trials: 100_000,
            seed: 1,
            stats: Statistics::Fermion,
            mode: SamplingMode::Eigenvalue,
            workers: 8,
            occ_u: 1.0,
            occ_v: 1.0,
            omega_u: 0.0,
            omega_v: 0.0,
            time_step: 0.0,
            exchange_calibration: EXCHANGE_CALIBRATION,
            epr_points: 13,
            epr_theta_a: FRAC_PI_2,
            epr_phi_a: 0.0,
            epr_theta_b: FRAC_PI_2,
            epr_phi_span: PI,
            hbt_p: vec![1.0, 0.0, 0.0],
            hbt_p_prime: vec![0.0, 0.0, 0.0],
            hbt_r_dir: vec![1.0, 0.0, 0.0],
            hbt_r_max: 4.0 * PI,
            hbt_points: 41,
            spinflow_thetas: vec![0.0, PI / 3.0, FRAC_PI_2, 2.0 * PI / 3.0, PI],
            noise_theta_a: FRAC_PI_2,
            noise_phi_a: 0.0,
            noise_theta_b: FRAC_PI_2,
            noise_phi_b: 0.0,
            noise_bins: 40,
        }
    }
}

fn config_error(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {msg}"))
}

impl ExperimentConfig {
    pub fn for_kind(kind: ExperimentKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(config_error("trials", "must be at least 1"));
        }
        if self.workers < 1 {
            return Err(config_error("workers", "must be at least 1"));
        }
        for (key, value) in [("occ_u", self.occ_u), ("occ_v", self.occ_v)] {
            if !value.is_finite() || value < 0.0 {
                return Err(config_error(key, "must be a finite non-negative number"));
            }
        }
        for (key, value) in [
            ("omega_u", self.omega_u),
            ("omega_v", self.omega_v),
            ("time_step", self.time_step),
            ("epr_phi_a", self.epr_phi_a),
            ("epr_phi_span", self.epr_phi_span),
            ("hbt_r_max", self.hbt_r_max),
            ("noise_phi_a", self.noise_phi_a),
            ("noise_phi_b", self.noise_phi_b),
        ] {
            if !value.is_finite() {
                return Err(config_error(key, "must be finite"));
            }
        }
        if !(self.exchange_calibration.is_finite() && self.exchange_calibration > 0.0) {
            return Err(config_error("exchange_calibration", "must be positive"));
        }
        for (key, theta) in [
            ("epr_theta_a", self.epr_theta_a),
            ("epr_theta_b", self.epr_theta_b),
            ("noise_theta_a", self.noise_theta_a),
            ("noise_theta_b", self.noise_theta_b),
        ] {
            if !(0.0..=PI).contains(&theta) {
                return Err(config_error(key, "polar angle must lie in [0, π]"));
            }
        }
        if self.epr_points < 1 {
            return Err(config_error("epr_points", "grid must be non-empty"));
        }
        if self.hbt_points < 1 {
            return Err(config_error("hbt_points", "grid must be non-empty"));
        }
        if self.noise_bins < 1 {
            return Err(config_error("noise_bins", "must be at least 1"));
        }
        if self.spinflow_thetas.is_empty() {
            return Err(config_error("spinflow_thetas", "grid must be non-empty"));
        }
        if let Some(bad) = self
            .spinflow_thetas
            .iter()
            .find(|t| !(0.0..=PI).contains(*t))
        {
            return Err(config_error(
                "spinflow_thetas",
                format!("{bad} is outside [0, π]"),
            ));
        }
        let dim = self.hbt_p.len();
        if !(1..=3).contains(&dim) {
            return Err(config_error("hbt_p", "needs 1 to 3 components"));
        }
        for (key, v) in [
            ("hbt_p_prime", &self.hbt_p_prime),
            ("hbt_r_dir", &self.hbt_r_dir),
        ] {
            if v.len() != dim {
                return Err(config_error(
                    key,
                    format!("has {} components, hbt_p has {dim}", v.len()),
                ));
            }
        }
        for (key, v) in [
            ("hbt_p", &self.hbt_p),
            ("hbt_p_prime", &self.hbt_p_prime),
            ("hbt_r_dir", &self.hbt_r_dir),
        ] {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(config_error(key, "components must be finite"));
            }
        }
        if self.hbt_r_dir.iter().all(|x| *x == 0.0) {
            return Err(config_error("hbt_r_dir", "must be non-zero"));
        }
        Ok(())
    }

    fn spin_sources(&self) -> Result<SourcePair> {
        SourcePair::new(
            SourceSpec::new("up", StateVector::spin_up(), self.occ_u, self.omega_u)?,
            SourceSpec::new("down", StateVector::spin_down(), self.occ_v, self.omega_v)?,
        )
    }

    /// Detector directions of the EPR grid, in scan order.
    pub fn epr_grid(&self) -> Result<Vec<(Direction, Direction)>> {
        let a = Direction::new(self.epr_theta_a, self.epr_phi_a)?;
        (0..self.epr_points)
            .map(|k| {
                let phi_b = self.epr_phi_a + self.epr_phi_span * grid_fraction(k, self.epr_points);
                Ok((a, Direction::new(self.epr_theta_b, phi_b)?))
            })
            .collect()
    }

    /// Displacement vectors of the HBT grid, in scan order.
    pub fn hbt_grid(&self) -> Vec<(f64, Vec<f64>)> {
        let norm = self.hbt_r_dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        (0..self.hbt_points)
            .map(|k| {
                let r = self.hbt_r_max * grid_fraction(k, self.hbt_points);
                (r, self.hbt_r_dir.iter().map(|x| x / norm * r).collect())
            })
            .collect()
    }
}

fn grid_fraction(k: usize, points: usize) -> f64 {
    if points > 1 {
        k as f64 / (points - 1) as f64
    } else {
        0.0
    }
}

/// One scan point. `point` holds the experiment-specific leading columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultRow {
    pub point: Vec<(&'static str, Option<f64>)>,
    pub mc_mean_a: Option<f64>,
    pub stderr_a: Option<f64>,
    pub mc_mean_b: Option<f64>,
    pub stderr_b: Option<f64>,
    pub mc_mean_ab: Option<f64>,
    pub stderr_ab: Option<f64>,
    pub mc_uncorr: Option<f64>,
    pub stderr_uncorr: Option<f64>,
    pub mc_corr: Option<f64>,
    pub stderr_corr: Option<f64>,
    pub oracle_uncorr: Option<f64>,
    pub oracle_corr: Option<f64>,
    pub oracle_total: Option<f64>,
    pub z_score: Option<f64>,
}

impl ResultRow {
    /// Values in output order: scan-point columns, then the fixed columns.
    pub fn columns(&self) -> Vec<(&'static str, Option<f64>)> {
        let mut out = self.point.clone();
        out.extend(
            [
                self.mc_mean_a,
                self.stderr_a,
                self.mc_mean_b,
                self.stderr_b,
                self.mc_mean_ab,
                self.stderr_ab,
                self.mc_uncorr,
                self.mc_corr,
                self.oracle_uncorr,
                self.oracle_corr,
                self.oracle_total,
                self.z_score,
            ]
            .into_iter()
            .zip(FIXED_COLUMNS)
            .map(|(v, k)| (k, v)),
        );
        out
    }

    fn with_joint(mut self, est: &CorrelationEstimate) -> Self {
        self.mc_mean_a = Some(est.mean_a.value);
        self.stderr_a = finite(est.mean_a.stderr);
        self.mc_mean_b = Some(est.mean_b.value);
        self.stderr_b = finite(est.mean_b.stderr);
        self.mc_mean_ab = Some(est.mean_ab.value);
        self.stderr_ab = finite(est.mean_ab.stderr);
        self.mc_uncorr = Some(est.uncorrelated.value);
        self.stderr_uncorr = finite(est.uncorrelated.stderr);
        self.mc_corr = Some(est.correlated.value);
        self.stderr_corr = finite(est.correlated.stderr);
        self
    }

    fn with_oracle(mut self, uncorr: f64, corr: f64, total: f64) -> Self {
        self.oracle_uncorr = Some(uncorr);
        self.oracle_corr = Some(corr);
        self.oracle_total = Some(total);
        self
    }

    pub fn point_value(&self, name: &str) -> Option<f64> {
        self.point
            .iter()
            .find(|(k, _)| *k == name)
            .and_then(|(_, v)| *v)
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Runs `trials` trials split into `workers` contiguous chunks and merges
/// the per-chunk tallies in chunk order.
fn run_chunked<T, New, Trial, Merge>(
    trials: u64,
    workers: usize,
    new: New,
    trial: Trial,
    merge: Merge,
) -> Result<T>
where
    T: Send,
    New: Fn() -> T + Sync,
    Trial: Fn(&mut T, u64) -> Result<()> + Sync,
    Merge: Fn(&mut T, T) -> Result<()>,
{
    let workers = workers as u64;
    let chunks: Vec<Result<T>> = (0..workers)
        .into_par_iter()
        .map(|w| {
            let (start, end) = (trials * w / workers, trials * (w + 1) / workers);
            let mut tally = new();
            for t in start..end {
                trial(&mut tally, t)?;
            }
            Ok(tally)
        })
        .collect();
    let mut total = new();
    for chunk in chunks {
        merge(&mut total, chunk?)?;
    }
    Ok(total)
}

/// Runs the two-detector chain for one scan point.
pub fn simulate_point(
    sampler: &ChannelSampler,
    channels: &[Channel],
    cfg: &ExperimentConfig,
    stream_id: u64,
) -> Result<Accumulator> {
    let scenario = stream_id + 1;
    run_chunked(
        cfg.trials,
        cfg.workers,
        || Accumulator::new(scenario),
        |acc, t| {
            let mut stream = RngStream::for_trial(cfg.seed, stream_id, t);
            let event = draw_event(&mut stream, cfg.time_step * t as f64, t);
            let mut pairs = [(blank_reading(), blank_reading(), 0.0); 4];
            for (slot, channel) in pairs.iter_mut().zip(channels) {
                let (a, b) = sampler.sample_event_readings(&mut stream, &event, channel);
                *slot = (a, b, channel.weight);
            }
            acc.accumulate_trial(&pairs[..channels.len()])
        },
        |total, part| total.merge(&part),
    )
}

fn blank_reading() -> DetectorReading {
    DetectorReading {
        detector: Detector::A,
        value: 0.0,
        channel: ChannelKind::DiagUV,
        trial_id: 0,
        weight: 0.0,
    }
}

fn check_kind(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    cfg.validate()?;
    if cfg.kind != kind {
        return Err(config_error(
            "kind",
            format!("expected {}, got {}", kind.name(), cfg.kind.name()),
        ));
    }
    Ok(())
}

fn spin_sampler(
    cfg: &ExperimentConfig,
    dir_a: Direction,
    dir_b: Direction,
) -> Result<ChannelSampler> {
    let sources = cfg.spin_sources()?;
    let a = DetectorSetup::new(spin_operator(dir_a), &sources, 0.0)?;
    let b = DetectorSetup::new(spin_operator(dir_b), &sources, 0.0)?;
    Ok(ChannelSampler::new(sources, a, b, cfg.mode).with_calibration(cfg.exchange_calibration))
}

fn epr_point_fields(a: Direction, b: Direction) -> Vec<(&'static str, Option<f64>)> {
    vec![
        ("theta_a", Some(a.theta())),
        ("phi_a", Some(a.phi())),
        ("theta_b", Some(b.theta())),
        ("phi_b", Some(b.phi())),
        ("gamma", Some(oracle::spin_gamma(a, b))),
    ]
}

fn spin_oracle(cfg: &ExperimentConfig, a: Direction, b: Direction) -> Result<(f64, f64, f64)> {
    let scn = SpinScenario {
        dir_a: a,
        dir_b: b,
        occ_up: cfg.occ_u,
        occ_down: cfg.occ_v,
    }
    .to_two_source(cfg.stats)?;
    Ok((
        expected_joint_uncorr(&scn)?,
        expected_joint_corr(&scn)?,
        expected_joint_total(&scn)?,
    ))
}

/// Spin correlation along a grid of detector directions.
pub fn run_epr_scan(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    check_kind(cfg, ExperimentKind::Epr)?;
    cfg.epr_grid()?
        .into_iter()
        .enumerate()
        .map(|(k, (a, b))| {
            let sampler = spin_sampler(cfg, a, b)?;
            let channels = enumerate_channels(sampler.sources(), cfg.stats);
            let acc = simulate_point(&sampler, &channels, cfg, k as u64)?;
            let est = acc.estimates();
            let (uncorr, corr, total) = spin_oracle(cfg, a, b)?;
            let mut row = ResultRow {
                point: epr_point_fields(a, b),
                ..ResultRow::default()
            }
            .with_joint(&est)
            .with_oracle(uncorr, corr, total);
            row.z_score = finite(est.mean_ab.z_score(total));
            Ok(row)
        })
        .collect()
}

fn hbt_sampler(cfg: &ExperimentConfig, r: &[f64]) -> Result<(ChannelSampler, f64)> {
    let plane = StateVector::basis(1, 0);
    let sources = SourcePair::new(
        SourceSpec::new("p", plane.clone(), cfg.occ_u, cfg.omega_u)?,
        SourceSpec::new("p_prime", plane, cfg.occ_v, cfg.omega_v)?,
    )?;
    // Detector A sits at R, detector B at the origin: ⟨p|A|p′⟩ ∝ e^{i(p′−p)·R}.
    let phase = hbt_phase(&cfg.hbt_p, &cfg.hbt_p_prime, r)?;
    let a = DetectorSetup::new(HermitianOperator::identity(1), &sources, -phase)?;
    let b = DetectorSetup::new(HermitianOperator::identity(1), &sources, 0.0)?;
    let sampler =
        ChannelSampler::new(sources, a, b, cfg.mode).with_calibration(cfg.exchange_calibration);
    Ok((sampler, phase))
}

/// Intensity correlation of two plane-wave sources versus detector
/// separation.
pub fn run_hbt_scan(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    check_kind(cfg, ExperimentKind::Hbt)?;
    cfg.hbt_grid()
        .into_iter()
        .enumerate()
        .map(|(k, (r_len, r))| {
            let (sampler, phase) = hbt_sampler(cfg, &r)?;
            let channels = enumerate_channels(sampler.sources(), cfg.stats);
            let acc = simulate_point(&sampler, &channels, cfg, k as u64)?;
            let est = acc.estimates();
            let total = hbt_correlation(
                &cfg.hbt_p,
                &cfg.hbt_p_prime,
                &r,
                cfg.occ_u,
                cfg.occ_v,
                cfg.stats,
            )?;
            let uncorr = 2.0 * cfg.occ_u * cfg.occ_v;
            let mut row = ResultRow {
                point: vec![("r", Some(r_len)), ("phase", Some(phase))],
                ..ResultRow::default()
            }
            .with_joint(&est)
            .with_oracle(uncorr, total - uncorr, total);
            row.z_score = finite(est.mean_ab.z_score(total));
            Ok(row)
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
struct SpinFlowTally {
    trials: u64,
    reading: Moments,
    plus: Moments,
}

/// Single-detector readings of a spin-up flow and a spin-down flow.
pub fn run_spinflow(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    check_kind(cfg, ExperimentKind::SpinFlow)?;
    cfg.spinflow_thetas
        .iter()
        .enumerate()
        .map(|(k, &theta)| {
            let decomp = spectral_decompose(&spin_operator(Direction::new(theta, 0.0)?))?;
            let up = PureTable::new(&StateVector::spin_up(), &decomp)?;
            let down = PureTable::new(&StateVector::spin_down(), &decomp)?;
            let plus_index = decomp.dim() - 1;
            let tally = run_chunked(
                cfg.trials,
                cfg.workers,
                SpinFlowTally::default,
                |tally, t| {
                    let mut stream = RngStream::for_trial(cfg.seed, k as u64, t);
                    let j_up = up.sample_index(&mut stream);
                    let j_down = down.sample_index(&mut stream);
                    let eig = decomp.eigenvalues();
                    tally.trials += 1;
                    tally
                        .reading
                        .push(cfg.occ_u * eig[j_up] + cfg.occ_v * eig[j_down]);
                    tally.plus.push(if j_up == plus_index { 1.0 } else { 0.0 });
                    Ok(())
                },
                |total, part| {
                    total.trials += part.trials;
                    total.reading.merge(&part.reading);
                    total.plus.merge(&part.plus);
                    Ok(())
                },
            )?;
            let mean = tally.reading.estimate(tally.trials);
            let p_oracle = oracle::spin_flow_plus_probability(theta);
            let p_sigma = (p_oracle * (1.0 - p_oracle) / tally.trials as f64).sqrt();
            let p_hat = Estimate {
                value: tally.plus.sum() / tally.trials as f64,
                stderr: p_sigma,
            };
            let mean_oracle = oracle::spin_flow_mean(theta, cfg.occ_u, cfg.occ_v);
            let z = mean.z_score(mean_oracle).max(p_hat.z_score(p_oracle));
            Ok(ResultRow {
                point: vec![
                    ("theta", Some(theta)),
                    ("f_up", Some(cfg.occ_u)),
                    ("f_down", Some(cfg.occ_v)),
                    ("p_plus", Some(p_hat.value)),
                    ("stderr_p_plus", Some(p_sigma)),
                    ("oracle_p_plus", Some(p_oracle)),
                ],
                mc_mean_a: Some(mean.value),
                stderr_a: finite(mean.stderr),
                oracle_total: Some(mean_oracle),
                z_score: finite(z),
                ..ResultRow::default()
            })
        })
        .collect()
}

/// Equal-width histogram over `[lo, hi]`; values outside are clamped into
/// the edge bins.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Self {
            lo,
            hi,
            counts: vec![0; bins],
        }
    }

    pub fn add(&mut self, x: f64) {
        let bins = self.counts.len();
        let width = self.hi - self.lo;
        let idx = if width > 0.0 {
            (((x - self.lo) / width) * bins as f64)
                .floor()
                .clamp(0.0, (bins - 1) as f64) as usize
        } else {
            bins / 2
        };
        self.counts[idx] += 1;
    }

    fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// One-sample Kolmogorov–Smirnov result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsTest {
    pub statistic: f64,
    /// Critical value at α = 0.01.
    pub critical: f64,
    pub samples: usize,
}

impl KsTest {
    pub fn passed(&self) -> bool {
        self.statistic < self.critical
    }
}

/// KS statistic of `samples` against `cdf`; sorts `samples` in place.
pub fn ks_test(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> KsTest {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let statistic = samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    // Stephens' finite-n form of the asymptotic 1% point.
    let critical = 1.628 / (n.sqrt() + 0.12 + 0.11 / n.sqrt());
    KsTest {
        statistic,
        critical,
        samples: samples.len(),
    }
}

#[derive(Debug, Clone)]
struct NoiseTally {
    acc: Accumulator,
    raw_a: Moments,
    raw_b: Moments,
    readings: u64,
    hist_a: Histogram,
    hist_b: Histogram,
    ks_samples: Vec<f64>,
}

/// Exchange-channel-only run: per-detector noise statistics plus the joint
/// product.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseReport {
    #[serde(skip)]
    pub rows: Vec<ResultRow>,
    /// Reading variance divided by the calibration scale squared.
    pub variance_a: f64,
    pub variance_b: f64,
    pub oracle_variance_a: f64,
    pub oracle_variance_b: f64,
    pub histogram_a: Histogram,
    pub histogram_b: Histogram,
    /// Expectation mode only: detector-A readings against the cosine law.
    pub ks_a: Option<KsTest>,
}

impl NoiseReport {
    pub fn relative_variance_error(&self) -> (f64, f64) {
        (
            (self.variance_a / self.oracle_variance_a - 1.0).abs(),
            (self.variance_b / self.oracle_variance_b - 1.0).abs(),
        )
    }
}

pub fn run_noise_analysis(cfg: &ExperimentConfig) -> Result<NoiseReport> {
    check_kind(cfg, ExperimentKind::Noise)?;
    let dir_a = Direction::new(cfg.noise_theta_a, cfg.noise_phi_a)?;
    let dir_b = Direction::new(cfg.noise_theta_b, cfg.noise_phi_b)?;
    let sampler = spin_sampler(cfg, dir_a, dir_b)?;
    let channels: Vec<Channel> = enumerate_channels(sampler.sources(), cfg.stats)
        .into_iter()
        .filter(|c| c.kind.is_exchange())
        .collect();
    let kappa = cfg.exchange_calibration;
    let (element_a, _) = sampler.exchange_elements()?;
    let bound = |det: Detector| {
        let setup = sampler.detector(det);
        kappa * setup.mixed(true).normalization() * setup.decomposition().max_abs_eigenvalue()
    };
    let (bound_a, bound_b) = (bound(Detector::A), bound(Detector::B));
    let collect_ks = cfg.mode == SamplingMode::Expectation && element_a.norm() > 0.0;
    let ks_scale = kappa * element_a.norm();

    let tally = run_chunked(
        cfg.trials,
        cfg.workers,
        || NoiseTally {
            acc: Accumulator::new(1),
            raw_a: Moments::default(),
            raw_b: Moments::default(),
            readings: 0,
            hist_a: Histogram::new(-bound_a, bound_a, cfg.noise_bins),
            hist_b: Histogram::new(-bound_b, bound_b, cfg.noise_bins),
            ks_samples: Vec::new(),
        },
        |tally, t| {
            let mut stream = RngStream::for_trial(cfg.seed, 0, t);
            let event = draw_event(&mut stream, cfg.time_step * t as f64, t);
            let mut pairs = Vec::with_capacity(channels.len());
            for channel in &channels {
                let (a, b) = sampler.sample_event_readings(&mut stream, &event, channel);
                tally.raw_a.push(a.value);
                tally.raw_b.push(b.value);
                tally.readings += 1;
                tally.hist_a.add(a.value);
                tally.hist_b.add(b.value);
                if collect_ks && channel.kind == ChannelKind::ExchUV {
                    tally.ks_samples.push(a.value / ks_scale);
                }
                pairs.push((a, b, channel.weight));
            }
            tally.acc.accumulate_trial(&pairs)
        },
        |total, part| {
            total.acc.merge(&part.acc)?;
            total.raw_a.merge(&part.raw_a);
            total.raw_b.merge(&part.raw_b);
            total.readings += part.readings;
            total.hist_a.merge(&part.hist_a);
            total.hist_b.merge(&part.hist_b);
            total.ks_samples.extend(part.ks_samples);
            Ok(())
        },
    )?;

    let scale = kappa * kappa;
    let variance = |m: &Moments| {
        let n = tally.readings as f64;
        let mean = m.sum() / n;
        (m.sum_sq() / n - mean * mean) / scale
    };
    let (u, v) = (&sampler.sources().u.state, &sampler.sources().v.state);
    let oracle_variance_a =
        mixed_noise_variance(u, v, sampler.detector(Detector::A).op(), cfg.mode)?;
    let oracle_variance_b =
        mixed_noise_variance(v, u, sampler.detector(Detector::B).op(), cfg.mode)?;
    let mut ks_samples = tally.ks_samples;
    let ks_a = collect_ks.then(|| ks_test(&mut ks_samples, cosine_cdf));

    let scn = TwoSourceScenario::new(
        sampler.sources().clone(),
        spin_operator(dir_a),
        spin_operator(dir_b),
        cfg.stats,
    )?;
    let oracle_corr = expected_joint_corr(&scn)?;
    let est = tally.acc.estimates();
    let (variance_a, variance_b) = (variance(&tally.raw_a), variance(&tally.raw_b));
    let mut row = ResultRow {
        point: vec![
            ("theta_a", Some(dir_a.theta())),
            ("phi_a", Some(dir_a.phi())),
            ("theta_b", Some(dir_b.theta())),
            ("phi_b", Some(dir_b.phi())),
            ("var_a", Some(variance_a)),
            ("var_b", Some(variance_b)),
            ("oracle_var_a", Some(oracle_variance_a)),
            ("oracle_var_b", Some(oracle_variance_b)),
            ("ks_a", ks_a.map(|k| k.statistic)),
            ("ks_critical", ks_a.map(|k| k.critical)),
        ],
        ..ResultRow::default()
    }
    .with_joint(&est)
    .with_oracle(0.0, oracle_corr, oracle_corr);
    row.z_score = finite(est.mean_ab.z_score(oracle_corr));

    Ok(NoiseReport {
        rows: vec![row],
        variance_a,
        variance_b,
        oracle_variance_a,
        oracle_variance_b,
        histogram_a: tally.hist_a,
        histogram_b: tally.hist_b,
        ks_a,
    })
}

/// Oracle values on the configured grid, with no Monte Carlo columns.
pub fn oracle_table(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::Epr => cfg
            .epr_grid()?
            .into_iter()
            .map(|(a, b)| {
                let (uncorr, corr, total) = spin_oracle(cfg, a, b)?;
                Ok(ResultRow {
                    point: epr_point_fields(a, b),
                    ..ResultRow::default()
                }
                .with_oracle(uncorr, corr, total))
            })
            .collect(),
        ExperimentKind::Hbt => cfg
            .hbt_grid()
            .into_iter()
            .map(|(r_len, r)| {
                let phase = hbt_phase(&cfg.hbt_p, &cfg.hbt_p_prime, &r)?;
                let total = hbt_correlation(
                    &cfg.hbt_p,
                    &cfg.hbt_p_prime,
                    &r,
                    cfg.occ_u,
                    cfg.occ_v,
                    cfg.stats,
                )?;
                let uncorr = 2.0 * cfg.occ_u * cfg.occ_v;
                Ok(ResultRow {
                    point: vec![("r", Some(r_len)), ("phase", Some(phase))],
                    ..ResultRow::default()
                }
                .with_oracle(uncorr, total - uncorr, total))
            })
            .collect(),
        ExperimentKind::SpinFlow => Ok(cfg
            .spinflow_thetas
            .iter()
            .map(|&theta| ResultRow {
                point: vec![
                    ("theta", Some(theta)),
                    ("f_up", Some(cfg.occ_u)),
                    ("f_down", Some(cfg.occ_v)),
                    ("p_plus", None),
                    ("stderr_p_plus", None),
                    (
                        "oracle_p_plus",
                        Some(oracle::spin_flow_plus_probability(theta)),
                    ),
                ],
                oracle_total: Some(oracle::spin_flow_mean(theta, cfg.occ_u, cfg.occ_v)),
                ..ResultRow::default()
            })
            .collect()),
        ExperimentKind::Noise => {
            let dir_a = Direction::new(cfg.noise_theta_a, cfg.noise_phi_a)?;
            let dir_b = Direction::new(cfg.noise_theta_b, cfg.noise_phi_b)?;
            let scn = SpinScenario {
                dir_a,
                dir_b,
                occ_up: cfg.occ_u,
                occ_down: cfg.occ_v,
            }
            .to_two_source(cfg.stats)?;
            let (u, v) = (&scn.sources.u.state, &scn.sources.v.state);
            let corr = expected_joint_corr(&scn)?;
            Ok(vec![ResultRow {
                point: vec![
                    ("theta_a", Some(dir_a.theta())),
                    ("phi_a", Some(dir_a.phi())),
                    ("theta_b", Some(dir_b.theta())),
                    ("phi_b", Some(dir_b.phi())),
                    ("var_a", None),
                    ("var_b", None),
                    (
                        "oracle_var_a",
                        Some(mixed_noise_variance(u, v, &scn.op_a, cfg.mode)?),
                    ),
                    (
                        "oracle_var_b",
                        Some(mixed_noise_variance(v, u, &scn.op_b, cfg.mode)?),
                    ),
                    ("ks_a", None),
                    ("ks_critical", None),
                ],
                ..ResultRow::default()
            }
            .with_oracle(0.0, corr, corr)])
        }
    }
}

/// Dispatches on `cfg.kind`; noise runs return their single row.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    match cfg.kind {
        ExperimentKind::Epr => run_epr_scan(cfg),
        ExperimentKind::Hbt => run_hbt_scan(cfg),
        ExperimentKind::SpinFlow => run_spinflow(cfg),
        ExperimentKind::Noise => Ok(run_noise_analysis(cfg)?.rows),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gate {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfTestReport {
    pub seed: u64,
    pub gates: Vec<Gate>,
}

impl SelfTestReport {
    pub fn passed(&self) -> bool {
        self.gates.iter().all(|g| g.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &Gate> {
        self.gates.iter().filter(|g| !g.passed)
    }
}

const SMOKE_TRIALS: u64 = 10_000;
const SMOKE_Z: f64 = 5.0;

/// Oracle identities plus a short Monte Carlo smoke run of every
/// experiment. `calibration` replaces the exchange-reading scale so that a
/// broken calibration can be demonstrated.
pub fn selftest(seed: u64, calibration: f64) -> SelfTestReport {
    let mut gates = Vec::new();
    let mut gate = |name: &'static str, outcome: Result<(bool, String)>| {
        let (passed, detail) = outcome.unwrap_or_else(|e| (false, e.to_string()));
        gates.push(Gate {
            name,
            passed,
            detail,
        });
    };

    let mut stream = RngStream::new(seed, u64::MAX, 0);
    let mut random_direction = move || {
        let theta = PI * stream.uniform();
        let phi = 2.0 * PI * stream.uniform();
        Direction::new(theta, phi)
    };
    let pairs: Vec<(Direction, Direction)> = (0..100)
        .filter_map(|_| Some((random_direction().ok()?, random_direction().ok()?)))
        .collect();

    gate(
        "spin_total",
        (|| {
            let mut worst = 0.0f64;
            for (a, b) in &pairs {
                let scn = SpinScenario {
                    dir_a: *a,
                    dir_b: *b,
                    occ_up: 1.0,
                    occ_down: 1.0,
                }
                .to_two_source(Statistics::Fermion)?;
                worst = worst.max(
                    (expected_joint_total(&scn)? + 2.0 * oracle::spin_cos_gamma(*a, *b)).abs(),
                );
            }
            Ok((worst < 1e-12, format!("max |AB + 2cos γ| = {worst:.3e}")))
        })(),
    );

    gate(
        "singlet",
        (|| {
            let mut worst = 0.0f64;
            for (a, b) in &pairs {
                let scn = SpinScenario {
                    dir_a: *a,
                    dir_b: *b,
                    occ_up: 1.0,
                    occ_down: 1.0,
                }
                .to_two_source(Statistics::Fermion)?;
                worst = worst
                    .max((oracle::singlet_expectation(*a, *b) - expected_joint_total(&scn)?).abs());
            }
            Ok((worst < 1e-12, format!("max deviation = {worst:.3e}")))
        })(),
    );

    gate(
        "brute_force",
        (|| {
            let mut worst = 0.0f64;
            for (k, (a, b)) in pairs.iter().enumerate() {
                let stats = if k % 2 == 0 {
                    Statistics::Boson
                } else {
                    Statistics::Fermion
                };
                let u = StateVector::new(vec![
                    num_complex::Complex64::from_polar(a.theta().cos(), b.phi()),
                    num_complex::Complex64::from_polar(a.theta().sin(), a.phi()),
                ])?;
                let v = StateVector::new(vec![
                    num_complex::Complex64::from_polar(b.theta().sin(), a.phi()),
                    num_complex::Complex64::from_polar(b.theta().cos(), 0.3),
                ])?;
                let sources = SourcePair::new(
                    SourceSpec::new("u", u, 1.0 + a.theta(), 0.0)?,
                    SourceSpec::new("v", v, 0.5 + b.theta(), 0.0)?,
                )?;
                let scn =
                    TwoSourceScenario::new(sources, spin_operator(*a), spin_operator(*b), stats)?;
                worst = worst
                    .max((expected_joint_total(&scn)? - oracle::brute_force_joint(&scn)?).abs());
            }
            Ok((worst < 1e-12, format!("max deviation = {worst:.3e}")))
        })(),
    );

    gate(
        "spectral",
        (|| {
            let mut worst = 0.0f64;
            for (a, _) in &pairs {
                let op = spin_operator(*a);
                worst = worst.max(spectral_decompose(&op)?.reconstruct().max_abs_diff(&op));
            }
            Ok((
                worst < 1e-12,
                format!("max reconstruction error = {worst:.3e}"),
            ))
        })(),
    );

    gate(
        "hbt_periodicity",
        (|| {
            let mut worst = 0.0f64;
            for (a, _) in &pairs {
                let x = 4.0 * a.theta();
                for stats in [Statistics::Boson, Statistics::Fermion] {
                    let lhs = hbt_correlation(&[1.0], &[0.0], &[x], 1.0, 1.0, stats)?;
                    let rhs = hbt_correlation(&[1.0], &[0.0], &[x + 2.0 * PI], 1.0, 1.0, stats)?;
                    worst = worst.max((lhs - rhs).abs());
                }
            }
            Ok((worst < 1e-12, format!("max deviation = {worst:.3e}")))
        })(),
    );

    gate(
        "calibration",
        (|| {
            // Midpoint quadrature over the emission phase of one exchange channel
            // for σx detectors; must equal Re[⟨↑|σx|↓⟩⟨↓|σx|↑⟩] = 1.
            let cfg = ExperimentConfig {
                exchange_calibration: calibration,
                ..ExperimentConfig::for_kind(ExperimentKind::Epr)
            };
            let x = Direction::new(FRAC_PI_2, 0.0)?;
            let sampler = spin_sampler(&cfg, x, x)?;
            let channel = Channel {
                kind: ChannelKind::ExchUV,
                weight: 1.0,
            };
            let points = 64;
            let avg = (0..points)
                .map(|k| {
                    let event = crate::wavicle::EmissionEvent {
                        phase_u: (k as f64 + 0.5) * 2.0 * PI / points as f64,
                        phase_v: 0.0,
                        time: 0.0,
                        trial_id: 0,
                    };
                    let (a, b) = sampler.sample_event_readings(
                        &mut RngStream::new(seed, 0, 0),
                        &event,
                        &channel,
                    );
                    a.value * b.value
                })
                .sum::<f64>()
                / points as f64;
            Ok((
                (avg - 1.0).abs() < 1e-12,
                format!("phase-averaged product = {avg:.15}"),
            ))
        })(),
    );

    let smoke = |kind| ExperimentConfig {
        trials: SMOKE_TRIALS,
        seed,
        exchange_calibration: calibration,
        ..ExperimentConfig::for_kind(kind)
    };

    gate(
        "epr_smoke",
        (|| {
            let cfg = ExperimentConfig {
                epr_points: 3,
                ..smoke(ExperimentKind::Epr)
            };
            let rows = run_epr_scan(&cfg)?;
            let worst = rows
                .iter()
                .map(|r| r.z_score.unwrap_or(f64::INFINITY))
                .fold(0.0, f64::max);
            let worst_sep = rows
                .iter()
                .map(|r| {
                    let za = r.mc_mean_a.unwrap_or(f64::NAN).abs() / r.stderr_a.unwrap_or(f64::NAN);
                    let zb = r.mc_mean_b.unwrap_or(f64::NAN).abs() / r.stderr_b.unwrap_or(f64::NAN);
                    za.max(zb)
                })
                .fold(0.0, f64::max);
            let ab0 = rows[0].mc_mean_ab.unwrap_or(f64::NAN);
            Ok((
                worst < SMOKE_Z && worst_sep < SMOKE_Z,
                format!(
                    "max z(AB) = {worst:.3}, max z(separate) = {worst_sep:.3}, AB(γ=0) = {ab0:.6}"
                ),
            ))
        })(),
    );

    gate(
        "hbt_smoke",
        (|| {
            let mut worst = 0.0f64;
            let mut values = Vec::new();
            for stats in [Statistics::Boson, Statistics::Fermion] {
                let cfg = ExperimentConfig {
                    stats,
                    hbt_points: 1,
                    ..smoke(ExperimentKind::Hbt)
                };
                let row = &run_hbt_scan(&cfg)?[0];
                worst = worst.max(row.z_score.unwrap_or(f64::INFINITY));
                values.push(row.mc_mean_ab.unwrap_or(f64::NAN));
            }
            Ok((
                worst < SMOKE_Z,
                format!(
                    "R=0 boson {:.6}, fermion {:.6}, max z = {worst:.3}",
                    values[0], values[1]
                ),
            ))
        })(),
    );

    gate(
        "spinflow_smoke",
        (|| {
            let rows = run_spinflow(&smoke(ExperimentKind::SpinFlow))?;
            let worst = rows
                .iter()
                .map(|r| r.z_score.unwrap_or(f64::INFINITY))
                .fold(0.0, f64::max);
            Ok((worst < SMOKE_Z, format!("max z = {worst:.3}")))
        })(),
    );

    gate(
        "noise_smoke",
        (|| {
            let report = run_noise_analysis(&smoke(ExperimentKind::Noise))?;
            let (ea, eb) = report.relative_variance_error();
            let z = report.rows[0].z_score.unwrap_or(f64::INFINITY);
            Ok((
                ea < 0.1 && eb < 0.1 && z < SMOKE_Z,
                format!(
                    "var_a = {:.6} (oracle {:.6}), var_b = {:.6}, z(corr) = {z:.3}",
                    report.variance_a, report.oracle_variance_a, report.variance_b
                ),
            ))
        })(),
    );

    SelfTestReport { seed, gates }
}

/// Default calibration, re-exported for front ends.
pub const DEFAULT_CALIBRATION: f64 = SQRT_2;

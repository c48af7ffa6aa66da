//! Monte-Carlo word-length sweeps.
//!
//! A sweep fixes one unquantized reference (trajectory, embedding, affine
//! map, reference operators, reduced rank) and then, for every
//! `(bits, trial)` cell, dither-quantizes the snapshot matrices and measures
//! how far the quantized operators and predictions drift from it.
//!
//! Every cell draws its dither from a seed derived only from
//! `(master_seed, bits, trial)`, so results do not depend on scheduling or
//! thread count.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{self, MatrixFormat};
use crate::dmd::{self, FullDmd, RankRule, ReducedDmd, SnapshotPair};
use crate::error::{Error, Result};
use crate::linalg::{self, ThinSvd};
use crate::metrics::{self, BoxStats, ErrorSample, MatrixNorm, DEFAULT_FLOOR_TOL};
use crate::preprocessing::{self, AffineMap};
use crate::quantizer::{DitherStream, QuantizerSpec};
use crate::systems::{self, SystemSpec, TrajectoryConfig};

/// Word length meaning "no quantization": the cell reuses the unquantized
/// snapshots, which gives a zero-error baseline.
pub const UNQUANTIZED_BITS: u32 = 64;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Dither sub-streams used for `Phi` and `Phi'` within a cell.
const PHI_STREAM: u64 = 0;
const PHI_PRIME_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Simulated trajectory, Hankel-embedded with `embedding_dimension`
    /// delays.
    System {
        system: SystemSpec,
        trajectory: TrajectoryConfig,
        embedding_dimension: usize,
    },
    /// Observables-by-snapshots matrix read from disk.
    Dataset {
        path: PathBuf,
        #[serde(default)]
        format: Option<MatrixFormat>,
        #[serde(default = "one")]
        embedding_dimension: usize,
    },
}

fn one() -> usize {
    1
}

impl DataSource {
    pub fn embedding_dimension(&self) -> usize {
        match self {
            DataSource::System { embedding_dimension, .. } | DataSource::Dataset { embedding_dimension, .. } => {
                *embedding_dimension
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    #[default]
    FullAndReduced,
    /// Skips the full operator, which is the expensive part for large `N`.
    ReducedOnly,
}

/// What quantized-model predictions are compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionTarget {
    /// The recorded states.
    #[default]
    Truth,
    /// The rollout of the unquantized reduced model.
    ReferenceModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub source: DataSource,
    /// Number of snapshot pairs `T`; the first `T + 1` embedded columns are
    /// used.
    pub training_snapshots: usize,
    pub bit_list: Vec<u32>,
    pub trials: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub rank_rule: RankRule,
    pub quantizer_range: [f64; 2],
    /// Affine-map margin. `None` uses half the resolution of the shortest
    /// word length in `bit_list`.
    #[serde(default)]
    pub margin: Option<f64>,
    #[serde(default)]
    pub norm: MatrixNorm,
    #[serde(default)]
    pub mode: SweepMode,
    #[serde(default)]
    pub prediction_target: PredictionTarget,
    /// Also run the negative-ridge recovery in every cell.
    #[serde(default)]
    pub recovery_enabled: bool,
    /// Relative pseudo-inverse cutoff for the full operator. `None` is the
    /// machine-precision default.
    #[serde(default)]
    pub pinv_tolerance: Option<f64>,
    #[serde(default = "default_floor_tol")]
    pub floor_tol: f64,
}

fn default_floor_tol() -> f64 {
    DEFAULT_FLOOR_TOL
}

impl ExperimentConfig {
    fn hankel_preset(system: SystemSpec) -> Self {
        Self {
            source: DataSource::System {
                system,
                trajectory: TrajectoryConfig::new(0.1, 10_000.0),
                embedding_dimension: 100,
            },
            training_snapshots: 500,
            bit_list: (2..=8).collect(),
            trials: 50,
            master_seed: 0,
            rank_rule: RankRule::default(),
            quantizer_range: [-1.0, 1.0],
            margin: None,
            norm: MatrixNorm::Spectral,
            mode: SweepMode::FullAndReduced,
            prediction_target: PredictionTarget::Truth,
            recovery_enabled: false,
            // Hankel snapshot matrices are numerically rank deficient; a
            // machine-precision cutoff makes the reference K mostly noise.
            pinv_tolerance: Some(1e-2),
            floor_tol: DEFAULT_FLOOR_TOL,
        }
    }

    /// Negatively damped pendulum from `(1, 0)`, 100 delays, 500 pairs.
    pub fn pendulum() -> Self {
        Self::hankel_preset(SystemSpec::NegDampedPendulum)
    }

    /// Van der Pol oscillator from `(0.1, 0)`, 100 delays, 500 pairs.
    pub fn van_der_pol() -> Self {
        Self::hankel_preset(SystemSpec::VanDerPol)
    }

    pub fn u_min(&self) -> f64 {
        self.quantizer_range[0]
    }

    pub fn u_max(&self) -> f64 {
        self.quantizer_range[1]
    }

    /// Quantizer for `bits`, or `None` for [`UNQUANTIZED_BITS`].
    pub fn quantizer(&self, bits: u32) -> Result<Option<QuantizerSpec>> {
        if bits == UNQUANTIZED_BITS {
            return Ok(None);
        }
        QuantizerSpec::new(self.u_min(), self.u_max(), bits).map(Some)
    }

    /// Margin actually used by the affine map.
    pub fn resolved_margin(&self) -> Result<f64> {
        if let Some(m) = self.margin {
            return Ok(m);
        }
        let shortest = self.bit_list.iter().copied().filter(|&b| b != UNQUANTIZED_BITS).min();
        Ok(match shortest {
            Some(b) => 0.5 * QuantizerSpec::new(self.u_min(), self.u_max(), b)?.resolution(),
            None => 0.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.training_snapshots == 0 {
            return Err(Error::InvalidArgument("training_snapshots must be >= 1".into()));
        }
        if self.bit_list.is_empty() {
            return Err(Error::InvalidArgument("bit_list is empty".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be >= 1".into()));
        }
        for &b in &self.bit_list {
            self.quantizer(b)?;
        }
        let mut sorted = self.bit_list.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.bit_list.len() {
            return Err(Error::InvalidArgument("bit_list contains duplicates".into()));
        }
        self.rank_rule.validate()?;
        if self.source.embedding_dimension() == 0 {
            return Err(Error::InvalidArgument("embedding_dimension must be >= 1".into()));
        }
        if let DataSource::System { trajectory, .. } = &self.source {
            trajectory.validate()?;
        }
        let margin = self.resolved_margin()?;
        if !(margin >= 0.0 && 2.0 * margin < self.u_max() - self.u_min()) {
            return Err(Error::InvalidArgument(format!(
                "margin {margin} leaves no room inside [{}, {}]",
                self.u_min(),
                self.u_max()
            )));
        }
        if let Some(tol) = self.pinv_tolerance {
            if !(0.0..1.0).contains(&tol) {
                return Err(Error::InvalidArgument(format!("pinv_tolerance must be in [0, 1), got {tol}")));
            }
        }
        if !(self.floor_tol >= 0.0 && self.floor_tol.is_finite()) {
            return Err(Error::InvalidArgument(format!("floor_tol must be >= 0, got {}", self.floor_tol)));
        }
        if self.recovery_enabled && self.mode == SweepMode::ReducedOnly {
            return Err(Error::InvalidArgument("recovery needs the full operator; mode is reduced_only".into()));
        }
        Ok(())
    }
}

/// Stable 64-bit seed for one cell.
pub fn derive_seed(master_seed: u64, bits: u32, trial: usize) -> u64 {
    fn splitmix64(x: u64) -> u64 {
        let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix64(splitmix64(splitmix64(master_seed) ^ bits as u64) ^ trial as u64)
}

/// Mapped training snapshots shared by every cell.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub map: AffineMap,
    pub margin: f64,
    /// `T + 1` mapped, embedded columns.
    pub window: DMatrix<f64>,
    pub pair: SnapshotPair,
}

impl PreparedData {
    /// Embedded training states `x_0 .. x_{T-1}` in original units.
    pub fn truth(&self) -> DMatrix<f64> {
        self.map.inverse(self.pair.phi())
    }

    pub fn x0(&self) -> DVector<f64> {
        self.pair.phi().column(0).into_owned()
    }
}

/// Loads or simulates the raw data, embeds it and maps it into the
/// quantizer range.
pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedData> {
    cfg.validate()?;
    let m = cfg.source.embedding_dimension();
    let needed = cfg.training_snapshots + m;
    let raw = match &cfg.source {
        DataSource::System { system, trajectory, .. } => {
            let available = trajectory.samples() + 1;
            if available < needed {
                return Err(Error::InsufficientData(format!(
                    "trajectory has {available} samples; T = {} with {m} delays needs {needed}",
                    cfg.training_snapshots
                )));
            }
            // only simulate what the window uses
            let mut short = trajectory.clone();
            short.duration = (needed - 1) as f64 * trajectory.dt;
            systems::simulate(system, &short)?
        }
        DataSource::Dataset { path, format, .. } => dataio::read_matrix(path, *format)?,
    };
    prepare_from_raw(cfg, &raw)
}

/// [`prepare`] for a trajectory already in memory.
pub fn prepare_from_raw(cfg: &ExperimentConfig, raw: &DMatrix<f64>) -> Result<PreparedData> {
    let m = cfg.source.embedding_dimension();
    let needed = cfg.training_snapshots + m;
    if raw.ncols() < needed {
        return Err(Error::InsufficientData(format!(
            "data has {} columns; T = {} with {m} delays needs {needed}",
            raw.ncols(),
            cfg.training_snapshots
        )));
    }
    let embedded = preprocessing::hankel_embed(&raw.columns(0, needed).into_owned(), m)?;
    let margin = cfg.resolved_margin()?;
    let map = preprocessing::fit_affine(&embedded, cfg.u_min(), cfg.u_max(), margin)?;
    let window = map.apply(&embedded);
    let pair = dmd::build_snapshots(&window)?;
    Ok(PreparedData {
        map,
        margin,
        window,
        pair,
    })
}

/// Unquantized operators every cell is measured against.
#[derive(Debug, Clone)]
pub struct Reference {
    pub full: Option<FullDmd>,
    pub reduced: ReducedDmd,
    pub rank: usize,
    /// Reference reduced-model rollout over the training window, original
    /// units.
    pub prediction: DMatrix<f64>,
}

pub fn compute_reference(cfg: &ExperimentConfig, data: &PreparedData) -> Result<Reference> {
    let svd = linalg::thin_svd(data.pair.phi());
    let rank = cfg
        .rank_rule
        .select(&svd.singular_values, data.pair.observables(), data.pair.snapshots())?;
    let full = match cfg.mode {
        SweepMode::FullAndReduced => Some(dmd::dmd_full_with_svd(&data.pair, &svd, cfg.pinv_tolerance)?),
        SweepMode::ReducedOnly => None,
    };
    let reduced = dmd::dmd_reduced_with_svd(&data.pair, &svd, rank)?;
    let rollout = dmd::predict_reduced(&reduced, &data.x0(), data.pair.snapshots() - 1)?;
    Ok(Reference {
        full,
        reduced,
        rank,
        prediction: data.map.inverse(&rollout.states),
    })
}

/// Dither-quantizes both snapshot matrices of a cell. Returns the pair and
/// the number of saturated entries.
pub fn quantize_pair(
    cfg: &ExperimentConfig,
    pair: &SnapshotPair,
    bits: u32,
    trial: usize,
) -> Result<(SnapshotPair, usize)> {
    let Some(q) = cfg.quantizer(bits)? else {
        return Ok((pair.clone(), 0));
    };
    let seed = derive_seed(cfg.master_seed, bits, trial);
    let phi = q.quantize_matrix(pair.phi(), &mut DitherStream::substream(seed, PHI_STREAM));
    let phi_prime = q.quantize_matrix(pair.phi_prime(), &mut DitherStream::substream(seed, PHI_PRIME_STREAM));
    let saturated = phi.saturation_count + phi_prime.saturation_count;
    Ok((SnapshotPair::new(phi.matrix, phi_prime.matrix)?, saturated))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub sample: ErrorSample,
    pub saturation_count: usize,
    pub ill_conditioned: bool,
    pub max_imaginary_residue: f64,
    pub skipped_columns: usize,
    /// Relative error of the recovered operator, when recovery is enabled.
    pub recovered_full_rel_err: Option<f64>,
    pub recovery_guarded: bool,
}

pub fn run_trial(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    reference: &Reference,
    bits: u32,
    trial: usize,
) -> Result<TrialOutcome> {
    let (qpair, saturation_count) = quantize_pair(cfg, &data.pair, bits, trial)?;
    let svd: ThinSvd = linalg::thin_svd(qpair.phi());

    let full_matrix_rel_err = match &reference.full {
        Some(full) => {
            let kt = dmd::dmd_full_with_svd(&qpair, &svd, cfg.pinv_tolerance)?;
            Some(metrics::rel_matrix_error(&full.k, &kt.k, cfg.norm)?)
        }
        None => None,
    };

    let reduced = dmd::dmd_reduced_with_svd(&qpair, &svd, reference.rank)?;
    let reduced_matrix_rel_err = metrics::rel_matrix_error(&reference.reduced.k_r, &reduced.k_r, cfg.norm)?;

    let rollout = dmd::predict_reduced(&reduced, &data.x0(), qpair.snapshots() - 1)?;
    let predicted = data.map.inverse(&rollout.states);
    let target = match cfg.prediction_target {
        PredictionTarget::Truth => data.truth(),
        PredictionTarget::ReferenceModel => reference.prediction.clone(),
    };
    let pred = metrics::avg_pred_rel_error(&target, &predicted, cfg.floor_tol)?;

    let (mut recovered_full_rel_err, mut recovery_guarded) = (None, false);
    if cfg.recovery_enabled {
        if let (Some(full), Some(q)) = (&reference.full, cfg.quantizer(bits)?) {
            let rec = dmd::recover_regularized(&qpair, q.resolution())?;
            recovered_full_rel_err = Some(metrics::rel_matrix_error(&full.k, &rec.k, cfg.norm)?);
            recovery_guarded = rec.guarded;
        }
    }

    let sample = ErrorSample {
        bits,
        trial,
        full_matrix_rel_err,
        reduced_matrix_rel_err,
        avg_pred_rel_err: pred.mean,
    };
    let finite = [Some(reduced_matrix_rel_err), Some(pred.mean), full_matrix_rel_err, recovered_full_rel_err]
        .into_iter()
        .flatten()
        .all(f64::is_finite);
    if !finite {
        return Err(Error::DegenerateData("non-finite error metric".into()));
    }
    Ok(TrialOutcome {
        sample,
        saturation_count,
        ill_conditioned: reduced.ill_conditioned_eigenbasis(),
        max_imaginary_residue: rollout.max_imaginary_residue,
        skipped_columns: pred.skipped,
        recovered_full_rel_err,
        recovery_guarded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummaries {
    pub full_matrix_rel_err: Option<BoxStats>,
    pub reduced_matrix_rel_err: Option<BoxStats>,
    pub avg_pred_rel_err: Option<BoxStats>,
    pub recovered_full_rel_err: Option<BoxStats>,
}

/// All successful cells of one word length, in trial order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitGroup {
    pub bits: u32,
    /// `None` for [`UNQUANTIZED_BITS`].
    pub resolution: Option<f64>,
    pub trials: Vec<usize>,
    pub full_matrix_rel_err: Option<Vec<f64>>,
    pub reduced_matrix_rel_err: Vec<f64>,
    pub avg_pred_rel_err: Vec<f64>,
    pub recovered_full_rel_err: Option<Vec<f64>>,
    pub summary: MetricSummaries,
    pub saturation_count: usize,
    pub ill_conditioned_count: usize,
    pub skipped_prediction_columns: usize,
    pub max_imaginary_residue: f64,
    pub recovery_guard_count: usize,
}

impl BitGroup {
    fn from_outcomes(bits: u32, resolution: Option<f64>, outcomes: &[&TrialOutcome]) -> Result<Self> {
        let summarize = |v: &[f64]| if v.is_empty() { Ok(None) } else { metrics::summarize(v).map(Some) };
        let full: Option<Vec<f64>> = outcomes.iter().map(|o| o.sample.full_matrix_rel_err).collect();
        let recovered: Option<Vec<f64>> = outcomes.iter().map(|o| o.recovered_full_rel_err).collect();
        let full = full.filter(|v| !v.is_empty());
        let recovered = recovered.filter(|v| !v.is_empty());
        let reduced: Vec<f64> = outcomes.iter().map(|o| o.sample.reduced_matrix_rel_err).collect();
        let pred: Vec<f64> = outcomes.iter().map(|o| o.sample.avg_pred_rel_err).collect();
        Ok(Self {
            bits,
            resolution,
            trials: outcomes.iter().map(|o| o.sample.trial).collect(),
            summary: MetricSummaries {
                full_matrix_rel_err: full.as_deref().map(summarize).transpose()?.flatten(),
                reduced_matrix_rel_err: summarize(&reduced)?,
                avg_pred_rel_err: summarize(&pred)?,
                recovered_full_rel_err: recovered.as_deref().map(summarize).transpose()?.flatten(),
            },
            full_matrix_rel_err: full,
            reduced_matrix_rel_err: reduced,
            avg_pred_rel_err: pred,
            recovered_full_rel_err: recovered,
            saturation_count: outcomes.iter().map(|o| o.saturation_count).sum(),
            ill_conditioned_count: outcomes.iter().filter(|o| o.ill_conditioned).count(),
            skipped_prediction_columns: outcomes.iter().map(|o| o.skipped_columns).sum(),
            max_imaginary_residue: outcomes.iter().map(|o| o.max_imaginary_residue).fold(0.0, f64::max),
            recovery_guard_count: outcomes.iter().filter(|o| o.recovery_guarded).count(),
        })
    }

    /// Per-cell samples, in trial order.
    pub fn samples(&self) -> Vec<ErrorSample> {
        (0..self.trials.len())
            .map(|i| ErrorSample {
                bits: self.bits,
                trial: self.trials[i],
                full_matrix_rel_err: self.full_matrix_rel_err.as_ref().map(|v| v[i]),
                reduced_matrix_rel_err: self.reduced_matrix_rel_err[i],
                avg_pred_rel_err: self.avg_pred_rel_err[i],
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub bits: u32,
    pub trial: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSummary {
    pub observables: usize,
    pub snapshots: usize,
    pub reduced_rank: usize,
    pub full_rank: Option<usize>,
    pub affine_map: AffineMap,
    pub margin: f64,
    pub eigenbasis_condition: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub reference: ReferenceSummary,
    /// Ascending word length.
    pub groups: Vec<BitGroup>,
    pub failures: Vec<CellFailure>,
}

impl SweepReport {
    /// Assembles a report, checking that every `(bits, trial)` cell of the
    /// config is accounted for exactly once.
    pub fn new(
        config: ExperimentConfig,
        reference: ReferenceSummary,
        groups: Vec<BitGroup>,
        failures: Vec<CellFailure>,
    ) -> Result<Self> {
        if config.trials == 0 || config.bit_list.is_empty() {
            return Err(Error::EmptyInput);
        }
        for &bits in &config.bit_list {
            let mut seen: Vec<usize> = groups
                .iter()
                .filter(|g| g.bits == bits)
                .flat_map(|g| g.trials.iter().copied())
                .chain(failures.iter().filter(|f| f.bits == bits).map(|f| f.trial))
                .collect();
            seen.sort_unstable();
            if seen != (0..config.trials).collect::<Vec<_>>() {
                return Err(Error::InvalidArgument(format!(
                    "report for {bits} bits does not cover trials 0..{} exactly once",
                    config.trials
                )));
            }
        }
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            config,
            reference,
            groups,
            failures,
        })
    }

    pub fn group(&self, bits: u32) -> Option<&BitGroup> {
        self.groups.iter().find(|g| g.bits == bits)
    }

    pub fn samples(&self) -> Vec<ErrorSample> {
        self.groups.iter().flat_map(BitGroup::samples).collect()
    }
}

/// Runs a sweep on the global rayon pool.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let data = prepare(cfg)?;
    run_sweep_prepared(cfg, &data)
}

/// Runs a sweep on a dedicated pool of `threads` workers. The report does
/// not depend on `threads`.
pub fn run_sweep_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<SweepReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let data = prepare(cfg)?;
    pool.install(|| run_sweep_prepared(cfg, &data))
}

pub fn run_sweep_prepared(cfg: &ExperimentConfig, data: &PreparedData) -> Result<SweepReport> {
    cfg.validate()?;
    let reference = compute_reference(cfg, data)?;

    let mut bits_sorted = cfg.bit_list.clone();
    bits_sorted.sort_unstable();
    let cells: Vec<(u32, usize)> = bits_sorted
        .iter()
        .flat_map(|&b| (0..cfg.trials).map(move |t| (b, t)))
        .collect();
    // indexed collect keeps cell order regardless of scheduling
    let results: Vec<Result<TrialOutcome>> = cells
        .par_iter()
        .map(|&(b, t)| run_trial(cfg, data, &reference, b, t))
        .collect();

    let mut groups = Vec::with_capacity(bits_sorted.len());
    let mut failures = Vec::new();
    for &bits in &bits_sorted {
        let mut ok = Vec::new();
        for (&(b, t), res) in cells.iter().zip(&results) {
            if b != bits {
                continue;
            }
            match res {
                Ok(o) => ok.push(o),
                Err(e) => failures.push(CellFailure {
                    bits,
                    trial: t,
                    message: e.to_string(),
                }),
            }
        }
        if !ok.is_empty() {
            let resolution = cfg.quantizer(bits)?.map(|q| q.resolution());
            groups.push(BitGroup::from_outcomes(bits, resolution, &ok)?);
        }
    }

    let summary = ReferenceSummary {
        observables: data.pair.observables(),
        snapshots: data.pair.snapshots(),
        reduced_rank: reference.rank,
        full_rank: reference.full.as_ref().map(|f| f.rank),
        affine_map: data.map,
        margin: data.margin,
        eigenbasis_condition: reference.reduced.eigenbasis_condition,
    };
    SweepReport::new(cfg.clone(), summary, groups, failures)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryTrial {
    pub trial: usize,
    /// `||K~ - K||_F` for the plain quantized estimate.
    pub plain_distance: f64,
    /// `||K_rec - K||_F` for the recovered estimate.
    pub recovered_distance: f64,
    pub gamma: f64,
    pub guarded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryStudy {
    pub bits: u32,
    pub epsilon: f64,
    pub trials: Vec<RecoveryTrial>,
    pub guarded_count: usize,
    /// Means over trials whose guard did not trip; `None` if all tripped.
    pub mean_plain_distance: Option<f64>,
    pub mean_recovered_distance: Option<f64>,
}

/// Compares plain and recovered full operators against the unquantized
/// reference, trial by trial, using the same dither as the sweep cells.
pub fn run_recovery_study(cfg: &ExperimentConfig, data: &PreparedData, bits: u32) -> Result<RecoveryStudy> {
    cfg.validate()?;
    let q = cfg
        .quantizer(bits)?
        .ok_or_else(|| Error::InvalidArgument("recovery needs a finite word length".into()))?;
    let reference = dmd::dmd_full(&data.pair, cfg.pinv_tolerance)?;
    let trials = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let (qpair, _) = quantize_pair(cfg, &data.pair, bits, t)?;
            let plain = dmd::dmd_full(&qpair, cfg.pinv_tolerance)?;
            let rec = dmd::recover_regularized(&qpair, q.resolution())?;
            Ok(RecoveryTrial {
                trial: t,
                plain_distance: (&plain.k - &reference.k).norm(),
                recovered_distance: (&rec.k - &reference.k).norm(),
                gamma: rec.gamma,
                guarded: rec.guarded,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let kept: Vec<&RecoveryTrial> = trials.iter().filter(|t| !t.guarded).collect();
    let mean = |f: fn(&RecoveryTrial) -> f64| {
        (!kept.is_empty()).then(|| kept.iter().map(|t| f(t)).sum::<f64>() / kept.len() as f64)
    };
    Ok(RecoveryStudy {
        bits,
        epsilon: q.resolution(),
        guarded_count: trials.len() - kept.len(),
        mean_plain_distance: mean(|t| t.plain_distance),
        mean_recovered_distance: mean(|t| t.recovered_distance),
        trials,
    })
}

//! Monte Carlo experiment engine: sweeps SNR, aggregates error-probability,
//! measurement and feedback metrics per scheme, and emits machine-readable
//! result tables.
//!
//! Trials are embarrassingly parallel. Trial `i` of grid point `g` for
//! scheme `s` seeds its own ChaCha stream from
//! `seed::derive(master_seed, [s, g, i])`, and the per-point reduction folds
//! trial results in index order, so any worker count (or the sequential
//! fallback) produces byte-identical tables.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array_channel::{sample_channel, AngleGrid, NoiseModel};
use crate::codebook::{build_codebook, Codebook, StagePlan};
use crate::schemes::{run_fixed, run_race, select_scheme, RaceConfig, SwitchTable};
use crate::{par, seed, Error, Result};

fn default_path_variance() -> f64 {
    1.0
}

/// How a named scheme is parameterized in a sweep config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SchemeSpec {
    Fixed {
        k_vector: Vec<usize>,
    },
    Race {
        k_vector: Vec<usize>,
        gamma: f64,
        m_max: usize,
    },
    Switch {
        table: SwitchTable,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeEntry {
    pub name: String,
    #[serde(flatten)]
    pub spec: SchemeSpec,
}

/// Link-level constants shared by every trial of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    pub n_antennas: usize,
    pub path_variance: f64,
}

/// Full sweep description, mirrored by the JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n_antennas: usize,
    #[serde(default = "default_path_variance")]
    pub p_r: f64,
    pub snr_grid_db: Vec<f64>,
    pub trials_per_point: usize,
    pub master_seed: u64,
    pub schemes: Vec<SchemeEntry>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn link(&self) -> LinkParams {
        LinkParams {
            n_antennas: self.n_antennas,
            path_variance: self.p_r,
        }
    }

    /// Field-path diagnostics for everything the schema cannot express.
    pub fn validate(&self) -> Result<()> {
        let fail = |path: &str, msg: String| Err(Error::Config(format!("{path}: {msg}")));
        if self.n_antennas < 2 {
            return fail("n_antennas", "must be >= 2".into());
        }
        if self.p_r <= 0.0 {
            return fail("p_r", "must be > 0".into());
        }
        if self.snr_grid_db.is_empty() {
            return fail("snr_grid_db", "must not be empty".into());
        }
        if self.trials_per_point < 1 {
            return fail("trials_per_point", "must be >= 1".into());
        }
        if self.schemes.is_empty() {
            return fail("schemes", "must not be empty".into());
        }
        for (i, entry) in self.schemes.iter().enumerate() {
            if entry.name.is_empty() {
                return fail(&format!("schemes[{i}].name"), "must not be empty".into());
            }
            if self.schemes[..i].iter().any(|e| e.name == entry.name) {
                return fail(
                    &format!("schemes[{i}].name"),
                    format!("duplicate scheme name {:?}", entry.name),
                );
            }
            match &entry.spec {
                SchemeSpec::Fixed { k_vector } => {
                    if let Err(e) = StagePlan::new(k_vector.clone(), self.n_antennas) {
                        return fail(&format!("schemes[{i}].k_vector"), e.to_string());
                    }
                }
                SchemeSpec::Race {
                    k_vector,
                    gamma,
                    m_max,
                } => {
                    let plan = match StagePlan::new(k_vector.clone(), self.n_antennas) {
                        Ok(plan) => plan,
                        Err(e) => return fail(&format!("schemes[{i}].k_vector"), e.to_string()),
                    };
                    if !(*gamma > 0.0 && *gamma <= 1.0) {
                        return fail(&format!("schemes[{i}].gamma"), "must be in (0, 1]".into());
                    }
                    if *m_max < plan.measurement_total() {
                        return fail(
                            &format!("schemes[{i}].m_max"),
                            format!("must be >= the scan cost {}", plan.measurement_total()),
                        );
                    }
                }
                SchemeSpec::Switch { table } => {
                    if table.n_antennas() != self.n_antennas {
                        return fail(
                            &format!("schemes[{i}].table"),
                            format!(
                                "table is built for N = {}, config has N = {}",
                                table.n_antennas(),
                                self.n_antennas
                            ),
                        );
                    }
                }
            }
        }
        Ok(())
    }
}

/// Per-trial tallies used for aggregation and diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialStats {
    pub error: bool,
    pub measurements: usize,
    pub feedback_bits: usize,
    pub alpha_err_sq: f64,
    pub alpha_sq: f64,
}

/// One aggregated table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scheme: String,
    pub snr_db: f64,
    pub pee: f64,
    pub pee_ci95: f64,
    pub avg_measurements: f64,
    pub avg_feedback_bits: f64,
    pub avg_alpha_mse: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("metrics table: {e}")))
    }

    pub fn row(&self, scheme: &str, snr_db: f64) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.scheme == scheme && r.snr_db == snr_db)
    }
}

enum ResolvedKind {
    Fixed,
    Race(RaceConfig),
}

struct ResolvedScheme {
    codebook: Codebook,
    kind: ResolvedKind,
}

/// Instantiates a scheme at one SNR point (a switch entry resolves to the
/// fixed-rate plan of its region).
fn resolve(spec: &SchemeSpec, link: LinkParams, snr_db: f64) -> Result<ResolvedScheme> {
    let build = |k_vector: &[usize]| -> Result<Codebook> {
        let plan = StagePlan::new(k_vector.to_vec(), link.n_antennas)?;
        build_codebook(plan, AngleGrid::new(link.n_antennas)?)
    };
    match spec {
        SchemeSpec::Fixed { k_vector } => Ok(ResolvedScheme {
            codebook: build(k_vector)?,
            kind: ResolvedKind::Fixed,
        }),
        SchemeSpec::Race {
            k_vector,
            gamma,
            m_max,
        } => {
            let codebook = build(k_vector)?;
            let cfg = RaceConfig::new(*gamma, *m_max, codebook.plan().clone())?;
            Ok(ResolvedScheme {
                codebook,
                kind: ResolvedKind::Race(cfg),
            })
        }
        SchemeSpec::Switch { table } => {
            let plan = select_scheme(table, snr_db)?;
            Ok(ResolvedScheme {
                codebook: build_codebook(plan, AngleGrid::new(link.n_antennas)?)?,
                kind: ResolvedKind::Fixed,
            })
        }
    }
}

fn run_trial(
    resolved: &ResolvedScheme,
    noise: &NoiseModel,
    point_seed: u64,
    trial: u64,
) -> Result<TrialStats> {
    let mut rng = seed::rng(point_seed, &[trial]);
    let channel = sample_channel(resolved.codebook.grid(), noise, &mut rng);
    let outcome = match &resolved.kind {
        ResolvedKind::Fixed => run_fixed(&resolved.codebook, &channel, noise, &mut rng)?,
        ResolvedKind::Race(cfg) => run_race(cfg, &resolved.codebook, &channel, noise, &mut rng)?,
    };
    Ok(TrialStats {
        error: !outcome.success,
        measurements: outcome.total_measurements,
        feedback_bits: outcome.feedback_bits,
        alpha_err_sq: (outcome.alpha_estimate - channel.alpha).norm_sqr(),
        alpha_sq: channel.alpha.norm_sqr(),
    })
}

/// Index-ordered fold; identical for any execution order of the trials.
fn aggregate(name: &str, snr_db: f64, stats: &[TrialStats]) -> MetricsRow {
    let trials = stats.len();
    let n = trials as f64;
    let errors = stats.iter().filter(|s| s.error).count();
    let pee = errors as f64 / n;
    MetricsRow {
        scheme: name.to_string(),
        snr_db,
        pee,
        pee_ci95: 1.96 * (pee * (1.0 - pee) / n).sqrt(),
        avg_measurements: stats.iter().map(|s| s.measurements as f64).sum::<f64>() / n,
        avg_feedback_bits: stats.iter().map(|s| s.feedback_bits as f64).sum::<f64>() / n,
        avg_alpha_mse: stats.iter().map(|s| s.alpha_err_sq).sum::<f64>() / n,
        trials,
    }
}

/// Error fraction among trials with `|alpha|^2` above `threshold`, plus the
/// number of trials kept. Diagnostic for separating outages (paths too weak
/// for any scheme) from estimation failures.
pub fn pee_conditioned(stats: &[TrialStats], threshold: f64) -> (f64, usize) {
    let kept: Vec<&TrialStats> = stats.iter().filter(|s| s.alpha_sq > threshold).collect();
    if kept.is_empty() {
        return (0.0, 0);
    }
    let errors = kept.iter().filter(|s| s.error).count();
    (errors as f64 / kept.len() as f64, kept.len())
}

/// Runs `trials` independent trials of one scheme at one SNR point,
/// in parallel when the `parallel` feature is on.
pub fn run_point(
    entry: &SchemeEntry,
    link: LinkParams,
    snr_db: f64,
    trials: usize,
    point_seed: u64,
) -> Result<MetricsRow> {
    Ok(run_point_detailed(entry, link, snr_db, trials, point_seed)?.0)
}

/// [`run_point`] plus the raw per-trial tallies.
pub fn run_point_detailed(
    entry: &SchemeEntry,
    link: LinkParams,
    snr_db: f64,
    trials: usize,
    point_seed: u64,
) -> Result<(MetricsRow, Vec<TrialStats>)> {
    if trials == 0 {
        return Err(Error::invalid("run_point: need at least one trial"));
    }
    let resolved = resolve(&entry.spec, link, snr_db)?;
    let noise = NoiseModel::from_snr_db(snr_db, link.path_variance)?;
    let stats = par::map_indexed(trials, |i| {
        run_trial(&resolved, &noise, point_seed, i as u64)
    })?;
    Ok((aggregate(&entry.name, snr_db, &stats), stats))
}

/// Sequential reference path: same seeds, same fold order, one thread.
pub fn run_point_seq(
    entry: &SchemeEntry,
    link: LinkParams,
    snr_db: f64,
    trials: usize,
    point_seed: u64,
) -> Result<MetricsRow> {
    if trials == 0 {
        return Err(Error::invalid("run_point: need at least one trial"));
    }
    let resolved = resolve(&entry.spec, link, snr_db)?;
    let noise = NoiseModel::from_snr_db(snr_db, link.path_variance)?;
    let stats: Vec<TrialStats> = (0..trials)
        .map(|i| run_trial(&resolved, &noise, point_seed, i as u64))
        .collect::<Result<_>>()?;
    Ok(aggregate(&entry.name, snr_db, &stats))
}

/// Cartesian sweep of schemes x SNR grid, scheme-major row order. `observe`
/// sees each finished point with its per-trial tallies (diagnostics hook).
pub fn run_sweep_with<F>(cfg: &ExperimentConfig, mut observe: F) -> Result<MetricsTable>
where
    F: FnMut(&MetricsRow, &[TrialStats]),
{
    cfg.validate()?;
    let link = cfg.link();
    let mut rows = Vec::with_capacity(cfg.schemes.len() * cfg.snr_grid_db.len());
    for (scheme_idx, entry) in cfg.schemes.iter().enumerate() {
        for (point_idx, &snr_db) in cfg.snr_grid_db.iter().enumerate() {
            let point_seed = seed::derive(cfg.master_seed, &[scheme_idx as u64, point_idx as u64]);
            let (row, stats) =
                run_point_detailed(entry, link, snr_db, cfg.trials_per_point, point_seed)?;
            observe(&row, &stats);
            rows.push(row);
        }
    }
    Ok(MetricsTable { rows })
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<MetricsTable> {
    run_sweep_with(cfg, |_, _| {})
}

/// Fully sequential sweep for worker-count independence checks.
pub fn run_sweep_seq(cfg: &ExperimentConfig) -> Result<MetricsTable> {
    cfg.validate()?;
    let link = cfg.link();
    let mut rows = Vec::with_capacity(cfg.schemes.len() * cfg.snr_grid_db.len());
    for (scheme_idx, entry) in cfg.schemes.iter().enumerate() {
        for (point_idx, &snr_db) in cfg.snr_grid_db.iter().enumerate() {
            let point_seed = seed::derive(cfg.master_seed, &[scheme_idx as u64, point_idx as u64]);
            rows.push(run_point_seq(
                entry,
                link,
                snr_db,
                cfg.trials_per_point,
                point_seed,
            )?);
        }
    }
    Ok(MetricsTable { rows })
}

/// Formats with 6 significant digits, scientific outside a sane range.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exponent = x.abs().log10().floor() as i32;
    if (-4..=14).contains(&exponent) {
        let precision = (5 - exponent).max(0) as usize;
        format!("{x:.precision$}")
    } else {
        format!("{x:.5e}")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub const CSV_HEADER: &str =
    "scheme,snr_db,pee,pee_ci95,avg_measurements,avg_feedback_bits,avg_alpha_mse,trials";

pub fn to_csv(table: &MetricsTable) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            csv_field(&r.scheme),
            fmt_sig(r.snr_db),
            fmt_sig(r.pee),
            fmt_sig(r.pee_ci95),
            fmt_sig(r.avg_measurements),
            fmt_sig(r.avg_feedback_bits),
            fmt_sig(r.avg_alpha_mse),
            r.trials,
        ));
    }
    out
}

impl MetricsRow {
    /// Copy with every float pushed through the 6-significant-digit format.
    fn rounded(&self) -> MetricsRow {
        let round = |x: f64| {
            fmt_sig(x)
                .parse::<f64>()
                .expect("fmt_sig emits valid floats")
        };
        MetricsRow {
            scheme: self.scheme.clone(),
            snr_db: round(self.snr_db),
            pee: round(self.pee),
            pee_ci95: round(self.pee_ci95),
            avg_measurements: round(self.avg_measurements),
            avg_feedback_bits: round(self.avg_feedback_bits),
            avg_alpha_mse: round(self.avg_alpha_mse),
            trials: self.trials,
        }
    }
}

pub fn to_json(table: &MetricsTable) -> String {
    let rounded = MetricsTable {
        rows: table.rows.iter().map(MetricsRow::rounded).collect(),
    };
    let mut text = serde_json::to_string_pretty(&rounded).expect("table serializes");
    text.push('\n');
    text
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Writes the table to `path` in the requested format.
pub fn emit_results(table: &MetricsTable, format: OutputFormat, path: &Path) -> Result<()> {
    if table.rows.is_empty() {
        return Err(Error::invalid("emit_results: empty table"));
    }
    let text = match format {
        OutputFormat::Csv => to_csv(table),
        OutputFormat::Json => to_json(table),
    };
    let io_err = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    file.write_all(text.as_bytes()).map_err(io_err)?;
    Ok(())
}

/// Config for offline switch-table calibration, mirrored by its JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub n_antennas: usize,
    #[serde(default = "default_path_variance")]
    pub p_r: f64,
    pub gamma: f64,
    pub trials: usize,
    pub master_seed: u64,
    pub snr_grid_db: Vec<f64>,
    pub candidate_plans: Vec<Vec<usize>>,
}

impl CalibrationConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: CalibrationConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        for (i, plan) in cfg.candidate_plans.iter().enumerate() {
            let product: usize = plan.iter().product();
            if product != cfg.n_antennas {
                return Err(Error::Config(format!(
                    "candidate_plans[{i}]: product {product} != n_antennas {}",
                    cfg.n_antennas
                )));
            }
        }
        Ok(cfg)
    }
}

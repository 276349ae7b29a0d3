//! The three estimation procedures, end to end: the fixed-rate multi-stage
//! baseline, the rate-adaptive procedure, and the rate-switching benchmark.
//!
//! All three share one stage loop. Each stage scans its `K^2` beam pairs,
//! forms the ML posterior over the pair hypotheses and descends into the MAP
//! pair's children. The fixed baseline decides right after the scan (with
//! equal per-pair slot counts the MAP rule coincides with picking the
//! strongest measurement). The adaptive variant keeps appending measurements
//! on the current MAP pair until its posterior clears `1 - gamma` or the
//! global budget is exhausted.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array_channel::{sample_channel, ChannelRealization, NoiseModel};
use crate::codebook::{build_codebook, Codebook, StagePlan};
use crate::ml_estimator::{
    estimate_alpha, map_estimate, posterior, Hypothesis, PosteriorDistribution,
};
use crate::sounding::{append_measurement, initial_scan, MeasurementSlot, StageContext};
use crate::{seed, Error, Result};

/// Observer for instrumented runs (trace dumps, equivalence tests).
/// Default methods make the no-op sink free in the hot path.
pub trait TraceSink {
    fn slot(&mut self, _stage: usize, _slot: &MeasurementSlot) {}
    fn decision(
        &mut self,
        _stage: usize,
        _measurements_so_far: usize,
        _post: &PosteriorDistribution,
        _map: Hypothesis,
        _p_map: f64,
    ) {
    }
    fn stage_done(&mut self, _stage: usize, _selected: Hypothesis, _stage_measurements: usize) {}
}

/// Sink that records nothing.
pub struct NoTrace;

impl TraceSink for NoTrace {}

/// Sink that keeps every event, for equivalence checks and trace dumps.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct RecordingTrace {
    pub slots: Vec<(usize, MeasurementSlot)>,
    pub decisions: Vec<(usize, usize, Hypothesis, f64)>,
    pub selections: Vec<(usize, Hypothesis, usize)>,
}

impl TraceSink for RecordingTrace {
    fn slot(&mut self, stage: usize, slot: &MeasurementSlot) {
        self.slots.push((stage, *slot));
    }

    fn decision(
        &mut self,
        stage: usize,
        measurements_so_far: usize,
        _post: &PosteriorDistribution,
        map: Hypothesis,
        p_map: f64,
    ) {
        self.decisions
            .push((stage, measurements_so_far, map, p_map));
    }

    fn stage_done(&mut self, stage: usize, selected: Hypothesis, stage_measurements: usize) {
        self.selections.push((stage, selected, stage_measurements));
    }
}

/// Final estimates and cost accounting of one estimation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationOutcome {
    pub tx_estimate: usize,
    pub rx_estimate: usize,
    pub alpha_estimate: Complex64,
    pub total_measurements: usize,
    pub feedback_bits: usize,
    pub per_stage_measurements: Vec<usize>,
    pub success: bool,
}

/// Target error probability and global measurement budget for the adaptive
/// procedure.
#[derive(Debug, Clone, PartialEq)]
pub struct RaceConfig {
    gamma: f64,
    m_max: usize,
    plan: StagePlan,
}

impl RaceConfig {
    pub fn new(gamma: f64, m_max: usize, plan: StagePlan) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::invalid(format!(
                "RaceConfig: gamma {gamma} outside (0, 1]"
            )));
        }
        if m_max < plan.measurement_total() {
            return Err(Error::invalid(format!(
                "RaceConfig: m_max {m_max} below the mandatory scan cost {}",
                plan.measurement_total()
            )));
        }
        Ok(Self { gamma, m_max, plan })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    pub fn plan(&self) -> &StagePlan {
        &self.plan
    }
}

/// ceil(log2(k)) for k >= 2.
fn ceil_log2(k: usize) -> usize {
    usize::BITS as usize - (k - 1).leading_zeros() as usize
}

#[derive(Clone, Copy)]
enum StopRule {
    // decide right after the scan
    Fixed,
    // keep measuring the MAP pair until confident or out of budget
    Race { gamma: f64, m_max: usize },
}

fn run_stages<R: Rng + ?Sized, T: TraceSink>(
    codebook: &Codebook,
    rule: StopRule,
    channel: &ChannelRealization,
    noise: &NoiseModel,
    rng: &mut R,
    sink: &mut T,
) -> Result<EstimationOutcome> {
    let plan = codebook.plan();
    let stages = plan.stage_count();
    let mut tx_block = 0usize;
    let mut rx_block = 0usize;
    let mut total = 0usize;
    let mut feedback_bits = 0usize;
    let mut per_stage = Vec::with_capacity(stages);
    let mut alpha_estimate = Complex64::new(0.0, 0.0);

    for stage in 1..=stages {
        let k = plan.branching(stage);
        // scans still owed to later stages count against the global budget
        let committed: usize = (stage + 1..=stages).map(|s| plan.branching(s).pow(2)).sum();
        let ctx = StageContext::new(
            stage,
            codebook.children(stage, tx_block),
            codebook.children(stage, rx_block),
            codebook.grid(),
        )?;
        let mut log = initial_scan(&ctx, channel, noise, rng)?;
        total += k * k;
        for slot in &log.slots {
            sink.slot(stage, slot);
        }

        // One feedback round per decision: the chosen transmit sub-range,
        // plus a continue/stop bit in the adaptive case.
        let round_bits = match rule {
            StopRule::Fixed => ceil_log2(k),
            StopRule::Race { .. } => ceil_log2(k) + 1,
        };

        let selected = loop {
            let post = posterior(&log, noise)?;
            let (map, p_map) = map_estimate(&post);
            feedback_bits += round_bits;
            sink.decision(stage, log.len(), &post, map, p_map);
            match rule {
                StopRule::Fixed => break map,
                StopRule::Race { gamma, m_max } => {
                    if p_map > 1.0 - gamma || total + committed >= m_max {
                        break map;
                    }
                    append_measurement(&mut log, (map.tx_k, map.rx_k), &ctx, channel, noise, rng)?;
                    total += 1;
                    sink.slot(stage, log.slots.last().expect("just appended"));
                }
            }
        };

        per_stage.push(log.len());
        if stage == stages {
            // The path coefficient comes from the newest observation on the
            // selected pair, which the scan guarantees exists.
            let y_final = log
                .slots
                .iter()
                .rev()
                .find(|s| s.tx_k == selected.tx_k && s.rx_k == selected.rx_k)
                .expect("selected pair was scanned")
                .observation;
            alpha_estimate = estimate_alpha(
                y_final,
                noise.transmit_power(),
                plan.n_antennas(),
                codebook.gain_constant(stage),
            );
        }
        sink.stage_done(stage, selected, log.len());
        tx_block = tx_block * k + (selected.tx_k - 1);
        rx_block = rx_block * k + (selected.rx_k - 1);
    }

    Ok(EstimationOutcome {
        tx_estimate: tx_block,
        rx_estimate: rx_block,
        alpha_estimate,
        total_measurements: total,
        feedback_bits,
        per_stage_measurements: per_stage,
        success: tx_block == channel.tx_index && rx_block == channel.rx_index,
    })
}

/// Fixed-rate multi-stage estimation: exactly `sum(K_s^2)` measurements.
pub fn run_fixed<R: Rng + ?Sized>(
    codebook: &Codebook,
    channel: &ChannelRealization,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<EstimationOutcome> {
    run_stages(codebook, StopRule::Fixed, channel, noise, rng, &mut NoTrace)
}

pub fn run_fixed_traced<R: Rng + ?Sized, T: TraceSink>(
    codebook: &Codebook,
    channel: &ChannelRealization,
    noise: &NoiseModel,
    rng: &mut R,
    sink: &mut T,
) -> Result<EstimationOutcome> {
    run_stages(codebook, StopRule::Fixed, channel, noise, rng, sink)
}

/// Rate-adaptive estimation: per stage, measure until the MAP posterior
/// exceeds `1 - gamma` or the global budget `m_max` is reached. The
/// mandatory scans of every stage are committed spend, so with
/// `m_max = sum(K_s^2)` the budget is exhausted from the start and the total
/// never exceeds `m_max`.
pub fn run_race<R: Rng + ?Sized>(
    cfg: &RaceConfig,
    codebook: &Codebook,
    channel: &ChannelRealization,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<EstimationOutcome> {
    run_race_traced(cfg, codebook, channel, noise, rng, &mut NoTrace)
}

pub fn run_race_traced<R: Rng + ?Sized, T: TraceSink>(
    cfg: &RaceConfig,
    codebook: &Codebook,
    channel: &ChannelRealization,
    noise: &NoiseModel,
    rng: &mut R,
    sink: &mut T,
) -> Result<EstimationOutcome> {
    if cfg.plan() != codebook.plan() {
        return Err(Error::invalid(
            "run_race: config plan does not match the codebook",
        ));
    }
    run_stages(
        codebook,
        StopRule::Race {
            gamma: cfg.gamma,
            m_max: cfg.m_max,
        },
        channel,
        noise,
        rng,
        sink,
    )
}

/// One switch region: the plan to use from `snr_db` upward (exclusive of the
/// next entry's threshold). The lowest region is open below, serialized as a
/// `null` threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchEntry {
    #[serde(rename = "snr_db", with = "open_threshold")]
    pub snr_threshold_db: f64,
    pub k_vector: Vec<usize>,
}

mod open_threshold {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

/// SNR-indexed choice of fixed-rate plan, calibrated offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<SwitchEntry>", into = "Vec<SwitchEntry>")]
pub struct SwitchTable {
    entries: Vec<SwitchEntry>,
    n_antennas: usize,
}

impl TryFrom<Vec<SwitchEntry>> for SwitchTable {
    type Error = Error;

    fn try_from(entries: Vec<SwitchEntry>) -> Result<Self> {
        SwitchTable::new(entries)
    }
}

impl From<SwitchTable> for Vec<SwitchEntry> {
    fn from(table: SwitchTable) -> Self {
        table.entries
    }
}

impl SwitchTable {
    pub fn new(entries: Vec<SwitchEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("SwitchTable: must hold at least one entry"));
        }
        for pair in entries.windows(2) {
            if pair[1].snr_threshold_db <= pair[0].snr_threshold_db {
                return Err(Error::invalid(
                    "SwitchTable: thresholds must be strictly increasing",
                ));
            }
        }
        let n_antennas: usize = entries[0].k_vector.iter().product();
        for (i, entry) in entries.iter().enumerate() {
            StagePlan::new(entry.k_vector.clone(), n_antennas)
                .map_err(|e| Error::invalid(format!("SwitchTable entry {i}: {e}")))?;
        }
        Ok(Self {
            entries,
            n_antennas,
        })
    }

    pub fn entries(&self) -> &[SwitchEntry] {
        &self.entries
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("switch table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("switch table: {e}")))
    }
}

/// Plan of the highest threshold at or below `snr_db`; below every
/// threshold, the most expensive plan in the table.
pub fn select_scheme(table: &SwitchTable, snr_db: f64) -> Result<StagePlan> {
    let entry = table
        .entries
        .iter()
        .rev()
        .find(|e| e.snr_threshold_db <= snr_db)
        .or_else(|| {
            table
                .entries
                .iter()
                .max_by_key(|e| e.k_vector.iter().map(|k| k * k).sum::<usize>())
        })
        .ok_or_else(|| Error::invalid("select_scheme: empty table"))?;
    StagePlan::new(entry.k_vector.clone(), table.n_antennas)
}

/// Monte Carlo error rate of a fixed-rate plan at one SNR point.
fn fixed_error_rate(
    codebook: &Codebook,
    noise: &NoiseModel,
    trials: usize,
    base_seed: u64,
    tag: &[u64],
) -> Result<f64> {
    let mut errors = 0usize;
    let mut parts = tag.to_vec();
    parts.push(0);
    for trial in 0..trials {
        *parts.last_mut().expect("tag slot") = trial as u64;
        let mut rng = seed::rng(base_seed, &parts);
        let channel = sample_channel(codebook.grid(), noise, &mut rng);
        if !run_fixed(codebook, &channel, noise, &mut rng)?.success {
            errors += 1;
        }
    }
    Ok(errors as f64 / trials as f64)
}

/// Calibrates a switch table: at every SNR grid point, Monte Carlo estimates
/// each candidate plan's error probability and keeps the cheapest plan that
/// meets `gamma` (falling back to the lowest-error plan); consecutive equal
/// selections compress into threshold regions.
pub fn calibrate_switch_table<R: Rng + ?Sized>(
    candidate_plans: &[Vec<usize>],
    snr_grid_db: &[f64],
    gamma: f64,
    trials: usize,
    path_variance: f64,
    rng: &mut R,
) -> Result<SwitchTable> {
    if trials < 100 {
        return Err(Error::invalid(
            "calibrate_switch_table: fewer than 100 trials per point is statistically meaningless",
        ));
    }
    if candidate_plans.is_empty() {
        return Err(Error::invalid("calibrate_switch_table: no candidate plans"));
    }
    if snr_grid_db.is_empty() {
        return Err(Error::invalid("calibrate_switch_table: empty SNR grid"));
    }
    if snr_grid_db.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(
            "calibrate_switch_table: SNR grid must be strictly increasing",
        ));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid(format!(
            "calibrate_switch_table: gamma {gamma} outside (0, 1]"
        )));
    }

    let n_antennas: usize = candidate_plans[0].iter().product();
    let mut candidates = Vec::with_capacity(candidate_plans.len());
    for (idx, k_vector) in candidate_plans.iter().enumerate() {
        let plan = StagePlan::new(k_vector.clone(), n_antennas)
            .map_err(|e| Error::invalid(format!("calibrate_switch_table: candidate {idx}: {e}")))?;
        let cost = plan.measurement_total();
        let grid = crate::array_channel::AngleGrid::new(n_antennas)?;
        candidates.push((idx, cost, build_codebook(plan, grid)?));
    }
    // cheapest-first scan order; original index keeps seeds stable
    candidates.sort_by_key(|(idx, cost, _)| (*cost, *idx));

    let base_seed: u64 = rng.random();
    let selections = crate::par::map_indexed(snr_grid_db.len(), |point| {
        let noise = NoiseModel::from_snr_db(snr_grid_db[point], path_variance)?;
        let mut best: Option<(f64, usize)> = None; // (pee, position in cost order)
        for (pos, (idx, _, codebook)) in candidates.iter().enumerate() {
            let pee = fixed_error_rate(
                codebook,
                &noise,
                trials,
                base_seed,
                &[*idx as u64, point as u64],
            )?;
            if pee <= gamma {
                return Ok(pos);
            }
            if best.is_none_or(|(b, _)| pee < b) {
                best = Some((pee, pos));
            }
        }
        Ok::<usize, Error>(best.expect("at least one candidate").1)
    })?;

    let mut entries: Vec<SwitchEntry> = Vec::new();
    for (point, &pos) in selections.iter().enumerate() {
        if point > 0 && selections[point - 1] == pos {
            continue;
        }
        let threshold = if point == 0 {
            f64::NEG_INFINITY
        } else {
            snr_grid_db[point]
        };
        entries.push(SwitchEntry {
            snr_threshold_db: threshold,
            k_vector: candidates[pos].2.plan().k_vector().to_vec(),
        });
    }
    SwitchTable::new(entries)
}

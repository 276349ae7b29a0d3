//! Command-line front end: SNR sweeps, single-trial trace dumps, beam-pattern
//! export and switch-table calibration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use race_sim::array_channel::{sample_channel, AngleGrid, NoiseModel};
use race_sim::codebook::{build_codebook, StagePlan};
use race_sim::harness::{self, fmt_sig, CalibrationConfig, ExperimentConfig, OutputFormat};
use race_sim::ml_estimator::{Hypothesis, PosteriorDistribution};
use race_sim::schemes::{
    calibrate_switch_table, run_fixed_traced, run_race_traced, RaceConfig, TraceSink,
};
use race_sim::sounding::MeasurementSlot;

#[derive(Parser)]
#[command(
    name = "race-sim",
    version,
    about = "Adaptive mmWave channel-estimation simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TrialScheme {
    Fixed,
    Race,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo sweep described by a JSON config
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
        /// Worker threads (defaults to all cores)
        #[arg(long)]
        workers: Option<usize>,
        /// Also report PEE conditioned on |alpha|^2 above this threshold
        #[arg(long)]
        outage_threshold: Option<f64>,
    },
    /// Run one estimation trial and dump every slot and posterior as JSON lines
    Trial {
        #[arg(long)]
        n: usize,
        #[arg(long, value_delimiter = ',')]
        k_vector: Vec<usize>,
        #[arg(long, value_enum)]
        scheme: TrialScheme,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        m_max: Option<usize>,
        #[arg(long)]
        snr_db: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        p_r: f64,
    },
    /// Export the beam magnitude patterns of a plan as CSV
    Codebook {
        #[arg(long)]
        n: usize,
        #[arg(long, value_delimiter = ',')]
        k_vector: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo calibration of a rate-switching table
    CalibrateSwitch {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Sweep {
            config,
            out,
            format,
            workers,
            outage_threshold,
        } => sweep(&config, &out, format, workers, outage_threshold),
        Command::Trial {
            n,
            k_vector,
            scheme,
            gamma,
            m_max,
            snr_db,
            seed,
            p_r,
        } => trial(n, k_vector, scheme, gamma, m_max, snr_db, seed, p_r),
        Command::Codebook { n, k_vector, out } => codebook_export(n, k_vector, &out),
        Command::CalibrateSwitch { config, out } => calibrate(&config, &out),
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn run_sweep_now(cfg: &ExperimentConfig, outage: Option<f64>) -> Result<harness::MetricsTable> {
    let table = harness::run_sweep_with(cfg, |row, stats| {
        if let Some(threshold) = outage {
            let (pee, kept) = harness::pee_conditioned(stats, threshold);
            eprintln!(
                "{} @ {} dB: pee {} | conditioned on |alpha|^2 > {threshold}: {} over {kept} trials",
                row.scheme,
                fmt_sig(row.snr_db),
                fmt_sig(row.pee),
                fmt_sig(pee),
            );
        }
    })?;
    Ok(table)
}

fn sweep(
    config: &Path,
    out: &Path,
    format: FormatArg,
    workers: Option<usize>,
    outage: Option<f64>,
) -> Result<()> {
    let cfg = ExperimentConfig::from_json(&read_to_string(config)?)?;
    let table = match workers {
        #[cfg(feature = "parallel")]
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .context("building worker pool")?;
            pool.install(|| run_sweep_now(&cfg, outage))?
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => {
            eprintln!("built without the `parallel` feature; running sequentially");
            run_sweep_now(&cfg, outage)?
        }
        None => run_sweep_now(&cfg, outage)?,
    };
    let format = match format {
        FormatArg::Csv => OutputFormat::Csv,
        FormatArg::Json => OutputFormat::Json,
    };
    harness::emit_results(&table, format, out)?;
    eprintln!("wrote {} rows to {}", table.rows.len(), out.display());
    Ok(())
}

/// Trace sink that prints one JSON line per event.
struct JsonlTrace {
    lines: Vec<String>,
}

impl TraceSink for JsonlTrace {
    fn slot(&mut self, stage: usize, slot: &MeasurementSlot) {
        self.lines.push(
            json!({
                "event": "slot",
                "stage": stage,
                "tx_k": slot.tx_k,
                "rx_k": slot.rx_k,
                "re": slot.observation.re,
                "im": slot.observation.im,
            })
            .to_string(),
        );
    }

    fn decision(
        &mut self,
        stage: usize,
        measurements_so_far: usize,
        post: &PosteriorDistribution,
        map: Hypothesis,
        p_map: f64,
    ) {
        self.lines.push(
            json!({
                "event": "posterior",
                "stage": stage,
                "m": measurements_so_far,
                "probabilities": post.probabilities(),
                "map_tx_k": map.tx_k,
                "map_rx_k": map.rx_k,
                "p_map": p_map,
            })
            .to_string(),
        );
    }

    fn stage_done(&mut self, stage: usize, selected: Hypothesis, stage_measurements: usize) {
        self.lines.push(
            json!({
                "event": "stage_selected",
                "stage": stage,
                "tx_k": selected.tx_k,
                "rx_k": selected.rx_k,
                "measurements": stage_measurements,
            })
            .to_string(),
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn trial(
    n: usize,
    k_vector: Vec<usize>,
    scheme: TrialScheme,
    gamma: Option<f64>,
    m_max: Option<usize>,
    snr_db: f64,
    seed: u64,
    p_r: f64,
) -> Result<()> {
    let plan = StagePlan::new(k_vector, n)?;
    let codebook = build_codebook(plan.clone(), AngleGrid::new(n)?)?;
    let noise = NoiseModel::from_snr_db(snr_db, p_r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channel = sample_channel(codebook.grid(), &noise, &mut rng);
    let mut sink = JsonlTrace { lines: Vec::new() };
    let outcome = match scheme {
        TrialScheme::Fixed => run_fixed_traced(&codebook, &channel, &noise, &mut rng, &mut sink)?,
        TrialScheme::Race => {
            let gamma = gamma.context("--gamma is required for the race scheme")?;
            let m_max = m_max.context("--m-max is required for the race scheme")?;
            let cfg = RaceConfig::new(gamma, m_max, plan)?;
            run_race_traced(&cfg, &codebook, &channel, &noise, &mut rng, &mut sink)?
        }
    };
    for line in &sink.lines {
        println!("{line}");
    }
    println!(
        "{}",
        json!({
            "event": "outcome",
            "tx_estimate": outcome.tx_estimate,
            "rx_estimate": outcome.rx_estimate,
            "true_tx": channel.tx_index,
            "true_rx": channel.rx_index,
            "alpha_estimate_re": outcome.alpha_estimate.re,
            "alpha_estimate_im": outcome.alpha_estimate.im,
            "total_measurements": outcome.total_measurements,
            "feedback_bits": outcome.feedback_bits,
            "per_stage_measurements": outcome.per_stage_measurements,
            "success": outcome.success,
        })
    );
    Ok(())
}

fn codebook_export(n: usize, k_vector: Vec<usize>, out: &Path) -> Result<()> {
    let plan = StagePlan::new(k_vector, n)?;
    let codebook = build_codebook(plan, AngleGrid::new(n)?)?;
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    for stage in 1..=codebook.stage_count() {
        for block in 0..codebook.plan().width(stage) {
            let beam = codebook.beam(stage, block);
            let magnitudes = codebook
                .grid()
                .spectrum(&beam.coefficients)
                .iter()
                .map(|z| z.norm())
                .collect();
            columns.push((format!("s{stage}b{block}"), magnitudes));
        }
    }
    let mut text = String::from("grid_index");
    for (name, _) in &columns {
        text.push(',');
        text.push_str(name);
    }
    text.push('\n');
    for i in 0..n {
        text.push_str(&i.to_string());
        for (_, magnitudes) in &columns {
            text.push(',');
            text.push_str(&fmt_sig(magnitudes[i]));
        }
        text.push('\n');
    }
    std::fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("wrote {} beam patterns to {}", columns.len(), out.display());
    Ok(())
}

fn calibrate(config: &Path, out: &Path) -> Result<()> {
    let cfg = CalibrationConfig::from_json(&read_to_string(config)?)?;
    if cfg.candidate_plans.is_empty() {
        bail!("config has no candidate plans");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed);
    let table = calibrate_switch_table(
        &cfg.candidate_plans,
        &cfg.snr_grid_db,
        cfg.gamma,
        cfg.trials,
        cfg.p_r,
        &mut rng,
    )?;
    std::fs::write(out, table.to_json()).with_context(|| format!("writing {}", out.display()))?;
    eprintln!(
        "wrote {} switch regions to {}",
        table.entries().len(),
        out.display()
    );
    Ok(())
}

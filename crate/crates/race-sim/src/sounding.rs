//! Pilot transmission through the channel for chosen beam pairs, and the
//! ordered per-stage measurement log.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::array_channel::{AngleGrid, ChannelRealization, NoiseModel};
use crate::codebook::BeamVector;
use crate::{Error, Result};

const UNIT_NORM_TOL: f64 = 1e-6;

/// One measurement slot: the probed sub-range pair (1-based within the
/// stage) and the received complex observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementSlot {
    pub tx_k: usize,
    pub rx_k: usize,
    pub observation: Complex64,
}

/// Ordered measurement record of one stage.
///
/// The first `k^2` slots enumerate every `(tx_k, rx_k)` pair with the
/// receive index varying fastest; any further slots carry the pair that was
/// the MAP estimate when they were scheduled. `stage_gain` is
/// `P * P_R * (N * C_(s)^2)^2`, the variance of a clean on-path observation.
#[derive(Debug, Clone, PartialEq)]
pub struct SoundingLog {
    pub stage: usize,
    pub k: usize,
    pub stage_gain: f64,
    pub slots: Vec<MeasurementSlot>,
}

impl SoundingLog {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn observations(&self) -> impl Iterator<Item = Complex64> + '_ {
        self.slots.iter().map(|s| s.observation)
    }
}

/// The beams available to one estimation stage: the `K` transmit-side and
/// `K` receive-side children of the currently selected sub-range pair.
#[derive(Debug, Clone, Copy)]
pub struct StageContext<'a> {
    pub stage: usize,
    pub tx_beams: &'a [BeamVector],
    pub rx_beams: &'a [BeamVector],
    pub grid: &'a AngleGrid,
}

impl<'a> StageContext<'a> {
    pub fn new(
        stage: usize,
        tx_beams: &'a [BeamVector],
        rx_beams: &'a [BeamVector],
        grid: &'a AngleGrid,
    ) -> Result<Self> {
        if tx_beams.is_empty() || tx_beams.len() != rx_beams.len() {
            return Err(Error::invalid(
                "StageContext: need the same nonzero number of tx and rx beams",
            ));
        }
        let c = tx_beams[0].gain_constant;
        if tx_beams
            .iter()
            .chain(rx_beams)
            .any(|b| (b.gain_constant - c).abs() > 1e-9)
        {
            return Err(Error::invalid(
                "StageContext: beams must share one stage gain constant",
            ));
        }
        Ok(Self {
            stage,
            tx_beams,
            rx_beams,
            grid,
        })
    }

    pub fn branching(&self) -> usize {
        self.tx_beams.len()
    }

    pub fn gain_constant(&self) -> f64 {
        self.tx_beams[0].gain_constant
    }

    /// `P * P_R * (N * C_(s)^2)^2` for this stage.
    pub fn stage_gain(&self, noise: &NoiseModel) -> f64 {
        let amp = self.grid.n_antennas() as f64 * self.gain_constant().powi(2);
        noise.transmit_power() * noise.path_variance() * amp * amp
    }
}

fn check_unit_norm(v: &[Complex64], which: &str) -> Result<()> {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::invalid(format!(
            "measure: {which} beam norm is {norm}, expected 1"
        )));
    }
    Ok(())
}

/// Noise-free received value `sqrt(P) * w^H H f` for a unit pilot, evaluated
/// through the rank-1 channel: `sqrt(P) * alpha * N * (w^H u_rx) * (u_tx^H f)`.
pub fn clean_response(
    channel: &ChannelRealization,
    grid: &AngleGrid,
    f: &BeamVector,
    w: &BeamVector,
    noise: &NoiseModel,
) -> Result<Complex64> {
    check_unit_norm(&f.coefficients, "transmit")?;
    check_unit_norm(&w.coefficients, "receive")?;
    let u_tx = grid.steering(channel.tx_index);
    let u_rx = grid.steering(channel.rx_index);
    let tx_gain: Complex64 = u_tx
        .iter()
        .zip(&f.coefficients)
        .map(|(u, c)| u.conj() * c)
        .sum();
    let rx_gain: Complex64 = u_rx
        .iter()
        .zip(&w.coefficients)
        .map(|(u, c)| u.conj() * c)
        .sum();
    let n = grid.n_antennas() as f64;
    Ok(noise.transmit_power().sqrt() * channel.alpha * n * rx_gain.conj() * tx_gain)
}

/// One sounding: the clean response plus a `CN(0, N0)` noise term. The
/// receive combiner has unit norm, so the combined noise keeps the per-slot
/// spectral density without simulating the full N-dimensional noise vector.
pub fn measure<R: Rng + ?Sized>(
    channel: &ChannelRealization,
    grid: &AngleGrid,
    f: &BeamVector,
    w: &BeamVector,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<Complex64> {
    let clean = clean_response(channel, grid, f, w, noise)?;
    let component = Normal::new(0.0, (noise.noise_spectral() / 2.0).sqrt())
        .expect("noise_spectral validated > 0");
    Ok(clean + Complex64::new(component.sample(rng), component.sample(rng)))
}

/// Scans all `K^2` sub-range pairs in canonical order (transmit-major,
/// receive index fastest).
pub fn initial_scan<R: Rng + ?Sized>(
    ctx: &StageContext<'_>,
    channel: &ChannelRealization,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<SoundingLog> {
    let k = ctx.branching();
    let mut slots = Vec::with_capacity(k * k);
    for tx_k in 1..=k {
        for rx_k in 1..=k {
            let observation = measure(
                channel,
                ctx.grid,
                &ctx.tx_beams[tx_k - 1],
                &ctx.rx_beams[rx_k - 1],
                noise,
                rng,
            )?;
            slots.push(MeasurementSlot {
                tx_k,
                rx_k,
                observation,
            });
        }
    }
    Ok(SoundingLog {
        stage: ctx.stage,
        k,
        stage_gain: ctx.stage_gain(noise),
        slots,
    })
}

/// Appends one more measurement on `pair` to an already-scanned log.
pub fn append_measurement<R: Rng + ?Sized>(
    log: &mut SoundingLog,
    pair: (usize, usize),
    ctx: &StageContext<'_>,
    channel: &ChannelRealization,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<()> {
    let (tx_k, rx_k) = pair;
    let k = ctx.branching();
    if k != log.k || log.slots.len() < k * k {
        return Err(Error::invalid(
            "append_measurement: log must already hold the full initial scan",
        ));
    }
    if tx_k < 1 || tx_k > k || rx_k < 1 || rx_k > k {
        return Err(Error::invalid(format!(
            "append_measurement: pair ({tx_k}, {rx_k}) outside 1..={k}"
        )));
    }
    let observation = measure(
        channel,
        ctx.grid,
        &ctx.tx_beams[tx_k - 1],
        &ctx.rx_beams[rx_k - 1],
        noise,
        rng,
    )?;
    log.slots.push(MeasurementSlot {
        tx_k,
        rx_k,
        observation,
    });
    Ok(())
}

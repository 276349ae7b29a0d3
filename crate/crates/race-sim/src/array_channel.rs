//! Angle grid, ULA steering vectors and random single-path channel
//! realizations with AWGN parameters.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

/// Unit-norm ULA array response toward normalized spatial frequency
/// `epsilon`: entry `k` is `(1/sqrt(n)) * exp(j*2*pi*epsilon*k)`.
pub fn steering_vector(epsilon: f64, n: usize) -> Result<Vec<Complex64>> {
    if n == 0 {
        return Err(Error::invalid(
            "steering_vector: antenna count must be >= 1",
        ));
    }
    let scale = 1.0 / (n as f64).sqrt();
    Ok((0..n)
        .map(|k| Complex64::from_polar(scale, 2.0 * std::f64::consts::PI * epsilon * k as f64))
        .collect())
}

/// Maps a physical angle `theta` in `[0, pi)` to the normalized spatial
/// frequency `spacing_ratio * sin(theta)`, with `spacing_ratio = d/lambda`.
pub fn physical_to_spatial(theta: f64, spacing_ratio: f64) -> Result<f64> {
    if !(0.0..std::f64::consts::PI).contains(&theta) {
        return Err(Error::invalid(format!(
            "physical_to_spatial: theta {theta} outside [0, pi)"
        )));
    }
    if spacing_ratio <= 0.0 {
        return Err(Error::invalid(
            "physical_to_spatial: spacing_ratio must be > 0",
        ));
    }
    Ok(spacing_ratio * theta.sin())
}

/// The N-point spatial-frequency grid `eps_i = i/N`.
///
/// On this grid the steering matrix `U = [u(eps_0), ..., u(eps_{N-1})]` is the
/// unitary DFT matrix, so flat-beam design by pseudo-inverse reduces to a
/// plain synthesis sum (see [`crate::codebook::design_beam`]).
#[derive(Debug, Clone, PartialEq)]
pub struct AngleGrid {
    n_antennas: usize,
    frequencies: Vec<f64>,
}

impl AngleGrid {
    pub fn new(n_antennas: usize) -> Result<Self> {
        if n_antennas == 0 {
            return Err(Error::invalid("AngleGrid: antenna count must be >= 1"));
        }
        let frequencies = (0..n_antennas)
            .map(|i| i as f64 / n_antennas as f64)
            .collect();
        Ok(Self {
            n_antennas,
            frequencies,
        })
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    /// Steering vector at grid point `index`.
    pub fn steering(&self, index: usize) -> Vec<Complex64> {
        steering_vector(self.frequencies[index], self.n_antennas).expect("grid has n_antennas >= 1")
    }

    /// `U^H v`: inner products of every grid steering vector with `v`.
    pub fn spectrum(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.n_antennas)
            .map(|i| {
                self.steering(i)
                    .iter()
                    .zip(v)
                    .map(|(u, x)| u.conj() * x)
                    .sum()
            })
            .collect()
    }
}

/// Transmit power, noise spectral density and path variance, all linear.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    transmit_power: f64,
    noise_spectral: f64,
    path_variance: f64,
}

impl NoiseModel {
    pub fn new(transmit_power: f64, noise_spectral: f64, path_variance: f64) -> Result<Self> {
        if transmit_power <= 0.0 || noise_spectral <= 0.0 || path_variance <= 0.0 {
            return Err(Error::invalid(
                "NoiseModel: transmit_power, noise_spectral and path_variance must all be > 0",
            ));
        }
        Ok(Self {
            transmit_power,
            noise_spectral,
            path_variance,
        })
    }

    /// P = 1, N0 derived from the swept P/N0 value in dB.
    pub fn from_snr_db(snr_db: f64, path_variance: f64) -> Result<Self> {
        Self::new(1.0, 10f64.powf(-snr_db / 10.0), path_variance)
    }

    pub fn transmit_power(&self) -> f64 {
        self.transmit_power
    }

    pub fn noise_spectral(&self) -> f64 {
        self.noise_spectral
    }

    pub fn path_variance(&self) -> f64 {
        self.path_variance
    }
}

/// One sampled propagation path: fading coefficient and the grid indices of
/// its AOD/AOA spatial frequencies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRealization {
    pub alpha: Complex64,
    pub tx_index: usize,
    pub rx_index: usize,
}

/// Draws a single-path realization: grid indices uniform, `alpha` complex
/// Gaussian with zero mean and variance `path_variance` (split evenly between
/// real and imaginary parts).
pub fn sample_channel<R: Rng + ?Sized>(
    grid: &AngleGrid,
    noise: &NoiseModel,
    rng: &mut R,
) -> ChannelRealization {
    let n = grid.n_antennas();
    let tx_index = rng.random_range(0..n);
    let rx_index = rng.random_range(0..n);
    let component = Normal::new(0.0, (noise.path_variance() / 2.0).sqrt())
        .expect("path_variance validated > 0");
    let alpha = Complex64::new(component.sample(rng), component.sample(rng));
    ChannelRealization {
        alpha,
        tx_index,
        rx_index,
    }
}

/// Dense channel matrix `H = alpha * N * u(rx) * u(tx)^H` (entry `(i, j)` is
/// `alpha * N * u_rx[i] * conj(u_tx[j])`). Rank one by construction.
pub fn channel_matrix(real: &ChannelRealization, grid: &AngleGrid) -> Vec<Vec<Complex64>> {
    let n = grid.n_antennas();
    let u_tx = grid.steering(real.tx_index);
    let u_rx = grid.steering(real.rx_index);
    let scale = real.alpha * n as f64;
    (0..n)
        .map(|i| (0..n).map(|j| scale * u_rx[i] * u_tx[j].conj()).collect())
        .collect()
}

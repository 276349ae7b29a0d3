//! Conditional Gaussian likelihoods over the `K^2` sub-range hypotheses, the
//! MAP estimate and its posterior probability, and the final path-coefficient
//! estimate.
//!
//! Conditioned on hypothesis `h`, the observation vector of a stage is
//! zero-mean circularly symmetric Gaussian with covariance
//! `Sigma_h = N0*I + g*v_h*v_h^T`, where `v_h` marks the slots that probed
//! `h` and `g` is the stage gain. The rank-1 structure gives closed forms
//!
//! ```text
//! det(Sigma_h)          = N0^m * (1 + g*n_h/N0)
//! y^H Sigma_h^{-1} y    = (|y|^2 - g*|v_h^H y|^2 / (N0 + g*n_h)) / N0
//! ```
//!
//! with `n_h` the number of marked slots, so each hypothesis costs O(m)
//! instead of an O(m^3) dense solve. The dense evaluation is kept as a test
//! oracle only.

use num_complex::Complex64;

use crate::array_channel::NoiseModel;
use crate::sounding::SoundingLog;
use crate::{Error, Result};

/// One candidate sub-range pair (1-based within the stage).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hypothesis {
    pub tx_k: usize,
    pub rx_k: usize,
}

impl Hypothesis {
    /// Canonical index: transmit-major, receive fastest, matching the
    /// initial-scan slot order.
    pub fn canonical_index(&self, k: usize) -> usize {
        (self.tx_k - 1) * k + (self.rx_k - 1)
    }

    pub fn from_canonical_index(index: usize, k: usize) -> Self {
        Hypothesis {
            tx_k: index / k + 1,
            rx_k: index % k + 1,
        }
    }
}

/// All `K^2` hypotheses in canonical order.
pub fn hypotheses(k: usize) -> impl Iterator<Item = Hypothesis> {
    (0..k * k).map(move |i| Hypothesis::from_canonical_index(i, k))
}

/// Posterior probabilities over the `K^2` hypotheses, canonically ordered.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDistribution {
    k: usize,
    probabilities: Vec<f64>,
}

impl PosteriorDistribution {
    pub fn branching(&self) -> usize {
        self.k
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn probability(&self, h: Hypothesis) -> f64 {
        self.probabilities[h.canonical_index(self.k)]
    }
}

/// 0/1 slot marks for hypothesis `h`; the number of ones is `n_h`.
pub fn indicator_vector(log: &SoundingLog, h: Hypothesis) -> Vec<bool> {
    log.slots
        .iter()
        .map(|s| s.tx_k == h.tx_k && s.rx_k == h.rx_k)
        .collect()
}

/// Dense conditional covariance `Sigma_h = N0*I + g*v_h*v_h^T` (test oracle
/// input; the estimation path never materializes it).
pub fn conditional_covariance(
    log: &SoundingLog,
    h: Hypothesis,
    noise: &NoiseModel,
) -> Vec<Vec<Complex64>> {
    let v = indicator_vector(log, h);
    let m = v.len();
    let g = log.stage_gain;
    let n0 = noise.noise_spectral();
    (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    let mut entry = if v[i] && v[j] { g } else { 0.0 };
                    if i == j {
                        entry += n0;
                    }
                    Complex64::new(entry, 0.0)
                })
                .collect()
        })
        .collect()
}

/// Log-density of `y` under `CN(0, N0*I + g*v*v^T)` via the rank-1 closed
/// forms; `v` marks the slots carrying the hypothesized pair.
pub fn log_likelihood(y: &[Complex64], v: &[bool], g: f64, n0: f64) -> Result<f64> {
    if n0 <= 0.0 {
        return Err(Error::invalid(
            "log_likelihood: noise spectral density must be > 0",
        ));
    }
    if g < 0.0 {
        return Err(Error::invalid("log_likelihood: stage gain must be >= 0"));
    }
    if y.is_empty() || y.len() != v.len() {
        return Err(Error::invalid(format!(
            "log_likelihood: need matching nonzero lengths, got {} observations and {} marks",
            y.len(),
            v.len()
        )));
    }
    let m = y.len() as f64;
    let n_h = v.iter().filter(|&&b| b).count() as f64;
    let marked_sum: Complex64 = y.iter().zip(v).filter(|(_, &b)| b).map(|(z, _)| z).sum();
    let energy: f64 = y.iter().map(|z| z.norm_sqr()).sum();

    let log_det = m * n0.ln() + (g * n_h / n0).ln_1p();
    let quadratic = (energy - g * marked_sum.norm_sqr() / (n0 + g * n_h)) / n0;
    Ok(-m * std::f64::consts::PI.ln() - log_det - quadratic)
}

/// Posterior over the `K^2` hypotheses given every slot of `log`, computed
/// in the log domain with max subtraction under a uniform prior.
pub fn posterior(log: &SoundingLog, noise: &NoiseModel) -> Result<PosteriorDistribution> {
    let k = log.k;
    if log.len() < k * k {
        return Err(Error::invalid(format!(
            "posterior: log holds {} slots, needs the full {} initial scan",
            log.len(),
            k * k
        )));
    }
    let y: Vec<Complex64> = log.observations().collect();
    let mut log_weights = Vec::with_capacity(k * k);
    for h in hypotheses(k) {
        let v = indicator_vector(log, h);
        log_weights.push(log_likelihood(
            &y,
            &v,
            log.stage_gain,
            noise.noise_spectral(),
        )?);
    }
    let peak = log_weights
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut probabilities: Vec<f64> = log_weights.iter().map(|l| (l - peak).exp()).collect();
    let total: f64 = probabilities.iter().sum();
    for p in &mut probabilities {
        *p /= total;
    }
    Ok(PosteriorDistribution { k, probabilities })
}

/// Most likely hypothesis and its probability; ties resolve to the lowest
/// canonical index.
pub fn map_estimate(post: &PosteriorDistribution) -> (Hypothesis, f64) {
    let mut best = 0;
    for (i, &p) in post.probabilities.iter().enumerate() {
        if p > post.probabilities[best] {
            best = i;
        }
    }
    (
        Hypothesis::from_canonical_index(best, post.k),
        post.probabilities[best],
    )
}

/// Inverts the on-path measurement model at the final stage:
/// `alpha_hat = y_final / (sqrt(P) * N * C_(S)^2)`.
///
/// `y_final` is the received observation on the selected final-stage pair --
/// the only observable quantity; at zero noise this recovers `alpha` exactly.
pub fn estimate_alpha(final_observation: Complex64, p: f64, n: usize, c_s: f64) -> Complex64 {
    final_observation / (p.sqrt() * n as f64 * c_s * c_s)
}

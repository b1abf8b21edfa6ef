use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use super::WeightTheta;
use crate::error::{ensure_nonnegative, LabError, Result};
use crate::exec::{pairwise_sum, Execution};
use crate::fk::McEstimate;
use crate::noise_model::NoiseSpec;
use crate::quadrature::sample_dirichlet_simplex;
use crate::rng::{RngStream, StreamTag};

/// Dirichlet exponents for `(w₁, …, w_p, slack)`.
///
/// As `w_k → 0` the inner integral grows like `w_k^{−a_k}` with
/// `a_k = (1 + 2ρ)/2` when `η_k` enters two factors of `φ` and `(1 + ρ)/2`
/// for the last coordinate (`ρ` = growth exponent of `φ`). Matching the
/// proposal to `w_k^{power·a_k − 1}` keeps the weights bounded near each face.
fn proposal_exponents(spec: &NoiseSpec, p: usize, power: f64) -> Vec<f64> {
    let rho = spec.phi.growth_exponent();
    let mut a: Vec<f64> = (0..p)
        .map(|k| if k + 1 < p { 0.5 + rho } else { 0.5 * (1.0 + rho) })
        .map(|a| (1.0 - power * a).max(0.05))
        .collect();
    a.push(1.0);
    a
}

struct Draw {
    value: f64,
    bias: f64,
    rejected: usize,
}

/// One inner sample: `Θ(η_p) ∏φ(η_j − η_{j−1}) ∏√(π/(c w_k))` with `η_k ~ N(0, 1/(2c w_k))`,
/// an unbiased estimate of `∫ dη Θ(η_p) e^{−c Σ w_k η_k²} ∏φ(η_j − η_{j−1})`.
fn inner_sample<R: Rng>(spec: &NoiseSpec, theta: &WeightTheta, w: &[f64], c: f64, rng: &mut R) -> Option<f64> {
    let mut prev = 0.0;
    let mut weight = 1.0;
    for &wk in w {
        let sd = (1.0 / (2.0 * c * wk)).sqrt();
        let z: f64 = StandardNormal.sample(rng);
        let eta = sd * z;
        weight *= spec.phi.eval(eta - prev) * (std::f64::consts::PI / (c * wk)).sqrt();
        prev = eta;
    }
    weight *= theta.eval(prev);
    weight.is_finite().then_some(weight)
}

fn log_factorial(p: usize) -> f64 {
    ln_gamma(p as f64 + 1.0)
}

/// Result of a `K`-functional estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KEstimate {
    pub estimate: McEstimate,
    /// Jackknife estimate of the bias from the inner power (zero for `K₁,ₚ`).
    pub bias_proxy: f64,
    /// Non-finite weights that were redrawn.
    pub rejected: usize,
}

#[allow(clippy::too_many_arguments)]
fn run(
    spec: &NoiseSpec,
    theta: &WeightTheta,
    p: usize,
    t: f64,
    n_outer: usize,
    n_inner: usize,
    c: f64,
    power: f64,
    seed: u64,
    exec: Execution,
) -> Result<KEstimate> {
    if p == 0 {
        return Err(LabError::invalid("p", p, "need p >= 1"));
    }
    ensure_nonnegative("t", t)?;
    if n_outer < 2 {
        return Err(LabError::InsufficientSamples { got: n_outer, need: 2 });
    }
    if t == 0.0 {
        return Ok(KEstimate {
            estimate: McEstimate::exact(0.0, seed),
            bias_proxy: 0.0,
            rejected: 0,
        });
    }
    let alpha = proposal_exponents(spec, p, power);
    let lf = log_factorial(p);
    let draws = exec.try_map(n_outer, |i| -> Result<Draw> {
        let mut rng = RngStream::new(seed, i as u64, StreamTag::Importance).rng();
        let mut rejected = 0;
        let (w, log_q) = loop {
            let (w, lq) = sample_dirichlet_simplex(&mut rng, &alpha, t)?;
            if w.iter().all(|&x| x > 0.0) && lq.is_finite() {
                break (w, lq);
            }
            rejected += 1;
        };
        let mut xs = Vec::with_capacity(n_inner);
        while xs.len() < n_inner {
            match inner_sample(spec, theta, &w, c, &mut rng) {
                Some(v) => xs.push(v),
                None => rejected += 1,
            }
            if rejected > 1000 + 10 * n_inner {
                return Err(LabError::NonFinite("importance weight"));
            }
        }
        let n = xs.len() as f64;
        let sum: f64 = xs.iter().sum();
        let j = sum / n;
        let scale = (lf - log_q).exp();
        let bias = if power != 1.0 && xs.len() > 1 {
            let loo: f64 = xs.iter().map(|x| ((sum - x) / (n - 1.0)).powf(power)).sum::<f64>() / n;
            (n - 1.0) * (j.powf(power) - loo) * scale
        } else {
            0.0
        };
        Ok(Draw {
            value: j.powf(power) * scale,
            bias,
            rejected,
        })
    })?;
    let values: Vec<f64> = draws.iter().map(|d| d.value).collect();
    let biases: Vec<f64> = draws.iter().map(|d| d.bias).collect();
    Ok(KEstimate {
        estimate: McEstimate::from_samples(&values, seed),
        bias_proxy: pairwise_sum(&biases) / biases.len() as f64,
        rejected: draws.iter().map(|d| d.rejected).sum(),
    })
}

/// `K₁,ₚ(Θ,t) = p! ∫_{SIM_p(t)} dw ∫ dη Θ(η_p) e^{−½Σ w_k η_k²} ∏ φ(η_j − η_{j−1})`.
///
/// For `p ≥ 2` this is finite only when `φ` grows slower than `|ξ|^{1/2}`.
pub fn k1p(spec: &NoiseSpec, theta: &WeightTheta, p: usize, t: f64, n_samples: usize, seed: u64, exec: Execution) -> Result<KEstimate> {
    if p >= 2 && spec.phi.growth_exponent() >= 0.5 {
        return Err(LabError::ModelValidation(format!(
            "K1,p diverges for p >= 2 when phi grows like |xi|^{}",
            spec.phi.growth_exponent()
        )));
    }
    run(spec, theta, p, t, n_samples, 1, 0.5, 1.0, seed, exec)
}

/// `K₂,ₚ(Θ,t) = p! ∫_{SIM_p(t)} dw (∫ dη Θ(η_p) e^{−Σ w_k η_k²} ∏ φ(η_j − η_{j−1}))^{1/(2H₀)}`.
#[allow(clippy::too_many_arguments)]
pub fn k2p(
    spec: &NoiseSpec,
    theta: &WeightTheta,
    p: usize,
    t: f64,
    n_outer: usize,
    n_inner: usize,
    seed: u64,
    exec: Execution,
) -> Result<KEstimate> {
    let Some((h0, _)) = spec.hurst() else {
        return Err(LabError::ModelValidation("K2,p needs the fractional family".into()));
    };
    if p > 4 {
        return Err(LabError::invalid("p", p, "nested estimator supports p <= 4"));
    }
    if n_inner < 2 {
        return Err(LabError::InsufficientSamples { got: n_inner, need: 2 });
    }
    run(spec, theta, p, t, n_outer, n_inner, 1.0, 1.0 / (2.0 * h0), seed, exec)
}

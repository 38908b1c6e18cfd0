//! Exact Polya-Gamma PG(1, z) sampling by alternating-series rejection from a
//! piecewise proposal (truncated inverse-Gaussian body, exponential tail).
//! Used to augment logistic outcomes with per-observation precisions.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use std::f64::consts::{PI, SQRT_2};

/// Proposal changeover point between the inverse-Gaussian and exponential pieces.
const TRUNC: f64 = 0.64;

/// log Phi(x), accurate far into the lower tail.
pub fn log_normal_cdf(x: f64) -> f64 {
    if x > -8.0 {
        (0.5 * libm::erfc(-x / SQRT_2)).ln()
    } else {
        // Asymptotic expansion Phi(x) ~ phi(x)/(-x) (1 - 1/x^2 + 3/x^4 - ...).
        let r = 1.0 / (x * x);
        let series = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)));
        -0.5 * x * x - (-x).ln() - 0.5 * (2.0 * PI).ln() + series.ln()
    }
}

/// Coefficients of the alternating series for the half-unit Jacobi density,
/// in the piecewise form that converges on each side of the changeover.
fn a_coef(n: u64, x: f64) -> f64 {
    let np5 = n as f64 + 0.5;
    if x > TRUNC {
        PI * np5 * (-np5 * np5 * PI * PI * 0.5 * x).exp()
    } else {
        PI * np5 * (2.0 / (PI * x)).powf(1.5) * (-2.0 * np5 * np5 / x).exp()
    }
}

/// Probability of proposing from the exponential tail piece, computed in logs
/// so large tilts do not overflow.
fn tail_mass_ratio(z: f64) -> f64 {
    let t = TRUNC;
    let fz = PI * PI / 8.0 + z * z / 2.0;
    let b = (t * z - 1.0) / t.sqrt();
    let a = -(t * z + 1.0) / t.sqrt();
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + log_normal_cdf(b);
    let xa = x0 + z + log_normal_cdf(a);
    let qdivp = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + qdivp)
}

/// Inverse-Gaussian(mu = 1/z, lambda = 1) draw conditioned on (0, TRUNC].
fn truncated_inv_gauss(rng: &mut impl Rng, z: f64) -> f64 {
    let t = TRUNC;
    if z < 1.0 / t {
        // Mean beyond the truncation point: one-sided chi-like proposal.
        loop {
            let mut e1: f64 = rng.sample(Exp1);
            let mut e2: f64 = rng.sample(Exp1);
            while e1 * e1 > 2.0 * e2 / t {
                e1 = rng.sample(Exp1);
                e2 = rng.sample(Exp1);
            }
            let x = t / ((1.0 + t * e1) * (1.0 + t * e1));
            if rng.random::<f64>() <= (-0.5 * z * z * x).exp() {
                return x;
            }
        }
    } else {
        let mu = 1.0 / z;
        loop {
            let n: f64 = rng.sample(StandardNormal);
            let y = n * n;
            let muy = mu * y;
            let mut x = mu + 0.5 * mu * muy - 0.5 * mu * (4.0 * muy + muy * muy).sqrt();
            if x <= 0.0 {
                // Catastrophic cancellation; the reciprocal branch covers it.
                x = f64::MIN_POSITIVE;
            }
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x <= t {
                return x;
            }
        }
    }
}

/// Draw from the exponentially tilted half-unit Jacobi distribution.
fn sample_jacobi_tilted(rng: &mut impl Rng, z: f64) -> f64 {
    let fz = PI * PI / 8.0 + z * z / 2.0;
    let p_tail = tail_mass_ratio(z);
    loop {
        let x = if rng.random::<f64>() < p_tail {
            let e: f64 = rng.sample(Exp1);
            TRUNC + e / fz
        } else {
            truncated_inv_gauss(rng, z)
        };
        // Squeeze via partial sums of the alternating series.
        let s0 = a_coef(0, x);
        let y = rng.random::<f64>() * s0;
        let mut s = s0;
        let mut n = 0u64;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= a_coef(n, x);
                if y <= s {
                    return x;
                }
            } else {
                s += a_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// PG(1, b) draw. The tilt enters through |b|/2 and the Jacobi draw is
/// rescaled by 1/4.
pub fn sample_pg1(rng: &mut impl Rng, b: f64) -> f64 {
    let z = 0.5 * b.abs();
    0.25 * sample_jacobi_tilted(rng, z)
}

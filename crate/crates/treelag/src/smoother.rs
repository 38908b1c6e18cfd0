//! Penalized cubic B-spline smoother and the co-exposure-adjusted lag
//! contrasts built on it: the expected outcome change when one exposure moves
//! across its interquartile range at a single lag, while the other exposures
//! move to the values the smoother predicts for them at that level.

use crate::ensemble::{pair_index, LagEffects};
use crate::error::{Error, Result};
use crate::panel::LagPanel;
use crate::sampler::PosteriorDraws;
use crate::stats::{equal_tailed_interval, mean, quantile};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

const DEGREE: usize = 3;
const DEFAULT_INTERIOR_KNOTS: usize = 8;
const DEFAULT_TARGET_EDF: f64 = 5.0;
const EDF_TOLERANCE: f64 = 0.1;

/// Cubic regression spline with a second-order divided-difference penalty on
/// the coefficients, tuned by bisection to a target effective degrees of
/// freedom. Predictions outside the training range are clamped to the range
/// boundary.
#[derive(Clone, Debug)]
pub struct SplineSmoother {
    knots: Vec<f64>,
    coef: Vec<f64>,
    x_min: f64,
    x_max: f64,
    /// Effective degrees of freedom of the selected fit.
    pub edf: f64,
    /// Selected penalty weight.
    pub lambda: f64,
}

/// Index of the knot interval containing `x`, for the clamped knot vector.
fn find_span(knots: &[f64], n_basis: usize, x: f64) -> usize {
    if x >= knots[n_basis] {
        return n_basis - 1;
    }
    let mut lo = DEGREE;
    let mut hi = n_basis;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if x < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// The `DEGREE + 1` non-zero basis values at `x`, for basis indices
/// `span - DEGREE ..= span` (Cox-de Boor triangular recursion).
fn basis_at(knots: &[f64], span: usize, x: f64) -> [f64; DEGREE + 1] {
    let mut n = [0.0; DEGREE + 1];
    let mut left = [0.0; DEGREE + 1];
    let mut right = [0.0; DEGREE + 1];
    n[0] = 1.0;
    for j in 1..=DEGREE {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}

/// Knot averages; a function linear in x has coefficients linear in these.
fn greville(knots: &[f64], n_basis: usize) -> Vec<f64> {
    (0..n_basis)
        .map(|j| knots[j + 1..j + 1 + DEGREE].iter().sum::<f64>() / DEGREE as f64)
        .collect()
}

impl SplineSmoother {
    pub fn fit(x: &[f64], y: &[f64]) -> Result<Self> {
        Self::fit_with(x, y, DEFAULT_INTERIOR_KNOTS, DEFAULT_TARGET_EDF)
    }

    pub fn fit_with(x: &[f64], y: &[f64], interior_knots: usize, target_edf: f64) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Argument(format!(
                "smoother inputs differ in length: {} vs {}",
                x.len(),
                y.len()
            )));
        }
        if x.len() < DEGREE + 2 {
            return Err(Error::Numeric(format!(
                "smoother needs at least {} points, got {}",
                DEGREE + 2,
                x.len()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("smoother inputs must be finite".into()));
        }
        let x_min = x.iter().cloned().fold(f64::INFINITY, f64::min);
        let x_max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(x_max - x_min).is_normal() {
            return Err(Error::Numeric(
                "cannot smooth against a constant predictor".into(),
            ));
        }

        // Clamped knot vector with interior knots at quantiles, kept strictly
        // increasing (ties from discrete data are dropped).
        let mut knots = vec![x_min; DEGREE + 1];
        for k in 1..=interior_knots {
            let q = quantile(x, k as f64 / (interior_knots + 1) as f64);
            if q > *knots.last().unwrap() && q < x_max {
                knots.push(q);
            }
        }
        knots.extend(std::iter::repeat(x_max).take(DEGREE + 1));
        let n_basis = knots.len() - DEGREE - 1;

        // Normal-equation blocks, streamed point by point.
        let mut xtx = DMatrix::<f64>::zeros(n_basis, n_basis);
        let mut xty = DVector::<f64>::zeros(n_basis);
        for (&xi, &yi) in x.iter().zip(y) {
            let span = find_span(&knots, n_basis, xi);
            let b = basis_at(&knots, span, xi);
            let first = span - DEGREE;
            for r in 0..=DEGREE {
                xty[first + r] += b[r] * yi;
                for c in 0..=DEGREE {
                    xtx[(first + r, first + c)] += b[r] * b[c];
                }
            }
        }

        // Second-order divided-difference penalty: its null space is exactly
        // the coefficient sequences linear in the Greville abscissae, so
        // linear signals pass through the penalty untouched.
        let xi = greville(&knots, n_basis);
        let mut pen = DMatrix::<f64>::zeros(n_basis, n_basis);
        for j in 1..n_basis - 1 {
            let h0 = xi[j] - xi[j - 1];
            let h1 = xi[j + 1] - xi[j];
            let row = [1.0 / h0, -(1.0 / h0 + 1.0 / h1), 1.0 / h1];
            for (a, &ra) in row.iter().enumerate() {
                for (b, &rb) in row.iter().enumerate() {
                    pen[(j - 1 + a, j - 1 + b)] += ra * rb;
                }
            }
        }

        let solve = |lambda: f64| -> Result<(Cholesky<f64, Dyn>, f64)> {
            let a = &xtx + &pen * lambda;
            let chol = Cholesky::new(a).ok_or_else(|| {
                Error::Numeric("spline normal equations are not positive definite".into())
            })?;
            let z = chol.solve(&xtx);
            Ok((chol, z.trace()))
        };

        // Effective degrees of freedom decrease monotonically in the penalty;
        // bisect on its logarithm. If even the weakest penalty cannot reach
        // the target (few distinct knots), keep the near-unpenalized fit.
        let mut lo = -30.0f64;
        let mut hi = 30.0f64;
        let (_, edf_lo) = solve(lo.exp())?;
        let mut lambda = lo.exp();
        let mut chol_edf = None;
        if edf_lo > target_edf + EDF_TOLERANCE {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let (chol, edf) = solve(mid.exp())?;
                if (edf - target_edf).abs() <= EDF_TOLERANCE {
                    lambda = mid.exp();
                    chol_edf = Some((chol, edf));
                    break;
                }
                if edf > target_edf {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        let (chol, edf) = match chol_edf {
            Some(ce) => ce,
            None => solve(lambda)?,
        };
        let coef = chol.solve(&xty);
        Ok(SplineSmoother {
            knots,
            coef: coef.iter().cloned().collect(),
            x_min,
            x_max,
            edf,
            lambda,
        })
    }

    pub fn predict(&self, x: f64) -> f64 {
        let x = x.clamp(self.x_min, self.x_max);
        let n_basis = self.coef.len();
        let span = find_span(&self.knots, n_basis, x);
        let b = basis_at(&self.knots, span, x);
        let first = span - DEGREE;
        (0..=DEGREE).map(|r| b[r] * self.coef[first + r]).sum()
    }
}

/// Posterior contrasts for one exposure across its interquartile range at
/// each lag, with co-occurring exposures at their smoothed expected values.
#[derive(Clone, Debug)]
pub struct AdjustedContrasts {
    pub exposure: usize,
    pub exposure_names: Vec<String>,
    pub credible: f64,
    /// Per-exposure values substituted at the contrasted lag (low state).
    pub low_profile: Vec<f64>,
    /// Per-exposure values substituted at the contrasted lag (high state).
    pub high_profile: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub flagged: Vec<bool>,
}

/// One draw's contrast at every lag: the quadratic-predictor difference
/// between profiles that equal the pooled means everywhere except the
/// contrasted lag, where the exposures take `hi` versus `lo` values.
fn contrast_all_lags(
    effects: &LagEffects,
    means: &[f64],
    lo_vals: &[f64],
    hi_vals: &[f64],
) -> Vec<f64> {
    let m = effects.n_exposures;
    let t = effects.n_lags;
    let du: Vec<f64> = (0..m).map(|e| hi_vals[e] - means[e]).collect();
    let dv: Vec<f64> = (0..m).map(|e| lo_vals[e] - means[e]).collect();
    let mut out = vec![0.0; t];
    for lag in 0..t {
        for e in 0..m {
            out[lag] += effects.main[[e, lag]] * (du[e] - dv[e]);
        }
    }
    if !effects.has_interactions() {
        return out;
    }
    for a in 0..m {
        for b in a..m {
            let surf = &effects.interactions[pair_index(a, b, m)];
            // Linear terms: the base profile is constant within exposure, so
            // row and column sums of the surface carry all the coupling.
            for lag in 0..t {
                let mut row = 0.0;
                let mut col = 0.0;
                for tp in 0..t {
                    row += surf[[lag, tp]];
                    col += surf[[tp, lag]];
                }
                out[lag] += means[b] * row * (du[a] - dv[a]);
                out[lag] += means[a] * col * (du[b] - dv[b]);
                // Quadratic term: both factors perturbed at the same lag.
                out[lag] += surf[[lag, lag]] * (du[a] * du[b] - dv[a] * dv[b]);
            }
        }
    }
    out
}

/// Interquartile contrast for `exposure` at each lag, adjusting co-occurring
/// exposures to the values a pooled spline smoother predicts for them at the
/// two quartiles. The exposure itself maps identically to its quartiles.
pub fn coexposure_adjusted_effects(
    draws: &PosteriorDraws,
    panel: &LagPanel,
    exposure: usize,
    credible: f64,
) -> Result<AdjustedContrasts> {
    let m = draws.n_exposures;
    let t = draws.n_lags;
    if exposure >= m {
        return Err(Error::Argument(format!(
            "exposure {exposure} out of range for {m} exposures"
        )));
    }
    let (n_obs, pm, pt) = panel.exposures.dim();
    if pm != m || pt != t {
        return Err(Error::Argument(format!(
            "panel has {pm} exposures x {pt} lags but the fit used {m} x {t}"
        )));
    }
    if draws.n_draws() == 0 {
        return Err(Error::State("no retained draws to summarize".into()));
    }
    let stats = &draws.exposure_stats;
    let (lo, hi) = (stats.q25[exposure], stats.q75[exposure]);

    let own: Vec<f64> = (0..n_obs)
        .flat_map(|i| (0..t).map(move |lag| panel.exposures[[i, exposure, lag]]))
        .collect();
    let mut lo_vals = stats.means.clone();
    let mut hi_vals = stats.means.clone();
    lo_vals[exposure] = lo;
    hi_vals[exposure] = hi;
    for other in 0..m {
        if other == exposure {
            continue;
        }
        let ys: Vec<f64> = (0..n_obs)
            .flat_map(|i| (0..t).map(move |lag| panel.exposures[[i, other, lag]]))
            .collect();
        let sm = SplineSmoother::fit(&own, &ys)?;
        lo_vals[other] = sm.predict(lo);
        hi_vals[other] = sm.predict(hi);
    }

    let per_draw: Vec<Vec<f64>> = draws
        .effects
        .iter()
        .map(|e| contrast_all_lags(e, &stats.means, &lo_vals, &hi_vals))
        .collect();
    let mut mean_v = Vec::with_capacity(t);
    let mut lower = Vec::with_capacity(t);
    let mut upper = Vec::with_capacity(t);
    let mut flagged = Vec::with_capacity(t);
    for lag in 0..t {
        let xs: Vec<f64> = per_draw.iter().map(|d| d[lag]).collect();
        let (l, u) = equal_tailed_interval(&xs, credible)?;
        mean_v.push(mean(&xs));
        lower.push(l);
        upper.push(u);
        flagged.push(l > 0.0 || u < 0.0);
    }
    Ok(AdjustedContrasts {
        exposure,
        exposure_names: stats.names.clone(),
        credible,
        low_profile: lo_vals,
        high_profile: hi_vals,
        mean: mean_v,
        lower,
        upper,
        flagged,
    })
}

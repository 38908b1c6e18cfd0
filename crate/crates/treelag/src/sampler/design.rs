//! Per-pair design construction and marginal evaluation. Tree coefficients
//! are integrated out analytically, so structure moves compare closed-form
//! scores and the coefficient draw afterwards is a joint Gaussian.

use crate::ensemble::TreePair;
use crate::error::{Error, Result};
use crate::panel::LagPanel;
use crate::priors::{DeltaContext, ShrinkageState};
use crate::sampler::SamplerMode;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use ndarray::{Array1, Array3};
use rand::Rng;
use rand_distr::StandardNormal;

/// Per-individual running sums over the lag axis of each exposure, so any
/// terminal interval's exposure total is a single subtraction.
pub(crate) struct PanelPrefix {
    /// Shape (n, m, t + 1); entry (i, e, t) holds the sum of lags 1..=t.
    prefix: Array3<f64>,
}

impl PanelPrefix {
    pub(crate) fn new(panel: &LagPanel) -> Self {
        let (n, m, t) = (panel.n_individuals(), panel.n_exposures(), panel.n_lags());
        let mut prefix = Array3::zeros((n, m, t + 1));
        for i in 0..n {
            for e in 0..m {
                let mut acc = 0.0;
                for lag in 0..t {
                    acc += panel.exposures[[i, e, lag]];
                    prefix[[i, e, lag + 1]] = acc;
                }
            }
        }
        PanelPrefix { prefix }
    }

    /// Exposure sum over a 1-based inclusive lag interval.
    #[inline]
    pub(crate) fn interval_sum(&self, i: usize, exposure: usize, lo: usize, hi: usize) -> f64 {
        self.prefix[[i, exposure, hi]] - self.prefix[[i, exposure, lo - 1]]
    }

    fn n_individuals(&self) -> usize {
        self.prefix.shape()[0]
    }
}

/// Design block for one pair: columns for tree1 leaves, tree2 leaves (mixture
/// modes), and interaction cells, plus each column's prior variance.
pub(crate) struct PairDesign {
    pub w: DMatrix<f64>,
    pub prior_var: Vec<f64>,
    pub k1: usize,
    pub k2: usize,
}

pub(crate) fn build_design(
    pair: &TreePair,
    pair_idx: usize,
    mode: SamplerMode,
    prefix: &PanelPrefix,
    shrink: &ShrinkageState,
) -> PairDesign {
    let n = prefix.n_individuals();
    let iv1 = pair.tree1.terminal_intervals();
    let k1 = iv1.len();
    let (iv2, k2) = if mode.uses_second_tree() {
        let iv = pair.tree2.terminal_intervals();
        let k = iv.len();
        (iv, k)
    } else {
        (Vec::new(), 0)
    };
    let kc = if pair.has_cells() { k1 * k2 } else { 0 };
    let mut w = DMatrix::zeros(n, k1 + k2 + kc);
    for (j, &(lo, hi)) in iv1.iter().enumerate() {
        for i in 0..n {
            w[(i, j)] = prefix.interval_sum(i, pair.exposure1, lo, hi);
        }
    }
    for (j, &(lo, hi)) in iv2.iter().enumerate() {
        for i in 0..n {
            w[(i, k1 + j)] = prefix.interval_sum(i, pair.exposure2, lo, hi);
        }
    }
    if kc > 0 {
        // Row-major cell order matching TreePair::cells.
        for j1 in 0..k1 {
            for j2 in 0..k2 {
                let col = k1 + k2 + j1 * k2 + j2;
                for i in 0..n {
                    w[(i, col)] = w[(i, j1)] * w[(i, k1 + j2)];
                }
            }
        }
    }

    let mut prior_var = Vec::with_capacity(k1 + k2 + kc);
    let main1 = shrink.delta_prior_variance(main_context(mode, pair_idx, pair.exposure1));
    prior_var.extend(std::iter::repeat(main1).take(k1));
    if k2 > 0 {
        let main2 = shrink.delta_prior_variance(main_context(mode, pair_idx, pair.exposure2));
        prior_var.extend(std::iter::repeat(main2).take(k2));
    }
    if kc > 0 {
        let vint = shrink.delta_prior_variance(DeltaContext::InteractionScale {
            e1: pair.exposure1,
            e2: pair.exposure2,
        });
        prior_var.extend(std::iter::repeat(vint).take(kc));
    }
    PairDesign { w, prior_var, k1, k2 }
}

/// Local-scale context governing a slot's main-effect coefficients.
pub(crate) fn main_context(mode: SamplerMode, pair_idx: usize, exposure: usize) -> DeltaContext {
    if mode.is_mixture() {
        DeltaContext::ExposureScale { exposure }
    } else {
        DeltaContext::PairScale { pair: pair_idx }
    }
}

/// Marginal evaluation of a pair design against the working residual:
/// the coefficient-integrated log score plus the factor and mean needed to
/// draw the coefficients afterwards.
pub(crate) struct PairEval {
    pub design: PairDesign,
    chol: Cholesky<f64, Dyn>,
    mean: DVector<f64>,
    /// Log marginal score up to terms shared by all candidate structures.
    pub score: f64,
}

/// Dot product with four independent accumulators so the compiler can keep
/// the reduction pipelined.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for i in 4 * chunks..n {
        s += a[i] * b[i];
    }
    s
}

pub(crate) fn evaluate_pair(
    design: PairDesign,
    prec: &Array1<f64>,
    resid: &Array1<f64>,
) -> Result<PairEval> {
    let n = design.w.nrows();
    let k = design.w.ncols();
    let mut gram = DMatrix::zeros(k, k);
    let mut b = DVector::zeros(k);
    let prec_s = prec.as_slice().expect("contiguous precision");
    let resid_s = resid.as_slice().expect("contiguous residual");
    let wdat = design.w.as_slice();
    // Precision-scaled copies of the columns keep the inner products plain
    // dot products.
    let mut pw = vec![0.0; n * k];
    for j in 0..k {
        let src = &wdat[j * n..(j + 1) * n];
        let dst = &mut pw[j * n..(j + 1) * n];
        for i in 0..n {
            dst[i] = prec_s[i] * src[i];
        }
    }
    for kcol in 0..k {
        let pk = &pw[kcol * n..(kcol + 1) * n];
        b[kcol] = dot(pk, resid_s);
        for lcol in kcol..k {
            let cl = &wdat[lcol * n..(lcol + 1) * n];
            let acc = dot(pk, cl);
            gram[(kcol, lcol)] = acc;
            gram[(lcol, kcol)] = acc;
        }
    }
    let mut log_prior_var = 0.0;
    for (j, &v) in design.prior_var.iter().enumerate() {
        gram[(j, j)] += 1.0 / v;
        log_prior_var += v.ln();
    }
    let chol = Cholesky::new(gram)
        .ok_or_else(|| Error::Numeric("pair precision matrix not positive definite".into()))?;
    let mut log_det = 0.0;
    let l = chol.l_dirty();
    for j in 0..k {
        log_det += 2.0 * l[(j, j)].ln();
    }
    let mean = chol.solve(&b);
    let score = -0.5 * (log_prior_var + log_det) + 0.5 * b.dot(&mean);
    Ok(PairEval { design, chol, mean, score })
}

/// Joint Gaussian draw of the pair's coefficients given the evaluation.
pub(crate) fn draw_coefficients(eval: &PairEval, rng: &mut impl Rng) -> DVector<f64> {
    let k = eval.mean.len();
    let l = eval.chol.l_dirty();
    let mut u = DVector::zeros(k);
    // Solve L^T u = z by back substitution; only the lower triangle of the
    // factor is valid, which is all this touches.
    for i in (0..k).rev() {
        let mut s: f64 = rng.sample(StandardNormal);
        for j in (i + 1)..k {
            s -= l[(j, i)] * u[j];
        }
        u[i] = s / l[(i, i)];
    }
    &eval.mean + u
}

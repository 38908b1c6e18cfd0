//! Conditional updates outside the per-pair structure moves: coefficient
//! sums feeding the scale hierarchy, the covariate coefficient draw, and the
//! logistic latent-precision refresh.

use crate::ensemble::{n_pairs, pair_index, TreePairEnsemble};
use crate::error::{Error, Result};
use crate::pg::sample_pg1;
use crate::priors::{EffectSums, GroupSum, ShrinkageState};
use crate::sampler::SamplerMode;
use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;

/// Raw sums of squares of the current coefficients, grouped by the local
/// scale that governs them. The single-exposure mode groups per pair and its
/// inert second trees contribute nothing.
pub(crate) fn effect_sums(ens: &TreePairEnsemble, mode: SamplerMode) -> EffectSums {
    let mut sums = EffectSums::default();
    if mode.is_mixture() {
        let m = ens.n_exposures;
        sums.per_exposure = vec![GroupSum::default(); m];
        sums.per_interaction = vec![GroupSum::default(); n_pairs(m)];
        for pair in &ens.pairs {
            for (tree, e) in [(&pair.tree1, pair.exposure1), (&pair.tree2, pair.exposure2)] {
                let g = &mut sums.per_exposure[e];
                g.count += tree.effects.len();
                g.raw_ss += tree.effects.iter().map(|d| d * d).sum::<f64>();
            }
            if pair.has_cells() {
                let lo = pair.exposure1.min(pair.exposure2);
                let hi = pair.exposure1.max(pair.exposure2);
                let g = &mut sums.per_interaction[pair_index(lo, hi, m)];
                g.count += pair.cells.len();
                g.raw_ss += pair.cells.iter().map(|d| d * d).sum::<f64>();
            }
        }
    } else {
        sums.per_pair = vec![GroupSum::default(); ens.pairs.len()];
        for (a, pair) in ens.pairs.iter().enumerate() {
            let g = &mut sums.per_pair[a];
            g.count += pair.tree1.effects.len();
            g.raw_ss += pair.tree1.effects.iter().map(|d| d * d).sum::<f64>();
        }
    }
    sums
}

/// Coefficient sum of squares divided by each group's local^2 * nu^2, the
/// sigma^2-free scaling the variance update needs.
pub(crate) fn scaled_delta_ss(shrink: &ShrinkageState, sums: &EffectSums) -> f64 {
    let nu2 = shrink.nu2;
    let mut s = 0.0;
    for (a, g) in sums.per_pair.iter().enumerate() {
        if g.count > 0 {
            s += g.raw_ss / (shrink.tau2[a] * nu2);
        }
    }
    for (m, g) in sums.per_exposure.iter().enumerate() {
        if g.count > 0 {
            s += g.raw_ss / (shrink.mu2_main[m] * nu2);
        }
    }
    for (q, g) in sums.per_interaction.iter().enumerate() {
        if g.count > 0 {
            s += g.raw_ss / (shrink.mu2_int[q] * nu2);
        }
    }
    s
}

/// Per-exposure counts over all tree slots, for the selection-probability
/// update.
pub(crate) fn slot_counts(ens: &TreePairEnsemble) -> Vec<u32> {
    let mut counts = vec![0u32; ens.n_exposures];
    for pair in &ens.pairs {
        counts[pair.exposure1] += 1;
        counts[pair.exposure2] += 1;
    }
    counts
}

/// Joint Gaussian draw of the covariate coefficients against the working
/// residual with per-observation precisions. With zero precision everywhere
/// this is an exact prior draw.
pub(crate) fn draw_gamma(
    zmat: &DMatrix<f64>,
    prec: &Array1<f64>,
    resid: &Array1<f64>,
    shrink: &ShrinkageState,
    rng: &mut impl Rng,
) -> Result<DVector<f64>> {
    let n = zmat.nrows();
    let p = zmat.ncols();
    let v = shrink.covariate_prior_variance();
    let mut a = DMatrix::zeros(p, p);
    let mut b = DVector::zeros(p);
    for j in 0..p {
        let cj = zmat.column(j);
        let mut acc_b = 0.0;
        for i in 0..n {
            acc_b += prec[i] * cj[i] * resid[i];
        }
        b[j] = acc_b;
        for l in j..p {
            let cl = zmat.column(l);
            let mut acc = 0.0;
            for i in 0..n {
                acc += prec[i] * cj[i] * cl[i];
            }
            a[(j, l)] = acc;
            a[(l, j)] = acc;
        }
        a[(j, j)] += 1.0 / v;
    }
    let chol = Cholesky::new(a)
        .ok_or_else(|| Error::Numeric("covariate precision matrix not positive definite".into()))?;
    let mean = chol.solve(&b);
    let l = chol.l_dirty();
    let mut u = DVector::zeros(p);
    for i in (0..p).rev() {
        let mut s: f64 = rng.sample(StandardNormal);
        for j in (i + 1)..p {
            s -= l[(j, i)] * u[j];
        }
        u[i] = s / l[(i, i)];
    }
    Ok(mean + u)
}

/// Logistic augmentation refresh: draw each observation's latent precision at
/// the current linear predictor and rebuild the working response.
pub(crate) fn refresh_logistic_latents(
    outcome: &Array1<f64>,
    linear: &Array1<f64>,
    y_work: &mut Array1<f64>,
    prec: &mut Array1<f64>,
    rng: &mut impl Rng,
) {
    for i in 0..outcome.len() {
        let omega = sample_pg1(rng, linear[i]);
        prec[i] = omega;
        y_work[i] = (outcome[i] - 0.5) / omega;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::TreePair;
    use crate::tree::TimeSplitTree;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn effect_sums_group_by_mode() {
        let t = 6;
        let tree_a = TimeSplitTree::single(t).unwrap().grow(0, 3).unwrap();
        let tree_b = TimeSplitTree::single(t).unwrap();
        let mut p0 = TreePair::new(tree_a.clone(), tree_b.clone(), 0, 1, vec![0.0; 2]).unwrap();
        p0.tree1.effects = vec![1.0, 2.0];
        p0.tree2.effects = vec![3.0];
        p0.cells = vec![0.5, -0.5];
        let mut p1 = TreePair::new(tree_b.clone(), tree_b.clone(), 1, 1, vec![0.0]).unwrap();
        p1.tree1.effects = vec![-1.0];
        p1.tree2.effects = vec![4.0];
        p1.cells = vec![2.0];
        let ens = TreePairEnsemble { pairs: vec![p0, p1], n_exposures: 2, n_lags: t };

        let sums = effect_sums(&ens, SamplerMode::TdlmmFull);
        assert_eq!(sums.per_exposure[0].count, 2);
        assert!((sums.per_exposure[0].raw_ss - 5.0).abs() < 1e-12);
        // Exposure 1: tree2 of pair 0 plus both trees of pair 1.
        assert_eq!(sums.per_exposure[1].count, 3);
        assert!((sums.per_exposure[1].raw_ss - (9.0 + 1.0 + 16.0)).abs() < 1e-12);
        // Interactions: pair (0,1) and the self pair (1,1).
        assert!((sums.per_interaction[pair_index(0, 1, 2)].raw_ss - 0.5).abs() < 1e-12);
        assert!((sums.per_interaction[pair_index(1, 1, 2)].raw_ss - 4.0).abs() < 1e-12);
        assert_eq!(sums.n_delta(), 8);

        // Single-exposure grouping reads only the first trees.
        let mut se = ens.clone();
        for p in &mut se.pairs {
            p.exposure1 = 0;
            p.exposure2 = 0;
            p.cells = Vec::new();
        }
        se.n_exposures = 1;
        let sums = effect_sums(&se, SamplerMode::Tdlm);
        assert_eq!(sums.per_pair.len(), 2);
        assert!((sums.per_pair[0].raw_ss - 5.0).abs() < 1e-12);
        assert_eq!(sums.n_delta(), 3);
    }

    #[test]
    fn slot_counts_cover_both_slots() {
        let t = 3;
        let tree = TimeSplitTree::single(t).unwrap();
        let pairs = vec![
            TreePair::new(tree.clone(), tree.clone(), 0, 2, Vec::new()).unwrap(),
            TreePair::new(tree.clone(), tree.clone(), 2, 2, Vec::new()).unwrap(),
        ];
        let ens = TreePairEnsemble { pairs, n_exposures: 3, n_lags: t };
        assert_eq!(slot_counts(&ens), vec![1, 0, 3]);
    }

    /// Conjugate check: with fixed precision the draw must match the weighted
    /// ridge solution in mean and covariance.
    #[test]
    fn gamma_draw_matches_normal_equations() {
        let n = 40;
        let p = 3;
        let mut rng = StdRng::seed_from_u64(8);
        let zmat = DMatrix::from_fn(n, p, |i, j| {
            if j == 0 {
                1.0
            } else {
                ((i * (j + 3)) % 7) as f64 / 3.0 - 1.0
            }
        });
        let prec = Array1::from_elem(n, 1.7);
        let resid = Array1::from_shape_fn(n, |i| ((i % 5) as f64) - 2.0);
        let mut shrink = ShrinkageState::new_pair_scales(1, 10.0);
        shrink.sigma2 = 0.8;
        let v = shrink.covariate_prior_variance();
        let mut a = zmat.transpose() * &zmat * 1.7;
        for j in 0..p {
            a[(j, j)] += 1.0 / v;
        }
        let bvec = zmat.transpose() * DVector::from_fn(n, |i, _| 1.7 * resid[i]);
        let cov = a.try_inverse().unwrap();
        let want_mean = &cov * bvec;
        let draws = 40_000;
        let mut sums = vec![0.0; p];
        let mut sq = vec![0.0; p];
        for _ in 0..draws {
            let g = draw_gamma(&zmat, &prec, &resid, &shrink, &mut rng).unwrap();
            for j in 0..p {
                sums[j] += g[j];
                sq[j] += g[j] * g[j];
            }
        }
        for j in 0..p {
            let mean = sums[j] / draws as f64;
            let var = sq[j] / draws as f64 - mean * mean;
            let se = (cov[(j, j)] / draws as f64).sqrt();
            assert!((mean - want_mean[j]).abs() < 5.0 * se);
            assert!((var - cov[(j, j)]).abs() < 0.06 * cov[(j, j)]);
        }
    }

    #[test]
    fn latent_refresh_produces_valid_precisions() {
        let mut rng = StdRng::seed_from_u64(12);
        let n = 200;
        let outcome = Array1::from_shape_fn(n, |i| (i % 2) as f64);
        let linear = Array1::from_shape_fn(n, |i| (i as f64 / n as f64) * 4.0 - 2.0);
        let mut y_work = Array1::zeros(n);
        let mut prec = Array1::zeros(n);
        refresh_logistic_latents(&outcome, &linear, &mut y_work, &mut prec, &mut rng);
        for i in 0..n {
            assert!(prec[i] > 0.0 && prec[i].is_finite());
            let want = (outcome[i] - 0.5) / prec[i];
            assert!((y_work[i] - want).abs() < 1e-12);
        }
    }
}

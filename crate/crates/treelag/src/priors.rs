//! Priors: the depth-penalized tree prior, half-Cauchy scale hierarchy with
//! inverse-gamma parameter expansion, and the Dirichlet prior over exposure
//! assignment probabilities.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::ensemble::{n_pairs, pair_index};
use crate::error::{Error, Result};
use crate::tree::{Node, TimeSplitTree};

/// Depth-penalized splitting prior: a node at depth d splits with probability
/// alpha * (1 + d)^(-beta), and split points are uniform over the valid lags.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct TreePriorConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for TreePriorConfig {
    fn default() -> Self {
        TreePriorConfig { alpha: 0.95, beta: 2.0 }
    }
}

impl TreePriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} out of (0,1)", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta {} must be finite and >= 0", self.beta)));
        }
        Ok(())
    }

    pub fn split_prob(&self, depth: usize) -> f64 {
        self.alpha * (1.0 + depth as f64).powf(-self.beta)
    }
}

/// Unnormalized log prior of a tree: split/stop factors at every node plus a
/// uniform factor over the valid split points of each internal node. The stop
/// factor applies to every terminal node, including single-lag ones.
pub fn tree_log_prior(tree: &TimeSplitTree, cfg: &TreePriorConfig) -> f64 {
    fn walk(node: &Node, lo: usize, hi: usize, depth: usize, cfg: &TreePriorConfig) -> f64 {
        let p = cfg.split_prob(depth);
        match node {
            Node::Leaf => (1.0 - p).ln(),
            Node::Split { at, left, right } => {
                p.ln() - ((hi - lo) as f64).ln()
                    + walk(left, lo, *at, depth + 1, cfg)
                    + walk(right, *at + 1, hi, depth + 1, cfg)
            }
        }
    }
    walk(tree.root(), 1, tree.n_lags(), 0, cfg)
}

/// Draw a tree from the prior by top-down generation with rejection: the
/// generative walk cannot split single-lag nodes, so acceptance with
/// probability prod(1 - p_depth) over single-lag terminals corrects the draw
/// to the density `tree_log_prior` describes. Effects are left at zero.
pub fn sample_tree_from_prior(n_lags: usize, cfg: &TreePriorConfig, rng: &mut impl Rng) -> Result<TimeSplitTree> {
    fn gen(lo: usize, hi: usize, depth: usize, cfg: &TreePriorConfig, rng: &mut impl Rng, log_acc: &mut f64) -> Node {
        let p = cfg.split_prob(depth);
        if lo == hi {
            *log_acc += (1.0 - p).ln();
            return Node::Leaf;
        }
        if rng.random::<f64>() < p {
            let at = lo + rng.random_range(0..hi - lo);
            Node::Split {
                at,
                left: Box::new(gen(lo, at, depth + 1, cfg, rng, log_acc)),
                right: Box::new(gen(at + 1, hi, depth + 1, cfg, rng, log_acc)),
            }
        } else {
            Node::Leaf
        }
    }
    if n_lags == 0 {
        return Err(Error::Argument("tree needs at least one lag".into()));
    }
    loop {
        let mut log_acc = 0.0;
        let root = gen(1, n_lags, 0, cfg, rng, &mut log_acc);
        if rng.random::<f64>() < log_acc.exp() {
            let n_leaves = count(&root);
            return TimeSplitTree::new(n_lags, root, vec![0.0; n_leaves]);
        }
    }
}

fn count(node: &Node) -> usize {
    match node {
        Node::Leaf => 1,
        Node::Split { left, right, .. } => count(left) + count(right),
    }
}

/// Inverse-gamma draw with the given shape and rate.
pub fn sample_inv_gamma(rng: &mut impl Rng, shape: f64, rate: f64) -> f64 {
    debug_assert!(shape > 0.0 && rate > 0.0, "inv-gamma shape {shape} rate {rate}");
    let g = Gamma::new(shape, 1.0 / rate).expect("gamma parameters").sample(rng);
    1.0 / g.max(f64::MIN_POSITIVE)
}

/// One cycle of the parameter-expanded half-Cauchy update: given `count`
/// coefficients whose prior variance is `x2` times a known factor, and
/// `scaled_ss` = sum of squared coefficients divided by that factor, draw the
/// squared scale and refresh its auxiliary. With no coefficients this is a
/// stationary prior draw.
pub fn half_cauchy_px_step(x2: &mut f64, aux: &mut f64, count: usize, scaled_ss: f64, rng: &mut impl Rng) {
    *x2 = sample_inv_gamma(rng, (count as f64 + 1.0) / 2.0, 1.0 / *aux + 0.5 * scaled_ss);
    *aux = sample_inv_gamma(rng, 1.0, 1.0 + 1.0 / *x2);
}

/// Which prior variance a coefficient block uses.
#[derive(Clone, Copy, Debug)]
pub enum DeltaContext {
    /// Main effects of ensemble member `pair` in the single-exposure model.
    PairScale { pair: usize },
    /// Main effects assigned exposure `exposure` in mixture models.
    ExposureScale { exposure: usize },
    /// Interaction cells between the two (unordered) exposures.
    InteractionScale { e1: usize, e2: usize },
}

/// Scale hierarchy: every coefficient's prior variance is
/// local^2 * nu^2 * sigma^2 with half-Cauchy priors on local scales, nu, and
/// sigma; covariate coefficients use the fixed broad variance c * sigma^2.
#[derive(Clone, Debug)]
pub struct ShrinkageState {
    /// Per-pair squared local scales (single-exposure model), length A.
    pub tau2: Vec<f64>,
    aux_tau: Vec<f64>,
    /// Per-exposure squared local scales (mixture models), length M.
    pub mu2_main: Vec<f64>,
    aux_mu_main: Vec<f64>,
    /// Per-exposure-pair squared local scales, upper-triangular order.
    pub mu2_int: Vec<f64>,
    aux_mu_int: Vec<f64>,
    pub nu2: f64,
    aux_nu: f64,
    pub sigma2: f64,
    aux_sigma: f64,
    /// Covariate prior variance multiplier.
    pub c: f64,
    n_exposures: usize,
}

impl ShrinkageState {
    pub fn new_pair_scales(n_tree_pairs: usize, c: f64) -> Self {
        ShrinkageState {
            tau2: vec![1.0; n_tree_pairs],
            aux_tau: vec![1.0; n_tree_pairs],
            mu2_main: Vec::new(),
            aux_mu_main: Vec::new(),
            mu2_int: Vec::new(),
            aux_mu_int: Vec::new(),
            nu2: 1.0,
            aux_nu: 1.0,
            sigma2: 1.0,
            aux_sigma: 1.0,
            c,
            n_exposures: 1,
        }
    }

    pub fn new_exposure_scales(n_exposures: usize, c: f64) -> Self {
        let np = n_pairs(n_exposures);
        ShrinkageState {
            tau2: Vec::new(),
            aux_tau: Vec::new(),
            mu2_main: vec![1.0; n_exposures],
            aux_mu_main: vec![1.0; n_exposures],
            mu2_int: vec![1.0; np],
            aux_mu_int: vec![1.0; np],
            nu2: 1.0,
            aux_nu: 1.0,
            sigma2: 1.0,
            aux_sigma: 1.0,
            c,
            n_exposures,
        }
    }

    /// Squared local scale for a coefficient block.
    pub fn local2(&self, ctx: DeltaContext) -> f64 {
        match ctx {
            DeltaContext::PairScale { pair } => self.tau2[pair],
            DeltaContext::ExposureScale { exposure } => self.mu2_main[exposure],
            DeltaContext::InteractionScale { e1, e2 } => {
                self.mu2_int[pair_index(e1.min(e2), e1.max(e2), self.n_exposures)]
            }
        }
    }

    /// Full prior variance local^2 * nu^2 * sigma^2 of one coefficient.
    pub fn delta_prior_variance(&self, ctx: DeltaContext) -> f64 {
        self.local2(ctx) * self.nu2 * self.sigma2
    }

    pub fn covariate_prior_variance(&self) -> f64 {
        self.c * self.sigma2
    }

    /// Gibbs update of sigma^2 given residual, coefficient, and covariate
    /// sums of squares (each already divided by its variance factor short of
    /// sigma^2). `n_obs` is 0 when the likelihood is switched off.
    pub fn update_sigma2(
        &mut self,
        n_obs: usize,
        resid_ss: f64,
        n_delta: usize,
        delta_scaled_ss: f64,
        n_gamma: usize,
        gamma_ss: f64,
        rng: &mut impl Rng,
    ) {
        let shape = (n_obs as f64 + n_delta as f64 + n_gamma as f64 + 1.0) / 2.0;
        let rate = 1.0 / self.aux_sigma + 0.5 * (resid_ss + delta_scaled_ss + gamma_ss / self.c);
        self.sigma2 = sample_inv_gamma(rng, shape, rate);
        self.aux_sigma = sample_inv_gamma(rng, 1.0, 1.0 + 1.0 / self.sigma2);
    }
}

/// Raw per-group coefficient counts and sums of squares (no variance scaling).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroupSum {
    pub count: usize,
    pub raw_ss: f64,
}

/// Coefficient sums grouped by the local scale that governs them.
#[derive(Clone, Debug, Default)]
pub struct EffectSums {
    pub per_pair: Vec<GroupSum>,
    pub per_exposure: Vec<GroupSum>,
    pub per_interaction: Vec<GroupSum>,
}

impl EffectSums {
    pub fn n_delta(&self) -> usize {
        self.per_pair.iter().map(|g| g.count).sum::<usize>()
            + self.per_exposure.iter().map(|g| g.count).sum::<usize>()
            + self.per_interaction.iter().map(|g| g.count).sum::<usize>()
    }
}

/// Sweep the local scales and then the global scale nu, each via the
/// parameter-expanded inverse-gamma step. Local updates divide by the current
/// nu^2 sigma^2; nu's update divides by the freshly drawn local scales.
pub fn update_scales(state: &mut ShrinkageState, sums: &EffectSums, rng: &mut impl Rng) -> Result<()> {
    if sums.per_pair.len() != state.tau2.len()
        || sums.per_exposure.len() != state.mu2_main.len()
        || sums.per_interaction.len() != state.mu2_int.len()
    {
        return Err(Error::Argument("effect sums do not match shrinkage state shape".into()));
    }
    let denom_global = state.nu2 * state.sigma2;
    for (a, g) in sums.per_pair.iter().enumerate() {
        let (mut x2, mut aux) = (state.tau2[a], state.aux_tau[a]);
        half_cauchy_px_step(&mut x2, &mut aux, g.count, g.raw_ss / denom_global, rng);
        state.tau2[a] = x2;
        state.aux_tau[a] = aux;
    }
    for (m, g) in sums.per_exposure.iter().enumerate() {
        let (mut x2, mut aux) = (state.mu2_main[m], state.aux_mu_main[m]);
        half_cauchy_px_step(&mut x2, &mut aux, g.count, g.raw_ss / denom_global, rng);
        state.mu2_main[m] = x2;
        state.aux_mu_main[m] = aux;
    }
    for (k, g) in sums.per_interaction.iter().enumerate() {
        let (mut x2, mut aux) = (state.mu2_int[k], state.aux_mu_int[k]);
        half_cauchy_px_step(&mut x2, &mut aux, g.count, g.raw_ss / denom_global, rng);
        state.mu2_int[k] = x2;
        state.aux_mu_int[k] = aux;
    }
    // nu sees every coefficient, scaled by its own fresh local variance.
    let mut scaled = 0.0;
    let mut n = 0usize;
    for (a, g) in sums.per_pair.iter().enumerate() {
        scaled += g.raw_ss / state.tau2[a];
        n += g.count;
    }
    for (m, g) in sums.per_exposure.iter().enumerate() {
        scaled += g.raw_ss / state.mu2_main[m];
        n += g.count;
    }
    for (k, g) in sums.per_interaction.iter().enumerate() {
        scaled += g.raw_ss / state.mu2_int[k];
        n += g.count;
    }
    let (mut nu2, mut aux) = (state.nu2, state.aux_nu);
    half_cauchy_px_step(&mut nu2, &mut aux, n, scaled / state.sigma2, rng);
    state.nu2 = nu2;
    state.aux_nu = aux;
    Ok(())
}

/// Probabilities of assigning each exposure to a tree slot, with a symmetric
/// Dirichlet(kappa) prior.
#[derive(Clone, Debug)]
pub struct ExposureProbs {
    pub probs: Vec<f64>,
    pub kappa: f64,
}

impl ExposureProbs {
    pub fn uniform(n_exposures: usize, kappa: f64) -> Result<Self> {
        if n_exposures == 0 {
            return Err(Error::Argument("need at least one exposure".into()));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::Config(format!("kappa {kappa} must be positive")));
        }
        Ok(ExposureProbs { probs: vec![1.0 / n_exposures as f64; n_exposures], kappa })
    }

    /// Conjugate Dirichlet(kappa + count) update given per-exposure slot counts.
    pub fn update(&mut self, counts: &[u32], rng: &mut impl Rng) -> Result<()> {
        if counts.len() != self.probs.len() {
            return Err(Error::Argument(format!(
                "{} counts for {} exposures",
                counts.len(),
                self.probs.len()
            )));
        }
        let mut sum = 0.0;
        for (p, &c) in self.probs.iter_mut().zip(counts) {
            let g = Gamma::new(self.kappa + c as f64, 1.0)
                .map_err(|e| Error::Numeric(format!("gamma draw: {e}")))?
                .sample(rng);
            *p = g;
            sum += g;
        }
        if !(sum > 0.0) {
            return Err(Error::Numeric("degenerate Dirichlet draw".into()));
        }
        for p in &mut self.probs {
            *p /= sum;
        }
        Ok(())
    }
}

/// Monte Carlo estimate of the prior probability that a given exposure lands
/// in at least one of the 2 * n_tree_pairs tree slots, under E ~ Dirichlet(kappa)
/// and independent categorical slot assignments.
pub fn prior_inclusion_probability(
    n_exposures: usize,
    n_tree_pairs: usize,
    kappa: f64,
    n_draws: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    if n_exposures == 0 || n_tree_pairs == 0 || n_draws == 0 {
        return Err(Error::Argument("need exposures, pairs, and draws".into()));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Config(format!("kappa {kappa} must be positive")));
    }
    let slots = 2 * n_tree_pairs as u32;
    let gamma = Gamma::new(kappa, 1.0).map_err(|e| Error::Numeric(format!("gamma: {e}")))?;
    let mut hits = 0usize;
    for _ in 0..n_draws {
        // P(exposure 0 in >= 1 slot | E) depends only on its own probability;
        // by symmetry E_0 = G_0 / sum with iid Gamma(kappa) draws.
        let mut sum = 0.0;
        let mut g0 = 0.0;
        for j in 0..n_exposures {
            let g = gamma.sample(rng);
            if j == 0 {
                g0 = g;
            }
            sum += g;
        }
        let p0 = g0 / sum;
        // Draw the count of slots assigned exposure 0.
        let mut present = false;
        for _ in 0..slots {
            if rng.random::<f64>() < p0 {
                present = true;
                break;
            }
        }
        if present {
            hits += 1;
        }
    }
    Ok(hits as f64 / n_draws as f64)
}


#[cfg(test)]
mod tests {
    use super::tests_support::enumerate_trees;
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn log_prior_matches_hand_computation() {
        let cfg = TreePriorConfig::default();
        // Root split over two lags: one valid split point, two single-lag
        // terminals at depth 1.
        let tree = TimeSplitTree::single(2).unwrap().grow(0, 1).unwrap();
        let want = 0.95f64.ln() + 2.0 * (1.0f64 - 0.95 / 4.0).ln() + 1.0f64.ln();
        assert_abs_diff_eq!(tree_log_prior(&tree, &cfg), want, epsilon = 1e-12);
        // Single-node tree: just the stop factor at depth 0.
        let single = TimeSplitTree::single(2).unwrap();
        assert_abs_diff_eq!(tree_log_prior(&single, &cfg), 0.05f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn split_prob_decays_with_depth() {
        let cfg = TreePriorConfig::default();
        assert_abs_diff_eq!(cfg.split_prob(0), 0.95);
        assert_abs_diff_eq!(cfg.split_prob(1), 0.95 / 4.0);
        assert_abs_diff_eq!(cfg.split_prob(3), 0.95 / 16.0);
        assert!(TreePriorConfig { alpha: 1.0, beta: 2.0 }.validate().is_err());
        assert!(TreePriorConfig { alpha: 0.5, beta: -1.0 }.validate().is_err());
    }

    #[test]
    fn enumerated_prior_mass_is_normalizable() {
        // The prior is a proper distribution on each finite tree space once
        // normalized; the normalizer is the acceptance rate of the rejection
        // sampler, not 1, because single-lag terminals still carry stop factors.
        let cfg = TreePriorConfig::default();
        for t in [1usize, 2, 3, 4, 6] {
            let trees = enumerate_trees(t);
            let z: f64 = trees.iter().map(|tr| tree_log_prior(tr, &cfg).exp()).sum();
            assert!(z > 0.0 && z <= 1.0 + 1e-12, "T={t}: Z={z}");
        }
        assert_eq!(enumerate_trees(3).len(), 5);
        assert_eq!(enumerate_trees(4).len(), 15);
    }

    #[test]
    fn prior_sampler_matches_enumeration() {
        let cfg = TreePriorConfig::default();
        let t = 4;
        let trees = enumerate_trees(t);
        let weights: Vec<f64> = trees.iter().map(|tr| tree_log_prior(tr, &cfg).exp()).collect();
        let z: f64 = weights.iter().sum();
        let expected_leaves: f64 = trees
            .iter()
            .zip(&weights)
            .map(|(tr, w)| tr.n_leaves() as f64 * w / z)
            .sum();
        let mut rng = StdRng::seed_from_u64(99);
        let n = 40_000;
        let mut mean_leaves = 0.0;
        let mut seen_multi = false;
        for _ in 0..n {
            let tr = sample_tree_from_prior(t, &cfg, &mut rng).unwrap();
            mean_leaves += tr.n_leaves() as f64;
            seen_multi |= tr.n_leaves() > 2;
        }
        mean_leaves /= n as f64;
        // Monte Carlo SE is about sqrt(var/n) < 0.006; allow 4 SE.
        assert!(
            (mean_leaves - expected_leaves).abs() < 0.03,
            "mean leaves {mean_leaves} vs enumerated {expected_leaves}"
        );
        assert!(seen_multi);
    }

    #[test]
    fn px_gibbs_reproduces_half_cauchy() {
        // Stationary chain of the parameter-expanded pair targets C+(0,1).
        let mut rng = StdRng::seed_from_u64(5);
        let (mut x2, mut aux) = (1.0, 1.0);
        let mut draws = Vec::with_capacity(20_000);
        for i in 0..21_000 {
            half_cauchy_px_step(&mut x2, &mut aux, 0, 0.0, &mut rng);
            if i >= 1000 {
                draws.push(x2.sqrt());
            }
        }
        let d = crate::stats::ks_statistic(&draws, |x| {
            2.0 / std::f64::consts::PI * x.atan()
        });
        assert!(d < 0.02, "KS distance {d}");
    }

    #[test]
    fn conditional_scale_update_shrinks_with_evidence() {
        // With many small coefficients the scale concentrates near their RMS.
        let mut rng = StdRng::seed_from_u64(17);
        let (mut x2, mut aux) = (1.0, 1.0);
        let count = 4000;
        let true_scale2 = 0.04;
        let scaled_ss = true_scale2 * count as f64;
        let mut acc = 0.0;
        let reps = 4000;
        for _ in 0..reps {
            half_cauchy_px_step(&mut x2, &mut aux, count, scaled_ss, &mut rng);
            acc += x2;
        }
        let mean = acc / reps as f64;
        assert!((mean - true_scale2).abs() < 0.005, "posterior mean {mean}");
    }

    #[test]
    fn dirichlet_update_matches_conjugate_moments() {
        let mut rng = StdRng::seed_from_u64(23);
        let kappa = 1.089;
        let counts = [3u32, 0, 7];
        let alphas: Vec<f64> = counts.iter().map(|&c| kappa + c as f64).collect();
        let a0: f64 = alphas.iter().sum();
        let n = 40_000;
        let mut mean = [0.0; 3];
        let mut second = [0.0; 3];
        let mut probs = ExposureProbs::uniform(3, kappa).unwrap();
        for _ in 0..n {
            probs.update(&counts, &mut rng).unwrap();
            for j in 0..3 {
                mean[j] += probs.probs[j];
                second[j] += probs.probs[j] * probs.probs[j];
            }
        }
        for j in 0..3 {
            mean[j] /= n as f64;
            second[j] /= n as f64;
            let want_mean = alphas[j] / a0;
            let want_var = alphas[j] * (a0 - alphas[j]) / (a0 * a0 * (a0 + 1.0));
            let se = (want_var / n as f64).sqrt();
            assert!((mean[j] - want_mean).abs() < 4.0 * se + 1e-4, "mean[{j}]");
            let var = second[j] - mean[j] * mean[j];
            assert!((var - want_var).abs() < 0.05 * want_var + 1e-5, "var[{j}]");
        }
        assert!(probs.update(&[1, 2], &mut rng).is_err());
    }

    #[test]
    fn prior_inclusion_agrees_with_beta_function_formula() {
        // P(exposure absent from all 2A slots) = E[(1-p)^(2A)] with
        // p ~ Beta(kappa, (M-1) kappa), available in closed form via log-Beta.
        let mut rng = StdRng::seed_from_u64(41);
        for (m, a, kappa) in [(2usize, 1usize, 0.5f64), (3, 2, 1.089), (5, 20, 1.089)] {
            let lb = |x: f64, y: f64| libm::lgamma(x) + libm::lgamma(y) - libm::lgamma(x + y);
            let k1 = kappa;
            let k2 = (m as f64 - 1.0) * kappa;
            let closed = 1.0 - (lb(k1, k2 + 2.0 * a as f64) - lb(k1, k2)).exp();
            let mc = prior_inclusion_probability(m, a, kappa, 60_000, &mut rng).unwrap();
            assert!(
                (mc - closed).abs() < 0.008,
                "m={m} a={a}: mc={mc} closed={closed}"
            );
        }
    }

    #[test]
    fn delta_variance_multiplies_all_three_scales() {
        let mut st = ShrinkageState::new_exposure_scales(3, 1e6);
        st.mu2_main[1] = 4.0;
        st.mu2_int[pair_index(0, 2, 3)] = 9.0;
        st.nu2 = 0.25;
        st.sigma2 = 2.0;
        assert_abs_diff_eq!(
            st.delta_prior_variance(DeltaContext::ExposureScale { exposure: 1 }),
            4.0 * 0.25 * 2.0
        );
        // Interaction scale is order-invariant.
        assert_abs_diff_eq!(
            st.delta_prior_variance(DeltaContext::InteractionScale { e1: 2, e2: 0 }),
            9.0 * 0.25 * 2.0
        );
        assert_abs_diff_eq!(st.covariate_prior_variance(), 2e6);
    }
}

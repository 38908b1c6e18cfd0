//! MCMC quality diagnostics: effective sample size with Geyer-style
//! initial-monotone truncation of the autocorrelation sum, and the split-chain
//! potential scale reduction factor.

use crate::sampler::PosteriorDraws;

/// Per-chain autocovariance at lag `t` (1/n normalization).
fn autocov(xs: &[f64], mu: f64, t: usize) -> f64 {
    let n = xs.len();
    let mut s = 0.0;
    for i in 0..n - t {
        s += (xs[i] - mu) * (xs[i + t] - mu);
    }
    s / n as f64
}

fn chain_means_vars(chains: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let means: Vec<f64> = chains
        .iter()
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let vars: Vec<f64> = chains
        .iter()
        .zip(&means)
        .map(|(c, &m)| c.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (c.len() - 1) as f64)
        .collect();
    (means, vars)
}

/// Effective sample size of one parameter across chains of equal length.
/// Autocorrelations are combined across chains, summed in consecutive pairs,
/// truncated at the first non-positive pair, and forced non-increasing.
/// Returns NaN for degenerate inputs (constant chains, fewer than 4 draws).
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let k = chains.len();
    if k == 0 {
        return f64::NAN;
    }
    let n = chains[0].len();
    if n < 4 || chains.iter().any(|c| c.len() != n) {
        return f64::NAN;
    }
    let (means, vars) = chain_means_vars(chains);
    let w = vars.iter().sum::<f64>() / k as f64;
    let b_over_n = if k > 1 {
        let gm = means.iter().sum::<f64>() / k as f64;
        means.iter().map(|m| (m - gm) * (m - gm)).sum::<f64>() / (k - 1) as f64
    } else {
        0.0
    };
    let var_plus = w * (n - 1) as f64 / n as f64 + b_over_n;
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let rho = |t: usize| -> f64 {
        let acov = chains
            .iter()
            .zip(&means)
            .map(|(c, &m)| autocov(c, m, t))
            .sum::<f64>()
            / k as f64;
        1.0 - (w - acov) / var_plus
    };
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0usize;
    while t + 1 < n {
        let pair = if t == 0 { 1.0 + rho(1) } else { rho(t) + rho(t + 1) };
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        t += 2;
    }
    let total = (k * n) as f64;
    let ess = total / tau.max(1e-12);
    // Guard against runaway estimates from noisy antithetic autocorrelations.
    ess.min(total * total.max(10.0).log10())
}

/// Split-chain potential scale reduction factor: each chain is halved, and
/// the pooled-to-within variance ratio is computed over the halves. Values
/// near 1 indicate the halves agree; NaN for degenerate inputs.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let mut halves: Vec<Vec<f64>> = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let h = c.len() / 2;
        if h < 2 {
            return f64::NAN;
        }
        halves.push(c[..h].to_vec());
        halves.push(c[c.len() - h..].to_vec());
    }
    let h = halves[0].len();
    if halves.iter().any(|c| c.len() != h) {
        return f64::NAN;
    }
    let (means, vars) = chain_means_vars(&halves);
    let w = vars.iter().sum::<f64>() / vars.len() as f64;
    if !(w > 0.0) {
        return f64::NAN;
    }
    let gm = means.iter().sum::<f64>() / means.len() as f64;
    let b_over_h =
        means.iter().map(|m| (m - gm) * (m - gm)).sum::<f64>() / (means.len() - 1) as f64;
    let var_plus = w * (h - 1) as f64 / h as f64 + b_over_h;
    (var_plus / w).sqrt()
}

/// One row of the chain-diagnostics table.
#[derive(Clone, Debug)]
pub struct ParamDiagnostic {
    pub name: String,
    pub mean: f64,
    pub ess: f64,
    pub rhat: f64,
}

fn diagnose(name: String, draws: &PosteriorDraws, extract: impl Fn(usize) -> f64) -> ParamDiagnostic {
    let chains: Vec<Vec<f64>> = (0..draws.n_chains)
        .map(|c| draws.chain_range(c).map(&extract).collect())
        .collect();
    let total = draws.n_draws().max(1) as f64;
    let mean = (0..draws.n_draws()).map(&extract).sum::<f64>() / total;
    ParamDiagnostic {
        name,
        mean,
        ess: effective_sample_size(&chains),
        rhat: split_rhat(&chains),
    }
}

/// Diagnostics for the scalar traces of a fit: the noise and global shrinkage
/// variances, every covariate coefficient, and every main lag effect.
pub fn chain_diagnostics(draws: &PosteriorDraws) -> Vec<ParamDiagnostic> {
    let mut rows = Vec::new();
    rows.push(diagnose("sigma2".into(), draws, |d| draws.sigma2[d]));
    rows.push(diagnose("nu2".into(), draws, |d| draws.nu2[d]));
    for (j, name) in draws.covariate_names.iter().enumerate() {
        rows.push(diagnose(format!("gamma[{name}]"), draws, |d| {
            draws.gamma[[d, j]]
        }));
    }
    for e in 0..draws.n_exposures {
        let ename = &draws.exposure_stats.names[e];
        for lag in 0..draws.n_lags {
            rows.push(diagnose(
                format!("effect[{ename},lag{}]", lag + 1),
                draws,
                |d| draws.effects[d].main[[e, lag]],
            ));
        }
    }
    rows
}

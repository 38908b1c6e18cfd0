//! Synthetic data generation and benchmark scoring: cross-correlated AR(1)
//! exposure histories, two scenario generators with exactly recorded ground
//! truth, fit scoring against that truth, and a replicated benchmark runner.

use crate::ensemble::{n_pairs, pair_index};
use crate::error::{Error, Result};
use crate::panel::{Family, LagPanel};
use crate::sampler::{run_sampler, SamplerConfig, SamplerMode};
use crate::stats::{mean, sd, splitmix64};
use crate::summary::{inclusion_probabilities, marginal_effects, MarginalEffects};
use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Length of the effect windows both scenarios place on the lag axis.
pub const WINDOW_LEN: usize = 8;

/// Lag-1 autocorrelation of the synthetic exposure series.
pub const AR_COEFFICIENT: f64 = 0.9;

/// Number of generated covariates (besides the intercept): five standard
/// normal followed by five Bernoulli(0.5).
pub const N_COVARIATES: usize = 10;

/// Same-lag cross-correlation targets for the synthetic exposures. The
/// five-exposure matrix spans pairwise correlations from -0.55 to 0.69; other
/// sizes use a one-factor structure with alternating loadings +-0.7.
pub fn default_cross_correlation(m: usize) -> Array2<f64> {
    if m == 5 {
        let rows = [
            [1.00, 0.69, 0.50, 0.35, -0.55],
            [0.69, 1.00, 0.60, 0.30, -0.40],
            [0.50, 0.60, 1.00, 0.45, -0.30],
            [0.35, 0.30, 0.45, 1.00, -0.20],
            [-0.55, -0.40, -0.30, -0.20, 1.00],
        ];
        return Array2::from_shape_fn((5, 5), |(i, j)| rows[i][j]);
    }
    Array2::from_shape_fn((m, m), |(i, j)| {
        if i == j {
            1.0
        } else {
            let li = if i % 2 == 0 { 0.7 } else { -0.7 };
            let lj = if j % 2 == 0 { 0.7 } else { -0.7 };
            li * lj
        }
    })
}

/// Standardize every (exposure, lag) column to zero mean and unit variance.
pub fn standardize_exposures(x: &mut Array3<f64>) -> Result<()> {
    let (n, m, t) = x.dim();
    if n < 2 {
        return Err(Error::Numeric(
            "standardization needs at least two observations".into(),
        ));
    }
    for e in 0..m {
        for lag in 0..t {
            let col: Vec<f64> = (0..n).map(|i| x[[i, e, lag]]).collect();
            let mu = mean(&col);
            let s = sd(&col);
            if !s.is_normal() || s <= 0.0 {
                return Err(Error::Numeric(format!(
                    "exposure {e} lag {} is constant; cannot standardize",
                    lag + 1
                )));
            }
            for i in 0..n {
                x[[i, e, lag]] = (x[[i, e, lag]] - mu) / s;
            }
        }
    }
    Ok(())
}

/// Cross-correlated AR(1) exposure histories with the given same-lag
/// correlation matrix and lag-1 autocorrelation, started from the stationary
/// law and column-standardized afterwards.
pub fn gen_exposures_with<R: Rng + ?Sized>(
    n: usize,
    t: usize,
    corr: &Array2<f64>,
    phi: f64,
    rng: &mut R,
) -> Result<Array3<f64>> {
    let m = corr.nrows();
    if corr.ncols() != m || m == 0 {
        return Err(Error::Argument("correlation matrix must be square".into()));
    }
    if t == 0 || n < 2 {
        return Err(Error::Argument(
            "exposure generation needs n >= 2 and T >= 1".into(),
        ));
    }
    if !(phi.abs() < 1.0) {
        return Err(Error::Argument(format!(
            "autocorrelation {phi} is not in (-1, 1)"
        )));
    }
    for j in 0..m {
        if (corr[[j, j]] - 1.0).abs() > 1e-12 {
            return Err(Error::Argument("correlation matrix diagonal must be 1".into()));
        }
    }
    let chol = Cholesky::new(DMatrix::from_fn(m, m, |i, j| corr[[i, j]])).ok_or_else(|| {
        Error::Numeric("exposure correlation matrix is not positive definite".into())
    })?;
    let l = chol.l();
    let innov = (1.0 - phi * phi).sqrt();
    let mut x = Array3::zeros((n, m, t));
    let mut z = DVector::<f64>::zeros(m);
    for i in 0..n {
        for v in z.iter_mut() {
            *v = rng.sample::<f64, _>(StandardNormal);
        }
        let mut cur = &l * &z;
        for e in 0..m {
            x[[i, e, 0]] = cur[e];
        }
        for lag in 1..t {
            for v in z.iter_mut() {
                *v = rng.sample::<f64, _>(StandardNormal);
            }
            let shock = &l * &z;
            for e in 0..m {
                cur[e] = phi * cur[e] + innov * shock[e];
                x[[i, e, lag]] = cur[e];
            }
        }
    }
    standardize_exposures(&mut x)?;
    Ok(x)
}

/// Synthetic exposures with the default cross-correlation structure.
pub fn gen_exposures<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    t: usize,
    rng: &mut R,
) -> Result<Array3<f64>> {
    gen_exposures_with(n, t, &default_cross_correlation(m), AR_COEFFICIENT, rng)
}

/// Draw `n` observation rows with replacement from an existing exposure
/// panel, then standardize the result.
pub fn resample_exposures<R: Rng + ?Sized>(
    source: &Array3<f64>,
    n: usize,
    rng: &mut R,
) -> Result<Array3<f64>> {
    let (n_src, m, t) = source.dim();
    if n_src == 0 {
        return Err(Error::Argument("cannot resample from an empty panel".into()));
    }
    let mut x = Array3::zeros((n, m, t));
    for i in 0..n {
        let pick = rng.random_range(0..n_src);
        for e in 0..m {
            for lag in 0..t {
                x[[i, e, lag]] = source[[pick, e, lag]];
            }
        }
    }
    standardize_exposures(&mut x)?;
    Ok(x)
}

/// Intercept plus five standard-normal and five Bernoulli(0.5) covariates.
fn gen_covariates<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array2<f64> {
    let mut z = Array2::zeros((n, N_COVARIATES + 1));
    for i in 0..n {
        z[[i, 0]] = 1.0;
    }
    for j in 1..=5 {
        for i in 0..n {
            z[[i, j]] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    for j in 6..=10 {
        for i in 0..n {
            z[[i, j]] = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
        }
    }
    z
}

/// True interaction cells of a simulated dataset: the surface weights
/// x[exposure1, t1] * x[exposure2, t2].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrueInteraction {
    pub exposure1: usize,
    pub exposure2: usize,
    pub cells: Array2<f64>,
}

/// Exact ground truth recorded alongside a simulated panel.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioTruth {
    pub scenario: u8,
    /// True marginal lag effects at all-mean (zero) co-exposure levels.
    pub theta: Array2<f64>,
    /// True effect-window lags (1-based) per exposure; empty where the
    /// marginal effect is identically zero.
    pub windows: Vec<Vec<usize>>,
    /// Exposures that enter the outcome model at all (main or interaction).
    pub active_exposures: Vec<usize>,
    pub interaction: Option<TrueInteraction>,
    /// Window start lag for the main-effect exposure (1-based).
    pub start1: usize,
    /// Window start lag for the interacting exposure, when there is one.
    pub start2: Option<usize>,
    pub intercept: f64,
    /// Effect scale: the window coefficient on the model scale.
    pub scale: f64,
    /// Raw covariate coefficients (excluding the intercept column).
    pub gamma_raw: Vec<f64>,
    pub target_mean: Option<f64>,
    pub noise_variance: Option<f64>,
    /// The exact linear predictor the outcomes were drawn from.
    pub linear_predictor: Vec<f64>,
}

fn window_lags(start: usize) -> Vec<usize> {
    (start..start + WINDOW_LEN).collect()
}

fn window_sum(x: &Array3<f64>, i: usize, e: usize, w: &[usize]) -> f64 {
    w.iter().map(|&lag| x[[i, e, lag - 1]]).sum()
}

fn covariate_term(covariates: &Array2<f64>, i: usize, gamma: &[f64]) -> f64 {
    gamma
        .iter()
        .enumerate()
        .map(|(j, g)| covariates[[i, j + 1]] * g)
        .sum()
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl ScenarioTruth {
    /// Recompute the linear predictor from the stored scenario parameters and
    /// the panel; generators guarantee this reproduces `linear_predictor`.
    pub fn rederived_linear_predictor(&self, panel: &LagPanel) -> Result<Vec<f64>> {
        let (n, m, t) = panel.exposures.dim();
        if self.theta.dim() != (m, t) {
            return Err(Error::Argument(format!(
                "truth is {:?} but panel is ({m}, {t})",
                self.theta.dim()
            )));
        }
        if self.gamma_raw.len() + 1 != panel.covariates.ncols() {
            return Err(Error::Argument(format!(
                "{} covariate coefficients for {} covariate columns",
                self.gamma_raw.len(),
                panel.covariates.ncols()
            )));
        }
        let w1 = window_lags(self.start1);
        let mut lp = Vec::with_capacity(n);
        match self.scenario {
            1 => {
                for i in 0..n {
                    let f1 = window_sum(&panel.exposures, i, 0, &w1);
                    let zg = covariate_term(&panel.covariates, i, &self.gamma_raw);
                    lp.push(self.intercept + self.scale * (f1 + zg));
                }
            }
            2 => {
                let s2 = self.start2.ok_or_else(|| {
                    Error::State("scenario 2 truth is missing the second window".into())
                })?;
                let w2 = window_lags(s2);
                for i in 0..n {
                    let a = window_sum(&panel.exposures, i, 0, &w1);
                    let b = window_sum(&panel.exposures, i, 1, &w2);
                    let f2 = a + 0.025 * a * b;
                    let zg = covariate_term(&panel.covariates, i, &self.gamma_raw);
                    lp.push(self.scale * f2 + zg);
                }
            }
            s => return Err(Error::State(format!("unknown scenario {s}"))),
        }
        Ok(lp)
    }

    /// Largest absolute difference between the stored and the recomputed
    /// linear predictor.
    pub fn max_consistency_error(&self, panel: &LagPanel) -> Result<f64> {
        let lp = self.rederived_linear_predictor(panel)?;
        Ok(lp
            .iter()
            .zip(&self.linear_predictor)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Intercept such that the sample mean of sigmoid(c + base) hits the target.
fn bisect_intercept(base: &[f64], target: f64) -> Result<f64> {
    let mean_p = |c: f64| base.iter().map(|&b| sigmoid(c + b)).sum::<f64>() / base.len() as f64;
    let (mut lo, mut hi) = (-60.0f64, 60.0f64);
    if mean_p(lo) > target || mean_p(hi) < target {
        return Err(Error::Numeric(format!(
            "target outcome mean {target} is not reachable by any intercept"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    let c = 0.5 * (lo + hi);
    if (mean_p(c) - target).abs() > 1e-4 {
        return Err(Error::Numeric(
            "intercept search did not reach the target outcome mean".into(),
        ));
    }
    Ok(c)
}

/// Binary-outcome scenario: one 8-lag effect window on the first exposure.
/// The log odds are `c1 + 0.1 * (window sum + covariate term)`, with the
/// intercept solved so the average event probability hits `target_mean`.
pub fn gen_scenario1<R: Rng + ?Sized>(
    n: usize,
    t: usize,
    target_mean: f64,
    exposures: Array3<f64>,
    rng: &mut R,
) -> Result<(LagPanel, ScenarioTruth)> {
    let (xn, m, xt) = exposures.dim();
    if xn != n || xt != t {
        return Err(Error::Argument(format!(
            "exposures are ({xn}, {m}, {xt}) but n={n}, T={t} was requested"
        )));
    }
    if t < WINDOW_LEN {
        return Err(Error::Argument(format!(
            "scenario needs at least {WINDOW_LEN} lags, got {t}"
        )));
    }
    if !(target_mean > 0.0 && target_mean < 1.0) {
        return Err(Error::Argument(format!(
            "target outcome mean {target_mean} is not in (0, 1)"
        )));
    }
    let s = rng.random_range(1..=t - WINDOW_LEN + 1);
    let w1 = window_lags(s);
    let covariates = gen_covariates(n, rng);
    let gamma: Vec<f64> = (0..N_COVARIATES)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let base: Vec<f64> = (0..n)
        .map(|i| 0.1 * (window_sum(&exposures, i, 0, &w1) + covariate_term(&covariates, i, &gamma)))
        .collect();
    let c1 = bisect_intercept(&base, target_mean)?;
    let lp: Vec<f64> = base.iter().map(|b| c1 + b).collect();
    let outcome = Array1::from_iter(
        lp.iter()
            .map(|&v| if rng.random::<f64>() < sigmoid(v) { 1.0 } else { 0.0 }),
    );
    let mut theta = Array2::zeros((m, t));
    for &lag in &w1 {
        theta[[0, lag - 1]] = 0.1;
    }
    let mut windows = vec![Vec::new(); m];
    windows[0] = w1;
    let truth = ScenarioTruth {
        scenario: 1,
        theta,
        windows,
        active_exposures: vec![0],
        interaction: None,
        start1: s,
        start2: None,
        intercept: c1,
        scale: 0.1,
        gamma_raw: gamma,
        target_mean: Some(target_mean),
        noise_variance: None,
        linear_predictor: lp,
    };
    let panel = LagPanel::new(
        exposures,
        covariates,
        outcome,
        Family::Bernoulli,
        Vec::new(),
        Vec::new(),
    )?;
    Ok((panel, truth))
}

/// Continuous-outcome scenario: an 8-lag main window on the first exposure
/// plus a lagged interaction between the first two exposures, scaled so the
/// signal has unit variance, with Gaussian noise of the given variance.
pub fn gen_scenario2<R: Rng + ?Sized>(
    n: usize,
    t: usize,
    noise_variance: f64,
    exposures: Array3<f64>,
    rng: &mut R,
) -> Result<(LagPanel, ScenarioTruth)> {
    let (xn, m, xt) = exposures.dim();
    if xn != n || xt != t {
        return Err(Error::Argument(format!(
            "exposures are ({xn}, {m}, {xt}) but n={n}, T={t} was requested"
        )));
    }
    if m < 2 {
        return Err(Error::Argument(
            "the interaction scenario needs at least two exposures".into(),
        ));
    }
    if t < WINDOW_LEN {
        return Err(Error::Argument(format!(
            "scenario needs at least {WINDOW_LEN} lags, got {t}"
        )));
    }
    if !(noise_variance.is_finite() && noise_variance > 0.0) {
        return Err(Error::Argument(format!(
            "noise variance {noise_variance} must be positive"
        )));
    }
    // The recorded truth sets the marginal effect of the interacting exposure
    // to exactly zero at mean levels; that argument needs mean-zero columns.
    for e in 0..m {
        for lag in 0..t {
            let mu = (0..n).map(|i| exposures[[i, e, lag]]).sum::<f64>() / n as f64;
            if mu.abs() > 1e-8 {
                return Err(Error::Argument(
                    "exposures must be column-standardized (zero means)".into(),
                ));
            }
        }
    }
    let s1 = rng.random_range(1..=t - WINDOW_LEN + 1);
    let s2 = rng.random_range(1..=t - WINDOW_LEN + 1);
    let w1 = window_lags(s1);
    let w2 = window_lags(s2);
    let f2: Vec<f64> = (0..n)
        .map(|i| {
            let a = window_sum(&exposures, i, 0, &w1);
            let b = window_sum(&exposures, i, 1, &w2);
            a + 0.025 * a * b
        })
        .collect();
    let spread = sd(&f2);
    if !spread.is_normal() || spread <= 0.0 {
        return Err(Error::Numeric("simulated signal has no variance".into()));
    }
    let c2 = 1.0 / spread;
    let covariates = gen_covariates(n, rng);
    let gamma: Vec<f64> = (0..N_COVARIATES)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let lp: Vec<f64> = (0..n)
        .map(|i| c2 * f2[i] + covariate_term(&covariates, i, &gamma))
        .collect();
    let noise_sd = noise_variance.sqrt();
    let outcome = Array1::from_iter(
        lp.iter()
            .map(|&v| v + noise_sd * rng.sample::<f64, _>(StandardNormal)),
    );
    let mut theta = Array2::zeros((m, t));
    for &lag in &w1 {
        theta[[0, lag - 1]] = c2;
    }
    let mut cells = Array2::zeros((t, t));
    for &t1 in &w1 {
        for &t2 in &w2 {
            cells[[t1 - 1, t2 - 1]] = 0.025 * c2;
        }
    }
    let mut windows = vec![Vec::new(); m];
    windows[0] = w1;
    let truth = ScenarioTruth {
        scenario: 2,
        theta,
        windows,
        active_exposures: vec![0, 1],
        interaction: Some(TrueInteraction {
            exposure1: 0,
            exposure2: 1,
            cells,
        }),
        start1: s1,
        start2: Some(s2),
        intercept: 0.0,
        scale: c2,
        gamma_raw: gamma,
        target_mean: None,
        noise_variance: Some(noise_variance),
        linear_predictor: lp,
    };
    let panel = LagPanel::new(
        exposures,
        covariates,
        outcome,
        Family::Gaussian,
        Vec::new(),
        Vec::new(),
    )?;
    Ok((panel, truth))
}

/// Scenario-recovery metrics for one fitted model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitScore {
    /// Root mean squared error of the marginal effects on active exposures.
    pub rmse: f64,
    /// Fraction of active-exposure lags whose interval covers the truth.
    pub coverage: f64,
    /// Fraction of true-window lags flagged.
    pub tp: f64,
    /// Fraction of zero-effect lags flagged, pooled over all exposures.
    pub fp: f64,
    /// tp / (tp + fp); 1 when nothing is flagged anywhere.
    pub precision: f64,
}

pub fn evaluate_fit(truth: &ScenarioTruth, marginal: &MarginalEffects) -> Result<FitScore> {
    let (m, t) = truth.theta.dim();
    if marginal.mean.dim() != (m, t) {
        return Err(Error::Argument(format!(
            "marginal summary is {:?} but truth is ({m}, {t})",
            marginal.mean.dim()
        )));
    }
    let active: Vec<usize> = (0..m).filter(|&e| !truth.windows[e].is_empty()).collect();
    if active.is_empty() {
        return Err(Error::Argument("truth marks no exposure as active".into()));
    }
    let mut sq = 0.0;
    let mut covered = 0usize;
    for &e in &active {
        for lag in 0..t {
            let d = marginal.mean[[e, lag]] - truth.theta[[e, lag]];
            sq += d * d;
            let th = truth.theta[[e, lag]];
            if marginal.lower[[e, lag]] <= th && th <= marginal.upper[[e, lag]] {
                covered += 1;
            }
        }
    }
    let rmse = (sq / (active.len() * t) as f64).sqrt();
    let coverage = covered as f64 / (active.len() * t) as f64;
    let mut window_total = 0usize;
    let mut window_hit = 0usize;
    for &e in &active {
        for &lag in &truth.windows[e] {
            window_total += 1;
            if marginal.flagged[[e, lag - 1]] {
                window_hit += 1;
            }
        }
    }
    let mut zero_total = 0usize;
    let mut zero_hit = 0usize;
    for e in 0..m {
        for lag in 0..t {
            if truth.theta[[e, lag]] == 0.0 {
                zero_total += 1;
                if marginal.flagged[[e, lag]] {
                    zero_hit += 1;
                }
            }
        }
    }
    let tp = if window_total > 0 {
        window_hit as f64 / window_total as f64
    } else {
        0.0
    };
    let fp = if zero_total > 0 {
        zero_hit as f64 / zero_total as f64
    } else {
        0.0
    };
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 1.0 };
    Ok(FitScore {
        rmse,
        coverage,
        tp,
        fp,
        precision,
    })
}

/// Replicated benchmark setup: a scenario, its size parameters, and the
/// sampler template applied to each mode under test.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub scenario: u8,
    pub n: usize,
    pub n_lags: usize,
    pub n_exposures: usize,
    /// Scenario-1 target outcome mean.
    pub target_mean: f64,
    /// Scenario-2 noise variance.
    pub noise_variance: f64,
    pub replicates: usize,
    pub seed: u64,
    pub credible: f64,
    pub sampler: SamplerConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            scenario: 1,
            n: 2000,
            n_lags: 20,
            n_exposures: 1,
            target_mean: 0.5,
            noise_variance: 25.0,
            replicates: 25,
            seed: 1,
            credible: 0.95,
            sampler: SamplerConfig::default(),
        }
    }
}

/// Aggregated results for one sampler mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub mode: SamplerMode,
    pub completed: usize,
    pub failed: usize,
    /// Mean scores over completed replicates.
    pub score: FitScore,
    /// Mean fraction of flagged lags on exposures outside the outcome model.
    pub fp_inactive: f64,
    /// Mean posterior inclusion probability per exposure (mixtures only).
    pub main_pip: Vec<f64>,
    /// Mean posterior inclusion probability per exposure pair (mixtures only).
    pub pair_pip: Vec<f64>,
    /// Fraction of completed replicates in which the true interacting pair
    /// attains the maximum pair inclusion probability.
    pub true_pair_top_share: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    /// One message per failed replicate.
    pub failures: Vec<String>,
}

fn replicate_seed(base: u64, mode_idx: usize, rep: usize) -> u64 {
    splitmix64(base ^ splitmix64(((mode_idx as u64) << 32) | (rep as u64 + 1)))
}

fn run_replicate(
    cfg: &BenchmarkConfig,
    mode: SamplerMode,
    seed: u64,
) -> Result<(FitScore, f64, Option<(Vec<f64>, Vec<f64>, bool)>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exposures = gen_exposures(cfg.n, cfg.n_exposures, cfg.n_lags, &mut rng)?;
    let (panel, truth) = match cfg.scenario {
        1 => gen_scenario1(cfg.n, cfg.n_lags, cfg.target_mean, exposures, &mut rng)?,
        2 => gen_scenario2(cfg.n, cfg.n_lags, cfg.noise_variance, exposures, &mut rng)?,
        s => return Err(Error::Config(format!("unknown scenario {s}"))),
    };
    let mut sampler = cfg.sampler.clone();
    sampler.mode = mode;
    sampler.seed = splitmix64(seed);
    let draws = run_sampler(&panel, &sampler)?;
    let marginal = marginal_effects(&draws, None, cfg.credible)?;
    let score = evaluate_fit(&truth, &marginal)?;
    let (_, t) = truth.theta.dim();
    let inactive: Vec<usize> = (0..cfg.n_exposures)
        .filter(|e| !truth.active_exposures.contains(e))
        .collect();
    let fp_inactive = if inactive.is_empty() {
        0.0
    } else {
        let mut hits = 0usize;
        for &e in &inactive {
            for lag in 0..t {
                if marginal.flagged[[e, lag]] {
                    hits += 1;
                }
            }
        }
        hits as f64 / (inactive.len() * t) as f64
    };
    let pips = if mode.is_mixture() {
        let inc = inclusion_probabilities(&draws)?;
        let top = match &truth.interaction {
            Some(ti) => {
                let q = pair_index(ti.exposure1, ti.exposure2, cfg.n_exposures);
                let best = inc.interaction.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                inc.interaction[q] >= best
            }
            None => false,
        };
        Some((inc.main, inc.interaction, top))
    } else {
        None
    };
    Ok((score, fp_inactive, pips))
}

/// Run every mode for the configured number of replicates, each on its own
/// synthetic dataset, and aggregate the scores. Individual replicate failures
/// are recorded and skipped; the run fails if at least 20% of all replicates
/// fail.
pub fn run_benchmark(cfg: &BenchmarkConfig, modes: &[SamplerMode]) -> Result<BenchmarkReport> {
    if modes.is_empty() {
        return Err(Error::Config("no sampler modes requested".into()));
    }
    if cfg.replicates == 0 {
        return Err(Error::Config("benchmark needs at least one replicate".into()));
    }
    if modes.contains(&SamplerMode::Tdlm) && cfg.n_exposures != 1 {
        return Err(Error::Config(
            "single-exposure mode in the benchmark requires exactly one exposure".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (mi, &mode) in modes.iter().enumerate() {
        let mut scores: Vec<FitScore> = Vec::new();
        let mut fp_inactive_sum = 0.0;
        let mut main_pip_sum = vec![0.0; cfg.n_exposures];
        let mut pair_pip_sum = vec![0.0; n_pairs(cfg.n_exposures)];
        let mut top_count = 0usize;
        let mut pip_count = 0usize;
        for rep in 0..cfg.replicates {
            match run_replicate(cfg, mode, replicate_seed(cfg.seed, mi, rep)) {
                Ok((score, fp_inactive, pips)) => {
                    scores.push(score);
                    fp_inactive_sum += fp_inactive;
                    if let Some((main, pair, top)) = pips {
                        for (a, b) in main_pip_sum.iter_mut().zip(&main) {
                            *a += b;
                        }
                        for (a, b) in pair_pip_sum.iter_mut().zip(&pair) {
                            *a += b;
                        }
                        if top {
                            top_count += 1;
                        }
                        pip_count += 1;
                    }
                }
                Err(e) => failures.push(format!("{mode} replicate {rep}: {e}")),
            }
        }
        let k = scores.len().max(1) as f64;
        let agg = FitScore {
            rmse: scores.iter().map(|s| s.rmse).sum::<f64>() / k,
            coverage: scores.iter().map(|s| s.coverage).sum::<f64>() / k,
            tp: scores.iter().map(|s| s.tp).sum::<f64>() / k,
            fp: scores.iter().map(|s| s.fp).sum::<f64>() / k,
            precision: scores.iter().map(|s| s.precision).sum::<f64>() / k,
        };
        let (main_pip, pair_pip, top_share) = if pip_count > 0 {
            let pc = pip_count as f64;
            (
                main_pip_sum.iter().map(|v| v / pc).collect(),
                pair_pip_sum.iter().map(|v| v / pc).collect(),
                Some(top_count as f64 / pc),
            )
        } else {
            (Vec::new(), Vec::new(), None)
        };
        rows.push(BenchmarkRow {
            mode,
            completed: scores.len(),
            failed: cfg.replicates - scores.len(),
            score: agg,
            fp_inactive: fp_inactive_sum / k,
            main_pip,
            pair_pip,
            true_pair_top_share: top_share,
        });
    }
    let total = modes.len() * cfg.replicates;
    if failures.len() * 5 >= total {
        return Err(Error::Benchmark(format!(
            "{} of {total} replicates failed; first failure: {}",
            failures.len(),
            failures.first().map(String::as_str).unwrap_or("none")
        )));
    }
    Ok(BenchmarkReport { rows, failures })
}

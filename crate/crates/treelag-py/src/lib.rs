//! Python bindings for the `treelag` crate.
//!
//! The module exposes the main entry points — synthetic-panel simulation,
//! model fitting, and posterior summaries — through plain Python containers
//! (nested lists and dicts) so no third-party Python packages are required.

use ndarray::{Array1, Array2, Array3};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use treelag::sim::{gen_exposures, gen_scenario1, gen_scenario2, ScenarioTruth};
use treelag::{run_sampler, Family, LagPanel, PosteriorDraws, SamplerConfig, SamplerMode};

// ---------------------------------------------------------------------------
// Conversion layer (pure Rust, unit-testable without an interpreter)
// ---------------------------------------------------------------------------

/// Nested-list exposures (individuals x exposures x lags) into an `Array3`.
pub fn exposures_from_nested(x: &[Vec<Vec<f64>>]) -> Result<Array3<f64>, String> {
    let n = x.len();
    if n == 0 {
        return Err("exposures must hold at least one individual".into());
    }
    let m = x[0].len();
    if m == 0 {
        return Err("each individual needs at least one exposure series".into());
    }
    let t = x[0][0].len();
    let mut out = Array3::zeros((n, m, t));
    for (i, row) in x.iter().enumerate() {
        if row.len() != m {
            return Err(format!("individual {i} has {} exposure series, expected {m}", row.len()));
        }
        for (e, series) in row.iter().enumerate() {
            if series.len() != t {
                return Err(format!(
                    "individual {i}, exposure {e} has {} lags, expected {t}",
                    series.len()
                ));
            }
            for (lag, &v) in series.iter().enumerate() {
                out[[i, e, lag]] = v;
            }
        }
    }
    Ok(out)
}

/// Nested-list matrix (rows x columns) into an `Array2`.
pub fn matrix_from_nested(x: &[Vec<f64>]) -> Result<Array2<f64>, String> {
    let n = x.len();
    if n == 0 {
        return Err("matrix must have at least one row".into());
    }
    let p = x[0].len();
    let mut out = Array2::zeros((n, p));
    for (i, row) in x.iter().enumerate() {
        if row.len() != p {
            return Err(format!("row {i} has {} columns, expected {p}", row.len()));
        }
        for (j, &v) in row.iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok(out)
}

/// An `Array2` into a nested list of rows.
pub fn matrix_to_nested(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn bool_matrix_to_nested(a: &Array2<bool>) -> Vec<Vec<bool>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Assemble a sampler configuration from plain scalars, validating the mode.
#[allow(clippy::too_many_arguments)]
pub fn build_config(
    mode: &str,
    trees: usize,
    iterations: usize,
    burn_in: usize,
    thin: usize,
    chains: usize,
    seed: u64,
    kappa: f64,
) -> Result<SamplerConfig, String> {
    let mode: SamplerMode = mode.parse().map_err(|e: treelag::Error| e.to_string())?;
    Ok(SamplerConfig {
        mode,
        n_tree_pairs: trees,
        iterations,
        burn_in,
        thin,
        n_chains: chains,
        seed,
        kappa,
        ..SamplerConfig::default()
    })
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

// ---------------------------------------------------------------------------
// Simulated panels
// ---------------------------------------------------------------------------

/// A synthetic panel together with the exact ground truth it was drawn from.
#[pyclass]
pub struct Simulated {
    #[pyo3(get)]
    pub scenario: u8,
    /// Exposure histories, individuals x exposures x lags.
    #[pyo3(get)]
    pub exposures: Vec<Vec<Vec<f64>>>,
    /// Covariates including the leading intercept column.
    #[pyo3(get)]
    pub covariates: Vec<Vec<f64>>,
    #[pyo3(get)]
    pub outcome: Vec<f64>,
    #[pyo3(get)]
    pub family: String,
    #[pyo3(get)]
    pub exposure_names: Vec<String>,
    #[pyo3(get)]
    pub covariate_names: Vec<String>,
    /// True marginal lag effects at zero co-exposure levels (exposures x lags).
    #[pyo3(get)]
    pub theta: Vec<Vec<f64>>,
    /// True effect-window lags (1-based) per exposure.
    #[pyo3(get)]
    pub windows: Vec<Vec<usize>>,
    #[pyo3(get)]
    pub active_exposures: Vec<usize>,
    truth_interaction: Option<(usize, usize, Vec<Vec<f64>>)>,
}

#[pymethods]
impl Simulated {
    /// The true interacting exposure pair and its lag-by-lag cell effects,
    /// or None when the scenario has no interaction.
    fn interaction<'py>(&self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyDict>>> {
        match &self.truth_interaction {
            None => Ok(None),
            Some((e1, e2, cells)) => {
                let d = PyDict::new(py);
                d.set_item("exposure1", e1)?;
                d.set_item("exposure2", e2)?;
                d.set_item("cells", cells.clone())?;
                Ok(Some(d))
            }
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "Simulated(scenario={}, n={}, exposures={}, lags={}, family='{}')",
            self.scenario,
            self.outcome.len(),
            self.theta.len(),
            self.theta.first().map_or(0, Vec::len),
            self.family
        )
    }
}

fn simulated_from(panel: LagPanel, truth: ScenarioTruth) -> Simulated {
    let (n, m, t) = panel.exposures.dim();
    let mut exposures = vec![vec![vec![0.0; t]; m]; n];
    for ((i, e, lag), &v) in panel.exposures.indexed_iter() {
        exposures[i][e][lag] = v;
    }
    Simulated {
        scenario: truth.scenario,
        exposures,
        covariates: matrix_to_nested(&panel.covariates),
        outcome: panel.outcome.to_vec(),
        family: panel.family.to_string(),
        exposure_names: panel.exposure_names,
        covariate_names: panel.covariate_names,
        theta: matrix_to_nested(&truth.theta),
        windows: truth.windows,
        active_exposures: truth.active_exposures,
        truth_interaction: truth
            .interaction
            .map(|i| (i.exposure1, i.exposure2, matrix_to_nested(&i.cells))),
    }
}

/// Draw a synthetic exposure panel and outcome for one benchmark scenario.
///
/// Scenario 1 is a binary outcome whose log odds carry a single 8-lag effect
/// window on the first exposure; scenario 2 is a Gaussian outcome with a main
/// effect window on the first exposure and a lagged interaction between the
/// first two exposures.
#[pyfunction]
#[pyo3(signature = (scenario, n, lags, exposures=1, seed=1, target_mean=0.5, noise_variance=25.0))]
fn simulate(
    scenario: u8,
    n: usize,
    lags: usize,
    exposures: usize,
    seed: u64,
    target_mean: f64,
    noise_variance: f64,
) -> PyResult<Simulated> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let x = gen_exposures(n, exposures, lags, &mut rng).map_err(value_err)?;
    let (panel, truth) = match scenario {
        1 => gen_scenario1(n, lags, target_mean, x, &mut rng).map_err(value_err)?,
        2 => gen_scenario2(n, lags, noise_variance, x, &mut rng).map_err(value_err)?,
        other => return Err(value_err(format!("unknown scenario {other} (expected 1 or 2)"))),
    };
    Ok(simulated_from(panel, truth))
}

// ---------------------------------------------------------------------------
// Fitting and summaries
// ---------------------------------------------------------------------------

/// Posterior draws from a fitted lagged-effect tree ensemble.
#[pyclass]
pub struct Fit {
    draws: PosteriorDraws,
}

#[pymethods]
impl Fit {
    /// Number of retained posterior draws across all chains.
    fn n_draws(&self) -> usize {
        self.draws.n_draws()
    }

    #[getter]
    fn mode(&self) -> String {
        self.draws.mode.to_string()
    }

    #[getter]
    fn family(&self) -> String {
        self.draws.family.to_string()
    }

    #[getter]
    fn n_exposures(&self) -> usize {
        self.draws.n_exposures
    }

    #[getter]
    fn n_lags(&self) -> usize {
        self.draws.n_lags
    }

    /// Posterior mean/interval of each exposure's lag effects, marginalized
    /// at fixed co-exposure levels (the per-exposure means by default).
    /// Returns a dict with mean/lower/upper/flagged matrices and the
    /// contiguous flagged windows per exposure.
    #[pyo3(signature = (credible=0.95, levels=None))]
    fn marginal<'py>(
        &self,
        py: Python<'py>,
        credible: f64,
        levels: Option<Vec<f64>>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let m = treelag::summary::marginal_effects(&self.draws, levels.as_deref(), credible)
            .map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("exposure_names", m.exposure_names.clone())?;
        d.set_item("levels", m.levels.clone())?;
        d.set_item("credible", m.credible)?;
        d.set_item("mean", matrix_to_nested(&m.mean))?;
        d.set_item("lower", matrix_to_nested(&m.lower))?;
        d.set_item("upper", matrix_to_nested(&m.upper))?;
        d.set_item("flagged", bool_matrix_to_nested(&m.flagged))?;
        d.set_item("windows", m.critical_windows())?;
        Ok(d)
    }

    /// Posterior mean/interval of the cumulative interquartile contrast per
    /// exposure: the predictor change when one exposure moves from its 25th
    /// to its 75th percentile at every lag, others held at their means.
    #[pyo3(signature = (credible=0.95))]
    fn cumulative<'py>(&self, py: Python<'py>, credible: f64) -> PyResult<Bound<'py, PyDict>> {
        let c = treelag::summary::cumulative_iqr_contrast(&self.draws, credible).map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("exposure_names", c.exposure_names.clone())?;
        d.set_item("credible", c.credible)?;
        d.set_item("q25", c.q25.clone())?;
        d.set_item("q75", c.q75.clone())?;
        d.set_item("mean", c.mean.clone())?;
        d.set_item("lower", c.lower.clone())?;
        d.set_item("upper", c.upper.clone())?;
        Ok(d)
    }

    /// Posterior inclusion probabilities per exposure (`main`) and per
    /// unordered exposure pair (`interaction`, along with the pair labels).
    /// Only defined for mixture-model fits.
    fn inclusion<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let inc = treelag::summary::inclusion_probabilities(&self.draws).map_err(value_err)?;
        let m = inc.n_exposures;
        let mut pair_labels = Vec::new();
        for a in 0..m {
            for b in a..m {
                pair_labels.push((inc.exposure_names[a].clone(), inc.exposure_names[b].clone()));
            }
        }
        let d = PyDict::new(py);
        d.set_item("exposure_names", inc.exposure_names.clone())?;
        d.set_item("main", inc.main.clone())?;
        d.set_item("interaction", inc.interaction.clone())?;
        d.set_item("pairs", pair_labels)?;
        Ok(d)
    }

    /// Per-parameter effective sample size and split-chain shrink factor for
    /// the scalar traces of the fit.
    fn diagnostics<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let rows = treelag::diagnostics::chain_diagnostics(&self.draws);
        let mut out = Vec::with_capacity(rows.len());
        for r in rows {
            let d = PyDict::new(py);
            d.set_item("name", r.name)?;
            d.set_item("mean", r.mean)?;
            d.set_item("ess", r.ess)?;
            d.set_item("rhat", r.rhat)?;
            out.push(d);
        }
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!(
            "Fit(mode='{}', family='{}', draws={}, exposures={}, lags={})",
            self.draws.mode,
            self.draws.family,
            self.draws.n_draws(),
            self.draws.n_exposures,
            self.draws.n_lags
        )
    }
}

/// Fit a lagged-effect tree ensemble to panel data.
///
/// `exposures` is a nested list (individuals x exposures x lags); `outcome`
/// is one value per individual. `covariates` may be omitted, in which case an
/// intercept-only design is used; when given it must include any intercept
/// column explicitly.
#[pyfunction]
#[pyo3(signature = (exposures, outcome, covariates=None, family="gaussian", mode="tdlm",
                    trees=20, iterations=10_000, burn_in=5_000, thin=5, chains=2, seed=1,
                    kappa=1.089, exposure_names=None, covariate_names=None))]
#[allow(clippy::too_many_arguments)]
fn fit(
    exposures: Vec<Vec<Vec<f64>>>,
    outcome: Vec<f64>,
    covariates: Option<Vec<Vec<f64>>>,
    family: &str,
    mode: &str,
    trees: usize,
    iterations: usize,
    burn_in: usize,
    thin: usize,
    chains: usize,
    seed: u64,
    kappa: f64,
    exposure_names: Option<Vec<String>>,
    covariate_names: Option<Vec<String>>,
) -> PyResult<Fit> {
    let x = exposures_from_nested(&exposures).map_err(value_err)?;
    let n = x.dim().0;
    let z = match covariates {
        Some(c) => matrix_from_nested(&c).map_err(value_err)?,
        None => Array2::from_elem((n, 1), 1.0),
    };
    let family: Family = family.parse().map_err(value_err)?;
    let panel = LagPanel::new(
        x,
        z,
        Array1::from_vec(outcome),
        family,
        exposure_names.unwrap_or_default(),
        covariate_names.unwrap_or_default(),
    )
    .map_err(value_err)?;
    let cfg = build_config(mode, trees, iterations, burn_in, thin, chains, seed, kappa)
        .map_err(value_err)?;
    let draws = run_sampler(&panel, &cfg).map_err(value_err)?;
    Ok(Fit { draws })
}

/// Number of distinct lagged main-effect and interaction parameters the
/// model describes for the given panel size.
#[pyfunction]
fn param_count(exposures: u64, lags: u64) -> u64 {
    treelag::param_count(exposures, lags)
}

/// Monte Carlo estimate of the prior probability that a given exposure
/// occupies at least one of `2 * trees` tree slots under the symmetric
/// Dirichlet selection prior.
#[pyfunction]
#[pyo3(signature = (exposures, trees, kappa, draws=50_000, seed=1))]
fn prior_inclusion_probability(
    exposures: usize,
    trees: usize,
    kappa: f64,
    draws: usize,
    seed: u64,
) -> PyResult<f64> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    treelag::priors::prior_inclusion_probability(exposures, trees, kappa, draws, &mut rng)
        .map_err(value_err)
}

#[pymodule]
fn treelag_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(param_count, m)?)?;
    m.add_function(wrap_pyfunction!(prior_inclusion_probability, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_class::<Simulated>()?;
    m.add_class::<Fit>()?;
    Ok(())
}

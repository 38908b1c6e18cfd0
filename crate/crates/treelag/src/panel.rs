//! Observed data: an exposure history per individual and exposure, plus
//! covariates (first column is the intercept) and an outcome.

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Bernoulli,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Family::Gaussian => write!(f, "gaussian"),
            Family::Bernoulli => write!(f, "bernoulli"),
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Family::Gaussian),
            "bernoulli" => Ok(Family::Bernoulli),
            other => Err(Error::Config(format!("unknown family '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LagPanel {
    /// Exposure values, shape (individuals, exposures, lags).
    pub exposures: Array3<f64>,
    /// Covariate matrix including a leading intercept column, shape (individuals, p).
    pub covariates: Array2<f64>,
    pub outcome: Array1<f64>,
    pub family: Family,
    pub exposure_names: Vec<String>,
    /// Names for all covariate columns; first is "(intercept)".
    pub covariate_names: Vec<String>,
}

/// Pooled per-exposure location summaries used by effect summaries.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExposureStats {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
}

impl ExposureStats {
    pub fn iqr(&self, m: usize) -> f64 {
        self.q75[m] - self.q25[m]
    }
}

impl LagPanel {
    pub fn new(
        exposures: Array3<f64>,
        covariates: Array2<f64>,
        outcome: Array1<f64>,
        family: Family,
        exposure_names: Vec<String>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let (n, m, t) = exposures.dim();
        if n == 0 || m == 0 || t == 0 {
            return Err(Error::Argument("panel dimensions must all be positive".into()));
        }
        if covariates.nrows() != n || outcome.len() != n {
            return Err(Error::Argument(format!(
                "row mismatch: {n} exposure rows, {} covariate rows, {} outcomes",
                covariates.nrows(),
                outcome.len()
            )));
        }
        if covariates.ncols() == 0 {
            return Err(Error::Argument("covariates need at least the intercept column".into()));
        }
        // Empty name lists get defaults; partial lists are an error.
        let exposure_names = if exposure_names.is_empty() {
            (1..=m).map(|j| format!("exposure_{j}")).collect()
        } else {
            exposure_names
        };
        // Default covariate names carry no underscore so that column-name
        // inference in CSV files never mistakes them for exposure-lag columns.
        let covariate_names = if covariate_names.is_empty() {
            std::iter::once("(intercept)".to_string())
                .chain((1..covariates.ncols()).map(|j| format!("z{j}")))
                .collect()
        } else {
            covariate_names
        };
        if exposure_names.len() != m {
            return Err(Error::Argument(format!(
                "{m} exposures but {} exposure names",
                exposure_names.len()
            )));
        }
        if covariate_names.len() != covariates.ncols() {
            return Err(Error::Argument(format!(
                "{} covariate columns but {} names",
                covariates.ncols(),
                covariate_names.len()
            )));
        }
        for v in exposures.iter().chain(covariates.iter()).chain(outcome.iter()) {
            if !v.is_finite() {
                return Err(Error::Argument("non-finite value in panel".into()));
            }
        }
        if family == Family::Bernoulli {
            for y in outcome.iter() {
                if *y != 0.0 && *y != 1.0 {
                    return Err(Error::Argument(format!(
                        "bernoulli outcome must be 0 or 1, found {y}"
                    )));
                }
            }
        }
        Ok(LagPanel { exposures, covariates, outcome, family, exposure_names, covariate_names })
    }

    pub fn n_individuals(&self) -> usize {
        self.exposures.dim().0
    }

    pub fn n_exposures(&self) -> usize {
        self.exposures.dim().1
    }

    pub fn n_lags(&self) -> usize {
        self.exposures.dim().2
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    /// Pooled mean and quartiles of each exposure over all individuals and lags.
    pub fn exposure_stats(&self) -> ExposureStats {
        let (_, m, _) = self.exposures.dim();
        let mut means = Vec::with_capacity(m);
        let mut q25 = Vec::with_capacity(m);
        let mut q75 = Vec::with_capacity(m);
        for j in 0..m {
            let vals: Vec<f64> = self
                .exposures
                .index_axis(ndarray::Axis(1), j)
                .iter()
                .copied()
                .collect();
            means.push(stats::mean(&vals));
            let mut sorted = vals;
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            q25.push(stats::quantile_sorted(&sorted, 0.25));
            q75.push(stats::quantile_sorted(&sorted, 0.75));
        }
        ExposureStats { names: self.exposure_names.clone(), means, q25, q75 }
    }

    /// Panel restricted to a single exposure (used when a single-exposure model
    /// is fit to multi-exposure data in benchmarks).
    pub fn select_exposure(&self, m: usize) -> Result<LagPanel> {
        if m >= self.n_exposures() {
            return Err(Error::Argument(format!("no exposure {m}")));
        }
        let (n, _, t) = self.exposures.dim();
        let mut ex = Array3::zeros((n, 1, t));
        ex.index_axis_mut(ndarray::Axis(1), 0)
            .assign(&self.exposures.index_axis(ndarray::Axis(1), m));
        LagPanel::new(
            ex,
            self.covariates.clone(),
            self.outcome.clone(),
            self.family,
            vec![self.exposure_names[m].clone()],
            self.covariate_names.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tiny_panel() -> LagPanel {
        let exposures = Array3::from_shape_fn((4, 2, 3), |(i, m, t)| (i + 2 * m + t) as f64);
        let covariates = Array2::from_shape_fn((4, 2), |(i, j)| if j == 0 { 1.0 } else { i as f64 });
        let outcome = Array1::from(vec![0.0, 1.0, 1.0, 0.0]);
        LagPanel::new(
            exposures,
            covariates,
            outcome,
            Family::Bernoulli,
            vec!["a".into(), "b".into()],
            vec!["(intercept)".into(), "z1".into()],
        )
        .unwrap()
    }

    #[test]
    fn dimension_checks_reject_mismatches() {
        let p = tiny_panel();
        assert!(LagPanel::new(
            p.exposures.clone(),
            p.covariates.clone(),
            Array1::zeros(5),
            Family::Gaussian,
            p.exposure_names.clone(),
            p.covariate_names.clone(),
        )
        .is_err());
        assert!(LagPanel::new(
            p.exposures.clone(),
            p.covariates.clone(),
            Array1::from(vec![0.0, 0.5, 1.0, 0.0]),
            Family::Bernoulli,
            p.exposure_names.clone(),
            p.covariate_names.clone(),
        )
        .is_err());
        let mut bad = p.exposures.clone();
        bad[[0, 0, 0]] = f64::NAN;
        assert!(LagPanel::new(
            bad,
            p.covariates.clone(),
            p.outcome.clone(),
            Family::Bernoulli,
            p.exposure_names.clone(),
            p.covariate_names.clone(),
        )
        .is_err());
    }

    #[test]
    fn pooled_stats_cover_all_lags() {
        let p = tiny_panel();
        let st = p.exposure_stats();
        // Exposure 0 values: i + t over i in 0..4, t in 0..3 -> mean = 1.5 + 1 = 2.5.
        assert_abs_diff_eq!(st.means[0], 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(st.means[1], 4.5, epsilon = 1e-12);
        assert!(st.iqr(0) > 0.0);
    }

    #[test]
    fn select_exposure_keeps_rows() {
        let p = tiny_panel();
        let q = p.select_exposure(1).unwrap();
        assert_eq!(q.n_exposures(), 1);
        assert_eq!(q.exposure_names, vec!["b".to_string()]);
        assert_eq!(q.exposures[[2, 0, 1]], p.exposures[[2, 1, 1]]);
        assert!(p.select_exposure(2).is_err());
    }
}

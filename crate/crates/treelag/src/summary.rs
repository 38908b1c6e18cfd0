//! Posterior summaries of retained draws: lag-resolved marginal effects at
//! chosen co-exposure levels, critical-window flags, exposure and interaction
//! inclusion probabilities, interaction surfaces, and cumulative contrasts
//! over the interquartile range.

use crate::ensemble::{n_pairs, pair_index, LagEffects};
use crate::error::{Error, Result};
use crate::sampler::PosteriorDraws;
use crate::stats::equal_tailed_interval;
use ndarray::Array2;

/// Lag effects of one draw marginalized at fixed co-exposure levels: the
/// derivative of the quadratic predictor with respect to exposure `m` at lag
/// `t`, holding every exposure constant at its level across all lags.
pub fn marginalized_lag_effects(effects: &LagEffects, levels: &[f64]) -> Result<Array2<f64>> {
    let m = effects.n_exposures;
    let t = effects.n_lags;
    if levels.len() != m {
        return Err(Error::Argument(format!(
            "{} levels for {m} exposures",
            levels.len()
        )));
    }
    let mut out = effects.main.clone();
    if !effects.has_interactions() {
        return Ok(out);
    }
    for e in 0..m {
        // Pairs (a, e) with a < e: the surface weights x[a, t1] * x[e, t2].
        for a in 0..e {
            let surf = &effects.interactions[pair_index(a, e, m)];
            for lag in 0..t {
                let mut s = 0.0;
                for tp in 0..t {
                    s += surf[[tp, lag]];
                }
                out[[e, lag]] += levels[a] * s;
            }
        }
        // Pairs (e, b) with b > e: the surface weights x[e, t1] * x[b, t2].
        for b in (e + 1)..m {
            let surf = &effects.interactions[pair_index(e, b, m)];
            for lag in 0..t {
                let mut s = 0.0;
                for tp in 0..t {
                    s += surf[[lag, tp]];
                }
                out[[e, lag]] += levels[b] * s;
            }
        }
        // Self pair: both orientations touch exposure e.
        let surf = &effects.interactions[pair_index(e, e, m)];
        for lag in 0..t {
            let mut s = 0.0;
            for tp in 0..t {
                s += surf[[lag, tp]] + surf[[tp, lag]];
            }
            out[[e, lag]] += levels[e] * s;
        }
    }
    Ok(out)
}

/// Posterior summary of the marginalized lag effects.
#[derive(Clone, Debug)]
pub struct MarginalEffects {
    pub exposure_names: Vec<String>,
    /// Co-exposure levels the effects are marginalized at.
    pub levels: Vec<f64>,
    /// Credible level of the intervals.
    pub credible: f64,
    pub mean: Array2<f64>,
    pub lower: Array2<f64>,
    pub upper: Array2<f64>,
    /// True where the interval excludes zero.
    pub flagged: Array2<bool>,
}

impl MarginalEffects {
    /// Contiguous flagged lag runs (1-based, inclusive) per exposure.
    pub fn critical_windows(&self) -> Vec<Vec<(usize, usize)>> {
        let (m, t) = self.flagged.dim();
        (0..m)
            .map(|e| {
                let mut runs = Vec::new();
                let mut start = None;
                for lag in 0..t {
                    if self.flagged[[e, lag]] {
                        start.get_or_insert(lag + 1);
                    } else if let Some(s) = start.take() {
                        runs.push((s, lag));
                    }
                }
                if let Some(s) = start {
                    runs.push((s, t));
                }
                runs
            })
            .collect()
    }
}

fn summarize_cells<F>(n_rows: usize, n_cols: usize, credible: f64, cell: F) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>, Array2<bool>)>
where
    F: Fn(usize, usize) -> Vec<f64>,
{
    let mut mean = Array2::zeros((n_rows, n_cols));
    let mut lower = Array2::zeros((n_rows, n_cols));
    let mut upper = Array2::zeros((n_rows, n_cols));
    let mut flagged = Array2::from_elem((n_rows, n_cols), false);
    for r in 0..n_rows {
        for c in 0..n_cols {
            let xs = cell(r, c);
            let (lo, hi) = equal_tailed_interval(&xs, credible)?;
            mean[[r, c]] = crate::stats::mean(&xs);
            lower[[r, c]] = lo;
            upper[[r, c]] = hi;
            flagged[[r, c]] = lo > 0.0 || hi < 0.0;
        }
    }
    Ok((mean, lower, upper, flagged))
}

/// Marginal lag-effect summary at the given co-exposure levels (default: the
/// panel's pooled exposure means).
pub fn marginal_effects(
    draws: &PosteriorDraws,
    levels: Option<&[f64]>,
    credible: f64,
) -> Result<MarginalEffects> {
    if draws.n_draws() == 0 {
        return Err(Error::State("no retained draws to summarize".into()));
    }
    let m = draws.n_exposures;
    let t = draws.n_lags;
    let levels: Vec<f64> = match levels {
        Some(l) => {
            if l.len() != m {
                return Err(Error::Argument(format!("{} levels for {m} exposures", l.len())));
            }
            l.to_vec()
        }
        None => draws.exposure_stats.means.clone(),
    };
    let per_draw: Vec<Array2<f64>> = draws
        .effects
        .iter()
        .map(|e| marginalized_lag_effects(e, &levels))
        .collect::<Result<_>>()?;
    let (mean, lower, upper, flagged) = summarize_cells(m, t, credible, |e, lag| {
        per_draw.iter().map(|d| d[[e, lag]]).collect()
    })?;
    Ok(MarginalEffects {
        exposure_names: draws.exposure_stats.names.clone(),
        levels,
        credible,
        mean,
        lower,
        upper,
        flagged,
    })
}

/// Posterior inclusion probabilities for mixture-model fits.
#[derive(Clone, Debug)]
pub struct InclusionSummary {
    pub exposure_names: Vec<String>,
    /// Fraction of draws in which each exposure occupies at least one slot.
    pub main: Vec<f64>,
    /// Fraction of draws in which each unordered exposure pair carries
    /// interaction cells, indexed by `pair_index`.
    pub interaction: Vec<f64>,
    pub n_exposures: usize,
}

impl InclusionSummary {
    pub fn interaction_between(&self, a: usize, b: usize) -> f64 {
        self.interaction[pair_index(a.min(b), a.max(b), self.n_exposures)]
    }
}

pub fn inclusion_probabilities(draws: &PosteriorDraws) -> Result<InclusionSummary> {
    let (Some(slots), Some(cells)) = (&draws.slot_counts, &draws.cell_counts) else {
        return Err(Error::State(
            "inclusion probabilities are only defined for mixture-model fits".into(),
        ));
    };
    let n = draws.n_draws() as f64;
    let m = draws.n_exposures;
    let mut main_hits = vec![0u64; m];
    for row in slots.rows() {
        for (e, &c) in row.iter().enumerate() {
            if c > 0 {
                main_hits[e] += 1;
            }
        }
    }
    let mut int_hits = vec![0u64; n_pairs(m)];
    for row in cells.rows() {
        for (q, &c) in row.iter().enumerate() {
            if c > 0 {
                int_hits[q] += 1;
            }
        }
    }
    Ok(InclusionSummary {
        exposure_names: draws.exposure_stats.names.clone(),
        main: main_hits.into_iter().map(|h| h as f64 / n).collect(),
        interaction: int_hits.into_iter().map(|h| h as f64 / n).collect(),
        n_exposures: m,
    })
}

/// Posterior summary of one exposure pair's interaction surface.
#[derive(Clone, Debug)]
pub struct InteractionGrid {
    pub exposure1: usize,
    pub exposure2: usize,
    pub credible: f64,
    pub mean: Array2<f64>,
    pub lower: Array2<f64>,
    pub upper: Array2<f64>,
    pub flagged: Array2<bool>,
}

pub fn interaction_summary(
    draws: &PosteriorDraws,
    e1: usize,
    e2: usize,
    credible: f64,
) -> Result<InteractionGrid> {
    let m = draws.n_exposures;
    if e1 >= m || e2 >= m {
        return Err(Error::Argument(format!(
            "exposure pair ({e1}, {e2}) out of range for {m} exposures"
        )));
    }
    if draws.n_draws() == 0 {
        return Err(Error::State("no retained draws to summarize".into()));
    }
    if !draws.effects[0].has_interactions() {
        return Err(Error::State("fit carries no interaction effects".into()));
    }
    let (a, b) = (e1.min(e2), e1.max(e2));
    let q = pair_index(a, b, m);
    let t = draws.n_lags;
    let (mean, lower, upper, flagged) = summarize_cells(t, t, credible, |t1, t2| {
        draws.effects.iter().map(|e| e.interactions[q][[t1, t2]]).collect()
    })?;
    Ok(InteractionGrid { exposure1: a, exposure2: b, credible, mean, lower, upper, flagged })
}

/// Cumulative interquartile contrast per exposure: the change in the expected
/// outcome when the exposure is held at its pooled 75th instead of 25th
/// percentile across all lags, with the other exposures at their levels.
#[derive(Clone, Debug)]
pub struct CumulativeEffects {
    pub exposure_names: Vec<String>,
    pub credible: f64,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Exact quadratic-predictor difference for exposure `e` between constant
/// levels hi and lo, other exposures held at `levels`.
fn iqr_contrast_one(effects: &LagEffects, e: usize, lo: f64, hi: f64, levels: &[f64]) -> f64 {
    let m = effects.n_exposures;
    let t = effects.n_lags;
    let mut s_main = 0.0;
    for lag in 0..t {
        s_main += effects.main[[e, lag]];
    }
    let mut s_cross = 0.0;
    let mut s_self = 0.0;
    if effects.has_interactions() {
        for a in 0..e {
            let surf = &effects.interactions[pair_index(a, e, m)];
            s_cross += levels[a] * surf.sum();
        }
        for b in (e + 1)..m {
            let surf = &effects.interactions[pair_index(e, b, m)];
            s_cross += levels[b] * surf.sum();
        }
        s_self = effects.interactions[pair_index(e, e, m)].sum();
    }
    (hi - lo) * (s_main + s_cross) + (hi * hi - lo * lo) * s_self
}

pub fn cumulative_iqr_contrast(draws: &PosteriorDraws, credible: f64) -> Result<CumulativeEffects> {
    if draws.n_draws() == 0 {
        return Err(Error::State("no retained draws to summarize".into()));
    }
    let m = draws.n_exposures;
    let stats = &draws.exposure_stats;
    let mut mean = Vec::with_capacity(m);
    let mut lower = Vec::with_capacity(m);
    let mut upper = Vec::with_capacity(m);
    for e in 0..m {
        let xs: Vec<f64> = draws
            .effects
            .iter()
            .map(|eff| iqr_contrast_one(eff, e, stats.q25[e], stats.q75[e], &stats.means))
            .collect();
        let (lo, hi) = equal_tailed_interval(&xs, credible)?;
        mean.push(crate::stats::mean(&xs));
        lower.push(lo);
        upper.push(hi);
    }
    Ok(CumulativeEffects {
        exposure_names: stats.names.clone(),
        credible,
        q25: stats.q25.clone(),
        q75: stats.q75.clone(),
        mean,
        lower,
        upper,
    })
}

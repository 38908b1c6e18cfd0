//! Backfitting MCMC over an ensemble of time-splitting tree pairs. Each sweep
//! visits every pair, proposes structure moves against the coefficient-
//! integrated marginal score, redraws the pair's coefficients jointly, then
//! updates shrinkage scales, selection probabilities, covariate coefficients,
//! and the observation model (variance draw or logistic latent refresh).

mod design;
mod gibbs;
mod moves;

use crate::ensemble::{
    n_pairs, pair_index, reconstruct_effects, InteractionScope, LagEffects, TreePair,
    TreePairEnsemble,
};
use crate::error::{Error, Result};
use crate::panel::{ExposureStats, Family, LagPanel};
use crate::priors::{update_scales, ExposureProbs, ShrinkageState, TreePriorConfig};
use crate::stats::splitmix64;
use design::{build_design, draw_coefficients, evaluate_pair, PanelPrefix};
use gibbs::{draw_gamma, effect_sums, refresh_logistic_latents, scaled_delta_ss, slot_counts};
use moves::{propose, MoveKind};
use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Which effects the ensemble carries and how coefficients are scaled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    /// Single exposure, main effects only, per-pair local scales.
    Tdlm,
    /// Multiple exposures with all pairwise and self interactions.
    TdlmmFull,
    /// Multiple exposures; interactions only between distinct exposures.
    TdlmmNoself,
    /// Multiple exposures, main effects only.
    TdlmmAdditive,
}

impl SamplerMode {
    pub fn is_mixture(self) -> bool {
        !matches!(self, SamplerMode::Tdlm)
    }

    /// Whether the second tree of each pair carries effects. In the
    /// single-exposure mode it is an inert single-node stub.
    pub fn uses_second_tree(self) -> bool {
        self.is_mixture()
    }

    pub fn interaction_scope(self) -> InteractionScope {
        match self {
            SamplerMode::Tdlm | SamplerMode::TdlmmAdditive => InteractionScope::None,
            SamplerMode::TdlmmFull => InteractionScope::All,
            SamplerMode::TdlmmNoself => InteractionScope::DistinctExposures,
        }
    }
}

impl fmt::Display for SamplerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SamplerMode::Tdlm => "tdlm",
            SamplerMode::TdlmmFull => "tdlmm_full",
            SamplerMode::TdlmmNoself => "tdlmm_noself",
            SamplerMode::TdlmmAdditive => "tdlmm_additive",
        };
        f.write_str(s)
    }
}

impl FromStr for SamplerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tdlm" => Ok(SamplerMode::Tdlm),
            "tdlmm_full" => Ok(SamplerMode::TdlmmFull),
            "tdlmm_noself" => Ok(SamplerMode::TdlmmNoself),
            "tdlmm_additive" => Ok(SamplerMode::TdlmmAdditive),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected tdlm, tdlmm_full, tdlmm_noself, or tdlmm_additive)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub mode: SamplerMode,
    /// Number of tree pairs in the ensemble.
    pub n_tree_pairs: usize,
    /// Total sweeps per chain, including burn-in.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
    /// Dirichlet concentration of the exposure-selection prior.
    pub kappa: f64,
    /// Covariate prior variance multiplier.
    pub covariate_scale: f64,
    pub tree_prior: TreePriorConfig,
    /// Optional cap on leaves per tree.
    pub max_leaves: Option<usize>,
    /// Drop the likelihood entirely so every update draws from the prior.
    pub prior_only: bool,
    /// Skip structure moves, keeping tree shapes and exposures fixed.
    pub freeze_trees: bool,
    /// Skip local/global scale and selection-probability updates.
    pub freeze_scales: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            mode: SamplerMode::Tdlm,
            n_tree_pairs: 20,
            iterations: 10_000,
            burn_in: 5_000,
            thin: 5,
            n_chains: 2,
            seed: 1,
            kappa: 1.089,
            covariate_scale: 1e6,
            tree_prior: TreePriorConfig::default(),
            max_leaves: None,
            prior_only: false,
            freeze_trees: false,
            freeze_scales: false,
        }
    }
}

impl SamplerConfig {
    pub fn retained_per_chain(&self) -> usize {
        (self.iterations.saturating_sub(self.burn_in)) / self.thin.max(1)
    }

    pub fn validate(&self, panel: &LagPanel) -> Result<()> {
        self.validate_shape()?;
        if self.mode == SamplerMode::Tdlm && panel.n_exposures() != 1 {
            return Err(Error::Config(format!(
                "single-exposure mode on a panel with {} exposures; select one first",
                panel.n_exposures()
            )));
        }
        Ok(())
    }

    /// The invariants that do not depend on the data, so a bad configuration
    /// is rejected before any file is read or compute is spent.
    pub fn validate_shape(&self) -> Result<()> {
        if self.n_tree_pairs == 0 {
            return Err(Error::Config("need at least one tree pair".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} must be below iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be positive".into()));
        }
        if self.retained_per_chain() == 0 {
            return Err(Error::Config(format!(
                "no draws retained: {} post-burn-in sweeps at thin {}",
                self.iterations - self.burn_in,
                self.thin
            )));
        }
        if self.n_chains == 0 {
            return Err(Error::Config("need at least one chain".into()));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("kappa {} must be positive", self.kappa)));
        }
        if !(self.covariate_scale > 0.0 && self.covariate_scale.is_finite()) {
            return Err(Error::Config(format!(
                "covariate scale {} must be positive",
                self.covariate_scale
            )));
        }
        self.tree_prior.validate()?;
        if let Some(cap) = self.max_leaves {
            if cap < 2 {
                return Err(Error::Config("max leaves below 2 blocks all splits".into()));
            }
        }
        Ok(())
    }
}

/// Proposed/accepted/infeasible tallies per move kind, in the order grow,
/// prune, change, switch.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct MoveCounters {
    pub proposed: [u64; 4],
    pub accepted: [u64; 4],
    pub infeasible: [u64; 4],
}

impl MoveCounters {
    pub const KINDS: [&'static str; 4] = ["grow", "prune", "change", "switch"];

    fn absorb(&mut self, other: &MoveCounters) {
        for j in 0..4 {
            self.proposed[j] += other.proposed[j];
            self.accepted[j] += other.accepted[j];
            self.infeasible[j] += other.infeasible[j];
        }
    }
}

/// Retained posterior draws from all chains, chain-major.
#[derive(Clone, Debug)]
pub struct PosteriorDraws {
    pub mode: SamplerMode,
    pub family: Family,
    pub n_exposures: usize,
    pub n_lags: usize,
    pub n_chains: usize,
    pub per_chain: usize,
    pub exposure_stats: ExposureStats,
    pub covariate_names: Vec<String>,
    /// Lag-effect snapshot of each retained draw.
    pub effects: Vec<LagEffects>,
    /// Covariate coefficients, shape (draws, covariates).
    pub gamma: Array2<f64>,
    pub sigma2: Vec<f64>,
    pub nu2: Vec<f64>,
    /// Per-pair local scales (single-exposure mode), shape (draws, pairs).
    pub tau2: Option<Array2<f64>>,
    /// Per-exposure local scales (mixture modes), shape (draws, exposures).
    pub mu2_main: Option<Array2<f64>>,
    /// Per-exposure-pair local scales, shape (draws, pairs of exposures).
    pub mu2_int: Option<Array2<f64>>,
    /// Tree-slot occupancy per exposure each draw (mixture modes).
    pub slot_counts: Option<Array2<u32>>,
    /// Pairs carrying interaction cells per exposure pair each draw.
    pub cell_counts: Option<Array2<u32>>,
    /// Leaves per tree slot each draw, shape (draws, 2 * pairs), slots
    /// ordered pair-major (tree1 then tree2).
    pub leaf_counts: Array2<u32>,
    /// Depth of each tree slot each draw, same layout as `leaf_counts`.
    pub depth_counts: Array2<u32>,
    pub accept: MoveCounters,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.effects.len()
    }

    /// Draw index range of one chain.
    pub fn chain_range(&self, chain: usize) -> std::ops::Range<usize> {
        let lo = chain * self.per_chain;
        lo..lo + self.per_chain
    }
}

/// Deterministic per-chain seed derived from the base seed.
pub fn chain_seed(base: u64, chain: usize) -> u64 {
    splitmix64(base ^ (chain as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

struct ChainOut {
    effects: Vec<LagEffects>,
    gamma: Vec<f64>,
    sigma2: Vec<f64>,
    nu2: Vec<f64>,
    tau2: Vec<f64>,
    mu2_main: Vec<f64>,
    mu2_int: Vec<f64>,
    slots: Vec<u32>,
    cells: Vec<u32>,
    leaves: Vec<u32>,
    depths: Vec<u32>,
    accept: MoveCounters,
}

/// Run all chains and concatenate their retained draws.
pub fn run_sampler(panel: &LagPanel, cfg: &SamplerConfig) -> Result<PosteriorDraws> {
    cfg.validate(panel)?;
    let prefix = PanelPrefix::new(panel);
    let run_one = |chain: usize| run_chain(panel, &prefix, cfg, chain_seed(cfg.seed, chain));
    let outs: Vec<ChainOut> = if cfg.n_chains == 1 {
        vec![run_one(0)?]
    } else {
        // Chains are independent; ordered collection keeps output
        // deterministic regardless of scheduling.
        (0..cfg.n_chains)
            .into_par_iter()
            .map(run_one)
            .collect::<Result<Vec<_>>>()?
    };

    let m = panel.n_exposures();
    let p = panel.n_covariates();
    let np = n_pairs(m);
    let per_chain = cfg.retained_per_chain();
    let total = per_chain * cfg.n_chains;
    let a = cfg.n_tree_pairs;
    let mixture = cfg.mode.is_mixture();

    let mut effects = Vec::with_capacity(total);
    let mut gamma = Vec::with_capacity(total * p);
    let mut sigma2 = Vec::with_capacity(total);
    let mut nu2 = Vec::with_capacity(total);
    let mut tau2 = Vec::new();
    let mut mu2_main = Vec::new();
    let mut mu2_int = Vec::new();
    let mut slots = Vec::new();
    let mut cells = Vec::new();
    let mut leaves = Vec::with_capacity(total * 2 * a);
    let mut depths = Vec::with_capacity(total * 2 * a);
    let mut accept = MoveCounters::default();
    for mut out in outs {
        effects.append(&mut out.effects);
        gamma.append(&mut out.gamma);
        sigma2.append(&mut out.sigma2);
        nu2.append(&mut out.nu2);
        tau2.append(&mut out.tau2);
        mu2_main.append(&mut out.mu2_main);
        mu2_int.append(&mut out.mu2_int);
        slots.append(&mut out.slots);
        cells.append(&mut out.cells);
        leaves.append(&mut out.leaves);
        depths.append(&mut out.depths);
        accept.absorb(&out.accept);
    }

    let arr2 = |data: Vec<f64>, cols: usize| -> Result<Array2<f64>> {
        Array2::from_shape_vec((total, cols), data)
            .map_err(|e| Error::Numeric(format!("draw matrix shape: {e}")))
    };
    Ok(PosteriorDraws {
        mode: cfg.mode,
        family: panel.family,
        n_exposures: m,
        n_lags: panel.n_lags(),
        n_chains: cfg.n_chains,
        per_chain,
        exposure_stats: panel.exposure_stats(),
        covariate_names: panel.covariate_names.clone(),
        effects,
        gamma: arr2(gamma, p)?,
        sigma2,
        nu2,
        tau2: if mixture { None } else { Some(arr2(tau2, a)?) },
        mu2_main: if mixture { Some(arr2(mu2_main, m)?) } else { None },
        mu2_int: if mixture { Some(arr2(mu2_int, np)?) } else { None },
        slot_counts: if mixture {
            Some(
                Array2::from_shape_vec((total, m), slots)
                    .map_err(|e| Error::Numeric(format!("slot count shape: {e}")))?,
            )
        } else {
            None
        },
        cell_counts: if mixture {
            Some(
                Array2::from_shape_vec((total, np), cells)
                    .map_err(|e| Error::Numeric(format!("cell count shape: {e}")))?,
            )
        } else {
            None
        },
        leaf_counts: Array2::from_shape_vec((total, 2 * a), leaves)
            .map_err(|e| Error::Numeric(format!("leaf count shape: {e}")))?,
        depth_counts: Array2::from_shape_vec((total, 2 * a), depths)
            .map_err(|e| Error::Numeric(format!("depth shape: {e}")))?,
        accept,
    })
}

/// Swap in a proposed tree or exposure and resize the interaction table to
/// match the new structure. Cell values are irrelevant here: coefficients are
/// redrawn jointly right after the structure stage.
fn apply_proposal(
    pair: &TreePair,
    slot: usize,
    new_tree: Option<&crate::tree::TimeSplitTree>,
    new_exposure: Option<usize>,
    scope: InteractionScope,
) -> TreePair {
    let mut next = pair.clone();
    if let Some(t) = new_tree {
        if slot == 0 {
            next.tree1 = t.clone();
        } else {
            next.tree2 = t.clone();
        }
    }
    if let Some(e) = new_exposure {
        if slot == 0 {
            next.exposure1 = e;
        } else {
            next.exposure2 = e;
        }
    }
    if scope.allows(next.exposure1, next.exposure2) {
        next.cells = vec![0.0; next.tree1.n_leaves() * next.tree2.n_leaves()];
    } else {
        next.cells = Vec::new();
    }
    next
}

fn write_coefficients(pair: &mut TreePair, mode: SamplerMode, delta: &DVector<f64>, k1: usize, k2: usize) {
    for j in 0..k1 {
        pair.tree1.effects[j] = delta[j];
    }
    if mode.uses_second_tree() {
        for j in 0..k2 {
            pair.tree2.effects[j] = delta[k1 + j];
        }
    }
    for j in 0..delta.len() - k1 - k2 {
        pair.cells[j] = delta[k1 + k2 + j];
    }
}

fn run_chain(
    panel: &LagPanel,
    prefix: &PanelPrefix,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<ChainOut> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = panel.n_individuals();
    let m = panel.n_exposures();
    let t = panel.n_lags();
    let p = panel.n_covariates();
    let a = cfg.n_tree_pairs;
    let mode = cfg.mode;
    let scope = mode.interaction_scope();
    let np = n_pairs(m);

    let mut ens = TreePairEnsemble::trivial(a, m, t)?;
    if mode.is_mixture() {
        for pair in &mut ens.pairs {
            pair.exposure1 = rng.random_range(0..m);
            pair.exposure2 = rng.random_range(0..m);
            if scope.allows(pair.exposure1, pair.exposure2) {
                pair.cells = vec![0.0];
            }
        }
    }
    let mut shrink = if mode.is_mixture() {
        ShrinkageState::new_exposure_scales(m, cfg.covariate_scale)
    } else {
        ShrinkageState::new_pair_scales(a, cfg.covariate_scale)
    };
    if panel.family == Family::Gaussian && !cfg.prior_only {
        let v = crate::stats::variance(panel.outcome.as_slice().expect("contiguous outcome"));
        shrink.sigma2 = if v.is_finite() && v > 1e-12 { v } else { 1.0 };
    }
    let mut eprobs = ExposureProbs::uniform(m, cfg.kappa)?;

    let zmat = DMatrix::from_fn(n, p, |i, j| panel.covariates[[i, j]]);
    let mut gamma;
    let mut covar_fit = Array1::<f64>::zeros(n);
    let mut contrib: Vec<Array1<f64>> = vec![Array1::zeros(n); a];
    let mut total_fit = Array1::<f64>::zeros(n);

    let mut y_work;
    let mut prec;
    if cfg.prior_only {
        y_work = Array1::zeros(n);
        prec = Array1::zeros(n);
    } else {
        match panel.family {
            Family::Gaussian => {
                y_work = panel.outcome.clone();
                prec = Array1::from_elem(n, 1.0 / shrink.sigma2);
            }
            Family::Bernoulli => {
                // Deterministic warm start; the per-sweep refresh replaces it.
                prec = Array1::from_elem(n, 0.25);
                y_work = panel.outcome.mapv(|y| (y - 0.5) / 0.25);
            }
        }
    }

    let per_chain = cfg.retained_per_chain();
    let mut out = ChainOut {
        effects: Vec::with_capacity(per_chain),
        gamma: Vec::with_capacity(per_chain * p),
        sigma2: Vec::with_capacity(per_chain),
        nu2: Vec::with_capacity(per_chain),
        tau2: Vec::with_capacity(if mode.is_mixture() { 0 } else { per_chain * a }),
        mu2_main: Vec::with_capacity(if mode.is_mixture() { per_chain * m } else { 0 }),
        mu2_int: Vec::with_capacity(if mode.is_mixture() { per_chain * np } else { 0 }),
        slots: Vec::with_capacity(if mode.is_mixture() { per_chain * m } else { 0 }),
        cells: Vec::with_capacity(if mode.is_mixture() { per_chain * np } else { 0 }),
        leaves: Vec::with_capacity(per_chain * 2 * a),
        depths: Vec::with_capacity(per_chain * 2 * a),
        accept: MoveCounters::default(),
    };

    for it in 1..=cfg.iterations {
        // Rebuild the ensemble fit from per-pair contributions so incremental
        // updates cannot drift over thousands of sweeps.
        total_fit.fill(0.0);
        for c in &contrib {
            total_fit += c;
        }

        for ai in 0..a {
            let resid_a = &y_work - &total_fit - &covar_fit + &contrib[ai];
            let design = build_design(&ens.pairs[ai], ai, mode, prefix, &shrink);
            let mut cur = evaluate_pair(design, &prec, &resid_a)?;

            if !cfg.freeze_trees {
                let slots: &[usize] = if mode.uses_second_tree() { &[0, 1] } else { &[0] };
                for &slot in slots {
                    let kind = MoveKind::draw(&mut rng, mode.is_mixture());
                    let ki = kind as usize;
                    let prop = {
                        let pair = &ens.pairs[ai];
                        let (tree, exposure) = if slot == 0 {
                            (&pair.tree1, pair.exposure1)
                        } else {
                            (&pair.tree2, pair.exposure2)
                        };
                        propose(&mut rng, kind, tree, exposure, &eprobs, &cfg.tree_prior, cfg.max_leaves)
                    };
                    let Some(prop) = prop else {
                        out.accept.infeasible[ki] += 1;
                        continue;
                    };
                    out.accept.proposed[ki] += 1;
                    let cand_pair = apply_proposal(
                        &ens.pairs[ai],
                        slot,
                        prop.new_tree.as_ref(),
                        prop.new_exposure,
                        scope,
                    );
                    let cand_design = build_design(&cand_pair, ai, mode, prefix, &shrink);
                    match evaluate_pair(cand_design, &prec, &resid_a) {
                        Err(e) => log::warn!("candidate structure rejected: {e}"),
                        Ok(cand) => {
                            let lr = cand.score - cur.score + prop.log_prior_delta + prop.log_rev
                                - prop.log_fwd;
                            if lr.is_finite() && rng.random::<f64>().ln() < lr {
                                ens.pairs[ai] = cand_pair;
                                cur = cand;
                                out.accept.accepted[ki] += 1;
                            }
                        }
                    }
                }
            }

            let delta = draw_coefficients(&cur, &mut rng);
            let k1 = cur.design.k1;
            let k2 = cur.design.k2;
            write_coefficients(&mut ens.pairs[ai], mode, &delta, k1, k2);
            let fitted = &cur.design.w * &delta;
            let newc = Array1::from_iter(fitted.iter().copied());
            total_fit += &newc;
            total_fit -= &contrib[ai];
            contrib[ai] = newc;
        }

        let sums = effect_sums(&ens, mode);
        if !cfg.freeze_scales {
            update_scales(&mut shrink, &sums, &mut rng)?;
            if mode.is_mixture() {
                eprobs.update(&slot_counts(&ens), &mut rng)?;
            }
        }

        let resid_g = &y_work - &total_fit;
        gamma = draw_gamma(&zmat, &prec, &resid_g, &shrink, &mut rng)?;
        {
            let fitted = &zmat * &gamma;
            covar_fit = Array1::from_iter(fitted.iter().copied());
        }

        match panel.family {
            Family::Gaussian => {
                let (n_obs, resid_ss) = if cfg.prior_only {
                    (0, 0.0)
                } else {
                    let r = &panel.outcome - &total_fit - &covar_fit;
                    (n, r.dot(&r))
                };
                let dss = scaled_delta_ss(&shrink, &sums);
                let gss = gamma.iter().map(|g| g * g).sum();
                shrink.update_sigma2(n_obs, resid_ss, sums.n_delta(), dss, p, gss, &mut rng);
                if !cfg.prior_only {
                    prec.fill(1.0 / shrink.sigma2);
                }
            }
            Family::Bernoulli => {
                if !cfg.prior_only {
                    let linear = &total_fit + &covar_fit;
                    refresh_logistic_latents(
                        &panel.outcome,
                        &linear,
                        &mut y_work,
                        &mut prec,
                        &mut rng,
                    );
                }
            }
        }

        if it > cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 {
            let mut snap = reconstruct_effects(&ens)?;
            if scope != InteractionScope::None && !snap.has_interactions() {
                // Keep draw shapes uniform even when no pair currently
                // carries cells.
                let mut padded = LagEffects::zeros(m, t, true);
                padded.main.assign(&snap.main);
                snap = padded;
            }
            out.effects.push(snap);
            out.gamma.extend(gamma.iter().copied());
            out.sigma2.push(shrink.sigma2);
            out.nu2.push(shrink.nu2);
            for pair in &ens.pairs {
                out.leaves.push(pair.tree1.n_leaves() as u32);
                out.leaves.push(pair.tree2.n_leaves() as u32);
                out.depths.push(pair.tree1.depth() as u32);
                out.depths.push(pair.tree2.depth() as u32);
            }
            if mode.is_mixture() {
                out.mu2_main.extend_from_slice(&shrink.mu2_main);
                out.mu2_int.extend_from_slice(&shrink.mu2_int);
                out.slots.extend_from_slice(&slot_counts(&ens));
                let mut cell_row = vec![0u32; np];
                for pair in &ens.pairs {
                    if pair.has_cells() {
                        let lo = pair.exposure1.min(pair.exposure2);
                        let hi = pair.exposure1.max(pair.exposure2);
                        cell_row[pair_index(lo, hi, m)] += 1;
                    }
                }
                out.cells.extend_from_slice(&cell_row);
            } else {
                out.tau2.extend_from_slice(&shrink.tau2);
            }
        }
    }
    Ok(out)
}

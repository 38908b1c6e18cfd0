//! File formats: wide-format panel CSVs, a binary draw archive, run
//! configuration files, and the output bundle a fit produces. All writes go
//! through a temp-file-plus-rename so no output is ever partially written.

use crate::diagnostics::chain_diagnostics;
use crate::ensemble::LagEffects;
use crate::error::{Error, Result};
use crate::panel::{ExposureStats, Family, LagPanel};
use crate::sampler::{MoveCounters, PosteriorDraws, SamplerConfig, SamplerMode};
use crate::sim::ScenarioTruth;
use crate::summary::{
    cumulative_iqr_contrast, inclusion_probabilities, interaction_summary, marginal_effects,
};
use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

/// Run-level configuration: the sampler setup plus data-schema hints and the
/// summary credible level. Serialized inside every run manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sampler: SamplerConfig,
    pub family: Family,
    /// Credible level for all reported intervals.
    pub credible: f64,
    /// Name of the outcome column in panel CSV files.
    pub outcome_column: String,
    /// Exposure column prefixes; empty means every `<name>_<lag>` column
    /// group is treated as an exposure.
    pub exposures: Vec<String>,
    /// Covariate column names; empty means every remaining column.
    pub covariates: Vec<String>,
    /// Directory the output bundle is written into.
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sampler: SamplerConfig::default(),
            family: Family::Gaussian,
            credible: 0.95,
            outcome_column: "outcome".into(),
            exposures: Vec::new(),
            covariates: Vec::new(),
            output_dir: PathBuf::from("treelag_out"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampler.validate_shape()?;
        if !(self.credible > 0.0 && self.credible < 1.0) {
            return Err(Error::Config(format!(
                "credible level {} is not in (0, 1)",
                self.credible
            )));
        }
        if self.outcome_column.is_empty() {
            return Err(Error::Config("outcome column name is empty".into()));
        }
        Ok(())
    }
}

/// Load a run configuration from JSON: either a bare `RunConfig` object or a
/// run manifest wrapping one under its `config` key.
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("cannot read config {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("config {} is not valid JSON: {e}", path.display())))?;
    let body = match value.get("config") {
        Some(inner) => inner.clone(),
        None => value,
    };
    let cfg: RunConfig = serde_json::from_value(body)
        .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Run manifest: everything needed to reproduce a run bit-identically.
pub fn manifest_json(command: &str, config: &RunConfig, inputs: &BTreeMap<String, String>) -> serde_json::Value {
    json!({
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
        "inputs": inputs,
    })
}

/// Write bytes to `path` atomically (temp file in the same directory, then
/// rename over the final name).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes)
        .map_err(|e| Error::Io(format!("cannot write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path)
        .map_err(|e| Error::Io(format!("cannot move output into {}: {e}", path.display())))?;
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Check that the directory exists (creating it if needed) and is writable,
/// before any compute is spent.
pub fn ensure_writable_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Io(format!("cannot create output directory {}: {e}", dir.display())))?;
    let probe = dir.join(".write-probe.tmp");
    fs::write(&probe, b"ok")
        .map_err(|e| Error::Io(format!("output directory {} is not writable: {e}", dir.display())))?;
    let _ = fs::remove_file(&probe);
    Ok(())
}

// ---------------------------------------------------------------------------
// Panel CSV
// ---------------------------------------------------------------------------

fn split_lag_column(name: &str) -> Option<(&str, usize)> {
    let (prefix, suffix) = name.rsplit_once('_')?;
    let lag: usize = suffix.parse().ok()?;
    if lag == 0 || prefix.is_empty() {
        return None;
    }
    Some((prefix, lag))
}

/// Load a wide-format panel CSV: one row per individual; an outcome column,
/// covariate columns, and exposure columns named `<exposure>_<lag>` with lags
/// 1..=T. T is inferred per exposure and must agree across exposures.
pub fn load_panel_csv(path: &Path, cfg: &RunConfig) -> Result<LagPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Io(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();

    let outcome_idx = headers
        .iter()
        .position(|h| *h == cfg.outcome_column)
        .ok_or_else(|| {
            Error::Io(format!(
                "{}: missing outcome column '{}'",
                path.display(),
                cfg.outcome_column
            ))
        })?;

    // Explicitly listed covariates claim their columns first.
    let mut covariate_idx: Vec<usize> = Vec::new();
    if !cfg.covariates.is_empty() {
        for name in &cfg.covariates {
            let idx = headers.iter().position(|h| h == name).ok_or_else(|| {
                Error::Io(format!("{}: missing covariate column '{name}'", path.display()))
            })?;
            covariate_idx.push(idx);
        }
    }

    // Group exposure columns by prefix, in first-appearance order.
    let mut exposure_order: Vec<String> = Vec::new();
    let mut exposure_cols: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
    let mut leftover: Vec<usize> = Vec::new();
    for (idx, h) in headers.iter().enumerate() {
        if idx == outcome_idx || covariate_idx.contains(&idx) {
            continue;
        }
        let parsed = split_lag_column(h);
        let claimed = match parsed {
            Some((prefix, _)) if cfg.exposures.is_empty() => Some(prefix),
            Some((prefix, _)) if cfg.exposures.iter().any(|e| e == prefix) => Some(prefix),
            _ => None,
        };
        if let (Some(prefix), Some((_, lag))) = (claimed, parsed) {
            if !exposure_cols.contains_key(prefix) {
                exposure_order.push(prefix.to_string());
            }
            exposure_cols.entry(prefix.to_string()).or_default().push((lag, idx));
        } else if !cfg.exposures.is_empty()
            && cfg
                .exposures
                .iter()
                .any(|e| h.starts_with(&format!("{e}_")))
        {
            return Err(Error::Io(format!(
                "{}: column '{h}' looks like an exposure column but its lag suffix is not a positive integer",
                path.display()
            )));
        } else {
            leftover.push(idx);
        }
    }
    if !cfg.exposures.is_empty() {
        for name in &cfg.exposures {
            if !exposure_cols.contains_key(name) {
                return Err(Error::Io(format!(
                    "{}: no columns found for exposure '{name}'",
                    path.display()
                )));
            }
        }
    }
    if exposure_cols.is_empty() {
        return Err(Error::Io(format!(
            "{}: no exposure columns of the form <name>_<lag> found",
            path.display()
        )));
    }
    if cfg.covariates.is_empty() {
        covariate_idx = leftover;
    }

    // Per-exposure lags must be exactly 1..=T, shared across exposures.
    let mut n_lags = 0usize;
    let mut exposure_cells: Vec<Vec<usize>> = Vec::new(); // column index by (exposure, lag)
    for (k, name) in exposure_order.iter().enumerate() {
        let mut cols = exposure_cols.remove(name).unwrap();
        cols.sort_unstable();
        let lags: Vec<usize> = cols.iter().map(|&(lag, _)| lag).collect();
        let expect: Vec<usize> = (1..=lags.len()).collect();
        if lags != expect {
            return Err(Error::Io(format!(
                "{}: exposure '{name}' has lag columns {lags:?}; expected consecutive lags 1..={}",
                path.display(),
                lags.len()
            )));
        }
        if k == 0 {
            n_lags = lags.len();
        } else if lags.len() != n_lags {
            return Err(Error::Io(format!(
                "{}: inconsistent lag counts: '{}' has {} lags but '{name}' has {}",
                path.display(),
                exposure_order[0],
                n_lags,
                lags.len()
            )));
        }
        exposure_cells.push(cols.into_iter().map(|(_, idx)| idx).collect());
    }

    // Parse all rows.
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        if record.len() != headers.len() {
            return Err(Error::Io(format!(
                "{}: line {} has {} fields; header has {}",
                path.display(),
                r + 2,
                record.len(),
                headers.len()
            )));
        }
        let mut parsed = Vec::with_capacity(record.len());
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Io(format!(
                    "{}: line {}, column '{}': cannot parse '{cell}' as a number",
                    path.display(),
                    r + 2,
                    headers[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Io(format!(
                    "{}: line {}, column '{}': non-finite value '{cell}'",
                    path.display(),
                    r + 2,
                    headers[c]
                )));
            }
            parsed.push(v);
        }
        rows.push(parsed);
    }
    if rows.is_empty() {
        return Err(Error::Io(format!("{}: no data rows", path.display())));
    }

    let n = rows.len();
    let m = exposure_order.len();
    let exposures = Array3::from_shape_fn((n, m, n_lags), |(i, e, lag)| {
        rows[i][exposure_cells[e][lag]]
    });
    let mut covariates = Array2::zeros((n, covariate_idx.len() + 1));
    for i in 0..n {
        covariates[[i, 0]] = 1.0;
        for (j, &c) in covariate_idx.iter().enumerate() {
            covariates[[i, j + 1]] = rows[i][c];
        }
    }
    let outcome = Array1::from_shape_fn(n, |i| rows[i][outcome_idx]);
    let covariate_names: Vec<String> = std::iter::once("(intercept)".to_string())
        .chain(covariate_idx.iter().map(|&c| headers[c].clone()))
        .collect();
    LagPanel::new(
        exposures,
        covariates,
        outcome,
        cfg.family,
        exposure_order,
        covariate_names,
    )
}

/// Write a panel as a wide-format CSV (the intercept column is implicit and
/// not written). Values round-trip exactly through `load_panel_csv`.
pub fn write_panel_csv(panel: &LagPanel, path: &Path) -> Result<()> {
    let (n, m, t) = panel.exposures.dim();
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut header = vec!["outcome".to_string()];
        header.extend(panel.covariate_names.iter().skip(1).cloned());
        for e in 0..m {
            for lag in 1..=t {
                header.push(format!("{}_{lag}", panel.exposure_names[e]));
            }
        }
        w.write_record(&header)?;
        for i in 0..n {
            let mut row = vec![format!("{}", panel.outcome[i])];
            for j in 1..panel.covariates.ncols() {
                row.push(format!("{}", panel.covariates[[i, j]]));
            }
            for e in 0..m {
                for lag in 0..t {
                    row.push(format!("{}", panel.exposures[[i, e, lag]]));
                }
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))?;
    }
    write_atomic(path, &buf)
}

/// Write simulation ground truth as JSON.
pub fn write_truth_json(truth: &ScenarioTruth, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(truth).map_err(|e| Error::Io(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

pub fn load_truth_json(path: &Path) -> Result<ScenarioTruth> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Io(format!("{}: not a truth file: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Draw archive
// ---------------------------------------------------------------------------

const DRAW_MAGIC: &[u8; 8] = b"TLDRAW01";

#[derive(Serialize, Deserialize)]
struct ArchiveHeader {
    mode: SamplerMode,
    family: Family,
    n_exposures: usize,
    n_lags: usize,
    n_chains: usize,
    per_chain: usize,
    with_interactions: bool,
    n_gamma: usize,
    n_tau2: usize,
    n_mu2_main: usize,
    n_mu2_int: usize,
    n_slot: usize,
    n_cell: usize,
    n_leaf: usize,
    n_depth: usize,
    exposure_stats: ExposureStats,
    covariate_names: Vec<String>,
    accept: MoveCounters,
}

impl ArchiveHeader {
    fn record_len(&self) -> usize {
        let mt = self.n_exposures * self.n_lags;
        let inter = if self.with_interactions {
            crate::ensemble::n_pairs(self.n_exposures) * self.n_lags * self.n_lags
        } else {
            0
        };
        mt + inter + self.n_gamma + 2 // + sigma2, nu2
            + self.n_tau2
            + self.n_mu2_main
            + self.n_mu2_int
            + self.n_slot
            + self.n_cell
            + self.n_leaf
            + self.n_depth
    }
}

/// Persist draws as a self-describing binary archive: an 8-byte magic tag, a
/// JSON header, then one fixed-length little-endian f64 record per draw.
/// Counts are stored as f64 (they are small integers, exact in a double).
pub fn write_draws(draws: &PosteriorDraws, path: &Path) -> Result<()> {
    let with_interactions = draws
        .effects
        .first()
        .map(|e| e.has_interactions())
        .unwrap_or(false);
    let header = ArchiveHeader {
        mode: draws.mode,
        family: draws.family,
        n_exposures: draws.n_exposures,
        n_lags: draws.n_lags,
        n_chains: draws.n_chains,
        per_chain: draws.per_chain,
        with_interactions,
        n_gamma: draws.gamma.ncols(),
        n_tau2: draws.tau2.as_ref().map(|a| a.ncols()).unwrap_or(0),
        n_mu2_main: draws.mu2_main.as_ref().map(|a| a.ncols()).unwrap_or(0),
        n_mu2_int: draws.mu2_int.as_ref().map(|a| a.ncols()).unwrap_or(0),
        n_slot: draws.slot_counts.as_ref().map(|a| a.ncols()).unwrap_or(0),
        n_cell: draws.cell_counts.as_ref().map(|a| a.ncols()).unwrap_or(0),
        n_leaf: draws.leaf_counts.ncols(),
        n_depth: draws.depth_counts.ncols(),
        exposure_stats: draws.exposure_stats.clone(),
        covariate_names: draws.covariate_names.clone(),
        accept: draws.accept,
    };
    let header_bytes = serde_json::to_vec(&header).map_err(|e| Error::Io(e.to_string()))?;

    let tmp = tmp_path(path);
    let file = fs::File::create(&tmp)
        .map_err(|e| Error::Io(format!("cannot create {}: {e}", tmp.display())))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::Io(format!("writing {}: {e}", path.display()));
    w.write_all(DRAW_MAGIC).map_err(io_err)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&header_bytes).map_err(io_err)?;
    let put = |w: &mut BufWriter<fs::File>, v: f64| w.write_all(&v.to_le_bytes()).map_err(io_err);
    for d in 0..draws.n_draws() {
        let eff = &draws.effects[d];
        for v in eff.main.iter() {
            put(&mut w, *v)?;
        }
        if with_interactions {
            for surf in &eff.interactions {
                for v in surf.iter() {
                    put(&mut w, *v)?;
                }
            }
        }
        for j in 0..header.n_gamma {
            put(&mut w, draws.gamma[[d, j]])?;
        }
        put(&mut w, draws.sigma2[d])?;
        put(&mut w, draws.nu2[d])?;
        if let Some(a) = &draws.tau2 {
            for j in 0..header.n_tau2 {
                put(&mut w, a[[d, j]])?;
            }
        }
        if let Some(a) = &draws.mu2_main {
            for j in 0..header.n_mu2_main {
                put(&mut w, a[[d, j]])?;
            }
        }
        if let Some(a) = &draws.mu2_int {
            for j in 0..header.n_mu2_int {
                put(&mut w, a[[d, j]])?;
            }
        }
        if let Some(a) = &draws.slot_counts {
            for j in 0..header.n_slot {
                put(&mut w, a[[d, j]] as f64)?;
            }
        }
        if let Some(a) = &draws.cell_counts {
            for j in 0..header.n_cell {
                put(&mut w, a[[d, j]] as f64)?;
            }
        }
        for j in 0..header.n_leaf {
            put(&mut w, draws.leaf_counts[[d, j]] as f64)?;
        }
        for j in 0..header.n_depth {
            put(&mut w, draws.depth_counts[[d, j]] as f64)?;
        }
    }
    w.flush().map_err(io_err)?;
    drop(w);
    fs::rename(&tmp, path)
        .map_err(|e| Error::Io(format!("cannot move archive into {}: {e}", path.display())))?;
    Ok(())
}

/// Read a draw archive written by `write_draws`.
pub fn read_draws(path: &Path) -> Result<PosteriorDraws> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Io(format!("cannot open {}: {e}", path.display())))?;
    let mut r = BufReader::new(file);
    let io_err = |e: std::io::Error| Error::Io(format!("reading {}: {e}", path.display()));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != DRAW_MAGIC {
        return Err(Error::Io(format!(
            "{}: not a draw archive (bad magic)",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes).map_err(io_err)?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes).map_err(io_err)?;
    let header: ArchiveHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Io(format!("{}: corrupt archive header: {e}", path.display())))?;

    let n_draws = header.n_chains * header.per_chain;
    let record = header.record_len();
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(io_err)?;
    if payload.len() != n_draws * record * 8 {
        return Err(Error::Io(format!(
            "{}: archive payload is {} bytes; expected {} ({} draws x {} values)",
            path.display(),
            payload.len(),
            n_draws * record * 8,
            n_draws,
            record
        )));
    }
    let mut pos = 0usize;
    let mut take = || {
        let v = f64::from_le_bytes(payload[pos..pos + 8].try_into().unwrap());
        pos += 8;
        v
    };

    let (m, t) = (header.n_exposures, header.n_lags);
    let np = crate::ensemble::n_pairs(m);
    let mut effects = Vec::with_capacity(n_draws);
    let mut gamma = Array2::zeros((n_draws, header.n_gamma));
    let mut sigma2 = Vec::with_capacity(n_draws);
    let mut nu2 = Vec::with_capacity(n_draws);
    let mut tau2 = (header.n_tau2 > 0).then(|| Array2::zeros((n_draws, header.n_tau2)));
    let mut mu2_main = (header.n_mu2_main > 0).then(|| Array2::zeros((n_draws, header.n_mu2_main)));
    let mut mu2_int = (header.n_mu2_int > 0).then(|| Array2::zeros((n_draws, header.n_mu2_int)));
    let mut slot_counts = (header.n_slot > 0).then(|| Array2::zeros((n_draws, header.n_slot)));
    let mut cell_counts = (header.n_cell > 0).then(|| Array2::zeros((n_draws, header.n_cell)));
    let mut leaf_counts = Array2::zeros((n_draws, header.n_leaf));
    let mut depth_counts = Array2::zeros((n_draws, header.n_depth));
    for d in 0..n_draws {
        let mut eff = LagEffects::zeros(m, t, header.with_interactions);
        for v in eff.main.iter_mut() {
            *v = take();
        }
        if header.with_interactions {
            for q in 0..np {
                for v in eff.interactions[q].iter_mut() {
                    *v = take();
                }
            }
        }
        effects.push(eff);
        for j in 0..header.n_gamma {
            gamma[[d, j]] = take();
        }
        sigma2.push(take());
        nu2.push(take());
        if let Some(a) = &mut tau2 {
            for j in 0..header.n_tau2 {
                a[[d, j]] = take();
            }
        }
        if let Some(a) = &mut mu2_main {
            for j in 0..header.n_mu2_main {
                a[[d, j]] = take();
            }
        }
        if let Some(a) = &mut mu2_int {
            for j in 0..header.n_mu2_int {
                a[[d, j]] = take();
            }
        }
        if let Some(a) = &mut slot_counts {
            for j in 0..header.n_slot {
                a[[d, j]] = take() as u32;
            }
        }
        if let Some(a) = &mut cell_counts {
            for j in 0..header.n_cell {
                a[[d, j]] = take() as u32;
            }
        }
        for j in 0..header.n_leaf {
            leaf_counts[[d, j]] = take() as u32;
        }
        for j in 0..header.n_depth {
            depth_counts[[d, j]] = take() as u32;
        }
    }
    Ok(PosteriorDraws {
        mode: header.mode,
        family: header.family,
        n_exposures: m,
        n_lags: t,
        n_chains: header.n_chains,
        per_chain: header.per_chain,
        exposure_stats: header.exposure_stats,
        covariate_names: header.covariate_names,
        effects,
        gamma,
        sigma2,
        nu2,
        tau2,
        mu2_main,
        mu2_int,
        slot_counts,
        cell_counts,
        leaf_counts,
        depth_counts,
        accept: header.accept,
    })
}

// ---------------------------------------------------------------------------
// Output bundle
// ---------------------------------------------------------------------------

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn csv_into_bytes(build: impl FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        build(&mut w)?;
        w.flush().map_err(|e| Error::Io(e.to_string()))?;
    }
    Ok(buf)
}

/// Write the full output bundle for a completed run into `dir`: per-lag
/// marginal effects, cumulative contrasts, inclusion probabilities and
/// interaction surfaces (mixture fits), chain diagnostics, and the manifest.
/// Returns the list of files written.
pub fn write_outputs(
    draws: &PosteriorDraws,
    dir: &Path,
    credible: f64,
    manifest: &serde_json::Value,
) -> Result<Vec<PathBuf>> {
    if draws.n_draws() == 0 {
        return Err(Error::State("no retained draws; nothing to write".into()));
    }
    ensure_writable_dir(dir)?;
    let mut written = Vec::new();

    let marginal = marginal_effects(draws, None, credible)?;
    let (m, t) = marginal.mean.dim();
    let bytes = csv_into_bytes(|w| {
        w.write_record(["exposure", "lag", "mean", "lower", "upper", "flagged"])?;
        for e in 0..m {
            for lag in 0..t {
                w.write_record(&[
                    marginal.exposure_names[e].clone(),
                    format!("{}", lag + 1),
                    format!("{}", marginal.mean[[e, lag]]),
                    format!("{}", marginal.lower[[e, lag]]),
                    format!("{}", marginal.upper[[e, lag]]),
                    format!("{}", marginal.flagged[[e, lag]]),
                ])?;
            }
        }
        Ok(())
    })?;
    let path = dir.join("marginal_dlm.csv");
    write_atomic(&path, &bytes)?;
    written.push(path);

    let cumulative = cumulative_iqr_contrast(draws, credible)?;
    let bytes = csv_into_bytes(|w| {
        w.write_record(["exposure", "q25", "q75", "mean", "lower", "upper"])?;
        for e in 0..m {
            w.write_record(&[
                cumulative.exposure_names[e].clone(),
                format!("{}", cumulative.q25[e]),
                format!("{}", cumulative.q75[e]),
                format!("{}", cumulative.mean[e]),
                format!("{}", cumulative.lower[e]),
                format!("{}", cumulative.upper[e]),
            ])?;
        }
        Ok(())
    })?;
    let path = dir.join("cumulative.csv");
    write_atomic(&path, &bytes)?;
    written.push(path);

    // Inclusion probabilities exist only for mixture-model fits.
    if let Ok(inc) = inclusion_probabilities(draws) {
        let bytes = csv_into_bytes(|w| {
            w.write_record(["kind", "exposure1", "exposure2", "probability"])?;
            for e in 0..m {
                w.write_record(&[
                    "exposure".to_string(),
                    inc.exposure_names[e].clone(),
                    String::new(),
                    format!("{}", inc.main[e]),
                ])?;
            }
            for a in 0..m {
                for b in a..m {
                    w.write_record(&[
                        "pair".to_string(),
                        inc.exposure_names[a].clone(),
                        inc.exposure_names[b].clone(),
                        format!("{}", inc.interaction_between(a, b)),
                    ])?;
                }
            }
            Ok(())
        })?;
        let path = dir.join("inclusion.csv");
        write_atomic(&path, &bytes)?;
        written.push(path);
    }

    // Interaction surfaces, one file per exposure pair.
    let with_interactions = draws.effects[0].has_interactions();
    if with_interactions {
        for a in 0..m {
            for b in a..m {
                let grid = interaction_summary(draws, a, b, credible)?;
                let bytes = csv_into_bytes(|w| {
                    w.write_record(["t1", "t2", "mean", "lower", "upper", "flagged"])?;
                    for t1 in 0..t {
                        for t2 in 0..t {
                            w.write_record(&[
                                format!("{}", t1 + 1),
                                format!("{}", t2 + 1),
                                format!("{}", grid.mean[[t1, t2]]),
                                format!("{}", grid.lower[[t1, t2]]),
                                format!("{}", grid.upper[[t1, t2]]),
                                format!("{}", grid.flagged[[t1, t2]]),
                            ])?;
                        }
                    }
                    Ok(())
                })?;
                let path = dir.join(format!(
                    "interaction_{}_{}.csv",
                    sanitize(&marginal.exposure_names[a]),
                    sanitize(&marginal.exposure_names[b])
                ));
                write_atomic(&path, &bytes)?;
                written.push(path);
            }
        }
    }

    let rows = chain_diagnostics(draws);
    let bytes = csv_into_bytes(|w| {
        w.write_record(["parameter", "mean", "ess", "split_rhat"])?;
        for row in &rows {
            w.write_record(&[
                row.name.clone(),
                format!("{}", row.mean),
                format!("{}", row.ess),
                format!("{}", row.rhat),
            ])?;
        }
        Ok(())
    })?;
    let path = dir.join("chain_diagnostics.csv");
    write_atomic(&path, &bytes)?;
    written.push(path);

    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Io(e.to_string()))?;
    let path = dir.join("run_manifest.json");
    write_atomic(&path, text.as_bytes())?;
    written.push(path);

    Ok(written)
}

//! Command-line surface: `fit` runs chains on a panel CSV and writes the
//! output bundle plus a draw archive; `simulate` writes a synthetic panel with
//! its ground truth; `benchmark` scores sampler modes on simulated data;
//! `summarize` recomputes summaries from a stored draw archive. Every run
//! writes a manifest it can be reproduced from bit-identically.

use crate::error::{Error, Result};
use crate::io::{
    ensure_writable_dir, load_panel_csv, load_run_config, manifest_json, read_draws, write_atomic,
    write_draws, write_outputs, write_panel_csv, write_truth_json, RunConfig,
};
use crate::panel::Family;
use crate::sampler::{run_sampler, SamplerMode};
use crate::sim::{
    gen_exposures, gen_scenario1, gen_scenario2, run_benchmark, BenchmarkConfig, BenchmarkReport,
};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Exit code for each error category. 0 is success and 2 is a usage error
/// (unknown flag, malformed value), so library categories start at 3.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 3,
        Error::Io(_) => 4,
        Error::Numeric(_) => 5,
        Error::State(_) => 6,
        Error::Argument(_) => 7,
        Error::Structure(_) => 8,
        Error::Benchmark(_) => 9,
    }
}

fn category(err: &Error) -> (&'static str, &str) {
    match err {
        Error::Argument(m) => ("argument", m),
        Error::Structure(m) => ("structure", m),
        Error::Numeric(m) => ("numeric", m),
        Error::State(m) => ("state", m),
        Error::Config(m) => ("config", m),
        Error::Io(m) => ("io", m),
        Error::Benchmark(m) => ("benchmark", m),
    }
}

#[derive(Parser)]
#[command(
    name = "treelag",
    version,
    about = "Treed distributed lag models: lagged effects, interactions, and critical windows"
)]
struct Cli {
    /// Cap the worker thread pool (default: one thread per CPU).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a panel CSV and write summaries plus a draw archive.
    Fit(FitArgs),
    /// Generate a synthetic panel with known ground truth.
    Simulate(SimulateArgs),
    /// Score sampler modes on replicated synthetic datasets.
    Benchmark(BenchmarkArgs),
    /// Recompute summaries from a stored draw archive without re-sampling.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Panel CSV (falls back to the `inputs.data` entry of --config when that
    /// file is a run manifest).
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// JSON run configuration or a run manifest; flags override its fields.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Model kind: tdlm, tdlmm_full, tdlmm_noself, or tdlmm_additive.
    #[arg(long, value_parser = SamplerMode::from_str)]
    mode: Option<SamplerMode>,
    /// Number of tree pairs in the ensemble.
    #[arg(long, value_name = "A")]
    trees: Option<usize>,
    /// Total MCMC sweeps per chain, including burn-in.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dirichlet concentration of the exposure-selection prior.
    #[arg(long)]
    kappa: Option<f64>,
    /// Tree-prior split probability scale.
    #[arg(long)]
    alpha: Option<f64>,
    /// Tree-prior depth penalty exponent.
    #[arg(long)]
    beta: Option<f64>,
    /// Outcome family: gaussian or bernoulli.
    #[arg(long, value_parser = Family::from_str)]
    family: Option<Family>,
    /// Credible level for reported intervals.
    #[arg(long)]
    credible: Option<f64>,
    /// Outcome column name.
    #[arg(long, value_name = "COLUMN")]
    outcome: Option<String>,
    /// Exposure column prefix; repeat for several (default: inferred).
    #[arg(long = "exposure", value_name = "NAME")]
    exposures: Vec<String>,
    /// Covariate column; repeat for several (default: all remaining columns).
    #[arg(long = "covariate", value_name = "COLUMN")]
    covariates: Vec<String>,
}

/// Parameters of a synthetic-data run; stored in the simulate manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSpec {
    /// 1 = binary outcome, one active window; 2 = continuous outcome with an
    /// exposure interaction.
    pub scenario: u8,
    pub n: usize,
    pub n_lags: usize,
    /// Number of exposures; None picks the scenario default (1 or 5).
    pub n_exposures: Option<usize>,
    /// Scenario-1 target outcome mean.
    pub target_mean: f64,
    /// Scenario-2 noise variance.
    pub noise_variance: f64,
    pub seed: u64,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        SimulateSpec {
            scenario: 1,
            n: 2000,
            n_lags: 20,
            n_exposures: None,
            target_mean: 0.5,
            noise_variance: 25.0,
            seed: 1,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON spec or a simulate manifest; flags override its fields.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory (panel.csv, truth.json, run_manifest.json).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    scenario: Option<u8>,
    #[arg(long)]
    n: Option<usize>,
    /// Number of lags per exposure.
    #[arg(long = "lags", alias = "T", value_name = "T")]
    n_lags: Option<usize>,
    /// Number of exposures (default: 1 for scenario 1, 5 for scenario 2).
    #[arg(long = "exposures", value_name = "M")]
    n_exposures: Option<usize>,
    /// Scenario-1 target outcome mean.
    #[arg(long)]
    target_mean: Option<f64>,
    /// Scenario-2 noise variance.
    #[arg(long)]
    noise_variance: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// JSON benchmark spec or a benchmark manifest; flags override.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    scenario: Option<u8>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "lags", alias = "T", value_name = "T")]
    n_lags: Option<usize>,
    #[arg(long = "exposures", value_name = "M")]
    n_exposures: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    target_mean: Option<f64>,
    #[arg(long)]
    noise_variance: Option<f64>,
    #[arg(long)]
    credible: Option<f64>,
    /// Sampler mode to score; repeat or comma-separate for several
    /// (default: tdlm for scenario 1; the three mixture modes for scenario 2).
    #[arg(long = "mode", value_delimiter = ',', value_parser = SamplerMode::from_str)]
    modes: Vec<SamplerMode>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// A fit output directory holding draws.bin and run_manifest.json.
    #[arg(long, value_name = "DIR")]
    run: PathBuf,
    /// Draw archive to summarize (default: <run>/draws.bin).
    #[arg(long, value_name = "FILE")]
    draws: Option<PathBuf>,
    /// Output directory (default: the run directory itself).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override the credible level stored in the manifest.
    #[arg(long)]
    credible: Option<f64>,
}

/// Parse `argv` and run the selected subcommand, returning the process exit
/// code. Errors are reported as one `error[<category>]: <detail>` line on
/// stderr.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(k) = cli.threads {
        // Ignore the error if a pool already exists (e.g. repeated calls in
        // one process); the first pool wins.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    let result = match cli.command {
        Command::Fit(args) => run_fit(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Benchmark(args) => run_benchmark_cmd(args),
        Command::Summarize(args) => run_summarize(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let (cat, msg) = category(&e);
            eprintln!("error[{cat}]: {msg}");
            exit_code(&e)
        }
    }
}

/// Read a config file as raw JSON, unwrapping a manifest's payload key.
fn read_spec_value(path: &Path, key: &str) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("cannot read config {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("config {} is not valid JSON: {e}", path.display())))?;
    Ok(match value.get(key) {
        Some(inner) => inner.clone(),
        None => value,
    })
}

macro_rules! override_with {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}

fn run_fit(args: FitArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => load_run_config(path)?,
        None => RunConfig::default(),
    };
    // A manifest also remembers which data file the run used.
    let data = match args.data {
        Some(p) => p,
        None => args
            .config
            .as_ref()
            .and_then(|p| manifest_input(p, "data"))
            .ok_or_else(|| {
                Error::Config("no panel file: pass --data or a manifest with inputs.data".into())
            })?,
    };
    override_with!(cfg.sampler.mode, args.mode);
    override_with!(cfg.sampler.n_tree_pairs, args.trees);
    override_with!(cfg.sampler.iterations, args.iterations);
    override_with!(cfg.sampler.burn_in, args.burn_in);
    override_with!(cfg.sampler.thin, args.thin);
    override_with!(cfg.sampler.n_chains, args.chains);
    override_with!(cfg.sampler.seed, args.seed);
    override_with!(cfg.sampler.kappa, args.kappa);
    override_with!(cfg.sampler.tree_prior.alpha, args.alpha);
    override_with!(cfg.sampler.tree_prior.beta, args.beta);
    override_with!(cfg.family, args.family);
    override_with!(cfg.credible, args.credible);
    override_with!(cfg.outcome_column, args.outcome);
    if !args.exposures.is_empty() {
        cfg.exposures = args.exposures;
    }
    if !args.covariates.is_empty() {
        cfg.covariates = args.covariates;
    }
    override_with!(cfg.output_dir, args.out);
    cfg.validate()?;

    let out = cfg.output_dir.clone();
    ensure_writable_dir(&out)?;
    let panel = load_panel_csv(&data, &cfg)?;
    let draws = run_sampler(&panel, &cfg.sampler)?;

    let mut inputs = BTreeMap::new();
    inputs.insert("data".to_string(), data.display().to_string());
    let manifest = manifest_json("fit", &cfg, &inputs);
    let archive = out.join("draws.bin");
    write_draws(&draws, &archive)?;
    let mut files = write_outputs(&draws, &out, cfg.credible, &manifest)?;
    files.push(archive);
    println!(
        "fit: {} chains x {} retained draws",
        draws.n_chains, draws.per_chain
    );
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn manifest_input(config_path: &Path, key: &str) -> Option<PathBuf> {
    let text = fs::read_to_string(config_path).ok()?;
    let value: serde_json::Value = serde_json::from_str(&text).ok()?;
    let s = value.get("inputs")?.get(key)?.as_str()?;
    Some(PathBuf::from(s))
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let mut spec: SimulateSpec = match &args.config {
        Some(path) => serde_json::from_value(read_spec_value(path, "simulate")?)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?,
        None => SimulateSpec::default(),
    };
    override_with!(spec.scenario, args.scenario);
    override_with!(spec.n, args.n);
    override_with!(spec.n_lags, args.n_lags);
    if args.n_exposures.is_some() {
        spec.n_exposures = args.n_exposures;
    }
    override_with!(spec.target_mean, args.target_mean);
    override_with!(spec.noise_variance, args.noise_variance);
    override_with!(spec.seed, args.seed);
    let out = args.out.unwrap_or_else(|| PathBuf::from("treelag_sim"));

    ensure_writable_dir(&out)?;
    let (panel, truth) = generate_scenario(&spec)?;
    write_panel_csv(&panel, &out.join("panel.csv"))?;
    write_truth_json(&truth, &out.join("truth.json"))?;
    let manifest = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "command": "simulate",
        "simulate": spec,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    write_atomic(&out.join("run_manifest.json"), text.as_bytes())?;
    println!(
        "simulate: scenario {} panel n={} T={} M={}",
        spec.scenario,
        panel.outcome.len(),
        panel.exposures.dim().2,
        panel.exposures.dim().1
    );
    for name in ["panel.csv", "truth.json", "run_manifest.json"] {
        println!("wrote {}", out.join(name).display());
    }
    Ok(())
}

/// Generate the panel and truth for a simulation spec, deterministically in
/// the spec (including the seed).
pub fn generate_scenario(spec: &SimulateSpec) -> Result<(crate::panel::LagPanel, crate::sim::ScenarioTruth)> {
    use rand::SeedableRng;
    let m = spec.n_exposures.unwrap_or(match spec.scenario {
        1 => 1,
        _ => 5,
    });
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.seed);
    let exposures = gen_exposures(spec.n, m, spec.n_lags, &mut rng)?;
    match spec.scenario {
        1 => gen_scenario1(spec.n, spec.n_lags, spec.target_mean, exposures, &mut rng),
        2 => gen_scenario2(spec.n, spec.n_lags, spec.noise_variance, exposures, &mut rng),
        other => Err(Error::Config(format!("unknown scenario {other} (expected 1 or 2)"))),
    }
}

fn run_benchmark_cmd(args: BenchmarkArgs) -> Result<()> {
    let (mut cfg, cfg_modes): (BenchmarkConfig, Vec<SamplerMode>) = match &args.config {
        Some(path) => {
            let value = read_spec_value(path, "benchmark")?;
            let modes = match value.get("modes") {
                Some(v) => serde_json::from_value(v.clone())
                    .map_err(|e| Error::Config(format!("config {}: modes: {e}", path.display())))?,
                None => Vec::new(),
            };
            let mut body = value;
            if let Some(map) = body.as_object_mut() {
                map.remove("modes");
            }
            let cfg = serde_json::from_value(body)
                .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
            (cfg, modes)
        }
        None => (BenchmarkConfig::default(), Vec::new()),
    };
    let exposures_explicit = args.n_exposures.is_some() || args.config.is_some();
    override_with!(cfg.scenario, args.scenario);
    override_with!(cfg.n, args.n);
    override_with!(cfg.n_lags, args.n_lags);
    override_with!(cfg.n_exposures, args.n_exposures);
    override_with!(cfg.replicates, args.replicates);
    override_with!(cfg.seed, args.seed);
    override_with!(cfg.target_mean, args.target_mean);
    override_with!(cfg.noise_variance, args.noise_variance);
    override_with!(cfg.credible, args.credible);
    override_with!(cfg.sampler.n_tree_pairs, args.trees);
    override_with!(cfg.sampler.iterations, args.iterations);
    override_with!(cfg.sampler.burn_in, args.burn_in);
    override_with!(cfg.sampler.thin, args.thin);
    override_with!(cfg.sampler.n_chains, args.chains);
    override_with!(cfg.sampler.kappa, args.kappa);
    if cfg.scenario == 2 && !exposures_explicit {
        cfg.n_exposures = 5;
    }
    let modes: Vec<SamplerMode> = if !args.modes.is_empty() {
        args.modes
    } else if !cfg_modes.is_empty() {
        cfg_modes
    } else if cfg.scenario == 1 {
        vec![SamplerMode::Tdlm]
    } else {
        vec![
            SamplerMode::TdlmmAdditive,
            SamplerMode::TdlmmNoself,
            SamplerMode::TdlmmFull,
        ]
    };
    let out = args.out.unwrap_or_else(|| PathBuf::from("treelag_benchmark"));
    ensure_writable_dir(&out)?;

    let report = run_benchmark(&cfg, &modes)?;
    write_benchmark_outputs(&cfg, &modes, &report, &out)?;
    println!(
        "benchmark: scenario {} with {} replicates per mode",
        cfg.scenario, cfg.replicates
    );
    for row in &report.rows {
        println!(
            "  {}: completed {} failed {} rmse {:.4} coverage {:.3} tp {:.3} fp {:.3} precision {:.3}",
            row.mode, row.completed, row.failed, row.score.rmse, row.score.coverage,
            row.score.tp, row.score.fp, row.score.precision
        );
    }
    for name in ["benchmark.csv", "benchmark_pips.csv", "report.json", "run_manifest.json"] {
        println!("wrote {}", out.join(name).display());
    }
    Ok(())
}

fn write_benchmark_outputs(
    cfg: &BenchmarkConfig,
    modes: &[SamplerMode],
    report: &BenchmarkReport,
    out: &Path,
) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record([
            "mode", "completed", "failed", "rmse", "coverage", "tp", "fp", "precision",
            "fp_inactive", "true_pair_top_share",
        ])?;
        for row in &report.rows {
            w.write_record(&[
                row.mode.to_string(),
                format!("{}", row.completed),
                format!("{}", row.failed),
                format!("{}", row.score.rmse),
                format!("{}", row.score.coverage),
                format!("{}", row.score.tp),
                format!("{}", row.score.fp),
                format!("{}", row.score.precision),
                format!("{}", row.fp_inactive),
                row.true_pair_top_share.map(|v| format!("{v}")).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))?;
    }
    write_atomic(&out.join("benchmark.csv"), &buf)?;

    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["mode", "kind", "exposure1", "exposure2", "probability"])?;
        for row in &report.rows {
            for (e, pip) in row.main_pip.iter().enumerate() {
                w.write_record(&[
                    row.mode.to_string(),
                    "exposure".to_string(),
                    format!("{}", e + 1),
                    String::new(),
                    format!("{pip}"),
                ])?;
            }
            if !row.pair_pip.is_empty() {
                let m = row.main_pip.len();
                for a in 0..m {
                    for b in a..m {
                        let q = crate::ensemble::pair_index(a, b, m);
                        w.write_record(&[
                            row.mode.to_string(),
                            "pair".to_string(),
                            format!("{}", a + 1),
                            format!("{}", b + 1),
                            format!("{}", row.pair_pip[q]),
                        ])?;
                    }
                }
            }
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))?;
    }
    write_atomic(&out.join("benchmark_pips.csv"), &buf)?;

    let text = serde_json::to_string_pretty(report).map_err(|e| Error::Io(e.to_string()))?;
    write_atomic(&out.join("report.json"), text.as_bytes())?;

    let mut spec = serde_json::to_value(cfg).map_err(|e| Error::Io(e.to_string()))?;
    if let Some(map) = spec.as_object_mut() {
        map.insert(
            "modes".to_string(),
            serde_json::to_value(modes).map_err(|e| Error::Io(e.to_string()))?,
        );
    }
    let manifest = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "command": "benchmark",
        "benchmark": spec,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    write_atomic(&out.join("run_manifest.json"), text.as_bytes())
}

fn run_summarize(args: SummarizeArgs) -> Result<()> {
    let manifest_path = args.run.join("run_manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::Io(format!("cannot read {}: {e}", manifest_path.display())))?;
    let mut manifest: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", manifest_path.display())))?;
    let stored_credible = manifest
        .get("config")
        .and_then(|c| c.get("credible"))
        .and_then(|v| v.as_f64());
    let credible = args.credible.or(stored_credible).unwrap_or(0.95);
    if !(credible > 0.0 && credible < 1.0) {
        return Err(Error::Config(format!("credible level {credible} is not in (0, 1)")));
    }
    if args.credible.is_some() {
        if let Some(c) = manifest.get_mut("config").and_then(|c| c.as_object_mut()) {
            c.insert("credible".to_string(), serde_json::json!(credible));
        }
    }
    let archive = args.draws.unwrap_or_else(|| args.run.join("draws.bin"));
    let out = args.out.unwrap_or_else(|| args.run.clone());
    let draws = read_draws(&archive)?;
    let files = write_outputs(&draws, &out, credible, &manifest)?;
    println!(
        "summarize: {} draws across {} chains at credible level {credible}",
        draws.n_draws(),
        draws.n_chains
    );
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

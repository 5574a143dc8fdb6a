//! File-level pipeline behind the `kgcrf` binary.
//!
//! Every command returns a [`RunManifest`]; on success the manifest is printed
//! to stdout as JSON and, for commands with an output directory, written as
//! `manifest.json` next to the outputs. Output paths in the manifest are
//! relative to the output directory so identical runs produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use kgcrf::phantom::{forbidden_zone, CorruptionKind, CorruptionSpec, Template};
use kgcrf::{
    estimate_affine, evaluate_energy, exact_marginals, fuse, fuse_probs, load_config, load_graph,
    match_landmarks, mean_field_refine, read_labels, read_tensor, synthesize_ensemble,
    uncertainty_map, write_labels, write_tensor, AffineTransform64, CompatibilityMatrix,
    EngineConfig, Error, FeatureMap64, Grid64, KnowledgeGraph, Landmark, LevelStack, ProbMap64,
    StochasticEnsemble,
};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "KGCRF_THREADS";

/// Exit status of a failed command.
#[derive(Debug)]
pub enum CliError {
    /// Invalid input or arguments; exit code 2.
    Usage(String),
    /// Filesystem failure; exit code 3.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Named output file, relative to the run's output directory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputEntry {
    pub name: String,
    pub path: String,
}

/// Audit record of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub input_paths: Vec<String>,
    /// SHA-256 of the effective configuration's canonical JSON.
    pub config_digest: String,
    pub seed: u64,
    pub outputs: Vec<OutputEntry>,
    pub metrics: BTreeMap<String, Value>,
}

impl RunManifest {
    fn new(command: &str, inputs: &[&Path], cfg: &EngineConfig, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            input_paths: inputs.iter().map(|p| p.display().to_string()).collect(),
            config_digest: config_digest(cfg),
            seed,
            outputs: Vec::new(),
            metrics: BTreeMap::new(),
        }
    }

    fn output(&mut self, name: &str, file: &str) {
        self.outputs.push(OutputEntry {
            name: name.to_string(),
            path: file.to_string(),
        });
    }

    fn metric(&mut self, name: &str, value: impl Into<Value>) {
        self.metrics.insert(name.to_string(), value.into());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Writes `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        write_text(&dir.join("manifest.json"), &self.to_json())
    }
}

pub fn config_digest(cfg: &EngineConfig) -> String {
    hex::encode(Sha256::digest(cfg.to_json().as_bytes()))
}

#[derive(Debug, Parser)]
#[command(name = "kgcrf", version, about = "Knowledge-guided dense CRF refinement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Refine a probability map and write labels, uncertainty and relation scores.
    Refine(RefineArgs),
    /// Fuse multi-level tensors weighted by their uncertainty.
    Fuse(FuseArgs),
    /// Generate a synthetic scene with ground truth.
    Phantom(PhantomArgs),
    /// Dice scores of a predicted label map against the truth.
    Eval(EvalArgs),
    /// Compare mean-field marginals with exact enumeration on a tiny instance.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub prob: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Image landmarks JSON (`[{"name","x","y"}]`) matched by name to the graph's atlas landmarks.
    #[arg(long)]
    pub landmarks: Option<PathBuf>,
    /// Precomputed stochastic probability maps; replaces the synthesized ensemble.
    #[arg(long, num_args = 1..)]
    pub ensemble: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub levels: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    pub uncertainties: Vec<PathBuf>,
    /// Overrides the configured fusion sharpness.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub template: String,
    #[arg(long)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "fragment_swap")]
    pub corruption_kind: String,
    #[arg(long, default_value_t = 0.0)]
    pub corruption_magnitude: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub prob: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Defaults to a graph without nodes or edges.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Runs one parsed command, honouring the thread cap in [`THREADS_ENV`].
pub fn run(cli: Cli) -> CliResult<RunManifest> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?,
        Err(_) => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Refine(a) => cmd_refine(&a),
        Command::Fuse(a) => cmd_fuse(&a),
        Command::Phantom(a) => cmd_phantom(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Oracle(a) => cmd_oracle(&a),
    })
}

fn effective_config(path: Option<&Path>) -> CliResult<EngineConfig> {
    match path {
        Some(p) => Ok(load_config(p)?),
        None => Ok(EngineConfig::default()),
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text.as_bytes()).map_err(|e| io_err(path, e))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn named(what: &str, path: &Path, e: Error) -> CliError {
    match e {
        Error::Io { .. } => CliError::from(e),
        other => CliError::Usage(format!("{what} ({}): {other}", path.display())),
    }
}

fn load_prob(what: &str, path: &Path) -> CliResult<ProbMap64> {
    let grid = read_tensor(path).map_err(|e| named(what, path, e))?;
    ProbMap64::new(grid).map_err(|e| named(what, path, e))
}

fn load_features(path: &Path) -> CliResult<FeatureMap64> {
    let grid = read_tensor(path).map_err(|e| named("features", path, e))?;
    FeatureMap64::new(grid).map_err(|e| named("features", path, e))
}

fn same_lattice(a: (&str, usize, usize), b: (&str, usize, usize)) -> CliResult<()> {
    if (a.1, a.2) != (b.1, b.2) {
        return Err(CliError::Usage(format!(
            "shape mismatch: {} is {}x{} but {} is {}x{}",
            a.0, a.1, a.2, b.0, b.1, b.2
        )));
    }
    Ok(())
}

fn load_landmarks(path: &Path) -> CliResult<Vec<Landmark>> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::Usage(format!("landmarks ({}): {e}", path.display())))
}

fn transform_for(graph: &KnowledgeGraph, landmarks: Option<&Path>) -> CliResult<(AffineTransform64, Option<f64>)> {
    let Some(path) = landmarks else {
        return Ok((AffineTransform64::identity(), None));
    };
    let image = load_landmarks(path)?;
    let (src, dst) = match_landmarks::<f64>(&image, graph.atlas_landmarks());
    let fit = estimate_affine(&src, &dst)?;
    Ok((fit.transform, Some(fit.residual)))
}

fn write_grid(dir: &Path, file: &str, grid: &Grid64) -> CliResult<()> {
    Ok(write_tensor(grid, dir.join(file))?)
}

fn matrix_json(m: &kgcrf::LabelMatrix64) -> Value {
    json!(m.rows())
}

/// Refines `--prob` and writes refined marginals, argmax labels, the
/// uncertainty map with its sidecar, relation scores and the manifest.
pub fn cmd_refine(a: &RefineArgs) -> CliResult<RunManifest> {
    let cfg = effective_config(a.config.as_deref())?;
    let p = load_prob("prob", &a.prob)?;
    let features = load_features(&a.features)?;
    same_lattice(("prob", p.height(), p.width()), ("features", features.height(), features.width()))?;
    let graph = load_graph(&a.graph)?;
    let k = p.num_labels();
    graph
        .check_labels(k)
        .map_err(|e| CliError::Usage(format!("graph ({}) does not fit prob: {e}", a.graph.display())))?;
    let mu = CompatibilityMatrix::from_config(cfg.compatibility.as_ref(), k)?;
    let (transform, residual) = transform_for(&graph, a.landmarks.as_deref())?;

    let refined = mean_field_refine(&p, &features, &mu, &graph, &transform, &cfg)?;
    let labels = refined.q.argmax();

    let ensemble = if a.ensemble.is_empty() {
        synthesize_ensemble(&p, &cfg, a.seed)?
    } else {
        let mut maps = Vec::with_capacity(a.ensemble.len());
        for path in &a.ensemble {
            let m = load_prob("ensemble member", path)?;
            same_lattice(("prob", p.height(), p.width()), ("ensemble member", m.height(), m.width()))?;
            maps.push(m);
        }
        StochasticEnsemble::new(maps)?
    };
    let target = graph.constraint().resized(k);
    let u = uncertainty_map(&ensemble, &target, &refined.scores, &cfg)?;

    let e0 = evaluate_energy(&p.argmax(), &p, &features, &mu, &graph, &transform, &cfg)?;
    let e1 = evaluate_energy(&labels, &p, &features, &mu, &graph, &transform, &cfg)?;

    let out = &a.out_dir;
    ensure_dir(out)?;
    write_grid(out, "refined_prob.npy", refined.q.grid())?;
    write_labels(&labels, out.join("labels.npy"))?;
    write_grid(out, "uncertainty.npy", u.grid())?;
    write_text(
        &out.join("uncertainty.json"),
        &serde_json::to_string_pretty(&u.summary()).expect("summary serializes"),
    )?;
    write_text(
        &out.join("pairwise_scores.json"),
        &serde_json::to_string_pretty(&json!({
            "scores": matrix_json(&refined.scores),
            "target": json!(target.matrix().rows()),
        }))
        .expect("scores serialize"),
    )?;

    let mut inputs: Vec<&Path> = vec![&a.prob, &a.features, &a.graph];
    if let Some(c) = &a.config {
        inputs.push(c);
    }
    if let Some(l) = &a.landmarks {
        inputs.push(l);
    }
    inputs.extend(a.ensemble.iter().map(PathBuf::as_path));
    let mut m = RunManifest::new("refine", &inputs, &cfg, a.seed);
    m.output("refined_prob", "refined_prob.npy");
    m.output("labels", "labels.npy");
    m.output("uncertainty", "uncertainty.npy");
    m.output("uncertainty_summary", "uncertainty.json");
    m.output("pairwise_scores", "pairwise_scores.json");
    m.output("manifest", "manifest.json");
    m.metric("iterations", refined.state.iteration);
    m.metric("final_delta", refined.state.last_delta);
    m.metric("converged", refined.state.converged);
    m.metric("energy_initial", e0);
    m.metric("energy_refined", e1);
    m.metric("violation", u.violation_part());
    m.metric("entropy_max", u.summary().entropy_max);
    m.metric("ensemble_size", ensemble.len());
    if let Some(r) = residual {
        m.metric("landmark_residual", r);
    }
    m.write(out)?;
    if !refined.state.converged {
        eprintln!(
            "refine: not converged after {} iterations (last delta {:e})",
            refined.state.iteration, refined.state.last_delta
        );
    }
    Ok(m)
}

/// Fuses `--levels` with per-level (or one shared) uncertainty maps.
pub fn cmd_fuse(a: &FuseArgs) -> CliResult<RunManifest> {
    let cfg = effective_config(a.config.as_deref())?;
    let beta = a.beta.unwrap_or(cfg.beta);
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(CliError::Usage(format!("beta must be finite and > 0, got {beta}")));
    }
    let n = a.levels.len();
    if a.uncertainties.len() != 1 && a.uncertainties.len() != n {
        return Err(CliError::Usage(format!(
            "{} uncertainty maps for {n} levels; expected 1 or {n}",
            a.uncertainties.len()
        )));
    }
    let mut levels = Vec::with_capacity(n);
    for path in &a.levels {
        levels.push(read_tensor(path).map_err(|e| named("level", path, e))?);
    }
    let mut us = Vec::with_capacity(a.uncertainties.len());
    for path in &a.uncertainties {
        us.push(read_tensor(path).map_err(|e| named("uncertainty", path, e))?);
    }

    let probs: Option<Vec<ProbMap64>> = levels.iter().map(|g| ProbMap64::new(g.clone()).ok()).collect();
    let (fused, weights, as_prob) = match probs {
        Some(ps) if ps.iter().all(|p| p.num_labels() >= 2) => {
            let (f, w) = fuse_probs(&ps, us, beta)?;
            (f.into_grid(), w, true)
        }
        _ => {
            let f = fuse(&LevelStack::new(levels, us)?, beta)?;
            (f.tensor, f.weights, false)
        }
    };
    let stack = Grid64::stack(&weights)?;

    let out = &a.out_dir;
    ensure_dir(out)?;
    write_grid(out, "fused.npy", &fused)?;
    write_grid(out, "weights.npy", &stack)?;

    let mut inputs: Vec<&Path> = a.levels.iter().map(PathBuf::as_path).collect();
    inputs.extend(a.uncertainties.iter().map(PathBuf::as_path));
    if let Some(c) = &a.config {
        inputs.push(c);
    }
    let mut m = RunManifest::new("fuse", &inputs, &cfg, 0);
    m.output("fused", "fused.npy");
    m.output("weights", "weights.npy");
    m.output("manifest", "manifest.json");
    m.metric("beta", beta);
    m.metric("levels", n);
    m.metric("probability_output", as_prob);
    m.write(out)?;
    Ok(m)
}

/// Writes a phantom scene and its corrupted probability map.
pub fn cmd_phantom(a: &PhantomArgs) -> CliResult<RunManifest> {
    let template: Template = a.template.parse()?;
    let kind: CorruptionKind = a.corruption_kind.parse()?;
    let spec = CorruptionSpec::new(kind, a.corruption_magnitude, a.seed)?;
    let scene = kgcrf::generate_scene(template, a.size, a.size, a.seed)?;
    let corrupted = kgcrf::corrupt(&scene, &spec)?;
    let cfg = EngineConfig::default();

    let out = &a.out_dir;
    ensure_dir(out)?;
    write_labels(&scene.truth, out.join("truth.npy"))?;
    write_grid(out, "clean_prob.npy", scene.clean_prob.grid())?;
    write_grid(out, "corrupted_prob.npy", corrupted.grid())?;
    write_grid(out, "features.npy", scene.features.grid())?;
    write_text(&out.join("graph.json"), &scene.graph.to_json())?;
    write_text(
        &out.join("landmarks.json"),
        &serde_json::to_string_pretty(&scene.landmarks).expect("landmarks serialize"),
    )?;

    let base = corrupted.argmax();
    let mut m = RunManifest::new("phantom", &[], &cfg, a.seed);
    for (name, file) in [
        ("truth", "truth.npy"),
        ("clean_prob", "clean_prob.npy"),
        ("corrupted_prob", "corrupted_prob.npy"),
        ("features", "features.npy"),
        ("graph", "graph.json"),
        ("landmarks", "landmarks.json"),
        ("manifest", "manifest.json"),
    ] {
        m.output(name, file);
    }
    m.metric("template", template.name());
    m.metric("size", a.size);
    m.metric("corruption_kind", kind.name());
    m.metric("corruption_magnitude", a.corruption_magnitude);
    m.metric("corrupted_mean_dice", kgcrf::mean_foreground_dice(&base, &scene.truth));
    if let Some(edge) = scene.graph.edges().first() {
        let zone = forbidden_zone(edge, &scene.truth, &scene.to_atlas)?;
        let misplaced = (0..base.pixels())
            .filter(|&p| zone[p] && base.label(p) == edge.source)
            .count();
        m.metric("corrupted_forbidden_pixels", misplaced);
    }
    m.write(out)?;
    Ok(m)
}

/// Per-label and mean foreground Dice of `--pred` against `--truth`.
pub fn cmd_eval(a: &EvalArgs) -> CliResult<RunManifest> {
    let pred = read_labels(&a.pred).map_err(|e| named("pred", &a.pred, e))?;
    let truth = read_labels(&a.truth).map_err(|e| named("truth", &a.truth, e))?;
    same_lattice(("pred", pred.height(), pred.width()), ("truth", truth.height(), truth.width()))?;
    let k = pred.num_labels().max(truth.num_labels());
    let cfg = EngineConfig::default();
    let mut m = RunManifest::new("eval", &[&a.pred, &a.truth], &cfg, 0);
    for l in 0..k {
        m.metric(&format!("dice_{l}"), kgcrf::dice(&pred, &truth, l));
    }
    m.metric("mean_dice", kgcrf::mean_foreground_dice(&pred, &truth));
    if let Some(out) = &a.out_dir {
        ensure_dir(out)?;
        m.output("manifest", "manifest.json");
        m.write(out)?;
    }
    Ok(m)
}

/// Exact and mean-field marginals of a tiny instance, and their max-abs gap.
pub fn cmd_oracle(a: &OracleArgs) -> CliResult<RunManifest> {
    let cfg = effective_config(a.config.as_deref())?;
    let p = load_prob("prob", &a.prob)?;
    let features = load_features(&a.features)?;
    same_lattice(("prob", p.height(), p.width()), ("features", features.height(), features.width()))?;
    let graph = match &a.graph {
        Some(g) => load_graph(g)?,
        None => KnowledgeGraph::empty(),
    };
    let k = p.num_labels();
    graph.check_labels(k)?;
    let mu = CompatibilityMatrix::from_config(cfg.compatibility.as_ref(), k)?;
    let t = AffineTransform64::identity();
    let exact = exact_marginals(&p, &features, &mu, &graph, &t, &cfg)?;
    let mf = mean_field_refine(&p, &features, &mu, &graph, &t, &cfg)?;
    let gap = exact
        .grid()
        .max_abs_diff(mf.q.grid())
        .expect("same lattice");

    let mut inputs: Vec<&Path> = vec![&a.prob, &a.features];
    if let Some(g) = &a.graph {
        inputs.push(g);
    }
    if let Some(c) = &a.config {
        inputs.push(c);
    }
    let mut m = RunManifest::new("oracle", &inputs, &cfg, 0);
    m.metric("max_abs_gap", gap);
    m.metric("iterations", mf.state.iteration);
    m.metric("converged", mf.state.converged);
    if let Some(out) = &a.out_dir {
        ensure_dir(out)?;
        write_grid(out, "exact_marginals.npy", exact.grid())?;
        write_grid(out, "mean_field_marginals.npy", mf.q.grid())?;
        m.output("exact_marginals", "exact_marginals.npy");
        m.output("mean_field_marginals", "mean_field_marginals.npy");
        m.output("manifest", "manifest.json");
        m.write(out)?;
    }
    Ok(m)
}

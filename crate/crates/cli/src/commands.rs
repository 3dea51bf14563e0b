//! Subcommands and their argument definitions.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use piham_core::diff::BlockId;
use piham_core::evaluation::{
    self, accuracy, auc, cross_validate, interpret_memberships, make_folds, posterior_predictive_check, MaeMode,
    Metric,
};
use piham_core::generator::{generate_dataset, GeneratorConfig};
use piham_core::inference::{fit_posterior, LaplaceCovariance, OptimizerSettings, PosteriorEstimate};
use piham_core::matching::{
    dirichlet_mean, gaussian_to_dirichlet, gaussian_to_dirichlet_clamped, lognormal_params, logitnormal_params,
    softmax_point_estimate, GaussianBlock,
};
use piham_core::model::{
    expected_attribute_value, expected_edge_value, AttributeKind, HeterogeneousDataset, LatentState, LayerKind,
    ModelConfig, ObservationMask,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::ingest::{ingest, write_dataset, DatasetMeta, Ingested};
use crate::manifest::AttributeSpec;
use crate::model_file::{FittedModel, FittedModelFile, LayerRecord, MapRecord};
use crate::output::{write_file_atomic, Staging};
use crate::reports::{cv_tables, fmt_f, fmt_opt, target_kind, target_name, Table};

#[derive(Debug, Parser)]
#[command(name = "piham", version, about = "Probabilistic inference on heterogeneous attributed multilayer networks")]
pub struct Cli {
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true, env = "PIHAM_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic dataset with known communities.
    Generate(GenerateArgs),
    /// Fit the model (MAP and optionally Laplace covariances).
    Fit(FitArgs),
    /// Cross-validate over a range of K.
    Cv(CvArgs),
    /// Expected values of a fitted model on a dataset.
    Predict(PredictArgs),
    /// Posterior-predictive check of a fitted model.
    Ppc(PpcArgs),
    /// Interpretable memberships and affinities from a fitted model.
    Interpret(InterpretArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OptimizerArgs {
    /// Random restarts of the optimizer.
    #[arg(long, default_value_t = 50)]
    pub restarts: usize,
    /// Maximum Adam iterations per restart.
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    /// Stop when the objective changes by less than this.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Score diagonal entries `(i, i)` of every layer.
    #[arg(long)]
    pub self_loops: bool,
}

impl OptimizerArgs {
    fn settings(&self) -> CliResult<OptimizerSettings> {
        let s = OptimizerSettings {
            learning_rate: self.lr,
            max_iterations: self.iters,
            tolerance: self.tol,
            n_restarts: self.restarts,
            rng_seed: self.seed,
            ..OptimizerSettings::default()
        };
        s.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(s)
    }

    fn config(&self, k: usize) -> CliResult<ModelConfig> {
        let config = ModelConfig { include_self_loops: self.self_loops, ..ModelConfig::new(k) };
        config.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    /// JSON file with `n_nodes`, `k`, `seed`, `layers` and `attributes`; all optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[command(flatten)]
    pub opt: OptimizerArgs,
    /// Also compute Laplace covariance blocks (needed by `ppc` and `interpret`).
    #[arg(long)]
    pub with_covariance: bool,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KRange {
    pub first: usize,
    pub last: usize,
}

fn parse_k_range(s: &str) -> Result<KRange, String> {
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("'{t}' is not a nonnegative integer"));
    let (first, last) = match s.split_once("..").or_else(|| s.split_once('-')).or_else(|| s.split_once(':')) {
        Some((a, b)) => (parse(a)?, parse(b.trim_start_matches('='))?),
        None => {
            let k = parse(s)?;
            (k, k)
        }
    };
    if first == 0 || last < first {
        return Err(format!("K range '{s}' must satisfy 1 <= first <= last"));
    }
    Ok(KRange { first, last })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MaeArg {
    Mean,
    Max,
}

#[derive(Debug, Clone, Args)]
pub struct CvArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Inclusive range such as `1..10`, or a single K.
    #[arg(long, value_parser = parse_k_range, default_value = "1..10")]
    pub k_range: KRange,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[command(flatten)]
    pub opt: OptimizerArgs,
    /// Mean or maximum absolute error for count data.
    #[arg(long, value_enum, default_value_t = MaeArg::Mean)]
    pub mae: MaeArg,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// CSV with header `item,node,other` listing the entries to predict:
    /// a layer name with source and target, or an attribute name with a node
    /// and an empty `other`. Defaults to every scored entry.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PpcArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Number of replicated datasets.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct InterpretArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Clamp nonpositive Dirichlet parameters instead of failing.
    #[arg(long)]
    pub clamp_alpha: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parse `args` (program name first), run the command and return the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("piham: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.threads {
        Some(0) => Err(CliError::usage("--threads must be at least 1")),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| CliError::usage(format!("cannot start {t} threads: {e}")))?;
            pool.install(|| dispatch(cli.command))
        }
        None => dispatch(cli.command),
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Cv(a) => cmd_cv(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Ppc(a) => cmd_ppc(&a),
        Command::Interpret(a) => cmd_interpret(&a),
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfigFile {
    pub n_nodes: Option<usize>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub layers: Option<Vec<LayerRecord>>,
    pub attributes: Option<Vec<AttributeSpec>>,
}

#[derive(Debug, Clone, Serialize)]
struct TruthFile<'a> {
    k: usize,
    seed: u64,
    node_labels: &'a [String],
    hard_groups: &'a [usize],
    /// `softmax(U_i)` per node.
    memberships_out: Vec<Vec<f64>>,
    /// `softmax(V_i)` per node.
    memberships_in: Vec<Vec<f64>>,
    latent: MapRecord,
}

fn unique_names(base: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(base.len());
    for (i, name) in base.into_iter().enumerate() {
        if out.contains(&name) {
            out.push(format!("{name}_{i}"));
        } else {
            out.push(name);
        }
    }
    out
}

fn rows(flat: &[f64], k: usize) -> Vec<Vec<f64>> {
    flat.chunks(k).map(<[f64]>::to_vec).collect()
}

pub fn cmd_generate(args: &GenerateArgs) -> CliResult<()> {
    let file = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::data(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str::<GenerateConfigFile>(&text)
                .map_err(|e| CliError::data(format!("{}: {e}", p.display())))?
        }
        None => GenerateConfigFile::default(),
    };
    let n = args.n.or(file.n_nodes).unwrap_or(200);
    let k = args.k.or(file.k).unwrap_or(3);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let mut config = GeneratorConfig::new(n, k, seed);
    let mut layer_names: Vec<String> = config.layers.iter().map(|l| l.name().to_string()).collect();
    let mut attribute_names: Vec<String> = vec!["categorical".into(), "count".into(), "gaussian".into()];
    let mut category_labels: Vec<Option<Vec<String>>> = vec![None; config.attributes.len()];
    if let Some(layers) = &file.layers {
        config.layers = layers.iter().map(LayerRecord::layer_kind).collect::<CliResult<_>>()?;
        layer_names = layers.iter().map(|l| l.name.clone()).collect();
    }
    if let Some(attrs) = &file.attributes {
        config.attributes = attrs.iter().map(AttributeSpec::attribute_kind).collect::<CliResult<_>>()?;
        attribute_names = attrs.iter().map(|a| a.name.clone()).collect();
        category_labels = attrs.iter().map(|a| a.categories.clone()).collect();
    }
    config.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let (mut dataset, truth) = generate_dataset(&config)?;
    let node_labels: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
    dataset.set_node_labels(node_labels.clone())?;
    let meta = DatasetMeta {
        node_labels,
        layer_names: unique_names(layer_names),
        attribute_names: unique_names(attribute_names),
        category_labels: config
            .attributes
            .iter()
            .zip(category_labels)
            .map(|(a, labels)| match a {
                AttributeKind::Categorical { categories } => {
                    Some(labels.unwrap_or_else(|| (0..*categories).map(|z| z.to_string()).collect()))
                }
                _ => None,
            })
            .collect(),
    };

    let mut stage = Staging::new(&args.out)?;
    write_dataset(&dataset, &meta, &mut stage)?;
    let state = &truth.latent;
    let layout = state.layout();
    let truth_file = TruthFile {
        k,
        seed,
        node_labels: &meta.node_labels,
        hard_groups: &truth.hard_groups,
        memberships_out: rows(&truth.memberships_out, k),
        memberships_in: rows(&truth.memberships_in, k),
        latent: MapRecord {
            u: (0..n).map(|i| state.u_row(i).to_vec()).collect(),
            v: (0..n).map(|i| state.v_row(i).to_vec()).collect(),
            w: (0..layout.n_layers()).map(|l| state.w(l).to_vec()).collect(),
            h: (0..layout.n_attributes()).map(|x| state.h(x).to_vec()).collect(),
        },
    };
    let mut bytes = serde_json::to_vec_pretty(&truth_file)?;
    bytes.push(b'\n');
    stage.write("truth.json", &bytes)?;
    stage.commit()?;
    println!("generated N={n} K={k} seed={seed} into {}", args.out.display());
    Ok(())
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    let settings = args.opt.settings()?;
    let config = args.opt.config(args.k)?;
    let Ingested { dataset, meta } = ingest(&args.manifest)?;
    let mask = ObservationMask::full(&dataset);
    let posterior = fit_posterior(&dataset, &mask, &config, &settings, args.with_covariance)?;
    let file = FittedModelFile::from_fit(
        &posterior,
        &config,
        &settings,
        &dataset.layer_kinds(),
        &dataset.attribute_kinds(),
        &meta,
    )?;
    write_file_atomic(&args.out, &file.to_bytes()?)?;
    let converged = posterior.restarts.iter().filter(|r| r.converged).count();
    println!(
        "fitted K={}: log-posterior {} (restart {}, {converged}/{} converged), checksum {}",
        config.k,
        fmt_f(posterior.final_log_posterior),
        posterior.best_restart,
        settings.n_restarts,
        file.checksum
    );
    Ok(())
}

pub fn cmd_cv(args: &CvArgs) -> CliResult<()> {
    let settings = args.opt.settings()?;
    if args.folds < 2 {
        return Err(CliError::usage("--folds must be at least 2"));
    }
    let configs = (args.k_range.first..=args.k_range.last)
        .map(|k| args.opt.config(k))
        .collect::<CliResult<Vec<_>>>()?;
    let Ingested { dataset, meta } = ingest(&args.manifest)?;
    let plan = make_folds(&dataset, args.folds, args.opt.seed, args.opt.self_loops)?;
    let mae_mode = match args.mae {
        MaeArg::Mean => MaeMode::Mean,
        MaeArg::Max => MaeMode::Max,
    };
    let mut results = Vec::with_capacity(configs.len());
    for config in &configs {
        let report = cross_validate(&dataset, config, &settings, &plan, mae_mode)?;
        eprintln!("cv K={} done", config.k);
        results.push((config.k, report));
    }
    let tables = cv_tables(&results, &meta);
    let mut stage = Staging::new(&args.out)?;
    stage.write("cv_table.csv", &tables.per_k.to_csv()?)?;
    stage.write("best_k.csv", &tables.best_k.to_csv()?)?;
    stage.write("baselines.csv", &tables.baselines.to_csv()?)?;
    stage.write("folds.csv", &tables.folds.to_csv()?)?;
    stage.commit()?;
    for row in &tables.best_k.rows {
        println!("{} {}: best K = {}", row[1], row[2], if row[3].is_empty() { "none" } else { &row[3] });
    }
    Ok(())
}

/// Map each dataset node to the model's node with the same label.
fn node_permutation(model: &FittedModel, dataset_labels: &[String]) -> CliResult<Vec<usize>> {
    let index: std::collections::HashMap<&str, usize> =
        model.meta.node_labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    if dataset_labels.len() != index.len() {
        return Err(CliError::data(format!(
            "dataset has {} nodes, the model {}",
            dataset_labels.len(),
            index.len()
        )));
    }
    dataset_labels
        .iter()
        .map(|l| index.get(l.as_str()).copied().ok_or_else(|| CliError::data(format!("node '{l}' is not in the model"))))
        .collect()
}

fn check_compatible(model: &FittedModel, ingested: &Ingested) -> CliResult<Vec<usize>> {
    let ds = &ingested.dataset;
    if ds.directed() != model.posterior.map_state.layout().directed() {
        return Err(CliError::data("dataset and model differ in directedness"));
    }
    if ds.layer_kinds() != model.layer_kinds || ingested.meta.layer_names != model.meta.layer_names {
        return Err(CliError::data("dataset layers do not match the model's layers"));
    }
    if ds.attribute_kinds() != model.attribute_kinds
        || ingested.meta.attribute_names != model.meta.attribute_names
        || ingested.meta.category_labels != model.meta.category_labels
    {
        return Err(CliError::data("dataset attributes do not match the model's attributes"));
    }
    node_permutation(model, &ingested.meta.node_labels)
}

/// The model's posterior with nodes reordered to the dataset's order.
fn aligned_posterior(model: &FittedModel, perm: &[usize]) -> CliResult<PosteriorEstimate> {
    let src = &model.posterior.map_state;
    let layout = src.layout().clone();
    let mut state = LatentState::zeros(layout.clone());
    for (i, &p) in perm.iter().enumerate() {
        state.u_row_mut(i).copy_from_slice(src.u_row(p));
        if layout.directed() {
            state.v_row_mut(i).copy_from_slice(src.v_row(p));
        }
    }
    for l in 0..layout.n_layers() {
        state.w_mut(l).copy_from_slice(src.w(l));
    }
    for x in 0..layout.n_attributes() {
        state.h_mut(x).copy_from_slice(src.h(x));
    }
    let covariance = match &model.posterior.covariance {
        None => None,
        Some(c) => {
            let mut blocks = c.blocks.clone();
            for b in &mut blocks {
                let source = match b.id {
                    BlockId::U(i) => Some(BlockId::U(perm[i])),
                    BlockId::V(i) => Some(BlockId::V(perm[i])),
                    _ => None,
                };
                if let Some(s) = source {
                    let orig = c.get(s).ok_or_else(|| CliError::data(format!("model lacks covariance block {s}")))?;
                    b.covariance = orig.covariance.clone();
                    b.jitter = orig.jitter;
                }
            }
            Some(LaplaceCovariance { blocks, gradient_inf_norm: c.gradient_inf_norm })
        }
    };
    Ok(PosteriorEstimate { map_state: state, covariance, ..model.posterior.clone() })
}

enum Entry {
    Edge { layer: usize, i: usize, j: usize },
    Attr { x: usize, i: usize },
}

fn read_mask(path: &Path, ingested: &Ingested) -> CliResult<Vec<Entry>> {
    let meta = &ingested.meta;
    let node = |label: &str, line: u64| {
        meta.node_labels.iter().position(|l| l == label).ok_or_else(|| {
            CliError::data(format!("{}: line {line}: unknown node '{label}'", path.display()))
        })
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())))?;
    let head: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if head != ["item", "node", "other"] {
        return Err(CliError::data(format!("{}: header must be 'item,node,other'", path.display())));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let i = node(&rec[1], line)?;
        if let Some(layer) = meta.layer_names.iter().position(|n| n == &rec[0]) {
            out.push(Entry::Edge { layer, i, j: node(&rec[2], line)? });
        } else if let Some(x) = meta.attribute_names.iter().position(|n| n == &rec[0]) {
            if !rec[2].is_empty() {
                return Err(CliError::data(format!("{}: line {line}: attribute entries take no 'other'", path.display())));
            }
            out.push(Entry::Attr { x, i });
        } else {
            return Err(CliError::data(format!(
                "{}: line {line}: '{}' is neither a layer nor an attribute",
                path.display(),
                &rec[0]
            )));
        }
    }
    Ok(out)
}

fn all_entries(dataset: &HeterogeneousDataset, self_loops: bool) -> Vec<Entry> {
    let n = dataset.n_nodes();
    let mut out = Vec::new();
    for layer in 0..dataset.layers().len() {
        for i in 0..n {
            for j in 0..n {
                let scored = if i == j { self_loops } else { dataset.directed() || i < j };
                if scored {
                    out.push(Entry::Edge { layer, i, j });
                }
            }
        }
    }
    for x in 0..dataset.attributes().len() {
        out.extend((0..n).map(|i| Entry::Attr { x, i }));
    }
    out
}

pub fn cmd_predict(args: &PredictArgs) -> CliResult<()> {
    let model = FittedModelFile::load(&args.model)?.to_model()?;
    let ingested = ingest(&args.manifest)?;
    let perm = check_compatible(&model, &ingested)?;
    let posterior = aligned_posterior(&model, &perm)?;
    let ds = &ingested.dataset;
    let meta = &ingested.meta;
    let entries = match &args.mask {
        Some(p) => read_mask(p, &ingested)?,
        None => all_entries(ds, model.config.include_self_loops),
    };

    let n_layers = ds.layers().len();
    let n_attrs = ds.attributes().len();
    let mut edge_pairs: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_layers];
    let mut attr_pairs: Vec<Vec<(Vec<f64>, f64)>> = vec![Vec::new(); n_attrs];
    let mut edges = Table::new(&["layer", "source", "target", "observed", "expected"]);
    let mut attrs = Table::new(&["attribute", "node", "observed", "expected", "probabilities"]);
    for e in &entries {
        match *e {
            Entry::Edge { layer, i, j } => {
                let lambda = expected_edge_value(ds, &posterior.map_state, layer, i, j)?;
                let obs = ds.layers()[layer].get(i, j);
                edge_pairs[layer].push((lambda, obs));
                edges.push(vec![
                    meta.layer_names[layer].clone(),
                    meta.node_labels[i].clone(),
                    meta.node_labels[j].clone(),
                    fmt_f(obs),
                    fmt_f(lambda),
                ]);
            }
            Entry::Attr { x, i } => {
                let pi = expected_attribute_value(ds, &posterior.map_state, i, x)?;
                let obs = ds.attributes()[x].values()[i];
                let row = match &meta.category_labels[x] {
                    Some(labels) => vec![
                        meta.attribute_names[x].clone(),
                        meta.node_labels[i].clone(),
                        labels[obs as usize].clone(),
                        labels[evaluation::argmax(&pi)].clone(),
                        pi.iter().map(|p| fmt_f(*p)).collect::<Vec<_>>().join(";"),
                    ],
                    None => vec![
                        meta.attribute_names[x].clone(),
                        meta.node_labels[i].clone(),
                        fmt_f(obs),
                        fmt_f(pi[0]),
                        String::new(),
                    ],
                };
                attrs.push(row);
                attr_pairs[x].push((pi, obs));
            }
        }
    }

    let mut metrics = Table::new(&["kind", "name", "metric", "value", "count"]);
    for (l, pairs) in edge_pairs.iter().enumerate() {
        if pairs.is_empty() {
            continue;
        }
        let kind = ds.layers()[l].kind();
        let metric = evaluation::layer_metric(kind);
        let (pred, obs): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let value = match metric {
            Metric::Auc => auc(&pairs.iter().map(|&(p, a)| (p, a != 0.0)).collect::<Vec<_>>()),
            Metric::Mae => Some(evaluation::mae(&pred, &obs, MaeMode::Mean)?),
            _ => Some(evaluation::rmse(&pred, &obs)?),
        };
        metrics.push(vec!["layer".into(), meta.layer_names[l].clone(), metric.name().into(), fmt_opt(value), pairs.len().to_string()]);
    }
    for (x, pairs) in attr_pairs.iter().enumerate() {
        if pairs.is_empty() {
            continue;
        }
        let kind = ds.attributes()[x].kind();
        let metric = evaluation::attribute_metric(kind);
        let value = match kind {
            AttributeKind::Categorical { .. } => {
                let probs: Vec<Vec<f64>> = pairs.iter().map(|p| p.0.clone()).collect();
                let obs: Vec<usize> = pairs.iter().map(|p| p.1 as usize).collect();
                accuracy(&probs, &obs)?
            }
            AttributeKind::Poisson => {
                let (pred, obs): (Vec<f64>, Vec<f64>) = pairs.iter().map(|p| (p.0[0], p.1)).unzip();
                evaluation::mae(&pred, &obs, MaeMode::Mean)?
            }
            AttributeKind::Gaussian { .. } => {
                let (pred, obs): (Vec<f64>, Vec<f64>) = pairs.iter().map(|p| (p.0[0], p.1)).unzip();
                evaluation::rmse(&pred, &obs)?
            }
        };
        metrics.push(vec![
            "attribute".into(),
            meta.attribute_names[x].clone(),
            metric.name().into(),
            fmt_f(value),
            pairs.len().to_string(),
        ]);
    }

    let mut stage = Staging::new(&args.out)?;
    stage.write("edges.csv", &edges.to_csv()?)?;
    stage.write("attributes.csv", &attrs.to_csv()?)?;
    stage.write("metrics.csv", &metrics.to_csv()?)?;
    stage.commit()?;
    for row in &metrics.rows {
        println!("{} {}: {} = {}", row[0], row[1], row[2], row[3]);
    }
    Ok(())
}

fn require_covariance(model: &FittedModel, path: &Path) -> CliResult<()> {
    if model.posterior.covariance.is_none() {
        return Err(CliError::data(format!(
            "{} has no covariance blocks; refit with --with-covariance",
            path.display()
        )));
    }
    Ok(())
}

pub fn cmd_ppc(args: &PpcArgs) -> CliResult<()> {
    if args.n == 0 {
        return Err(CliError::usage("--n must be at least 1"));
    }
    let model = FittedModelFile::load(&args.model)?.to_model()?;
    require_covariance(&model, &args.model)?;
    let ingested = ingest(&args.manifest)?;
    let perm = check_compatible(&model, &ingested)?;
    let posterior = aligned_posterior(&model, &perm)?;
    let series = posterior_predictive_check(&ingested.dataset, &posterior, &model.config, args.n, args.seed)?;

    let mut points = Table::new(&["kind", "name", "metric", "replica", "to_data", "to_replica"]);
    let mut summary = Table::new(&["kind", "name", "metric", "fraction_above_diagonal"]);
    for s in &series {
        let name = target_name(s.target, &ingested.meta);
        for (r, p) in s.points.iter().enumerate() {
            points.push(vec![
                target_kind(s.target).into(),
                name.clone(),
                s.metric.name().into(),
                r.to_string(),
                fmt_f(p.to_data),
                fmt_f(p.to_replica),
            ]);
        }
        summary.push(vec![target_kind(s.target).into(), name, s.metric.name().into(), fmt_f(s.fraction_above_diagonal())]);
    }
    let mut stage = Staging::new(&args.out)?;
    stage.write("ppc_points.csv", &points.to_csv()?)?;
    stage.write("ppc_summary.csv", &summary.to_csv()?)?;
    stage.commit()?;
    for row in &summary.rows {
        println!("{} {} ({}): {} above the diagonal", row[0], row[1], row[2], row[3]);
    }
    Ok(())
}

pub fn cmd_interpret(args: &InterpretArgs) -> CliResult<()> {
    let model = FittedModelFile::load(&args.model)?.to_model()?;
    require_covariance(&model, &args.model)?;
    let posterior = &model.posterior;
    let layout = posterior.map_state.layout();
    let (n, k) = (layout.n_nodes(), layout.k());
    let roles: &[(bool, &str)] = if layout.directed() { &[(true, "out"), (false, "in")] } else { &[(true, "out")] };

    let mut memberships = Table::new(&["node", "role", "community", "softmax", "dirichlet_mean", "alpha"]);
    let mut interpretation = Table::new(&["node", "role", "overlap", "barycenter_variance"]);
    for &(out_role, role) in roles {
        let summary = interpret_memberships(posterior, out_role)?;
        for i in 0..n {
            let id = if out_role { BlockId::U(i) } else { BlockId::V(i) };
            let g = posterior.gaussian_block(id)?;
            let alpha = if args.clamp_alpha { gaussian_to_dirichlet_clamped(&g)? } else { gaussian_to_dirichlet(&g)? };
            let mean = dirichlet_mean(&alpha);
            let soft = softmax_point_estimate(g.mean())?;
            for c in 0..k {
                memberships.push(vec![
                    model.meta.node_labels[i].clone(),
                    role.into(),
                    c.to_string(),
                    fmt_f(soft[c]),
                    fmt_f(mean[c]),
                    fmt_f(alpha.alpha()[c]),
                ]);
            }
            interpretation.push(vec![
                model.meta.node_labels[i].clone(),
                role.into(),
                fmt_f(summary.overlap[i]),
                fmt_f(summary.barycenter_variance[i]),
            ]);
        }
    }

    let mut affinities = Table::new(&["layer", "row", "col", "map", "link_median", "link_mean"]);
    for l in 0..layout.n_layers() {
        let g: GaussianBlock = posterior.gaussian_block(BlockId::W(l))?;
        let (medians, means): (Vec<f64>, Vec<f64>) = match model.layer_kinds[l] {
            LayerKind::Bernoulli => logitnormal_params(&g).iter().map(|d| (d.median(), d.mean())).unzip(),
            LayerKind::Poisson => lognormal_params(&g).iter().map(|d| (d.median(), d.mean())).unzip(),
            LayerKind::Gaussian { .. } => (g.mean().to_vec(), g.mean().to_vec()),
        };
        for (idx, &m) in g.mean().iter().enumerate() {
            affinities.push(vec![
                model.meta.layer_names[l].clone(),
                (idx / k).to_string(),
                (idx % k).to_string(),
                fmt_f(m),
                fmt_f(medians[idx]),
                fmt_f(means[idx]),
            ]);
        }
    }

    let mut stage = Staging::new(&args.out)?;
    stage.write("memberships.csv", &memberships.to_csv()?)?;
    stage.write("interpretation.csv", &interpretation.to_csv()?)?;
    stage.write("affinities.csv", &affinities.to_csv()?)?;
    stage.commit()?;
    println!("interpreted {n} nodes, K={k}, into {}", args.out.display());
    Ok(())
}

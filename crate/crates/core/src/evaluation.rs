//! Cross-validation, prediction metrics, posterior-predictive checks,
//! community-recovery scoring and posterior interpretation.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diff::BlockId;
use crate::generator;
use crate::inference::{fit_map, OptimizerSettings, PosteriorEstimate};
use crate::math;
use crate::model::{
    AttributeKind, Forward, HeterogeneousDataset, LatentState, Layer, LayerKind, ModelConfig, ObservationMask,
};
use crate::par;
use crate::{Error, Result};

/// Standard deviation of Gaussian layers in posterior-predictive replicas.
pub const PPC_GAUSSIAN_SD: f64 = 0.1;
/// Largest `K` for which [`cosine_recovery`] searches permutations exhaustively.
pub const EXACT_ALIGNMENT_MAX_K: usize = 8;

/// Assignment of every held-out-able entry to one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    n_folds: usize,
    rng_seed: u64,
    n_nodes: usize,
    /// Per layer, row-major `N x N`; `None` for entries never scored (the diagonal
    /// unless self-loops are included).
    edge_folds: Vec<Vec<Option<u32>>>,
    attribute_folds: Vec<Vec<u32>>,
}

impl FoldPlan {
    pub fn n_folds(&self) -> usize {
        self.n_folds
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn edge_fold(&self, layer: usize, i: usize, j: usize) -> Option<usize> {
        self.edge_folds[layer][i * self.n_nodes + j].map(|f| f as usize)
    }

    pub fn attribute_fold(&self, x: usize, i: usize) -> usize {
        self.attribute_folds[x][i] as usize
    }

    fn mask(&self, fold: usize, held_out: bool) -> ObservationMask {
        let n = self.n_nodes;
        let mut mask = ObservationMask {
            n_nodes: n,
            edges: Vec::with_capacity(self.edge_folds.len()),
            attributes: Vec::with_capacity(self.attribute_folds.len()),
        };
        for folds in &self.edge_folds {
            mask.edges.push(folds.iter().map(|f| f.is_some_and(|f| (f as usize == fold) == held_out)).collect());
        }
        for folds in &self.attribute_folds {
            mask.attributes.push(folds.iter().map(|&f| (f as usize == fold) == held_out).collect());
        }
        mask
    }

    /// Entries outside `fold`.
    pub fn train_mask(&self, fold: usize) -> ObservationMask {
        self.mask(fold, false)
    }

    /// Entries inside `fold`.
    pub fn test_mask(&self, fold: usize) -> ObservationMask {
        self.mask(fold, true)
    }
}

fn shuffled_folds(count: usize, n_folds: usize, seed: u64, stream: u64, what: &str) -> Result<Vec<u32>> {
    if count < n_folds {
        return Err(Error::InvalidData(format!("{what} has {count} entries, fewer than {n_folds} folds")));
    }
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    order.shuffle(&mut rng);
    let mut folds = vec![0u32; count];
    for (pos, &entry) in order.iter().enumerate() {
        folds[entry] = (pos % n_folds) as u32;
    }
    Ok(folds)
}

/// Uniform random partition of the edge triples `(l, i, j)` (one class,
/// shared across layers) and, separately, of each attribute's entries.
/// Undirected datasets assign unordered pairs so both directions share a fold.
pub fn make_folds(
    dataset: &HeterogeneousDataset,
    n_folds: usize,
    seed: u64,
    include_self_loops: bool,
) -> Result<FoldPlan> {
    if n_folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {n_folds}")));
    }
    let n = dataset.n_nodes();
    let directed = dataset.directed();
    let mut slots = Vec::new();
    for l in 0..dataset.layers().len() {
        for i in 0..n {
            for j in 0..n {
                let scored = if i == j { include_self_loops } else { directed || i < j };
                if scored {
                    slots.push((l, i, j));
                }
            }
        }
    }
    let mut edge_folds = vec![vec![None; n * n]; dataset.layers().len()];
    if !slots.is_empty() {
        let folds = shuffled_folds(slots.len(), n_folds, seed, 0, "edge triples")?;
        for (&(l, i, j), &f) in slots.iter().zip(&folds) {
            edge_folds[l][i * n + j] = Some(f);
            if !directed {
                edge_folds[l][j * n + i] = Some(f);
            }
        }
    }
    let attribute_folds = (0..dataset.attributes().len())
        .map(|x| shuffled_folds(n, n_folds, seed, 1 + x as u64, &format!("attribute {x}")))
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldPlan { n_folds, rng_seed: seed, n_nodes: n, edge_folds, attribute_folds })
}

/// Area under the ROC curve from average ranks; ties count one half.
/// `None` when either class is empty.
pub fn auc(scores: &[(f64, bool)]) -> Option<f64> {
    let n_pos = scores.iter().filter(|s| s.1).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]].0 == scores[order[start]].0 {
            end += 1;
        }
        let avg_rank = (start + end) as f64 / 2.0 + 1.0;
        for &idx in &order[start..=end] {
            if scores[idx].1 {
                rank_sum += avg_rank;
            }
        }
        start = end + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaeMode {
    /// Mean absolute error.
    #[default]
    Mean,
    /// Maximum absolute error.
    Max,
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("{a} predictions for {b} observations")));
    }
    if a == 0 {
        return Err(Error::InvalidArgument("metric of an empty set".into()));
    }
    Ok(())
}

pub fn mae(predictions: &[f64], observations: &[f64], mode: MaeMode) -> Result<f64> {
    check_lengths(predictions.len(), observations.len())?;
    let abs = predictions.iter().zip(observations).map(|(p, o)| (p - o).abs());
    Ok(match mode {
        MaeMode::Mean => abs.sum::<f64>() / predictions.len() as f64,
        MaeMode::Max => abs.fold(0.0, f64::max),
    })
}

pub fn rmse(predictions: &[f64], observations: &[f64]) -> Result<f64> {
    check_lengths(predictions.len(), observations.len())?;
    let sq: f64 = predictions.iter().zip(observations).map(|(p, o)| (p - o) * (p - o)).sum();
    Ok(math::sqrt(sq / predictions.len() as f64))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    (0..values.len()).fold(0, |best, z| if values[z] > values[best] { z } else { best })
}

/// Fraction of rows whose argmax equals the observed category.
pub fn accuracy(probabilities: &[Vec<f64>], observations: &[usize]) -> Result<f64> {
    check_lengths(probabilities.len(), observations.len())?;
    let hits = probabilities.iter().zip(observations).filter(|(p, &o)| argmax(p) == o).count();
    Ok(hits as f64 / observations.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Layer(usize),
    Attribute(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Auc,
    Mae,
    Rmse,
    Accuracy,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Auc => "auc",
            Metric::Mae => "mae",
            Metric::Rmse => "rmse",
            Metric::Accuracy => "accuracy",
        }
    }

    pub fn higher_is_better(&self) -> bool {
        matches!(self, Metric::Auc | Metric::Accuracy)
    }
}

/// Metric scored for each data type.
pub fn layer_metric(kind: LayerKind) -> Metric {
    match kind {
        LayerKind::Bernoulli => Metric::Auc,
        LayerKind::Poisson => Metric::Mae,
        LayerKind::Gaussian { .. } => Metric::Rmse,
    }
}

pub fn attribute_metric(kind: AttributeKind) -> Metric {
    match kind {
        AttributeKind::Categorical { .. } => Metric::Accuracy,
        AttributeKind::Poisson => Metric::Mae,
        AttributeKind::Gaussian { .. } => Metric::Rmse,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator); 0 for a single value.
    pub sd: f64,
    pub count: usize,
}

pub fn summarize(values: &[Option<f64>]) -> Option<Summary> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return None;
    }
    let n = present.len() as f64;
    let mean = present.iter().sum::<f64>() / n;
    let sd = if present.len() > 1 {
        math::sqrt(present.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0))
    } else {
        0.0
    };
    Some(Summary { mean, sd, count: present.len() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

/// One metric on one layer or attribute across folds.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub target: Target,
    pub metric: Metric,
    /// `None` for folds that failed or had no scorable entries.
    pub values: Vec<Option<f64>>,
    pub baselines: Vec<Baseline>,
}

impl MetricSeries {
    pub fn summary(&self) -> Option<Summary> {
        summarize(&self.values)
    }

    pub fn baseline(&self, name: &str) -> Option<Summary> {
        self.baselines.iter().find(|b| b.name == name).and_then(|b| summarize(&b.values))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub n_folds: usize,
    pub series: Vec<MetricSeries>,
    pub fold_log_posteriors: Vec<Option<f64>>,
    pub fold_failures: Vec<Option<String>>,
}

impl EvaluationReport {
    pub fn get(&self, target: Target) -> Option<&MetricSeries> {
        self.series.iter().find(|s| s.target == target)
    }
}

pub const BASELINE_REFERENCE: &str = "reference";
pub const BASELINE_TRAIN_MEAN: &str = "train_mean";
pub const BASELINE_MAX_FREQUENCY: &str = "max_frequency";
pub const BASELINE_UNIFORM: &str = "uniform";

struct FoldScores {
    /// Per target: metric value and named baselines.
    targets: Vec<(Option<f64>, Vec<(&'static str, Option<f64>)>)>,
}

fn scored_pair(directed: bool, include_self_loops: bool, i: usize, j: usize) -> bool {
    if i == j {
        include_self_loops
    } else {
        directed || i < j
    }
}

fn score_fold(
    dataset: &HeterogeneousDataset,
    state: &LatentState,
    config: &ModelConfig,
    train: &ObservationMask,
    test: &ObservationMask,
    mae_mode: MaeMode,
) -> FoldScores {
    let n = dataset.n_nodes();
    let fwd = Forward::new(dataset, state);
    let k = fwd.k;
    let directed = dataset.directed();
    let mut targets = Vec::new();
    let mut a = vec![0.0; k];
    let mut row = vec![0.0; n];
    for (l, layer) in dataset.layers().iter().enumerate() {
        let (mut train_sum, mut train_count) = (0.0, 0usize);
        let mut pred = Vec::new();
        let mut obs = Vec::new();
        for i in 0..n {
            layer.fill_row(i, &mut row);
            fwd.source_factor(l, i, &mut a);
            for j in 0..n {
                if !scored_pair(directed, config.include_self_loops, i, j) {
                    continue;
                }
                if train.edge(l, i, j) {
                    train_sum += row[j];
                    train_count += 1;
                }
                if test.edge(l, i, j) {
                    pred.push(math::dot(&a, fwd.sv_row(j)));
                    obs.push(row[j]);
                }
            }
        }
        let train_mean = (train_count > 0).then(|| train_sum / train_count as f64);
        let entry = match layer.kind() {
            LayerKind::Bernoulli => {
                let scores: Vec<(f64, bool)> = pred.iter().zip(&obs).map(|(&p, &o)| (p, o != 0.0)).collect();
                (auc(&scores), vec![(BASELINE_REFERENCE, Some(0.5))])
            }
            LayerKind::Poisson => {
                let base = train_mean.and_then(|m| mae(&vec![m; obs.len()], &obs, mae_mode).ok());
                (mae(&pred, &obs, mae_mode).ok(), vec![(BASELINE_TRAIN_MEAN, base)])
            }
            LayerKind::Gaussian { .. } => {
                let base = train_mean.and_then(|m| rmse(&vec![m; obs.len()], &obs).ok());
                (rmse(&pred, &obs).ok(), vec![(BASELINE_TRAIN_MEAN, base)])
            }
        };
        targets.push(entry);
    }

    for (x, attr) in dataset.attributes().iter().enumerate() {
        let kind = attr.kind();
        let width = kind.width();
        let mut pi = vec![0.0; width];
        let train_values: Vec<f64> = (0..n).filter(|&i| train.attribute(x, i)).map(|i| attr.values()[i]).collect();
        let test_nodes: Vec<usize> = (0..n).filter(|&i| test.attribute(x, i)).collect();
        let obs: Vec<f64> = test_nodes.iter().map(|&i| attr.values()[i]).collect();
        let train_mean =
            (!train_values.is_empty()).then(|| train_values.iter().sum::<f64>() / train_values.len() as f64);
        let entry = match kind {
            AttributeKind::Categorical { categories } => {
                let probs: Vec<Vec<f64>> = test_nodes
                    .iter()
                    .map(|&i| {
                        fwd.pi(x, width, i, &mut pi);
                        pi.clone()
                    })
                    .collect();
                let observed: Vec<usize> = obs.iter().map(|&v| v as usize).collect();
                let mut freq = vec![0.0; categories];
                for &v in &train_values {
                    freq[v as usize] += 1.0;
                }
                let majority = argmax(&freq);
                let base = (!train_values.is_empty() && !observed.is_empty())
                    .then(|| observed.iter().filter(|&&o| o == majority).count() as f64 / observed.len() as f64);
                (
                    accuracy(&probs, &observed).ok(),
                    vec![(BASELINE_MAX_FREQUENCY, base), (BASELINE_UNIFORM, Some(1.0 / categories as f64))],
                )
            }
            AttributeKind::Poisson | AttributeKind::Gaussian { .. } => {
                let pred: Vec<f64> = test_nodes
                    .iter()
                    .map(|&i| {
                        fwd.pi(x, width, i, &mut pi);
                        pi[0]
                    })
                    .collect();
                let constant = train_mean.map(|m| vec![m; obs.len()]);
                if kind == AttributeKind::Poisson {
                    let base = constant.and_then(|c| mae(&c, &obs, mae_mode).ok());
                    (mae(&pred, &obs, mae_mode).ok(), vec![(BASELINE_TRAIN_MEAN, base)])
                } else {
                    let base = constant.and_then(|c| rmse(&c, &obs).ok());
                    (rmse(&pred, &obs).ok(), vec![(BASELINE_TRAIN_MEAN, base)])
                }
            }
        };
        targets.push(entry);
    }
    FoldScores { targets }
}

/// Fit on the complement of each fold and score its held-out entries against
/// baselines computed from the training entries. A failed fit is recorded
/// for its fold and does not abort the others.
pub fn cross_validate(
    dataset: &HeterogeneousDataset,
    config: &ModelConfig,
    settings: &OptimizerSettings,
    plan: &FoldPlan,
    mae_mode: MaeMode,
) -> Result<EvaluationReport> {
    config.validate()?;
    settings.validate()?;
    if plan.n_nodes != dataset.n_nodes()
        || plan.edge_folds.len() != dataset.layers().len()
        || plan.attribute_folds.len() != dataset.attributes().len()
    {
        return Err(Error::DimensionMismatch("fold plan does not match the dataset".into()));
    }
    let folds = par::map_indexed(plan.n_folds, |f| {
        let train = plan.train_mask(f);
        let test = plan.test_mask(f);
        fit_map(dataset, &train, config, settings)
            .map(|fit| (fit.final_log_posterior, score_fold(dataset, &fit.state, config, &train, &test, mae_mode)))
    });

    let mut targets: Vec<(Target, Metric)> = dataset
        .layers()
        .iter()
        .enumerate()
        .map(|(l, layer)| (Target::Layer(l), layer_metric(layer.kind())))
        .collect();
    targets.extend(
        dataset.attributes().iter().enumerate().map(|(x, a)| (Target::Attribute(x), attribute_metric(a.kind()))),
    );
    let mut series: Vec<MetricSeries> = targets
        .iter()
        .map(|&(target, metric)| MetricSeries { target, metric, values: Vec::new(), baselines: Vec::new() })
        .collect();
    let mut fold_log_posteriors = Vec::new();
    let mut fold_failures = Vec::new();
    for fold in folds {
        match fold {
            Ok((lp, scores)) => {
                fold_log_posteriors.push(Some(lp));
                fold_failures.push(None);
                for (s, (value, baselines)) in series.iter_mut().zip(scores.targets) {
                    s.values.push(value);
                    for (name, v) in baselines {
                        match s.baselines.iter_mut().find(|b| b.name == name) {
                            Some(b) => b.values.push(v),
                            None => {
                                let mut values = vec![None; s.values.len() - 1];
                                values.push(v);
                                s.baselines.push(Baseline { name: name.to_string(), values });
                            }
                        }
                    }
                }
            }
            Err(e) => {
                fold_log_posteriors.push(None);
                fold_failures.push(Some(e.to_string()));
                for s in series.iter_mut() {
                    s.values.push(None);
                    for b in s.baselines.iter_mut() {
                        b.values.push(None);
                    }
                }
            }
        }
    }
    for s in series.iter_mut() {
        for b in s.baselines.iter_mut() {
            b.values.resize(plan.n_folds, None);
        }
    }
    Ok(EvaluationReport { n_folds: plan.n_folds, series, fold_log_posteriors, fold_failures })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PpcMetric {
    LogLoss,
    Rmse,
    OneMinusAccuracy,
    Mae,
}

impl PpcMetric {
    pub fn name(&self) -> &'static str {
        match self {
            PpcMetric::LogLoss => "log_loss",
            PpcMetric::Rmse => "rmse",
            PpcMetric::OneMinusAccuracy => "one_minus_accuracy",
            PpcMetric::Mae => "mae",
        }
    }
}

pub fn layer_ppc_metric(kind: LayerKind) -> PpcMetric {
    match kind {
        LayerKind::Bernoulli => PpcMetric::LogLoss,
        LayerKind::Poisson => PpcMetric::Mae,
        LayerKind::Gaussian { .. } => PpcMetric::Rmse,
    }
}

pub fn attribute_ppc_metric(kind: AttributeKind) -> PpcMetric {
    match kind {
        AttributeKind::Categorical { .. } => PpcMetric::OneMinusAccuracy,
        AttributeKind::Poisson => PpcMetric::Mae,
        AttributeKind::Gaussian { .. } => PpcMetric::Rmse,
    }
}

fn paired_distance(metric: PpcMetric, a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(1) as f64;
    match metric {
        // each entry of `a` is scored as a probability for the outcome in `b`
        PpcMetric::LogLoss => {
            a.iter()
                .zip(b)
                .map(|(&p, &y)| {
                    let q = if y != 0.0 { p } else { 1.0 - p };
                    -math::ln(q.clamp(math::PROB_FLOOR, 1.0))
                })
                .sum::<f64>()
                / n
        }
        PpcMetric::Rmse => math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n),
        PpcMetric::OneMinusAccuracy => a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / n,
        PpcMetric::Mae => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n,
    }
}

fn layer_values(layer: &Layer, directed: bool, include_self_loops: bool) -> Vec<f64> {
    let n = layer.n_nodes();
    let mut row = vec![0.0; n];
    let mut out = Vec::new();
    for i in 0..n {
        layer.fill_row(i, &mut row);
        for (j, &v) in row.iter().enumerate() {
            if scored_pair(directed, include_self_loops, i, j) {
                out.push(v);
            }
        }
    }
    out
}

/// Distance between two realizations of a layer over its scored pairs.
pub fn layer_distance(a: &Layer, b: &Layer, directed: bool, include_self_loops: bool) -> Result<f64> {
    if a.n_nodes() != b.n_nodes() || a.kind() != b.kind() {
        return Err(Error::DimensionMismatch("layers differ in size or kind".into()));
    }
    Ok(paired_distance(
        layer_ppc_metric(a.kind()),
        &layer_values(a, directed, include_self_loops),
        &layer_values(b, directed, include_self_loops),
    ))
}

/// Distance between two realizations of an attribute column.
pub fn attribute_distance(kind: AttributeKind, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} entries", a.len(), b.len())));
    }
    Ok(paired_distance(attribute_ppc_metric(kind), a, b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpcPoint {
    pub to_data: f64,
    pub to_replica: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpcSeries {
    pub target: Target,
    pub metric: PpcMetric,
    pub points: Vec<PpcPoint>,
}

impl PpcSeries {
    /// Fraction of points with `to_replica >= to_data`.
    pub fn fraction_above_diagonal(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        self.points.iter().filter(|p| p.to_replica >= p.to_data).count() as f64 / self.points.len() as f64
    }
}

/// Sampler of latent states from the block Gaussians of a posterior.
pub struct PosteriorSampler {
    mean: LatentState,
    factors: Vec<(usize, DMatrix<f64>)>,
}

impl PosteriorSampler {
    pub fn new(posterior: &PosteriorEstimate) -> Result<Self> {
        let cov = posterior
            .covariance
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("posterior sampling needs covariance blocks".into()))?;
        let layout = posterior.map_state.layout();
        let mut factors = Vec::with_capacity(cov.blocks.len());
        for id in BlockId::all(layout) {
            let block = cov
                .get(id)
                .ok_or_else(|| Error::InvalidArgument(format!("missing covariance block {id}")))?;
            let chol = Cholesky::new(block.covariance.clone()).ok_or_else(|| Error::NotPositiveDefinite {
                block: id.to_string(),
                max_jitter: block.jitter,
            })?;
            factors.push((id.range(layout).0, chol.l()));
        }
        Ok(Self { mean: posterior.map_state.clone(), factors })
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> LatentState {
        let mut state = self.mean.clone();
        for (offset, l) in &self.factors {
            let d = l.nrows();
            let z = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(rng)));
            let shift = l * z;
            for c in 0..d {
                state.values_mut()[offset + c] += shift[c];
            }
        }
        state
    }
}

struct Replica {
    layers: Vec<Layer>,
    attributes: Vec<Vec<f64>>,
}

fn draw_replica(
    sampler: &PosteriorSampler,
    layer_kinds: &[LayerKind],
    attribute_kinds: &[AttributeKind],
    include_self_loops: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Replica> {
    let theta = sampler.sample(rng);
    let layers = (0..layer_kinds.len())
        .map(|l| generator::sample_layer(layer_kinds, &theta, l, include_self_loops, rng))
        .collect::<Result<Vec<_>>>()?;
    let attributes = (0..attribute_kinds.len())
        .map(|x| generator::sample_attribute(attribute_kinds, &theta, x, rng).map(|a| a.values().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Replica { layers, attributes })
}

/// For each of `n_samples` replicas drawn from the posterior predictive,
/// its distance to the observed data and to an independent second replica.
/// Gaussian layers are replicated with standard deviation [`PPC_GAUSSIAN_SD`].
pub fn posterior_predictive_check(
    dataset: &HeterogeneousDataset,
    posterior: &PosteriorEstimate,
    config: &ModelConfig,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<PpcSeries>> {
    posterior.map_state.layout().check_dataset(dataset)?;
    let sampler = PosteriorSampler::new(posterior)?;
    let directed = dataset.directed();
    let loops = config.include_self_loops;
    let layer_kinds: Vec<LayerKind> = dataset
        .layer_kinds()
        .into_iter()
        .map(|k| match k {
            LayerKind::Gaussian { .. } => LayerKind::Gaussian { variance: PPC_GAUSSIAN_SD * PPC_GAUSSIAN_SD },
            other => other,
        })
        .collect();
    let attribute_kinds = dataset.attribute_kinds();
    // observed layers re-typed so kinds match the replicas
    let observed: Vec<Layer> = dataset
        .layers()
        .iter()
        .zip(&layer_kinds)
        .map(|(layer, &kind)| Layer::from_dense(kind, layer.n_nodes(), &layer.to_dense()))
        .collect::<Result<_>>()?;

    let per_sample = par::map_indexed(n_samples, |s| -> Result<Vec<PpcPoint>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        let first = draw_replica(&sampler, &layer_kinds, &attribute_kinds, loops, &mut rng)?;
        let second = draw_replica(&sampler, &layer_kinds, &attribute_kinds, loops, &mut rng)?;
        let mut points = Vec::new();
        for l in 0..observed.len() {
            points.push(PpcPoint {
                to_data: layer_distance(&first.layers[l], &observed[l], directed, loops)?,
                to_replica: layer_distance(&first.layers[l], &second.layers[l], directed, loops)?,
            });
        }
        for (x, kind) in attribute_kinds.iter().enumerate() {
            points.push(PpcPoint {
                to_data: attribute_distance(*kind, &first.attributes[x], dataset.attributes()[x].values())?,
                to_replica: attribute_distance(*kind, &first.attributes[x], &second.attributes[x])?,
            });
        }
        Ok(points)
    });

    let mut series: Vec<PpcSeries> = layer_kinds
        .iter()
        .enumerate()
        .map(|(l, &k)| PpcSeries { target: Target::Layer(l), metric: layer_ppc_metric(k), points: Vec::new() })
        .chain(attribute_kinds.iter().enumerate().map(|(x, &k)| PpcSeries {
            target: Target::Attribute(x),
            metric: attribute_ppc_metric(k),
            points: Vec::new(),
        }))
        .collect();
    for points in per_sample {
        for (s, p) in series.iter_mut().zip(points?) {
            s.points.push(p);
        }
    }
    Ok(series)
}

const MIN_GRID: usize = (1 << 13) + 1;
const MAX_GRID: usize = (1 << 20) + 1;

struct Grid {
    lo: f64,
    step: f64,
    points: usize,
}

impl Grid {
    fn for_components(components: &[(f64, f64)]) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("no components".into()));
        }
        for &(m, v) in components {
            if !m.is_finite() || !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("invalid component N({m}, {v})")));
            }
        }
        let sd_max = components.iter().map(|c| math::sqrt(c.1)).fold(0.0, f64::max);
        let sd_min = components.iter().map(|c| math::sqrt(c.1)).fold(f64::INFINITY, f64::min);
        let lo = components.iter().map(|c| c.0).fold(f64::INFINITY, f64::min) - 8.0 * sd_max;
        let hi = components.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max) + 8.0 * sd_max;
        let wanted = ((hi - lo) / (sd_min / 16.0)) as usize + 1;
        let points = wanted.clamp(MIN_GRID, MAX_GRID);
        Ok(Self { lo, step: (hi - lo) / (points - 1) as f64, points })
    }

    fn x(&self, idx: usize) -> f64 {
        self.lo + idx as f64 * self.step
    }

    /// Trapezoid rule over the grid of `f`.
    fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for idx in 0..self.points {
            let w = if idx == 0 || idx + 1 == self.points { 0.5 } else { 1.0 };
            acc += w * f(self.x(idx));
        }
        acc * self.step
    }
}

fn density(x: f64, (mean, variance): (f64, f64)) -> f64 {
    math::exp(math::normal_ln_pdf(x, mean, variance))
}

/// Mean over unordered pairs of `1 - IAE / 2`, where IAE is the integrated
/// absolute difference of the two densities. Components are `(mean, variance)`.
pub fn overlap(components: &[(f64, f64)]) -> Result<f64> {
    if components.len() < 2 {
        return Err(Error::InvalidArgument("overlap needs at least two components".into()));
    }
    let grid = Grid::for_components(components)?;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..components.len() {
        for b in a + 1..components.len() {
            let iae = grid.integrate(|x| (density(x, components[a]) - density(x, components[b])).abs());
            total += (1.0 - 0.5 * iae).clamp(0.0, 1.0);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Variance of the uniform mixture `(1/K) sum_k N(mean_k, variance_k)`
/// from trapezoid moments on the overlap grid.
pub fn barycenter_variance(components: &[(f64, f64)]) -> Result<f64> {
    let grid = Grid::for_components(components)?;
    let k = components.len() as f64;
    let b = |x: f64| components.iter().map(|&c| density(x, c)).sum::<f64>() / k;
    let mass = grid.integrate(b);
    let mean = grid.integrate(|x| x * b(x)) / mass;
    let var = grid.integrate(|x| (x - mean) * (x - mean) * b(x)) / mass;
    Ok(var.max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpretationSummary {
    pub overlap: Vec<f64>,
    pub barycenter_variance: Vec<f64>,
}

/// Per-node overlap and barycenter variance of the `K` marginal posteriors
/// of the membership row (`U_i` when `out_role`, else `V_i`).
pub fn interpret_memberships(posterior: &PosteriorEstimate, out_role: bool) -> Result<InterpretationSummary> {
    let layout = posterior.map_state.layout();
    let n = layout.n_nodes();
    let results = par::map_indexed(n, |i| -> Result<(f64, f64)> {
        let id = if out_role || !layout.directed() { BlockId::U(i) } else { BlockId::V(i) };
        let g = posterior.gaussian_block(id)?;
        let comps: Vec<(f64, f64)> = g.mean().iter().copied().zip(g.variance_diag().iter().copied()).collect();
        let ov = if comps.len() >= 2 { overlap(&comps)? } else { 1.0 };
        Ok((ov, barycenter_variance(&comps)?))
    });
    let mut summary = InterpretationSummary { overlap: Vec::with_capacity(n), barycenter_variance: Vec::with_capacity(n) };
    for r in results {
        let (ov, bv) = r?;
        summary.overlap.push(ov);
        summary.barycenter_variance.push(bv);
    }
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlignmentMode {
    /// Exhaustive search over permutations; `K <= 8`.
    #[default]
    Exact,
    /// Exhaustive up to `K = 8`, greedy assignment above.
    Approximate,
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..k).collect();
    heap_permute(k, &mut current, &mut out);
    out
}

fn heap_permute(n: usize, items: &mut [usize], out: &mut Vec<Vec<usize>>) {
    if n <= 1 {
        out.push(items.to_vec());
        return;
    }
    for i in 0..n - 1 {
        heap_permute(n - 1, items, out);
        if n % 2 == 0 {
            items.swap(i, n - 1);
        } else {
            items.swap(0, n - 1);
        }
    }
    heap_permute(n - 1, items, out);
}

/// Mean over nodes of the cosine similarity between inferred and true
/// membership rows, maximized over relabelings of the inferred communities.
/// Both matrices are row-major `N x K`; rows with zero norm score 0.
pub fn cosine_recovery(inferred: &[f64], truth: &[f64], k: usize, mode: AlignmentMode) -> Result<f64> {
    if k == 0 || inferred.len() != truth.len() || inferred.len() % k != 0 {
        return Err(Error::DimensionMismatch(format!(
            "inferred has {} entries, truth {}, K = {k}",
            inferred.len(),
            truth.len()
        )));
    }
    if k > EXACT_ALIGNMENT_MAX_K && mode == AlignmentMode::Exact {
        return Err(Error::InvalidArgument(format!(
            "exact alignment supports K <= {EXACT_ALIGNMENT_MAX_K}, got {k}; enable approximate mode"
        )));
    }
    let n = inferred.len() / k;
    if n == 0 {
        return Err(Error::InvalidArgument("no nodes".into()));
    }
    // c[a][b]: mean over nodes of inferred column a against true column b, row-normalized
    let mut c = vec![0.0; k * k];
    for i in 0..n {
        let p = &inferred[i * k..(i + 1) * k];
        let t = &truth[i * k..(i + 1) * k];
        let norm = math::sqrt(math::dot(p, p)) * math::sqrt(math::dot(t, t));
        if norm == 0.0 {
            continue;
        }
        for a in 0..k {
            for b in 0..k {
                c[a * k + b] += p[a] * t[b] / norm;
            }
        }
    }
    c.iter_mut().for_each(|v| *v /= n as f64);
    let score = |perm: &[usize]| (0..k).map(|b| c[perm[b] * k + b]).sum::<f64>();
    if k <= EXACT_ALIGNMENT_MAX_K {
        return Ok(permutations(k).iter().map(|p| score(p)).fold(f64::NEG_INFINITY, f64::max));
    }
    let mut used_a = vec![false; k];
    let mut used_b = vec![false; k];
    let mut perm = vec![0; k];
    for _ in 0..k {
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for a in (0..k).filter(|&a| !used_a[a]) {
            for b in (0..k).filter(|&b| !used_b[b]) {
                if c[a * k + b] > best.0 {
                    best = (c[a * k + b], a, b);
                }
            }
        }
        used_a[best.1] = true;
        used_b[best.2] = true;
        perm[best.2] = best.1;
    }
    Ok(score(&perm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{generate_dataset, GeneratorConfig};
    use crate::inference::fit_posterior;
    use crate::model::{Attribute, Layer};
    use proptest::prelude::*;

    fn brute_auc(scores: &[(f64, bool)]) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for p in scores.iter().filter(|s| s.1) {
            for q in scores.iter().filter(|s| !s.1) {
                den += 1.0;
                num += if p.0 > q.0 {
                    1.0
                } else if p.0 == q.0 {
                    0.5
                } else {
                    0.0
                };
            }
        }
        (den > 0.0).then(|| num / den)
    }

    fn phi(x: f64) -> f64 {
        0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[(0.9, true), (0.1, false), (0.8, true), (0.3, false)]), Some(1.0));
        assert_eq!(auc(&[(0.5, true), (0.5, false), (0.5, true)]), Some(0.5));
        assert_eq!(auc(&[(0.9, true), (0.4, false), (0.6, true)]), Some(1.0));
        assert_eq!(auc(&[(0.4, true), (0.9, false), (0.6, true)]), Some(0.0));
        assert_eq!(brute_auc(&[(0.4, true), (0.9, false), (0.6, true)]), Some(0.0));
        assert_eq!(auc(&[(0.4, true), (0.5, true)]), None);
    }

    #[test]
    fn regression_metric_examples() {
        let same = [1.0, 2.5, 3.0];
        assert_eq!(mae(&same, &same, MaeMode::Mean).unwrap(), 0.0);
        assert_eq!(rmse(&same, &same).unwrap(), 0.0);
        assert_eq!(mae(&[1.0, 3.0], &[2.0, 2.0], MaeMode::Mean).unwrap(), 1.0);
        assert_eq!(rmse(&[1.0, 3.0], &[2.0, 2.0]).unwrap(), 1.0);
        assert_eq!(mae(&[1.0, 5.0], &[2.0, 2.0], MaeMode::Max).unwrap(), 3.0);
        assert!(mae(&[], &[], MaeMode::Mean).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        let probs = vec![vec![0.2, 0.8], vec![0.6, 0.4]];
        assert_eq!(accuracy(&probs, &[1, 1]).unwrap(), 0.5);
        assert_eq!(accuracy(&[vec![0.5, 0.5]], &[0]).unwrap(), 1.0);
    }

    fn small_dataset(n: usize, directed: bool) -> HeterogeneousDataset {
        let edges: Vec<(usize, usize, f64)> =
            (0..n).flat_map(|i| [(i, (i + 1) % n, 1.0), ((i + 1) % n, i, 1.0)]).collect();
        let edges: Vec<_> = if directed { edges } else { edges };
        HeterogeneousDataset::new(n, directed)
            .with_layer(Layer::from_edges(LayerKind::Bernoulli, n, &edges).unwrap())
            .unwrap()
            .with_attribute(Attribute::new(AttributeKind::Poisson, (0..n).map(|i| (i % 3) as f64).collect()).unwrap())
            .unwrap()
    }

    #[test]
    fn folds_partition_entries() {
        let ds = small_dataset(10, true);
        let plan = make_folds(&ds, 5, 3, false).unwrap();
        let mut sizes = [0usize; 5];
        for i in 0..10 {
            assert_eq!(plan.edge_fold(0, i, i), None);
            for j in 0..10 {
                if let Some(f) = plan.edge_fold(0, i, j) {
                    sizes[f] += 1;
                }
            }
        }
        assert_eq!(sizes, [18; 5]);
        let mut attr = [0usize; 5];
        for i in 0..10 {
            attr[plan.attribute_fold(0, i)] += 1;
        }
        assert_eq!(attr, [2; 5]);

        let mut covered = 0;
        for f in 0..5 {
            let (train, test) = (plan.train_mask(f), plan.test_mask(f));
            for i in 0..10 {
                for j in 0..10 {
                    assert!(!(train.edge(0, i, j) && test.edge(0, i, j)));
                    covered += usize::from(test.edge(0, i, j));
                    assert_eq!(train.edge(0, i, j) || test.edge(0, i, j), i != j);
                }
            }
        }
        assert_eq!(covered, 90);
        assert_eq!(plan, make_folds(&ds, 5, 3, false).unwrap());
        assert_ne!(plan, make_folds(&ds, 5, 4, false).unwrap());
        assert!(make_folds(&ds, 1, 3, false).is_err());
        assert!(make_folds(&ds, 11, 3, false).is_err());
    }

    #[test]
    fn undirected_folds_share_unordered_pairs() {
        let ds = small_dataset(8, false);
        let plan = make_folds(&ds, 4, 1, false).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(plan.edge_fold(0, i, j), plan.edge_fold(0, j, i));
            }
        }
    }

    #[test]
    fn cross_validation_shape_and_baselines() {
        let (ds, _) = generate_dataset(&GeneratorConfig::new(30, 2, 5)).unwrap();
        let config = ModelConfig::new(2);
        let settings = OptimizerSettings { n_restarts: 2, max_iterations: 150, rng_seed: 1, ..Default::default() };
        let plan = make_folds(&ds, 3, 2, false).unwrap();
        let report = cross_validate(&ds, &config, &settings, &plan, MaeMode::Mean).unwrap();
        assert_eq!(report.series.len(), 6);
        assert!(report.fold_failures.iter().all(|f| f.is_none()));
        for s in &report.series {
            assert_eq!(s.values.len(), 3);
            assert!(s.baselines.iter().all(|b| b.values.len() == 3));
        }
        assert_eq!(report.get(Target::Layer(0)).unwrap().metric, Metric::Auc);
        assert_eq!(report.get(Target::Attribute(0)).unwrap().metric, Metric::Accuracy);

        // brute-force train-mean baseline for the Poisson attribute
        let series = report.get(Target::Attribute(1)).unwrap();
        let values = ds.attributes()[1].values();
        for f in 0..3 {
            let train: Vec<f64> = (0..30).filter(|&i| plan.attribute_fold(1, i) != f).map(|i| values[i]).collect();
            let test: Vec<f64> = (0..30).filter(|&i| plan.attribute_fold(1, i) == f).map(|i| values[i]).collect();
            let m = train.iter().sum::<f64>() / train.len() as f64;
            let expected = test.iter().map(|v| (v - m).abs()).sum::<f64>() / test.len() as f64;
            let got = series.baselines[0].values[f].unwrap();
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn summary_statistics() {
        let s = summarize(&[Some(1.0), None, Some(3.0)]).unwrap();
        assert_eq!((s.mean, s.count), (2.0, 2));
        assert!((s.sd - 2f64.sqrt()).abs() < 1e-15);
        assert!(summarize(&[None]).is_none());
    }

    #[test]
    fn overlap_examples() {
        assert!((overlap(&[(0.3, 1.0), (0.3, 1.0)]).unwrap() - 1.0).abs() < 1e-6);
        let expected = 2.0 * phi(-1.0);
        assert!((overlap(&[(0.0, 1.0), (2.0, 1.0)]).unwrap() - expected).abs() < 1e-6);
        assert!((expected - 0.31731).abs() < 1e-5);
        assert!(overlap(&[(0.0, 1.0), (40.0, 1.0)]).unwrap() < 1e-9);
        assert!(overlap(&[(0.0, 1.0)]).is_err());
        assert!(overlap(&[(0.0, 1.0), (0.0, 0.0)]).is_err());
    }

    #[test]
    fn barycenter_examples() {
        assert!((barycenter_variance(&[(1.0, 0.7); 3]).unwrap() - 0.7).abs() < 1e-4);
        assert!((barycenter_variance(&[(-2.0, 1.0), (2.0, 1.0)]).unwrap() - 5.0).abs() < 1e-3);
        // narrow components stay resolved
        assert!((barycenter_variance(&[(0.0, 1e-6), (0.0, 1e-6)]).unwrap() - 1e-6).abs() < 1e-9);
    }

    #[test]
    fn cosine_recovery_examples() {
        let truth = [0.9, 0.1, 0.0, 0.2, 0.7, 0.1, 0.0, 0.0, 1.0];
        assert!((cosine_recovery(&truth, &truth, 3, AlignmentMode::Exact).unwrap() - 1.0).abs() < 1e-12);
        let permuted: Vec<f64> = truth.chunks(3).flat_map(|r| [r[2], r[0], r[1]]).collect();
        assert!((cosine_recovery(&permuted, &truth, 3, AlignmentMode::Exact).unwrap() - 1.0).abs() < 1e-12);
        let a = [1.0, 0.0, 1.0, 0.0];
        let b = [0.0, 1.0, 0.0, 1.0];
        let one_hot_truth = [1.0, 0.0, 0.0, 1.0];
        let orth = [0.0, 0.0, 0.0, 0.0];
        assert_eq!(cosine_recovery(&orth, &one_hot_truth, 2, AlignmentMode::Exact).unwrap(), 0.0);
        assert!((cosine_recovery(&a, &b, 2, AlignmentMode::Exact).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosine_recovery(&[0.0; 9], &[0.0; 9], 9, AlignmentMode::Exact).is_err());
        assert!(cosine_recovery(&[1.0; 9], &[1.0; 9], 9, AlignmentMode::Approximate).is_ok());
        assert_eq!(permutations(4).len(), 24);
    }

    #[test]
    fn cosine_recovery_of_orthogonal_rows_is_zero() {
        // every inferred row is orthogonal to its truth row under every relabeling
        let truth = [1.0, 0.0, 1.0, 0.0];
        let inferred = [0.0, 0.0, 0.0, 0.0];
        assert_eq!(cosine_recovery(&inferred, &truth, 2, AlignmentMode::Exact).unwrap(), 0.0);
        let truth3 = [1.0, 0.0, 0.0];
        let inf3 = [0.0, 0.5, 0.5];
        let got = cosine_recovery(&inf3, &truth3, 3, AlignmentMode::Exact).unwrap();
        assert!((got - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ppc_self_distance_is_zero_and_shapes_hold() {
        let (ds, _) = generate_dataset(&GeneratorConfig::new(20, 2, 7)).unwrap();
        for layer in ds.layers() {
            assert_eq!(layer_distance(layer, layer, true, false).unwrap(), 0.0);
        }
        for attr in ds.attributes() {
            assert_eq!(attribute_distance(attr.kind(), attr.values(), attr.values()).unwrap(), 0.0);
        }
        let config = ModelConfig::new(2);
        let settings = OptimizerSettings { n_restarts: 1, max_iterations: 100, ..Default::default() };
        let post = fit_posterior(&ds, &ObservationMask::full(&ds), &config, &settings, true).unwrap();
        let series = posterior_predictive_check(&ds, &post, &config, 7, 3).unwrap();
        assert_eq!(series.len(), 6);
        assert!(series.iter().all(|s| s.points.len() == 7));
        assert_eq!(series[0].metric, PpcMetric::LogLoss);
        assert_eq!(series[2].metric, PpcMetric::Rmse);
        assert_eq!(series[3].metric, PpcMetric::OneMinusAccuracy);
        assert_eq!(series[4].metric, PpcMetric::Mae);
        assert_eq!(series, posterior_predictive_check(&ds, &post, &config, 7, 3).unwrap());
    }

    #[test]
    fn posterior_sampler_matches_moments() {
        let (ds, _) = generate_dataset(&GeneratorConfig::new(10, 2, 2)).unwrap();
        let config = ModelConfig::new(2);
        let settings = OptimizerSettings { n_restarts: 1, max_iterations: 100, ..Default::default() };
        let post = fit_posterior(&ds, &ObservationMask::full(&ds), &config, &settings, true).unwrap();
        let sampler = PosteriorSampler::new(&post).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draws = 20_000;
        let idx = post.map_state.layout().w_offset(0);
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..draws {
            let v = sampler.sample(&mut rng).values()[idx];
            s1 += v;
            s2 += v * v;
        }
        let mean = s1 / draws as f64;
        let var = s2 / draws as f64 - mean * mean;
        let target = post.covariance.as_ref().unwrap().get(BlockId::W(0)).unwrap().covariance[(0, 0)];
        assert!((mean - post.map_state.values()[idx]).abs() < 4.0 * (target / draws as f64).sqrt());
        assert!((var / target - 1.0).abs() < 0.05);
    }

    proptest! {
        #[test]
        fn auc_matches_brute_force(
            raw in prop::collection::vec((0u8..20, any::<bool>()), 2..200),
        ) {
            let scores: Vec<(f64, bool)> = raw.iter().map(|&(s, l)| (s as f64 / 4.0, l)).collect();
            let fast = auc(&scores);
            let slow = brute_auc(&scores);
            prop_assert_eq!(fast.is_some(), slow.is_some());
            if let (Some(a), Some(b)) = (fast, slow) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn overlap_is_symmetric_and_shift_invariant(
            m in prop::collection::vec(-3.0f64..3.0, 3),
            v in prop::collection::vec(0.1f64..2.0, 3),
            shift in -5.0f64..5.0,
        ) {
            let comps: Vec<(f64, f64)> = m.iter().copied().zip(v.iter().copied()).collect();
            let base = overlap(&comps).unwrap();
            let rev: Vec<(f64, f64)> = comps.iter().rev().copied().collect();
            prop_assert!((overlap(&rev).unwrap() - base).abs() < 1e-9);
            let shifted: Vec<(f64, f64)> = comps.iter().map(|&(a, b)| (a + shift, b)).collect();
            prop_assert!((overlap(&shifted).unwrap() - base).abs() < 1e-6);
            prop_assert!((0.0..=1.0).contains(&base));
        }

        #[test]
        fn barycenter_variance_bounds(
            m in prop::collection::vec(-3.0f64..3.0, 2..5),
            v in 0.05f64..2.0,
        ) {
            let comps: Vec<(f64, f64)> = m.iter().map(|&a| (a, v)).collect();
            let bv = barycenter_variance(&comps).unwrap();
            prop_assert!(bv >= v - 1e-6);
            let mean = m.iter().sum::<f64>() / m.len() as f64;
            let spread = m.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / m.len() as f64;
            prop_assert!((bv - (v + spread)).abs() < 1e-4);
            let same: Vec<(f64, f64)> = vec![(m[0], v); m.len()];
            prop_assert!((barycenter_variance(&same).unwrap() - v).abs() < 1e-6);
        }

        #[test]
        fn cosine_recovery_is_permutation_invariant(
            rows in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 1..12),
            truth_rows in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 12),
        ) {
            let n = rows.len();
            let inferred: Vec<f64> = rows.iter().flatten().copied().collect();
            let truth: Vec<f64> = truth_rows[..n].iter().flatten().copied().collect();
            let base = cosine_recovery(&inferred, &truth, 3, AlignmentMode::Exact).unwrap();
            let perm_inf: Vec<f64> = rows.iter().flat_map(|r| [r[1], r[2], r[0]]).collect();
            let perm_truth: Vec<f64> = truth_rows[..n].iter().flat_map(|r| [r[2], r[0], r[1]]).collect();
            prop_assert!((cosine_recovery(&perm_inf, &truth, 3, AlignmentMode::Exact).unwrap() - base).abs() < 1e-12);
            prop_assert!((cosine_recovery(&inferred, &perm_truth, 3, AlignmentMode::Exact).unwrap() - base).abs() < 1e-12);
        }
    }
}

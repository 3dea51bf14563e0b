//! Synthetic directed attributed multilayer networks drawn from the model.
//!
//! Nodes are split into `K` contiguous groups. Membership rows favour the
//! node's own group, affinity matrices are assortative and the community
//! covariates separate groups, so the ground truth is recoverable.
//!
//! Every random stream is a ChaCha8 substream of the root seed: latent
//! variables use stream 0, layer `l` stream `1000 + l` and attribute `x`
//! stream `2000 + x`. Regenerating one layer never perturbs another.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::math;
use crate::model::{
    Attribute, AttributeKind, Forward, HeterogeneousDataset, LatentState, Layer, LayerKind, Layout,
    DEFAULT_GAUSSIAN_VARIANCE,
};
use crate::{Error, Result};

pub const LATENT_STREAM: u64 = 0;
pub const LAYER_STREAM_BASE: u64 = 1000;
pub const ATTRIBUTE_STREAM_BASE: u64 = 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalSpec {
    pub mean: f64,
    pub variance: f64,
}

impl NormalSpec {
    pub const fn new(mean: f64, variance: f64) -> Self {
        Self { mean, variance }
    }

    fn distribution(&self) -> Result<Normal<f64>> {
        if !(self.variance > 0.0 && self.variance.is_finite()) || !self.mean.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "N({}, {}) needs a finite mean and positive variance",
                self.mean, self.variance
            )));
        }
        Normal::new(self.mean, math::sqrt(self.variance)).map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

/// Normal whose mean depends on the 1-based community index:
/// `N(intercept + slope * k, variance)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommunityNormal {
    pub intercept: f64,
    pub slope: f64,
    pub variance: f64,
}

impl CommunityNormal {
    pub fn at(&self, community: usize) -> NormalSpec {
        NormalSpec::new(self.intercept + self.slope * (community + 1) as f64, self.variance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorHyperparameters {
    pub u_in: NormalSpec,
    pub u_out: NormalSpec,
    pub v_in: NormalSpec,
    pub v_out: NormalSpec,
    pub w_diag: NormalSpec,
    pub w_offdiag: NormalSpec,
    /// Categorical entry `(k, k)`: `N(0.5 + k, 0.04)`.
    pub h_categorical_match: CommunityNormal,
    pub h_categorical_mismatch: NormalSpec,
    /// Categorical rows `k >= Z` and columns `z >= K`.
    pub h_categorical_padding: NormalSpec,
    /// `N(1.5 (k + 2) / 3, 0.01)`.
    pub h_poisson: CommunityNormal,
    /// `N(4 + 3 (1 - k), 0.04)`.
    pub h_gaussian: CommunityNormal,
}

impl Default for GeneratorHyperparameters {
    fn default() -> Self {
        Self {
            u_in: NormalSpec::new(2.0, 0.04),
            u_out: NormalSpec::new(-1.0, 0.04),
            v_in: NormalSpec::new(2.0, 0.09),
            v_out: NormalSpec::new(-1.0, 0.09),
            w_diag: NormalSpec::new(0.0, 0.2025),
            w_offdiag: NormalSpec::new(-4.0, 0.2025),
            h_categorical_match: CommunityNormal { intercept: 0.5, slope: 1.0, variance: 0.04 },
            h_categorical_mismatch: NormalSpec::new(0.0, 0.04),
            h_categorical_padding: NormalSpec::new(0.2, 0.04),
            h_poisson: CommunityNormal { intercept: 1.0, slope: 0.5, variance: 0.01 },
            h_gaussian: CommunityNormal { intercept: 7.0, slope: -3.0, variance: 0.04 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub n_nodes: usize,
    pub k: usize,
    pub layers: Vec<LayerKind>,
    pub attributes: Vec<AttributeKind>,
    pub rng_seed: u64,
    pub hyper: GeneratorHyperparameters,
}

impl GeneratorConfig {
    /// One Bernoulli, one Poisson and one Gaussian layer; a categorical
    /// (`Z = 4`), a Poisson and a Gaussian attribute.
    pub fn new(n_nodes: usize, k: usize, rng_seed: u64) -> Self {
        let var = DEFAULT_GAUSSIAN_VARIANCE;
        Self {
            n_nodes,
            k,
            layers: vec![LayerKind::Bernoulli, LayerKind::Poisson, LayerKind::Gaussian { variance: var }],
            attributes: vec![
                AttributeKind::Categorical { categories: 4 },
                AttributeKind::Poisson,
                AttributeKind::Gaussian { variance: var },
            ],
            rng_seed,
            hyper: GeneratorHyperparameters::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.n_nodes {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= K <= N, got K = {} and N = {}",
                self.k, self.n_nodes
            )));
        }
        for kind in &self.layers {
            kind.validate()?;
        }
        for kind in &self.attributes {
            kind.validate()?;
        }
        let h = &self.hyper;
        for spec in [h.u_in, h.u_out, h.v_in, h.v_out, h.w_diag, h.w_offdiag, h.h_categorical_mismatch, h.h_categorical_padding] {
            spec.distribution()?;
        }
        for spec in [h.h_categorical_match, h.h_poisson, h.h_gaussian] {
            spec.at(0).distribution()?;
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        let widths = self.attributes.iter().map(|a| a.width()).collect();
        Layout::new(self.n_nodes, self.k, self.layers.len(), widths, true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub latent: LatentState,
    pub hard_groups: Vec<usize>,
    /// `softmax(U_i)`, row-major `N x K`.
    pub memberships_out: Vec<f64>,
    /// `softmax(V_i)`, row-major `N x K`.
    pub memberships_in: Vec<f64>,
}

/// Contiguous groups; the first `N mod K` groups hold one extra node.
pub fn contiguous_groups(n: usize, k: usize) -> Vec<usize> {
    let base = n / k;
    let extra = n % k;
    let mut out = Vec::with_capacity(n);
    for g in 0..k {
        let size = base + usize::from(g < extra);
        out.extend(core::iter::repeat_n(g, size));
    }
    out
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn sample_latent(config: &GeneratorConfig) -> Result<GroundTruth> {
    config.validate()?;
    let h = &config.hyper;
    let (n, k) = (config.n_nodes, config.k);
    let groups = contiguous_groups(n, k);
    let mut rng = stream_rng(config.rng_seed, LATENT_STREAM);
    let mut state = LatentState::zeros(config.layout());

    let (u_in, u_out) = (h.u_in.distribution()?, h.u_out.distribution()?);
    for (i, &g) in groups.iter().enumerate() {
        for (c, u) in state.u_row_mut(i).iter_mut().enumerate() {
            *u = if c == g { u_in.sample(&mut rng) } else { u_out.sample(&mut rng) };
        }
    }
    let (v_in, v_out) = (h.v_in.distribution()?, h.v_out.distribution()?);
    for (i, &g) in groups.iter().enumerate() {
        for (c, v) in state.v_row_mut(i).iter_mut().enumerate() {
            *v = if c == g { v_in.sample(&mut rng) } else { v_out.sample(&mut rng) };
        }
    }
    let (w_diag, w_off) = (h.w_diag.distribution()?, h.w_offdiag.distribution()?);
    for l in 0..config.layers.len() {
        for (idx, w) in state.w_mut(l).iter_mut().enumerate() {
            *w = if idx / k == idx % k { w_diag.sample(&mut rng) } else { w_off.sample(&mut rng) };
        }
    }
    for (x, kind) in config.attributes.iter().enumerate() {
        let width = kind.width();
        let block = state.h_mut(x);
        match kind {
            AttributeKind::Categorical { categories } => {
                let z_count = *categories;
                let mismatch = h.h_categorical_mismatch.distribution()?;
                let padding = h.h_categorical_padding.distribution()?;
                for c in 0..k {
                    for z in 0..width {
                        block[c * width + z] = if c >= z_count || z >= k {
                            padding.sample(&mut rng)
                        } else if c == z {
                            h.h_categorical_match.at(c).distribution()?.sample(&mut rng)
                        } else {
                            mismatch.sample(&mut rng)
                        };
                    }
                }
            }
            AttributeKind::Poisson => {
                for (c, v) in block.iter_mut().enumerate() {
                    *v = h.h_poisson.at(c).distribution()?.sample(&mut rng);
                }
            }
            AttributeKind::Gaussian { .. } => {
                for (c, v) in block.iter_mut().enumerate() {
                    *v = h.h_gaussian.at(c).distribution()?.sample(&mut rng);
                }
            }
        }
    }

    Ok(GroundTruth {
        memberships_out: state.memberships(true),
        memberships_in: state.memberships(false),
        latent: state,
        hard_groups: groups,
    })
}

fn check_kinds(state: &LatentState, layers: &[LayerKind], attributes: &[AttributeKind]) -> Result<()> {
    let layout = state.layout();
    let widths: Vec<usize> = attributes.iter().map(|a| a.width()).collect();
    if layout.n_layers() != layers.len() || layout.attribute_widths() != widths.as_slice() {
        return Err(Error::DimensionMismatch(format!(
            "state has {} layers and widths {:?}; kinds give {} layers and widths {:?}",
            layout.n_layers(),
            layout.attribute_widths(),
            layers.len(),
            widths
        )));
    }
    Ok(())
}

fn draw_edge<R: Rng + ?Sized>(kind: LayerKind, lambda: f64, rng: &mut R) -> Result<f64> {
    Ok(match kind {
        LayerKind::Bernoulli => f64::from(u8::from(rng.random::<f64>() < lambda)),
        LayerKind::Poisson => draw_poisson(lambda, rng)?,
        LayerKind::Gaussian { variance } => lambda + math::sqrt(variance) * standard_normal(rng),
    })
}

fn draw_poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<f64> {
    let rate = rate.max(math::PROB_FLOOR);
    let dist = Poisson::new(rate).map_err(|e| Error::NonFinite(format!("Poisson rate {rate}: {e}")))?;
    Ok(dist.sample(rng))
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rand_distr::StandardNormal.sample(rng)
}

/// Draw one layer given latent variables. Directed states sample every
/// ordered pair; undirected states sample `i < j` and mirror. The diagonal is
/// sampled only when `include_self_loops`.
pub fn sample_layer<R: Rng + ?Sized>(
    layers: &[LayerKind],
    state: &LatentState,
    layer: usize,
    include_self_loops: bool,
    rng: &mut R,
) -> Result<Layer> {
    check_kinds_layers(state, layers)?;
    let kind = *layers.get(layer).ok_or(Error::IndexOutOfRange {
        what: "layer",
        index: layer,
        limit: layers.len(),
    })?;
    let fwd = Forward::from_kinds(layers, &[], &state_without_attributes(state, layers.len()));
    let n = state.layout().n_nodes();
    let k = state.k();
    let directed = state.layout().directed();
    let mut a = vec![0.0; k];
    let mut edges = Vec::new();
    for i in 0..n {
        fwd.source_factor(layer, i, &mut a);
        let start = if directed { 0 } else { i };
        for j in start..n {
            if i == j && !include_self_loops {
                continue;
            }
            let value = draw_edge(kind, math::dot(&a, fwd.sv_row(j)), rng)?;
            if value != 0.0 {
                edges.push((i, j, value));
                if !directed && i != j {
                    edges.push((j, i, value));
                }
            }
        }
    }
    Layer::from_edges(kind, n, &edges)
}

fn check_kinds_layers(state: &LatentState, layers: &[LayerKind]) -> Result<()> {
    if state.layout().n_layers() != layers.len() {
        return Err(Error::DimensionMismatch(format!(
            "state has {} layers, {} kinds given",
            state.layout().n_layers(),
            layers.len()
        )));
    }
    Ok(())
}

/// Membership and affinity part of `state` with the attribute blocks dropped.
fn state_without_attributes(state: &LatentState, n_layers: usize) -> LatentState {
    let layout = state.layout();
    let reduced = Layout::new(layout.n_nodes(), layout.k(), n_layers, Vec::new(), layout.directed());
    let len = reduced.len();
    LatentState::from_values(reduced, state.values()[..len].to_vec()).expect("prefix of a valid state")
}

/// Draw one attribute column given latent variables.
pub fn sample_attribute<R: Rng + ?Sized>(
    attributes: &[AttributeKind],
    state: &LatentState,
    x: usize,
    rng: &mut R,
) -> Result<Attribute> {
    let kind = *attributes.get(x).ok_or(Error::IndexOutOfRange {
        what: "attribute",
        index: x,
        limit: attributes.len(),
    })?;
    let widths: Vec<usize> = attributes.iter().map(|a| a.width()).collect();
    if state.layout().attribute_widths() != widths.as_slice() {
        return Err(Error::DimensionMismatch(format!(
            "state attribute widths {:?}, kinds give {:?}",
            state.layout().attribute_widths(),
            widths
        )));
    }
    let layers = vec![LayerKind::Bernoulli; state.layout().n_layers()];
    let fwd = Forward::from_kinds(&layers, attributes, state);
    let n = state.layout().n_nodes();
    let width = kind.width();
    let mut pi = vec![0.0; width];
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        fwd.pi(x, width, i, &mut pi);
        let v = match kind {
            AttributeKind::Categorical { .. } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = width - 1;
                for (z, p) in pi.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        chosen = z;
                        break;
                    }
                }
                chosen as f64
            }
            AttributeKind::Poisson => draw_poisson(pi[0], rng)?,
            AttributeKind::Gaussian { variance } => pi[0] + math::sqrt(variance) * standard_normal(rng),
        };
        values.push(v);
    }
    Attribute::new(kind, values)
}

/// All layers of the generated network, each from its own substream.
pub fn sample_network(truth: &GroundTruth, config: &GeneratorConfig) -> Result<Vec<Layer>> {
    check_kinds(&truth.latent, &config.layers, &config.attributes)?;
    (0..config.layers.len())
        .map(|l| {
            let mut rng = stream_rng(config.rng_seed, LAYER_STREAM_BASE + l as u64);
            sample_layer(&config.layers, &truth.latent, l, false, &mut rng)
        })
        .collect()
}

/// All attribute columns, each from its own substream.
pub fn sample_attributes(truth: &GroundTruth, config: &GeneratorConfig) -> Result<Vec<Attribute>> {
    check_kinds(&truth.latent, &config.layers, &config.attributes)?;
    (0..config.attributes.len())
        .map(|x| {
            let mut rng = stream_rng(config.rng_seed, ATTRIBUTE_STREAM_BASE + x as u64);
            sample_attribute(&config.attributes, &truth.latent, x, &mut rng)
        })
        .collect()
}

pub fn generate_dataset(config: &GeneratorConfig) -> Result<(HeterogeneousDataset, GroundTruth)> {
    let truth = sample_latent(config)?;
    let mut dataset = HeterogeneousDataset::new(config.n_nodes, true);
    for layer in sample_network(&truth, config)? {
        dataset.push_layer(layer)?;
    }
    for attribute in sample_attributes(&truth, config)? {
        dataset.push_attribute(attribute)?;
    }
    Ok((dataset, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{expected_attribute_value, expected_edge_value};

    fn counts(groups: &[usize], k: usize) -> Vec<usize> {
        let mut c = vec![0; k];
        for &g in groups {
            c[g] += 1;
        }
        c
    }

    #[test]
    fn group_sizes() {
        assert_eq!(counts(&contiguous_groups(9, 3), 3), vec![3, 3, 3]);
        assert_eq!(counts(&contiguous_groups(10, 3), 3), vec![4, 3, 3]);
        assert_eq!(counts(&contiguous_groups(11, 3), 3), vec![4, 4, 3]);
        let g = contiguous_groups(10, 3);
        assert!(g.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn latent_is_deterministic_and_validated() {
        let config = GeneratorConfig::new(9, 3, 5);
        let a = sample_latent(&config).unwrap();
        assert_eq!(a, sample_latent(&config).unwrap());
        assert_ne!(a, sample_latent(&GeneratorConfig::new(9, 3, 6)).unwrap());
        assert_eq!(a.hard_groups, vec![0, 0, 0, 1, 1, 1, 2, 2, 2]);
        for row in a.memberships_out.chunks(3).chain(a.memberships_in.chunks(3)) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(sample_latent(&GeneratorConfig::new(2, 3, 5)).is_err());
        let mut bad = GeneratorConfig::new(9, 3, 5);
        bad.hyper.w_diag.variance = 0.0;
        assert!(sample_latent(&bad).is_err());
    }

    #[test]
    fn in_group_membership_mean() {
        let config = GeneratorConfig { layers: vec![], attributes: vec![], ..GeneratorConfig::new(10_000, 3, 1) };
        let truth = sample_latent(&config).unwrap();
        let mean: f64 = (0..10_000).map(|i| truth.latent.u_row(i)[truth.hard_groups[i]]).sum::<f64>() / 1e4;
        assert!((mean - 2.0).abs() < 0.01, "{mean}");
        let out: f64 = (0..10_000).map(|i| truth.latent.v_row(i)[(truth.hard_groups[i] + 1) % 3]).sum::<f64>() / 1e4;
        assert!((out + 1.0).abs() < 0.01, "{out}");
    }

    #[test]
    fn categorical_blocks_follow_hyperparameters() {
        let config = GeneratorConfig::new(30, 3, 2);
        let truth = sample_latent(&config).unwrap();
        let h = truth.latent.h(0);
        // K = 3, Z = 4: diagonal near 1.5, 2.5, 3.5; column 3 is padding near 0.2
        for k in 0..3 {
            assert!((h[k * 4 + k] - (1.5 + k as f64)).abs() < 1.0);
            assert!((h[k * 4 + 3] - 0.2).abs() < 1.0);
        }
        let p = truth.latent.h(1);
        assert!(p[0] < p[1] && p[1] < p[2]);
        let g = truth.latent.h(2);
        assert!((g[0] - 4.0).abs() < 1.0 && (g[2] + 2.0).abs() < 1.0);
    }

    #[test]
    fn recoverability_precondition() {
        let s = math::softmax_row(&[2.0, -1.0, -1.0]).unwrap();
        assert!(s[0] > 0.9 && s[0] > s[1] && s[0] > s[2]);
    }

    #[test]
    fn defaults_are_assortative() {
        let config = GeneratorConfig::new(60, 3, 8);
        let truth = sample_latent(&config).unwrap();
        for (l, kind) in config.layers.iter().enumerate() {
            let w = truth.latent.w(l);
            let (mut diag, mut off) = (0.0, 0.0);
            for idx in 0..9 {
                let g = kind.transform(w[idx]);
                if idx / 3 == idx % 3 {
                    diag += g / 3.0;
                } else {
                    off += g / 6.0;
                }
            }
            assert!(diag > off, "layer {l}");
        }
    }

    #[test]
    fn forced_complete_bernoulli_layer() {
        let layout = Layout::new(6, 2, 1, vec![], true);
        let mut state = LatentState::zeros(layout);
        state.w_mut(0).iter_mut().for_each(|w| *w = 40.0);
        let mut rng = stream_rng(0, 0);
        let layer = sample_layer(&[LayerKind::Bernoulli], &state, 0, false, &mut rng).unwrap();
        assert_eq!(layer.entries().len(), 30);
        assert!(layer.entries().iter().all(|&(i, j, w)| i != j && w == 1.0));
    }

    #[test]
    fn forced_one_hot_categorical() {
        let kinds = [AttributeKind::Categorical { categories: 3 }];
        let layout = Layout::new(50, 2, 0, vec![3], true);
        let mut state = LatentState::zeros(layout);
        for k in 0..2 {
            state.h_mut(0)[k * 3 + 2] = 60.0;
        }
        let mut rng = stream_rng(0, 1);
        let attr = sample_attribute(&kinds, &state, 0, &mut rng).unwrap();
        assert!(attr.values().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn poisson_layer_mean_matches_rates() {
        let config = GeneratorConfig {
            layers: vec![LayerKind::Poisson],
            attributes: vec![],
            ..GeneratorConfig::new(500, 3, 4)
        };
        let (ds, truth) = generate_dataset(&config).unwrap();
        let fwd = Forward::from_kinds(&config.layers, &[], &truth.latent);
        let (mut rate, mut obs) = (0.0, 0.0);
        for i in 0..500 {
            for j in 0..500 {
                if i != j {
                    rate += fwd.lambda(0, i, j);
                    obs += ds.layers()[0].get(i, j);
                }
            }
        }
        assert!((obs / rate - 1.0).abs() < 0.02, "{obs} vs {rate}");
    }

    #[test]
    fn bernoulli_density_within_binomial_error() {
        let (ds, truth) = generate_dataset(&GeneratorConfig::new(200, 3, 9)).unwrap();
        let mut sum_p = 0.0;
        let mut var = 0.0;
        for i in 0..200 {
            for j in 0..200 {
                if i != j {
                    let p = expected_edge_value(&ds, &truth.latent, 0, i, j).unwrap();
                    sum_p += p;
                    var += p * (1.0 - p);
                }
            }
        }
        let edges = ds.layers()[0].entries().len() as f64;
        assert!((edges - sum_p).abs() < 3.0 * math::sqrt(var), "{edges} vs {sum_p}");
        assert!(ds.layers()[0].entries().iter().all(|&(i, j, _)| i != j));
    }

    #[test]
    fn category_frequencies_match_mean_pi() {
        let config = GeneratorConfig {
            layers: vec![],
            attributes: vec![AttributeKind::Categorical { categories: 4 }],
            ..GeneratorConfig::new(10_000, 3, 12)
        };
        let (ds, truth) = generate_dataset(&config).unwrap();
        let mut mean_pi = [0.0; 4];
        let mut freq = [0.0; 4];
        for i in 0..10_000 {
            let pi = expected_attribute_value(&ds, &truth.latent, i, 0).unwrap();
            for z in 0..4 {
                mean_pi[z] += pi[z] / 1e4;
            }
            freq[ds.attributes()[0].values()[i] as usize] += 1.0 / 1e4;
        }
        for z in 0..4 {
            assert!((mean_pi[z] - freq[z]).abs() < 0.02, "{z}: {} vs {}", mean_pi[z], freq[z]);
        }
    }

    #[test]
    fn generated_dataset_shape_and_determinism() {
        let config = GeneratorConfig::new(100, 3, 21);
        let (a, ta) = generate_dataset(&config).unwrap();
        assert_eq!(a.n_nodes(), 100);
        assert_eq!(a.layers().len(), 3);
        assert_eq!(a.attributes().len(), 3);
        assert!(a.directed());
        let (b, tb) = generate_dataset(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }

    #[test]
    fn layers_use_independent_streams() {
        let config = GeneratorConfig::new(40, 2, 3);
        let truth = sample_latent(&config).unwrap();
        let all = sample_network(&truth, &config).unwrap();
        let mut rng = stream_rng(config.rng_seed, LAYER_STREAM_BASE + 2);
        let alone = sample_layer(&config.layers, &truth.latent, 2, false, &mut rng).unwrap();
        assert_eq!(all[2], alone);
    }

    #[test]
    fn undirected_states_give_symmetric_layers() {
        let layout = Layout::new(12, 2, 1, vec![], false);
        let mut state = LatentState::zeros(layout);
        for (i, v) in state.values_mut().iter_mut().enumerate() {
            *v = ((i * 7) % 5) as f64 - 2.0;
        }
        let mut rng = stream_rng(1, 1);
        let layer = sample_layer(&[LayerKind::Poisson], &state, 0, false, &mut rng).unwrap();
        for i in 0..12 {
            for j in 0..12 {
                assert_eq!(layer.get(i, j), layer.get(j, i));
            }
        }
    }
}

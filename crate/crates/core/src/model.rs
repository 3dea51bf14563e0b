//! Data model for attributed multilayer networks and the unnormalized
//! log-posterior of the latent variables `(U, V, W, H)`.
//!
//! Expected values:
//!
//! ```text
//! lambda^l_ij = softmax(U_i) . g_l(W^l) . softmax(V_j)
//! pi_ix       = 1/2 (softmax(U_i) + softmax(V_i)) . g_x(H_x)
//! ```
//!
//! with `g` the logistic (Bernoulli), exponential (Poisson), identity
//! (Gaussian) or row softmax across categories (categorical).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{self, clamp_prob, PROB_FLOOR};
use crate::{Error, Result};

/// Observation variance used for Gaussian layers and attributes unless configured.
pub const DEFAULT_GAUSSIAN_VARIANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerKind {
    Bernoulli,
    Poisson,
    Gaussian { variance: f64 },
}

impl LayerKind {
    pub fn gaussian(variance: f64) -> Result<Self> {
        let kind = LayerKind::Gaussian { variance };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerKind::Gaussian { variance } if !(variance > 0.0 && variance.is_finite()) => Err(
                Error::InvalidArgument(format!("gaussian layer variance must be > 0, got {variance}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Bernoulli => "bernoulli",
            LayerKind::Poisson => "poisson",
            LayerKind::Gaussian { .. } => "gaussian",
        }
    }

    /// Link `g` applied elementwise to the affinity matrix.
    #[inline]
    pub fn transform(&self, raw: f64) -> f64 {
        match self {
            LayerKind::Bernoulli => math::logistic(raw),
            LayerKind::Poisson => math::exp_capped(raw),
            LayerKind::Gaussian { .. } => raw,
        }
    }

    /// First and second derivative of the link, given the raw value and `g(raw)`.
    #[inline]
    pub(crate) fn transform_derivatives(&self, raw: f64, g: f64) -> (f64, f64) {
        match self {
            LayerKind::Bernoulli => {
                let d1 = g * (1.0 - g);
                (d1, d1 * (1.0 - 2.0 * g))
            }
            LayerKind::Poisson => {
                if raw > math::EXP_CAP {
                    (0.0, 0.0)
                } else {
                    (g, g)
                }
            }
            LayerKind::Gaussian { .. } => (1.0, 0.0),
        }
    }

    pub fn validate_weight(&self, w: f64) -> core::result::Result<(), String> {
        match self {
            LayerKind::Bernoulli if w != 0.0 && w != 1.0 => {
                Err(format!("weight {w} is not 0 or 1 in a bernoulli layer"))
            }
            LayerKind::Poisson if !(w >= 0.0 && w.is_finite() && libm::floor(w) == w) => {
                Err(format!("weight {w} is not a nonnegative integer in a poisson layer"))
            }
            LayerKind::Gaussian { .. } if !w.is_finite() => {
                Err(format!("weight {w} is not finite in a gaussian layer"))
            }
            _ => Ok(()),
        }
    }

    /// Log-density of one entry and its first two derivatives with respect to `lambda`.
    #[inline]
    pub(crate) fn log_density(&self, a: f64, lambda: f64) -> (f64, f64, f64) {
        match *self {
            LayerKind::Bernoulli => bernoulli_terms(a, lambda),
            LayerKind::Poisson => poisson_terms(a, lambda),
            LayerKind::Gaussian { variance } => gaussian_terms(a, lambda, variance),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttributeKind {
    Categorical { categories: usize },
    Poisson,
    Gaussian { variance: f64 },
}

impl AttributeKind {
    pub fn categorical(categories: usize) -> Result<Self> {
        let kind = AttributeKind::Categorical { categories };
        kind.validate()?;
        Ok(kind)
    }

    pub fn gaussian(variance: f64) -> Result<Self> {
        let kind = AttributeKind::Gaussian { variance };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AttributeKind::Categorical { categories } if categories < 2 => Err(
                Error::InvalidArgument(format!("categorical attribute needs >= 2 categories, got {categories}")),
            ),
            AttributeKind::Gaussian { variance } if !(variance > 0.0 && variance.is_finite()) => Err(
                Error::InvalidArgument(format!("gaussian attribute variance must be > 0, got {variance}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AttributeKind::Categorical { .. } => "categorical",
            AttributeKind::Poisson => "poisson",
            AttributeKind::Gaussian { .. } => "gaussian",
        }
    }

    /// Number of columns of the `H` block: `Z` for categorical, 1 otherwise.
    pub fn width(&self) -> usize {
        match *self {
            AttributeKind::Categorical { categories } => categories,
            _ => 1,
        }
    }

    /// Link `g` applied to one community row of the `H` block.
    pub fn transform(&self, raw: &[f64]) -> Result<Vec<f64>> {
        math::ensure_finite(raw, "attribute transform input")?;
        if raw.len() != self.width() {
            return Err(Error::DimensionMismatch(format!(
                "{} attribute row has {} entries, expected {}",
                self.name(),
                raw.len(),
                self.width()
            )));
        }
        let mut out = vec![0.0; raw.len()];
        self.transform_into(raw, &mut out);
        Ok(out)
    }

    #[inline]
    pub(crate) fn transform_into(&self, raw: &[f64], out: &mut [f64]) {
        match self {
            AttributeKind::Categorical { .. } => math::softmax_into(raw, out),
            AttributeKind::Poisson => {
                for (o, &r) in out.iter_mut().zip(raw) {
                    *o = math::exp_capped(r);
                }
            }
            AttributeKind::Gaussian { .. } => out.copy_from_slice(raw),
        }
    }

    pub fn validate_value(&self, x: f64) -> core::result::Result<(), String> {
        match *self {
            AttributeKind::Categorical { categories } => {
                if x >= 0.0 && libm::floor(x) == x && (x as usize) < categories {
                    Ok(())
                } else {
                    Err(format!("value {x} is not a category index below {categories}"))
                }
            }
            AttributeKind::Poisson if !(x >= 0.0 && x.is_finite() && libm::floor(x) == x) => {
                Err(format!("value {x} is not a nonnegative integer in a poisson attribute"))
            }
            AttributeKind::Gaussian { .. } if !x.is_finite() => {
                Err(format!("value {x} is not finite in a gaussian attribute"))
            }
            _ => Ok(()),
        }
    }
}

#[inline]
fn bernoulli_terms(a: f64, lambda: f64) -> (f64, f64, f64) {
    let (p, clamped) = clamp_prob(lambda);
    let f = a * math::ln(p) + (1.0 - a) * math::ln(1.0 - p);
    if clamped {
        return (f, 0.0, 0.0);
    }
    let q = 1.0 - p;
    (f, a / p - (1.0 - a) / q, -a / (p * p) - (1.0 - a) / (q * q))
}

#[inline]
fn poisson_terms(a: f64, lambda: f64) -> (f64, f64, f64) {
    let (rate, floored) = if lambda < PROB_FLOOR {
        (PROB_FLOOR, true)
    } else {
        (lambda, false)
    };
    let f = a * math::ln(rate) - rate - math::ln_factorial(a);
    if floored {
        return (f, 0.0, 0.0);
    }
    (f, a / rate - 1.0, -a / (rate * rate))
}

#[inline]
fn gaussian_terms(a: f64, mean: f64, variance: f64) -> (f64, f64, f64) {
    (
        math::normal_ln_pdf(a, mean, variance),
        (a - mean) / variance,
        -1.0 / variance,
    )
}

/// Log-probability of an observed category and its derivatives with respect to
/// the category probability.
#[inline]
pub(crate) fn categorical_terms(pi_c: f64) -> (f64, f64, f64) {
    let (p, clamped) = clamp_prob(pi_c);
    if clamped {
        (math::ln(p), 0.0, 0.0)
    } else {
        (math::ln(p), 1.0 / p, -1.0 / (p * p))
    }
}

/// Scalar attribute log-density and derivatives with respect to `pi`.
#[inline]
pub(crate) fn scalar_attribute_terms(kind: &AttributeKind, x: f64, pi: f64) -> (f64, f64, f64) {
    match *kind {
        AttributeKind::Poisson => poisson_terms(x, pi),
        AttributeKind::Gaussian { variance } => gaussian_terms(x, pi, variance),
        AttributeKind::Categorical { .. } => unreachable!("categorical handled separately"),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum LayerStorage {
    /// Compressed rows; absent pairs are zeros.
    Sparse {
        row_ptr: Vec<usize>,
        cols: Vec<usize>,
        weights: Vec<f64>,
    },
    /// Row-major `N x N`.
    Dense(Vec<f64>),
}

/// One typed layer of the adjacency tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    kind: LayerKind,
    n_nodes: usize,
    storage: LayerStorage,
}

impl Layer {
    /// Build from an edge list. Pairs not listed are zeros; zero weights are dropped.
    /// Gaussian layers are densified.
    pub fn from_edges(kind: LayerKind, n_nodes: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        kind.validate()?;
        let mut sorted: Vec<(usize, usize, f64)> = Vec::with_capacity(edges.len());
        for (row, &(i, j, w)) in edges.iter().enumerate() {
            if i >= n_nodes || j >= n_nodes {
                return Err(Error::InvalidData(format!(
                    "edge {row}: node index ({i}, {j}) out of range for {n_nodes} nodes"
                )));
            }
            kind.validate_weight(w)
                .map_err(|e| Error::InvalidData(format!("edge {row}: {e}")))?;
            sorted.push((i, j, w));
        }
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        if let Some(w) = sorted.windows(2).find(|w| w[0].0 == w[1].0 && w[0].1 == w[1].1) {
            return Err(Error::InvalidData(format!(
                "duplicate entry ({}, {}) in {} layer",
                w[0].0,
                w[0].1,
                kind.name()
            )));
        }
        if let LayerKind::Gaussian { .. } = kind {
            let mut dense = vec![0.0; n_nodes * n_nodes];
            for (i, j, w) in sorted {
                dense[i * n_nodes + j] = w;
            }
            return Ok(Layer { kind, n_nodes, storage: LayerStorage::Dense(dense) });
        }
        let mut row_ptr = vec![0usize; n_nodes + 1];
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        for &(i, j, w) in &sorted {
            if w != 0.0 {
                row_ptr[i + 1] += 1;
                cols.push(j);
                weights.push(w);
            }
        }
        for i in 0..n_nodes {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Layer {
            kind,
            n_nodes,
            storage: LayerStorage::Sparse { row_ptr, cols, weights },
        })
    }

    /// Build from a row-major `N x N` matrix of values.
    pub fn from_dense(kind: LayerKind, n_nodes: usize, values: &[f64]) -> Result<Self> {
        kind.validate()?;
        if values.len() != n_nodes * n_nodes {
            return Err(Error::DimensionMismatch(format!(
                "dense layer has {} values, expected {}",
                values.len(),
                n_nodes * n_nodes
            )));
        }
        for (idx, &w) in values.iter().enumerate() {
            kind.validate_weight(w).map_err(|e| {
                Error::InvalidData(format!("entry ({}, {}): {e}", idx / n_nodes, idx % n_nodes))
            })?;
        }
        if let LayerKind::Gaussian { .. } = kind {
            return Ok(Layer { kind, n_nodes, storage: LayerStorage::Dense(values.to_vec()) });
        }
        let edges: Vec<(usize, usize, f64)> = values
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(idx, &w)| (idx / n_nodes, idx % n_nodes, w))
            .collect();
        Layer::from_edges(kind, n_nodes, &edges)
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, LayerStorage::Dense(_))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            LayerStorage::Dense(v) => v[i * self.n_nodes + j],
            LayerStorage::Sparse { row_ptr, cols, weights } => {
                let row = &cols[row_ptr[i]..row_ptr[i + 1]];
                match row.binary_search(&j) {
                    Ok(p) => weights[row_ptr[i] + p],
                    Err(_) => 0.0,
                }
            }
        }
    }

    /// Write row `i` into `out` (length `N`).
    pub fn fill_row(&self, i: usize, out: &mut [f64]) {
        match &self.storage {
            LayerStorage::Dense(v) => out.copy_from_slice(&v[i * self.n_nodes..(i + 1) * self.n_nodes]),
            LayerStorage::Sparse { row_ptr, cols, weights } => {
                out.iter_mut().for_each(|x| *x = 0.0);
                for p in row_ptr[i]..row_ptr[i + 1] {
                    out[cols[p]] = weights[p];
                }
            }
        }
    }

    /// Entries with a nonzero bit pattern, in row-major order.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        match &self.storage {
            LayerStorage::Dense(v) => v
                .iter()
                .enumerate()
                .filter(|(_, w)| w.to_bits() != 0)
                .map(|(idx, &w)| (idx / self.n_nodes, idx % self.n_nodes, w))
                .collect(),
            LayerStorage::Sparse { row_ptr, cols, weights } => {
                let mut out = Vec::with_capacity(cols.len());
                for i in 0..self.n_nodes {
                    for p in row_ptr[i]..row_ptr[i + 1] {
                        out.push((i, cols[p], weights[p]));
                    }
                }
                out
            }
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n_nodes;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            self.fill_row(i, &mut out[i * n..(i + 1) * n]);
        }
        out
    }
}

/// One typed node attribute column.
#[derive(Debug, Clone, PartialEq)]
pub struct Attribute {
    kind: AttributeKind,
    values: Vec<f64>,
}

impl Attribute {
    /// Categorical values are category indices stored as `f64`.
    pub fn new(kind: AttributeKind, values: Vec<f64>) -> Result<Self> {
        kind.validate()?;
        for (i, &x) in values.iter().enumerate() {
            kind.validate_value(x)
                .map_err(|e| Error::InvalidData(format!("node {i}: {e}")))?;
        }
        Ok(Attribute { kind, values })
    }

    pub fn kind(&self) -> AttributeKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Adjacency tensor (typed layers over `N` nodes) plus typed attribute columns.
#[derive(Debug, Clone, PartialEq)]
pub struct HeterogeneousDataset {
    n_nodes: usize,
    directed: bool,
    layers: Vec<Layer>,
    attributes: Vec<Attribute>,
    node_labels: Option<Vec<String>>,
}

impl HeterogeneousDataset {
    pub fn new(n_nodes: usize, directed: bool) -> Self {
        HeterogeneousDataset {
            n_nodes,
            directed,
            layers: Vec::new(),
            attributes: Vec::new(),
            node_labels: None,
        }
    }

    pub fn push_layer(&mut self, layer: Layer) -> Result<()> {
        if layer.n_nodes != self.n_nodes {
            return Err(Error::DimensionMismatch(format!(
                "layer has {} nodes, dataset has {}",
                layer.n_nodes, self.n_nodes
            )));
        }
        self.layers.push(layer);
        Ok(())
    }

    pub fn push_attribute(&mut self, attribute: Attribute) -> Result<()> {
        if attribute.values.len() != self.n_nodes {
            return Err(Error::DimensionMismatch(format!(
                "attribute has {} values, dataset has {} nodes",
                attribute.values.len(),
                self.n_nodes
            )));
        }
        self.attributes.push(attribute);
        Ok(())
    }

    pub fn with_layer(mut self, layer: Layer) -> Result<Self> {
        self.push_layer(layer)?;
        Ok(self)
    }

    pub fn with_attribute(mut self, attribute: Attribute) -> Result<Self> {
        self.push_attribute(attribute)?;
        Ok(self)
    }

    pub fn set_node_labels(&mut self, labels: Vec<String>) -> Result<()> {
        if labels.len() != self.n_nodes {
            return Err(Error::DimensionMismatch(format!(
                "{} node labels for {} nodes",
                labels.len(),
                self.n_nodes
            )));
        }
        self.node_labels = Some(labels);
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn directed(&self) -> bool {
        self.directed
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn node_labels(&self) -> Option<&[String]> {
        self.node_labels.as_deref()
    }

    pub fn layer_kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(|l| l.kind).collect()
    }

    pub fn attribute_kinds(&self) -> Vec<AttributeKind> {
        self.attributes.iter().map(|a| a.kind).collect()
    }
}

/// Held-in entries. Masked-out entries contribute nothing to any likelihood sum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationMask {
    pub(crate) n_nodes: usize,
    pub(crate) edges: Vec<Vec<bool>>,
    pub(crate) attributes: Vec<Vec<bool>>,
}

impl ObservationMask {
    /// Every edge triple and attribute entry held in.
    pub fn full(dataset: &HeterogeneousDataset) -> Self {
        Self::filled(dataset, true)
    }

    /// Nothing held in (likelihood identically zero).
    pub fn empty(dataset: &HeterogeneousDataset) -> Self {
        Self::filled(dataset, false)
    }

    fn filled(dataset: &HeterogeneousDataset, value: bool) -> Self {
        let n = dataset.n_nodes;
        ObservationMask {
            n_nodes: n,
            edges: vec![vec![value; n * n]; dataset.layers.len()],
            attributes: vec![vec![value; n]; dataset.attributes.len()],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    #[inline]
    pub fn edge(&self, layer: usize, i: usize, j: usize) -> bool {
        self.edges[layer][i * self.n_nodes + j]
    }

    pub fn set_edge(&mut self, layer: usize, i: usize, j: usize, held_in: bool) {
        self.edges[layer][i * self.n_nodes + j] = held_in;
    }

    #[inline]
    pub fn attribute(&self, attribute: usize, i: usize) -> bool {
        self.attributes[attribute][i]
    }

    pub fn set_attribute(&mut self, attribute: usize, i: usize, held_in: bool) {
        self.attributes[attribute][i] = held_in;
    }

    pub(crate) fn edge_row(&self, layer: usize, i: usize) -> &[bool] {
        &self.edges[layer][i * self.n_nodes..(i + 1) * self.n_nodes]
    }

    pub fn n_layers(&self) -> usize {
        self.edges.len()
    }

    pub fn n_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn check_against(&self, dataset: &HeterogeneousDataset) -> Result<()> {
        if self.n_nodes != dataset.n_nodes
            || self.edges.len() != dataset.layers.len()
            || self.attributes.len() != dataset.attributes.len()
        {
            return Err(Error::DimensionMismatch(format!(
                "mask shape (N={}, L={}, P={}) does not match dataset (N={}, L={}, P={})",
                self.n_nodes,
                self.edges.len(),
                self.attributes.len(),
                dataset.n_nodes,
                dataset.layers.len(),
                dataset.attributes.len()
            )));
        }
        Ok(())
    }
}

/// Shape of the latent parameter pack and the offsets of every block inside the
/// flat storage: `U`, then `V` (directed only), then `W^1..W^L`, then `H_1..H_P`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    n_nodes: usize,
    k: usize,
    n_layers: usize,
    directed: bool,
    attribute_widths: Vec<usize>,
    attribute_offsets: Vec<usize>,
    len: usize,
}

impl Layout {
    pub fn new(n_nodes: usize, k: usize, n_layers: usize, attribute_widths: Vec<usize>, directed: bool) -> Self {
        let nk = n_nodes * k;
        let mut offset = if directed { 2 * nk } else { nk } + n_layers * k * k;
        let mut attribute_offsets = Vec::with_capacity(attribute_widths.len());
        for &w in &attribute_widths {
            attribute_offsets.push(offset);
            offset += k * w;
        }
        Layout {
            n_nodes,
            k,
            n_layers,
            directed,
            attribute_widths,
            attribute_offsets,
            len: offset,
        }
    }

    pub fn for_dataset(dataset: &HeterogeneousDataset, k: usize) -> Self {
        Layout::new(
            dataset.n_nodes,
            k,
            dataset.layers.len(),
            dataset.attributes.iter().map(|a| a.kind.width()).collect(),
            dataset.directed,
        )
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn directed(&self) -> bool {
        self.directed
    }

    pub fn n_attributes(&self) -> usize {
        self.attribute_widths.len()
    }

    pub fn attribute_width(&self, x: usize) -> usize {
        self.attribute_widths[x]
    }

    pub fn attribute_widths(&self) -> &[usize] {
        &self.attribute_widths
    }

    /// Total number of real parameters.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn u_offset(&self, i: usize) -> usize {
        i * self.k
    }

    /// Offset of `V_i`; aliases `U_i` when undirected.
    #[inline]
    pub fn v_offset(&self, i: usize) -> usize {
        if self.directed {
            (self.n_nodes + i) * self.k
        } else {
            i * self.k
        }
    }

    #[inline]
    pub fn w_offset(&self, layer: usize) -> usize {
        let nk = self.n_nodes * self.k;
        (if self.directed { 2 * nk } else { nk }) + layer * self.k * self.k
    }

    #[inline]
    pub fn h_offset(&self, x: usize) -> usize {
        self.attribute_offsets[x]
    }

    pub fn check_dataset(&self, dataset: &HeterogeneousDataset) -> Result<()> {
        let expected = Layout::for_dataset(dataset, self.k);
        if &expected != self {
            return Err(Error::DimensionMismatch(format!(
                "state layout (N={}, K={}, L={}, widths={:?}, directed={}) does not match dataset (N={}, L={}, widths={:?}, directed={})",
                self.n_nodes, self.k, self.n_layers, self.attribute_widths, self.directed,
                expected.n_nodes, expected.n_layers, expected.attribute_widths, expected.directed
            )));
        }
        Ok(())
    }
}

/// The unconstrained parameter pack `(U, V, W, H)`.
///
/// When the layout is undirected, `U` and `V` share storage. Gradients use the
/// same type and layout.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    layout: Layout,
    values: Vec<f64>,
}

/// Gradient of the log-posterior, laid out like the state it was taken at.
pub type Gradient = LatentState;

impl LatentState {
    pub fn zeros(layout: Layout) -> Self {
        let values = vec![0.0; layout.len];
        LatentState { layout, values }
    }

    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a layout of {} parameters",
                values.len(),
                layout.len
            )));
        }
        Ok(LatentState { layout, values })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn k(&self) -> usize {
        self.layout.k
    }

    pub fn u_row(&self, i: usize) -> &[f64] {
        let o = self.layout.u_offset(i);
        &self.values[o..o + self.layout.k]
    }

    pub fn u_row_mut(&mut self, i: usize) -> &mut [f64] {
        let o = self.layout.u_offset(i);
        let k = self.layout.k;
        &mut self.values[o..o + k]
    }

    pub fn v_row(&self, i: usize) -> &[f64] {
        let o = self.layout.v_offset(i);
        &self.values[o..o + self.layout.k]
    }

    pub fn v_row_mut(&mut self, i: usize) -> &mut [f64] {
        let o = self.layout.v_offset(i);
        let k = self.layout.k;
        &mut self.values[o..o + k]
    }

    /// `W^l`, row-major `K x K`.
    pub fn w(&self, layer: usize) -> &[f64] {
        let o = self.layout.w_offset(layer);
        let kk = self.layout.k * self.layout.k;
        &self.values[o..o + kk]
    }

    pub fn w_mut(&mut self, layer: usize) -> &mut [f64] {
        let o = self.layout.w_offset(layer);
        let kk = self.layout.k * self.layout.k;
        &mut self.values[o..o + kk]
    }

    /// `H_x`, row-major `K x Z~` (community rows).
    pub fn h(&self, x: usize) -> &[f64] {
        let o = self.layout.h_offset(x);
        let len = self.layout.k * self.layout.attribute_widths[x];
        &self.values[o..o + len]
    }

    pub fn h_mut(&mut self, x: usize) -> &mut [f64] {
        let o = self.layout.h_offset(x);
        let len = self.layout.k * self.layout.attribute_widths[x];
        &mut self.values[o..o + len]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Softmax memberships, row-major `N x K`, for `U` (`out_role = true`) or `V`.
    pub fn memberships(&self, out_role: bool) -> Vec<f64> {
        let n = self.layout.n_nodes;
        let k = self.layout.k;
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            let row = if out_role { self.u_row(i) } else { self.v_row(i) };
            math::softmax_into(row, &mut out[i * k..(i + 1) * k]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Number of communities `K`.
    pub k: usize,
    pub prior_mean: f64,
    pub prior_variance: f64,
    /// Diagonal entries `(i, i)` enter the likelihood only when set.
    pub include_self_loops: bool,
}

impl ModelConfig {
    pub fn new(k: usize) -> Self {
        ModelConfig { k, prior_mean: 0.0, prior_variance: 1.0, include_self_loops: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        if !(self.prior_variance > 0.0 && self.prior_variance.is_finite()) || !self.prior_mean.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "prior N({}, {}) is invalid",
                self.prior_mean, self.prior_variance
            )));
        }
        Ok(())
    }

    pub fn layout(&self, dataset: &HeterogeneousDataset) -> Layout {
        Layout::for_dataset(dataset, self.k)
    }
}

/// Transformed quantities shared by every evaluation at one state.
pub(crate) struct Forward {
    pub k: usize,
    /// `softmax(U_i)`, row-major `N x K`.
    pub su: Vec<f64>,
    /// `softmax(V_i)`; equal to `su` when undirected.
    pub sv: Vec<f64>,
    /// `g_l(W^l)` per layer, row-major `K x K`.
    pub gw: Vec<Vec<f64>>,
    /// `g_x(H_x)` per attribute, row-major `K x Z~`.
    pub gh: Vec<Vec<f64>>,
}

impl Forward {
    pub fn new(dataset: &HeterogeneousDataset, state: &LatentState) -> Self {
        Self::from_kinds(&dataset.layer_kinds(), &dataset.attribute_kinds(), state)
    }

    pub fn from_kinds(layers: &[LayerKind], attributes: &[AttributeKind], state: &LatentState) -> Self {
        let layout = state.layout();
        let k = layout.k;
        let su = state.memberships(true);
        let sv = if layout.directed { state.memberships(false) } else { su.clone() };
        let gw = layers
            .iter()
            .enumerate()
            .map(|(l, kind)| state.w(l).iter().map(|&w| kind.transform(w)).collect())
            .collect();
        let gh = attributes
            .iter()
            .enumerate()
            .map(|(x, kind)| {
                let width = kind.width();
                let raw = state.h(x);
                let mut out = vec![0.0; raw.len()];
                for r in 0..k {
                    kind.transform_into(&raw[r * width..(r + 1) * width], &mut out[r * width..(r + 1) * width]);
                }
                out
            })
            .collect();
        Forward { k, su, sv, gw, gh }
    }

    #[inline]
    pub fn su_row(&self, i: usize) -> &[f64] {
        &self.su[i * self.k..(i + 1) * self.k]
    }

    #[inline]
    pub fn sv_row(&self, i: usize) -> &[f64] {
        &self.sv[i * self.k..(i + 1) * self.k]
    }

    /// `out = softmax(U_i)^T g(W^l)`.
    #[inline]
    pub fn source_factor(&self, layer: usize, i: usize, out: &mut [f64]) {
        let k = self.k;
        let g = &self.gw[layer];
        let s = self.su_row(i);
        out.iter_mut().for_each(|x| *x = 0.0);
        for a in 0..k {
            let sa = s[a];
            for (q, o) in out.iter_mut().enumerate() {
                *o += sa * g[a * k + q];
            }
        }
    }

    #[cfg(test)]
    pub fn lambda(&self, layer: usize, i: usize, j: usize) -> f64 {
        let mut a = vec![0.0; self.k];
        self.source_factor(layer, i, &mut a);
        math::dot(&a, self.sv_row(j))
    }

    /// Mixed membership `m_i = (s_u + s_v) / 2`.
    #[inline]
    pub fn mixed_row(&self, i: usize, out: &mut [f64]) {
        for ((o, a), b) in out.iter_mut().zip(self.su_row(i)).zip(self.sv_row(i)) {
            *o = 0.5 * (a + b);
        }
    }

    /// `pi_ix` (length `Z~`).
    pub fn pi(&self, x: usize, width: usize, i: usize, out: &mut [f64]) {
        let k = self.k;
        let mut m = vec![0.0; k];
        self.mixed_row(i, &mut m);
        let g = &self.gh[x];
        out.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..k {
            for z in 0..width {
                out[z] += m[r] * g[r * width + z];
            }
        }
    }
}

pub(crate) fn check_inputs(
    dataset: &HeterogeneousDataset,
    state: &LatentState,
    mask: &ObservationMask,
    config: &ModelConfig,
) -> Result<()> {
    config.validate()?;
    if state.k() != config.k {
        return Err(Error::DimensionMismatch(format!(
            "state has K={}, config has K={}",
            state.k(),
            config.k
        )));
    }
    state.layout().check_dataset(dataset)?;
    mask.check_against(dataset)
}

/// Expected value `lambda^l_ij`.
pub fn expected_edge_value(
    dataset: &HeterogeneousDataset,
    state: &LatentState,
    layer: usize,
    i: usize,
    j: usize,
) -> Result<f64> {
    state.layout().check_dataset(dataset)?;
    let n = dataset.n_nodes;
    if layer >= dataset.layers.len() {
        return Err(Error::IndexOutOfRange { what: "layer", index: layer, limit: dataset.layers.len() });
    }
    for idx in [i, j] {
        if idx >= n {
            return Err(Error::IndexOutOfRange { what: "node", index: idx, limit: n });
        }
    }
    let k = state.k();
    let kind = dataset.layers[layer].kind;
    let su = math::softmax_row(state.u_row(i))?;
    let sv = math::softmax_row(state.v_row(j))?;
    let w = state.w(layer);
    let mut lambda = 0.0;
    for a in 0..k {
        for b in 0..k {
            lambda += su[a] * kind.transform(w[a * k + b]) * sv[b];
        }
    }
    Ok(lambda)
}

/// Expected value `pi_ix`: a probability vector over `Z` categories for
/// categorical attributes, a single value otherwise.
pub fn expected_attribute_value(
    dataset: &HeterogeneousDataset,
    state: &LatentState,
    i: usize,
    x: usize,
) -> Result<Vec<f64>> {
    state.layout().check_dataset(dataset)?;
    if x >= dataset.attributes.len() {
        return Err(Error::IndexOutOfRange { what: "attribute", index: x, limit: dataset.attributes.len() });
    }
    if i >= dataset.n_nodes {
        return Err(Error::IndexOutOfRange { what: "node", index: i, limit: dataset.n_nodes });
    }
    let kind = dataset.attributes[x].kind;
    let k = state.k();
    let width = kind.width();
    let su = math::softmax_row(state.u_row(i))?;
    let sv = math::softmax_row(state.v_row(i))?;
    let h = state.h(x);
    let mut out = vec![0.0; width];
    for r in 0..k {
        let g = kind.transform(&h[r * width..(r + 1) * width])?;
        let m = 0.5 * (su[r] + sv[r]);
        for z in 0..width {
            out[z] += m * g[z];
        }
    }
    Ok(out)
}

pub(crate) fn log_likelihood_forward(
    dataset: &HeterogeneousDataset,
    fwd: &Forward,
    mask: &ObservationMask,
    config: &ModelConfig,
) -> f64 {
    let n = dataset.n_nodes;
    let k = fwd.k;
    let mut total = 0.0;
    let mut row = vec![0.0; n];
    let mut a = vec![0.0; k];
    for (l, layer) in dataset.layers.iter().enumerate() {
        let kind = layer.kind;
        let mut layer_sum = 0.0;
        for i in 0..n {
            let held = mask.edge_row(l, i);
            if !held.iter().any(|&b| b) {
                continue;
            }
            layer.fill_row(i, &mut row);
            fwd.source_factor(l, i, &mut a);
            for j in 0..n {
                if !held[j] || (i == j && !config.include_self_loops) {
                    continue;
                }
                let lambda = math::dot(&a, fwd.sv_row(j));
                layer_sum += kind.log_density(row[j], lambda).0;
            }
        }
        total += layer_sum;
    }
    let mut pi = Vec::new();
    for (x, attr) in dataset.attributes.iter().enumerate() {
        let width = attr.kind.width();
        pi.resize(width, 0.0);
        let mut attr_sum = 0.0;
        for i in 0..n {
            if !mask.attribute(x, i) {
                continue;
            }
            fwd.pi(x, width, i, &mut pi);
            let obs = attr.values[i];
            attr_sum += match attr.kind {
                AttributeKind::Categorical { .. } => categorical_terms(pi[obs as usize]).0,
                _ => scalar_attribute_terms(&attr.kind, obs, pi[0]).0,
            };
        }
        total += attr_sum;
    }
    total
}

/// Sum of per-entry log-densities over held-in entries.
pub fn log_likelihood(
    dataset: &HeterogeneousDataset,
    state: &LatentState,
    mask: &ObservationMask,
    config: &ModelConfig,
) -> Result<f64> {
    check_inputs(dataset, state, mask, config)?;
    let fwd = Forward::new(dataset, state);
    Ok(log_likelihood_forward(dataset, &fwd, mask, config))
}

/// Independent `N(prior_mean, prior_variance)` log-density over every parameter.
pub fn log_prior(state: &LatentState, config: &ModelConfig) -> f64 {
    let c = -0.5 * (math::LN_2PI + math::ln(config.prior_variance));
    let inv = 0.5 / config.prior_variance;
    state
        .values
        .iter()
        .map(|&t| {
            let d = t - config.prior_mean;
            c - d * d * inv
        })
        .sum()
}

/// Unnormalized log-posterior: log-likelihood plus log-prior.
pub fn log_posterior(
    dataset: &HeterogeneousDataset,
    state: &LatentState,
    mask: &ObservationMask,
    config: &ModelConfig,
) -> Result<f64> {
    Ok(log_likelihood(dataset, state, mask, config)? + log_prior(state, config))
}

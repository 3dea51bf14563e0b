//! Exact derivatives of the log-posterior.
//!
//! The gradient is a reverse sweep over the fixed computation graph
//! `theta -> (softmax, g) -> (lambda, pi) -> log-density`: the forward pass caches
//! the transformed quantities, adjoints of every expected value are pushed back
//! through the bilinear forms, then through the softmax / logistic / exp nodes.
//!
//! Hessians are block diagonal: one `K x K` block per membership row (`U_i`, and
//! `V_i` when directed), one `K^2 x K^2` block per affinity matrix and one
//! `K Z~ x K Z~` block per attribute. Cross-block curvature is not computed.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::math::{self, softmax_vjp};
use crate::model::{
    categorical_terms, check_inputs, log_prior, scalar_attribute_terms,
    AttributeKind, Forward, Gradient, HeterogeneousDataset, LatentState, Layout, ModelConfig,
    ObservationMask,
};
use crate::par;
use crate::{Error, Result};

/// Identifies one diagonal block of the Hessian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockId {
    /// Out-going membership row `U_i` (the shared row when undirected).
    U(usize),
    /// In-coming membership row `V_i` (directed only).
    V(usize),
    /// Affinity matrix `W^l`, coordinates in row-major order.
    W(usize),
    /// Community-covariate block `H_x`, coordinates in row-major `K x Z~` order.
    H(usize),
}

impl BlockId {
    /// Every block of a layout, in storage order.
    pub fn all(layout: &Layout) -> Vec<BlockId> {
        let n = layout.n_nodes();
        let mut out: Vec<BlockId> = (0..n).map(BlockId::U).collect();
        if layout.directed() {
            out.extend((0..n).map(BlockId::V));
        }
        out.extend((0..layout.n_layers()).map(BlockId::W));
        out.extend((0..layout.n_attributes()).map(BlockId::H));
        out
    }

    /// Flat offset and size of the block inside [`LatentState::values`].
    pub fn range(&self, layout: &Layout) -> (usize, usize) {
        let k = layout.k();
        match *self {
            BlockId::U(i) => (layout.u_offset(i), k),
            BlockId::V(i) => (layout.v_offset(i), k),
            BlockId::W(l) => (layout.w_offset(l), k * k),
            BlockId::H(x) => (layout.h_offset(x), k * layout.attribute_width(x)),
        }
    }

    fn validate(&self, layout: &Layout) -> Result<()> {
        let (what, index, limit) = match *self {
            BlockId::U(i) => ("node", i, layout.n_nodes()),
            BlockId::V(i) => {
                if !layout.directed() {
                    return Err(Error::InvalidArgument(format!(
                        "V({i}) requested for an undirected layout"
                    )));
                }
                ("node", i, layout.n_nodes())
            }
            BlockId::W(l) => ("layer", l, layout.n_layers()),
            BlockId::H(x) => ("attribute", x, layout.n_attributes()),
        };
        if index >= limit {
            return Err(Error::IndexOutOfRange { what, index, limit });
        }
        Ok(())
    }
}

impl core::fmt::Display for BlockId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            BlockId::U(i) => write!(f, "U[{i}]"),
            BlockId::V(i) => write!(f, "V[{i}]"),
            BlockId::W(l) => write!(f, "W[{l}]"),
            BlockId::H(x) => write!(f, "H[{x}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessianBlock {
    pub id: BlockId,
    pub matrix: DMatrix<f64>,
}

/// Selected diagonal blocks of the log-posterior Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockHessian {
    pub blocks: Vec<HessianBlock>,
}

impl BlockHessian {
    pub fn get(&self, id: BlockId) -> Option<&DMatrix<f64>> {
        self.blocks.iter().find(|b| b.id == id).map(|b| &b.matrix)
    }
}

/// Gradient of the prior alone: `-(theta - mean) / variance`.
pub fn grad_log_prior(state: &LatentState, config: &ModelConfig) -> Gradient {
    let mut grad = LatentState::zeros(state.layout().clone());
    let inv = 1.0 / config.prior_variance;
    for (g, &t) in grad.values_mut().iter_mut().zip(state.values()) {
        *g = -(t - config.prior_mean) * inv;
    }
    grad
}

/// Gradient of the log-likelihood alone.
pub fn grad_log_likelihood(
    dataset: &HeterogeneousDataset,
    state: &LatentState,
    mask: &ObservationMask,
    config: &ModelConfig,
) -> Result<Gradient> {
    check_inputs(dataset, state, mask, config)?;
    Ok(likelihood_value_and_grad(dataset, state, mask, config).1)
}

/// Gradient of the unnormalized log-posterior.
pub fn grad_log_posterior(
    dataset: &HeterogeneousDataset,
    state: &LatentState,
    mask: &ObservationMask,
    config: &ModelConfig,
) -> Result<Gradient> {
    Ok(value_and_grad(dataset, state, mask, config)?.1)
}

/// Log-posterior and its gradient in one sweep.
pub fn value_and_grad(
    dataset: &HeterogeneousDataset,
    state: &LatentState,
    mask: &ObservationMask,
    config: &ModelConfig,
) -> Result<(f64, Gradient)> {
    check_inputs(dataset, state, mask, config)?;
    let (ll, mut grad) = likelihood_value_and_grad(dataset, state, mask, config);
    let inv = 1.0 / config.prior_variance;
    for (g, &t) in grad.values_mut().iter_mut().zip(state.values()) {
        *g -= (t - config.prior_mean) * inv;
    }
    Ok((ll + log_prior(state, config), grad))
}

/// Reverse sweep. Inputs are assumed validated.
pub(crate) fn likelihood_value_and_grad(
    dataset: &HeterogeneousDataset,
    state: &LatentState,
    mask: &ObservationMask,
    config: &ModelConfig,
) -> (f64, Gradient) {
    let layout = state.layout();
    let n = layout.n_nodes();
    let k = layout.k();
    let fwd = Forward::new(dataset, state);
    let mut grad = LatentState::zeros(layout.clone());

    // adjoints of softmax(U_i) and softmax(V_i)
    let mut dsu = vec![0.0; n * k];
    let mut dsv = vec![0.0; n * k];

    let mut total = 0.0;
    let mut row = vec![0.0; n];
    let mut a = vec![0.0; k];
    let mut r = vec![0.0; k];
    for (l, layer) in dataset.layers().iter().enumerate() {
        let kind = layer.kind();
        let g = &fwd.gw[l];
        let mut dg = vec![0.0; k * k];
        let mut layer_sum = 0.0;
        for i in 0..n {
            let held = mask.edge_row(l, i);
            if !held.iter().any(|&b| b) {
                continue;
            }
            layer.fill_row(i, &mut row);
            fwd.source_factor(l, i, &mut a);
            r.iter_mut().for_each(|x| *x = 0.0);
            for j in 0..n {
                if !held[j] || (i == j && !config.include_self_loops) {
                    continue;
                }
                let t = fwd.sv_row(j);
                let lambda = math::dot(&a, t);
                let (f, d1, _) = kind.log_density(row[j], lambda);
                layer_sum += f;
                if d1 != 0.0 {
                    for q in 0..k {
                        r[q] += d1 * t[q];
                    }
                    let dv = &mut dsv[j * k..(j + 1) * k];
                    for q in 0..k {
                        dv[q] += d1 * a[q];
                    }
                }
            }
            // lambda_ij = s_i^T G t_j, so d/ds_i = G r and d/dG = s_i r^T
            let s = fwd.su_row(i);
            let du = &mut dsu[i * k..(i + 1) * k];
            for p in 0..k {
                let mut acc = 0.0;
                for q in 0..k {
                    acc += g[p * k + q] * r[q];
                    dg[p * k + q] += s[p] * r[q];
                }
                du[p] += acc;
            }
        }
        total += layer_sum;
        let raw = state.w(l);
        let dw = grad.w_mut(l);
        for idx in 0..k * k {
            let (d1, _) = kind.transform_derivatives(raw[idx], g[idx]);
            dw[idx] = dg[idx] * d1;
        }
    }

    let mut m = vec![0.0; k];
    let mut dm = vec![0.0; k];
    for (x, attr) in dataset.attributes().iter().enumerate() {
        let kind = attr.kind();
        let width = kind.width();
        let gh = &fwd.gh[x];
        let mut dgh = vec![0.0; k * width];
        let mut attr_sum = 0.0;
        for i in 0..n {
            if !mask.attribute(x, i) {
                continue;
            }
            fwd.mixed_row(i, &mut m);
            let obs = attr.values()[i];
            let (f, d1) = match kind {
                AttributeKind::Categorical { .. } => {
                    let c = obs as usize;
                    let pi: f64 = (0..k).map(|p| m[p] * gh[p * width + c]).sum();
                    let (f, d1, _) = categorical_terms(pi);
                    for p in 0..k {
                        dm[p] = d1 * gh[p * width + c];
                        dgh[p * width + c] += d1 * m[p];
                    }
                    (f, d1)
                }
                _ => {
                    let pi: f64 = (0..k).map(|p| m[p] * gh[p]).sum();
                    let (f, d1, _) = scalar_attribute_terms(&kind, obs, pi);
                    for p in 0..k {
                        dm[p] = d1 * gh[p];
                        dgh[p] += d1 * m[p];
                    }
                    (f, d1)
                }
            };
            attr_sum += f;
            if d1 != 0.0 {
                for p in 0..k {
                    dsu[i * k + p] += 0.5 * dm[p];
                    dsv[i * k + p] += 0.5 * dm[p];
                }
            }
        }
        total += attr_sum;
        let raw = state.h(x).to_vec();
        let dh = grad.h_mut(x);
        match kind {
            AttributeKind::Categorical { .. } => {
                for p in 0..k {
                    let span = p * width..(p + 1) * width;
                    softmax_vjp(&gh[span.clone()], &dgh[span.clone()], &mut dh[span]);
                }
            }
            AttributeKind::Poisson => {
                for p in 0..k {
                    dh[p] = if raw[p] > math::EXP_CAP { 0.0 } else { dgh[p] * gh[p] };
                }
            }
            AttributeKind::Gaussian { .. } => dh.copy_from_slice(&dgh),
        }
    }

    let mut tmp = vec![0.0; k];
    for i in 0..n {
        let su = fwd.su_row(i);
        if layout.directed() {
            softmax_vjp(su, &dsu[i * k..(i + 1) * k], grad.u_row_mut(i));
            softmax_vjp(fwd.sv_row(i), &dsv[i * k..(i + 1) * k], grad.v_row_mut(i));
        } else {
            for p in 0..k {
                tmp[p] = dsu[i * k + p] + dsv[i * k + p];
            }
            softmax_vjp(su, &tmp, grad.u_row_mut(i));
        }
    }

    (total, grad)
}

/// Selected diagonal blocks of the Hessian of the log-posterior, each computed
/// with every other coordinate held fixed.
pub fn block_hessian(
    dataset: &HeterogeneousDataset,
    state: &LatentState,
    mask: &ObservationMask,
    config: &ModelConfig,
    blocks: &[BlockId],
) -> Result<BlockHessian> {
    check_inputs(dataset, state, mask, config)?;
    for b in blocks {
        b.validate(state.layout())?;
    }
    let fwd = Forward::new(dataset, state);
    let ctx = HessianContext { dataset, state, mask, config, fwd: &fwd };
    let matrices = par::map_indexed(blocks.len(), |idx| ctx.block(blocks[idx]));
    Ok(BlockHessian {
        blocks: blocks
            .iter()
            .zip(matrices)
            .map(|(&id, matrix)| HessianBlock { id, matrix })
            .collect(),
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Out,
    In,
    /// Undirected: the row plays both roles.
    Both,
}

struct HessianContext<'a> {
    dataset: &'a HeterogeneousDataset,
    state: &'a LatentState,
    mask: &'a ObservationMask,
    config: &'a ModelConfig,
    fwd: &'a Forward,
}

impl HessianContext<'_> {
    fn block(&self, id: BlockId) -> DMatrix<f64> {
        let mut h = match id {
            BlockId::U(i) => {
                let role = if self.state.layout().directed() { Role::Out } else { Role::Both };
                self.membership_block(i, role)
            }
            BlockId::V(i) => self.membership_block(i, Role::In),
            BlockId::W(l) => self.affinity_block(l),
            BlockId::H(x) => self.attribute_block(x),
        };
        let prior = 1.0 / self.config.prior_variance;
        for d in 0..h.nrows() {
            h[(d, d)] -= prior;
        }
        h
    }

    fn membership_block(&self, i: usize, role: Role) -> DMatrix<f64> {
        let fwd = self.fwd;
        let k = fwd.k;
        let n = self.dataset.n_nodes();
        let self_loops = self.config.include_self_loops;
        let s = if role == Role::In { fwd.sv_row(i) } else { fwd.su_row(i) };

        // gradient `a` and Hessian `curv` of the log-likelihood with respect to s
        let mut a = vec![0.0; k];
        let mut curv = vec![0.0; k * k];
        let mut b = vec![0.0; k];
        let add = |b: &[f64], d1: f64, d2: f64, a: &mut [f64], curv: &mut [f64]| {
            for p in 0..k {
                a[p] += d1 * b[p];
                for q in 0..k {
                    curv[p * k + q] += d2 * b[p] * b[q];
                }
            }
        };

        for (l, layer) in self.dataset.layers().iter().enumerate() {
            let kind = layer.kind();
            let g = &fwd.gw[l];
            if role != Role::In {
                for j in 0..n {
                    if !self.mask.edge(l, i, j) || (i == j && (!self_loops || role == Role::Both)) {
                        continue;
                    }
                    let t = fwd.sv_row(j);
                    for p in 0..k {
                        b[p] = (0..k).map(|q| g[p * k + q] * t[q]).sum();
                    }
                    let (_, d1, d2) = kind.log_density(layer.get(i, j), math::dot(s, &b));
                    add(&b, d1, d2, &mut a, &mut curv);
                }
            }
            if role != Role::Out {
                for j in 0..n {
                    if !self.mask.edge(l, j, i) || (i == j && (!self_loops || role == Role::Both)) {
                        continue;
                    }
                    let src = fwd.su_row(j);
                    for q in 0..k {
                        b[q] = (0..k).map(|p| src[p] * g[p * k + q]).sum();
                    }
                    let (_, d1, d2) = kind.log_density(layer.get(j, i), math::dot(s, &b));
                    add(&b, d1, d2, &mut a, &mut curv);
                }
            }
            if role == Role::Both && self_loops && self.mask.edge(l, i, i) {
                // lambda_ii = s^T G s is quadratic in s
                for p in 0..k {
                    b[p] = (0..k).map(|q| (g[p * k + q] + g[q * k + p]) * s[q]).sum();
                }
                let lambda = 0.5 * math::dot(s, &b);
                let (_, d1, d2) = kind.log_density(layer.get(i, i), lambda);
                add(&b, d1, d2, &mut a, &mut curv);
                for p in 0..k {
                    for q in 0..k {
                        curv[p * k + q] += d1 * (g[p * k + q] + g[q * k + p]);
                    }
                }
            }
        }

        let scale = if role == Role::Both { 1.0 } else { 0.5 };
        let mut m = vec![0.0; k];
        for (x, attr) in self.dataset.attributes().iter().enumerate() {
            if !self.mask.attribute(x, i) {
                continue;
            }
            let kind = attr.kind();
            let width = kind.width();
            let gh = &fwd.gh[x];
            fwd.mixed_row(i, &mut m);
            let obs = attr.values()[i];
            let col = if let AttributeKind::Categorical { .. } = kind { obs as usize } else { 0 };
            for p in 0..k {
                b[p] = scale * gh[p * width + col];
            }
            let pi: f64 = (0..k).map(|p| m[p] * gh[p * width + col]).sum();
            let (_, d1, d2) = match kind {
                AttributeKind::Categorical { .. } => categorical_terms(pi),
                _ => scalar_attribute_terms(&kind, obs, pi),
            };
            add(&b, d1, d2, &mut a, &mut curv);
        }

        softmax_chain(s, &a, &curv)
    }

    fn affinity_block(&self, l: usize) -> DMatrix<f64> {
        let fwd = self.fwd;
        let k = fwd.k;
        let kk = k * k;
        let n = self.dataset.n_nodes();
        let layer = &self.dataset.layers()[l];
        let kind = layer.kind();
        let mut row = vec![0.0; n];
        let mut a = vec![0.0; k];
        let mut r = vec![0.0; k];
        let mut t2 = vec![0.0; kk];
        // sums over entries of f' (s (x) t) and f'' (s (x) t)(s (x) t)^T
        let mut first = vec![0.0; kk];
        let mut second = vec![0.0; kk * kk];
        for i in 0..n {
            let held = self.mask.edge_row(l, i);
            if !held.iter().any(|&b| b) {
                continue;
            }
            layer.fill_row(i, &mut row);
            fwd.source_factor(l, i, &mut a);
            r.iter_mut().for_each(|x| *x = 0.0);
            t2.iter_mut().for_each(|x| *x = 0.0);
            for j in 0..n {
                if !held[j] || (i == j && !self.config.include_self_loops) {
                    continue;
                }
                let t = fwd.sv_row(j);
                let (_, d1, d2) = kind.log_density(row[j], math::dot(&a, t));
                for q in 0..k {
                    r[q] += d1 * t[q];
                    for q2 in 0..k {
                        t2[q * k + q2] += d2 * t[q] * t[q2];
                    }
                }
            }
            let s = fwd.su_row(i);
            for p in 0..k {
                for q in 0..k {
                    first[p * k + q] += s[p] * r[q];
                }
            }
            for p in 0..k {
                for p2 in 0..k {
                    let sp = s[p] * s[p2];
                    for q in 0..k {
                        for q2 in 0..k {
                            second[(p * k + q) * kk + p2 * k + q2] += sp * t2[q * k + q2];
                        }
                    }
                }
            }
        }
        let raw = self.state.w(l);
        let g = &fwd.gw[l];
        let derivs: Vec<(f64, f64)> = (0..kk).map(|c| kind.transform_derivatives(raw[c], g[c])).collect();
        DMatrix::from_fn(kk, kk, |c1, c2| {
            let mut v = derivs[c1].0 * derivs[c2].0 * second[c1 * kk + c2];
            if c1 == c2 {
                v += first[c1] * derivs[c1].1;
            }
            v
        })
    }

    fn attribute_block(&self, x: usize) -> DMatrix<f64> {
        let fwd = self.fwd;
        let k = fwd.k;
        let n = self.dataset.n_nodes();
        let attr = &self.dataset.attributes()[x];
        let kind = attr.kind();
        let width = kind.width();
        let dim = k * width;
        let gh = &fwd.gh[x];
        let raw = self.state.h(x);
        let mut hess = vec![0.0; dim * dim];
        let mut m = vec![0.0; k];
        let mut e = vec![0.0; dim];
        for i in 0..n {
            if !self.mask.attribute(x, i) {
                continue;
            }
            fwd.mixed_row(i, &mut m);
            let obs = attr.values()[i];
            match kind {
                AttributeKind::Categorical { .. } => {
                    let c = obs as usize;
                    let pi: f64 = (0..k).map(|p| m[p] * gh[p * width + c]).sum();
                    let (_, d1, d2) = categorical_terms(pi);
                    for p in 0..k {
                        let qc = gh[p * width + c];
                        for z in 0..width {
                            let delta = if z == c { 1.0 } else { 0.0 };
                            e[p * width + z] = m[p] * qc * (delta - gh[p * width + z]);
                        }
                    }
                    for c1 in 0..dim {
                        for c2 in 0..dim {
                            hess[c1 * dim + c2] += d2 * e[c1] * e[c2];
                        }
                    }
                    if d1 != 0.0 {
                        // second derivative of pi, nonzero only within a community row
                        for p in 0..k {
                            let qc = gh[p * width + c];
                            for z in 0..width {
                                let qz = gh[p * width + z];
                                let dz = if z == c { 1.0 } else { 0.0 };
                                for z2 in 0..width {
                                    let qz2 = gh[p * width + z2];
                                    let dz2 = if z2 == c { 1.0 } else { 0.0 };
                                    let dzz = if z == z2 { 1.0 } else { 0.0 };
                                    let d2pi = m[p] * qc * ((dz - qz) * (dz2 - qz2) - qz * (dzz - qz2));
                                    hess[(p * width + z) * dim + p * width + z2] += d1 * d2pi;
                                }
                            }
                        }
                    }
                }
                _ => {
                    let pi: f64 = (0..k).map(|p| m[p] * gh[p]).sum();
                    let (_, d1, d2) = scalar_attribute_terms(&kind, obs, pi);
                    for p in 0..k {
                        let (g1, g2) = scalar_link_derivatives(&kind, raw[p], gh[p]);
                        e[p] = m[p] * g1;
                        hess[p * dim + p] += d1 * m[p] * g2;
                    }
                    for c1 in 0..dim {
                        for c2 in 0..dim {
                            hess[c1 * dim + c2] += d2 * e[c1] * e[c2];
                        }
                    }
                }
            }
        }
        DMatrix::from_row_slice(dim, dim, &hess)
    }
}

fn scalar_link_derivatives(kind: &AttributeKind, raw: f64, g: f64) -> (f64, f64) {
    match kind {
        AttributeKind::Poisson if raw > math::EXP_CAP => (0.0, 0.0),
        AttributeKind::Poisson => (g, g),
        _ => (1.0, 0.0),
    }
}

/// Hessian with respect to `u` of a function `F(softmax(u))`, given the
/// gradient `a` and Hessian `curv` of `F` with respect to `s = softmax(u)`:
/// `J curv J + sum_c a_c d^2 s_c / du du`.
fn softmax_chain(s: &[f64], a: &[f64], curv: &[f64]) -> DMatrix<f64> {
    let k = s.len();
    let jac = DMatrix::from_fn(k, k, |p, q| if p == q { s[p] * (1.0 - s[p]) } else { -s[p] * s[q] });
    let c = DMatrix::from_row_slice(k, k, curv);
    let mut h = &jac * c * &jac;
    let a_bar = math::dot(a, s);
    for p in 0..k {
        for q in 0..k {
            let mut v = -s[p] * s[q] * ((a[p] - a_bar) + (a[q] - a_bar));
            if p == q {
                v += s[p] * (a[p] - a_bar);
            }
            h[(p, q)] += v;
        }
    }
    h
}

/// Maximum relative discrepancy between analytic and central-difference
/// gradients, per block.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub blocks: Vec<(BlockId, f64)>,
}

impl FdReport {
    pub fn max_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.1).fold(0.0, f64::max)
    }
}

/// Compare [`grad_log_posterior`] with central differences of the log-posterior.
/// Relative error uses the denominator `max(1, |analytic|)`.
pub fn finite_difference_check(
    dataset: &HeterogeneousDataset,
    state: &LatentState,
    mask: &ObservationMask,
    config: &ModelConfig,
    step: f64,
) -> Result<FdReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be > 0, got {step}")));
    }
    let analytic = grad_log_posterior(dataset, state, mask, config)?;
    let ids = BlockId::all(state.layout());
    let errors = par::map_indexed(ids.len(), |b| {
        let (offset, len) = ids[b].range(state.layout());
        let mut probe = state.clone();
        let mut worst: f64 = 0.0;
        for c in offset..offset + len {
            let orig = probe.values()[c];
            probe.values_mut()[c] = orig + step;
            let up = crate::model::log_posterior(dataset, &probe, mask, config).unwrap_or(f64::NAN);
            probe.values_mut()[c] = orig - step;
            let down = crate::model::log_posterior(dataset, &probe, mask, config).unwrap_or(f64::NAN);
            probe.values_mut()[c] = orig;
            let fd = (up - down) / (2.0 * step);
            let g = analytic.values()[c];
            let err = (g - fd).abs() / g.abs().max(1.0);
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
        }
        worst
    });
    Ok(FdReport { blocks: ids.into_iter().zip(errors).collect() })
}

//! Versioned, checksummed JSON file holding a fitted model.

use std::path::Path;

use piham_core::diff::BlockId;
use piham_core::inference::{
    ConvergenceMode, CovarianceBlock, LaplaceCovariance, OptimizerSettings, PosteriorEstimate, RestartResult, SeedMode,
};
use piham_core::model::{AttributeKind, LatentState, LayerKind, Layout, ModelConfig};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::ingest::DatasetMeta;
use crate::manifest::{AttributeSpec, LayerType};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigRecord {
    pub k: usize,
    pub prior_mean: f64,
    pub prior_variance: f64,
    pub include_self_loops: bool,
}

impl From<&ModelConfig> for ConfigRecord {
    fn from(c: &ModelConfig) -> Self {
        Self { k: c.k, prior_mean: c.prior_mean, prior_variance: c.prior_variance, include_self_loops: c.include_self_loops }
    }
}

impl ConfigRecord {
    pub fn to_config(&self) -> ModelConfig {
        ModelConfig {
            k: self.k,
            prior_mean: self.prior_mean,
            prior_variance: self.prior_variance,
            include_self_loops: self.include_self_loops,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingsRecord {
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub n_restarts: usize,
    pub init_mean: f64,
    pub init_variance: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub rng_seed: u64,
    pub relative_tolerance: bool,
    pub shared_seed: bool,
}

impl From<&OptimizerSettings> for SettingsRecord {
    fn from(s: &OptimizerSettings) -> Self {
        Self {
            learning_rate: s.learning_rate,
            max_iterations: s.max_iterations,
            tolerance: s.tolerance,
            n_restarts: s.n_restarts,
            init_mean: s.init_mean,
            init_variance: s.init_variance,
            beta1: s.beta1,
            beta2: s.beta2,
            epsilon: s.epsilon,
            rng_seed: s.rng_seed,
            relative_tolerance: s.convergence == ConvergenceMode::Relative,
            shared_seed: s.seed_mode == SeedMode::Shared,
        }
    }
}

impl SettingsRecord {
    pub fn to_settings(&self) -> OptimizerSettings {
        OptimizerSettings {
            learning_rate: self.learning_rate,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            n_restarts: self.n_restarts,
            init_mean: self.init_mean,
            init_variance: self.init_variance,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            rng_seed: self.rng_seed,
            convergence: if self.relative_tolerance { ConvergenceMode::Relative } else { ConvergenceMode::Absolute },
            seed_mode: if self.shared_seed { SeedMode::Shared } else { SeedMode::PerRestart },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: LayerType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian_variance: Option<f64>,
}

impl LayerRecord {
    fn new(name: &str, kind: LayerKind) -> Self {
        let (kind, gaussian_variance) = match kind {
            LayerKind::Bernoulli => (LayerType::Bernoulli, None),
            LayerKind::Poisson => (LayerType::Poisson, None),
            LayerKind::Gaussian { variance } => (LayerType::Gaussian, Some(variance)),
        };
        Self { name: name.to_string(), kind, gaussian_variance }
    }

    pub fn layer_kind(&self) -> CliResult<LayerKind> {
        let kind = match self.kind {
            LayerType::Bernoulli => LayerKind::Bernoulli,
            LayerType::Poisson => LayerKind::Poisson,
            LayerType::Gaussian => LayerKind::Gaussian {
                variance: self.gaussian_variance.ok_or_else(|| CliError::data("gaussian layer without variance"))?,
            },
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// Latent MAP values grouped by block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapRecord {
    /// `U_i` per node.
    pub u: Vec<Vec<f64>>,
    /// `V_i` per node; empty for undirected models, where `V = U`.
    pub v: Vec<Vec<f64>>,
    /// Row-major `K x K` affinity per layer.
    pub w: Vec<Vec<f64>>,
    /// Row-major `K x Z` block per attribute.
    pub h: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceRecord {
    /// Block name such as `U[3]` or `W[0]`.
    pub block: String,
    pub jitter: f64,
    /// Row-major, `d x d`.
    pub matrix: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestartRecord {
    pub index: usize,
    /// `None` when the restart failed.
    pub final_log_posterior: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelPayload {
    pub config: ConfigRecord,
    pub settings: SettingsRecord,
    pub seed: u64,
    pub directed: bool,
    pub node_labels: Vec<String>,
    pub layers: Vec<LayerRecord>,
    pub attributes: Vec<AttributeSpec>,
    pub map: MapRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<CovarianceRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient_inf_norm: Option<f64>,
    pub final_log_posterior: f64,
    pub best_restart: usize,
    pub restarts: Vec<RestartRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FittedModelFile {
    pub format_version: u32,
    /// Hex SHA-256 of the compact JSON encoding of `model`.
    pub checksum: String,
    pub model: ModelPayload,
}

/// A loaded model in core types.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub config: ModelConfig,
    pub settings: OptimizerSettings,
    pub layer_kinds: Vec<LayerKind>,
    pub attribute_kinds: Vec<AttributeKind>,
    pub meta: DatasetMeta,
    pub posterior: PosteriorEstimate,
}

fn checksum(payload: &ModelPayload) -> CliResult<String> {
    let bytes = serde_json::to_vec(payload)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn layout_of(payload: &ModelPayload, attribute_kinds: &[AttributeKind]) -> Layout {
    Layout::new(
        payload.node_labels.len(),
        payload.config.k,
        payload.layers.len(),
        attribute_kinds.iter().map(|a| a.width()).collect(),
        payload.directed,
    )
}

impl FittedModelFile {
    pub fn from_fit(
        posterior: &PosteriorEstimate,
        config: &ModelConfig,
        settings: &OptimizerSettings,
        layer_kinds: &[LayerKind],
        attribute_kinds: &[AttributeKind],
        meta: &DatasetMeta,
    ) -> CliResult<Self> {
        let state = &posterior.map_state;
        let layout = state.layout();
        let n = layout.n_nodes();
        let map = MapRecord {
            u: (0..n).map(|i| state.u_row(i).to_vec()).collect(),
            v: if layout.directed() { (0..n).map(|i| state.v_row(i).to_vec()).collect() } else { Vec::new() },
            w: (0..layout.n_layers()).map(|l| state.w(l).to_vec()).collect(),
            h: (0..layout.n_attributes()).map(|x| state.h(x).to_vec()).collect(),
        };
        let covariance = posterior.covariance.as_ref().map(|c| {
            c.blocks
                .iter()
                .map(|b| CovarianceRecord {
                    block: b.id.to_string(),
                    jitter: b.jitter,
                    matrix: b.covariance.transpose().as_slice().to_vec(),
                })
                .collect()
        });
        let restarts = posterior
            .restarts
            .iter()
            .map(|r| RestartRecord {
                index: r.index,
                final_log_posterior: r.failure.is_none().then_some(r.final_log_posterior),
                iterations: r.iterations,
                converged: r.converged,
                failure: r.failure.clone(),
                trace: r.trace.clone(),
            })
            .collect();
        let model = ModelPayload {
            config: config.into(),
            settings: settings.into(),
            seed: settings.rng_seed,
            directed: layout.directed(),
            node_labels: meta.node_labels.clone(),
            layers: meta.layer_names.iter().zip(layer_kinds).map(|(name, &k)| LayerRecord::new(name, k)).collect(),
            attributes: meta
                .attribute_names
                .iter()
                .zip(attribute_kinds)
                .zip(&meta.category_labels)
                .map(|((name, &k), labels)| AttributeSpec::from_kind(name, k, labels.clone()))
                .collect(),
            map,
            covariance,
            gradient_inf_norm: posterior.covariance.as_ref().map(|c| c.gradient_inf_norm),
            final_log_posterior: posterior.final_log_posterior,
            best_restart: posterior.best_restart,
            restarts,
        };
        let checksum = checksum(&model)?;
        Ok(Self { format_version: FORMAT_VERSION, checksum, model })
    }

    pub fn to_bytes(&self) -> CliResult<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    /// Parse a model file. Unknown versions and checksum mismatches are rejected.
    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let value: serde_json::Value = serde_json::from_slice(bytes)?;
        match value.get("format_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(CliError::data(format!(
                    "model file has format version {v}; this build reads version {FORMAT_VERSION} only"
                )))
            }
            None => return Err(CliError::data("model file has no format_version")),
        }
        let file: FittedModelFile = serde_json::from_slice(bytes)?;
        let expected = checksum(&file.model)?;
        if expected != file.checksum {
            return Err(CliError::data(format!(
                "model file checksum mismatch: stored {}, computed {expected}",
                file.checksum
            )));
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }

    /// Rebuild core types, checking every shape against the declared layout.
    pub fn to_model(&self) -> CliResult<FittedModel> {
        let p = &self.model;
        let bad = |m: String| CliError::data(format!("model file: {m}"));
        let layer_kinds = p.layers.iter().map(LayerRecord::layer_kind).collect::<CliResult<Vec<_>>>()?;
        let attribute_kinds = p.attributes.iter().map(AttributeSpec::attribute_kind).collect::<CliResult<Vec<_>>>()?;
        let config = p.config.to_config();
        config.validate()?;
        let layout = layout_of(p, &attribute_kinds);
        let (n, k) = (layout.n_nodes(), layout.k());
        let m = &p.map;
        let v_rows = if p.directed { n } else { 0 };
        if m.u.len() != n || m.v.len() != v_rows || m.w.len() != layer_kinds.len() || m.h.len() != attribute_kinds.len()
        {
            return Err(bad("MAP blocks do not match the declared shape".into()));
        }
        let mut state = LatentState::zeros(layout.clone());
        for i in 0..n {
            if m.u[i].len() != k {
                return Err(bad(format!("U[{i}] has {} entries, expected {k}", m.u[i].len())));
            }
            state.u_row_mut(i).copy_from_slice(&m.u[i]);
            if p.directed {
                if m.v[i].len() != k {
                    return Err(bad(format!("V[{i}] has {} entries, expected {k}", m.v[i].len())));
                }
                state.v_row_mut(i).copy_from_slice(&m.v[i]);
            }
        }
        for (l, w) in m.w.iter().enumerate() {
            if w.len() != k * k {
                return Err(bad(format!("W[{l}] has {} entries, expected {}", w.len(), k * k)));
            }
            state.w_mut(l).copy_from_slice(w);
        }
        for (x, h) in m.h.iter().enumerate() {
            let want = k * attribute_kinds[x].width();
            if h.len() != want {
                return Err(bad(format!("H[{x}] has {} entries, expected {want}", h.len())));
            }
            state.h_mut(x).copy_from_slice(h);
        }
        if !state.is_finite() {
            return Err(bad("MAP values are not finite".into()));
        }
        let covariance = match &p.covariance {
            None => None,
            Some(blocks) => {
                let ids = BlockId::all(&layout);
                if blocks.len() != ids.len() {
                    return Err(bad(format!("{} covariance blocks, expected {}", blocks.len(), ids.len())));
                }
                let mut out = Vec::with_capacity(ids.len());
                for (id, rec) in ids.into_iter().zip(blocks) {
                    if rec.block != id.to_string() {
                        return Err(bad(format!("covariance block '{}' where '{id}' was expected", rec.block)));
                    }
                    let d = id.range(&layout).1;
                    if rec.matrix.len() != d * d {
                        return Err(bad(format!("covariance block {id} has {} entries, expected {}", rec.matrix.len(), d * d)));
                    }
                    out.push(CovarianceBlock {
                        id,
                        covariance: DMatrix::from_row_slice(d, d, &rec.matrix),
                        jitter: rec.jitter,
                    });
                }
                Some(LaplaceCovariance { blocks: out, gradient_inf_norm: p.gradient_inf_norm.unwrap_or(f64::NAN) })
            }
        };
        let restarts = p
            .restarts
            .iter()
            .map(|r| RestartResult {
                index: r.index,
                final_log_posterior: r.final_log_posterior.unwrap_or(f64::NEG_INFINITY),
                iterations: r.iterations,
                converged: r.converged,
                failure: r.failure.clone(),
                trace: r.trace.clone(),
            })
            .collect();
        let meta = DatasetMeta {
            node_labels: p.node_labels.clone(),
            layer_names: p.layers.iter().map(|l| l.name.clone()).collect(),
            attribute_names: p.attributes.iter().map(|a| a.name.clone()).collect(),
            category_labels: p.attributes.iter().map(|a| a.categories.clone()).collect(),
        };
        Ok(FittedModel {
            config,
            settings: p.settings.to_settings(),
            layer_kinds,
            attribute_kinds,
            meta,
            posterior: PosteriorEstimate {
                map_state: state,
                covariance,
                final_log_posterior: p.final_log_posterior,
                best_restart: p.best_restart,
                restarts,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use piham_core::model::Layout;
    use proptest::prelude::*;

    fn sample_file(values: Vec<f64>, directed: bool) -> FittedModelFile {
        let attrs = vec![AttributeKind::Categorical { categories: 3 }, AttributeKind::Poisson];
        let layout = Layout::new(2, 2, 1, attrs.iter().map(|a| a.width()).collect(), directed);
        let mut vals = values;
        vals.resize(layout.len(), 0.25);
        let state = LatentState::from_values(layout.clone(), vals).unwrap();
        let blocks = BlockId::all(&layout)
            .into_iter()
            .map(|id| {
                let d = id.range(&layout).1;
                CovarianceBlock { id, covariance: DMatrix::from_fn(d, d, |r, c| 1.0 / (1.0 + r as f64 + 3.0 * c as f64)), jitter: 1e-8 }
            })
            .collect();
        let posterior = PosteriorEstimate {
            map_state: state,
            covariance: Some(LaplaceCovariance { blocks, gradient_inf_norm: 0.1 }),
            final_log_posterior: -12.5,
            best_restart: 1,
            restarts: vec![
                RestartResult { index: 0, final_log_posterior: f64::NEG_INFINITY, iterations: 0, converged: false, failure: Some("boom".into()), trace: vec![] },
                RestartResult { index: 1, final_log_posterior: -12.5, iterations: 2, converged: true, failure: None, trace: vec![-13.0, -12.5] },
            ],
        };
        let meta = DatasetMeta {
            node_labels: vec!["a".into(), "b".into()],
            layer_names: vec!["l".into()],
            attribute_names: vec!["c".into(), "p".into()],
            category_labels: vec![Some(vec!["x".into(), "y".into(), "z".into()]), None],
        };
        FittedModelFile::from_fit(&posterior, &ModelConfig::new(2), &OptimizerSettings::default(), &[LayerKind::Bernoulli], &attrs, &meta).unwrap()
    }

    #[test]
    fn version_mismatch_fails_closed() {
        let file = sample_file(vec![], true);
        let text = String::from_utf8(file.to_bytes().unwrap()).unwrap().replacen("\"format_version\": 1", "\"format_version\": 2", 1);
        let msg = FittedModelFile::from_bytes(text.as_bytes()).unwrap_err().to_string();
        assert!(msg.contains("version 2"), "{msg}");
    }

    #[test]
    fn tampering_detected() {
        let file = sample_file(vec![], true);
        let text = String::from_utf8(file.to_bytes().unwrap()).unwrap().replacen("-12.5", "-12.25", 1);
        assert!(FittedModelFile::from_bytes(text.as_bytes()).unwrap_err().to_string().contains("checksum"));
    }

    #[test]
    fn rebuilds_posterior() {
        let file = sample_file(vec![0.5, -1.0], false);
        let model = file.to_model().unwrap();
        assert_eq!(model.posterior.map_state.values()[..2], [0.5, -1.0]);
        assert_eq!(model.posterior.restarts[0].final_log_posterior, f64::NEG_INFINITY);
        let again = FittedModelFile::from_fit(
            &model.posterior,
            &model.config,
            &model.settings,
            &model.layer_kinds,
            &model.attribute_kinds,
            &model.meta,
        )
        .unwrap();
        assert_eq!(again, file);
    }

    proptest! {
        #[test]
        fn save_load_is_bitwise(values in prop::collection::vec(prop_oneof![any::<f64>().prop_filter("finite", |v| v.is_finite()), Just(-0.0), Just(f64::MIN_POSITIVE / 4.0)], 1..20)) {
            let file = sample_file(values, true);
            let back = FittedModelFile::from_bytes(&file.to_bytes().unwrap()).unwrap();
            let a = file.to_model().unwrap().posterior.map_state;
            let b = back.to_model().unwrap().posterior.map_state;
            prop_assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
            prop_assert_eq!(back.checksum, file.checksum);
        }
    }
}

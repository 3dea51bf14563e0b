//! Dataset manifest: a JSON file naming the edge and attribute files and
//! declaring the statistical type of each.

use std::path::{Path, PathBuf};

use piham_core::model::{AttributeKind, LayerKind, DEFAULT_GAUSSIAN_VARIANCE};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerType {
    Bernoulli,
    Poisson,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeType {
    Categorical,
    Poisson,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: LayerType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian_variance: Option<f64>,
    /// Edge list with header `source,target,weight`.
    pub path: PathBuf,
}

impl LayerSpec {
    pub fn layer_kind(&self) -> CliResult<LayerKind> {
        let kind = match self.kind {
            LayerType::Bernoulli => LayerKind::Bernoulli,
            LayerType::Poisson => LayerKind::Poisson,
            LayerType::Gaussian => {
                LayerKind::Gaussian { variance: self.gaussian_variance.unwrap_or(DEFAULT_GAUSSIAN_VARIANCE) }
            }
        };
        if self.gaussian_variance.is_some() && self.kind != LayerType::Gaussian {
            return Err(CliError::data(format!("layer '{}': gaussian_variance given for a non-Gaussian layer", self.name)));
        }
        kind.validate().map_err(|e| CliError::data(format!("layer '{}': {e}", self.name)))?;
        Ok(kind)
    }

    pub fn from_kind(name: &str, kind: LayerKind, path: PathBuf) -> Self {
        let (kind, gaussian_variance) = match kind {
            LayerKind::Bernoulli => (LayerType::Bernoulli, None),
            LayerKind::Poisson => (LayerType::Poisson, None),
            LayerKind::Gaussian { variance } => (LayerType::Gaussian, Some(variance)),
        };
        Self { name: name.to_string(), kind, gaussian_variance, path }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: AttributeType,
    /// Category labels of a categorical attribute, in index order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
}

impl AttributeSpec {
    pub fn attribute_kind(&self) -> CliResult<AttributeKind> {
        let err = |m: &str| CliError::data(format!("attribute '{}': {m}", self.name));
        let kind = match self.kind {
            AttributeType::Categorical => {
                let labels = self.categories.as_ref().ok_or_else(|| err("categorical attributes need 'categories'"))?;
                let mut seen = std::collections::HashSet::new();
                if let Some(dup) = labels.iter().find(|l| !seen.insert(l.as_str())) {
                    return Err(err(&format!("category '{dup}' listed twice")));
                }
                AttributeKind::Categorical { categories: labels.len() }
            }
            AttributeType::Poisson => AttributeKind::Poisson,
            AttributeType::Gaussian => {
                AttributeKind::Gaussian { variance: self.variance.unwrap_or(DEFAULT_GAUSSIAN_VARIANCE) }
            }
        };
        if self.categories.is_some() && self.kind != AttributeType::Categorical {
            return Err(err("'categories' given for a non-categorical attribute"));
        }
        if self.variance.is_some() && self.kind != AttributeType::Gaussian {
            return Err(err("'variance' given for a non-Gaussian attribute"));
        }
        kind.validate().map_err(|e| err(&e.to_string()))?;
        Ok(kind)
    }

    pub fn from_kind(name: &str, kind: AttributeKind, labels: Option<Vec<String>>) -> Self {
        match kind {
            AttributeKind::Categorical { categories } => Self {
                name: name.to_string(),
                kind: AttributeType::Categorical,
                categories: Some(labels.unwrap_or_else(|| (0..categories).map(|z| z.to_string()).collect())),
                variance: None,
            },
            AttributeKind::Poisson => {
                Self { name: name.to_string(), kind: AttributeType::Poisson, categories: None, variance: None }
            }
            AttributeKind::Gaussian { variance } => Self {
                name: name.to_string(),
                kind: AttributeType::Gaussian,
                categories: None,
                variance: Some(variance),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeFile {
    /// Table with header `node,<attribute names...>`.
    pub path: PathBuf,
    pub columns: Vec<AttributeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub directed: bool,
    /// Optional node list with header `node`; fixes the node order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<PathBuf>,
    pub layers: Vec<LayerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<AttributeFile>,
}

impl Manifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("cannot read manifest {}: {e}", path.display())))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::data(format!("manifest {}: {e}", path.display())))?;
        manifest.check_names()?;
        Ok(manifest)
    }

    fn check_names(&self) -> CliResult<()> {
        let mut seen = std::collections::HashSet::new();
        for l in &self.layers {
            if !seen.insert(l.name.as_str()) {
                return Err(CliError::data(format!("layer name '{}' used twice", l.name)));
            }
        }
        if let Some(attrs) = &self.attributes {
            let mut seen = std::collections::HashSet::new();
            for a in &attrs.columns {
                if !seen.insert(a.name.as_str()) || a.name == "node" {
                    return Err(CliError::data(format!("attribute name '{}' is reserved or used twice", a.name)));
                }
            }
        }
        Ok(())
    }
}

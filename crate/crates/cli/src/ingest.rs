//! Reading a manifest and its CSV files into a dataset, and writing a dataset back.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use piham_core::model::{Attribute, AttributeKind, HeterogeneousDataset, Layer, LayerKind};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::manifest::{AttributeFile, AttributeSpec, LayerSpec, Manifest};
use crate::output::Staging;

/// Names attached to a dataset: everything the core model does not carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub node_labels: Vec<String>,
    pub layer_names: Vec<String>,
    pub attribute_names: Vec<String>,
    /// Category labels of each attribute; `None` for non-categorical ones.
    pub category_labels: Vec<Option<Vec<String>>>,
}

impl DatasetMeta {
    /// Index-string names for a dataset that came without any.
    pub fn defaults(dataset: &HeterogeneousDataset) -> Self {
        let node_labels = match dataset.node_labels() {
            Some(l) => l.to_vec(),
            None => (0..dataset.n_nodes()).map(|i| i.to_string()).collect(),
        };
        Self {
            node_labels,
            layer_names: (0..dataset.layers().len()).map(|l| format!("layer{l}")).collect(),
            attribute_names: (0..dataset.attributes().len()).map(|x| format!("attr{x}")).collect(),
            category_labels: dataset
                .attributes()
                .iter()
                .map(|a| match a.kind() {
                    AttributeKind::Categorical { categories } => {
                        Some((0..categories).map(|z| z.to_string()).collect())
                    }
                    _ => None,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: HeterogeneousDataset,
    pub meta: DatasetMeta,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn reader(path: &Path) -> CliResult<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())))
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn headers(rdr: &mut csv::Reader<std::fs::File>, path: &Path) -> CliResult<Vec<String>> {
    Ok(rdr
        .headers()
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect())
}

/// Dense node indices keyed by label, in insertion order.
#[derive(Default)]
struct NodeIndex {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    frozen: bool,
}

impl NodeIndex {
    fn insert_new(&mut self, label: &str, path: &Path, line: u64) -> CliResult<()> {
        if label.is_empty() {
            return Err(CliError::data(format!("{}: line {line}: empty node identifier", path.display())));
        }
        if self.index.insert(label.to_string(), self.labels.len()).is_some() {
            return Err(CliError::data(format!("{}: line {line}: node '{label}' listed twice", path.display())));
        }
        self.labels.push(label.to_string());
        Ok(())
    }

    fn lookup(&mut self, label: &str, path: &Path, line: u64) -> CliResult<usize> {
        if let Some(&i) = self.index.get(label) {
            return Ok(i);
        }
        if self.frozen || label.is_empty() {
            return Err(CliError::data(format!("{}: line {line}: unknown node '{label}'", path.display())));
        }
        self.insert_new(label, path, line)?;
        Ok(self.labels.len() - 1)
    }
}

fn read_nodes(path: &Path, nodes: &mut NodeIndex) -> CliResult<()> {
    let mut rdr = reader(path)?;
    let head = headers(&mut rdr, path)?;
    if head != ["node"] {
        return Err(CliError::data(format!("{}: header must be 'node', got '{}'", path.display(), head.join(","))));
    }
    for rec in rdr.records() {
        let rec = rec?;
        nodes.insert_new(&rec[0], path, line_of(&rec))?;
    }
    Ok(())
}

struct RawAttributes {
    /// Per row: node label, line, raw cells.
    rows: Vec<(String, u64, Vec<String>)>,
}

fn read_attribute_rows(path: &Path, spec: &AttributeFile) -> CliResult<RawAttributes> {
    let mut rdr = reader(path)?;
    let head = headers(&mut rdr, path)?;
    let expected: Vec<&str> =
        std::iter::once("node").chain(spec.columns.iter().map(|c| c.name.as_str())).collect();
    if head != expected {
        return Err(CliError::data(format!(
            "{}: header '{}' does not match the declared columns '{}'",
            path.display(),
            head.join(","),
            expected.join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        rows.push((rec[0].to_string(), line, rec.iter().skip(1).map(str::to_string).collect()));
    }
    Ok(RawAttributes { rows })
}

fn parse_attribute_value(
    spec: &AttributeSpec,
    kind: AttributeKind,
    cell: &str,
    path: &Path,
    line: u64,
) -> CliResult<f64> {
    let err = |m: String| CliError::data(format!("{}: line {line}: attribute '{}': {m}", path.display(), spec.name));
    let value = match kind {
        AttributeKind::Categorical { .. } => {
            let labels = spec.categories.as_deref().unwrap_or_default();
            let z = labels
                .iter()
                .position(|l| l == cell)
                .ok_or_else(|| err(format!("'{cell}' is not a declared category")))?;
            z as f64
        }
        _ => cell.parse::<f64>().map_err(|_| err(format!("'{cell}' is not a number")))?,
    };
    kind.validate_value(value).map_err(err)?;
    Ok(value)
}

fn read_layer(
    spec: &LayerSpec,
    kind: LayerKind,
    path: &Path,
    nodes: &mut NodeIndex,
    directed: bool,
) -> CliResult<Vec<(usize, usize, f64, u64)>> {
    let mut rdr = reader(path)?;
    let head = headers(&mut rdr, path)?;
    let has_weight = match head.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["source", "target"] => false,
        ["source", "target", "weight"] => true,
        _ => {
            return Err(CliError::data(format!(
                "{}: header must be 'source,target[,weight]', got '{}'",
                path.display(),
                head.join(",")
            )))
        }
    };
    let mut edges = Vec::new();
    let mut seen = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let i = nodes.lookup(&rec[0], path, line)?;
        let j = nodes.lookup(&rec[1], path, line)?;
        let w = if has_weight {
            rec[2].parse::<f64>().map_err(|_| {
                CliError::data(format!("{}: line {line}: weight '{}' is not a number", path.display(), &rec[2]))
            })?
        } else {
            1.0
        };
        kind.validate_weight(w)
            .map_err(|e| CliError::data(format!("{}: line {line}: layer '{}': {e}", path.display(), spec.name)))?;
        let key = if directed { (i, j) } else { (i.min(j), i.max(j)) };
        if let Some(prev) = seen.insert(key, line) {
            return Err(CliError::data(format!(
                "{}: line {line}: duplicate pair ('{}', '{}'), first listed on line {prev}",
                path.display(),
                &rec[0],
                &rec[1]
            )));
        }
        edges.push((i, j, w, line));
    }
    Ok(edges)
}

/// Load a dataset described by a manifest. Node order: the nodes file if
/// given, else the attribute file, else first appearance in the edge files.
pub fn ingest(manifest_path: &Path) -> CliResult<Ingested> {
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let layer_kinds = manifest.layers.iter().map(LayerSpec::layer_kind).collect::<CliResult<Vec<_>>>()?;
    let attr_kinds = match &manifest.attributes {
        Some(a) => a.columns.iter().map(AttributeSpec::attribute_kind).collect::<CliResult<Vec<_>>>()?,
        None => Vec::new(),
    };
    for spec in &manifest.layers {
        let p = resolve(base, &spec.path);
        if !p.is_file() {
            return Err(CliError::data(format!("layer '{}': file {} does not exist", spec.name, p.display())));
        }
    }

    let mut nodes = NodeIndex::default();
    if let Some(p) = &manifest.nodes {
        read_nodes(&resolve(base, p), &mut nodes)?;
        nodes.frozen = true;
    }
    let raw_attrs = match &manifest.attributes {
        Some(spec) => {
            let path = resolve(base, &spec.path);
            let raw = read_attribute_rows(&path, spec)?;
            if nodes.frozen {
                let mut covered = vec![false; nodes.labels.len()];
                for (label, line, _) in &raw.rows {
                    let i = nodes.lookup(label, &path, *line)?;
                    if std::mem::replace(&mut covered[i], true) {
                        return Err(CliError::data(format!(
                            "{}: line {line}: node '{label}' listed twice",
                            path.display()
                        )));
                    }
                }
                if let Some(i) = covered.iter().position(|c| !c) {
                    return Err(CliError::data(format!(
                        "{}: no row for node '{}'",
                        path.display(),
                        nodes.labels[i]
                    )));
                }
            } else {
                for (label, line, _) in &raw.rows {
                    nodes.insert_new(label, &path, *line)?;
                }
                nodes.frozen = true;
            }
            Some((path, raw))
        }
        None => None,
    };

    let mut layer_edges = Vec::with_capacity(manifest.layers.len());
    for (spec, &kind) in manifest.layers.iter().zip(&layer_kinds) {
        let path = resolve(base, &spec.path);
        layer_edges.push(read_layer(spec, kind, &path, &mut nodes, manifest.directed)?);
    }

    let n = nodes.labels.len();
    if n == 0 {
        return Err(CliError::data("dataset has no nodes"));
    }
    let mut dataset = HeterogeneousDataset::new(n, manifest.directed);
    for ((spec, &kind), edges) in manifest.layers.iter().zip(&layer_kinds).zip(layer_edges) {
        let mut triples: Vec<(usize, usize, f64)> = Vec::with_capacity(edges.len() * 2);
        for (i, j, w, _) in edges {
            triples.push((i, j, w));
            if !manifest.directed && i != j {
                triples.push((j, i, w));
            }
        }
        let layer = Layer::from_edges(kind, n, &triples)
            .map_err(|e| CliError::data(format!("layer '{}': {e}", spec.name)))?;
        dataset.push_layer(layer)?;
    }
    if let (Some(spec), Some((path, raw))) = (&manifest.attributes, raw_attrs) {
        for (x, (col, &kind)) in spec.columns.iter().zip(&attr_kinds).enumerate() {
            let mut values = vec![0.0; n];
            for (label, line, cells) in &raw.rows {
                let i = nodes.index[label];
                values[i] = parse_attribute_value(col, kind, &cells[x], &path, *line)?;
            }
            dataset.push_attribute(Attribute::new(kind, values)?)?;
        }
    }
    dataset.set_node_labels(nodes.labels.clone())?;

    let meta = DatasetMeta {
        node_labels: nodes.labels,
        layer_names: manifest.layers.iter().map(|l| l.name.clone()).collect(),
        attribute_names: manifest
            .attributes
            .as_ref()
            .map(|a| a.columns.iter().map(|c| c.name.clone()).collect())
            .unwrap_or_default(),
        category_labels: manifest
            .attributes
            .as_ref()
            .map(|a| a.columns.iter().map(|c| c.categories.clone()).collect())
            .unwrap_or_default(),
    };
    Ok(Ingested { dataset, meta })
}

fn layer_file_name(l: usize, name: &str) -> String {
    let safe: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect();
    format!("layer{l}_{safe}.csv")
}

/// Write a dataset as a manifest plus CSV files into `stage`, which commits
/// them to their final directory. Returns the manifest file name.
pub fn write_dataset(dataset: &HeterogeneousDataset, meta: &DatasetMeta, stage: &mut Staging) -> CliResult<PathBuf> {
    let n = dataset.n_nodes();
    if meta.node_labels.len() != n
        || meta.layer_names.len() != dataset.layers().len()
        || meta.attribute_names.len() != dataset.attributes().len()
        || meta.category_labels.len() != dataset.attributes().len()
    {
        return Err(CliError::data("dataset names do not match the dataset shape"));
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["node"])?;
    for label in &meta.node_labels {
        w.write_record([label])?;
    }
    stage.write("nodes.csv", &w.into_inner().map_err(|e| CliError::data(e.to_string()))?)?;

    let mut layers = Vec::with_capacity(dataset.layers().len());
    for (l, layer) in dataset.layers().iter().enumerate() {
        let file = layer_file_name(l, &meta.layer_names[l]);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["source", "target", "weight"])?;
        for (i, j, v) in layer.entries() {
            if dataset.directed() || i <= j {
                w.write_record([&meta.node_labels[i], &meta.node_labels[j], &v.to_string()])?;
            }
        }
        stage.write(&file, &w.into_inner().map_err(|e| CliError::data(e.to_string()))?)?;
        layers.push(LayerSpec::from_kind(&meta.layer_names[l], layer.kind(), PathBuf::from(file)));
    }

    let attributes = if dataset.attributes().is_empty() {
        None
    } else {
        let columns: Vec<AttributeSpec> = dataset
            .attributes()
            .iter()
            .enumerate()
            .map(|(x, a)| AttributeSpec::from_kind(&meta.attribute_names[x], a.kind(), meta.category_labels[x].clone()))
            .collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut head = vec!["node".to_string()];
        head.extend(meta.attribute_names.iter().cloned());
        w.write_record(&head)?;
        for i in 0..n {
            let mut row = vec![meta.node_labels[i].clone()];
            for (x, a) in dataset.attributes().iter().enumerate() {
                let v = a.values()[i];
                row.push(match &columns[x].categories {
                    Some(labels) => labels[v as usize].clone(),
                    None => v.to_string(),
                });
            }
            w.write_record(&row)?;
        }
        stage.write("attributes.csv", &w.into_inner().map_err(|e| CliError::data(e.to_string()))?)?;
        Some(AttributeFile { path: PathBuf::from("attributes.csv"), columns })
    };

    let manifest = Manifest {
        directed: dataset.directed(),
        nodes: Some(PathBuf::from("nodes.csv")),
        layers,
        attributes,
    };
    stage.write("manifest.json", &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(PathBuf::from("manifest.json"))
}

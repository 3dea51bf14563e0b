//! CSV report tables. Floats use 17 significant digits.

use piham_core::evaluation::{EvaluationReport, Metric, Target};

use crate::error::{CliError, CliResult};
use crate::ingest::DatasetMeta;

pub fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self { header: header.iter().map(|s| s.as_ref().to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> CliResult<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.into_inner().map_err(|e| CliError::data(e.to_string()))
    }
}

pub fn target_name(target: Target, meta: &DatasetMeta) -> String {
    match target {
        Target::Layer(l) => meta.layer_names[l].clone(),
        Target::Attribute(x) => meta.attribute_names[x].clone(),
    }
}

pub fn target_kind(target: Target) -> &'static str {
    match target {
        Target::Layer(_) => "layer",
        Target::Attribute(_) => "attribute",
    }
}

/// Cross-validation results for every `K` tried.
pub struct CvTables {
    /// One row per `K`: fold-mean and standard deviation of each metric.
    pub per_k: Table,
    /// The winning `K` for each metric.
    pub best_k: Table,
    pub baselines: Table,
    pub folds: Table,
}

/// Winning `K` per series index; ties go to the smaller `K`, folds
/// without a value are ignored, and a series with no values has no winner.
pub fn best_k(results: &[(usize, EvaluationReport)], series: usize) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, report) in results {
        let s = &report.series[series];
        let Some(summary) = s.summary() else { continue };
        let better = match best {
            None => true,
            Some((_, b)) if s.metric.higher_is_better() => summary.mean > b,
            Some((_, b)) => summary.mean < b,
        };
        if better {
            best = Some((*k, summary.mean));
        }
    }
    best
}

pub fn cv_tables(results: &[(usize, EvaluationReport)], meta: &DatasetMeta) -> CvTables {
    let series: Vec<(Target, Metric)> = results
        .first()
        .map(|(_, r)| r.series.iter().map(|s| (s.target, s.metric)).collect())
        .unwrap_or_default();
    let column = |t: Target, m: Metric| format!("{}_{}", target_name(t, meta), m.name());

    let mut header = vec!["k".to_string(), "failed_folds".to_string()];
    for &(t, m) in &series {
        header.push(format!("{}_mean", column(t, m)));
        header.push(format!("{}_sd", column(t, m)));
    }
    let mut per_k = Table::new(&header);
    let mut baselines = Table::new(&["k", "kind", "name", "metric", "baseline", "mean", "sd"]);
    let mut folds = Table::new(&["k", "fold", "kind", "name", "metric", "value", "log_posterior", "failure"]);
    for (k, report) in results {
        let failed = report.fold_failures.iter().filter(|f| f.is_some()).count();
        let mut row = vec![k.to_string(), failed.to_string()];
        for s in &report.series {
            let summary = s.summary();
            row.push(fmt_opt(summary.map(|x| x.mean)));
            row.push(fmt_opt(summary.map(|x| x.sd)));
            for b in &s.baselines {
                let bs = s.baseline(&b.name);
                baselines.push(vec![
                    k.to_string(),
                    target_kind(s.target).into(),
                    target_name(s.target, meta),
                    s.metric.name().into(),
                    b.name.clone(),
                    fmt_opt(bs.map(|x| x.mean)),
                    fmt_opt(bs.map(|x| x.sd)),
                ]);
            }
            for (f, v) in s.values.iter().enumerate() {
                folds.push(vec![
                    k.to_string(),
                    f.to_string(),
                    target_kind(s.target).into(),
                    target_name(s.target, meta),
                    s.metric.name().into(),
                    fmt_opt(*v),
                    fmt_opt(report.fold_log_posteriors.get(f).copied().flatten()),
                    report.fold_failures.get(f).cloned().flatten().unwrap_or_default(),
                ]);
            }
        }
        per_k.push(row);
    }
    let mut best = Table::new(&["kind", "name", "metric", "best_k", "mean"]);
    for (idx, &(t, m)) in series.iter().enumerate() {
        let winner = best_k(results, idx);
        best.push(vec![
            target_kind(t).into(),
            target_name(t, meta),
            m.name().into(),
            winner.map(|w| w.0.to_string()).unwrap_or_default(),
            fmt_opt(winner.map(|w| w.1)),
        ]);
    }
    CvTables { per_k, best_k: best, baselines, folds }
}

#[cfg(test)]
mod tests {
    use super::*;
    use piham_core::evaluation::MetricSeries;

    fn report(auc: f64, mae: Option<f64>) -> EvaluationReport {
        EvaluationReport {
            n_folds: 2,
            series: vec![
                MetricSeries { target: Target::Layer(0), metric: Metric::Auc, values: vec![Some(auc), Some(auc)], baselines: vec![] },
                MetricSeries { target: Target::Attribute(0), metric: Metric::Mae, values: vec![mae, mae], baselines: vec![] },
            ],
            fold_log_posteriors: vec![Some(-1.0), None],
            fold_failures: vec![None, Some("diverged".into())],
        }
    }

    fn meta() -> DatasetMeta {
        DatasetMeta {
            node_labels: vec![],
            layer_names: vec!["friends".into()],
            attribute_names: vec!["age".into()],
            category_labels: vec![None],
        }
    }

    #[test]
    fn best_k_respects_direction_and_ties() {
        let results = vec![(1, report(0.6, Some(2.0))), (2, report(0.8, Some(1.0))), (3, report(0.8, Some(1.5)))];
        assert_eq!(best_k(&results, 0), Some((2, 0.8)));
        assert_eq!(best_k(&results, 1), Some((2, 1.0)));
        let missing = vec![(1, report(0.6, None)), (2, report(0.7, None))];
        assert_eq!(best_k(&missing, 1), None);
    }

    #[test]
    fn cv_table_shape() {
        let results = vec![(1, report(0.6, Some(2.0))), (2, report(0.8, Some(1.0))), (3, report(0.7, Some(1.5)))];
        let t = cv_tables(&results, &meta());
        assert_eq!(t.per_k.rows.len(), 3);
        assert_eq!(t.per_k.header[2], "friends_auc_mean");
        assert_eq!(t.per_k.rows[0][1], "1");
        assert_eq!(t.best_k.rows[0][3], "2");
        assert_eq!(t.folds.rows.len(), 3 * 2 * 2);
    }

    #[test]
    fn floats_round_trip_through_text() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(fmt_f(0.5), "5.0000000000000000e-1");
    }
}

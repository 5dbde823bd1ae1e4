//! Segmentation and classification metrics.

use crate::error::{invalid, Result};
use crate::scalar::Real;
use crate::segmentation::Segmentation;
use ndarray::Array2;
use std::collections::BTreeMap;
use std::fmt::Write;

/// Frame-level counts, rows are ground truth and columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    index: BTreeMap<String, usize>,
    counts: Array2<u64>,
}

impl ConfusionMatrix {
    pub fn new<S: AsRef<str>>(labels: &[S]) -> Self {
        let mut sorted: Vec<String> = labels.iter().map(|s| s.as_ref().to_string()).collect();
        sorted.sort();
        sorted.dedup();
        let index = sorted.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        let c = sorted.len();
        Self {
            labels: sorted,
            index,
            counts: Array2::zeros((c, c)),
        }
    }

    /// Builds a matrix over the union of labels of all pairs.
    pub fn from_pairs<F: Real>(pairs: &[(&Segmentation<F>, &Segmentation<F>)]) -> Result<Self> {
        let mut labels = Vec::new();
        for (gt, pred) in pairs {
            labels.extend(gt.labels().into_iter().map(str::to_string));
            labels.extend(pred.labels().into_iter().map(str::to_string));
        }
        let mut cm = Self::new(&labels);
        for (gt, pred) in pairs {
            cm.accumulate(gt, pred)?;
        }
        Ok(cm)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.sum()
    }

    pub fn trace(&self) -> u64 {
        self.counts.diag().sum()
    }

    pub fn add(&mut self, truth: &str, predicted: &str, n: u64) -> Result<()> {
        let (Some(&r), Some(&c)) = (self.index.get(truth), self.index.get(predicted)) else {
            return invalid(format!("label pair `{truth}`/`{predicted}` not in the matrix vocabulary"));
        };
        self.counts[[r, c]] += n;
        Ok(())
    }

    pub fn accumulate<F: Real>(&mut self, gt: &Segmentation<F>, pred: &Segmentation<F>) -> Result<()> {
        check_lengths(gt, pred)?;
        // Walk both span lists together, adding one count per overlap.
        let (g, p) = (gt.spans(), pred.spans());
        let (mut i, mut j, mut t) = (0, 0, 0);
        while t < gt.len() {
            let end = g[i].end.min(p[j].end);
            self.add(&g[i].label, &p[j].label, (end - t) as u64)?;
            t = end;
            if g[i].end == t {
                i += 1;
            }
            if p[j].end == t {
                j += 1;
            }
        }
        Ok(())
    }

    /// Adds another matrix with the same vocabulary.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.labels != other.labels {
            return invalid("cannot merge confusion matrices with different labels");
        }
        self.counts += &other.counts;
        Ok(())
    }

    /// Drops the ground-truth row of `label` so its frames are not scored.
    pub fn exclude(&mut self, label: &str) {
        if let Some(&r) = self.index.get(label) {
            self.counts.row_mut(r).fill(0);
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("truth\\pred");
        for l in &self.labels {
            write!(out, ",{l}").unwrap();
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(self.counts.rows()) {
            out.push_str(l);
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn check_lengths<F: Real>(gt: &Segmentation<F>, pred: &Segmentation<F>) -> Result<()> {
    if gt.len() != pred.len() {
        return invalid(format!(
            "ground truth has {} frames but prediction has {}",
            gt.len(),
            pred.len()
        ));
    }
    Ok(())
}

pub fn frame_accuracy<F: Real>(gt: &Segmentation<F>, pred: &Segmentation<F>) -> Result<f64> {
    let cm = ConfusionMatrix::from_pairs(&[(gt, pred)])?;
    matrix_accuracy(&cm)
}

/// trace / total.
pub fn matrix_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    match cm.total() {
        0 => invalid("no frames to evaluate"),
        n => Ok(cm.trace() as f64 / n as f64),
    }
}

/// Mean per-class recall over classes that have ground-truth frames.
pub fn class_mean_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let mut sum = 0.0;
    let mut classes = 0;
    for (i, row) in cm.counts.rows().into_iter().enumerate() {
        let total: u64 = row.sum();
        if total > 0 {
            sum += row[i] as f64 / total as f64;
            classes += 1;
        }
    }
    if classes == 0 {
        return invalid("every ground-truth class is empty");
    }
    Ok(sum / classes as f64)
}

/// Hit and span counts, so several sequences can be pooled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HitCount {
    pub hits: usize,
    pub spans: usize,
}

impl HitCount {
    pub fn accuracy(&self) -> Result<f64> {
        match self.spans {
            0 => invalid("no ground-truth spans to evaluate"),
            n => Ok(self.hits as f64 / n as f64),
        }
    }
}

/// Predictions are visited left to right; each ground-truth span is
/// credited at most once. Spans labeled `exclude` are ignored on both sides.
pub fn midpoint_hits<F: Real>(gt: &Segmentation<F>, pred: &Segmentation<F>, exclude: Option<&str>) -> Result<HitCount> {
    check_lengths(gt, pred)?;
    let mut matched = vec![false; gt.spans().len()];
    let mut hits = 0;
    for p in pred.spans() {
        if Some(p.label.as_str()) == exclude {
            continue;
        }
        let Some(g) = gt.span_at(p.midpoint()) else {
            continue;
        };
        if gt.spans()[g].label == p.label && !matched[g] {
            matched[g] = true;
            hits += 1;
        }
    }
    let spans = gt
        .spans()
        .iter()
        .filter(|s| Some(s.label.as_str()) != exclude)
        .count();
    Ok(HitCount { hits, spans })
}

pub fn midpoint_hit_accuracy<F: Real>(gt: &Segmentation<F>, pred: &Segmentation<F>) -> Result<f64> {
    midpoint_hits(gt, pred, None)?.accuracy()
}

pub fn activity_accuracy<S: AsRef<str>, T: AsRef<str>>(gt: &[S], pred: &[T]) -> Result<f64> {
    if gt.len() != pred.len() {
        return invalid(format!("{} ground-truth labels but {} predictions", gt.len(), pred.len()));
    }
    if gt.is_empty() {
        return invalid("no activities to evaluate");
    }
    let hits = gt.iter().zip(pred).filter(|(a, b)| a.as_ref() == b.as_ref()).count();
    Ok(hits as f64 / gt.len() as f64)
}

/// `metric,name,value` report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<(String, String, f64)>,
}

impl MetricsReport {
    pub fn push(&mut self, metric: &str, name: &str, value: f64) {
        self.rows.push((metric.to_string(), name.to_string(), value));
    }

    pub fn get(&self, metric: &str, name: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.0 == metric && r.1 == name).map(|r| r.2)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,name,value\n");
        for (m, n, v) in &self.rows {
            writeln!(out, "{m},{n},{v:.6}").unwrap();
        }
        out
    }
}

/// Pools frame, class-mean and midpoint metrics over many sequences, plus
/// per-class recall rows.
pub fn segmentation_report<F: Real>(pairs: &[(&Segmentation<F>, &Segmentation<F>)], exclude: Option<&str>) -> Result<(MetricsReport, ConfusionMatrix)> {
    let mut cm = ConfusionMatrix::from_pairs(pairs)?;
    if let Some(label) = exclude {
        cm.exclude(label);
    }
    let mut hits = HitCount::default();
    for (gt, pred) in pairs {
        let h = midpoint_hits(gt, pred, exclude)?;
        hits.hits += h.hits;
        hits.spans += h.spans;
    }
    let mut report = MetricsReport::default();
    report.push("frame_accuracy", "all", matrix_accuracy(&cm)?);
    report.push("class_mean_accuracy", "all", class_mean_accuracy(&cm)?);
    report.push("midpoint_hit_accuracy", "all", hits.accuracy()?);
    for (i, label) in cm.labels().iter().enumerate() {
        let total: u64 = cm.counts().row(i).sum();
        if total > 0 {
            report.push("class_recall", label, cm.counts()[[i, i]] as f64 / total as f64);
        }
    }
    Ok((report, cm))
}

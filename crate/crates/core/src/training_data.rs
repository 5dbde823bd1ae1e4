//! Class balancing with sequence-level synthetic minority over-sampling, and
//! a synthetic dataset generator with exact ground truth.

use crate::error::{invalid, Error, Result};
use crate::hmm::uniform_chunks;
use crate::rng;
use crate::scalar::Real;
use crate::segmentation::{Segmentation, Span};
use crate::sequence_model::SequenceModel;
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSegment<F> {
    pub label: String,
    pub frames: Array2<F>,
    pub source: Source,
}

/// A frame matrix plus its frame rate (0 when unknown).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence<F> {
    pub frames: Array2<F>,
    pub frame_rate: f64,
}

impl<F: Real> FrameSequence<F> {
    pub fn new(frames: Array2<F>) -> Self {
        Self {
            frames,
            frame_rate: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }
}

/// Nearest-frame resampling of `frames` to `len` rows.
pub fn resample_nearest<F: Real>(frames: ArrayView2<F>, len: usize) -> Array2<F> {
    let src = frames.nrows();
    let mut out = Array2::zeros((len, frames.ncols()));
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let j = if len <= 1 || src <= 1 {
            0
        } else {
            ((i * (src - 1)) as f64 / (len - 1) as f64).round() as usize
        };
        row.assign(&frames.row(j.min(src - 1)));
    }
    out
}

/// `first + lambda * (second - first)` after rescaling both to the longer length.
pub fn synthesize<F: Real>(first: ArrayView2<F>, second: ArrayView2<F>, lambda: F) -> Array2<F> {
    let len = first.nrows().max(second.nrows());
    let a = resample_nearest(first, len);
    let b = resample_nearest(second, len);
    &a + &((&b - &a) * lambda)
}

/// Caps every class at `max_n` real samples and tops it up to `min_n` with
/// synthetic ones. Classes are processed in label order, each with its own
/// random stream.
pub fn balance_classes<F: Real>(
    classes: &BTreeMap<String, Vec<LabeledSegment<F>>>,
    min_n: usize,
    max_n: usize,
    seed: u64,
) -> Result<BTreeMap<String, Vec<LabeledSegment<F>>>> {
    if min_n > max_n {
        return invalid(format!("min_n {min_n} exceeds max_n {max_n}"));
    }
    let mut out = BTreeMap::new();
    for (ci, (label, segs)) in classes.iter().enumerate() {
        if segs.is_empty() {
            return Err(Error::InvalidInput(format!("class `{label}` has no segments")));
        }
        let mut r = rng::derived(seed, ci as u64);
        let mut kept: Vec<LabeledSegment<F>> = if segs.len() > max_n {
            let mut idx = index::sample(&mut r, segs.len(), max_n).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| segs[i].clone()).collect()
        } else {
            segs.clone()
        };
        let real = kept.len();
        while kept.len() < min_n {
            let i = r.random_range(0..real);
            let j = if real > 1 {
                let j = r.random_range(0..real - 1);
                if j >= i {
                    j + 1
                } else {
                    j
                }
            } else {
                i
            };
            let lambda = F::lit(r.random::<f64>());
            let frames = synthesize(kept[i].frames.view(), kept[j].frames.view(), lambda);
            kept.push(LabeledSegment {
                label: label.clone(),
                frames,
                source: Source::Synthetic,
            });
        }
        out.insert(label.clone(), kept);
    }
    Ok(out)
}

/// Emission and duration model of one synthetic unit.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitSpec {
    /// One mean vector per state.
    pub state_means: Vec<Vec<f64>>,
    pub state_variances: Vec<Vec<f64>>,
    /// Inclusive range of unit durations in frames, sampled uniformly.
    pub duration: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub dim: usize,
    pub units: BTreeMap<String, UnitSpec>,
    pub ordering: SequenceModel<f64>,
    pub sequences: usize,
    pub seed: u64,
    /// Bigram sampling stops after this many units.
    pub max_units: usize,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.dim == 0 {
            problems.push("dim must be >= 1".to_string());
        }
        if self.sequences == 0 {
            problems.push("sequence count must be >= 1".to_string());
        }
        for label in self.ordering.vocab() {
            if !self.units.contains_key(label) {
                problems.push(format!("unit `{label}` is used but not defined"));
            }
        }
        for (label, u) in &self.units {
            let s = u.state_means.len();
            if s == 0 {
                problems.push(format!("unit `{label}` has no states"));
            }
            if u.state_variances.len() != s {
                problems.push(format!("unit `{label}` has {s} means but {} variances", u.state_variances.len()));
            }
            if u.state_means.iter().chain(&u.state_variances).any(|v| v.len() != self.dim) {
                problems.push(format!("unit `{label}` has vectors not of dimension {}", self.dim));
            }
            if u.state_variances.iter().flatten().any(|v| !(*v > 0.0 && v.is_finite())) {
                problems.push(format!("unit `{label}` has non-positive variances"));
            }
            if u.state_means.iter().flatten().any(|v| !v.is_finite()) {
                problems.push(format!("unit `{label}` has non-finite means"));
            }
            if u.duration.0 < s || u.duration.1 < u.duration.0 {
                problems.push(format!(
                    "unit `{label}` durations {:?} must satisfy {s} <= min <= max",
                    u.duration
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset<F> {
    pub sequences: Vec<FrameSequence<F>>,
    pub annotations: Vec<Segmentation<F>>,
}

fn sample_units(model: &SequenceModel<f64>, max_units: usize, r: &mut rng::Rng) -> Vec<String> {
    match model {
        SequenceModel::PathGrammar(g) => g.sequences()[r.random_range(0..g.sequences().len())].clone(),
        SequenceModel::Bigram(b) => {
            let v = b.vocab().len();
            let table = b.log_probs();
            loop {
                let mut out = Vec::new();
                let mut row = 0;
                loop {
                    let u: f64 = r.random();
                    let mut acc = 0.0;
                    let mut pick = v;
                    for c in 0..=v {
                        acc += table[[row, c]].exp();
                        if u < acc {
                            pick = c;
                            break;
                        }
                    }
                    if pick == v || out.len() == max_units.max(1) {
                        break;
                    }
                    out.push(b.vocab()[pick].clone());
                    row = pick + 1;
                }
                if !out.is_empty() {
                    return out;
                }
            }
        }
    }
}

/// Samples sequences and their exact ground-truth segmentations. Sequence `i`
/// depends only on `(seed, i)`.
pub fn generate_dataset<F: Real>(spec: &DatasetSpec) -> Result<GeneratedDataset<F>> {
    spec.validate()?;
    let items: Vec<(FrameSequence<F>, Segmentation<F>)> = (0..spec.sequences)
        .into_par_iter()
        .map(|i| generate_one(spec, i))
        .collect::<Result<_>>()?;
    let (sequences, annotations) = items.into_iter().unzip();
    Ok(GeneratedDataset {
        sequences,
        annotations,
    })
}

fn generate_one<F: Real>(spec: &DatasetSpec, index: usize) -> Result<(FrameSequence<F>, Segmentation<F>)> {
    let mut r = rng::derived(spec.seed, index as u64);
    let labels = sample_units(&spec.ordering, spec.max_units, &mut r);
    let durations: Vec<usize> = labels
        .iter()
        .map(|l| {
            let (lo, hi) = spec.units[l].duration;
            r.random_range(lo..=hi)
        })
        .collect();
    let total: usize = durations.iter().sum();
    let mut frames = Array2::zeros((total, spec.dim));
    let mut spans = Vec::with_capacity(labels.len());
    let mut t0 = 0;
    for (label, &dur) in labels.iter().zip(&durations) {
        let unit = &spec.units[label];
        for (s, (a, b)) in uniform_chunks(dur, unit.state_means.len()).into_iter().enumerate() {
            for t in a..b {
                for d in 0..spec.dim {
                    let z: f64 = StandardNormal.sample(&mut r);
                    frames[[t0 + t, d]] = F::lit(unit.state_means[s][d] + unit.state_variances[s][d].sqrt() * z);
                }
            }
        }
        spans.push(Span {
            label: label.clone(),
            start: t0,
            end: t0 + dur,
            log_score: F::zero(),
        });
        t0 += dur;
    }
    Ok((FrameSequence::new(frames), Segmentation::new(spans, total, F::zero())?))
}

/// Cuts annotated sequences into per-label training segments.
pub fn segments_by_label<F: Real>(
    sequences: &[FrameSequence<F>],
    annotations: &[Segmentation<F>],
) -> Result<BTreeMap<String, Vec<LabeledSegment<F>>>> {
    if sequences.len() != annotations.len() {
        return invalid("sequence and annotation counts differ");
    }
    let mut out: BTreeMap<String, Vec<LabeledSegment<F>>> = BTreeMap::new();
    for (seq, ann) in sequences.iter().zip(annotations) {
        if seq.len() != ann.len() {
            return invalid(format!("annotation covers {} frames, sequence has {}", ann.len(), seq.len()));
        }
        for span in ann.spans() {
            out.entry(span.label.clone()).or_default().push(LabeledSegment {
                label: span.label.clone(),
                frames: seq.frames.slice(ndarray::s![span.start..span.end, ..]).to_owned(),
                source: Source::Real,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence_model::build_path_grammar;
    use ndarray::array;

    fn seg(label: &str, v: f64, len: usize) -> LabeledSegment<f64> {
        LabeledSegment {
            label: label.into(),
            frames: Array2::from_elem((len, 2), v),
            source: Source::Real,
        }
    }

    #[test]
    fn caps_large_classes() {
        let mut classes = BTreeMap::new();
        classes.insert("a".to_string(), (0..100).map(|i| seg("a", i as f64, 3)).collect());
        let out = balance_classes(&classes, 12, 40, 1).unwrap();
        assert_eq!(out["a"].len(), 40);
        assert!(out["a"].iter().all(|s| s.source == Source::Real));
    }

    #[test]
    fn fills_small_classes() {
        let mut classes = BTreeMap::new();
        classes.insert("a".to_string(), vec![seg("a", 0.0, 4), seg("a", 1.0, 6), seg("a", 2.0, 5)]);
        let out = balance_classes(&classes, 12, 30, 2).unwrap();
        assert_eq!(out["a"].len(), 12);
        assert_eq!(out["a"].iter().filter(|s| s.source == Source::Synthetic).count(), 9);
        for s in &out["a"] {
            assert!(s.frames.iter().all(|&v| (0.0..=2.0).contains(&v)));
        }
        assert_eq!(balance_classes(&classes, 12, 30, 2).unwrap(), out);
    }

    #[test]
    fn balance_errors() {
        let mut classes: BTreeMap<String, Vec<LabeledSegment<f64>>> = BTreeMap::new();
        classes.insert("a".into(), vec![]);
        let err = balance_classes(&classes, 1, 2, 0).unwrap_err();
        assert!(err.to_string().contains("`a`"));
        classes.insert("a".into(), vec![seg("a", 0.0, 1)]);
        assert!(balance_classes(&classes, 3, 2, 0).is_err());
    }

    #[test]
    fn lambda_zero_is_first_parent() {
        let a = array![[1.0], [2.0], [3.0]];
        let b = array![[10.0], [20.0], [30.0], [40.0], [50.0]];
        let out = synthesize(a.view(), b.view(), 0.0);
        assert_eq!(out, resample_nearest(a.view(), 5));
        assert_eq!(out.column(0).to_vec(), vec![1.0, 2.0, 2.0, 3.0, 3.0]);
        let one = synthesize(a.view(), b.view(), 1.0);
        assert_eq!(one, b);
    }

    fn one_unit_spec() -> DatasetSpec {
        let mut units = BTreeMap::new();
        units.insert(
            "a".to_string(),
            UnitSpec {
                state_means: vec![vec![0.0], vec![3.0]],
                state_variances: vec![vec![1.0], vec![1.0]],
                duration: (10, 10),
            },
        );
        DatasetSpec {
            dim: 1,
            units,
            ordering: SequenceModel::PathGrammar(build_path_grammar(&[vec!["a"]]).unwrap()),
            sequences: 1,
            seed: 3,
            max_units: 20,
        }
    }

    #[test]
    fn single_unit_dataset() {
        let d = generate_dataset::<f64>(&one_unit_spec()).unwrap();
        assert_eq!(d.sequences[0].len(), 10);
        assert_eq!(d.annotations[0].spans().len(), 1);
        assert_eq!((d.annotations[0].spans()[0].start, d.annotations[0].spans()[0].end), (0, 10));
    }

    #[test]
    fn generator_deterministic_and_unbiased() {
        let mut spec = one_unit_spec();
        spec.sequences = 1000;
        let a = generate_dataset::<f64>(&spec).unwrap();
        let b = generate_dataset::<f64>(&spec).unwrap();
        assert_eq!(a.sequences, b.sequences);
        let (mut s0, mut s1) = (0.0, 0.0);
        for seq in &a.sequences {
            s0 += seq.frames.slice(ndarray::s![..5, 0]).sum();
            s1 += seq.frames.slice(ndarray::s![5.., 0]).sum();
        }
        assert!((s0 / 5000.0).abs() < 0.1);
        assert!((s1 / 5000.0 - 3.0).abs() < 0.1);
    }

    #[test]
    fn invalid_spec_lists_problems() {
        let mut spec = one_unit_spec();
        spec.units.get_mut("a").unwrap().duration = (1, 5);
        spec.ordering = SequenceModel::PathGrammar(build_path_grammar(&[vec!["a", "b"]]).unwrap());
        let msg = generate_dataset::<f64>(&spec).unwrap_err().to_string();
        assert!(msg.contains("`b`") && msg.contains("durations"));
    }

    #[test]
    fn cut_segments() {
        let d = generate_dataset::<f64>(&one_unit_spec()).unwrap();
        let by = segments_by_label(&d.sequences, &d.annotations).unwrap();
        assert_eq!(by["a"].len(), 1);
        assert_eq!(by["a"][0].frames, d.sequences[0].frames);
    }
}

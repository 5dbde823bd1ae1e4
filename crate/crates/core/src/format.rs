//! On-disk formats. Text formats are line based; `#` starts a comment line.
//! Parse errors report the byte offset of the offending line or field.

use crate::error::{Error, Result};
use crate::gmm::DiagonalGmm;
use crate::hmm::{HmmState, UnitHmm};
use crate::pca::PcaModel;
use crate::scalar::Real;
use crate::segmentation::{Segmentation, Span};
use crate::sequence_model::{build_bigram, build_path_grammar, BigramModel, SequenceModel, END_TOKEN, START_TOKEN};
use crate::training_data::{DatasetSpec, UnitSpec};
use ndarray::{Array1, Array2};
use std::collections::BTreeMap;
use std::fmt::Write;
use std::str::FromStr;

pub const FRAMES_MAGIC: &[u8; 5] = b"GSEQ1";

fn parse_err<T>(offset: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        offset,
        message: message.into(),
    })
}

/// Frames as `GSEQ1`, `u32` rows, `u32` columns, then little-endian `f32` row-major.
pub fn frames_to_bytes<F: Real>(frames: &Array2<F>) -> Vec<u8> {
    let (t, d) = frames.dim();
    let mut out = Vec::with_capacity(13 + 4 * t * d);
    out.extend_from_slice(FRAMES_MAGIC);
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for v in frames.iter() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

pub fn frames_from_bytes<F: Real>(bytes: &[u8]) -> Result<Array2<F>> {
    if bytes.len() < 13 || &bytes[..5] != FRAMES_MAGIC {
        return parse_err(0, "missing GSEQ1 header");
    }
    let t = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let expected = t.checked_mul(d).and_then(|n| n.checked_mul(4)).and_then(|n| n.checked_add(13));
    if expected != Some(bytes.len()) {
        return parse_err(
            bytes.len().min(13),
            format!("header declares {t}x{d} frames but payload is {} bytes", bytes.len() - 13),
        );
    }
    let mut values = Vec::with_capacity(t * d);
    for (i, chunk) in bytes[13..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return parse_err(13 + 4 * i, "non-finite frame value");
        }
        values.push(F::lit(v as f64));
    }
    Ok(Array2::from_shape_vec((t, d), values).unwrap())
}

/// Comma separated frames, one row per line.
pub fn frames_from_csv<F: Real>(text: &str) -> Result<Array2<F>> {
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for line in Lines::new(text) {
        let mut n = 0;
        for (off, field) in split_offsets(line.text, ',') {
            values.push(parse_field::<f64>(line.offset + off, field.trim()).map(F::lit)?);
            n += 1;
        }
        if *width.get_or_insert(n) != n {
            return parse_err(line.offset, format!("row has {n} values, expected {}", width.unwrap()));
        }
        rows += 1;
    }
    Ok(Array2::from_shape_vec((rows, width.unwrap_or(0)), values).unwrap())
}

pub fn frames_to_csv<F: Real>(frames: &Array2<F>) -> String {
    let mut out = String::new();
    for row in frames.rows() {
        let fields: Vec<String> = row.iter().map(|v| fmt_real(*v)).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Shortest text that parses back to the same value.
fn fmt_real<F: Real>(v: F) -> String {
    if F::epsilon().as_f64() > 1e-10 {
        format!("{}", v.as_f64() as f32)
    } else {
        format!("{}", v.as_f64())
    }
}

struct Line<'a> {
    offset: usize,
    text: &'a str,
}

/// Non-blank, non-comment lines with their byte offsets.
struct Lines<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self { text, pos: 0 }
    }

    fn end(&self) -> usize {
        self.text.len()
    }

    fn expect(&mut self, what: &str) -> Result<Line<'a>> {
        let end = self.end();
        self.next().map_or_else(|| parse_err(end, format!("unexpected end of input, expected {what}")), Ok)
    }
}

impl<'a> Iterator for Lines<'a> {
    type Item = Line<'a>;

    fn next(&mut self) -> Option<Line<'a>> {
        while self.pos < self.text.len() {
            let start = self.pos;
            let rest = &self.text[start..];
            let len = rest.find('\n').unwrap_or(rest.len());
            self.pos = start + len + 1;
            let raw = rest[..len].trim_end_matches('\r');
            let trimmed = raw.trim_start();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            return Some(Line {
                offset: start + (raw.len() - trimmed.len()),
                text: trimmed.trim_end(),
            });
        }
        None
    }
}

fn split_offsets(text: &str, sep: char) -> impl Iterator<Item = (usize, &str)> {
    let base = text.as_ptr() as usize;
    text.split(sep).map(move |f| (f.as_ptr() as usize - base, f))
}

fn words(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let base = text.as_ptr() as usize;
    text.split_whitespace().map(move |f| (f.as_ptr() as usize - base, f))
}

fn parse_field<T: FromStr>(offset: usize, field: &str) -> Result<T> {
    field
        .parse()
        .map_or_else(|_| parse_err(offset, format!("cannot parse `{field}`")), Ok)
}

fn parse_reals<F: Real>(line: &Line, expected: usize) -> Result<Array1<F>> {
    let mut out = Vec::with_capacity(expected);
    for (off, w) in words(line.text) {
        let v: f64 = parse_field(line.offset + off, w)?;
        out.push(F::lit(v));
    }
    if out.len() != expected {
        return parse_err(line.offset, format!("expected {expected} values, found {}", out.len()));
    }
    Ok(Array1::from(out))
}

/// Parses `magic version key=value...`, requiring every key in `keys`.
fn parse_header<'a>(line: &Line<'a>, magic: &str, keys: &[&str]) -> Result<BTreeMap<&'a str, (usize, &'a str)>> {
    let mut it = words(line.text);
    match (it.next(), it.next()) {
        (Some((_, m)), Some((_, "v1"))) if m == magic => {}
        _ => return parse_err(line.offset, format!("expected `{magic} v1` header")),
    }
    let mut fields = BTreeMap::new();
    for (off, w) in it {
        let Some((k, v)) = w.split_once('=') else {
            return parse_err(line.offset + off, format!("expected key=value, found `{w}`"));
        };
        fields.insert(k, (line.offset + off + k.len() + 1, v));
    }
    for k in keys {
        if !fields.contains_key(k) {
            return parse_err(line.offset, format!("header is missing `{k}=`"));
        }
    }
    Ok(fields)
}

fn header_value<T: FromStr>(fields: &BTreeMap<&str, (usize, &str)>, key: &str) -> Result<T> {
    let (off, v) = fields[key];
    parse_field(off, v)
}

fn push_reals<F: Real>(out: &mut String, values: impl IntoIterator<Item = F>) {
    let fields: Vec<String> = values.into_iter().map(fmt_real).collect();
    out.push_str(&fields.join(" "));
    out.push('\n');
}

fn model_err<T>(offset: usize, e: Error) -> Result<T> {
    parse_err(offset, e.to_string())
}

pub fn gmm_to_string<F: Real>(gmm: &DiagonalGmm<F>) -> String {
    let mut out = format!("genseg-gmm v1 K={} D={}\n", gmm.n_components(), gmm.dim());
    write_gmm_body(&mut out, gmm);
    out
}

fn write_gmm_body<F: Real>(out: &mut String, gmm: &DiagonalGmm<F>) {
    push_reals(out, gmm.weights().iter().copied());
    for row in gmm.means().rows() {
        push_reals(out, row.iter().copied());
    }
    for row in gmm.variances().rows() {
        push_reals(out, row.iter().copied());
    }
}

pub fn parse_gmm<F: Real>(text: &str) -> Result<DiagonalGmm<F>> {
    let mut lines = Lines::new(text);
    let gmm = read_gmm(&mut lines)?;
    trailing(&mut lines)?;
    Ok(gmm)
}

fn trailing(lines: &mut Lines) -> Result<()> {
    match lines.next() {
        Some(l) => parse_err(l.offset, "unexpected trailing content"),
        None => Ok(()),
    }
}

fn read_gmm<F: Real>(lines: &mut Lines) -> Result<DiagonalGmm<F>> {
    let header = lines.expect("GMM header")?;
    let fields = parse_header(&header, "genseg-gmm", &["K", "D"])?;
    let k: usize = header_value(&fields, "K")?;
    let d: usize = header_value(&fields, "D")?;
    let weights = parse_reals(&lines.expect("weights")?, k)?;
    let mut means = Array2::zeros((k, d));
    let mut vars = Array2::zeros((k, d));
    for target in [&mut means, &mut vars] {
        for i in 0..k {
            target.row_mut(i).assign(&parse_reals::<F>(&lines.expect("GMM row")?, d)?);
        }
    }
    DiagonalGmm::new(weights, means, vars).or_else(|e| model_err(header.offset, e))
}

pub fn pca_to_string<F: Real>(pca: &PcaModel<F>) -> String {
    let mut out = format!(
        "genseg-pca v1 M={} Dp={} whiten={} epsilon={}\n",
        pca.input_dim(),
        pca.output_dim(),
        u8::from(pca.whiten),
        fmt_real(pca.epsilon)
    );
    push_reals(&mut out, pca.mean.iter().copied());
    push_reals(&mut out, pca.eigenvalues.iter().copied());
    for row in pca.basis.rows() {
        push_reals(&mut out, row.iter().copied());
    }
    out
}

pub fn parse_pca<F: Real>(text: &str) -> Result<PcaModel<F>> {
    let mut lines = Lines::new(text);
    let header = lines.expect("PCA header")?;
    let fields = parse_header(&header, "genseg-pca", &["M", "Dp", "whiten", "epsilon"])?;
    let m: usize = header_value(&fields, "M")?;
    let dp: usize = header_value(&fields, "Dp")?;
    let whiten: u8 = header_value(&fields, "whiten")?;
    let epsilon: f64 = header_value(&fields, "epsilon")?;
    if dp == 0 || dp > m {
        return parse_err(header.offset, format!("output dimension {dp} must be in 1..={m}"));
    }
    let mean = parse_reals(&lines.expect("mean")?, m)?;
    let eigenvalues = parse_reals(&lines.expect("eigenvalues")?, dp)?;
    let mut basis = Array2::zeros((m, dp));
    for i in 0..m {
        basis.row_mut(i).assign(&parse_reals::<F>(&lines.expect("basis row")?, dp)?);
    }
    trailing(&mut lines)?;
    Ok(PcaModel {
        mean,
        basis,
        eigenvalues,
        whiten: whiten != 0,
        epsilon: F::lit(epsilon),
    })
}

/// Several unit HMMs concatenated in one file.
pub fn hmms_to_string<'a, F: Real + 'a>(hmms: impl IntoIterator<Item = &'a UnitHmm<F>>) -> String {
    let mut out = String::new();
    for hmm in hmms {
        writeln!(out, "genseg-hmm v1 label={} S={} D={}", hmm.label(), hmm.n_states(), hmm.dim()).unwrap();
        for s in hmm.states() {
            push_reals(&mut out, [s.log_self, s.log_leave]);
            out.push_str(&gmm_to_string(&s.emission));
        }
    }
    out
}

pub fn parse_hmms<F: Real>(text: &str) -> Result<Vec<UnitHmm<F>>> {
    let mut lines = Lines::new(text);
    let mut out = Vec::new();
    while lines.pos < lines.end() {
        let Some(header) = lines.next() else { break };
        let fields = parse_header(&header, "genseg-hmm", &["label", "S", "D"])?;
        let label = fields["label"].1.to_string();
        let s: usize = header_value(&fields, "S")?;
        let d: usize = header_value(&fields, "D")?;
        let mut states = Vec::with_capacity(s);
        for _ in 0..s {
            let trans = parse_reals::<F>(&lines.expect("transition log-probabilities")?, 2)?;
            let emission_offset = lines.pos;
            let emission = read_gmm(&mut lines)?;
            if emission.dim() != d {
                return parse_err(emission_offset, format!("emission dimension {} differs from D={d}", emission.dim()));
            }
            states.push(HmmState {
                log_self: trans[0],
                log_leave: trans[1],
                emission,
            });
        }
        out.push(UnitHmm::new(label, states).or_else(|e| model_err(header.offset, e))?);
    }
    if out.is_empty() {
        return parse_err(0, "no HMMs in input");
    }
    Ok(out)
}

/// Path grammars are one space-separated unit sequence per line; bigram
/// models start with a `bigram` line followed by `prev next logp` triples.
pub fn sequence_model_to_string<F: Real>(model: &SequenceModel<F>) -> String {
    match model {
        SequenceModel::PathGrammar(g) => {
            let mut out = String::new();
            for seq in g.sequences() {
                out.push_str(&seq.join(" "));
                out.push('\n');
            }
            out
        }
        SequenceModel::Bigram(b) => {
            let mut out = String::from("bigram\n");
            let v = b.vocab().len();
            for r in 0..=v {
                let prev = if r == 0 { START_TOKEN } else { &b.vocab()[r - 1] };
                for c in 0..=v {
                    let next = if c == v { END_TOKEN } else { &b.vocab()[c] };
                    writeln!(out, "{prev} {next} {}", fmt_real(b.log_probs()[[r, c]])).unwrap();
                }
            }
            out
        }
    }
}

pub fn parse_sequence_model<F: Real>(text: &str) -> Result<SequenceModel<F>> {
    let mut lines = Lines::new(text).peekable();
    let Some(first) = lines.peek() else {
        return parse_err(0, "empty grammar");
    };
    let first_offset = first.offset;
    if first.text != "bigram" {
        let mut seqs = Vec::new();
        for line in lines {
            if let Some((off, w)) = words(line.text).find(|(_, w)| !crate::is_valid_label(w)) {
                return parse_err(line.offset + off, format!("invalid unit label `{w}`"));
            }
            seqs.push(line.text.split_whitespace().collect::<Vec<_>>());
        }
        return build_path_grammar(&seqs)
            .map(SequenceModel::PathGrammar)
            .or_else(|e| model_err(first_offset, e));
    }
    lines.next();
    let mut entries = Vec::new();
    let mut vocab = std::collections::BTreeSet::new();
    for line in lines {
        let w: Vec<(usize, &str)> = words(line.text).collect();
        if w.len() != 3 {
            return parse_err(line.offset, "expected `prev next logp`");
        }
        let logp: f64 = parse_field(line.offset + w[2].0, w[2].1)?;
        for (off, label) in &w[..2] {
            if *label != START_TOKEN && *label != END_TOKEN {
                if !crate::is_valid_label(label) {
                    return parse_err(line.offset + off, format!("invalid unit label `{label}`"));
                }
                vocab.insert(label.to_string());
            }
        }
        entries.push((line.offset, w[0].1, w[1].1, logp));
    }
    let vocab: Vec<String> = vocab.into_iter().collect();
    let v = vocab.len();
    let mut table = Array2::from_elem((v + 1, v + 1), F::neg_infinity());
    let mut seen = Array2::from_elem((v + 1, v + 1), false);
    for (offset, prev, next, logp) in entries {
        let r = if prev == START_TOKEN { Some(0) } else { vocab.iter().position(|x| x == prev).map(|i| i + 1) };
        let c = if next == END_TOKEN { Some(v) } else { vocab.iter().position(|x| x == next) };
        let (Some(r), Some(c)) = (r, c) else {
            return parse_err(offset, format!("invalid bigram `{prev} {next}`"));
        };
        if seen[[r, c]] {
            return parse_err(offset, "duplicate bigram entry");
        }
        seen[[r, c]] = true;
        table[[r, c]] = F::lit(logp);
    }
    BigramModel::from_log_probs(vocab, table)
        .map(SequenceModel::Bigram)
        .or_else(|e| model_err(first_offset, e))
}

pub fn segmentation_to_string<F: Real>(seg: &Segmentation<F>) -> String {
    let mut out = format!("genseg-seg v1 T={} total={}\n", seg.len(), fmt_real(seg.total_log_score));
    for s in seg.spans() {
        writeln!(out, "{} {} {} {}", s.label, s.start, s.end, fmt_real(s.log_score)).unwrap();
    }
    out
}

/// `label start end` lines, half-open and sorted.
pub fn annotation_to_string<F: Real>(seg: &Segmentation<F>) -> String {
    let mut out = String::new();
    for s in seg.spans() {
        writeln!(out, "{} {} {}", s.label, s.start, s.end).unwrap();
    }
    out
}

/// Reads either a decoder output (with header and scores) or a bare annotation.
/// A bare annotation's length is its last span end.
pub fn parse_segmentation<F: Real>(text: &str) -> Result<Segmentation<F>> {
    let mut lines = Lines::new(text).peekable();
    let mut declared = None;
    if let Some(first) = lines.peek() {
        if first.text.starts_with("genseg-seg") {
            let first = lines.next().unwrap();
            let fields = parse_header(&first, "genseg-seg", &["T", "total"])?;
            let t: usize = header_value(&fields, "T")?;
            let total: f64 = header_value(&fields, "total")?;
            declared = Some((first.offset, t, F::lit(total)));
        }
    }
    let mut spans = Vec::new();
    let mut last_offset = 0;
    for line in lines {
        let w: Vec<(usize, &str)> = words(line.text).collect();
        let scored = declared.is_some();
        if w.len() != if scored { 4 } else { 3 } {
            return parse_err(line.offset, if scored { "expected `label start end logscore`" } else { "expected `label start end`" });
        }
        spans.push(Span {
            label: w[0].1.to_string(),
            start: parse_field(line.offset + w[1].0, w[1].1)?,
            end: parse_field(line.offset + w[2].0, w[2].1)?,
            log_score: if scored { F::lit(parse_field(line.offset + w[3].0, w[3].1)?) } else { F::zero() },
        });
        last_offset = line.offset;
    }
    let (offset, len, total) = match declared {
        Some(d) => d,
        None => (last_offset, spans.last().map_or(0, |s| s.end), F::zero()),
    };
    Segmentation::new(spans, len, total).or_else(|e| model_err(offset, e))
}

/// `[section]` headers followed by `key = value` lines. Keys are stored as
/// `section.key`; keys before any header have no prefix. Repeated keys keep
/// every value in order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValueConfig {
    entries: Vec<(String, String, usize)>,
}

impl KeyValueConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut section = String::new();
        let mut entries = Vec::new();
        for line in Lines::new(text) {
            if let Some(inner) = line.text.strip_prefix('[') {
                let Some(name) = inner.strip_suffix(']') else {
                    return parse_err(line.offset, "unterminated section header");
                };
                section = name.split_whitespace().collect::<Vec<_>>().join(" ");
                continue;
            }
            let Some((k, v)) = line.text.split_once('=') else {
                return parse_err(line.offset, "expected `key = value`");
            };
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            let value_offset = line.offset + k.len() + 1 + (v.len() - v.trim_start().len());
            entries.push((key, v.trim().to_string(), value_offset));
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|e| e.0 == key).map(|e| e.1.as_str())
    }

    pub fn get_all(&self, key: &str) -> Vec<&str> {
        self.entries.iter().filter(|e| e.0 == key).map(|e| e.1.as_str()).collect()
    }

    /// Parses the last value of `key`, reporting the value's byte offset on failure.
    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.iter().rev().find(|e| e.0 == key) {
            Some((_, v, off)) => parse_field(*off, v).map(Some),
            None => Ok(None),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.push((key.to_string(), value.into(), 0));
    }

    /// Section names that start with `prefix ` (e.g. every `unit NAME`).
    pub fn sections_with_prefix(&self, prefix: &str) -> Vec<String> {
        let mut out: Vec<String> = self
            .entries
            .iter()
            .filter_map(|e| e.0.rsplit_once('.').map(|(s, _)| s))
            .filter_map(|s| s.strip_prefix(prefix).and_then(|r| r.strip_prefix(' ')))
            .map(str::to_string)
            .collect();
        out.dedup();
        out.sort();
        out.dedup();
        out
    }

    fn offset_of(&self, key: &str) -> usize {
        self.entries.iter().rev().find(|e| e.0 == key).map_or(0, |e| e.2)
    }

    fn offsets_of(&self, key: &str) -> Vec<usize> {
        self.entries.iter().filter(|e| e.0 == key).map(|e| e.2).collect()
    }
}

/// Dataset description:
///
/// ```text
/// [dataset]
/// dim = 2
/// sequences = 10
/// seed = 1
/// ordering = path        # or bigram, estimated from the paths
/// path = a b
/// [unit a]
/// duration = 20 30
/// state = 0 0 ; 1 1     # means ; variances, one line per state
/// ```
pub fn parse_dataset_spec(text: &str) -> Result<DatasetSpec> {
    let cfg = KeyValueConfig::parse(text)?;
    let need = |key: &str| -> Result<usize> {
        cfg.parsed(key)?
            .map_or_else(|| parse_err(0, format!("missing `{key}`")), Ok)
    };
    let dim = need("dataset.dim")?;
    let sequences = need("dataset.sequences")?;
    let seed: u64 = cfg.parsed("dataset.seed")?.unwrap_or(0);
    let max_units: usize = cfg.parsed("dataset.max_units")?.unwrap_or(50);
    let smoothing: f64 = cfg.parsed("dataset.smoothing")?.unwrap_or(crate::sequence_model::DEFAULT_SMOOTHING);
    let paths: Vec<Vec<&str>> = cfg
        .get_all("dataset.path")
        .into_iter()
        .map(|p| p.split_whitespace().collect())
        .collect();
    let path_offset = cfg.offset_of("dataset.path");
    let ordering = match cfg.get("dataset.ordering").unwrap_or("path") {
        "path" => build_path_grammar(&paths).map(SequenceModel::PathGrammar),
        "bigram" => build_bigram(&paths, smoothing).map(SequenceModel::Bigram),
        other => return parse_err(cfg.offset_of("dataset.ordering"), format!("unknown ordering `{other}`")),
    }
    .or_else(|e| model_err(path_offset, e))?;

    let mut units = BTreeMap::new();
    for name in cfg.sections_with_prefix("unit") {
        let dkey = format!("unit {name}.duration");
        let dur_text = cfg.get(&dkey).unwrap_or("");
        let dur_off = cfg.offset_of(&dkey);
        let d: Vec<usize> = words(dur_text)
            .map(|(o, w)| parse_field(dur_off + o, w))
            .collect::<Result<_>>()?;
        let duration = match d.as_slice() {
            [n] => (*n, *n),
            [lo, hi] => (*lo, *hi),
            _ => return parse_err(dur_off, format!("unit `{name}` needs `duration = min max`")),
        };
        let skey = format!("unit {name}.state");
        let mut state_means = Vec::new();
        let mut state_variances = Vec::new();
        for (text, off) in cfg.get_all(&skey).into_iter().zip(cfg.offsets_of(&skey)) {
            let Some((m, v)) = text.split_once(';') else {
                return parse_err(off, "expected `state = means ; variances`");
            };
            let nums = |s: &str, base: usize| -> Result<Vec<f64>> {
                words(s).map(|(o, w)| parse_field(base + o, w)).collect()
            };
            state_means.push(nums(m, off)?);
            state_variances.push(nums(v, off + m.len() + 1)?);
        }
        units.insert(
            name,
            UnitSpec {
                state_means,
                state_variances,
                duration,
            },
        );
    }
    let spec = DatasetSpec {
        dim,
        units,
        ordering,
        sequences,
        seed,
        max_units,
    };
    spec.validate()?;
    Ok(spec)
}

/// The demo dataset: five units with three states each and a path grammar.
/// State means are distinct even-weight codewords scaled by 4 standard
/// deviations, so any two states differ by at least `4 * sqrt(2)`.
pub fn demo_dataset_spec_text(sequences: usize, seed: u64) -> String {
    const DIM: usize = 6;
    let codes: Vec<u32> = (0u32..64).filter(|c| c.count_ones() % 2 == 0).skip(1).take(15).collect();
    let mut out = format!("[dataset]\ndim = {DIM}\nsequences = {sequences}\nseed = {seed}\nordering = path\n");
    for path in ["u1 u2 u3 u4 u5", "u1 u3 u4 u5", "u2 u3 u5", "u1 u2 u4 u5", "u1 u2 u3 u5"] {
        writeln!(out, "path = {path}").unwrap();
    }
    for u in 0..5 {
        write!(out, "\n[unit u{}]\nduration = 24 40\n", u + 1).unwrap();
        for s in 0..3 {
            let code = codes[3 * u + s];
            let means: Vec<String> = (0..DIM).map(|b| if code >> b & 1 == 1 { "4" } else { "0" }.to_string()).collect();
            writeln!(out, "state = {} ; {}", means.join(" "), ["1"; DIM].join(" ")).unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{fit_gmm, GmmConfig};
    use crate::training_data::generate_dataset;
    use ndarray::array;
    use proptest::prelude::*;

    fn small_gmm() -> DiagonalGmm<f64> {
        DiagonalGmm::new(
            array![0.25, 0.75],
            array![[0.1, -1.0 / 3.0], [2.0, 1e-7]],
            array![[1.0, 0.5], [3.0, 1e-3]],
        )
        .unwrap()
    }

    #[test]
    fn gmm_round_trip_exact() {
        let g = small_gmm();
        let text = gmm_to_string(&g);
        assert_eq!(parse_gmm::<f64>(&text).unwrap(), g);
        let g32 = DiagonalGmm::<f32>::new(array![1.0], array![[0.1f32]], array![[0.3f32]]).unwrap();
        assert_eq!(parse_gmm::<f32>(&gmm_to_string(&g32)).unwrap(), g32);
    }

    #[test]
    fn parse_errors_carry_offsets() {
        let text = "genseg-gmm v1 K=1 D=2\n1\n0 zz\n1 1\n";
        match parse_gmm::<f64>(text) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, text.find("zz").unwrap()),
            other => panic!("{other:?}"),
        }
        match parse_gmm::<f64>("genseg-gmm v1 K=1 D=2\n1\n0 0\n") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 28),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_gmm::<f64>("nonsense"), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn frames_binary_layout() {
        let f = array![[1.0f64, 2.0], [3.0, -4.5], [0.0, 0.25]];
        let bytes = frames_to_bytes(&f);
        assert_eq!(&bytes[..5], b"GSEQ1");
        assert_eq!(&bytes[5..13], &[3, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(bytes.len(), 13 + 24);
        assert_eq!(frames_from_bytes::<f64>(&bytes).unwrap(), f);
        assert!(matches!(frames_from_bytes::<f64>(&bytes[..20]), Err(Error::Parse { .. })));
        let csv = frames_to_csv(&f);
        assert_eq!(frames_from_csv::<f64>(&csv).unwrap(), f);
        match frames_from_csv::<f64>("1,2\n3\n") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hmm_and_pca_round_trip() {
        let data = small_gmm().sample(300, 4).unwrap();
        let segs = vec![data.view()];
        let hmm = crate::hmm::init_hmm("walk", &segs, &crate::hmm::HmmInitConfig::default()).unwrap();
        let hmm2 = UnitHmm::new("sit", vec![hmm.states()[0].clone()]).unwrap();
        let text = hmms_to_string([&hmm, &hmm2]);
        assert_eq!(parse_hmms::<f64>(&text).unwrap(), vec![hmm, hmm2]);

        let pca = crate::pca::fit_pca(data.view(), 1, true).unwrap();
        assert_eq!(parse_pca::<f64>(&pca_to_string(&pca)).unwrap(), pca);
        let fit = fit_gmm::<f64>(data.view(), 2, &GmmConfig::default()).unwrap();
        assert_eq!(parse_gmm::<f64>(&gmm_to_string(&fit.gmm)).unwrap(), fit.gmm);
    }

    #[test]
    fn grammar_round_trip() {
        let ann = vec![vec!["a", "b"], vec!["b", "c", "a"], vec!["a"]];
        let path: SequenceModel<f64> = SequenceModel::PathGrammar(build_path_grammar(&ann).unwrap());
        assert_eq!(parse_sequence_model::<f64>(&sequence_model_to_string(&path)).unwrap(), path);
        let bigram: SequenceModel<f64> = SequenceModel::Bigram(build_bigram(&ann, 0.5).unwrap());
        let text = sequence_model_to_string(&bigram);
        assert!(text.starts_with("bigram\n<s> a ") && text.contains(" </s> "));
        assert_eq!(sequence_model_to_string(&path), "a\na b\nb c a\n");
        match parse_sequence_model::<f64>("a b\nc <x>\n") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("{other:?}"),
        }
        assert_eq!(parse_sequence_model::<f64>(&text).unwrap(), bigram);
    }

    #[test]
    fn segmentation_round_trip() {
        let seg = Segmentation::new(
            vec![
                Span { label: "a".into(), start: 0, end: 4, log_score: -1.5 },
                Span { label: "b".into(), start: 4, end: 9, log_score: -2.25 },
            ],
            9,
            -3.75,
        )
        .unwrap();
        assert_eq!(parse_segmentation::<f64>(&segmentation_to_string(&seg)).unwrap(), seg);
        let ann = parse_segmentation::<f64>(&annotation_to_string(&seg)).unwrap();
        assert_eq!(ann.frame_labels(), seg.frame_labels());
        assert!(parse_segmentation::<f64>("a 0 4\nb 5 9\n").is_err());
    }

    #[test]
    fn config_sections() {
        let cfg = KeyValueConfig::parse("top = 1\n[gmm]\nk = 16\n# note\n[unit x]\nstate = 1 ; 2\nstate = 3 ; 4\n").unwrap();
        assert_eq!(cfg.get("top"), Some("1"));
        assert_eq!(cfg.parsed::<usize>("gmm.k").unwrap(), Some(16));
        assert_eq!(cfg.get_all("unit x.state"), vec!["1 ; 2", "3 ; 4"]);
        assert_eq!(cfg.sections_with_prefix("unit"), vec!["x".to_string()]);
        let bad = KeyValueConfig::parse("[gmm]\nk = many\n").unwrap();
        match bad.parsed::<usize>("gmm.k") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 10),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn demo_spec_parses_and_generates() {
        let spec = parse_dataset_spec(&demo_dataset_spec_text(3, 9)).unwrap();
        assert_eq!(spec.units.len(), 5);
        assert_eq!(spec.dim, 6);
        let d = generate_dataset::<f64>(&spec).unwrap();
        assert_eq!(d.sequences.len(), 3);
        for (i, a) in spec.units.values().enumerate() {
            for (j, b) in spec.units.values().enumerate() {
                for (si, ma) in a.state_means.iter().enumerate() {
                    for (sj, mb) in b.state_means.iter().enumerate() {
                        if (i, si) != (j, sj) {
                            let d2: f64 = ma.iter().zip(mb).map(|(x, y)| (x - y).powi(2)).sum();
                            assert!(d2 >= 32.0 - 1e-9);
                        }
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn prop_frames_round_trip(t in 0usize..6, d in 1usize..5, seed in any::<u64>()) {
            use rand::Rng;
            let mut r = crate::rng::seeded(seed);
            let f = Array2::from_shape_fn((t, d), |_| r.random_range(-1e3f32..1e3) as f64);
            prop_assert_eq!(frames_from_bytes::<f64>(&frames_to_bytes(&f)).unwrap(), f.clone());
            if t > 0 {
                prop_assert_eq!(frames_from_csv::<f64>(&frames_to_csv(&f)).unwrap(), f);
            }
        }

        #[test]
        fn prop_gmm_round_trip(k in 1usize..4, d in 1usize..4, seed in any::<u64>()) {
            use rand::Rng;
            let mut r = crate::rng::seeded(seed);
            let w: Vec<f64> = (0..k).map(|_| r.random_range(0.1..1.0)).collect();
            let s: f64 = w.iter().sum();
            let weights = Array1::from(w).mapv(|x| x / s);
            let means = Array2::from_shape_fn((k, d), |_| r.random_range(-1e6..1e6));
            let vars = Array2::from_shape_fn((k, d), |_| r.random_range(1e-6..1e3));
            if let Ok(g) = DiagonalGmm::new(weights, means, vars) {
                prop_assert_eq!(parse_gmm::<f64>(&gmm_to_string(&g)).unwrap(), g);
            }
        }
    }
}

use crate::error::{invalid, Result};
use crate::scalar::Real;

/// A labeled frame span `[start, end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Span<F> {
    pub label: String,
    pub start: usize,
    pub end: usize,
    pub log_score: F,
}

impl<F> Span<F> {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    /// Midpoint frame `floor((start + end - 1) / 2)`.
    pub fn midpoint(&self) -> usize {
        (self.start + self.end - 1) / 2
    }
}

/// Ordered, contiguous labeled spans covering `[0, len)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation<F> {
    spans: Vec<Span<F>>,
    len: usize,
    pub total_log_score: F,
}

impl<F: Real> Segmentation<F> {
    pub fn new(spans: Vec<Span<F>>, len: usize, total_log_score: F) -> Result<Self> {
        if len == 0 {
            return invalid("segmentation must cover at least one frame");
        }
        let mut cursor = 0;
        for s in &spans {
            if s.start != cursor || s.end <= s.start {
                return invalid(format!(
                    "span `{}` [{}, {}) breaks contiguity at frame {cursor}",
                    s.label, s.start, s.end
                ));
            }
            if !crate::is_valid_label(&s.label) {
                return invalid(format!("invalid label `{}`", s.label));
            }
            cursor = s.end;
        }
        if cursor != len {
            return invalid(format!("spans cover {cursor} frames, expected {len}"));
        }
        Ok(Self {
            spans,
            len,
            total_log_score,
        })
    }

    /// Ground-truth style segmentation with zero scores.
    pub fn from_labels(spans: &[(&str, usize, usize)], len: usize) -> Result<Self> {
        let spans = spans
            .iter()
            .map(|&(l, s, e)| Span {
                label: l.to_string(),
                start: s,
                end: e,
                log_score: F::zero(),
            })
            .collect();
        Self::new(spans, len, F::zero())
    }

    pub fn spans(&self) -> &[Span<F>] {
        &self.spans
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn labels(&self) -> Vec<&str> {
        self.spans.iter().map(|s| s.label.as_str()).collect()
    }

    /// Label of every frame, in order.
    pub fn frame_labels(&self) -> Vec<&str> {
        let mut out = Vec::with_capacity(self.len);
        for s in &self.spans {
            out.extend(std::iter::repeat_n(s.label.as_str(), s.len()));
        }
        out
    }

    pub fn span_at(&self, frame: usize) -> Option<usize> {
        if frame >= self.len {
            return None;
        }
        Some(self.spans.partition_point(|s| s.end <= frame))
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Result, UpoError};

/// A named, contiguous block of a [`ParamVector`], stored row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Segment map of a flat parameter array. Segments are disjoint and tile the
/// array exactly, in declaration order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<Segment>,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a `rows x cols` segment after the existing ones.
    pub fn push(&mut self, name: &str, rows: usize, cols: usize) -> &mut Self {
        let offset = self.total_len();
        self.segments.push(Segment {
            name: name.to_string(),
            offset,
            rows,
            cols,
        });
        self
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn get(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn segment(&self, name: &str) -> Result<&Segment> {
        self.get(name)
            .ok_or_else(|| UpoError::invalid(format!("layout has no segment '{name}'")))
    }

    pub fn total_len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.len())
    }

    /// Checks that segments are disjoint, contiguous and cover `len` entries.
    pub fn validate(&self, len: usize) -> Result<()> {
        let mut cursor = 0;
        for s in &self.segments {
            if s.offset != cursor {
                return Err(UpoError::invalid(format!(
                    "segment '{}' starts at {} but previous segment ends at {cursor}",
                    s.name, s.offset
                )));
            }
            cursor += s.len();
        }
        if cursor != len {
            return Err(UpoError::invalid(format!(
                "layout covers {cursor} entries but the array has {len}"
            )));
        }
        Ok(())
    }
}

/// Flat array of `f64` parameters with a named segment layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn zeros(layout: Layout) -> Self {
        let values = vec![0.0; layout.total_len()];
        Self { values, layout }
    }

    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self> {
        layout.validate(values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(UpoError::NonFinite(format!("parameter {i}")));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn segment(&self, name: &str) -> Result<&[f64]> {
        let range = self.layout.segment(name)?.range();
        Ok(&self.values[range])
    }

    pub fn segment_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let range = self.layout.segment(name)?.range();
        Ok(&mut self.values[range])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ParamVector, scale: f64) -> Result<()> {
        if other.len() != self.len() {
            return Err(UpoError::invalid(format!(
                "cannot add parameter vectors of lengths {} and {}",
                self.len(),
                other.len()
            )));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

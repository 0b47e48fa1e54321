use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Flat parameter storage partitioned into named, contiguous segments.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub segments: Vec<Segment>,
}

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a segment and returns its offset.
    pub fn push(&mut self, name: impl Into<String>, values: &[f64]) -> usize {
        let offset = self.values.len();
        self.values.extend_from_slice(values);
        self.segments.push(Segment {
            name: name.into(),
            offset,
            len: values.len(),
        });
        offset
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.segment(name).map(|s| &self.values[s.range()])
    }

    pub fn slice_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.segment(name)?.range();
        Some(&mut self.values[r])
    }

    /// Checks that segments tile the array in order and values are finite.
    pub fn validate(&self) -> Result<()> {
        let mut end = 0;
        for s in &self.segments {
            if s.offset != end {
                return Err(Error::ShapeMismatch(format!(
                    "segment '{}' starts at {} but previous segment ends at {end}",
                    s.name, s.offset
                )));
            }
            end += s.len;
        }
        if end != self.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "segments cover {end} of {} values",
                self.values.len()
            )));
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { value: *v });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_tile_the_vector() {
        let mut p = ParamVector::new();
        assert_eq!(p.push("a", &[1.0, 2.0]), 0);
        assert_eq!(p.push("b", &[3.0]), 2);
        p.validate().unwrap();
        assert_eq!(p.slice("b").unwrap(), &[3.0]);
        p.slice_mut("a").unwrap()[1] = 5.0;
        assert_eq!(p.values, vec![1.0, 5.0, 3.0]);
        p.values.push(0.0);
        assert!(p.validate().is_err());
    }
}

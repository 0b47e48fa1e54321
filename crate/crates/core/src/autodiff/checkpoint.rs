use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, ParamVector, Segment};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

/// Parameters, optimizer moments, and the network shapes needed to rebuild
/// the model that owns them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub segments: Vec<Segment>,
    pub values: Vec<f64>,
    pub adam: AdamMoments,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub networks: serde_json::Value,
}

impl Checkpoint {
    pub fn new(params: &ParamVector, adam: &AdamState, networks: serde_json::Value) -> Self {
        Self {
            segments: params.segments.clone(),
            values: params.values.clone(),
            adam: AdamMoments {
                m: adam.m.clone(),
                v: adam.v.clone(),
                t: adam.t,
            },
            networks,
        }
    }

    pub fn params(&self) -> Result<ParamVector> {
        let p = ParamVector {
            values: self.values.clone(),
            segments: self.segments.clone(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if c.adam.m.len() != c.values.len() || c.adam.v.len() != c.values.len() {
            return Err(Error::CountMismatch {
                expected: c.values.len(),
                found: c.adam.m.len().min(c.adam.v.len()),
            });
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut p = ParamVector::new();
        p.push("sdf", &[0.1, -0.25, 1.0 / 3.0]);
        p.push("camera_0", &[1e-17, 2.0]);
        let mut a = AdamState::new(5);
        a.step(&mut p.values.clone(), &[1.0, 2.0, 3.0, 4.0, 5.0])
            .unwrap();
        let c = Checkpoint::new(&p, &a, serde_json::json!({"width": 4}));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        c.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.params().unwrap(), p);
    }
}

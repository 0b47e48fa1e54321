use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::autodiff::{Checkpoint, Init, Mlp, ParamVector, Tape};
use crate::error::{Error, Result};
use crate::geometry::{Camera, TapeCamera, Vec3};
use crate::sdf::{NeuralSdf, NeuralSdfRef};

pub const SDF_SEGMENT: &str = "sdf";
pub const RENDER_SEGMENT: &str = "render";
pub const SEMANTIC_SEGMENT: &str = "semantic";
pub const CAMERA_SEGMENT: &str = "cameras";

/// Network shapes and base cameras stored with a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: ModelConfig,
    pub cameras: Vec<Camera>,
}

/// The three networks plus per-view camera corrections `(ω, Δt)`, all in
/// one flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconModel {
    pub config: ModelConfig,
    pub sdf: Mlp,
    pub render: Mlp,
    pub semantic: Mlp,
    /// Cameras the corrections are composed onto.
    pub base_cameras: Vec<Camera>,
    pub params: ParamVector,
}

impl ReconModel {
    pub fn new(config: &ModelConfig, base_cameras: Vec<Camera>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sdf = NeuralSdf::geometric(&config.sdf, &mut rng)?;
        let render = Mlp::new(config.render_mlp())?;
        let semantic = Mlp::new(config.semantic_mlp())?;
        let mut params = ParamVector::new();
        params.push(SDF_SEGMENT, &sdf.params);
        params.push(RENDER_SEGMENT, &render.init(Init::Uniform, &mut rng));
        params.push(SEMANTIC_SEGMENT, &semantic.init(Init::Uniform, &mut rng));
        params.push(CAMERA_SEGMENT, &vec![0.0; 6 * base_cameras.len()]);
        Ok(Self {
            config: config.clone(),
            sdf: sdf.net,
            render,
            semantic,
            base_cameras,
            params,
        })
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            model: self.config.clone(),
            cameras: self.base_cameras.clone(),
        }
    }

    pub fn n_views(&self) -> usize {
        self.base_cameras.len()
    }

    pub fn offset(&self, segment: &str) -> usize {
        self.params.segment(segment).expect("model segment").offset
    }

    /// The distance field over `values` (a full parameter vector).
    pub fn field<'a>(&'a self, values: &'a [f64]) -> NeuralSdfRef<'a> {
        let seg = self.params.segment(SDF_SEGMENT).expect("model segment");
        NeuralSdfRef {
            net: &self.sdf,
            params: &values[seg.range()],
            offset: seg.offset,
        }
    }

    /// Standalone copy of the distance network.
    pub fn neural_sdf(&self) -> NeuralSdf {
        NeuralSdf {
            net: self.sdf.clone(),
            params: self
                .params
                .slice(SDF_SEGMENT)
                .expect("model segment")
                .to_vec(),
        }
    }

    pub fn check_view(&self, view: usize) -> Result<()> {
        if view >= self.n_views() {
            return Err(Error::ViewOutOfRange {
                view,
                count: self.n_views(),
            });
        }
        Ok(())
    }

    fn correction(&self, values: &[f64], view: usize) -> Result<(Vec3, Vec3)> {
        self.check_view(view)?;
        let o = self.offset(CAMERA_SEGMENT) + 6 * view;
        let c = &values[o..o + 6];
        Ok((Vec3::new(c[0], c[1], c[2]), Vec3::new(c[3], c[4], c[5])))
    }

    /// Corrected camera of `view` for parameter vector `values`.
    pub fn camera(&self, values: &[f64], view: usize) -> Result<Camera> {
        let (w, t) = self.correction(values, view)?;
        Ok(self.base_cameras[view].perturbed(&w, &t))
    }

    /// Corrected camera of `view` whose pose reads the tape's parameters.
    pub fn tape_camera(&self, tape: &mut Tape, view: usize) -> Result<TapeCamera> {
        self.check_view(view)?;
        let o = self.offset(CAMERA_SEGMENT) + 6 * view;
        let p: [_; 6] = std::array::from_fn(|i| tape.param(o + i));
        Ok(TapeCamera::new(
            tape,
            &self.base_cameras[view],
            [p[0], p[1], p[2]],
            [p[3], p[4], p[5]],
        ))
    }

    pub fn to_checkpoint(&self, adam: &crate::autodiff::AdamState) -> Result<Checkpoint> {
        let spec = serde_json::to_value(self.spec())
            .map_err(|e| Error::json(std::path::Path::new("<model>"), e))?;
        Ok(Checkpoint::new(&self.params, adam, spec))
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_value(c.networks.clone()).map_err(|e| {
            Error::InvalidConfig(format!(
                "checkpoint does not describe a reconstruction model: {e}"
            ))
        })?;
        let mut model = Self::new(&spec.model, spec.cameras, 0)?;
        let params = c.params()?;
        if params.segments != model.params.segments {
            return Err(Error::ShapeMismatch(
                "checkpoint segments do not match its network shapes".into(),
            ));
        }
        model.params = params;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::AdamState;
    use crate::sdf::DistanceField;

    fn cam() -> Camera {
        Camera::look_at(
            Vec3::new(0.0, 0.0, -3.0),
            Vec3::zeros(),
            -Vec3::y(),
            40.0,
            40.0,
            16.0,
            16.0,
            32,
            32,
        )
        .unwrap()
    }

    #[test]
    fn layout_and_checkpoint_round_trip() {
        let model = ReconModel::new(&ModelConfig::default(), vec![cam(), cam()], 3).unwrap();
        let segs: Vec<&str> = model
            .params
            .segments
            .iter()
            .map(|s| s.name.as_str())
            .collect();
        assert_eq!(
            segs,
            [
                SDF_SEGMENT,
                RENDER_SEGMENT,
                SEMANTIC_SEGMENT,
                CAMERA_SEGMENT
            ]
        );
        assert_eq!(model.params.slice(CAMERA_SEGMENT).unwrap().len(), 12);
        let f = model.field(&model.params.values);
        assert!(f.eval(&Vec3::zeros()) < -0.2);
        assert!(f.eval(&Vec3::new(0.0, 0.0, 1.5)) > 0.5);
        let c = model
            .to_checkpoint(&AdamState::new(model.params.len()))
            .unwrap();
        let back = ReconModel::from_checkpoint(&c).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn camera_corrections() {
        let mut model = ReconModel::new(&ModelConfig::default(), vec![cam()], 0).unwrap();
        let values = model.params.values.clone();
        assert_eq!(model.camera(&values, 0).unwrap(), cam());
        assert!(matches!(
            model.camera(&values, 1),
            Err(Error::ViewOutOfRange { .. })
        ));
        let o = model.offset(CAMERA_SEGMENT);
        model.params.values[o + 1] = 0.01;
        model.params.values[o + 5] = 0.02;
        let values = model.params.values.clone();
        let expect = cam().perturbed(&Vec3::new(0.0, 0.01, 0.0), &Vec3::new(0.0, 0.0, 0.02));
        assert_eq!(model.camera(&values, 0).unwrap(), expect);
        let mut tape = Tape::with_params(&values);
        let tc = model.tape_camera(&mut tape, 0).unwrap();
        assert!((tc.camera().rotation - expect.rotation).abs().max() < 1e-15);
    }
}

use serde::{Deserialize, Serialize};

use crate::autodiff::{Head, MlpConfig};
use crate::error::{Error, Result};
use crate::sdf::SdfNetConfig;
use crate::tracer::TracerConfig;

/// Weights of the six loss terms, the orientation-stage overrides and the
/// mask sharpness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub rgb: f64,
    pub mask: f64,
    pub eikonal: f64,
    pub proxy: f64,
    pub semantic: f64,
    pub orientation: f64,
    /// `w_rgb` once the orientation term is active.
    pub stage3_rgb: f64,
    /// `w_e` once the orientation term is active.
    pub stage3_eikonal: f64,
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rgb: 1.0,
            mask: 100.0,
            eikonal: 0.1,
            proxy: 1.0,
            semantic: 0.05,
            orientation: 1.0,
            stage3_rgb: 100.0,
            stage3_eikonal: 10.0,
            alpha: 50.0,
        }
    }
}

/// Multipliers applied to the six terms in one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TermWeights {
    pub rgb: f64,
    pub mask: f64,
    pub eikonal: f64,
    pub proxy: f64,
    pub semantic: f64,
    pub orientation: f64,
}

impl TermWeights {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.rgb,
            self.mask,
            self.eikonal,
            self.proxy,
            self.semantic,
            self.orientation,
        ]
    }

    pub fn from_array(w: [f64; 6]) -> Self {
        let [rgb, mask, eikonal, proxy, semantic, orientation] = w;
        Self {
            rgb,
            mask,
            eikonal,
            proxy,
            semantic,
            orientation,
        }
    }
}

/// Terms enabled regardless of the schedule. Disabled terms stay at zero weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TermSwitches {
    pub proxy: bool,
    pub semantic: bool,
    pub orientation: bool,
}

impl Default for TermSwitches {
    fn default() -> Self {
        Self {
            proxy: true,
            semantic: true,
            orientation: true,
        }
    }
}

impl TermSwitches {
    pub fn base_only() -> Self {
        Self {
            proxy: false,
            semantic: false,
            orientation: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.rgb,
            self.mask,
            self.eikonal,
            self.proxy,
            self.semantic,
            self.orientation,
            self.stage3_rgb,
            self.stage3_eikonal,
        ];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidConfig(
                "mask sharpness must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Weights in effect during `stage`. Inactive terms get exactly 0.
    pub fn for_stage(&self, stage: Stage, switches: &TermSwitches) -> TermWeights {
        let n = stage.number();
        let on = |active: bool, w: f64| if active { w } else { 0.0 };
        TermWeights {
            rgb: if n >= 3 { self.stage3_rgb } else { self.rgb },
            mask: self.mask,
            eikonal: if n >= 3 {
                self.stage3_eikonal
            } else {
                self.eikonal
            },
            proxy: on(switches.proxy, self.proxy),
            semantic: on(switches.semantic && n >= 2, self.semantic),
            orientation: on(switches.orientation && n >= 3, self.orientation),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    /// Base terms and the proxy prior.
    Proxy,
    /// Adds the semantic term.
    Semantic,
    /// Adds the orientation term and the weight overrides.
    Orientation,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::Proxy => 1,
            Stage::Semantic => 2,
            Stage::Orientation => 3,
        }
    }
}

/// Epoch count and the first epochs of stages 2 and 3.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSchedule {
    pub epochs: usize,
    pub boundaries: [usize; 2],
}

impl Default for StageSchedule {
    fn default() -> Self {
        Self::thirds(300)
    }
}

impl StageSchedule {
    pub fn thirds(epochs: usize) -> Self {
        Self {
            epochs,
            boundaries: [epochs / 3, 2 * epochs / 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [a, b] = self.boundaries;
        if !(a < b && b <= self.epochs) {
            return Err(Error::InvalidConfig(format!(
                "stage boundaries {a}, {b} must increase strictly and lie within {} epochs",
                self.epochs
            )));
        }
        Ok(())
    }

    pub fn stage(&self, epoch: usize) -> Stage {
        if epoch >= self.boundaries[1] {
            Stage::Orientation
        } else if epoch >= self.boundaries[0] {
            Stage::Semantic
        } else {
            Stage::Proxy
        }
    }
}

/// Rays per batch from the head mask and from the hair mask. The same number
/// of outside-mask rays as head rays is added for the mask term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RayCounts {
    pub head: usize,
    pub hair: usize,
}

impl Default for RayCounts {
    fn default() -> Self {
        Self {
            head: 256,
            hair: 256,
        }
    }
}

/// Shapes of the distance, appearance and semantic networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub sdf: SdfNetConfig,
    pub render_width: usize,
    pub render_layers: usize,
    pub semantic_width: usize,
    pub semantic_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            sdf: SdfNetConfig {
                hidden_width: 32,
                hidden_layers: 3,
                skip_layers: vec![],
                feature_dim: 8,
                softplus_beta: 100.0,
                init_radius: 0.5,
            },
            render_width: 32,
            render_layers: 2,
            semantic_width: 16,
            semantic_layers: 1,
        }
    }
}

impl ModelConfig {
    pub fn render_mlp(&self) -> MlpConfig {
        MlpConfig {
            input_dim: 9 + self.sdf.feature_dim,
            output_dim: 3,
            hidden_width: self.render_width,
            hidden_layers: self.render_layers,
            skip_layers: vec![],
            softplus_beta: 1.0,
            head: Head::Sigmoid,
        }
    }

    pub fn semantic_mlp(&self) -> MlpConfig {
        MlpConfig {
            input_dim: 3,
            output_dim: 6,
            hidden_width: self.semantic_width,
            hidden_layers: self.semantic_layers,
            skip_layers: vec![],
            softplus_beta: 1.0,
            head: Head::Softmax,
        }
    }
}

/// Everything `train` needs besides the scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub schedule: StageSchedule,
    pub switches: TermSwitches,
    pub rays: RayCounts,
    pub proxy_samples: usize,
    pub eikonal_samples: usize,
    pub lr: f64,
    pub camera_lr: f64,
    /// Learning-rate factor reached at the last epoch; the rate decays
    /// exponentially towards it.
    pub lr_decay: f64,
    pub optimize_cameras: bool,
    /// Restart the optimizer moments when the stage changes, so the weight
    /// overrides do not meet second-moment estimates of the old loss scale.
    pub reset_optimizer_per_stage: bool,
    pub seed: u64,
    pub deterministic: bool,
    /// Checkpoint period in epochs; 0 keeps only the final state.
    pub checkpoint_every: usize,
    pub model: ModelConfig,
    pub tracer: TracerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            schedule: StageSchedule::default(),
            switches: TermSwitches::default(),
            rays: RayCounts::default(),
            proxy_samples: 256,
            eikonal_samples: 256,
            lr: 5e-3,
            camera_lr: 1e-4,
            lr_decay: 0.1,
            optimize_cameras: true,
            reset_optimizer_per_stage: true,
            seed: 0,
            deterministic: false,
            checkpoint_every: 0,
            model: ModelConfig::default(),
            tracer: TracerConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Network learning rate at `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let span = self.schedule.epochs.saturating_sub(1).max(1) as f64;
        self.lr
            * self
                .lr_decay
                .powf(epoch.min(self.schedule.epochs) as f64 / span)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.schedule.validate()?;
        self.tracer.validate()?;
        if !(self.lr > 0.0 && self.camera_lr >= 0.0) {
            return Err(Error::InvalidConfig(
                "learning rates must be positive".into(),
            ));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidConfig("lr_decay must lie in (0, 1]".into()));
        }
        if self.rays.head == 0 {
            return Err(Error::InvalidConfig(
                "at least one head ray per batch is required".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_thirds_and_overrides() {
        let s = StageSchedule::thirds(300);
        assert_eq!(s.boundaries, [100, 200]);
        assert_eq!(s.stage(0), Stage::Proxy);
        assert_eq!(s.stage(99), Stage::Proxy);
        assert_eq!(s.stage(100), Stage::Semantic);
        assert_eq!(s.stage(200), Stage::Orientation);
        assert_eq!(s.stage(299), Stage::Orientation);
        let w = LossWeights::default();
        let on = TermSwitches::default();
        let s1 = w.for_stage(Stage::Proxy, &on);
        assert_eq!(s1.as_array(), [1.0, 100.0, 0.1, 1.0, 0.0, 0.0]);
        let s2 = w.for_stage(Stage::Semantic, &on);
        assert_eq!(s2.as_array(), [1.0, 100.0, 0.1, 1.0, 0.05, 0.0]);
        let s3 = w.for_stage(Stage::Orientation, &on);
        assert_eq!(s3.as_array(), [100.0, 100.0, 10.0, 1.0, 0.05, 1.0]);
        let base = w.for_stage(Stage::Orientation, &TermSwitches::base_only());
        assert_eq!(base.as_array(), [100.0, 100.0, 10.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn invalid_configs() {
        let mut s = StageSchedule::thirds(300);
        s.boundaries = [200, 200];
        assert!(s.validate().is_err());
        s.boundaries = [10, 400];
        assert!(s.validate().is_err());
        let w = LossWeights {
            semantic: -1.0,
            ..Default::default()
        };
        assert!(w.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let c = TrainConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        let back: TrainConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let partial: TrainConfig = serde_json::from_str(
            r#"{"lr": 0.01, "schedule": {"epochs": 9, "boundaries": [3, 6]}}"#,
        )
        .unwrap();
        assert_eq!(partial.lr, 0.01);
        assert_eq!(partial.schedule.epochs, 9);
        assert_eq!(partial.rays, RayCounts::default());
    }

    #[test]
    fn lr_decays_geometrically_to_the_last_epoch() {
        let c = TrainConfig {
            schedule: StageSchedule::thirds(11),
            lr: 1e-3,
            lr_decay: 0.1,
            ..Default::default()
        };
        assert_eq!(c.lr_at(0), 1e-3);
        assert!((c.lr_at(10) - 1e-4).abs() < 1e-15);
        assert!((c.lr_at(5) - 1e-3 * 0.1f64.sqrt()).abs() < 1e-15);
        assert!((1..11).all(|e| c.lr_at(e) < c.lr_at(e - 1)));
        let bad = TrainConfig {
            lr_decay: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}

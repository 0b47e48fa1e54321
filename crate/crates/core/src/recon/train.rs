use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::batch::{mix_seed, sample_rays, Scene};
use super::config::{RayCounts, Stage, TrainConfig};
use super::loss::{total_loss, LossPoints, TERM_NAMES};
use super::model::{ReconModel, CAMERA_SEGMENT};
use crate::autodiff::AdamState;
use crate::error::{Error, Result};
use crate::face_proxy::sample_proxy_points;
use crate::geometry::Vec3;

const RAY_STREAM: u64 = 1;
const EIKONAL_STREAM: u64 = 2;
const PROXY_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: Stage,
    /// Per-view means of the unweighted terms.
    pub terms: [f64; 6],
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossHistory {
    pub records: Vec<EpochRecord>,
}

impl LossHistory {
    pub fn to_csv(&self) -> String {
        let mut s = format!("epoch,stage,{},total\n", TERM_NAMES.join(","));
        for r in &self.records {
            write!(s, "{},{}", r.epoch, r.stage.number()).unwrap();
            for t in r.terms {
                write!(s, ",{t:e}").unwrap();
            }
            writeln!(s, ",{:e}", r.total).unwrap();
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Optimizer state for one training run, advanced an epoch at a time.
#[derive(Clone, Debug)]
pub struct Trainer<'a> {
    pub scene: &'a Scene,
    pub config: TrainConfig,
    pub model: ReconModel,
    pub adam: AdamState,
    pub history: LossHistory,
    pub next_epoch: usize,
}

impl<'a> Trainer<'a> {
    /// Fresh networks; camera corrections start at zero around the scene's cameras.
    pub fn new(scene: &'a Scene, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        scene.validate()?;
        if config.switches.proxy && config.weights.proxy > 0.0 && scene.proxy.is_none() {
            return Err(Error::InvalidConfig(
                "proxy term is enabled but the scene has no proxy mesh".into(),
            ));
        }
        let cameras = scene.views.iter().map(|v| v.camera.clone()).collect();
        let model = ReconModel::new(&config.model, cameras, config.seed)?;
        let adam = AdamState::with_lr(model.params.len(), config.lr);
        Ok(Self {
            scene,
            config,
            model,
            adam,
            history: LossHistory::default(),
            next_epoch: 0,
        })
    }

    fn eikonal_points(&self, epoch: usize, view: usize) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
            self.config.seed ^ EIKONAL_STREAM,
            epoch as u64,
            view as u64,
        ));
        let [lo, hi] = self.scene.bounds;
        (0..self.config.eikonal_samples)
            .map(|_| Vec3::from_fn(|i, _| rng.random_range(lo[i]..hi[i])))
            .collect()
    }

    /// One optimizer step per view, in view order.
    pub fn step_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.next_epoch;
        let cfg = &self.config;
        let stage = cfg.schedule.stage(epoch);
        if cfg.reset_optimizer_per_stage && epoch > 0 && cfg.schedule.stage(epoch - 1) != stage {
            self.adam.reset_moments();
        }
        self.adam.lr = cfg.lr_at(epoch);
        let weights = cfg.weights.for_stage(stage, &cfg.switches);
        let proxy = match (&self.scene.proxy, weights.proxy > 0.0) {
            (Some(mesh), true) => sample_proxy_points(
                mesh,
                cfg.proxy_samples,
                mix_seed(cfg.seed ^ PROXY_STREAM, epoch as u64, 0),
            ),
            _ => Vec::new(),
        };
        let cam = self
            .model
            .params
            .segment(CAMERA_SEGMENT)
            .expect("model segment")
            .range();
        let cam_scale = if cfg.optimize_cameras {
            cfg.camera_lr / cfg.lr
        } else {
            0.0
        };
        let n_views = self.scene.views.len();
        let mut terms = [0.0; 6];
        let mut total = 0.0;
        for view in 0..n_views {
            let hair_available = self.scene.views[view].hair_mask.count();
            let counts = RayCounts {
                head: cfg.rays.head,
                hair: cfg.rays.hair.min(hair_available),
            };
            let batch = sample_rays(
                self.scene,
                view,
                counts,
                mix_seed(cfg.seed ^ RAY_STREAM, epoch as u64, view as u64),
            )?;
            let eikonal = self.eikonal_points(epoch, view);
            let points = LossPoints {
                proxy: &proxy,
                eikonal: &eikonal,
            };
            let out = total_loss(
                &self.model,
                &self.model.params.values,
                &batch,
                points,
                &weights,
                cfg.weights.alpha,
                &cfg.tracer,
            )
            .map_err(|e| match e {
                Error::NonFiniteLoss { value } => Error::DivergedLoss { epoch, value },
                e => e,
            })?;
            if out.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::DivergedLoss {
                    epoch,
                    value: out.total,
                });
            }
            let scale = |i: usize| if cam.contains(&i) { cam_scale } else { 1.0 };
            self.adam
                .step_scaled(&mut self.model.params.values, &out.grad, scale)?;
            for k in 0..6 {
                terms[k] += out.terms[k] / n_views as f64;
            }
            total += out.total / n_views as f64;
        }
        let record = EpochRecord {
            epoch,
            stage,
            terms,
            total,
        };
        log::debug!("epoch {epoch} stage {} total {total:.6e}", stage.number());
        self.history.records.push(record.clone());
        self.next_epoch += 1;
        Ok(record)
    }

    /// Runs epochs until `end` (exclusive), writing periodic checkpoints into `dir`.
    pub fn run_until(&mut self, end: usize, dir: Option<&Path>) -> Result<()> {
        while self.next_epoch < end {
            self.step_epoch()?;
            let every = self.config.checkpoint_every;
            if let (Some(d), true) = (dir, every > 0 && self.next_epoch % every == 0) {
                self.save_checkpoint(&d.join(format!("checkpoint_{:05}.json", self.next_epoch)))?;
            }
        }
        Ok(())
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        self.model.to_checkpoint(&self.adam)?.save(path)
    }
}

pub struct TrainOutput {
    pub model: ReconModel,
    pub adam: AdamState,
    pub history: LossHistory,
    /// Final checkpoint and loss CSV, when an output directory was given.
    pub files: Option<(PathBuf, PathBuf)>,
}

pub const FINAL_CHECKPOINT: &str = "checkpoint_final.json";
pub const HISTORY_FILE: &str = "loss_history.csv";

/// Full staged run. With `out_dir`, writes periodic checkpoints, the final
/// checkpoint and the loss history there.
pub fn train(scene: &Scene, config: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutput> {
    let mut t = Trainer::new(scene, config.clone())?;
    if let Some(d) = out_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    t.run_until(config.schedule.epochs, out_dir)?;
    let files = match out_dir {
        Some(d) => {
            let (c, h) = (d.join(FINAL_CHECKPOINT), d.join(HISTORY_FILE));
            t.save_checkpoint(&c)?;
            t.history.write_csv(&h)?;
            Some((c, h))
        }
        None => None,
    };
    Ok(TrainOutput {
        model: t.model,
        adam: t.adam,
        history: t.history,
        files,
    })
}

//! Subcommands of the `headsdf` tool. Each `cmd_*` function takes its
//! parsed arguments, writes its artifacts and the effective configuration
//! (`config.json`) into the output directory, and returns a summary.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{de::DeserializeOwned, Serialize};

use headsdf::autodiff::Checkpoint;
use headsdf::face_proxy::{
    fit_proxy, synthetic_model, LinearMorphableModel, ProxyFitConfig, ProxyFitResult, ProxyView,
};
use headsdf::geometry::{Camera, Vec3};
use headsdf::hair::{detect_orientation, orientation_hsv, GaborBank};
use headsdf::mesh_io::{
    export_obj, generate_synthetic_scene, import_obj, load_orientation, load_scene, marching_cubes,
    sample_grid, save_gray, save_mask, save_orientation, save_rgb, LoadedScene, SceneConfig,
    SceneShape,
};
use headsdf::recon::{
    check_terms, gradcheck_model, gradcheck_scene, render_view, train, GradcheckSettings,
    ReconModel, Scene, TermCheck, TrainConfig,
};
use headsdf::tracer::TracerConfig;
use headsdf::{Error, Result};

/// Name of the effective-configuration file written into output directories.
pub const CONFIG_ECHO: &str = "config.json";

/// Flags shared by every subcommand.
#[derive(Args, Clone, Debug, Default, Serialize)]
pub struct Common {
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Single worker thread and fixed reduction order.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Worker threads (default: available cores; 1 with --deterministic).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

impl Common {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Thread count the command should run with.
    pub fn thread_count(&self) -> usize {
        match (self.deterministic, self.threads) {
            (true, _) => 1,
            (false, Some(n)) => n.max(1),
            (false, None) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

/// Runs `f` on a dedicated pool sized by `common`.
pub fn with_threads<T: Send>(common: &Common, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.thread_count())
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker threads: {e}")))?;
    pool.install(f)
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        })
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    require(path)?;
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Built-in defaults, replaced by the config file when one is given.
fn base_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

#[derive(Serialize)]
struct Echo<'a, A: Serialize, C: Serialize> {
    command: &'a str,
    args: &'a A,
    common: &'a Common,
    config: &'a C,
}

fn echo<A: Serialize, C: Serialize>(
    dir: &Path,
    command: &str,
    args: &A,
    common: &Common,
    config: &C,
) -> Result<()> {
    write_json(
        &dir.join(CONFIG_ECHO),
        &Echo {
            command,
            args,
            common,
            config,
        },
    )
}

fn view_name(i: usize) -> String {
    format!("view_{i:03}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeArg {
    Head,
    UnitSphere,
}

impl From<ShapeArg> for SceneShape {
    fn from(s: ShapeArg) -> Self {
        match s {
            ShapeArg::Head => SceneShape::Head,
            ShapeArg::UnitSphere => SceneShape::UnitSphere,
        }
    }
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct GenSyntheticArgs {
    /// Output scene directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Scene configuration JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub shape: Option<ShapeArg>,
    #[arg(long)]
    pub views: Option<usize>,
    /// Square image size in pixels.
    #[arg(long)]
    pub size: Option<u32>,
}

pub fn cmd_gen_synthetic(args: &GenSyntheticArgs, common: &Common) -> Result<SceneConfig> {
    let mut cfg: SceneConfig = base_config(args.config.as_deref())?;
    if let Some(s) = args.shape {
        cfg.shape = s.into();
    }
    if let Some(n) = args.views {
        cfg.n_views = n;
    }
    if let Some(s) = args.size {
        cfg.width = s;
        cfg.height = s;
    }
    cfg.validate()?;
    with_threads(common, || {
        generate_synthetic_scene(&cfg, common.seed(), &args.out)
    })?;
    echo(&args.out, "gen-synthetic", args, common, &cfg)?;
    Ok(cfg)
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct FitProxyArgs {
    /// Scene directory written by gen-synthetic (or laid out the same way).
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Proxy fit configuration JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Morphable model JSON (default: the built-in synthetic model).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
}

pub const PROXY_MESH: &str = "proxy.obj";
pub const PROXY_CAMERAS: &str = "cameras.json";
pub const PROXY_REPORT: &str = "report.json";

#[derive(Clone, Debug, Serialize)]
pub struct ProxyReport {
    pub views: Vec<usize>,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub fit: ProxyFitResult,
}

/// Fits the morphable model to every view that has landmarks. The fit
/// starts from the scene cameras, so the proxy mesh is in scene coordinates.
pub fn cmd_fit_proxy(args: &FitProxyArgs, common: &Common) -> Result<ProxyReport> {
    require(&args.scene)?;
    let mut cfg: ProxyFitConfig = base_config(args.config.as_deref())?;
    if let Some(n) = args.max_iterations {
        cfg.max_iterations = n;
    }
    let model: LinearMorphableModel = match &args.model {
        Some(p) => {
            require(p)?;
            LinearMorphableModel::load(p)?
        }
        None => synthetic_model(common.seed()),
    };
    let scene = load_scene(&args.scene)?;
    let used: Vec<usize> = (0..scene.views.len())
        .filter(|&i| !scene.landmarks[i].is_empty())
        .collect();
    if used.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no view of {} has landmarks",
            args.scene.join(&scene.manifest.landmarks).display()
        )));
    }
    let views: Vec<ProxyView> = used
        .iter()
        .map(|&i| ProxyView {
            image: scene.views[i].image.clone(),
            face_mask: scene.views[i].face_mask(),
            landmarks: scene.landmarks[i].clone(),
        })
        .collect();
    let cams: Vec<Camera> = used
        .iter()
        .map(|&i| scene.views[i].camera.clone())
        .collect();
    let fit = with_threads(common, || fit_proxy(&model, &views, &cams, &cfg))?;
    create_dir(&args.out)?;
    let vertices = headsdf::face_proxy::model_geometry(&model, &fit.coeffs)?;
    export_obj(&model.mesh(vertices), &args.out.join(PROXY_MESH))?;
    write_json(&args.out.join(PROXY_CAMERAS), &fit.cameras)?;
    let report = ProxyReport {
        views: used,
        initial_energy: fit.trace.first().copied().unwrap_or(fit.energy),
        final_energy: fit.energy,
        fit,
    };
    write_json(&args.out.join(PROXY_REPORT), &report)?;
    echo(&args.out, "fit-proxy", args, common, &cfg)?;
    Ok(report)
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct Orient2dArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Gabor bank JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Writes `view_NNN.ori` and `view_NNN_hsv.png` per view; returns the
/// number of pixels with a detected orientation per view.
pub fn cmd_orient2d(args: &Orient2dArgs, common: &Common) -> Result<Vec<usize>> {
    require(&args.scene)?;
    let bank: GaborBank = base_config(args.config.as_deref())?;
    bank.validate()?;
    let scene = load_scene(&args.scene)?;
    create_dir(&args.out)?;
    let maps = with_threads(common, || {
        scene
            .views
            .iter()
            .map(|v| detect_orientation(&v.image.to_gray(), &v.hair_mask, &bank))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut counts = Vec::with_capacity(maps.len());
    for (i, map) in maps.iter().enumerate() {
        save_orientation(&args.out.join(format!("{}.ori", view_name(i))), &map.dirs)?;
        save_rgb(
            &args.out.join(format!("{}_hsv.png", view_name(i))),
            &orientation_hsv(&map.dirs),
        )?;
        counts.push(
            map.dirs
                .data
                .iter()
                .filter(|d| d[0] != 0.0 || d[1] != 0.0)
                .count(),
        );
    }
    echo(&args.out, "orient2d", args, common, &bank)?;
    Ok(counts)
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Training configuration JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Proxy mesh (OBJ, scene coordinates) for the face prior.
    #[arg(long)]
    pub proxy: Option<PathBuf>,
    /// Directory of `view_NNN.ori` maps replacing the scene's own.
    #[arg(long)]
    pub orientation: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Half extent of the cube holding the surface.
    #[arg(long, default_value_t = 1.5)]
    pub bound: f64,
    #[arg(long)]
    pub no_proxy: bool,
    #[arg(long)]
    pub no_semantic: bool,
    #[arg(long)]
    pub no_orientation: bool,
}

/// Effective training configuration: flags over file over defaults.
pub fn train_config(args: &TrainArgs, common: &Common) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = base_config(args.config.as_deref())?;
    if let Some(e) = args.epochs {
        cfg.schedule = headsdf::recon::StageSchedule::thirds(e);
    }
    if let Some(lr) = args.lr {
        cfg.lr = lr;
    }
    if let Some(n) = args.checkpoint_every {
        cfg.checkpoint_every = n;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.deterministic |= common.deterministic;
    cfg.switches.proxy &= !args.no_proxy;
    cfg.switches.semantic &= !args.no_semantic;
    cfg.switches.orientation &= !args.no_orientation;
    cfg.validate()?;
    Ok(cfg)
}

fn training_scene(args: &TrainArgs, loaded: LoadedScene) -> Result<Scene> {
    let mut views = loaded.views;
    if let Some(dir) = &args.orientation {
        require(dir)?;
        for (i, v) in views.iter_mut().enumerate() {
            let map = load_orientation(&dir.join(format!("{}.ori", view_name(i))))?;
            v.image.size_check(&map, "orientation map")?;
            v.orientation = map;
        }
    }
    let proxy = match &args.proxy {
        Some(p) => {
            require(p)?;
            Some(import_obj(p)?)
        }
        None => None,
    };
    if !(args.bound > 0.0) {
        return Err(Error::InvalidConfig("bound must be positive".into()));
    }
    Scene::new(
        views,
        proxy,
        [Vec3::repeat(-args.bound), Vec3::repeat(args.bound)],
    )
}

/// Returns the paths of the final checkpoint and the loss history.
pub fn cmd_train(args: &TrainArgs, common: &Common) -> Result<(PathBuf, PathBuf)> {
    require(&args.scene)?;
    let cfg = train_config(args, common)?;
    let scene = training_scene(args, load_scene(&args.scene)?)?;
    create_dir(&args.out)?;
    echo(&args.out, "train", args, common, &cfg)?;
    let out = with_threads(common, || train(&scene, &cfg, Some(&args.out)))?;
    let last = out.history.records.last().map_or(f64::NAN, |r| r.total);
    log::info!(
        "trained {} epochs, final loss {last:.6e}",
        out.history.records.len()
    );
    Ok(out.files.expect("output directory was given"))
}

fn load_model(path: &Path) -> Result<ReconModel> {
    require(path)?;
    ReconModel::from_checkpoint(&Checkpoint::load(path)?)
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct ExtractArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output OBJ path.
    #[arg(long)]
    pub out: PathBuf,
    /// Grid samples per axis.
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    #[arg(long, default_value_t = 1.5)]
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExtractReport {
    pub vertices: usize,
    pub triangles: usize,
}

/// An empty zero level set is written as an empty OBJ and reported with a warning.
pub fn cmd_extract(args: &ExtractArgs, common: &Common) -> Result<ExtractReport> {
    let model = load_model(&args.checkpoint)?;
    if args.resolution < 2 || !(args.bound > 0.0) {
        return Err(Error::InvalidConfig(
            "resolution must be at least 2 and bound positive".into(),
        ));
    }
    let sdf = model.neural_sdf();
    let (lo, hi) = (Vec3::repeat(-args.bound), Vec3::repeat(args.bound));
    let mesh = with_threads(common, || {
        let grid = sample_grid(&sdf.view(), lo, hi, [args.resolution; 3])?;
        Ok(marching_cubes(&grid))
    })?;
    if mesh.is_empty() {
        log::warn!("the zero level set does not cross the grid; writing an empty mesh");
    }
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    export_obj(&mesh, &args.out)?;
    Ok(ExtractReport {
        vertices: mesh.vertices.len(),
        triangles: mesh.triangles.len(),
    })
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory for `render.png`, `depth.png` and `hit.png`.
    #[arg(long)]
    pub out: PathBuf,
    /// Camera index.
    #[arg(long, default_value_t = 0)]
    pub view: usize,
    /// Camera list JSON (default: the refined cameras stored in the checkpoint).
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    /// Tracer configuration JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub const RENDER_FILES: [&str; 3] = ["render.png", "depth.png", "hit.png"];

pub fn cmd_render(args: &RenderArgs, common: &Common) -> Result<[PathBuf; 3]> {
    let model = load_model(&args.checkpoint)?;
    let tracer: TracerConfig = base_config(args.config.as_deref())?;
    tracer.validate()?;
    let values = &model.params.values;
    let camera = match &args.cameras {
        Some(p) => {
            let cams: Vec<Camera> = read_json(p)?;
            cams.get(args.view).cloned().ok_or(Error::ViewOutOfRange {
                view: args.view,
                count: cams.len(),
            })?
        }
        None => model.camera(values, args.view)?,
    };
    let view = with_threads(common, || render_view(&model, values, &camera, &tracer))?;
    create_dir(&args.out)?;
    let paths = RENDER_FILES.map(|f| args.out.join(f));
    save_rgb(&paths[0], &view.color)?;
    save_gray(&paths[1], &view.depth_display())?;
    save_mask(&paths[2], &view.hit)?;
    echo(&args.out, "render", args, common, &tracer)?;
    Ok(paths)
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct GradcheckArgs {
    /// Report JSON path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub settings: GradcheckSettings,
    pub terms: Vec<TermCheck>,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn lines(&self) -> Vec<String> {
        self.terms
            .iter()
            .map(|t| {
                format!(
                    "{:<12} max_rel_error {:.3e}  |grad|_inf {:.3e}  {}",
                    t.term,
                    t.max_rel_error,
                    t.grad_norm_inf,
                    if t.passed { "PASS" } else { "FAIL" }
                )
            })
            .collect()
    }
}

/// Checks every loss term on the tiny two-view scene. A failing term is
/// part of the report, not an error.
pub fn cmd_gradcheck(args: &GradcheckArgs, common: &Common) -> Result<GradcheckReport> {
    let mut settings = GradcheckSettings {
        seed: common.seed(),
        ..Default::default()
    };
    if let Some(t) = args.tolerance {
        settings.tolerance = t;
    }
    let terms = with_threads(common, || {
        let scene = gradcheck_scene(&settings)?;
        let model = gradcheck_model(&scene, settings.seed)?;
        check_terms(&model, &scene, &settings)
    })?;
    let passed = terms.iter().all(|t| t.passed);
    let report = GradcheckReport {
        settings,
        terms,
        passed,
    };
    if let Some(p) = &args.out {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            create_dir(dir)?;
        }
        write_json(p, &report)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_forces_one_thread() {
        let c = Common {
            seed: None,
            deterministic: true,
            threads: Some(8),
        };
        assert_eq!(c.thread_count(), 1);
        let c = Common {
            threads: Some(3),
            ..Default::default()
        };
        assert_eq!(c.thread_count(), 3);
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.json");
        std::fs::write(&path, r#"{"lr": 0.01, "seed": 5, "proxy_samples": 64}"#).unwrap();
        let args = TrainArgs {
            scene: dir.path().into(),
            out: dir.path().into(),
            config: Some(path),
            proxy: None,
            orientation: None,
            epochs: Some(30),
            lr: Some(0.002),
            checkpoint_every: None,
            bound: 1.5,
            no_proxy: true,
            no_semantic: false,
            no_orientation: false,
        };
        let cfg = train_config(&args, &Common::default()).unwrap();
        assert_eq!(cfg.lr, 0.002);
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.proxy_samples, 64);
        assert_eq!(cfg.schedule.boundaries, [10, 20]);
        assert!(!cfg.switches.proxy && cfg.switches.semantic);
        let seeded = Common {
            seed: Some(9),
            ..Default::default()
        };
        assert_eq!(train_config(&args, &seeded).unwrap().seed, 9);
    }

    #[test]
    fn missing_config_names_the_path() {
        let err =
            base_config::<TrainConfig>(Some(Path::new("/nonexistent/train.json"))).unwrap_err();
        assert_eq!(err.code(), "IO_ERROR");
        assert!(err.to_string().contains("/nonexistent/train.json"));
    }
}

use std::path::{Path, PathBuf};

use nalgebra::{Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::env::{procedural_env, EnvKind};
use super::shape::{gen_shape, ShapeParams};
use super::tracer::{path_trace_reference, silhouette_mask, TraceConfig};
use crate::geom::io::{
    load_env_map, load_image, load_json, load_mask_png, load_mesh, save_env_map, save_image, save_json,
    save_mask_png, save_mesh,
};
use crate::geom::{AccelIndex, Camera, EnvironmentMap, ImageBuffer, MaskBuffer, TriangleMesh, Vec3};
use crate::hull::hull_normal_maps;
use crate::optics::NormalMapPair;
use crate::{Error, Result};

pub const DEFAULT_IOR: f64 = 1.4723;
pub const IOR_RANGE: (f64, f64) = (1.3, 1.7);

/// Reference normals: the hull tracing procedure run on the true surface.
pub fn gt_normal_maps(mesh: &AccelIndex, camera: &Camera, ior: f64) -> Result<NormalMapPair> {
    hull_normal_maps(mesh, camera, ior)
}

/// `n` near-uniform unit directions on a Fibonacci spiral.
pub fn fibonacci_directions(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden * i as f64;
            Vec3::new(r * a.cos(), r * a.sin(), z)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraRig {
    pub width: usize,
    pub height: usize,
    pub fov_x_deg: f64,
    /// Camera distance as a multiple of the object radius.
    pub distance_factor: f64,
    /// Largest random tilt applied to each camera orientation.
    pub jitter_deg: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        CameraRig {
            width: 128,
            height: 128,
            fov_x_deg: 60.0,
            distance_factor: 2.5,
            jitter_deg: 3.0,
        }
    }
}

/// Cameras on Fibonacci directions around `center`, looking at it, each
/// tilted by a random rotation of at most `jitter_deg`.
pub fn fibonacci_cameras(views: usize, center: &Vec3, radius: f64, rig: &CameraRig, seed: u64) -> Result<Vec<Camera>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fibonacci_directions(views)
        .into_iter()
        .map(|d| {
            let eye = center + d * radius * rig.distance_factor;
            let up = if d.z.abs() > 0.9 { Vec3::x() } else { Vec3::z() };
            let mut cam = Camera::look_at(eye, *center, up, rig.width, rig.height, rig.fov_x_deg)?;
            if rig.jitter_deg > 0.0 {
                let axis = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let angle = rng.random_range(0.0..rig.jitter_deg).to_radians();
                if let Some(axis) = Unit::try_new(axis, 1e-6) {
                    cam.rotation = Rotation3::from_axis_angle(&axis, angle).into_inner() * cam.rotation;
                }
            }
            Ok(cam)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EnvSource {
    Procedural { seed: u64, kind: EnvKind, height: usize },
    File { path: PathBuf },
}

impl Default for EnvSource {
    fn default() -> Self {
        EnvSource::Procedural {
            seed: 0,
            kind: EnvKind::Smooth,
            height: 128,
        }
    }
}

impl EnvSource {
    pub fn load(&self) -> Result<EnvironmentMap> {
        match self {
            EnvSource::Procedural { seed, kind, height } => procedural_env(*seed, *kind, *height),
            EnvSource::File { path } => load_env_map(path),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub seeds: Vec<u64>,
    pub views: usize,
    pub ior: f64,
    /// Draw each scene's IoR uniformly from [1.3, 1.7] instead.
    pub random_ior: bool,
    pub env: EnvSource,
    pub rig: CameraRig,
    pub shape: ShapeParams,
    pub trace: TraceConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seeds: vec![0],
            views: 10,
            ior: DEFAULT_IOR,
            random_ior: false,
            env: EnvSource::default(),
            rig: CameraRig::default(),
            shape: ShapeParams::default(),
            trace: TraceConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub camera: Camera,
    pub image: String,
    pub mask: String,
    pub n1: String,
    pub n2: String,
}

/// `manifest.json` of one scene bundle; paths are relative to the bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub mesh: String,
    pub ior: f64,
    pub env: String,
    pub views: Vec<ViewEntry>,
}

pub const MANIFEST: &str = "manifest.json";

/// Centers the mesh on its bounding-box center and scales it to unit radius.
pub fn normalize_mesh(mesh: &TriangleMesh) -> Result<TriangleMesh> {
    let c = mesh.bounds().center();
    let r = mesh.positions.iter().map(|p| (p - c).norm()).fold(0.0, f64::max);
    if !(r > 0.0) {
        return Err(Error::Degenerate("mesh has zero extent".into()));
    }
    let positions = mesh.positions.iter().map(|p| (p - c) / r).collect();
    TriangleMesh::new(positions, mesh.indices.clone())
}

fn scene_ior(cfg: &DatasetConfig, seed: u64) -> f64 {
    if cfg.random_ior {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1A0F_5EED);
        rng.random_range(IOR_RANGE.0..=IOR_RANGE.1)
    } else {
        cfg.ior
    }
}

/// Writes one bundle per seed under `out/scene_<seed>` and returns their paths.
pub fn make_dataset(cfg: &DatasetConfig, out: &Path) -> Result<Vec<PathBuf>> {
    if cfg.views == 0 {
        return Err(Error::Argument("dataset needs at least one view".into()));
    }
    let env = cfg.env.load()?;
    cfg.seeds
        .iter()
        .map(|&seed| {
            let dir = out.join(format!("scene_{seed:04}"));
            write_scene(cfg, seed, &env, &dir)?;
            Ok(dir)
        })
        .collect()
}

fn write_scene(cfg: &DatasetConfig, seed: u64, env: &EnvironmentMap, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mesh = normalize_mesh(&gen_shape(seed, &cfg.shape)?)?;
    let ior = scene_ior(cfg, seed);
    let index = AccelIndex::build(&mesh);
    let cameras = fibonacci_cameras(cfg.views, &Vec3::zeros(), 1.0, &cfg.rig, seed)?;
    save_mesh(&dir.join("mesh.ply"), &mesh)?;
    save_env_map(&dir.join("env.pfm"), env)?;
    let trace = TraceConfig {
        seed: cfg.trace.seed ^ seed,
        ..cfg.trace
    };
    let mut views = Vec::with_capacity(cameras.len());
    for (v, cam) in cameras.iter().enumerate() {
        let prefix = format!("view_{v:02}");
        let image = path_trace_reference(&index, env, cam, ior, &trace)?;
        let mask = silhouette_mask(&index, cam);
        if mask.count() == 0 {
            return Err(Error::Degenerate(format!("scene {seed}: view {v} does not see the object")));
        }
        let normals = gt_normal_maps(&index, cam, ior)?;
        save_image(&dir.join(format!("{prefix}_image.pfm")), &image)?;
        save_mask_png(&dir.join(format!("{prefix}_mask.png")), &mask)?;
        normals.save(dir, &prefix)?;
        views.push(ViewEntry {
            camera: cam.clone(),
            image: format!("{prefix}_image.pfm"),
            mask: format!("{prefix}_mask.png"),
            n1: format!("{prefix}_n1.pfm"),
            n2: format!("{prefix}_n2.pfm"),
        });
    }
    let manifest = SceneManifest {
        mesh: "mesh.ply".into(),
        ior,
        env: "env.pfm".into(),
        views,
    };
    save_json(&dir.join(MANIFEST), &manifest)
}

/// One view of a loaded bundle.
#[derive(Clone, Debug)]
pub struct SceneView {
    pub camera: Camera,
    pub image: ImageBuffer,
    pub mask: MaskBuffer,
    /// Reference normals, when the bundle ships them.
    pub normals: Option<NormalMapPair>,
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub dir: PathBuf,
    pub manifest: SceneManifest,
    pub mesh: Option<TriangleMesh>,
    pub env: EnvironmentMap,
    pub views: Vec<SceneView>,
}

impl Scene {
    pub fn load(dir: &Path) -> Result<Scene> {
        let manifest: SceneManifest = load_json(&dir.join(MANIFEST))?;
        let env = load_env_map(&dir.join(&manifest.env))?;
        let mesh_path = dir.join(&manifest.mesh);
        let mesh = if mesh_path.exists() {
            Some(load_mesh(&mesh_path)?)
        } else {
            None
        };
        let views = manifest
            .views
            .iter()
            .map(|v| {
                let image = load_image(&dir.join(&v.image))?;
                let mask = load_mask_png(&dir.join(&v.mask))?;
                if (image.width, image.height) != (v.camera.width, v.camera.height)
                    || (mask.width, mask.height) != (v.camera.width, v.camera.height)
                {
                    return Err(Error::Argument(format!("{}: image or mask size differs from camera", v.image)));
                }
                let prefix = v.n1.strip_suffix("_n1.pfm");
                let normals = match prefix {
                    Some(p) if dir.join(&v.n1).exists() && dir.join(&v.n2).exists() => {
                        Some(NormalMapPair::load(dir, p)?)
                    }
                    _ => None,
                };
                Ok(SceneView {
                    camera: v.camera.clone(),
                    image,
                    mask,
                    normals,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Scene {
            dir: dir.to_path_buf(),
            manifest,
            mesh,
            env,
            views,
        })
    }

    pub fn cameras(&self) -> Vec<Camera> {
        self.views.iter().map(|v| v.camera.clone()).collect()
    }

    pub fn masks(&self) -> Vec<MaskBuffer> {
        self.views.iter().map(|v| v.mask.clone()).collect()
    }
}

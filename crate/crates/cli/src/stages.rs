//! Pipeline stages, their on-disk layout and up-to-date bookkeeping.
//!
//! Every stage owns `<out>/<stage>/` and records a `stage.json` with the
//! hash of the configuration it used and SHA-256 digests of every input and
//! output file. A stage is fresh when all three still match.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use log::{info, warn};
use refracta::costvol::{angle_schedule_for_views, search_normals};
use refracta::fuse::{map_features, sample_hull_points, OrientedPointCloud, ViewMaps};
use refracta::geom::io::{load_json, load_mesh, save_image, save_json, save_mesh, save_png_srgb};
use refracta::geom::{AccelIndex, TriangleMesh};
use refracta::hull::{carve, hull_normal_maps, loop_subdivide, marching_cubes};
use refracta::metrics::{config_hash, emit_report, mesh_metrics, pooled_normal_error_stats, Report};
use refracta::optics::{error_map, render_layer, NormalMapPair};
use refracta::refine::{refine_normals, write_trace_csv};
use refracta::surface::{deform_vertices, loss_chamfer, loss_nearest, loss_view, poisson_reconstruct, LossWeights, SurfaceMaps};
use refracta::synth::{make_dataset, path_trace_reference, Scene, MANIFEST};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{Config, ConfigError, ReconstructMethod};

pub const STAGE_MANIFEST: &str = "stage.json";
pub const RUN_RECORD: &str = "run.json";
pub const FINAL_MESH: &str = "mesh.ply";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Gen,
    Carve,
    TraceNormals,
    Search,
    Refine,
    Fuse,
    Reconstruct,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Gen,
        Stage::Carve,
        Stage::TraceNormals,
        Stage::Search,
        Stage::Refine,
        Stage::Fuse,
        Stage::Reconstruct,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::Carve => "carve",
            Stage::TraceNormals => "trace-normals",
            Stage::Search => "search",
            Stage::Refine => "refine",
            Stage::Fuse => "fuse",
            Stage::Reconstruct => "reconstruct",
            Stage::Eval => "eval",
        }
    }

    /// Stage directories read by this stage (the scene bundle aside).
    fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Gen | Stage::Carve => &[],
            Stage::TraceNormals => &[Stage::Carve],
            Stage::Search => &[Stage::TraceNormals],
            Stage::Refine => &[Stage::Search],
            Stage::Fuse => &[Stage::Carve, Stage::Refine],
            Stage::Reconstruct => &[Stage::Carve, Stage::Fuse],
            Stage::Eval => &[
                Stage::Carve,
                Stage::TraceNormals,
                Stage::Search,
                Stage::Refine,
                Stage::Fuse,
                Stage::Reconstruct,
            ],
        }
    }

    fn reads_scene(self) -> bool {
        !matches!(self, Stage::Gen | Stage::Reconstruct)
    }
}

/// Contents of `stage.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: Stage,
    pub tool_version: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seconds: f64,
}

/// Outcome of one stage in a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRun {
    pub stage: Stage,
    pub executed: bool,
    pub seconds: f64,
}

/// Contents of `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub tool_version: String,
    pub library_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub stages: Vec<StageRun>,
    pub total_seconds: f64,
}

/// A configured output directory.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub out: PathBuf,
    pub cfg: Config,
}

fn view_prefix(v: usize) -> String {
    format!("view_{v:02}")
}

fn write_err(path: &Path) -> impl FnOnce(std::io::Error) -> anyhow::Error + '_ {
    move |e| anyhow::Error::new(refracta::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).map_err(write_err(path))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(write_err(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Regular files under `dir`, sorted, skipping stage manifests.
fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(write_err(&d))? {
            let path = entry.map_err(write_err(&d))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != STAGE_MANIFEST) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

impl Workspace {
    pub fn new(out: impl Into<PathBuf>, cfg: Config) -> Self {
        Workspace { out: out.into(), cfg }
    }

    pub fn stage_dir(&self, s: Stage) -> PathBuf {
        self.out.join(s.name())
    }

    pub fn final_mesh(&self) -> PathBuf {
        self.stage_dir(Stage::Reconstruct).join(FINAL_MESH)
    }

    /// Whether the pipeline has to synthesize its scene.
    pub fn generates(&self) -> bool {
        self.cfg.scene.is_none()
    }

    /// The configured bundle, or the single generated one.
    pub fn scene_dir(&self) -> Result<PathBuf, ConfigError> {
        if let Some(s) = &self.cfg.scene {
            return Ok(s.clone());
        }
        match self.cfg.dataset.seeds.as_slice() {
            [seed] => Ok(self.stage_dir(Stage::Gen).join(format!("scene_{seed:04}"))),
            s => Err(ConfigError::new(
                "dataset.seeds",
                format!("the pipeline runs on one scene, got {} seeds", s.len()),
            )),
        }
    }

    fn load_scene(&self) -> Result<Scene> {
        let dir = self.scene_dir()?;
        Scene::load(&dir).with_context(|| format!("loading scene {}", dir.display()))
    }

    fn stage_config_hash(&self, s: Stage) -> Result<String> {
        let c = &self.cfg;
        let v = match s {
            Stage::Gen => json!({ "dataset": c.dataset }),
            Stage::Carve => json!({ "hull": c.hull }),
            Stage::TraceNormals => json!({ "ior": c.ior }),
            Stage::Search => json!({ "ior": c.ior, "search": c.search }),
            Stage::Refine => json!({ "ior": c.ior, "refine": c.refine }),
            Stage::Fuse => json!({ "ior": c.ior, "seed": c.seed, "fuse": c.fuse }),
            Stage::Reconstruct => json!({ "reconstruct": c.reconstruct }),
            Stage::Eval => json!({ "ior": c.ior, "seed": c.seed, "eval": c.eval }),
        };
        Ok(config_hash(&json!({ "stage": s, "config": v }))?)
    }

    fn key(&self, path: &Path) -> String {
        path.strip_prefix(&self.out)
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_else(|_| path.to_string_lossy().into_owned())
    }

    fn input_hashes(&self, s: Stage) -> Result<BTreeMap<String, String>> {
        let mut dirs: Vec<PathBuf> = s.upstream().iter().map(|&u| self.stage_dir(u)).collect();
        if s.reads_scene() {
            dirs.push(self.scene_dir()?);
        }
        let mut out = BTreeMap::new();
        for d in dirs {
            for f in files_under(&d).with_context(|| format!("inputs of {}", s.name()))? {
                out.insert(self.key(&f), sha256_file(&f)?);
            }
        }
        Ok(out)
    }

    fn output_hashes(&self, s: Stage) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for f in files_under(&self.stage_dir(s))? {
            out.insert(self.key(&f), sha256_file(&f)?);
        }
        Ok(out)
    }

    /// True when `stage.json` matches the current config, inputs and outputs.
    pub fn is_fresh(&self, s: Stage) -> bool {
        let check = || -> Result<bool> {
            let m: StageManifest = load_json(&self.stage_dir(s).join(STAGE_MANIFEST))?;
            Ok(m.config_hash == self.stage_config_hash(s)?
                && m.inputs == self.input_hashes(s)?
                && m.outputs == self.output_hashes(s)?)
        };
        check().unwrap_or(false)
    }

    /// Runs one stage from scratch and records its manifest.
    pub fn run_stage(&self, s: Stage) -> Result<StageRun> {
        let dir = self.stage_dir(s);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(write_err(&dir))?;
        }
        fs::create_dir_all(&dir).map_err(write_err(&dir))?;
        info!("running {}", s.name());
        let t = Instant::now();
        match s {
            Stage::Gen => self.gen(&dir),
            Stage::Carve => self.carve(&dir),
            Stage::TraceNormals => self.trace_normals(&dir),
            Stage::Search => self.search(&dir),
            Stage::Refine => self.refine(&dir),
            Stage::Fuse => self.fuse(&dir),
            Stage::Reconstruct => self.reconstruct(&dir),
            Stage::Eval => self.eval(&dir),
        }
        .with_context(|| format!("stage {}", s.name()))?;
        let seconds = t.elapsed().as_secs_f64();
        let manifest = StageManifest {
            stage: s,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: self.stage_config_hash(s)?,
            inputs: self.input_hashes(s)?,
            outputs: self.output_hashes(s)?,
            seconds,
        };
        save_json(&dir.join(STAGE_MANIFEST), &manifest)?;
        Ok(StageRun {
            stage: s,
            executed: true,
            seconds,
        })
    }

    /// Runs every stage in order, skipping fresh ones until the first stage
    /// that has to run; everything downstream of it runs too.
    pub fn run_pipeline(&self, force: bool) -> Result<Vec<StageRun>> {
        self.cfg.validate(self.generates())?;
        self.scene_dir()?;
        let mut dirty = force;
        let mut runs = Vec::new();
        for s in Stage::ALL {
            if s == Stage::Gen && !self.generates() {
                continue;
            }
            if !dirty && self.is_fresh(s) {
                info!("{} is up to date", s.name());
                runs.push(StageRun {
                    stage: s,
                    executed: false,
                    seconds: 0.0,
                });
                continue;
            }
            dirty = true;
            runs.push(self.run_stage(s)?);
        }
        Ok(runs)
    }

    /// Writes `run.json` into the output directory.
    pub fn write_run_record(&self, command: &str, stages: Vec<StageRun>, total_seconds: f64) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(write_err(&self.out))?;
        let record = RunRecord {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            library_version: refracta::VERSION.into(),
            config_hash: config_hash(&self.cfg)?,
            seed: self.cfg.seed,
            threads: self.cfg.threads,
            stages,
            total_seconds,
        };
        save_json(&self.out.join(RUN_RECORD), &record)?;
        Ok(())
    }

    fn gen(&self, dir: &Path) -> Result<()> {
        let scenes = make_dataset(&self.cfg.dataset, dir)?;
        info!("generated {} scene(s)", scenes.len());
        Ok(())
    }

    fn hull_mesh(&self) -> Result<TriangleMesh> {
        Ok(load_mesh(&self.stage_dir(Stage::Carve).join("hull.ply"))?)
    }

    fn load_maps(&self, s: Stage, views: usize) -> Result<Vec<NormalMapPair>> {
        let dir = self.stage_dir(s);
        (0..views)
            .map(|v| {
                NormalMapPair::load(&dir, &view_prefix(v))
                    .with_context(|| format!("{} normals of view {v}", s.name()))
            })
            .collect()
    }

    fn carve(&self, dir: &Path) -> Result<()> {
        let scene = self.load_scene()?;
        let h = &self.cfg.hull;
        let vol = carve(&scene.masks(), &scene.cameras(), h.resolution, None)?;
        let mesh = loop_subdivide(&marching_cubes(&vol, h.smooth)?, h.subdivisions)?;
        save_mesh(&dir.join("hull.ply"), &mesh)?;
        let b = vol.bounds;
        save_json(
            &dir.join("volume.json"),
            &json!({
                "resolution": h.resolution,
                "occupied": vol.count(),
                "volume": vol.volume(),
                "bounds": [[b.min.x, b.min.y, b.min.z], [b.max.x, b.max.y, b.max.z]],
                "triangles": mesh.num_triangles(),
            }),
        )?;
        Ok(())
    }

    fn trace_normals(&self, dir: &Path) -> Result<()> {
        let scene: refracta::synth::SceneManifest = load_json(&self.scene_dir()?.join(MANIFEST))?;
        let index = AccelIndex::build(&self.hull_mesh()?);
        for (v, view) in scene.views.iter().enumerate() {
            hull_normal_maps(&index, &view.camera, self.cfg.ior)?.save(dir, &view_prefix(v))?;
        }
        Ok(())
    }

    fn search(&self, dir: &Path) -> Result<()> {
        let scene = self.load_scene()?;
        let hull = self.load_maps(Stage::TraceNormals, scene.views.len())?;
        let schedule = angle_schedule_for_views(scene.views.len(), self.cfg.search.k, None)?;
        for (v, (view, hn)) in scene.views.iter().zip(&hull).enumerate() {
            let s = search_normals(&view.image, &scene.env, hn, &view.camera, self.cfg.ior, &schedule, &self.cfg.search)?;
            s.normals.save(dir, &view_prefix(v))?;
        }
        Ok(())
    }

    fn refine(&self, dir: &Path) -> Result<()> {
        let scene = self.load_scene()?;
        let init = self.load_maps(Stage::Search, scene.views.len())?;
        for (v, (view, n)) in scene.views.iter().zip(&init).enumerate() {
            let r = refine_normals(&view.image, &scene.env, n, &view.camera, self.cfg.ior, &self.cfg.refine)?;
            if let Some(msg) = &r.diverged {
                warn!("view {v}: {msg}");
            }
            info!(
                "view {v}: render loss {:.4} -> {:.4}",
                r.initial_render_loss, r.final_render_loss
            );
            r.normals.save(dir, &view_prefix(v))?;
            write_trace_csv(&dir.join(format!("{}_trace.csv", view_prefix(v))), &r.trace)?;
        }
        Ok(())
    }

    fn fuse(&self, dir: &Path) -> Result<()> {
        let scene = self.load_scene()?;
        let refined = self.load_maps(Stage::Refine, scene.views.len())?;
        let hull = self.hull_mesh()?;
        let index = AccelIndex::build(&hull);
        let maps = scene
            .views
            .iter()
            .zip(&refined)
            .map(|(view, n)| ViewMaps::from_prediction(&view.image, &scene.env, n, &view.camera, self.cfg.ior))
            .collect::<refracta::Result<Vec<_>>>()?;
        let cloud = sample_hull_points(&hull, self.cfg.fuse.points, self.cfg.seed)?;
        let fused = map_features(self.cfg.fuse.strategy, &cloud, &index, &maps);
        fused.save_ply(&dir.join("fused.ply"))?;
        Ok(())
    }

    fn reconstruct(&self, dir: &Path) -> Result<()> {
        let cloud = OrientedPointCloud::load_ply(&self.stage_dir(Stage::Fuse).join("fused.ply"))?;
        let r = &self.cfg.reconstruct;
        let mesh = match r.method {
            ReconstructMethod::Poisson => poisson_reconstruct(&cloud.points, &cloud.normals, &r.poisson)?,
            ReconstructMethod::Deform => deform_vertices(&self.hull_mesh()?, &cloud, &r.deform)?.mesh,
        };
        save_mesh(&dir.join(FINAL_MESH), &mesh)?;
        Ok(())
    }

    fn eval(&self, dir: &Path) -> Result<()> {
        let scene = self.load_scene()?;
        let n = self.cfg.eval.samples;
        let seed = self.cfg.seed;
        let mut report = Report::new(config_hash(&self.cfg)?, vec![seed]);
        let hull = self.hull_mesh()?;
        let fin = load_mesh(&self.final_mesh())?;
        if let Some(gt) = &scene.mesh {
            report.meshes.insert("hull".into(), mesh_metrics(&hull, gt, n, seed)?);
            report.meshes.insert("final".into(), mesh_metrics(&fin, gt, n, seed)?);

            let index = AccelIndex::build(gt);
            let cloud = OrientedPointCloud::load_ply(&self.stage_dir(Stage::Fuse).join("fused.ply"))?;
            let w = LossWeights::default();
            let maps: Vec<SurfaceMaps> = scene.views.iter().map(|v| SurfaceMaps::trace(&index, &v.camera)).collect();
            let gt_cloud = sample_hull_points(gt, cloud.len(), seed)?;
            let per_point = |x: f64| x / cloud.len() as f64;
            report.losses.insert(
                "nearest".into(),
                per_point(loss_nearest(&cloud.points, &cloud.normals, &index, &w)?),
            );
            report.losses.insert(
                "view".into(),
                per_point(loss_view(&cloud.points, &cloud.normals, &cloud.view, &maps, &index, &w)?),
            );
            report.losses.insert(
                "chamfer".into(),
                per_point(loss_chamfer(
                    &cloud.points,
                    &cloud.normals,
                    &gt_cloud.points,
                    &gt_cloud.normals,
                    &w,
                )?),
            );
        }
        let gts: Option<Vec<&NormalMapPair>> = scene.views.iter().map(|v| v.normals.as_ref()).collect();
        if let Some(gts) = gts {
            for (name, stage) in [
                ("hull", Stage::TraceNormals),
                ("search", Stage::Search),
                ("refined", Stage::Refine),
            ] {
                let pred = self.load_maps(stage, scene.views.len())?;
                let errors = scene
                    .views
                    .iter()
                    .zip(&pred)
                    .map(|(v, p)| {
                        let r = render_layer(&scene.env, p, &v.camera, self.cfg.ior)?;
                        error_map(&v.image, &r, &v.mask)
                    })
                    .collect::<refracta::Result<Vec<_>>>()?;
                let err_refs: Vec<_> = errors.iter().collect();
                let pairs: Vec<_> = pred.iter().zip(gts.iter().copied()).collect();
                report
                    .normals
                    .insert(name.into(), pooled_normal_error_stats(&pairs, Some(&err_refs))?);
            }
        }
        emit_report(&report, dir)?;
        Ok(())
    }

    /// Renders every view from one stage's normal maps (or from the
    /// reference normals, or with the reference path tracer) into
    /// `<out>/render/<source>/`.
    pub fn render(&self, source: RenderSource) -> Result<PathBuf> {
        let scene = self.load_scene()?;
        let dir = self.out.join("render").join(source.name());
        fs::create_dir_all(&dir).map_err(write_err(&dir))?;
        let true_ior = scene.manifest.ior;
        let index = match source {
            RenderSource::Reference => {
                let gt = scene
                    .mesh
                    .as_ref()
                    .ok_or_else(|| anyhow::anyhow!("reference rendering needs the scene mesh"))?;
                Some(AccelIndex::build(gt))
            }
            _ => None,
        };
        for (v, view) in scene.views.iter().enumerate() {
            let image = match (source, &index) {
                (RenderSource::Reference, Some(index)) => {
                    path_trace_reference(index, &scene.env, &view.camera, true_ior, &self.cfg.dataset.trace)?
                }
                (RenderSource::Truth, _) => {
                    let n = view
                        .normals
                        .as_ref()
                        .ok_or_else(|| anyhow::anyhow!("view {v} has no reference normals"))?;
                    render_layer(&scene.env, n, &view.camera, true_ior)?.combined()
                }
                (RenderSource::Stage(s), _) => {
                    let n = NormalMapPair::load(&self.stage_dir(s), &view_prefix(v))?;
                    render_layer(&scene.env, &n, &view.camera, self.cfg.ior)?.combined()
                }
                _ => unreachable!(),
            };
            save_image(&dir.join(format!("{}.pfm", view_prefix(v))), &image)?;
            save_png_srgb(&dir.join(format!("{}.png", view_prefix(v))), &image)?;
        }
        Ok(dir)
    }
}

/// What `render` draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderSource {
    /// Normal maps of a stage (`trace-normals`, `search` or `refine`).
    Stage(Stage),
    /// The bundle's reference normals through the rendering layer.
    Truth,
    /// The reference path tracer on the bundle mesh.
    Reference,
}

impl RenderSource {
    pub fn name(self) -> &'static str {
        match self {
            RenderSource::Stage(s) => s.name(),
            RenderSource::Truth => "truth",
            RenderSource::Reference => "reference",
        }
    }
}

impl std::str::FromStr for RenderSource {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "hull" | "trace-normals" => Ok(RenderSource::Stage(Stage::TraceNormals)),
            "search" => Ok(RenderSource::Stage(Stage::Search)),
            "refine" | "refined" => Ok(RenderSource::Stage(Stage::Refine)),
            "truth" => Ok(RenderSource::Truth),
            "reference" => Ok(RenderSource::Reference),
            _ => Err(ConfigError::new(
                "render.source",
                format!("unknown source {s:?} (hull, search, refine, truth, reference)"),
            )),
        }
    }
}

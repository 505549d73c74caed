//! Synthetic scenes, reference normals and a brute-force path tracer.

mod dataset;
mod env;
mod shape;
mod tracer;

pub use self::dataset::{
    fibonacci_cameras, fibonacci_directions, gt_normal_maps, make_dataset, normalize_mesh, CameraRig, DatasetConfig,
    EnvSource, Scene, SceneManifest, SceneView, ViewEntry, DEFAULT_IOR, IOR_RANGE, MANIFEST,
};
pub use self::env::{procedural_env, EnvKind};
pub use self::shape::{gen_shape, random_primitives, smooth_min, union_sdf, Primitive, ShapeParams};
pub use self::tracer::{path_trace_reference, silhouette_mask, AnalyticSphere, TraceConfig, FULL_BRANCH_LIMIT};

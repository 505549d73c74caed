use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use refracta_cli::stages::{RunRecord, FINAL_MESH};

const SMALL: &str = r#"
seed = 3
[dataset]
seeds = [3]
views = 6
[dataset.rig]
width = 40
height = 40
[dataset.shape]
resolution = 40
[hull]
resolution = 40
[refine]
phase1_iters = 10
phase2_iters = 10
[fuse]
points = 2000
[reconstruct.poisson]
resolution = 40
[eval]
samples = 2000
"#;

fn refracta(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refracta"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("REFRACTA_THREADS")
        .output()
        .expect("failed to launch refracta")
}

fn setup(extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, format!("{SMALL}{extra}")).unwrap();
    (dir, cfg)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn executed(out: &Path) -> Vec<(String, bool)> {
    let r: RunRecord = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    r.stages
        .iter()
        .map(|s| (s.stage.name().to_string(), s.executed))
        .collect()
}

#[test]
fn pipeline_produces_mesh_and_valid_report() {
    let (dir, _) = setup("");
    let o = refracta(&["pipeline", "--config", "run.toml", "--out", "out"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    assert!(out.join("reconstruct").join(FINAL_MESH).is_file());
    let text = fs::read_to_string(out.join("eval/metrics.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    let schema: serde_json::Value = serde_json::from_str(refracta::metrics::REPORT_SCHEMA).unwrap();
    assert!(jsonschema::is_valid(&schema, &report));
    for mesh in ["hull", "final"] {
        assert!(report["meshes"][mesh]["cd"].as_f64().unwrap() > 0.0);
    }
    for stage in ["hull", "search", "refined"] {
        assert!(report["normals"][stage]["n1"]["median_deg"].is_number());
    }
    for stage in ["gen", "carve", "trace-normals", "search", "refine", "fuse", "reconstruct", "eval"] {
        assert!(out.join(stage).join("stage.json").is_file(), "{stage}");
    }
    let record = executed(&out);
    assert_eq!(record.len(), 8);
    assert!(record.iter().all(|(_, e)| *e));
}

#[test]
fn resumed_run_reexecutes_only_downstream_of_the_deleted_mesh() {
    let (dir, _) = setup("");
    let args = ["pipeline", "--config", "run.toml", "--out", "out"];
    assert!(refracta(&args, dir.path()).status.success());
    let out = dir.path().join("out");
    let mesh = out.join("reconstruct").join(FINAL_MESH);
    let before = fs::read(&mesh).unwrap();
    fs::remove_file(&mesh).unwrap();

    let o = refracta(&args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let ran: Vec<String> = executed(&out).into_iter().filter(|(_, e)| *e).map(|(s, _)| s).collect();
    assert_eq!(ran, ["reconstruct", "eval"]);
    assert_eq!(fs::read(&mesh).unwrap(), before);

    assert!(refracta(&args, dir.path()).status.success());
    assert!(executed(&out).iter().all(|(_, e)| !e));
}

#[test]
fn config_change_invalidates_from_the_affected_stage() {
    let (dir, _) = setup("");
    let args = ["pipeline", "--config", "run.toml", "--out", "out"];
    assert!(refracta(&args, dir.path()).status.success());
    fs::write(dir.path().join("run.toml"), format!("{SMALL}\n[search]\nK = 3\n")).unwrap();
    assert!(refracta(&args, dir.path()).status.success());
    let ran: Vec<String> = executed(&dir.path().join("out"))
        .into_iter()
        .filter(|(_, e)| *e)
        .map(|(s, _)| s)
        .collect();
    assert_eq!(ran, ["search", "refine", "fuse", "reconstruct", "eval"]);
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let (dir, _) = setup("");
    for (t, out) in [("1", "a"), ("3", "b")] {
        let o = refracta(&["pipeline", "--config", "run.toml", "--out", out, "--threads", t], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["reconstruct/mesh.ply", "fuse/fused.ply", "refine/view_02_n2.pfm", "eval/metrics.json"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn missing_env_map_exits_two_naming_the_key() {
    let (dir, _) = setup("[dataset.env]\ntype = \"file\"\npath = \"nowhere/env.pfm\"\n");
    let o = refracta(&["pipeline", "--config", "run.toml", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("kind=config") && err.contains("key=dataset.env.path"), "{err}");
}

#[test]
fn bad_values_and_unknown_keys_exit_two() {
    let (dir, _) = setup("");
    fs::write(dir.path().join("typo.json"), r#"{"hull": {"resolutoin": 64}}"#).unwrap();
    let o = refracta(&["carve", "--config", "typo.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("resolutoin"));

    let o = refracta(&["pipeline", "--config", "run.toml", "--ior", "0.9"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("key=ior"));
}

#[test]
fn missing_inputs_exit_three() {
    let (dir, _) = setup("");
    let o = refracta(&["search", "--config", "run.toml", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error kind=data code=3"));
}

#[test]
fn solver_failure_exits_four() {
    let (dir, _) = setup("[reconstruct.poisson]\nmax_iterations = 1\ntolerance = 1e-14\n");
    let text = fs::read_to_string(dir.path().join("run.toml")).unwrap();
    // the extra table repeats [reconstruct.poisson]; merge it into the first
    let merged = text
        .replacen("[reconstruct.poisson]\nresolution = 40\n", "", 1)
        .replace("max_iterations = 1", "resolution = 40\nmax_iterations = 1");
    fs::write(dir.path().join("run.toml"), merged).unwrap();
    let o = refracta(&["pipeline", "--config", "run.toml", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("kind=numerical"));
}

#[test]
fn individual_subcommands_chain() {
    let (dir, _) = setup("");
    let run = |args: &[&str]| {
        let mut full = args.to_vec();
        full.extend(["--config", "run.toml", "--out", "out"]);
        let o = refracta(&full, dir.path());
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    };
    run(&["gen"]);
    run(&["carve"]);
    run(&["trace-normals"]);
    run(&["search"]);
    run(&["refine"]);
    run(&["fuse", "--strategy", "avg"]);
    run(&["reconstruct", "--method", "deform"]);
    run(&["eval"]);
    run(&["render", "--source", "truth"]);
    let out = dir.path().join("out");
    assert!(out.join("render/truth/view_00.png").is_file());
    let cloud = refracta::fuse::OrientedPointCloud::load_ply(&out.join("fuse/fused.ply")).unwrap();
    assert!(cloud.view.iter().all(|&v| v == 0), "avg fusion records no view");
    let hull = refracta::geom::io::load_mesh(&out.join("carve/hull.ply")).unwrap();
    let fin = refracta::geom::io::load_mesh(&out.join("reconstruct/mesh.ply")).unwrap();
    assert_eq!(hull.indices, fin.indices, "deformation keeps the hull connectivity");
}

#[test]
fn gen_ior_flag_sets_the_generated_ior() {
    let (dir, _) = setup("");
    let o = refracta(&["gen", "--config", "run.toml", "--out", "out", "--ior", "1.6"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/gen/scene_0003/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["ior"].as_f64(), Some(1.6));
}

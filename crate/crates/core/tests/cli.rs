use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spacetime_assembly::cli::{render_gantt, PlanFile};
use spacetime_assembly::geometry::{Aabb, Pose2};
use spacetime_assembly::orchestrator::PlannerConfig;
use spacetime_assembly::world::{Config, ObjectSpec, RobotSpec, Scene, GROUND};
use tempfile::TempDir;

fn stasm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stasm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn block(id: &str, start: (f64, f64), goal: (f64, f64)) -> ObjectSpec {
    ObjectSpec {
        id: id.into(),
        width: 0.2,
        height: 0.2,
        start_pose: Pose2::new(start.0, start.1, 0.0),
        goal_pose: Pose2::new(goal.0, goal.1, 0.0),
        grasp_sites: vec![[0.1, 0.0], [-0.1, 0.0], [0.0, 0.1], [0.0, -0.1]],
    }
}

fn robot(id: &str, x: f64, region: Aabb) -> RobotSpec {
    RobotSpec {
        id: id.into(),
        base_radius: 0.15,
        gripper_offset: 0.3,
        v_max: 1.0,
        omega_max: 2.0,
        operating_region: region,
        home_config: Config::new(x, -1.0, std::f64::consts::FRAC_PI_2),
    }
}

fn small_scene() -> Scene {
    let region = Aabb::new([-3.0, -2.0], [3.0, 3.0]);
    Scene::new(
        vec![block("a", (-1.5, 0.0), (0.0, 0.0)), block("b", (-1.5, 1.0), (0.0, 0.25))],
        vec![robot("r0", 0.0, region), robot("r1", 1.0, region)],
        vec![],
        vec![(GROUND.into(), "a".into()), ("a".into(), "b".into())],
    )
    .unwrap()
}

fn write_scene(dir: &Path, name: &str, scene: &Scene) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, scene.to_json_pretty()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Plans the small scene and returns (scene path, plan path).
fn planned(dir: &Path) -> (PathBuf, PathBuf) {
    let scene = write_scene(dir, "small.json", &small_scene());
    let plan = dir.join("plan.json");
    let o = stasm(&["plan", s(&scene), "--seed", "4", "-o", s(&plan)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (scene, plan)
}

#[test]
fn plan_then_verify_succeeds() {
    let dir = TempDir::new().unwrap();
    let (scene, plan) = planned(dir.path());
    let o = stasm(&["plan", s(&scene), "--seed", "4", "-o", s(&dir.path().join("again.json"))]);
    let out = String::from_utf8_lossy(&o.stdout);
    for col in ["keyframes", "path", "post", "total", "makespan"] {
        assert!(out.contains(col), "missing `{col}` in {out}");
    }
    let o = stasm(&["verify", s(&plan), s(&scene)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("findings 0"));
}

#[test]
fn repeated_runs_write_identical_files() {
    let dir = TempDir::new().unwrap();
    let (scene, first) = planned(dir.path());
    let second = dir.path().join("second.json");
    let o = stasm(&["plan", s(&scene), "--seed", "4", "-o", s(&second)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(first).unwrap(), fs::read(second).unwrap());
}

#[test]
fn plan_file_round_trips() {
    let dir = TempDir::new().unwrap();
    let (_, plan) = planned(dir.path());
    let text = fs::read_to_string(&plan).unwrap();
    let parsed = PlanFile::from_json_str(&text).unwrap();
    assert_eq!(parsed.to_json(), text);
    assert_eq!(parsed.placed, ["a", "b"]);
}

#[test]
fn unknown_key_is_an_input_error_with_location() {
    let dir = TempDir::new().unwrap();
    let (scene, plan) = planned(dir.path());
    let text = fs::read_to_string(&plan).unwrap().replacen("{", "{\n  \"colour\": 1,", 1);
    fs::write(&plan, text).unwrap();
    let o = stasm(&["verify", s(&plan), s(&scene)]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("colour") && err.contains("line 2"), "{err}");
}

#[test]
fn unknown_scene_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("bad.json");
    let text = small_scene().to_json_pretty().replacen("{", "{\n  \"gravity\": 9.8,", 1);
    fs::write(&p, text).unwrap();
    let o = stasm(&["plan", s(&p), "-o", s(&dir.path().join("x.json"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("gravity"));
}

#[test]
fn scene_hash_mismatch_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let (scene, plan) = planned(dir.path());
    let o = stasm(&["verify", s(&plan), s(&scene), "--agents", "1"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("hash"), "{}", stderr(&o));
}

#[test]
fn corrupted_knot_fails_verification() {
    let dir = TempDir::new().unwrap();
    let (scene, plan) = planned(dir.path());
    let mut file = PlanFile::load(&plan).unwrap();
    let path = file.paths.values_mut().find(|p| p.knots.len() > 2).unwrap();
    let k = path.knots.len() / 2;
    path.knots[k].q.x += 3.0;
    fs::write(&plan, file.to_json()).unwrap();
    let o = stasm(&["verify", s(&plan), s(&scene)]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("speed"));
}

#[test]
fn unreachable_goal_is_a_planner_failure() {
    let dir = TempDir::new().unwrap();
    let scene = Scene::new(
        vec![block("a", (-2.0, 0.0), (2.5, 0.0))],
        vec![robot("r0", -2.0, Aabb::new([-3.0, -2.0], [-1.0, 2.0]))],
        vec![],
        vec![(GROUND.into(), "a".into())],
    )
    .unwrap();
    let p = write_scene(dir.path(), "far.json", &scene);
    let o = stasm(&["plan", s(&p), "-o", s(&dir.path().join("x.json"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn bad_arguments_are_input_errors() {
    let dir = TempDir::new().unwrap();
    let (scene, plan) = planned(dir.path());
    assert_eq!(code(&stasm(&["verify", s(&plan), s(&scene), "--dt", "0"])), 1);
    assert_eq!(code(&stasm(&["plan", s(&scene), "--agents", "9"])), 1);
    assert_eq!(code(&stasm(&["plan", "/nonexistent/scene.json"])), 1);
    assert_eq!(code(&stasm(&["plan", s(&scene), "--lambda", "-1"])), 1);
    assert_eq!(code(&stasm(&["frobnicate"])), 1);
}

#[test]
fn frames_cover_the_makespan() {
    let dir = TempDir::new().unwrap();
    let (scene, plan) = planned(dir.path());
    let makespan = PlanFile::load(&plan).unwrap().makespan;
    let out = dir.path().join("frames");
    let o = stasm(&["render", s(&plan), s(&scene), "--mode", "frames", "--dt", "0.5", "-o", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let n = fs::read_dir(&out).unwrap().count();
    assert_eq!(n, (makespan / 0.5).ceil() as usize + 1);
    let last = fs::read_to_string(out.join(format!("frame_{:05}.svg", n - 1))).unwrap();
    assert!(last.contains(&format!("data-t=\"{makespan:.4}\"")));
}

#[test]
fn gantt_has_one_bar_per_event() {
    let dir = TempDir::new().unwrap();
    let (scene, plan) = planned(dir.path());
    let out = dir.path().join("g");
    assert_eq!(code(&stasm(&["render", s(&plan), s(&scene), "-o", s(&out)])), 0);
    let svg = fs::read_to_string(out.join("gantt.svg")).unwrap();
    let events: usize = PlanFile::load(&plan).unwrap().events.values().map(Vec::len).sum();
    assert_eq!(svg.matches("class=\"bar\"").count(), events);
    assert_eq!(svg.matches("class=\"row\"").count(), 2);
    assert!(!svg.contains("handover-link"));
}

#[test]
fn gantt_of_empty_plan_has_rows_only() {
    let scene = small_scene();
    let plan = PlanFile {
        scene_hash: scene.hash(),
        seed: 0,
        config: PlannerConfig::default(),
        makespan: 0.0,
        placed: vec![],
        backtracks: 0,
        paths: Default::default(),
        events: Default::default(),
    };
    let svg = render_gantt(&scene, &plan);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("class=\"row\"").count(), 2);
    assert_eq!(svg.matches("class=\"bar\"").count(), 0);
    assert!(!svg.contains("NaN"));
}

#[test]
fn handover_plan_links_both_rows() {
    let dir = TempDir::new().unwrap();
    let scenes = dir.path().join("scenes");
    assert_eq!(code(&stasm(&["generate", "handover", "-o", s(&scenes)])), 0);
    let scene = scenes.join("handover.json");
    let plan = dir.path().join("h.json");
    let o = stasm(&["plan", s(&scene), "-o", s(&plan)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("g");
    assert_eq!(code(&stasm(&["render", s(&plan), s(&scene), "-o", s(&out)])), 0);
    let svg = fs::read_to_string(out.join("gantt.svg")).unwrap();
    assert!(svg.contains("class=\"handover-link\" data-robots=\"r00 r01\""), "{svg}");
}

#[test]
fn generate_writes_loadable_scenes() {
    let dir = TempDir::new().unwrap();
    let o = stasm(&["generate", "-o", s(dir.path())]);
    assert_eq!(code(&o), 0);
    for (name, n) in [("tower", 15), ("wall", 36), ("well", 52), ("pavilion", 113), ("handover", 4)] {
        let scene = Scene::load(dir.path().join(format!("{name}.json"))).unwrap();
        assert_eq!(scene.objects.len(), n, "{name}");
    }
    assert_eq!(code(&stasm(&["generate", "castle", "-o", s(dir.path())])), 1);
}

#[test]
fn bundled_scene_files_match_generators() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes");
    for name in spacetime_assembly::scenes::all_names() {
        let file = Scene::load(root.join(format!("{name}.json"))).unwrap();
        let generated = spacetime_assembly::scenes::by_name(name).unwrap();
        assert_eq!(file.hash(), generated.hash(), "{name}.json is stale");
    }
}

#[test]
fn compare_appends_rows_under_one_header() {
    let dir = TempDir::new().unwrap();
    let scene = write_scene(dir.path(), "small.json", &small_scene());
    let csv = dir.path().join("out.csv");
    for _ in 0..2 {
        let o = stasm(&["compare", s(&scene), "--agents", "1,2", "--seeds", "0", "-o", s(&csv)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("scenario,m,seed,variant,makespan"));
    assert_eq!(lines.iter().filter(|l| l.starts_with("scenario")).count(), 1);
    assert!(lines[1..].iter().all(|l| l.ends_with(",ok")));
}

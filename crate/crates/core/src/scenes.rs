//! Procedural benchmark scenes.
//!
//! All scenes share one block type and one robot model. Robots are numbered
//! `r00`, `r01`, ... and every benchmark robot may roam the whole workspace,
//! so any prefix of the robot list is a valid team. The split-region scene is
//! the exception: its two robots have disjoint regions.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Pose2};
use crate::world::{Config, ObjectSpec, RobotSpec, Scene, GROUND};

pub const BLOCK: f64 = 0.2;
pub const ROBOT_COUNT: usize = 10;

/// Names of the scenes used in benchmarks, in size order.
pub const BENCHMARKS: [&str; 4] = ["tower", "wall", "well", "pavilion"];

fn block(id: String, start: Pose2, goal: Pose2) -> ObjectSpec {
    let h = BLOCK / 2.0;
    ObjectSpec {
        id,
        width: BLOCK,
        height: BLOCK,
        start_pose: start,
        goal_pose: goal,
        grasp_sites: vec![[h, 0.0], [-h, 0.0], [0.0, h], [0.0, -h]],
    }
}

fn robot(i: usize, home: Config, region: Aabb) -> RobotSpec {
    RobotSpec {
        id: format!("r{i:02}"),
        base_radius: 0.15,
        gripper_offset: 0.3,
        v_max: 1.0,
        omega_max: 2.0,
        operating_region: region,
        home_config: home,
    }
}

fn oid(i: usize) -> String {
    format!("o{i:03}")
}

fn edge(a: &str, b: &str) -> (String, String) {
    (a.to_owned(), b.to_owned())
}

/// Chain of 15 blocks in one column against a backing wall, so that only
/// one side of the tower is accessible. Each block rests on the one before it.
pub fn tower() -> Scene {
    let n = 15;
    let pitch = 0.25;
    let mut objects = Vec::new();
    let mut edges = vec![edge(GROUND, &oid(0))];
    for k in 0..n {
        let x = if k % 2 == 0 { -1.0 } else { -2.0 };
        let start = Pose2::new(x, 0.5 * (k / 2) as f64, 0.0);
        let goal = Pose2::new(0.0, pitch * k as f64, 0.0);
        objects.push(block(oid(k), start, goal));
        if k > 0 {
            edges.push(edge(&oid(k - 1), &oid(k)));
        }
    }
    let backing = Aabb::new([0.3, -0.3], [0.6, pitch * n as f64]);
    let region = Aabb::new([-3.5, -2.0], [0.0, 4.6]);
    let robots = (0..ROBOT_COUNT)
        .map(|i| robot(i, Config::new(-0.2 - 0.33 * i as f64, -1.3, TAU / 4.0), region))
        .collect();
    Scene::new(objects, robots, vec![backing], edges).expect("generated scene is valid")
}

/// Blocks on a grid with one supply spot directly behind every goal.
/// `rows` courses of `cols` columns; course 0 touches the ground.
fn grid(
    cols: usize,
    rows: usize,
    pitch_x: f64,
    skip: impl Fn(usize, usize) -> bool,
) -> (Vec<ObjectSpec>, Vec<(usize, usize)>) {
    let pitch = 1.0;
    let x0 = -0.5 * pitch_x * (cols - 1) as f64;
    let mut objects = Vec::new();
    let mut cells = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if skip(r, c) {
                continue;
            }
            let goal = Pose2::new(x0 + pitch_x * c as f64, pitch * r as f64, 0.0);
            let start = Pose2::new(goal.x, goal.y + 0.5 * pitch, 0.0);
            objects.push(block(oid(objects.len()), start, goal));
            cells.push((r, c));
        }
    }
    (objects, cells)
}

fn line_robots(xmin: f64, xmax: f64, y: f64, region: Aabb) -> Vec<RobotSpec> {
    (0..ROBOT_COUNT)
        .map(|i| {
            let x = xmin + (xmax - xmin) * i as f64 / (ROBOT_COUNT - 1) as f64;
            robot(i, Config::new(x, y, TAU / 4.0), region)
        })
        .collect()
}

/// Three courses of twelve blocks in stack bond: every block rests only on
/// the one below it.
pub fn wall() -> Scene {
    let (cols, rows) = (12, 3);
    let pitch_x = 1.5;
    let (objects, cells) = grid(cols, rows, pitch_x, |_, _| false);
    let at = |r: usize, c: usize| oid(r * cols + c);
    let mut edges = Vec::new();
    for &(r, c) in &cells {
        if r == 0 {
            edges.push(edge(GROUND, &at(r, c)));
        } else {
            edges.push(edge(&at(r - 1, c), &at(r, c)));
        }
    }
    let half = 0.5 * pitch_x * (cols - 1) as f64;
    let region = Aabb::new([-half - 1.0, -2.0], [half + 1.0, rows as f64 + 0.5]);
    let robots = line_robots(-half, half, -1.0, region);
    Scene::new(objects, robots, vec![], edges).expect("generated scene is valid")
}

/// Circular well: four courses of thirteen blocks, each course a closed ring.
pub fn well() -> Scene {
    let (cols, rows) = (13, 4);
    let radius = 2.2;
    let mut objects = Vec::new();
    let mut edges = Vec::new();
    let at = |r: usize, c: usize| oid(r * cols + c);
    for r in 0..rows {
        for c in 0..cols {
            let a = TAU * c as f64 / cols as f64;
            let (s, co) = a.sin_cos();
            let rg = radius + 0.3 * r as f64;
            let rs = radius + 1.7 + 0.5 * r as f64;
            let goal = Pose2::new(rg * co, rg * s, a);
            let start = Pose2::new(rs * co, rs * s, a);
            objects.push(block(at(r, c), start, goal));
            if r == 0 {
                edges.push(edge(GROUND, &at(r, c)));
            } else {
                edges.push(edge(&at(r - 1, c), &at(r, c)));
            }
            edges.push(edge(&at(r, c), &at(r, (c + 1) % cols)));
        }
    }
    let region = Aabb::new([-6.4, -6.4], [6.4, 6.4]);
    let robots = (0..ROBOT_COUNT)
        .map(|i| {
            let a = TAU * (i as f64 + 0.5) / ROBOT_COUNT as f64 - TAU / 4.0;
            let (s, c) = a.sin_cos();
            robot(i, Config::new(5.9 * c, 5.9 * s, a + TAU / 2.0), region)
        })
        .collect();
    Scene::new(objects, robots, vec![], edges).expect("generated scene is valid")
}

/// 13 x 9 grid of blocks without its corners, built shell by shell from the
/// outside in.
pub fn pavilion() -> Scene {
    let (cols, rows) = (13, 9);
    let corner = |r: usize, c: usize| (r == 0 || r == rows - 1) && (c == 0 || c == cols - 1);
    let pitch_x = 1.0;
    let (objects, cells) = grid(cols, rows, pitch_x, corner);
    let index = |r: usize, c: usize| cells.iter().position(|&x| x == (r, c));
    let shell = |r: usize, c: usize| r.min(c).min(rows - 1 - r).min(cols - 1 - c);
    let mut edges = Vec::new();
    for (i, &(r, c)) in cells.iter().enumerate() {
        if shell(r, c) == 0 {
            edges.push(edge(GROUND, &oid(i)));
        }
        for (dr, dc) in [(0, 1), (1, 0)] {
            if let Some(j) = index(r + dr, c + dc) {
                edges.push(edge(&oid(i), &oid(j)));
            }
        }
    }
    let half = 0.5 * pitch_x * (cols - 1) as f64;
    let region = Aabb::new([-half - 1.0, -2.0], [half + 1.0, rows as f64 + 0.5]);
    let robots = line_robots(-half, half, -1.0, region);
    Scene::new(objects, robots, vec![], edges).expect("generated scene is valid")
}

/// Two robots with disjoint regions split at `x = 0`. Objects start on the
/// left; the last goals lie beyond the left robot's reach.
pub fn handover() -> Scene {
    let left = Aabb::new([-4.0, -1.5], [-0.3, 2.5]);
    let right = Aabb::new([0.3, -1.5], [4.0, 2.5]);
    let mut objects = Vec::new();
    let mut edges = Vec::new();
    let goals = [(-1.6, 0.0), (-1.6, 1.0), (1.6, 0.0), (1.6, 1.0)];
    for (k, &(gx, gy)) in goals.iter().enumerate() {
        let start = Pose2::new(-2.8, 1.0 * k as f64 - 0.5, 0.0);
        objects.push(block(oid(k), start, Pose2::new(gx, gy, 0.0)));
        if k == 0 {
            edges.push(edge(GROUND, &oid(0)));
        } else {
            edges.push(edge(&oid(k - 1), &oid(k)));
        }
    }
    let robots = vec![
        robot(0, Config::new(-1.0, -1.0, 0.0), left),
        robot(1, Config::new(1.0, -1.0, TAU / 2.0), right),
    ];
    Scene::new(objects, robots, vec![], edges).expect("generated scene is valid")
}

/// Scene by name, including `handover`.
pub fn by_name(name: &str) -> Result<Scene> {
    match name {
        "tower" => Ok(tower()),
        "wall" => Ok(wall()),
        "well" => Ok(well()),
        "pavilion" => Ok(pavilion()),
        "handover" => Ok(handover()),
        _ => Err(Error::InvalidScene(format!("no generator named `{name}`"))),
    }
}

pub fn all_names() -> impl Iterator<Item = &'static str> {
    BENCHMARKS.into_iter().chain(["handover"])
}

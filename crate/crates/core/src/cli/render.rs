use std::fmt::Write as _;

use crate::cli::PlanFile;
use crate::geometry::Shape;
use crate::skeletons::ActionKind;
use crate::world::{PlanState, Scene};

const ROW_H: f64 = 28.0;
const LEFT: f64 = 60.0;
const WIDTH: f64 = 900.0;

fn color(kind: ActionKind) -> &'static str {
    match kind {
        ActionKind::Pick => "#4e79a7",
        ActionKind::Place => "#59a14f",
        ActionKind::Retract => "#bab0ac",
        ActionKind::Handover => "#e15759",
    }
}

/// One row per robot, one bar per event; each handover gets a vertical link
/// between the giver's and the receiver's rows at the transfer instant.
pub fn render_gantt(scene: &Scene, plan: &PlanFile) -> String {
    let rows: Vec<&str> = scene.robot_ids().collect();
    let row_of = |id: &str| rows.iter().position(|r| *r == id);
    let span = plan.makespan.max(1e-9);
    let sx = |t: f64| LEFT + WIDTH * t / span;
    let height = ROW_H * rows.len() as f64 + 30.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.1}" height="{height:.1}" font-family="monospace" font-size="11">"#,
        LEFT + WIDTH + 20.0
    );
    for (i, r) in rows.iter().enumerate() {
        let y = ROW_H * i as f64;
        let _ = writeln!(
            s,
            r##"<g class="row" data-robot="{r}"><text x="4" y="{:.1}">{r}</text><line x1="{LEFT:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#ddd"/></g>"##,
            y + ROW_H * 0.6,
            y + ROW_H,
            LEFT + WIDTH,
            y + ROW_H
        );
    }
    for (robot, events) in &plan.events {
        let Some(i) = row_of(robot) else { continue };
        let y = ROW_H * i as f64 + 4.0;
        for e in events {
            let _ = writeln!(
                s,
                r#"<rect class="bar" data-robot="{robot}" data-action="{}" data-object="{}" x="{:.3}" y="{y:.1}" width="{:.3}" height="{:.1}" fill="{}"/>"#,
                e.action.as_str(),
                e.object,
                sx(e.start),
                (sx(e.end) - sx(e.start)).max(0.5),
                ROW_H - 8.0,
                color(e.action)
            );
        }
    }
    for (robot, events) in &plan.events {
        for e in events.iter().filter(|e| e.action == ActionKind::Handover) {
            let Some(partner) = e.partner.as_deref() else { continue };
            if partner < robot.as_str() {
                continue;
            }
            let (Some(a), Some(b)) = (row_of(robot), row_of(partner)) else {
                continue;
            };
            let (top, bottom) = (a.min(b), a.max(b));
            let _ = writeln!(
                s,
                r##"<line class="handover-link" data-robots="{robot} {partner}" data-object="{}" x1="{x:.3}" y1="{:.1}" x2="{x:.3}" y2="{:.1}" stroke="#000" stroke-width="2"/>"##,
                e.object,
                ROW_H * top as f64 + ROW_H / 2.0,
                ROW_H * bottom as f64 + ROW_H / 2.0,
                x = sx(e.end)
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{LEFT:.1}" y="{:.1}">0</text><text x="{:.1}" y="{:.1}" text-anchor="end">{:.3} s</text>"#,
        height - 8.0,
        LEFT + WIDTH,
        height - 8.0,
        plan.makespan
    );
    s.push_str("</svg>\n");
    s
}

fn shape_svg(s: &mut String, shape: &Shape, class: &str, fill: &str) {
    match shape {
        Shape::Disc(d) => {
            let _ = writeln!(
                s,
                r#"<circle class="{class}" cx="{:.4}" cy="{:.4}" r="{:.4}" fill="{fill}"/>"#,
                d.center[0], -d.center[1], d.radius
            );
        }
        Shape::Box(b) => {
            let pts: Vec<String> = b
                .corners()
                .iter()
                .map(|c| format!("{:.4},{:.4}", c[0], -c[1]))
                .collect();
            let _ = writeln!(s, r#"<polygon class="{class}" points="{}" fill="{fill}"/>"#, pts.join(" "));
        }
    }
}

/// Snapshots at `0, dt, 2 dt, ...` up to and including the makespan.
pub fn render_frames(scene: &Scene, plan: &PlanFile, dt: f64) -> Vec<String> {
    let mut state = PlanState::new();
    state.committed = plan.paths.clone();
    let n = (plan.makespan / dt).ceil() as usize + 1;
    let b = scene.bounds();
    let view = format!(
        "{:.3} {:.3} {:.3} {:.3}",
        b.min[0] - 0.5,
        -b.max[1] - 0.5,
        b.max[0] - b.min[0] + 1.0,
        b.max[1] - b.min[1] + 1.0
    );
    (0..n)
        .map(|k| {
            let t = (k as f64 * dt).min(plan.makespan);
            let mut s = String::new();
            let _ = writeln!(
                s,
                r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{view}" width="800" data-t="{t:.4}">"#
            );
            for a in &scene.static_obstacles {
                shape_svg(&mut s, &Shape::Box(a.as_box()), "obstacle", "#555");
            }
            for o in &scene.objects {
                shape_svg(&mut s, &o.shape_at(o.goal_pose), "goal", "none\" stroke=\"#bbb\" stroke-width=\"0.01");
            }
            for o in &scene.objects {
                shape_svg(&mut s, &o.shape_at(state.object_pose(scene, o, t)), "object", "#f28e2b");
            }
            for r in &scene.robots {
                let q = state.robot_config(r, t);
                shape_svg(&mut s, &r.shape_at(&q), "robot", "#4e79a7");
                let g = q.gripper_point(r.gripper_offset);
                let _ = writeln!(
                    s,
                    r##"<line class="gripper" x1="{:.4}" y1="{:.4}" x2="{:.4}" y2="{:.4}" stroke="#000" stroke-width="0.02"/>"##,
                    q.x, -q.y, g[0], -g[1]
                );
            }
            s.push_str("</svg>\n");
            s
        })
        .collect()
}

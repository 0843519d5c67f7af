//! Assembly-graph reasoning: which objects may be placed next, in which
//! order, and which robot teams to try first.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{PlanState, Scene, GROUND};

/// Undirected support graph over object ids plus [`GROUND`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssemblyGraph {
    adjacency: BTreeMap<String, BTreeSet<String>>,
}

impl AssemblyGraph {
    pub fn from_scene(scene: &Scene) -> Self {
        Self::from_edges(scene.object_ids(), &scene.assembly_edges)
            .expect("scene graph is validated on load")
    }

    /// Builds a graph and checks that every object is connected to ground.
    pub fn from_edges<'a>(
        objects: impl IntoIterator<Item = &'a str>,
        edges: &[(String, String)],
    ) -> Result<Self> {
        let mut adjacency: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        adjacency.insert(GROUND.to_owned(), BTreeSet::new());
        for o in objects {
            adjacency.insert(o.to_owned(), BTreeSet::new());
        }
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidScene(format!("self-edge on `{a}`")));
            }
            for n in [a, b] {
                if !adjacency.contains_key(n) {
                    return Err(Error::UnknownEntity(n.clone()));
                }
            }
            adjacency.get_mut(a).unwrap().insert(b.clone());
            adjacency.get_mut(b).unwrap().insert(a.clone());
        }
        let graph = Self { adjacency };
        let reach = graph.reachable_from_ground();
        if let Some(lost) = graph.objects().find(|o| !reach.contains(*o)) {
            return Err(Error::InvalidScene(format!(
                "object `{lost}` is not connected to {GROUND}"
            )));
        }
        Ok(graph)
    }

    fn reachable_from_ground(&self) -> BTreeSet<&str> {
        let mut seen = BTreeSet::from([GROUND]);
        let mut stack = vec![GROUND];
        while let Some(n) = stack.pop() {
            for m in &self.adjacency[n] {
                if seen.insert(m.as_str()) {
                    stack.push(m);
                }
            }
        }
        seen
    }

    pub fn objects(&self) -> impl Iterator<Item = &str> {
        self.adjacency.keys().map(String::as_str).filter(|k| *k != GROUND)
    }

    pub fn neighbors(&self, node: &str) -> impl Iterator<Item = &str> {
        self.adjacency
            .get(node)
            .into_iter()
            .flat_map(|s| s.iter().map(String::as_str))
    }

    pub fn touches_ground(&self, object: &str) -> bool {
        self.neighbors(object).any(|n| n == GROUND)
    }

    pub fn placed_neighbor_count(&self, object: &str, placed: &BTreeSet<&str>) -> usize {
        self.neighbors(object).filter(|n| placed.contains(n)).count()
    }
}

/// Unplaced objects adjacent to ground or to an already placed object.
pub fn placeable_set(graph: &AssemblyGraph, placed: &BTreeSet<&str>) -> BTreeSet<String> {
    graph
        .objects()
        .filter(|o| !placed.contains(o))
        .filter(|o| graph.neighbors(o).any(|n| n == GROUND || placed.contains(n)))
        .map(str::to_owned)
        .collect()
}

/// Ordering heuristic; lower is better.
pub fn heuristic(graph: &AssemblyGraph, object: &str, placed: &BTreeSet<&str>) -> i64 {
    -(graph.placed_neighbor_count(object, placed) as i64)
}

/// The placeable object with the most placed neighbours, smallest id on ties.
pub fn next_object(graph: &AssemblyGraph, placed: &BTreeSet<&str>) -> Result<String> {
    placeable_set(graph, placed)
        .into_iter()
        .min_by_key(|o| heuristic(graph, o, placed))
        .ok_or(Error::NothingPlaceable)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotPriorityList {
    pub entries: Vec<(Vec<String>, f64)>,
}

impl RobotPriorityList {
    pub fn teams(&self) -> impl Iterator<Item = &[String]> {
        self.entries.iter().map(|(t, _)| t.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Orders every team of size `1..=max_team` by its latest busy time, then by
/// size, then lexicographically.
pub fn prioritize_by_busy_time(busy: &BTreeMap<String, f64>, max_team: usize) -> RobotPriorityList {
    let ids: Vec<&String> = busy.keys().collect();
    let mut entries = Vec::new();
    let mut team = Vec::new();
    fn rec<'a>(
        ids: &[&'a String],
        start: usize,
        max_team: usize,
        team: &mut Vec<&'a String>,
        out: &mut Vec<Vec<String>>,
    ) {
        for i in start..ids.len() {
            team.push(ids[i]);
            out.push(team.iter().map(|s| s.to_string()).collect());
            if team.len() < max_team {
                rec(ids, i + 1, max_team, team, out);
            }
            team.pop();
        }
    }
    let mut teams = Vec::new();
    rec(&ids, 0, max_team, &mut team, &mut teams);
    for t in teams {
        let key = t.iter().map(|r| busy[r]).fold(f64::NEG_INFINITY, f64::max);
        entries.push((t, key));
    }
    entries.sort_by(|(ta, ka), (tb, kb)| {
        ka.total_cmp(kb)
            .then(ta.len().cmp(&tb.len()))
            .then_with(|| ta.cmp(tb))
    });
    RobotPriorityList { entries }
}

pub fn prioritize_robots(plan: &PlanState, scene: &Scene, max_team: usize) -> RobotPriorityList {
    let busy = scene
        .robot_ids()
        .map(|r| (r.to_owned(), plan.horizon(r)))
        .collect();
    prioritize_by_busy_time(&busy, max_team.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edges(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    fn chain() -> AssemblyGraph {
        AssemblyGraph::from_edges(
            ["o1", "o2", "o3"],
            &edges(&[(GROUND, "o1"), ("o1", "o2"), ("o2", "o3")]),
        )
        .unwrap()
    }

    #[test]
    fn chain_placeable_sets() {
        let g = chain();
        assert_eq!(placeable_set(&g, &BTreeSet::new()), BTreeSet::from(["o1".into()]));
        assert_eq!(
            placeable_set(&g, &BTreeSet::from(["o1"])),
            BTreeSet::from(["o2".into()])
        );
    }

    #[test]
    fn next_object_prefers_most_supported_then_smallest_id() {
        let g = AssemblyGraph::from_edges(
            ["a", "b", "b3", "b4"],
            &edges(&[
                (GROUND, "a"),
                (GROUND, "b"),
                ("a", "b3"),
                ("a", "b4"),
                ("b", "b4"),
            ]),
        )
        .unwrap();
        assert_eq!(next_object(&g, &BTreeSet::from(["a", "b"])).unwrap(), "b4");
        assert_eq!(next_object(&g, &BTreeSet::new()).unwrap(), "a");
        assert!(matches!(
            next_object(&g, &BTreeSet::from(["a", "b", "b3", "b4"])),
            Err(Error::NothingPlaceable)
        ));
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        assert!(AssemblyGraph::from_edges(["x", "y"], &edges(&[(GROUND, "x")])).is_err());
        assert!(AssemblyGraph::from_edges(["x"], &edges(&[("x", "x")])).is_err());
    }

    fn busy(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(r, t)| (r.to_string(), *t)).collect()
    }

    fn names(l: &RobotPriorityList) -> Vec<String> {
        l.teams().map(|t| t.join(",")).collect()
    }

    #[test]
    fn singletons_sorted_by_busy_time() {
        let l = prioritize_by_busy_time(&busy(&[("r1", 3.0), ("r2", 5.0), ("r3", 2.0)]), 1);
        assert_eq!(names(&l), ["r3", "r1", "r2"]);
    }

    #[test]
    fn equal_busy_times_fall_back_to_size_then_ids() {
        let l = prioritize_by_busy_time(&busy(&[("r1", 0.0), ("r2", 0.0), ("r3", 0.0)]), 2);
        assert_eq!(names(&l), ["r1", "r2", "r3", "r1,r2", "r1,r3", "r2,r3"]);
    }

    #[test]
    fn pair_key_is_latest_member() {
        // Keys are 0, 9, 9; at equal keys the smaller team goes first.
        let l = prioritize_by_busy_time(&busy(&[("r1", 0.0), ("r2", 9.0)]), 2);
        assert_eq!(names(&l), ["r1", "r2", "r1,r2"]);
        assert!(l.entries.windows(2).all(|w| w[0].1 <= w[1].1));
    }
}

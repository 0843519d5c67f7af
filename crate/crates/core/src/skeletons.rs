//! Logically feasible action sequences for placing one object with a team.
//!
//! The four-action domain is encoded directly as precondition rules:
//! a pick starts the sequence, the holder may hand over to a teammate or
//! place, and a place is always followed by a retract of the same robot.
//! Objects are handled once, so nothing is ever picked twice.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Pick,
    Place,
    Retract,
    Handover,
}

impl ActionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActionKind::Pick => "pick",
            ActionKind::Place => "place",
            ActionKind::Retract => "retract",
            ActionKind::Handover => "handover",
        }
    }
}

/// One symbolic action. For a handover `robot` is the giver.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    pub robot: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub receiver: Option<String>,
    pub object: String,
}

impl Action {
    pub fn new(kind: ActionKind, robot: &str, object: &str) -> Self {
        Self {
            kind,
            robot: robot.to_owned(),
            receiver: None,
            object: object.to_owned(),
        }
    }

    pub fn handover(giver: &str, receiver: &str, object: &str) -> Self {
        Self {
            kind: ActionKind::Handover,
            robot: giver.to_owned(),
            receiver: Some(receiver.to_owned()),
            object: object.to_owned(),
        }
    }

    /// Robots constrained by this action.
    pub fn robots(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.robot.as_str()).chain(self.receiver.as_deref())
    }
}

/// A sequence of actions in execution order; the per-robot lists are its projections.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Skeleton {
    pub actions: Vec<Action>,
}

impl Skeleton {
    pub fn switch_count(&self) -> usize {
        self.actions.len()
    }

    pub fn robots(&self) -> BTreeSet<&str> {
        self.actions.iter().flat_map(Action::robots).collect()
    }

    pub fn per_robot(&self) -> BTreeMap<&str, Vec<&Action>> {
        let mut out: BTreeMap<&str, Vec<&Action>> = BTreeMap::new();
        for a in &self.actions {
            for r in a.robots() {
                out.entry(r).or_default().push(a);
            }
        }
        out
    }

    pub fn handover_count(&self) -> usize {
        self.actions
            .iter()
            .filter(|a| a.kind == ActionKind::Handover)
            .count()
    }

    /// Short label such as `pick(r0) handover(r0>r1) place(r1) retract(r1)`.
    pub fn label(&self) -> String {
        self.actions
            .iter()
            .map(|a| match &a.receiver {
                Some(rx) => format!("{}({}>{})", a.kind.as_str(), a.robot, rx),
                None => format!("{}({})", a.kind.as_str(), a.robot),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonLimits {
    pub max_actions: usize,
    pub max_handover_hops: usize,
}

impl Default for SkeletonLimits {
    fn default() -> Self {
        Self {
            max_actions: 8,
            max_handover_hops: 1,
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    actions: Vec<Action>,
    holders: Vec<String>,
    placed: bool,
    pending_retract: Option<String>,
}

impl Node {
    fn is_goal(&self) -> bool {
        self.placed && self.pending_retract.is_none()
    }
}

/// Breadth-first enumeration of valid skeletons, shortest first.
pub struct SkeletonIter {
    robots: Vec<String>,
    object: String,
    limits: SkeletonLimits,
    queue: VecDeque<Node>,
}

impl SkeletonIter {
    fn successors(&self, node: &Node) -> Vec<Node> {
        let mut out = Vec::new();
        let push = |out: &mut Vec<Node>, action: Action, edit: &dyn Fn(&mut Node)| {
            let mut n = node.clone();
            n.actions.push(action);
            edit(&mut n);
            out.push(n);
        };
        if let Some(r) = &node.pending_retract {
            push(&mut out, Action::new(ActionKind::Retract, r, &self.object), &|n| {
                n.pending_retract = None
            });
            return out;
        }
        if node.placed {
            return out;
        }
        match node.holders.last() {
            None => {
                for r in &self.robots {
                    push(&mut out, Action::new(ActionKind::Pick, r, &self.object), &|n| {
                        n.holders.push(r.clone())
                    });
                }
            }
            Some(holder) => {
                push(&mut out, Action::new(ActionKind::Place, holder, &self.object), &|n| {
                    n.placed = true;
                    n.pending_retract = n.holders.last().cloned();
                });
                if node.holders.len() <= self.limits.max_handover_hops {
                    for r in self.robots.iter().filter(|r| !node.holders.contains(r)) {
                        push(&mut out, Action::handover(holder, r, &self.object), &|n| {
                            n.holders.push(r.clone())
                        });
                    }
                }
            }
        }
        out
    }
}

impl Iterator for SkeletonIter {
    type Item = Skeleton;

    fn next(&mut self) -> Option<Skeleton> {
        while let Some(node) = self.queue.pop_front() {
            if node.is_goal() {
                return Some(Skeleton {
                    actions: node.actions,
                });
            }
            if node.actions.len() < self.limits.max_actions {
                let succ = self.successors(&node);
                self.queue.extend(succ);
            }
        }
        None
    }
}

/// Lazily yields every logically valid skeleton for moving `object` with the
/// given robots, in order of increasing action count.
pub fn enumerate_skeletons(robots: &[&str], object: &str, limits: SkeletonLimits) -> SkeletonIter {
    let mut robots: Vec<String> = robots.iter().map(|r| r.to_string()).collect();
    robots.sort();
    robots.dedup();
    let queue = if robots.is_empty() {
        VecDeque::new()
    } else {
        VecDeque::from([Node {
            actions: Vec::new(),
            holders: Vec::new(),
            placed: false,
            pending_retract: None,
        }])
    };
    SkeletonIter {
        robots,
        object: object.to_owned(),
        limits,
        queue,
    }
}

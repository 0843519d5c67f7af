use serde::{Deserialize, Serialize};

use crate::geometry::Pose2;
use crate::world::scene::Config;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Knot {
    pub t: f64,
    pub q: Config,
}

impl Knot {
    pub fn new(t: f64, q: Config) -> Self {
        Self { t, q }
    }
}

/// Rigid grasp: the object pose expressed in the carrier's gripper frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attachment {
    pub robot: String,
    pub grasp: Pose2,
}

/// Piecewise-linear trajectory over time. For objects, each segment may be
/// attached to a carrier robot, in which case the knot values only pin the
/// segment endpoints and the motion in between follows the carrier.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedPath {
    pub knots: Vec<Knot>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<Option<Attachment>>,
}

impl TimedPath {
    pub fn new(knots: Vec<Knot>) -> Self {
        Self {
            knots,
            attachments: Vec::new(),
        }
    }

    pub fn single(t: f64, q: Config) -> Self {
        Self::new(vec![Knot::new(t, q)])
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn start_time(&self) -> f64 {
        self.knots.first().map_or(0.0, |k| k.t)
    }

    pub fn end_time(&self) -> f64 {
        self.knots.last().map_or(0.0, |k| k.t)
    }

    pub fn first(&self) -> Option<&Knot> {
        self.knots.first()
    }

    pub fn last(&self) -> Option<&Knot> {
        self.knots.last()
    }

    pub fn segment_count(&self) -> usize {
        self.knots.len().saturating_sub(1)
    }

    pub fn attachment(&self, segment: usize) -> Option<&Attachment> {
        self.attachments.get(segment).and_then(|a| a.as_ref())
    }

    /// Index `k` with `knots[k].t <= t < knots[k + 1].t`, if any.
    pub fn segment_index(&self, t: f64) -> Option<usize> {
        if self.knots.len() < 2 || t < self.start_time() || t >= self.end_time() {
            return None;
        }
        let k = self.knots.partition_point(|k| k.t <= t);
        Some(k - 1)
    }

    /// Linear interpolation of the knot values, clamped outside the time span.
    pub fn interpolate(&self, t: f64) -> Option<Config> {
        let first = self.knots.first()?;
        if t <= first.t {
            return Some(first.q);
        }
        match self.segment_index(t) {
            Some(k) => {
                let (a, b) = (&self.knots[k], &self.knots[k + 1]);
                Some(a.q.lerp(&b.q, (t - a.t) / (b.t - a.t)))
            }
            None => self.knots.last().map(|k| k.q),
        }
    }

    pub fn strictly_increasing(&self) -> bool {
        self.knots.windows(2).all(|w| w[1].t > w[0].t)
    }

    /// Largest translational and angular rate over segments intersecting `[t0, t1]`.
    pub fn max_rates(&self, t0: f64, t1: f64) -> (f64, f64) {
        if self.knots.len() < 2 || t1 < self.start_time() || t0 > self.end_time() {
            return (0.0, 0.0);
        }
        let lo = self.knots.partition_point(|k| k.t <= t0).saturating_sub(1);
        let mut v: f64 = 0.0;
        let mut w: f64 = 0.0;
        for k in lo..self.segment_count() {
            let (a, b) = (&self.knots[k], &self.knots[k + 1]);
            if a.t > t1 {
                break;
            }
            let dt = b.t - a.t;
            v = v.max(a.q.translation_to(&b.q) / dt);
            w = w.max(a.q.rotation_to(&b.q) / dt);
        }
        (v, w)
    }

    /// Appends `other`, dropping its first knot when it does not advance time.
    pub fn extend_with(&mut self, other: &TimedPath) {
        if other.knots.is_empty() {
            return;
        }
        let keep_attachments = !self.attachments.is_empty() || !other.attachments.is_empty();
        let mut atts = std::mem::take(&mut self.attachments);
        atts.resize(self.segment_count(), None);
        let mut other_atts = other.attachments.clone();
        other_atts.resize(other.segment_count(), None);
        let joined = self.knots.last().is_some_and(|l| other.knots[0].t <= l.t);
        if joined {
            self.knots.extend_from_slice(&other.knots[1..]);
        } else {
            if !self.knots.is_empty() {
                atts.push(None);
            }
            self.knots.extend_from_slice(&other.knots);
        }
        atts.extend(other_atts);
        if keep_attachments {
            self.attachments = atts;
        }
    }

    /// Path length under the weighted configuration metric.
    pub fn length(&self, angle_weight: f64) -> f64 {
        self.knots
            .windows(2)
            .map(|w| w[0].q.translation_to(&w[1].q) + angle_weight * w[0].q.rotation_to(&w[1].q))
            .sum()
    }

    pub fn duration(&self) -> f64 {
        self.end_time() - self.start_time()
    }

    /// Drops knots with `t > time`, inserting an interpolated knot at `time`.
    pub fn truncate_after(&mut self, time: f64) {
        if self.knots.is_empty() || time >= self.end_time() {
            return;
        }
        if time < self.start_time() {
            self.knots.clear();
            self.attachments.clear();
            return;
        }
        let keep = self.knots.partition_point(|k| k.t <= time);
        let last_t = self.knots[keep - 1].t;
        if last_t < time {
            let q = self.interpolate(time).expect("non-empty");
            self.knots.truncate(keep);
            self.knots.push(Knot::new(time, q));
        } else {
            self.knots.truncate(keep);
        }
        if !self.attachments.is_empty() {
            self.attachments.truncate(self.segment_count());
        }
    }
}

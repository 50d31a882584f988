//! Pareto filtering of (active concepts, accuracy) points: fewer concepts
//! and higher accuracy are both better.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub active_concepts: f64,
    pub accuracy: f64,
}

impl TradeoffPoint {
    pub fn new(active_concepts: f64, accuracy: f64) -> Self {
        Self {
            active_concepts,
            accuracy,
        }
    }

    /// `self` uses no more concepts, is no less accurate, and is strictly
    /// better in at least one of the two.
    pub fn dominates(&self, other: &Self) -> bool {
        self.active_concepts <= other.active_concepts
            && self.accuracy >= other.accuracy
            && (self.active_concepts < other.active_concepts || self.accuracy > other.accuracy)
    }
}

/// Non-dominated points sorted by ascending concept count (stable, so equal
/// counts keep their input order). Identical points are all retained.
pub fn pareto_filter(points: &[TradeoffPoint]) -> Vec<TradeoffPoint> {
    let mut front: Vec<TradeoffPoint> = points
        .iter()
        .filter(|p| !points.iter().any(|q| q.dominates(p)))
        .copied()
        .collect();
    front.sort_by(|a, b| a.active_concepts.total_cmp(&b.active_concepts));
    front
}

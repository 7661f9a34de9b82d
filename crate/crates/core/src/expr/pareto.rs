use serde::{Deserialize, Serialize};

/// One scan result; higher `score` is better.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub complexity: usize,
    pub score: f64,
    pub id: usize,
}

impl ParetoPoint {
    pub fn new(complexity: usize, score: f64, id: usize) -> Self {
        Self { complexity, score, id }
    }

    /// `self` is at least as simple and as good as `other`, and strictly better in one.
    pub fn dominates(&self, other: &Self) -> bool {
        self.complexity <= other.complexity
            && self.score >= other.score
            && (self.complexity < other.complexity || self.score > other.score)
    }
}

/// Non-dominated points sorted by complexity. Among equal points the first one is kept.
/// Points with a NaN score are ignored.
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut sorted: Vec<ParetoPoint> = points.iter().copied().filter(|p| !p.score.is_nan()).collect();
    sorted.sort_by(|a, b| a.complexity.cmp(&b.complexity).then(b.score.total_cmp(&a.score)));
    let mut front: Vec<ParetoPoint> = Vec::new();
    for p in sorted {
        if front.last().is_none_or(|best| p.score > best.score) {
            front.push(p);
        }
    }
    front
}

use serde::{Deserialize, Serialize};

use super::tree::{Candidate, ParameterTreeSpec};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    /// Running mean of the normalized rewards backed up through this pair.
    pub score: f64,
    pub visits: u64,
}

/// Statistics shared by every tree node that assigns the same
/// `(parameter, value)` pair, indexed by level and candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    stats: Vec<Vec<PairStats>>,
    iterations: u64,
}

/// One row of an exported table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub parameter: String,
    pub value: Candidate,
    pub score: f64,
    pub visits: u64,
}

impl ScoreTable {
    pub fn new(spec: &ParameterTreeSpec) -> Self {
        ScoreTable {
            stats: spec
                .levels
                .iter()
                .map(|l| vec![PairStats::default(); l.candidates.len()])
                .collect(),
            iterations: 0,
        }
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    pub fn get(&self, level: usize, candidate: usize) -> PairStats {
        self.stats[level][candidate]
    }

    pub fn level(&self, level: usize) -> &[PairStats] {
        &self.stats[level]
    }

    /// Commits one iteration: every `(level, candidate)` of the selected path
    /// receives `reward`.
    pub fn back_up(&mut self, path: &[(usize, usize)], reward: f64) {
        debug_assert!((0.0..=1.0).contains(&reward));
        for &(level, c) in path {
            let s = &mut self.stats[level][c];
            s.visits += 1;
            s.score += (reward - s.score) / s.visits as f64;
        }
        self.iterations += 1;
    }

    pub fn ucb(&self, level: usize, candidate: usize, lambda: f64, exploit: bool) -> f64 {
        let s = self.get(level, candidate);
        ucb(s.score, s.visits, self.iterations, lambda, exploit)
    }

    pub fn entries(&self, spec: &ParameterTreeSpec) -> Vec<TableEntry> {
        spec.levels
            .iter()
            .zip(&self.stats)
            .flat_map(|(l, row)| {
                l.candidates.iter().zip(row).map(|(c, s)| TableEntry {
                    parameter: l.slot.label().to_string(),
                    value: *c,
                    score: s.score,
                    visits: s.visits,
                })
            })
            .collect()
    }
}

/// `score + λ·sqrt(ln(iterations) / visits)`, infinite for an unvisited
/// pair. Without exploitation the score term is dropped.
pub fn ucb(score: f64, visits: u64, iterations: u64, lambda: f64, exploit: bool) -> f64 {
    if visits == 0 {
        return f64::INFINITY;
    }
    let exploration = lambda * ((iterations.max(1) as f64).ln() / visits as f64).sqrt();
    if exploit {
        score + exploration
    } else {
        exploration
    }
}

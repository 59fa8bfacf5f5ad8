//! Count-based novelty and the coordinated intrinsic reward family.
//!
//! Each agent keeps its own visit counts `N`; the novelty of a cell to an
//! agent is `N^-zeta` (1 for cells it has never visited). The reward for
//! agent `i` arriving at a cell is a function of the vector of novelties
//! that *every* agent assigns to that cell.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{MapSpec, Pos};
use crate::error::{Error, Result};

pub const DEFAULT_ZETA: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Independent,
    Minimum,
    Covering,
    Burrowing,
    LeaderFollower,
    /// Joint-position counts, all agents treated as one. Ablation only.
    Centralized,
}

impl RewardKind {
    /// The five per-agent kinds that make up the default head set.
    pub const HEAD_SET: [RewardKind; 5] = [
        RewardKind::Independent,
        RewardKind::Minimum,
        RewardKind::Covering,
        RewardKind::Burrowing,
        RewardKind::LeaderFollower,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RewardKind::Independent => "independent",
            RewardKind::Minimum => "minimum",
            RewardKind::Covering => "covering",
            RewardKind::Burrowing => "burrowing",
            RewardKind::LeaderFollower => "leader_follower",
            RewardKind::Centralized => "centralized",
        }
    }
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "independent" => RewardKind::Independent,
            "minimum" => RewardKind::Minimum,
            "covering" => RewardKind::Covering,
            "burrowing" => RewardKind::Burrowing,
            "leader_follower" => RewardKind::LeaderFollower,
            "centralized" => RewardKind::Centralized,
            other => return Err(Error::Usage(format!("unknown reward kind `{other}`"))),
        })
    }
}

/// `count^-zeta`, with an unvisited cell (count 0) counting as fully novel.
pub fn novelty_from_count(count: u64, zeta: f64) -> f64 {
    if count <= 1 {
        1.0
    } else {
        (count as f64).powf(-zeta)
    }
}

/// Per-agent visit counts over the cells of one map.
#[derive(Clone, Debug, PartialEq)]
pub struct VisitTable {
    width: usize,
    height: usize,
    zeta: f64,
    counts: Vec<Vec<u64>>,
}

impl VisitTable {
    pub fn new(n_agents: usize, width: usize, height: usize, zeta: f64) -> Self {
        VisitTable {
            width,
            height,
            zeta,
            counts: vec![vec![0; width * height]; n_agents],
        }
    }

    pub fn for_map(map: &MapSpec, n_agents: usize, zeta: f64) -> Self {
        Self::new(n_agents, map.width, map.height, zeta)
    }

    pub fn n_agents(&self) -> usize {
        self.counts.len()
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn idx(&self, cell: Pos) -> usize {
        debug_assert!(cell.x < self.width && cell.y < self.height);
        cell.y * self.width + cell.x
    }

    pub fn record_visit(&mut self, agent: usize, cell: Pos) {
        let i = self.idx(cell);
        self.counts[agent][i] += 1;
    }

    pub fn count(&self, agent: usize, cell: Pos) -> u64 {
        self.counts[agent][self.idx(cell)]
    }

    pub fn novelty(&self, agent: usize, cell: Pos) -> f64 {
        novelty_from_count(self.count(agent, cell), self.zeta)
    }

    /// Every agent's novelty for `cell`, written into `out`.
    pub fn novelties_into(&self, cell: Pos, out: &mut Vec<f64>) {
        let i = self.idx(cell);
        out.clear();
        out.extend(
            self.counts
                .iter()
                .map(|c| novelty_from_count(c[i], self.zeta)),
        );
    }

    pub fn novelties(&self, cell: Pos) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.counts.len());
        self.novelties_into(cell, &mut out);
        out
    }

    /// Row-major count grid of one agent.
    pub fn grid(&self, agent: usize) -> &[u64] {
        &self.counts[agent]
    }

    /// Rows of `agent,x,y,count` for every visited cell.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "agent,x,y,count")?;
        for (agent, grid) in self.counts.iter().enumerate() {
            for (i, &c) in grid.iter().enumerate() {
                if c > 0 {
                    writeln!(out, "{agent},{},{},{c}", i % self.width, i / self.width)?;
                }
            }
        }
        Ok(())
    }

    /// Inverse of [`VisitTable::write_csv`].
    pub fn read_csv(
        text: &str,
        n_agents: usize,
        width: usize,
        height: usize,
        zeta: f64,
    ) -> Result<Self> {
        let mut table = VisitTable::new(n_agents, width, height, zeta);
        for (line_no, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let parse = |s: &str| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|e| Error::Config(format!("visit csv line {}: {e}", line_no + 1)))
            };
            if fields.len() != 4 {
                return Err(Error::Config(format!(
                    "visit csv line {} has {} fields",
                    line_no + 1,
                    fields.len()
                )));
            }
            let (a, x, y, c) = (
                parse(fields[0])? as usize,
                parse(fields[1])? as usize,
                parse(fields[2])? as usize,
                parse(fields[3])?,
            );
            if a >= n_agents || x >= width || y >= height {
                return Err(Error::Config(format!(
                    "visit csv line {} is out of range",
                    line_no + 1
                )));
            }
            table.counts[a][y * width + x] = c;
        }
        Ok(table)
    }
}

/// Intrinsic reward for agent `i` given every agent's novelty of the cell
/// agent `i` arrived at.
///
/// With `f_i` the agent's own novelty and `mean` the average over all agents:
/// independent `f_i`; minimum `min_j f_j`; covering `f_i` when `f_i > mean`;
/// burrowing `f_i` when `f_i <= mean`; leader-follower burrows for agent 0
/// and covers for everyone else.
pub fn intrinsic_reward(kind: RewardKind, novelties: &[f64], i: usize) -> Result<f64> {
    let n = novelties.len();
    if i >= n {
        return Err(Error::Usage(format!(
            "agent {i} out of range for {n} agents"
        )));
    }
    let own = novelties[i];
    let mean = || novelties.iter().sum::<f64>() / n as f64;
    let covering = || if own > mean() { own } else { 0.0 };
    let burrowing = || if own <= mean() { own } else { 0.0 };
    Ok(match kind {
        RewardKind::Independent => own,
        RewardKind::Minimum => novelties.iter().copied().fold(f64::INFINITY, f64::min),
        RewardKind::Covering => covering(),
        RewardKind::Burrowing => burrowing(),
        RewardKind::LeaderFollower => {
            if n < 2 {
                return Err(Error::Usage(
                    "leader_follower needs at least two agents".into(),
                ));
            }
            if i == 0 {
                burrowing()
            } else {
                covering()
            }
        }
        RewardKind::Centralized => {
            return Err(Error::Usage(
                "centralized rewards come from joint counts, see CentralTable".into(),
            ))
        }
    })
}

/// Intrinsic reward for agent `i` arriving at `cell`, read from the tables.
pub fn intrinsic_reward_at(
    kind: RewardKind,
    tables: &VisitTable,
    i: usize,
    cell: Pos,
) -> Result<f64> {
    intrinsic_reward(kind, &tables.novelties(cell), i)
}

/// Visit counts over ordered joint positions of all agents.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CentralTable {
    zeta: f64,
    counts: HashMap<Vec<Pos>, u64>,
}

impl CentralTable {
    pub fn new(zeta: f64) -> Self {
        CentralTable {
            zeta,
            counts: HashMap::new(),
        }
    }

    pub fn record_visit(&mut self, joint: &[Pos]) {
        *self.counts.entry(joint.to_vec()).or_insert(0) += 1;
    }

    pub fn count(&self, joint: &[Pos]) -> u64 {
        self.counts.get(joint).copied().unwrap_or(0)
    }

    /// Reward shared by every agent for reaching `joint`.
    pub fn centralized_reward(&self, joint: &[Pos]) -> f64 {
        novelty_from_count(self.count(joint), self.zeta)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const C: Pos = Pos::new(2, 3);

    #[test]
    fn record_visit_counts_per_agent() {
        let mut t = VisitTable::new(2, 5, 5, DEFAULT_ZETA);
        t.record_visit(0, C);
        assert_eq!(t.count(0, C), 1);
        t.record_visit(0, C);
        assert_eq!(t.count(0, C), 2);
        assert_eq!(t.count(1, C), 0);
    }

    #[test]
    fn novelty_values() {
        let mut t = VisitTable::new(1, 5, 5, 0.7);
        assert_eq!(t.novelty(0, C), 1.0);
        t.record_visit(0, C);
        assert_eq!(t.novelty(0, C), 1.0);
        t.record_visit(0, C);
        // 2^-0.7
        assert!((t.novelty(0, C) - 0.615_572_206_672_458_2).abs() < 1e-12);
        for _ in 0..8 {
            t.record_visit(0, C);
        }
        // 10^-0.7
        assert!((t.novelty(0, C) - 0.199_526_231_496_887_96).abs() < 1e-12);
    }

    #[test]
    fn repeated_visits_strictly_decrease_independent_reward() {
        let mut t = VisitTable::new(1, 5, 5, 0.7);
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            t.record_visit(0, C);
            let r = intrinsic_reward_at(RewardKind::Independent, &t, 0, C).unwrap();
            assert!(r < last || t.count(0, C) == 1);
            last = r;
        }
    }

    #[test]
    fn two_agent_examples() {
        // 4^-0.7
        let f1 = 0.378_929_141_627_599_5;
        let f = [1.0, f1];
        let min = intrinsic_reward(RewardKind::Minimum, &f, 0).unwrap();
        assert!((min - f1).abs() < 1e-15);
        assert_eq!(intrinsic_reward(RewardKind::Covering, &f, 0).unwrap(), 1.0);
        assert_eq!(intrinsic_reward(RewardKind::Burrowing, &f, 0).unwrap(), 0.0);
        assert_eq!(intrinsic_reward(RewardKind::Burrowing, &f, 1).unwrap(), f1);
        assert_eq!(
            intrinsic_reward(RewardKind::LeaderFollower, &f, 0).unwrap(),
            0.0
        );
        assert_eq!(
            intrinsic_reward(RewardKind::LeaderFollower, &f, 1).unwrap(),
            0.0
        );
        assert_eq!(
            intrinsic_reward(RewardKind::LeaderFollower, &[f1, 1.0], 0).unwrap(),
            f1
        );
    }

    #[test]
    fn gate_boundary_goes_to_burrowing() {
        let f = [0.5, 0.5];
        assert_eq!(intrinsic_reward(RewardKind::Burrowing, &f, 0).unwrap(), 0.5);
        assert_eq!(intrinsic_reward(RewardKind::Covering, &f, 0).unwrap(), 0.0);
    }

    #[test]
    fn misuse_is_reported() {
        assert!(intrinsic_reward(RewardKind::LeaderFollower, &[1.0], 0).is_err());
        assert!(intrinsic_reward(RewardKind::Centralized, &[1.0, 1.0], 0).is_err());
        assert!(intrinsic_reward(RewardKind::Independent, &[1.0], 1).is_err());
        assert!("nonsense".parse::<RewardKind>().is_err());
        assert_eq!(
            "leader_follower".parse::<RewardKind>().unwrap(),
            RewardKind::LeaderFollower
        );
    }

    #[test]
    fn centralized_counts_ordered_tuples() {
        let a = Pos::new(1, 1);
        let b = Pos::new(2, 1);
        let mut t = CentralTable::new(0.7);
        t.record_visit(&[a, b]);
        assert_eq!(t.centralized_reward(&[a, b]), 1.0);
        t.record_visit(&[a, b]);
        assert!((t.centralized_reward(&[a, b]) - 0.615_572_206_672_458_2).abs() < 1e-12);
        t.record_visit(&[b, a]);
        assert_eq!(t.centralized_reward(&[b, a]), 1.0);
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn csv_round_trip() {
        let mut t = VisitTable::new(2, 4, 3, 0.7);
        t.record_visit(0, Pos::new(1, 1));
        t.record_visit(1, Pos::new(2, 1));
        t.record_visit(1, Pos::new(2, 1));
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "agent,x,y,count\n0,1,1,1\n1,2,1,2\n");
        assert_eq!(VisitTable::read_csv(&text, 2, 4, 3, 0.7).unwrap(), t);
    }
}

//! Flat Q-value storage over all state-action pairs.
//!
//! Actions are "move to cell j" and each cell has its own action set, so
//! the table is a flat vector of length `sum_l |A(l)|` plus an index map
//! from `(cell, destination)` to a flat offset. Every learner state vector
//! (f, g, omega, alpha) shares this same index space.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::CellId;

/// Bijective map from (cell, destination) pairs to flat vector offsets.
///
/// `actions[l]` lists the destination cells reachable from `l`, sorted
/// ascending. The flat offset of `(l, j)` is `offsets[l] + rank of j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QIndexMap {
    n_q: usize,
    actions: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    len: usize,
}

impl QIndexMap {
    pub fn new(actions: Vec<Vec<usize>>) -> Result<Self> {
        let n_q = actions.len();
        if n_q == 0 {
            return Err(Error::Model("index map needs at least one cell".into()));
        }
        let mut offsets = Vec::with_capacity(n_q);
        let mut len = 0;
        for (l, dests) in actions.iter().enumerate() {
            if dests.is_empty() {
                return Err(Error::Model(format!("cell {l} has an empty action set")));
            }
            if dests.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Model(format!(
                    "action set of cell {l} must be sorted and duplicate-free"
                )));
            }
            if *dests.last().unwrap() >= n_q {
                return Err(Error::Model(format!(
                    "cell {l} references a destination >= n_q"
                )));
            }
            offsets.push(len);
            len += dests.len();
        }
        Ok(QIndexMap {
            n_q,
            actions,
            offsets,
            len,
        })
    }

    /// Dense map: every cell can move to every cell, including itself.
    pub fn dense(n_q: usize) -> Self {
        let actions = (0..n_q).map(|_| (0..n_q).collect()).collect();
        QIndexMap::new(actions).expect("dense map is always valid")
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn actions(&self, cell: CellId) -> &[usize] {
        &self.actions[cell.0]
    }

    pub fn action_lists(&self) -> &[Vec<usize>] {
        &self.actions
    }

    /// Flat offset of the pair (cell, destination).
    pub fn pair(&self, cell: CellId, dest: usize) -> Result<usize> {
        let dests = self
            .actions
            .get(cell.0)
            .ok_or(Error::UnknownPair { cell: cell.0, dest })?;
        match dests.binary_search(&dest) {
            Ok(rank) => Ok(self.offsets[cell.0] + rank),
            Err(_) => Err(Error::UnknownPair { cell: cell.0, dest }),
        }
    }

    /// Inverse of `pair`.
    pub fn unpair(&self, flat: usize) -> (CellId, usize) {
        debug_assert!(flat < self.len);
        let cell = match self.offsets.binary_search(&flat) {
            Ok(l) => l,
            Err(ins) => ins - 1,
        };
        (CellId(cell), self.actions[cell][flat - self.offsets[cell]])
    }

    /// Flat offsets covering cell `l`'s action block.
    pub fn block(&self, cell: CellId) -> std::ops::Range<usize> {
        let start = self.offsets[cell.0];
        start..start + self.actions[cell.0].len()
    }
}

/// Q-values for every state-action pair.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    map: Arc<QIndexMap>,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(map: Arc<QIndexMap>) -> Self {
        let values = vec![0.0; map.len()];
        QTable { map, values }
    }

    pub fn from_values(map: Arc<QIndexMap>, values: Vec<f64>) -> Result<Self> {
        if values.len() != map.len() {
            return Err(Error::Shape(format!(
                "expected {} values, got {}",
                map.len(),
                values.len()
            )));
        }
        Ok(QTable { map, values })
    }

    pub fn map(&self) -> &Arc<QIndexMap> {
        &self.map
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, cell: CellId, dest: usize) -> Result<f64> {
        Ok(self.values[self.map.pair(cell, dest)?])
    }

    pub fn set(&mut self, cell: CellId, dest: usize, value: f64) -> Result<()> {
        let idx = self.map.pair(cell, dest)?;
        self.values[idx] = value;
        Ok(())
    }

    /// Best destination at a cell by Q-value; ties break to the smallest
    /// destination index.
    pub fn best_action(&self, cell: CellId) -> usize {
        let block = self.map.block(cell);
        let dests = self.map.actions(cell);
        let mut best = dests[0];
        let mut best_v = self.values[block.start];
        for (rank, &dest) in dests.iter().enumerate().skip(1) {
            let v = self.values[block.start + rank];
            if v > best_v {
                best_v = v;
                best = dest;
            }
        }
        best
    }

    /// Max Q over the cell's action set.
    pub fn best_value(&self, cell: CellId) -> f64 {
        let block = self.map.block(cell);
        self.values[block]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Per-cell action lists sorted by descending Q-value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPolicy {
    pub n_q: usize,
    /// `ranked[l]` is a permutation of the action set of cell `l`.
    pub ranked: Vec<Vec<usize>>,
}

impl RankedPolicy {
    /// Sort each cell's actions by Q descending, ties to smaller destination.
    pub fn from_qtable(q: &QTable) -> Self {
        let map = q.map();
        let ranked = (0..map.n_q())
            .map(|l| {
                let cell = CellId(l);
                let block = map.block(cell);
                let dests = map.actions(cell);
                let mut order: Vec<usize> = (0..dests.len()).collect();
                order.sort_by(|&a, &b| {
                    let qa = q.values()[block.start + a];
                    let qb = q.values()[block.start + b];
                    qb.partial_cmp(&qa)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(dests[a].cmp(&dests[b]))
                });
                order.into_iter().map(|r| dests[r]).collect()
            })
            .collect();
        RankedPolicy {
            n_q: map.n_q(),
            ranked,
        }
    }
}

/// On-disk form of a solved Q-table. Field names are part of the format.
#[derive(Debug, Serialize, Deserialize)]
pub struct QTableFile {
    pub version: u32,
    pub n_q: usize,
    pub gamma: f64,
    pub index_map: Vec<Vec<usize>>,
    pub values: Vec<f64>,
}

pub const QTABLE_FORMAT_VERSION: u32 = 1;

impl QTableFile {
    pub fn from_qtable(q: &QTable, gamma: f64) -> Self {
        QTableFile {
            version: QTABLE_FORMAT_VERSION,
            n_q: q.map().n_q(),
            gamma,
            index_map: q.map().action_lists().to_vec(),
            values: q.values().to_vec(),
        }
    }

    pub fn to_qtable(&self) -> Result<(QTable, f64)> {
        if self.version != QTABLE_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported q-table format version {}",
                self.version
            )));
        }
        if self.index_map.len() != self.n_q {
            return Err(Error::Shape("index_map length disagrees with n_q".into()));
        }
        let map = Arc::new(QIndexMap::new(self.index_map.clone())?);
        Ok((QTable::from_values(map, self.values.clone())?, self.gamma))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// On-disk form of a ranked policy.
#[derive(Debug, Serialize, Deserialize)]
pub struct RankedPolicyFile {
    pub version: u32,
    pub n_q: usize,
    pub ranked: Vec<Vec<usize>>,
}

impl RankedPolicyFile {
    pub fn from_policy(p: &RankedPolicy) -> Self {
        RankedPolicyFile {
            version: QTABLE_FORMAT_VERSION,
            n_q: p.n_q,
            ranked: p.ranked.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_map_indexing() {
        let map = QIndexMap::dense(3);
        assert_eq!(map.len(), 9);
        for l in 0..3 {
            for j in 0..3 {
                let flat = map.pair(CellId(l), j).unwrap();
                assert_eq!(flat, l * 3 + j);
                assert_eq!(map.unpair(flat), (CellId(l), j));
            }
        }
        assert!(map.pair(CellId(0), 3).is_err());
    }

    #[test]
    fn sparse_map_indexing() {
        let map = QIndexMap::new(vec![vec![0, 2], vec![1], vec![0, 1, 2]]).unwrap();
        assert_eq!(map.len(), 6);
        assert_eq!(map.pair(CellId(0), 2).unwrap(), 1);
        assert_eq!(map.pair(CellId(2), 0).unwrap(), 3);
        assert!(map.pair(CellId(0), 1).is_err());
        assert_eq!(map.unpair(2), (CellId(1), 1));
        for flat in 0..map.len() {
            let (c, d) = map.unpair(flat);
            assert_eq!(map.pair(c, d).unwrap(), flat);
        }
    }

    #[test]
    fn ranking_breaks_ties_to_smaller_destination() {
        let map = Arc::new(QIndexMap::dense(3));
        let mut q = QTable::zeros(map);
        q.set(CellId(0), 1, 5.0).unwrap();
        q.set(CellId(0), 2, 5.0).unwrap();
        q.set(CellId(0), 0, 1.0).unwrap();
        let ranked = RankedPolicy::from_qtable(&q);
        assert_eq!(ranked.ranked[0], vec![1, 2, 0]);
        assert_eq!(q.best_action(CellId(0)), 1);
    }

    #[test]
    fn qtable_file_roundtrip_is_stable() {
        let map = Arc::new(QIndexMap::dense(2));
        let mut q = QTable::zeros(map);
        q.set(CellId(0), 1, 1.25).unwrap();
        q.set(CellId(1), 0, -0.5).unwrap();
        let file = QTableFile::from_qtable(&q, 0.8);
        let text = file.to_json().unwrap();
        let reloaded = QTableFile::from_json(&text).unwrap();
        assert_eq!(reloaded.to_json().unwrap(), text);
        let (q2, gamma) = reloaded.to_qtable().unwrap();
        assert_eq!(q2, q);
        assert_eq!(gamma, 0.8);
    }
}

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{BipartiteGraph, Side};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&f| !(f > 0.0) || !f.is_finite()) {
            return Err(Error::Config(format!("split fractions must be positive: {self:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must sum to 1: {self:?}")));
        }
        Ok(())
    }

    /// Floor each share, then hand the remainder out by largest fractional
    /// part (ties to the earlier of train, val, test).
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let raw = [self.train * n as f64, self.val * n as f64, self.test * n as f64];
        let mut sizes = raw.map(|r| (r + 1e-9).floor() as usize);
        let mut left = n - sizes.iter().sum::<usize>().min(n);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let fa = raw[a] - raw[a].floor();
            let fb = raw[b] - raw[b].floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        for &k in order.iter().cycle() {
            if left == 0 {
                break;
            }
            sizes[k] += 1;
            left -= 1;
        }
        sizes
    }
}

/// Train/val/test membership for every labeled node (`None` for unlabeled ones).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    assignment: Vec<Option<Split>>,
    n_members: usize,
}

impl SplitAssignment {
    pub fn get(&self, flat: usize) -> Option<Split> {
        self.assignment[flat]
    }

    /// Flat indices in `split`, ascending.
    pub fn nodes(&self, split: Split) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == Some(split))
            .map(|(f, _)| f)
            .collect()
    }

    pub fn nodes_on_side(&self, split: Split, side: Side) -> Vec<usize> {
        self.nodes(split)
            .into_iter()
            .filter(|&f| (f < self.n_members) == (side == Side::Member))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }
}

pub(super) fn split(
    g: &BipartiteGraph,
    fractions: SplitFractions,
    seed: u64,
    stratify_labels: bool,
) -> Result<SplitAssignment> {
    fractions.validate()?;
    let mut assignment = vec![None; g.n_nodes()];
    for side in [Side::Member, Side::Job] {
        let labeled: Vec<usize> = g.side_range(side).filter(|&f| g.label(f).is_some()).collect();
        if labeled.len() < 3 {
            return Err(Error::Config(format!(
                "{side} side has {} labeled nodes; at least 3 are needed for a split",
                labeled.len()
            )));
        }
        let groups: Vec<Vec<usize>> = if stratify_labels {
            (0..2u8)
                .map(|l| labeled.iter().copied().filter(|&f| g.label(f) == Some(l)).collect())
                .collect()
        } else {
            vec![labeled]
        };
        for (gi, mut group) in groups.into_iter().enumerate() {
            let stream = format!("split/{side}/{gi}");
            group.shuffle(&mut seed::rng(seed, &stream));
            let [n_train, n_val, _] = fractions.sizes(group.len());
            for (k, f) in group.into_iter().enumerate() {
                assignment[f] = Some(if k < n_train {
                    Split::Train
                } else if k < n_train + n_val {
                    Split::Val
                } else {
                    Split::Test
                });
            }
        }
    }
    Ok(SplitAssignment {
        assignment,
        n_members: g.n_members(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::random_graph;

    #[test]
    fn sizes_exact_and_rounded() {
        let f = SplitFractions::default();
        assert_eq!(f.sizes(100), [80, 10, 10]);
        assert_eq!(f.sizes(7106), [5685, 711, 710]);
        for n in 0..500 {
            assert_eq!(f.sizes(n).iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn split_per_side_and_deterministic() {
        let g = random_graph(100, 40, 0.05, 4);
        let a = g.split_nodes(SplitFractions::default(), 3).unwrap();
        let b = g.split_nodes(SplitFractions::default(), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.nodes_on_side(Split::Train, Side::Member).len(), 80);
        assert_eq!(a.nodes_on_side(Split::Val, Side::Member).len(), 10);
        assert_eq!(a.nodes_on_side(Split::Test, Side::Job).len(), 4);
        let c = g.split_nodes(SplitFractions::default(), 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_rejects_bad_fractions_and_tiny_sides() {
        let g = random_graph(10, 2, 0.5, 1);
        assert!(g.split_nodes(SplitFractions::default(), 0).is_err());
        let g = random_graph(10, 10, 0.5, 1);
        let bad = SplitFractions {
            train: 0.5,
            val: 0.1,
            test: 0.1,
        };
        assert!(g.split_nodes(bad, 0).is_err());
    }

    #[test]
    fn stratified_split_balances_labels() {
        let g = random_graph(200, 200, 0.01, 8);
        let s = g.split_nodes_stratified(SplitFractions::default(), 1).unwrap();
        for side in [Side::Member, Side::Job] {
            for l in 0..2u8 {
                let total = g.side_range(side).filter(|&f| g.label(f) == Some(l)).count();
                let train = s
                    .nodes_on_side(Split::Train, side)
                    .into_iter()
                    .filter(|&f| g.label(f) == Some(l))
                    .count();
                assert_eq!(train, SplitFractions::default().sizes(total)[0]);
            }
        }
    }
}

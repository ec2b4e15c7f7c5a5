//! Count-based train/val/test split over accepted grids.
//!
//! For every class, grids are ranked by that class's pixel count (ties by
//! grid id). A uniform rank cutoff `k` is raised until the union of all
//! classes' top-`k` grids first covers the training share of the grids;
//! that union is the training set. The same procedure on the remaining
//! grids, with the validation share of the remainder as target, yields the
//! validation set. Everything left is test.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curation::GridLabelStats;
use crate::error::{Error, Result};
use crate::grid::GridId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Excluded,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Excluded => "excluded",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "excluded" => Ok(Split::Excluded),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitTargets {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitTargets {
    fn default() -> Self {
        SplitTargets {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitTargets {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p))
            || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-6
        {
            return Err(Error::Config(format!(
                "split targets {}/{}/{} must be fractions summing to 1",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMethod {
    RankCutoff,
    RandomStratified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub method: SplitMethod,
    pub assignments: BTreeMap<GridId, Split>,
    pub warnings: Vec<String>,
}

impl SplitAssignment {
    pub fn grids(&self, split: Split) -> Vec<GridId> {
        self.assignments
            .iter()
            .filter(|(_, &s)| s == split)
            .map(|(g, _)| g.clone())
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.assignments.values().filter(|&&s| s == split).count()
    }
}

fn share(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Grids selected by the smallest uniform per-class rank cutoff whose
/// union reaches `target` grids, never more than `limit`.
fn rank_cutoff_union(grids: &[&GridLabelStats], target: usize, limit: usize) -> BTreeSet<GridId> {
    let limit = limit.min(grids.len());
    let target = target.min(limit);
    let mut selected = BTreeSet::new();
    if target == 0 {
        return selected;
    }
    let classes = grids
        .iter()
        .map(|g| g.class_counts.len())
        .max()
        .unwrap_or(0);
    let rankings: Vec<Vec<&GridId>> = (1..classes)
        .map(|c| {
            let mut ranked: Vec<&GridLabelStats> = grids
                .iter()
                .copied()
                .filter(|g| g.class_counts.get(c).copied().unwrap_or(0) > 0)
                .collect();
            ranked.sort_by(|a, b| {
                b.class_counts[c]
                    .cmp(&a.class_counts[c])
                    .then_with(|| a.grid.cmp(&b.grid))
            });
            ranked.into_iter().map(|g| &g.grid).collect()
        })
        .filter(|r: &Vec<&GridId>| !r.is_empty())
        .collect();
    let longest = rankings.iter().map(Vec::len).max().unwrap_or(0);
    for k in 0..longest {
        for ranking in &rankings {
            if let Some(g) = ranking.get(k) {
                if selected.len() < limit {
                    selected.insert((*g).clone());
                }
            }
        }
        if selected.len() >= target {
            return selected;
        }
    }
    // Grids with no class pixels at all are taken in id order.
    let mut rest: Vec<&GridId> = grids
        .iter()
        .map(|g| &g.grid)
        .filter(|g| !selected.contains(*g))
        .collect();
    rest.sort();
    for g in rest {
        if selected.len() >= target {
            break;
        }
        selected.insert(g.clone());
    }
    selected
}

/// Splits accepted grids; see the module docs for the procedure.
///
/// With fewer grids than represented classes the rank procedure is
/// meaningless and a seeded random split stratified by dominant class is
/// used instead.
pub fn split_grids(
    accepted: &[GridLabelStats],
    targets: SplitTargets,
    seed: u64,
) -> Result<SplitAssignment> {
    targets.validate()?;
    if accepted.len() < 3 {
        return Err(Error::Config(format!(
            "splitting needs at least 3 accepted grids, got {}",
            accepted.len()
        )));
    }
    let mut ids = BTreeSet::new();
    for g in accepted {
        if !ids.insert(&g.grid) {
            return Err(Error::Contract(format!("grid {} listed twice", g.grid)));
        }
    }
    let present_classes = accepted
        .iter()
        .flat_map(|g| {
            g.class_counts
                .iter()
                .enumerate()
                .skip(1)
                .filter(|(_, &n)| n > 0)
                .map(|(c, _)| c)
        })
        .collect::<BTreeSet<_>>()
        .len();
    if accepted.len() < present_classes {
        let msg = format!(
            "{} grids for {present_classes} classes; using seeded random stratified split",
            accepted.len()
        );
        log::warn!("{msg}");
        let mut out = random_stratified(accepted, targets, seed);
        out.warnings.push(msg);
        return Ok(out);
    }

    let all: Vec<&GridLabelStats> = accepted.iter().collect();
    // Later splits with a non-zero target keep at least one grid.
    let reserve = |fractions: &[f64]| fractions.iter().filter(|&&f| f > 0.0).count();
    let train = rank_cutoff_union(
        &all,
        share(targets.train, all.len()),
        all.len()
            .saturating_sub(reserve(&[targets.val, targets.test])),
    );
    let remainder: Vec<&GridLabelStats> = all
        .iter()
        .copied()
        .filter(|g| !train.contains(&g.grid))
        .collect();
    let val_share = if targets.val + targets.test > 0.0 {
        targets.val / (targets.val + targets.test)
    } else {
        0.0
    };
    let val = rank_cutoff_union(
        &remainder,
        share(val_share, remainder.len()),
        remainder.len().saturating_sub(reserve(&[targets.test])),
    );

    let assignments = accepted
        .iter()
        .map(|g| {
            let s = if train.contains(&g.grid) {
                Split::Train
            } else if val.contains(&g.grid) {
                Split::Val
            } else {
                Split::Test
            };
            (g.grid.clone(), s)
        })
        .collect();
    Ok(SplitAssignment {
        method: SplitMethod::RankCutoff,
        assignments,
        warnings: Vec::new(),
    })
}

fn random_stratified(
    accepted: &[GridLabelStats],
    targets: SplitTargets,
    seed: u64,
) -> SplitAssignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dominant = |g: &GridLabelStats| {
        g.class_counts
            .iter()
            .enumerate()
            .skip(1)
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map_or(0, |(c, _)| c)
    };
    let mut strata: BTreeMap<usize, Vec<&GridLabelStats>> = BTreeMap::new();
    let mut sorted: Vec<&GridLabelStats> = accepted.iter().collect();
    sorted.sort_by(|a, b| a.grid.cmp(&b.grid));
    for g in sorted {
        strata.entry(dominant(g)).or_default().push(g);
    }
    let fractions = [
        (Split::Train, targets.train),
        (Split::Val, targets.val),
        (Split::Test, targets.test),
    ];
    let mut counts = [0usize; 3];
    let mut assignments = BTreeMap::new();
    let mut seen = 0usize;
    for members in strata.values_mut() {
        members.shuffle(&mut rng);
        for g in members.iter() {
            seen += 1;
            // Assign to the split furthest below its target share.
            let (idx, _) = fractions
                .iter()
                .enumerate()
                .map(|(i, (_, f))| (i, f * seen as f64 - counts[i] as f64))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                .expect("three splits");
            counts[idx] += 1;
            assignments.insert(g.grid.clone(), fractions[idx].0);
        }
    }
    SplitAssignment {
        method: SplitMethod::RandomStratified,
        assignments,
        warnings: Vec::new(),
    }
}

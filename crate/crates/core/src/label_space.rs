//! Multi-label count tables grouped by multiplicity.
//!
//! A [`LabelDistribution`] holds the raw sample counts `r(m, S)` for every
//! label set `S` of size `m`. All counting statistics used downstream (group
//! totals, per-class group counts, label-set probabilities, the worst-set
//! rarity term) are derived from it on demand. Counts stay integral so the
//! counting identities are exact; probabilities are produced in `f64` only
//! when asked for.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A sorted set of distinct class indices in `[0, K)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabelSet(Vec<usize>);

impl LabelSet {
    /// Sorts and deduplicates `classes`, then checks `1 <= |S| <= K - 1` and
    /// that every index is below `k`.
    pub fn new(classes: impl IntoIterator<Item = usize>, k: usize) -> Result<Self> {
        let mut classes: Vec<usize> = classes.into_iter().collect();
        classes.sort_unstable();
        classes.dedup();
        if classes.is_empty() {
            return Err(Error::InvalidLabelSet("label set is empty".into()));
        }
        if let Some(&bad) = classes.iter().find(|&&c| c >= k) {
            return Err(Error::InvalidLabelSet(format!(
                "class index {bad} out of range for K = {k}"
            )));
        }
        if classes.len() >= k {
            return Err(Error::InvalidLabelSet(format!(
                "|S| = {} must be at most K - 1 = {}",
                classes.len(),
                k - 1
            )));
        }
        Ok(Self(classes))
    }

    pub fn classes(&self) -> &[usize] {
        &self.0
    }

    /// Multiplicity `m = |S|`.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, class: usize) -> bool {
        self.0.binary_search(&class).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    /// Indicator vector `1_S` of length `k`.
    pub fn indicator(&self, k: usize) -> Vec<f64> {
        let mut y = vec![0.0; k];
        for &c in &self.0 {
            y[c] = 1.0;
        }
        y
    }

    /// Parses the comma-separated form produced by `Display`, e.g. `"0,3"`.
    pub fn parse(text: &str, k: usize) -> Result<Self> {
        let classes = text
            .split(',')
            .map(|s| {
                s.trim().parse::<usize>().map_err(|_| {
                    Error::InvalidLabelSet(format!("cannot parse class index {s:?}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(classes, k)
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

/// Count table `{r(m, S)}` over label sets grouped by multiplicity.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    k: usize,
    groups: BTreeMap<usize, BTreeMap<LabelSet, u64>>,
}

impl LabelDistribution {
    /// Builds a table from `(m, [(classes, count)])` groups.
    ///
    /// Every set must have exactly `m` classes, a label set may appear only
    /// once per group, and each group must have a positive total.
    pub fn from_groups(
        k: usize,
        groups: impl IntoIterator<Item = (usize, Vec<(Vec<usize>, u64)>)>,
    ) -> Result<Self> {
        if k < 2 {
            return Err(Error::Domain(format!("K = {k} must be at least 2")));
        }
        let mut table: BTreeMap<usize, BTreeMap<LabelSet, u64>> = BTreeMap::new();
        for (m, sets) in groups {
            if m == 0 || m >= k {
                return Err(Error::Domain(format!(
                    "multiplicity {m} outside 1..={}",
                    k - 1
                )));
            }
            let group = table.entry(m).or_default();
            for (classes, count) in sets {
                let raw_len = classes.len();
                let set = LabelSet::new(classes, k)?;
                if set.len() != m || raw_len != m {
                    return Err(Error::InvalidLabelSet(format!(
                        "set {set} listed under multiplicity {m} has {raw_len} entries"
                    )));
                }
                if group.contains_key(&set) {
                    return Err(Error::DuplicateLabelSet {
                        m,
                        set: set.classes().to_vec(),
                    });
                }
                group.insert(set, count);
            }
        }
        if table.is_empty() {
            return Err(Error::Domain("count table has no groups".into()));
        }
        for (&m, group) in &table {
            if group.values().sum::<u64>() == 0 {
                return Err(Error::Domain(format!("group total N_{m} is zero")));
            }
        }
        Ok(Self { k, groups: table })
    }

    /// Builds a table from a flat list of `(classes, count)`; each entry is
    /// filed under its own size.
    pub fn from_entries(
        k: usize,
        entries: impl IntoIterator<Item = (Vec<usize>, u64)>,
    ) -> Result<Self> {
        let mut grouped: BTreeMap<usize, Vec<(Vec<usize>, u64)>> = BTreeMap::new();
        for (classes, count) in entries {
            let mut distinct = classes.clone();
            distinct.sort_unstable();
            distinct.dedup();
            grouped.entry(distinct.len()).or_default().push((classes, count));
        }
        Self::from_groups(k, grouped)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Largest multiplicity present.
    pub fn max_multiplicity(&self) -> usize {
        *self.groups.keys().next_back().expect("nonempty by construction")
    }

    pub fn multiplicities(&self) -> impl Iterator<Item = usize> + '_ {
        self.groups.keys().copied()
    }

    pub fn group(&self, m: usize) -> Result<&BTreeMap<LabelSet, u64>> {
        self.groups.get(&m).ok_or(Error::UnknownMultiplicity(m))
    }

    /// `N`, the total number of samples.
    pub fn total(&self) -> u64 {
        self.groups.values().flat_map(|g| g.values()).sum()
    }

    /// `N_m = sum_S r(m, S)`.
    pub fn group_total(&self, m: usize) -> Result<u64> {
        Ok(self.group(m)?.values().sum())
    }

    /// `N_m^k` for every class `k`: the number of multiplicity-`m` samples
    /// whose label set contains `k`.
    pub fn class_counts(&self, m: usize) -> Result<Vec<u64>> {
        let mut counts = vec![0u64; self.k];
        for (set, &r) in self.group(m)? {
            for c in set.iter() {
                counts[c] += r;
            }
        }
        Ok(counts)
    }

    /// `p(m, S) = r(m, S) / N_m` for every listed set.
    pub fn probabilities(&self, m: usize) -> Result<Vec<(LabelSet, f64)>> {
        let n_m = self.group_total(m)? as f64;
        Ok(self
            .group(m)?
            .iter()
            .map(|(s, &r)| (s.clone(), r as f64 / n_m))
            .collect())
    }

    /// Every `(m, class)` pair with `N_m^k = 0`.
    pub fn coverage_gaps(&self) -> Vec<(usize, usize)> {
        let mut gaps = Vec::new();
        for &m in self.groups.keys() {
            let counts = self.class_counts(m).expect("present");
            gaps.extend(
                counts
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c == 0)
                    .map(|(k, _)| (m, k)),
            );
        }
        gaps
    }

    /// Fails on the first class missing from a multiplicity group.
    pub fn check_coverage(&self) -> Result<()> {
        match self.coverage_gaps().first() {
            Some(&(m, class)) => Err(Error::DegenerateDistribution { m, class }),
            None => Ok(()),
        }
    }

    /// `max_{|S| = m} sum_{j in S} 1 / N_m^j` over all size-`m` subsets of
    /// `[K]`, realized as the sum of the `m` largest reciprocals.
    pub fn worst_set_term(&self, m: usize) -> Result<f64> {
        let counts = self.class_counts(m)?;
        if let Some(class) = counts.iter().position(|&c| c == 0) {
            return Err(Error::DegenerateDistribution { m, class });
        }
        let mut recip: Vec<f64> = counts.iter().map(|&c| 1.0 / c as f64).collect();
        recip.sort_by(|a, b| b.total_cmp(a));
        Ok(recip.iter().take(m).sum())
    }

    /// Relabels class `c` as `perm[c]` throughout the table.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.k {
            return Err(Error::Domain("permutation length differs from K".into()));
        }
        let mut seen = vec![false; self.k];
        for &p in perm {
            if p >= self.k || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Domain("not a permutation".into()));
            }
        }
        let groups = self.groups.iter().map(|(&m, g)| {
            let sets = g
                .iter()
                .map(|(s, &r)| (s.iter().map(|c| perm[c]).collect(), r))
                .collect();
            (m, sets)
        });
        Self::from_groups(self.k, groups)
    }

    pub fn to_table(&self) -> CountTable {
        CountTable {
            k: self.k,
            groups: self
                .groups
                .iter()
                .map(|(&m, g)| GroupEntry {
                    m,
                    sets: g
                        .iter()
                        .map(|(s, &count)| SetEntry {
                            classes: s.classes().to_vec(),
                            count,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let table: CountTable = serde_json::from_str(text)?;
        table.build()
    }
}

/// JSON form of a count table:
/// `{"K": int, "groups": [{"m": int, "sets": [{"classes": [int...], "count": int}]}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountTable {
    #[serde(rename = "K")]
    pub k: usize,
    pub groups: Vec<GroupEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupEntry {
    pub m: usize,
    pub sets: Vec<SetEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetEntry {
    pub classes: Vec<usize>,
    pub count: u64,
}

impl CountTable {
    pub fn build(&self) -> Result<LabelDistribution> {
        let mut seen = std::collections::BTreeSet::new();
        for g in &self.groups {
            if !seen.insert(g.m) {
                return Err(Error::Config(format!("multiplicity {} listed twice", g.m)));
            }
        }
        LabelDistribution::from_groups(
            self.k,
            self.groups.iter().map(|g| {
                (
                    g.m,
                    g.sets.iter().map(|s| (s.classes.clone(), s.count)).collect(),
                )
            }),
        )
    }
}

/// Scenario generators for the count profiles used in experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scenario {
    /// `n1` samples per singleton and `n2` per class pair (pairs omitted
    /// when `n2` is zero).
    Balanced {
        k: usize,
        n1: u64,
        #[serde(default)]
        n2: u64,
    },
    /// As `Balanced`, then the singleton counts of `subset` are scaled by
    /// `ratio` and rounded down. Pair counts are untouched. `subset`
    /// defaults to the upper half of the classes.
    MultiplicityOneImbalance {
        k: usize,
        n1: u64,
        #[serde(default)]
        n2: u64,
        ratio: f64,
        #[serde(default)]
        subset: Option<Vec<usize>>,
    },
    Custom { table: CountTable },
}

impl Scenario {
    pub fn build(&self) -> Result<LabelDistribution> {
        match self {
            Scenario::Balanced { k, n1, n2 } => balanced_table(*k, |_| *n1, *n2),
            Scenario::MultiplicityOneImbalance {
                k,
                n1,
                n2,
                ratio,
                subset,
            } => {
                if !(*ratio > 0.0 && *ratio <= 1.0) {
                    return Err(Error::Config(format!(
                        "imbalance ratio {ratio} must lie in (0, 1]"
                    )));
                }
                let subset: Vec<usize> = match subset {
                    Some(s) => s.clone(),
                    None => (k - k / 2..*k).collect(),
                };
                if subset.is_empty() {
                    return Err(Error::Config("downsampled class subset is empty".into()));
                }
                if let Some(&bad) = subset.iter().find(|&&c| c >= *k) {
                    return Err(Error::Config(format!(
                        "downsampled class {bad} out of range for K = {k}"
                    )));
                }
                // Guard against 3100 * 0.1 landing a hair under 310.
                let reduced = ((*n1 as f64) * ratio + 1e-9).floor() as u64;
                balanced_table(
                    *k,
                    |c| if subset.contains(&c) { reduced } else { *n1 },
                    *n2,
                )
            }
            Scenario::Custom { table } => table.build(),
        }
    }
}

fn balanced_table(k: usize, n1: impl Fn(usize) -> u64, n2: u64) -> Result<LabelDistribution> {
    let mut groups = vec![(1, (0..k).map(|c| (vec![c], n1(c))).collect())];
    if n2 > 0 {
        if k < 3 {
            return Err(Error::Config("pairs require K >= 3".into()));
        }
        let pairs = (0..k)
            .flat_map(|a| (a + 1..k).map(move |b| (vec![a, b], n2)))
            .collect();
        groups.push((2, pairs));
    }
    LabelDistribution::from_groups(k, groups)
}

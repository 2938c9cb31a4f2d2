//! Dataset manifests and reproducible train/validation/test splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::Species;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    /// Geometry file as it was given to featurization.
    pub geometry: String,
    /// Frame index inside the geometry file.
    #[serde(default)]
    pub frame: usize,
    pub charge: i32,
    pub multiplicity: u32,
    #[serde(default)]
    pub field: Option<[f64; 3]>,
    #[serde(default)]
    pub labels: BTreeMap<String, f64>,
    pub species: Species,
    #[serde(default)]
    pub split: Option<Split>,
    #[serde(default)]
    pub parent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Unique ids, and no parent id spread over two splits.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::InvariantViolation(format!(
                    "duplicate record id `{}`",
                    r.id
                )));
            }
        }
        let mut parent_split: BTreeMap<&str, Split> = BTreeMap::new();
        for r in &self.records {
            if let (Some(p), Some(s)) = (&r.parent, r.split) {
                if let Some(prev) = parent_split.insert(p.as_str(), s) {
                    if prev != s {
                        return Err(Error::InvariantViolation(format!(
                            "parent `{p}` appears in more than one split"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == Some(split))
    }
}

/// Record indices that must share a split: one group per parent id, singletons otherwise.
fn groups(records: &[ManifestRecord]) -> Vec<Vec<usize>> {
    let mut by_parent: BTreeMap<&str, usize> = BTreeMap::new();
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        match &r.parent {
            Some(p) => {
                let g = *by_parent.entry(p.as_str()).or_insert_with(|| {
                    out.push(Vec::new());
                    out.len() - 1
                });
                out[g].push(i);
            }
            None => out.push(vec![i]),
        }
    }
    out
}

/// Apportions `n` items over `fractions`. `credit` carries the rounding
/// residue between calls, so successive strata spread their remainders over
/// the splits instead of all rounding the same way.
fn apportion(n: usize, fractions: &[f64; 3], credit: &mut [f64; 3]) -> [usize; 3] {
    let want = ((n as f64 * fractions.iter().sum::<f64>() + 1e-9).floor() as usize).min(n);
    let mut counts = [0usize; 3];
    for k in 0..3 {
        credit[k] += n as f64 * fractions[k];
        counts[k] = (credit[k] + 1e-9).floor().max(0.0) as usize;
    }
    let residual = |c: &[usize; 3], k: usize| credit[k] - c[k] as f64;
    while counts.iter().sum::<usize>() > want {
        let k = (0..3)
            .filter(|&k| counts[k] > 0)
            .min_by(|&a, &b| residual(&counts, a).total_cmp(&residual(&counts, b)))
            .expect("some count is positive");
        counts[k] -= 1;
    }
    while counts.iter().sum::<usize>() < want {
        let k = (0..3)
            .filter(|&k| fractions[k] > 0.0)
            .max_by(|&a, &b| {
                residual(&counts, a)
                    .total_cmp(&residual(&counts, b))
                    .then(b.cmp(&a))
            })
            .expect("some fraction is positive");
        counts[k] += 1;
    }
    for k in 0..3 {
        credit[k] -= counts[k] as f64;
    }
    counts
}

/// Assigns records to train/val/test with the given fractions (their sum may be
/// below 1; the rest stays unassigned). Records sharing a parent id always land
/// in the same split. With `balance_by_species` every species is apportioned on
/// its own and each split is then trimmed to equal counts of the species it
/// holds.
pub fn split_dataset(
    manifest: &DatasetManifest,
    fractions: [f64; 3],
    seed: u64,
    balance_by_species: bool,
) -> Result<DatasetManifest> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || fractions.iter().sum::<f64>() > 1.0 + 1e-12 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be non-negative and sum to at most 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = manifest.clone();
    out.records.iter_mut().for_each(|r| r.split = None);
    let mut all = groups(&manifest.records);
    all.shuffle(&mut rng);

    // strata: all groups together, or one stratum per species signature
    let mut strata: BTreeMap<Vec<Species>, Vec<Vec<usize>>> = BTreeMap::new();
    for g in all {
        let key = if balance_by_species {
            let mut s: Vec<Species> = g.iter().map(|&i| manifest.records[i].species).collect();
            s.sort();
            s.dedup();
            s
        } else {
            Vec::new()
        };
        strata.entry(key).or_default().push(g);
    }
    let mut credit = [0.0; 3];
    for groups in strata.values() {
        let n: usize = groups.iter().map(Vec::len).sum();
        let target = apportion(n, &fractions, &mut credit);
        let bounds = [
            target[0],
            target[0] + target[1],
            target[0] + target[1] + target[2],
        ];
        let mut seen = 0;
        for g in groups {
            if let Some(k) = (0..3).find(|&k| seen < bounds[k]) {
                for &i in g {
                    out.records[i].split = Some(Split::ALL[k]);
                }
            }
            seen += g.len();
        }
    }

    if balance_by_species {
        for split in Split::ALL {
            let mut per: BTreeMap<Species, Vec<usize>> = BTreeMap::new();
            for (i, r) in out.records.iter().enumerate() {
                if r.split == Some(split) {
                    per.entry(r.species).or_default().push(i);
                }
            }
            let keep = per.values().map(Vec::len).min().unwrap_or(0);
            for idx in per.values() {
                for &i in &idx[keep..] {
                    out.records[i].split = None;
                }
            }
        }
        for (k, split) in Split::ALL.iter().enumerate() {
            if fractions[k] > 0.0 && out.in_split(*split).next().is_none() {
                return Err(Error::InsufficientData(format!(
                    "a species-balanced {split:?} split is empty with {} records",
                    manifest.records.len()
                )));
            }
        }
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: usize, species: Species, parent: Option<&str>) -> ManifestRecord {
        let (charge, multiplicity) = match species {
            Species::Neutral => (0, 1),
            Species::Radical => (0, 2),
            Species::Cation => (1, 2),
            Species::Anion => (-1, 2),
        };
        ManifestRecord {
            id: format!("m{id}"),
            geometry: format!("m{id}.xyz"),
            frame: 0,
            charge,
            multiplicity,
            field: None,
            labels: BTreeMap::new(),
            species,
            split: None,
            parent: parent.map(str::to_string),
        }
    }

    fn counts(m: &DatasetManifest, split: Split) -> BTreeMap<Species, usize> {
        let mut c = BTreeMap::new();
        for r in m.in_split(split) {
            *c.entry(r.species).or_default() += 1;
        }
        c
    }

    #[test]
    fn balanced_eight() {
        let m = DatasetManifest {
            records: (0..8)
                .map(|i| record(i, Species::ALL[i % 4], None))
                .collect(),
        };
        let s = split_dataset(&m, [0.5, 0.25, 0.25], 1, true).unwrap();
        let train = counts(&s, Split::Train);
        assert_eq!(train.len(), 4);
        assert!(train.values().all(|&c| c == 1));
        for split in [Split::Val, Split::Test] {
            let c = counts(&s, split);
            assert_eq!(c.values().sum::<usize>(), 2);
            assert!(c.values().all(|&c| c == 1));
        }
    }

    #[test]
    fn same_seed_same_assignment() {
        let m = DatasetManifest {
            records: (0..40)
                .map(|i| record(i, Species::ALL[i % 3], None))
                .collect(),
        };
        let a = split_dataset(&m, [0.8, 0.1, 0.1], 9, false).unwrap();
        let b = split_dataset(&m, [0.8, 0.1, 0.1], 9, false).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(&m, [0.8, 0.1, 0.1], 10, false).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.in_split(Split::Train).count(), 32);
    }

    #[test]
    fn parents_stay_together() {
        // two records per parent, odd boundaries so naive splitting would cut a pair
        let m = DatasetManifest {
            records: (0..10)
                .map(|i| record(i, Species::Neutral, Some(&format!("p{}", i / 2))))
                .collect(),
        };
        for seed in 0..20 {
            let s = split_dataset(&m, [0.5, 0.3, 0.2], seed, false).unwrap();
            for pair in s.records.chunks(2) {
                assert_eq!(pair[0].split, pair[1].split);
            }
            s.validate().unwrap();
        }
    }

    #[test]
    fn unbalanceable_is_insufficient() {
        let m = DatasetManifest {
            records: vec![
                record(0, Species::Neutral, None),
                record(1, Species::Anion, None),
            ],
        };
        assert!(matches!(
            split_dataset(&m, [0.5, 0.25, 0.25], 0, true),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn straddling_parent_is_refused_by_validation() {
        let mut m = DatasetManifest {
            records: vec![
                record(0, Species::Neutral, Some("p")),
                record(1, Species::Cation, Some("p")),
            ],
        };
        m.records[0].split = Some(Split::Train);
        m.records[1].split = Some(Split::Test);
        assert!(m.validate().is_err());
    }
}

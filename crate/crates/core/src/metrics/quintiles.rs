use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{bootstrap_ci, MetricsError};
use crate::corpus::{BlsKey, BlsRow, BlsTable};

/// Professions split into five bins, lowest `key` first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuintileBins {
    pub key: BlsKey,
    pub bins: Vec<Vec<BlsRow>>,
}

impl QuintileBins {
    pub fn sizes(&self) -> Vec<usize> {
        self.bins.iter().map(Vec::len).collect()
    }

    /// Mean of `key` within each bin.
    pub fn means(&self) -> Vec<f64> {
        self.bins
            .iter()
            .map(|b| b.iter().map(|r| r.value(self.key)).sum::<f64>() / b.len() as f64)
            .collect()
    }
}

/// Sorts ascending by `key` (ties by name) and cuts into five contiguous
/// bins whose sizes differ by at most one, larger bins first.
pub fn quintile_bins(bls: &BlsTable, key: BlsKey) -> Result<QuintileBins, MetricsError> {
    let n = bls.len();
    if n < 5 {
        return Err(MetricsError::TooFewProfessions(n));
    }
    let mut rows = bls.rows().to_vec();
    rows.sort_by(|a, b| a.value(key).total_cmp(&b.value(key)).then_with(|| a.profession.cmp(&b.profession)));
    let mut rest = rows.into_iter();
    let bins = (0..5)
        .map(|i| rest.by_ref().take(n / 5 + usize::from(i < n % 5)).collect())
        .collect();
    Ok(QuintileBins { key, bins })
}

/// Cluster ids of each image, per system and profession.
pub type ProfessionAssignments = BTreeMap<String, BTreeMap<String, Vec<u32>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupShare {
    pub share_pct: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuintileRow {
    pub professions: Vec<String>,
    pub bls_mean: f64,
    pub systems: BTreeMap<String, GroupShare>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuintileReport {
    pub ranking_key: BlsKey,
    pub region_group: Vec<u32>,
    pub level: f64,
    pub bootstrap_b: usize,
    pub seed: u64,
    pub quintiles: Vec<QuintileRow>,
    /// Professions left out of a pool, one line each.
    pub errata: Vec<String>,
}

/// Per quintile and system, the percentage of pooled images assigned to
/// `region_group`, with a bootstrap interval over the pooled images.
pub fn quintile_report(
    assignments: &ProfessionAssignments,
    region_group: &BTreeSet<u32>,
    bins: &QuintileBins,
    level: f64,
    b: usize,
    seed: u64,
) -> Result<QuintileReport, MetricsError> {
    let mut errata = Vec::new();
    let mut quintiles = Vec::with_capacity(bins.bins.len());
    let means = bins.means();
    for (bin, &bls_mean) in bins.bins.iter().zip(&means) {
        let mut systems = BTreeMap::new();
        for (system, per_profession) in assignments {
            let mut pooled: Vec<bool> = Vec::new();
            for row in bin {
                match per_profession.get(&row.profession) {
                    Some(a) if !a.is_empty() => pooled.extend(a.iter().map(|c| region_group.contains(c))),
                    _ => errata.push(format!("{system}: no assignments for {:?}", row.profession)),
                }
            }
            if pooled.is_empty() {
                continue;
            }
            let share = |s: &[bool]| 100.0 * s.iter().filter(|&&x| x).count() as f64 / s.len() as f64;
            let share_pct = share(&pooled);
            let (ci_low, ci_high) = if pooled.len() < 2 {
                (share_pct, share_pct)
            } else {
                bootstrap_ci(&pooled, share, level, b, seed)?
            };
            systems.insert(system.clone(), GroupShare { share_pct, ci_low, ci_high, n: pooled.len() });
        }
        quintiles.push(QuintileRow {
            professions: bin.iter().map(|r| r.profession.clone()).collect(),
            bls_mean,
            systems,
        });
    }
    Ok(QuintileReport {
        ranking_key: bins.key,
        region_group: region_group.iter().copied().collect(),
        level,
        bootstrap_b: b,
        seed,
        quintiles,
        errata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(n: usize) -> BlsTable {
        BlsTable::new(
            (0..n)
                .map(|i| BlsRow {
                    profession: format!("p{i:03}"),
                    pct_women: ((i * 37) % 100) as f64,
                    pct_black: (i % 7) as f64,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn bin_sizes() {
        assert_eq!(quintile_bins(&table(146), BlsKey::PctWomen).unwrap().sizes(), vec![30, 29, 29, 29, 29]);
        assert_eq!(quintile_bins(&table(5), BlsKey::PctWomen).unwrap().sizes(), vec![1; 5]);
        assert_eq!(quintile_bins(&table(13), BlsKey::PctBlack).unwrap().sizes(), vec![3, 3, 3, 2, 2]);
        assert_eq!(quintile_bins(&table(4), BlsKey::PctWomen), Err(MetricsError::TooFewProfessions(4)));
    }

    #[test]
    fn bins_are_sorted_with_name_ties() {
        let bins = quintile_bins(&table(40), BlsKey::PctBlack).unwrap();
        let flat: Vec<&BlsRow> = bins.bins.iter().flatten().collect();
        assert_eq!(flat.len(), 40);
        assert!(flat.windows(2).all(|w| {
            (w[0].pct_black, &w[0].profession) <= (w[1].pct_black, &w[1].profession)
        }));
    }

    #[test]
    fn missing_professions_go_to_errata() {
        let bins = quintile_bins(&table(5), BlsKey::PctWomen).unwrap();
        let mut per = BTreeMap::new();
        for row in bins.bins.iter().flatten().skip(1) {
            per.insert(row.profession.clone(), vec![0, 1, 1, 0]);
        }
        let assignments = ProfessionAssignments::from([("sys".to_owned(), per)]);
        let report = quintile_report(&assignments, &BTreeSet::from([1]), &bins, 0.95, 100, 3).unwrap();
        assert_eq!(report.errata.len(), 1);
        assert!(report.quintiles[0].systems.is_empty());
        for q in &report.quintiles[1..] {
            assert_eq!(q.systems["sys"].share_pct, 50.0);
        }
    }
}

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::clusters::RegionSummary;
use crate::corpus::Gender;
use crate::vocab::{self, UNSPECIFIED};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionAttribute {
    Gender,
    Ethnicity,
}

/// Regions whose top `rank_max` phrases for `attribute` include `phrase`.
pub fn select_region_group(
    summaries: &[RegionSummary],
    attribute: RegionAttribute,
    phrase: &str,
    rank_max: usize,
) -> Result<BTreeSet<u32>, MetricsError> {
    let known = match attribute {
        RegionAttribute::Gender => Gender::parse(phrase).is_some_and(|g| g.phrase() == phrase),
        RegionAttribute::Ethnicity => phrase == UNSPECIFIED || vocab::is_known_ethnicity(phrase),
    };
    if !known {
        let kind = match attribute {
            RegionAttribute::Gender => "gender",
            RegionAttribute::Ethnicity => "ethnicity",
        };
        return Err(MetricsError::UnknownPhrase { kind, phrase: phrase.to_owned() });
    }
    Ok(summaries
        .iter()
        .filter(|s| {
            let ranked = match attribute {
                RegionAttribute::Gender => &s.top_gender,
                RegionAttribute::Ethnicity => &s.top_ethnicity,
            };
            ranked.iter().take(rank_max).any(|(p, _)| p == phrase)
        })
        .map(|s| s.cluster)
        .collect())
}

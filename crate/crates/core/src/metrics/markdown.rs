//! Markdown renderings of the report documents.

use std::fmt::Write;

use super::{DiversityReport, MarkerStats, QuintileReport, TextSource};
use crate::clusters::RegionSummary;

const QUINTILE_NAMES: [&str; 5] = ["Low 20%", "20-40%", "40-60%", "60-80%", "Top 20%"];

fn phrases(ranked: &[(String, f64)], top: usize) -> String {
    ranked.iter().take(top).map(|(p, _)| p.as_str()).collect::<Vec<_>>().join(", ")
}

/// Regions by descending share with their top prompt phrases.
pub fn regions_markdown(summaries: &[RegionSummary], top_gender: usize, top_ethnicity: usize) -> String {
    let mut rows: Vec<&RegionSummary> = summaries.iter().collect();
    rows.sort_by(|a, b| b.share.total_cmp(&a.share).then(a.cluster.cmp(&b.cluster)));
    let mut out = String::from("| Region | Share | Top gender phrases | Top ethnicity phrases |\n|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {:.1}% | {} | {} |",
            r.cluster,
            100.0 * r.share,
            phrases(&r.top_gender, top_gender),
            phrases(&r.top_ethnicity, top_ethnicity)
        );
    }
    out
}

pub fn quintiles_markdown(report: &QuintileReport) -> String {
    let systems: Vec<&String> = {
        let mut s: Vec<&String> = report.quintiles.iter().flat_map(|q| q.systems.keys()).collect();
        s.sort();
        s.dedup();
        s
    };
    let mut out = format!(
        "Ranked by `{}`; region group {:?}; {:.0}% bootstrap intervals (B = {}).\n\n| Quintile | BLS |",
        report.ranking_key.name(),
        report.region_group,
        100.0 * report.level,
        report.bootstrap_b
    );
    for s in &systems {
        let _ = write!(out, " {s} |");
    }
    out.push_str("\n|---|---|");
    out.push_str(&"---|".repeat(systems.len()));
    out.push('\n');
    for (i, q) in report.quintiles.iter().enumerate() {
        let name = QUINTILE_NAMES.get(i).copied().unwrap_or("?");
        let _ = write!(out, "| {name} | {:.1} |", q.bls_mean);
        for s in &systems {
            match q.systems.get(*s) {
                Some(g) => {
                    let _ = write!(out, " {:.1} [{:.1}, {:.1}] |", g.share_pct, g.ci_low, g.ci_high);
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    for e in &report.errata {
        let _ = writeln!(out, "\n- {e}");
    }
    out
}

pub fn markers_markdown(stats: &[MarkerStats]) -> String {
    let mut out = String::new();
    for s in stats {
        let title = match s.source {
            TextSource::Caption => "Captions",
            TextSource::VqaAppearance => "VQA appearance answers",
        };
        let _ = writeln!(
            out,
            "### {title}\n\n| System | woman % | man % | gender-marked % | person % | profession named % |\n|---|---|---|---|---|---|"
        );
        for (system, m) in &s.systems {
            let named = m.pct_profession_mention.map_or_else(|| "-".to_owned(), |p| format!("{p:.2}"));
            let _ = writeln!(
                out,
                "| {system} | {:.2} | {:.2} | {:.2} | {:.2} | {named} |",
                m.pct_woman, m.pct_man, m.pct_gender_marked, m.pct_person
            );
        }
        out.push('\n');
    }
    out
}

pub fn diversity_markdown(report: &DiversityReport) -> String {
    let mut out = format!(
        "Entropy over {} regions with {:.0}% bootstrap intervals (B = {}).\n\n| System | Entropy (bits) | CI | n |\n|---|---|---|---|\n",
        report.n_clusters,
        100.0 * report.level,
        report.bootstrap_b
    );
    for (system, d) in &report.systems {
        let o = &d.overall;
        let _ = writeln!(out, "| {system} | {:.3} | [{:.3}, {:.3}] | {} |", o.entropy_bits, o.ci_low, o.ci_high, o.n);
    }
    for (system, d) in &report.systems {
        let _ = writeln!(out, "\n### {system}\n\n| Profession | Entropy (bits) | CI | n |\n|---|---|---|---|");
        let mut rows: Vec<_> = d.professions.iter().collect();
        rows.sort_by(|a, b| b.1.entropy_bits.total_cmp(&a.1.entropy_bits).then(a.0.cmp(b.0)));
        for (p, s) in rows {
            let _ = writeln!(out, "| {p} | {:.3} | [{:.3}, {:.3}] | {} |", s.entropy_bits, s.ci_low, s.ci_high, s.n);
        }
    }
    out
}

//! Retrieval evaluation: ranked galleries, average precision, CMC
//! curves, the cross-distance combination ablation and the lambda sweep.
//!
//! Protocol: tri-order sets from one partition side are the probes, the
//! other side is the gallery. Gallery entries sharing a probe's source
//! never participate (same-source pairs are excluded in testing; under
//! the side protocol this cannot happen, the guard is upheld anyway).
//! Queries without a single positive are excluded from mAP and CMC and
//! counted separately.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multiorder::{fuse, Combination, TriOrderSet};
use crate::synthcam::io::write_atomic;
use crate::synthcam::Side;

/// One gallery entry of a ranked retrieval list.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub gallery_id: u64,
    pub distance: f64,
    pub positive: bool,
}

/// Gallery ranking for one query, ascending by fused distance.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub query_id: u64,
    pub ranked: Vec<RankedEntry>,
}

impl QueryResult {
    /// 1-based rank of the first positive, if any.
    pub fn first_positive_rank(&self) -> Option<usize> {
        self.ranked.iter().position(|e| e.positive).map(|p| p + 1)
    }

    pub fn positive_count(&self) -> usize {
        self.ranked.iter().filter(|e| e.positive).count()
    }
}

/// Per-combination evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub combination: String,
    /// Queries that entered mAP/CMC (those with at least one positive).
    pub num_queries: usize,
    /// Queries dropped for having no positive in the gallery.
    pub skipped_queries: usize,
    pub map: f64,
    /// `cmc[k-1]` = fraction of queries whose first positive ranks <= k.
    pub cmc: Vec<f64>,
    /// `key = value` echo of the evaluation settings.
    pub config_echo: Vec<String>,
}

impl EvalReport {
    pub fn rank1(&self) -> f64 {
        self.cmc.first().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalProtocol {
    /// Side whose sets act as queries; the other side is the gallery.
    pub probe_side: Side,
    pub max_rank: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            probe_side: Side::X,
            max_rank: 10,
        }
    }
}

/// Sorts the gallery by fused distance ascending, ties broken by gallery
/// sample id ascending. Same-source entries are dropped before ranking.
pub fn rank_gallery(
    query: &TriOrderSet,
    gallery: &[TriOrderSet],
    combination: &Combination,
) -> Result<QueryResult> {
    if gallery.is_empty() {
        return Err(Error::usage("gallery is empty"));
    }
    let mut ranked = Vec::with_capacity(gallery.len());
    for g in gallery {
        if g.source_sample_id == query.source_sample_id {
            continue;
        }
        let distance = fuse(query, g, combination)?;
        ranked.push(RankedEntry {
            gallery_id: g.source_sample_id,
            distance,
            positive: g.identity_id == query.identity_id,
        });
    }
    if ranked.is_empty() {
        return Err(Error::usage(
            "gallery holds only the query's own derivatives",
        ));
    }
    ranked.sort_by(|a, b| {
        a.distance
            .partial_cmp(&b.distance)
            .expect("fused distances are finite")
            .then(a.gallery_id.cmp(&b.gallery_id))
    });
    Ok(QueryResult {
        query_id: query.source_sample_id,
        ranked,
    })
}

/// Average precision: positives indexed j = 1..P in rank order, each
/// contributing `j / rank_j`. `None` signals a query with no positive
/// (excluded from mAP, counted in the report).
pub fn compute_ap(result: &QueryResult) -> Option<f64> {
    let mut positives = 0usize;
    let mut sum = 0.0;
    for (idx, entry) in result.ranked.iter().enumerate() {
        if entry.positive {
            positives += 1;
            sum += positives as f64 / (idx + 1) as f64;
        }
    }
    if positives == 0 {
        None
    } else {
        Some(sum / positives as f64)
    }
}

/// Cumulative match curve over queries that have a positive:
/// `cmc[k-1]` = fraction whose first positive ranks within k.
pub fn compute_cmc(results: &[QueryResult], max_rank: usize) -> Result<Vec<f64>> {
    if results.is_empty() {
        return Err(Error::data("cannot compute a CMC over zero queries"));
    }
    let mut curve = vec![0.0; max_rank];
    for r in results {
        if let Some(rank) = r.first_positive_rank() {
            for k in rank..=max_rank {
                curve[k - 1] += 1.0;
            }
        }
    }
    for v in &mut curve {
        *v /= results.len() as f64;
    }
    Ok(curve)
}

/// Full protocol evaluation: probe side against the opposite gallery.
pub fn evaluate(
    sets: &[TriOrderSet],
    combination: &Combination,
    protocol: &EvalProtocol,
) -> Result<EvalReport> {
    let queries: Vec<&TriOrderSet> = sets
        .iter()
        .filter(|s| s.side == protocol.probe_side)
        .collect();
    let gallery: Vec<TriOrderSet> = sets
        .iter()
        .filter(|s| s.side == protocol.probe_side.other())
        .cloned()
        .collect();
    if queries.is_empty() || gallery.is_empty() {
        return Err(Error::data(format!(
            "both sides must be represented: {} queries on side {}, {} gallery sets",
            queries.len(),
            protocol.probe_side,
            gallery.len()
        )));
    }

    let mut retained = Vec::new();
    let mut skipped = 0usize;
    let mut ap_sum = 0.0;
    for q in queries {
        let result = rank_gallery(q, &gallery, combination)?;
        match compute_ap(&result) {
            Some(ap) => {
                ap_sum += ap;
                retained.push(result);
            }
            None => skipped += 1,
        }
    }
    if retained.is_empty() {
        return Err(Error::data("no query has a positive match in the gallery"));
    }
    let map = ap_sum / retained.len() as f64;
    let cmc = compute_cmc(&retained, protocol.max_rank)?;
    Ok(EvalReport {
        combination: combination.to_string(),
        num_queries: retained.len(),
        skipped_queries: skipped,
        map,
        cmc,
        config_echo: vec![
            format!("probe_side = {}", protocol.probe_side),
            format!("max_rank = {}", protocol.max_rank),
        ],
    })
}

/// The fifteen combinations of the ablation table: singles, pairs with
/// d1, triples with d1+d2, quads, and the full set.
pub fn ablation_combinations() -> Vec<Combination> {
    [
        "d1",
        "d2",
        "d8",
        "d10",
        "d11",
        "d1+d2",
        "d1+d8",
        "d1+d10",
        "d1+d11",
        "d1+d2+d8",
        "d1+d2+d10",
        "d1+d2+d11",
        "d1+d2+d8+d10",
        "d1+d2+d8+d11",
        "d1+d2+d8+d10+d11",
    ]
    .iter()
    .map(|s| Combination::parse(s).expect("table combinations are valid"))
    .collect()
}

/// One report per combination; the distance structure is recomputed per
/// row so every row equals an individually run `evaluate`.
pub fn ablate_combinations(
    sets: &[TriOrderSet],
    combinations: &[Combination],
    protocol: &EvalProtocol,
) -> Result<Vec<EvalReport>> {
    if combinations.is_empty() {
        return Err(Error::usage("ablation needs at least one combination"));
    }
    combinations
        .iter()
        .map(|c| evaluate(sets, c, protocol))
        .collect()
}

/// One sweep row: the center-loss weight against headline metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub rank1: f64,
    pub map: f64,
}

/// Retrains and evaluates per lambda via the supplied closure (fixed
/// seed inside the closure keeps rows reproducible).
pub fn sweep_lambda<F>(mut run: F, lambdas: &[f64]) -> Result<Vec<LambdaRow>>
where
    F: FnMut(f64) -> Result<EvalReport>,
{
    if lambdas.is_empty() {
        return Err(Error::usage("lambda sweep needs a non-empty list"));
    }
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let report = run(lambda)?;
        rows.push(LambdaRow {
            lambda,
            rank1: report.rank1(),
            map: report.map,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Report output
// ---------------------------------------------------------------------------

/// CSV with columns `combination,num_queries,mAP,rank1..rank10`.
pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let max_rank = reports.iter().map(|r| r.cmc.len()).max().unwrap_or(0);
    let mut out = String::from("combination,num_queries,mAP");
    for k in 1..=max_rank {
        out.push_str(&format!(",rank{k}"));
    }
    out.push('\n');
    for r in reports {
        out.push_str(&format!("{},{},{}", r.combination, r.num_queries, r.map));
        for k in 0..max_rank {
            out.push(',');
            out.push_str(&r.cmc.get(k).copied().unwrap_or(f64::NAN).to_string());
        }
        out.push('\n');
    }
    out
}

/// Aligned-column markdown table for humans.
pub fn reports_to_markdown(reports: &[EvalReport]) -> String {
    let max_rank = reports.iter().map(|r| r.cmc.len()).max().unwrap_or(0);
    let mut header = vec![
        "combination".to_string(),
        "queries".to_string(),
        "mAP".to_string(),
    ];
    for k in 1..=max_rank {
        header.push(format!("rank{k}"));
    }
    let mut rows = vec![header];
    for r in reports {
        let mut row = vec![
            r.combination.clone(),
            r.num_queries.to_string(),
            format!("{:.4}", r.map),
        ];
        for k in 0..max_rank {
            row.push(format!("{:.4}", r.cmc.get(k).copied().unwrap_or(f64::NAN)));
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        out.push('|');
        for (c, cell) in row.iter().enumerate() {
            out.push_str(&format!(" {:width$} |", cell, width = widths[c]));
        }
        out.push('\n');
        if i == 0 {
            out.push('|');
            for w in &widths {
                out.push_str(&format!("{:-<width$}|", "", width = w + 2));
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_reports(csv_path: &Path, md_path: &Path, reports: &[EvalReport]) -> Result<()> {
    write_atomic(csv_path, reports_to_csv(reports).as_bytes())?;
    write_atomic(md_path, reports_to_markdown(reports).as_bytes())
}

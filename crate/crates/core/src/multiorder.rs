//! Multi-order embedding sets and the hexagram cross-distance taxonomy.
//!
//! Each source sample yields a (order-0, order-1, order-2) triple of
//! embeddings. Comparing a query triple against a gallery triple gives
//! fifteen order pairings; the six that link samples derived from one
//! source are excluded in testing, leaving nine usable cross distances:
//!
//! ```text
//!   d1  (e0, e0)    d2  (q.e0, g.e1)   d3  (q.e1, g.e0)
//!   d8  (q.e0, g.e2) d9  (q.e2, g.e0)
//!   d10 (e1, e1)    d11 (e2, e2)
//!   d14 (q.e1, g.e2) d15 (q.e2, g.e1)
//! ```
//!
//! Which index of each symmetric pair maps to which direction is a fixed
//! convention of this crate. Distances are Euclidean on unnormalized
//! embeddings; combinations are fused by plain summation.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::mlp::{forward_vec, MlpParams};
use crate::numerics::tensor::euclidean;
use crate::synthcam::{SampleRecord, Side};

/// Embeddings of one source sample's three orders.
#[derive(Debug, Clone, PartialEq)]
pub struct TriOrderSet {
    pub source_sample_id: u64,
    pub identity_id: u64,
    pub side: Side,
    pub e0: Vec<f64>,
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
}

/// The fifteen order pairings of the hexagram. Only the nine
/// cross-source ones may be used for ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CrossDistanceId {
    D1,
    D2,
    D3,
    D4,
    D5,
    D6,
    D7,
    D8,
    D9,
    D10,
    D11,
    D12,
    D13,
    D14,
    D15,
}

use CrossDistanceId::*;

pub const VALID_IDS: [CrossDistanceId; 9] = [D1, D2, D3, D8, D9, D10, D11, D14, D15];
pub const EXCLUDED_IDS: [CrossDistanceId; 6] = [D4, D5, D6, D7, D12, D13];

impl CrossDistanceId {
    pub fn is_valid(self) -> bool {
        VALID_IDS.contains(&self)
    }

    pub fn index(self) -> u8 {
        match self {
            D1 => 1,
            D2 => 2,
            D3 => 3,
            D4 => 4,
            D5 => 5,
            D6 => 6,
            D7 => 7,
            D8 => 8,
            D9 => 9,
            D10 => 10,
            D11 => 11,
            D12 => 12,
            D13 => 13,
            D14 => 14,
            D15 => 15,
        }
    }

    pub fn from_index(i: u8) -> Result<CrossDistanceId> {
        match i {
            1 => Ok(D1),
            2 => Ok(D2),
            3 => Ok(D3),
            4 => Ok(D4),
            5 => Ok(D5),
            6 => Ok(D6),
            7 => Ok(D7),
            8 => Ok(D8),
            9 => Ok(D9),
            10 => Ok(D10),
            11 => Ok(D11),
            12 => Ok(D12),
            13 => Ok(D13),
            14 => Ok(D14),
            15 => Ok(D15),
            other => Err(Error::usage(format!("no cross distance d{other}"))),
        }
    }

    /// (query order, gallery order) pairing of a valid id.
    fn order_pair(self) -> Option<(usize, usize)> {
        match self {
            D1 => Some((0, 0)),
            D2 => Some((0, 1)),
            D3 => Some((1, 0)),
            D8 => Some((0, 2)),
            D9 => Some((2, 0)),
            D10 => Some((1, 1)),
            D11 => Some((2, 2)),
            D14 => Some((1, 2)),
            D15 => Some((2, 1)),
            _ => None,
        }
    }

    /// Query/gallery swap: exchanges the directed pairs and fixes the
    /// intra-order distances.
    pub fn mirror(self) -> CrossDistanceId {
        match self {
            D2 => D3,
            D3 => D2,
            D8 => D9,
            D9 => D8,
            D14 => D15,
            D15 => D14,
            other => other,
        }
    }
}

impl std::fmt::Display for CrossDistanceId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "d{}", self.index())
    }
}

/// Fixed canonical enumeration of the nine usable ids.
pub fn enumerate_valid_ids() -> Vec<CrossDistanceId> {
    VALID_IDS.to_vec()
}

/// A non-empty set of valid cross distances, fused by summation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Combination {
    ids: Vec<CrossDistanceId>,
}

impl Combination {
    pub fn new(mut ids: Vec<CrossDistanceId>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::usage(
                "a combination needs at least one cross distance",
            ));
        }
        for id in &ids {
            if !id.is_valid() {
                return Err(Error::usage(format!(
                    "{id} links samples from the same source and is excluded in testing"
                )));
            }
        }
        ids.sort();
        ids.dedup();
        Ok(Combination { ids })
    }

    /// Parses the `d1+d2+d10` syntax, case-insensitive and
    /// whitespace-tolerant.
    pub fn parse(text: &str) -> Result<Self> {
        let mut ids = Vec::new();
        for part in text.split('+') {
            let token = part.trim().to_ascii_lowercase();
            let Some(number) = token.strip_prefix('d') else {
                return Err(Error::usage(format!(
                    "combination term '{}' must look like 'd1'",
                    part.trim()
                )));
            };
            let index: u8 = number
                .parse()
                .map_err(|_| Error::usage(format!("combination term '{token}' has no index")))?;
            ids.push(CrossDistanceId::from_index(index)?);
        }
        Combination::new(ids)
    }

    pub fn ids(&self) -> &[CrossDistanceId] {
        &self.ids
    }

    /// Swapped-role counterpart: mirror of every member.
    pub fn mirror(&self) -> Combination {
        Combination::new(self.ids.iter().map(|id| id.mirror()).collect())
            .expect("mirror of a valid combination is valid")
    }
}

impl std::fmt::Display for Combination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.ids.iter().map(|id| id.to_string()).collect();
        f.write_str(&parts.join("+"))
    }
}

/// Euclidean distance between the embedding pair a valid id maps to.
pub fn cross_distance(q: &TriOrderSet, g: &TriOrderSet, id: CrossDistanceId) -> Result<f64> {
    let Some((qo, go)) = id.order_pair() else {
        return Err(Error::usage(format!(
            "{id} links samples from the same source and is excluded in testing"
        )));
    };
    let pick = |set: &TriOrderSet, order: usize| -> Vec<f64> {
        match order {
            0 => set.e0.clone(),
            1 => set.e1.clone(),
            _ => set.e2.clone(),
        }
    };
    let a = pick(q, qo);
    let b = pick(g, go);
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "embedding dims differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(euclidean(&a, &b))
}

/// Sum of the selected cross distances.
pub fn fuse(q: &TriOrderSet, g: &TriOrderSet, combination: &Combination) -> Result<f64> {
    let mut total = 0.0;
    for &id in combination.ids() {
        total += cross_distance(q, g, id)?;
    }
    Ok(total)
}

/// Embeds the three orders of one source: expects exactly one record per
/// order, all sharing the source and identity.
pub fn build_tri_order_set(embed: &MlpParams, records: &[&SampleRecord]) -> Result<TriOrderSet> {
    if records.is_empty() {
        return Err(Error::schema("no records for tri-order set"));
    }
    let source = records[0].source_sample_id;
    let identity = records[0].identity_id;
    let mut by_order: [Option<&SampleRecord>; 3] = [None, None, None];
    for r in records {
        if r.source_sample_id != source {
            return Err(Error::schema(format!(
                "records mix sources {} and {}",
                source, r.source_sample_id
            )));
        }
        if r.identity_id != identity {
            return Err(Error::schema(format!(
                "records mix identities {} and {}",
                identity, r.identity_id
            )));
        }
        let slot = &mut by_order[r.order.as_u8() as usize];
        if slot.is_some() {
            return Err(Error::schema(format!(
                "duplicate order {} for source {}",
                r.order.as_u8(),
                source
            )));
        }
        *slot = Some(r);
    }
    let [Some(r0), Some(r1), Some(r2)] = by_order else {
        return Err(Error::schema(format!(
            "source {source} is missing an order (need 0, 1 and 2)"
        )));
    };
    let side = r0
        .side
        .ok_or_else(|| Error::schema(format!("source {source} has no side")))?;
    Ok(TriOrderSet {
        source_sample_id: source,
        identity_id: identity,
        side,
        e0: forward_vec(embed, &r0.features)?,
        e1: forward_vec(embed, &r1.features)?,
        e2: forward_vec(embed, &r2.features)?,
    })
}

/// Groups records by source lineage and embeds each complete triple,
/// ordered by source sample id.
pub fn collect_tri_order_sets(
    embed: &MlpParams,
    records: &[SampleRecord],
) -> Result<Vec<TriOrderSet>> {
    let mut by_source: BTreeMap<u64, Vec<&SampleRecord>> = BTreeMap::new();
    for r in records {
        by_source.entry(r.source_sample_id).or_default().push(r);
    }
    by_source
        .values()
        .map(|group| build_tri_order_set(embed, group))
        .collect()
}

//! The re-identification training objective: identity-balanced batches
//! over multi-order samples, batch-hard triplet loss, and a per-batch
//! center loss, all with exact gradients.
//!
//! A full batch holds K identities with 6 samples each: two source
//! lineages, each contributing its order-0/1/2 records. Training on an
//! order subset shrinks the groups accordingly (order-0 only gives 2
//! samples per identity).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::mlp::{backward_vec, forward_vec, MlpParams};
use crate::numerics::rng::Rng;
use crate::synthcam::{Order, SampleRecord, Side};

/// Margin handling for the triplet term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarginMode {
    /// `max(0, m + hardest_positive - hardest_negative)`.
    Hinge { m: f64 },
    /// `ln(1 + exp(hardest_positive - hardest_negative))`.
    Softplus,
}

impl MarginMode {
    pub fn parse(mode: &str, m: f64) -> Result<MarginMode> {
        match mode {
            "hinge" => {
                if !m.is_finite() || m < 0.0 {
                    return Err(Error::config(format!(
                        "hinge margin must be finite and >= 0, got {m}"
                    )));
                }
                Ok(MarginMode::Hinge { m })
            }
            "softplus" => Ok(MarginMode::Softplus),
            other => Err(Error::config(format!(
                "margin_mode must be 'hinge' or 'softplus', got '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletConfig {
    pub margin: MarginMode,
    /// Center-loss weight applied by the objective.
    pub lambda: f64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        TripletConfig {
            margin: MarginMode::Hinge { m: 0.3 },
            lambda: 0.001,
        }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        if let MarginMode::Hinge { m } = self.margin {
            if !m.is_finite() || m < 0.0 {
                return Err(Error::config(format!("hinge margin must be >= 0, got {m}")));
            }
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// One sample in a training batch.
#[derive(Debug, Clone)]
pub struct BatchSample {
    pub sample_id: u64,
    pub identity_id: u64,
    pub order: Order,
    pub source_sample_id: u64,
    pub features: Vec<f64>,
}

/// One identity's group: two source lineages over the selected orders.
#[derive(Debug, Clone)]
pub struct IdentityGroup {
    pub identity_id: u64,
    pub samples: Vec<BatchSample>,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub groups: Vec<IdentityGroup>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.groups.iter().map(|g| g.samples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = &BatchSample> {
        self.groups.iter().flat_map(|g| g.samples.iter())
    }

    pub fn labels(&self) -> Vec<u64> {
        self.samples().map(|s| s.identity_id).collect()
    }
}

/// Draws K identities without replacement and two complete lineages per
/// identity, preferring lineages from opposite partition sides when the
/// identity has both. Deterministic given the RNG state.
pub fn sample_batch(
    records: &[SampleRecord],
    k: usize,
    orders: &[Order],
    rng: &mut Rng,
) -> Result<Batch> {
    if k == 0 {
        return Err(Error::config("batch needs at least one identity"));
    }
    if orders.is_empty() {
        return Err(Error::config("batch needs at least one order"));
    }
    let mut wanted: Vec<Order> = orders.to_vec();
    wanted.sort();
    wanted.dedup();

    // identity -> source -> per-order records.
    let mut index: BTreeMap<u64, BTreeMap<u64, BTreeMap<u8, &SampleRecord>>> = BTreeMap::new();
    for r in records {
        index
            .entry(r.identity_id)
            .or_default()
            .entry(r.source_sample_id)
            .or_default()
            .insert(r.order.as_u8(), r);
    }

    // A lineage is complete when every requested order is present.
    struct Lineage<'a> {
        source: u64,
        side: Option<Side>,
        records: Vec<&'a SampleRecord>,
    }
    let mut eligible: Vec<(u64, Vec<Lineage>)> = Vec::new();
    let mut deficient: Option<u64> = None;
    for (&identity, sources) in &index {
        let mut lineages = Vec::new();
        for (&source, by_order) in sources {
            let mut recs = Vec::with_capacity(wanted.len());
            let mut complete = true;
            for o in &wanted {
                match by_order.get(&o.as_u8()) {
                    Some(r) => recs.push(*r),
                    None => {
                        complete = false;
                        break;
                    }
                }
            }
            if complete {
                lineages.push(Lineage {
                    source,
                    side: recs[0].side,
                    records: recs,
                });
            }
        }
        if lineages.len() >= 2 {
            eligible.push((identity, lineages));
        } else {
            deficient.get_or_insert(identity);
        }
    }

    if eligible.len() < k {
        let detail = match deficient {
            Some(id) => format!("identity {id} has fewer than 2 complete lineages"),
            None => "not enough identities".to_string(),
        };
        return Err(Error::data(format!(
            "need {k} identities with 2 complete lineages over orders {:?}, found {}: {detail}",
            wanted.iter().map(|o| o.as_u8()).collect::<Vec<_>>(),
            eligible.len()
        )));
    }

    let mut order_of_identity: Vec<usize> = (0..eligible.len()).collect();
    rng.shuffle(&mut order_of_identity);

    let mut groups = Vec::with_capacity(k);
    for &slot in order_of_identity.iter().take(k) {
        let (identity, lineages) = &eligible[slot];
        let on_x: Vec<usize> = (0..lineages.len())
            .filter(|&i| lineages[i].side == Some(Side::X))
            .collect();
        let on_y: Vec<usize> = (0..lineages.len())
            .filter(|&i| lineages[i].side == Some(Side::Y))
            .collect();
        let (first, second) = if !on_x.is_empty() && !on_y.is_empty() {
            (on_x[rng.below(on_x.len())], on_y[rng.below(on_y.len())])
        } else {
            let mut picks: Vec<usize> = (0..lineages.len()).collect();
            rng.shuffle(&mut picks);
            (picks[0], picks[1])
        };
        let mut chosen = [first, second];
        // Keep the group's internal layout independent of draw order.
        chosen.sort_by_key(|&i| lineages[i].source);
        let mut samples = Vec::with_capacity(2 * wanted.len());
        for &i in &chosen {
            for r in &lineages[i].records {
                samples.push(BatchSample {
                    sample_id: r.sample_id,
                    identity_id: r.identity_id,
                    order: r.order,
                    source_sample_id: r.source_sample_id,
                    features: r.features.clone(),
                });
            }
        }
        groups.push(IdentityGroup {
            identity_id: *identity,
            samples,
        });
    }
    Ok(Batch { groups })
}

/// Symmetric Euclidean distance matrix with a zero diagonal, row-major
/// n x n.
pub fn pairwise_distance_matrix(embeddings: &[Vec<f64>]) -> Vec<f64> {
    let n = embeddings.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = crate::numerics::tensor::euclidean(&embeddings[i], &embeddings[j]);
            out[i * n + j] = d;
            out[j * n + i] = d;
        }
    }
    out
}

/// Hardest positive / hardest negative selection for one anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardSelection {
    pub positive_index: usize,
    pub hardest_positive: f64,
    pub negative_index: usize,
    pub hardest_negative: f64,
}

/// Per-anchor batch-hard selection over a distance matrix. Ties resolve
/// to the lowest sample index so gradients are deterministic.
pub fn per_anchor_hard_selection(distances: &[f64], labels: &[u64]) -> Result<Vec<HardSelection>> {
    let n = labels.len();
    debug_assert_eq!(distances.len(), n * n);
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(Error::data(
            "batch-hard mining needs at least 2 distinct identities",
        ));
    }
    if let Some((&label, _)) = counts.iter().find(|(_, &c)| c < 2) {
        return Err(Error::data(format!(
            "identity {label} has a single sample in the batch; every identity needs >= 2"
        )));
    }
    let mut out = Vec::with_capacity(n);
    for a in 0..n {
        let row = &distances[a * n..(a + 1) * n];
        let mut hp = f64::NEG_INFINITY;
        let mut hp_idx = usize::MAX;
        let mut hn = f64::INFINITY;
        let mut hn_idx = usize::MAX;
        for (j, &d) in row.iter().enumerate() {
            if j == a {
                continue;
            }
            if labels[j] == labels[a] {
                if d > hp {
                    hp = d;
                    hp_idx = j;
                }
            } else if d < hn {
                hn = d;
                hn_idx = j;
            }
        }
        out.push(HardSelection {
            positive_index: hp_idx,
            hardest_positive: hp,
            negative_index: hn_idx,
            hardest_negative: hn,
        });
    }
    Ok(out)
}

fn margin_term(mode: MarginMode, hp: f64, hn: f64) -> (f64, f64) {
    // Returns (term value, d term / d (hp - hn)).
    match mode {
        MarginMode::Hinge { m } => {
            let raw = m + hp - hn;
            if raw > 0.0 {
                (raw, 1.0)
            } else {
                (0.0, 0.0)
            }
        }
        MarginMode::Softplus => {
            let s = hp - hn;
            // ln(1 + e^s), computed stably.
            let value = if s > 0.0 {
                s + (-s).exp().ln_1p()
            } else {
                s.exp().ln_1p()
            };
            let sigma = 1.0 / (1.0 + (-s).exp());
            (value, sigma)
        }
    }
}

/// Batch-hard triplet loss: mean over anchors of the margin term on the
/// anchor's hardest positive and hardest negative. Returns the loss and
/// its gradient with respect to each embedding; gradients flow only
/// through the selected pairs.
pub fn batch_hard_triplet_loss(
    embeddings: &[Vec<f64>],
    labels: &[u64],
    config: &TripletConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if embeddings.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} embeddings vs {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    config.validate()?;
    let n = embeddings.len();
    let distances = pairwise_distance_matrix(embeddings);
    let selections = per_anchor_hard_selection(&distances, labels)?;

    let dim = embeddings[0].len();
    let mut grads = vec![vec![0.0; dim]; n];
    let mut total = 0.0;
    let scale = 1.0 / n as f64;
    for (a, sel) in selections.iter().enumerate() {
        let (term, weight) = margin_term(config.margin, sel.hardest_positive, sel.hardest_negative);
        total += term;
        if weight == 0.0 {
            continue;
        }
        let w = weight * scale;
        // d hp / d e: unit vector from hardest positive toward anchor.
        let p = sel.positive_index;
        if sel.hardest_positive > 0.0 {
            let inv = 1.0 / sel.hardest_positive;
            for i in 0..dim {
                let u = (embeddings[a][i] - embeddings[p][i]) * inv;
                grads[a][i] += w * u;
                grads[p][i] -= w * u;
            }
        }
        // d hn / d e enters with a negative sign.
        let m = sel.negative_index;
        if sel.hardest_negative > 0.0 {
            let inv = 1.0 / sel.hardest_negative;
            for i in 0..dim {
                let u = (embeddings[a][i] - embeddings[m][i]) * inv;
                grads[a][i] -= w * u;
                grads[m][i] += w * u;
            }
        }
    }
    Ok((total * scale, grads))
}

/// Per-identity mean embedding over the samples present in the batch:
/// one center per identity that appears. Deviations accumulate against
/// the identity's first sample, so the mean of identical embeddings is
/// exactly that embedding.
pub fn batch_centers(embeddings: &[Vec<f64>], labels: &[u64]) -> Result<BTreeMap<u64, Vec<f64>>> {
    if embeddings.is_empty() {
        return Err(Error::data("centers need a non-empty batch"));
    }
    if embeddings.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} embeddings vs {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    let dim = embeddings[0].len();
    let mut sums: BTreeMap<u64, (Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    for (e, &l) in embeddings.iter().zip(labels) {
        let entry = sums
            .entry(l)
            .or_insert_with(|| (e.clone(), vec![0.0; dim], 0));
        for ((s, v), r) in entry.1.iter_mut().zip(e).zip(&entry.0) {
            *s += v - r;
        }
        entry.2 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(l, (reference, sum, count))| {
            let c = reference
                .iter()
                .zip(&sum)
                .map(|(r, s)| r + s / count as f64)
                .collect();
            (l, c)
        })
        .collect())
}

/// Per-batch center loss: half the squared distance of every embedding
/// to its identity's batch mean. Centers are treated as constants in the
/// gradient, which for this quadratic equals the full derivative.
pub fn batch_center_loss(embeddings: &[Vec<f64>], labels: &[u64]) -> Result<(f64, Vec<Vec<f64>>)> {
    let centers = batch_centers(embeddings, labels)?;
    let dim = embeddings[0].len();

    let mut loss = 0.0;
    let mut grads = vec![vec![0.0; dim]; embeddings.len()];
    for (idx, (e, &l)) in embeddings.iter().zip(labels).enumerate() {
        let c = &centers[&l];
        for i in 0..dim {
            let diff = e[i] - c[i];
            loss += 0.5 * diff * diff;
            grads[idx][i] = diff;
        }
    }
    Ok((loss, grads))
}

/// Full training objective: triplet + lambda * center, back-propagated
/// through the embedding network. Returns the loss and the parameter
/// gradients.
pub fn objective_with_grads(
    batch: &Batch,
    embed: &MlpParams,
    config: &TripletConfig,
) -> Result<(f64, MlpParams)> {
    if batch.is_empty() {
        return Err(Error::data("empty batch"));
    }
    config.validate()?;
    let features: Vec<&[f64]> = batch.samples().map(|s| s.features.as_slice()).collect();
    let labels = batch.labels();
    let embeddings: Vec<Vec<f64>> = features
        .iter()
        .map(|f| forward_vec(embed, f))
        .collect::<Result<_>>()?;

    let (triplet, triplet_grads) = batch_hard_triplet_loss(&embeddings, &labels, config)?;
    let (center, center_grads) = batch_center_loss(&embeddings, &labels)?;
    let loss = triplet + config.lambda * center;

    let mut param_grads = embed.zeros_like();
    for ((f, tg), cg) in features.iter().zip(&triplet_grads).zip(&center_grads) {
        let combined: Vec<f64> = tg
            .iter()
            .zip(cg)
            .map(|(t, c)| t + config.lambda * c)
            .collect();
        let (g, _) = backward_vec(embed, f, &combined)?;
        param_grads.add_scaled(&g, 1.0);
    }
    Ok((loss, param_grads))
}

/// Loss value only, for the finite-difference oracle.
pub fn objective_value(batch: &Batch, embed: &MlpParams, config: &TripletConfig) -> Result<f64> {
    let labels = batch.labels();
    let embeddings: Vec<Vec<f64>> = batch
        .samples()
        .map(|s| forward_vec(embed, &s.features))
        .collect::<Result<_>>()?;
    let (triplet, _) = batch_hard_triplet_loss(&embeddings, &labels, config)?;
    let (center, _) = batch_center_loss(&embeddings, &labels)?;
    Ok(triplet + config.lambda * center)
}

/// Margin to the nearest selection tie or hinge boundary over a batch:
/// the smallest gap between the chosen hardest positive/negative and the
/// runner-up, and the distance of each hinge argument from zero.
/// Gradient checks exclude points where this is tiny.
pub fn selection_tie_margin(
    embeddings: &[Vec<f64>],
    labels: &[u64],
    config: &TripletConfig,
) -> Result<f64> {
    let n = labels.len();
    let distances = pairwise_distance_matrix(embeddings);
    let selections = per_anchor_hard_selection(&distances, labels)?;
    let mut margin = f64::INFINITY;
    for (a, sel) in selections.iter().enumerate() {
        let row = &distances[a * n..(a + 1) * n];
        for (j, &d) in row.iter().enumerate() {
            if j == a {
                continue;
            }
            if labels[j] == labels[a] {
                if j != sel.positive_index {
                    margin = margin.min((sel.hardest_positive - d).abs());
                }
            } else if j != sel.negative_index {
                margin = margin.min((d - sel.hardest_negative).abs());
            }
        }
        if let MarginMode::Hinge { m } = config.margin {
            margin = margin.min((m + sel.hardest_positive - sel.hardest_negative).abs());
        }
        // Degenerate zero distances put the Euclidean norm on its kink.
        margin = margin.min(sel.hardest_positive.abs());
        margin = margin.min(sel.hardest_negative.abs());
    }
    Ok(margin)
}

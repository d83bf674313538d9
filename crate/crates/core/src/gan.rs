//! One-view CycleGAN over feature vectors.
//!
//! Two generators map between the random halves X and Y of the training
//! set; two least-squares discriminators judge each side. The loss is
//!
//! ```text
//!   L = L_Gadv + L_Fadv + alpha * L_cyc + beta * L_id
//! ```
//!
//! realized with the standard LSGAN split of the minimax: each
//! discriminator minimizes `(D(real)-1)^2 + D(fake)^2` on detached
//! fakes, and the generator step minimizes `(D(fake)-1)^2` plus the
//! weighted cycle and identity terms. L1 norms sum over coordinates and
//! average over the batch. Trained generators mint the order-1
//! (transferred) and order-2 (reconstructed) augmented samples.

use crate::error::{Error, Result};
use crate::numerics::adam::{adam_step, AdamState};
use crate::numerics::mlp::{backward_vec, forward_vec, Activation, MlpParams};
use crate::numerics::rng::Rng;
use crate::synthcam::{Order, SampleRecord, Side};

/// Generators G: X->Y and F: Y->X plus the two discriminators.
#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub g: MlpParams,
    pub f: MlpParams,
    pub d_x: MlpParams,
    pub d_y: MlpParams,
}

impl GanModel {
    /// Fresh model for `feature_dim`-dimensional features: generators
    /// `d -> 2d tanh -> d`, discriminators `d -> 2d relu -> 1`.
    pub fn seeded(feature_dim: usize, rng: &mut Rng) -> Result<GanModel> {
        let hidden = 2 * feature_dim;
        let gen_dims = [feature_dim, hidden, feature_dim];
        let gen_acts = [Activation::Tanh, Activation::None];
        let disc_dims = [feature_dim, hidden, 1];
        let disc_acts = [Activation::Relu, Activation::None];
        Ok(GanModel {
            g: MlpParams::seeded(&gen_dims, &gen_acts, rng)?,
            f: MlpParams::seeded(&gen_dims, &gen_acts, rng)?,
            d_x: MlpParams::seeded(&disc_dims, &disc_acts, rng)?,
            d_y: MlpParams::seeded(&disc_dims, &disc_acts, rng)?,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.g.in_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.g.in_dim();
        if self.g.out_dim() != d || self.f.in_dim() != d || self.f.out_dim() != d {
            return Err(Error::shape(
                "generators must map feature_dim -> feature_dim",
            ));
        }
        if self.d_x.in_dim() != d || self.d_y.in_dim() != d {
            return Err(Error::shape(
                "discriminators must accept feature_dim inputs",
            ));
        }
        if self.d_x.out_dim() != 1 || self.d_y.out_dim() != 1 {
            return Err(Error::shape("discriminators must be scalar-valued"));
        }
        Ok(())
    }
}

/// Trade-off weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanLossWeights {
    /// Cycle-consistency weight.
    pub alpha: f64,
    /// Identity-consistency weight.
    pub beta: f64,
}

impl Default for GanLossWeights {
    fn default() -> Self {
        GanLossWeights {
            alpha: 10.0,
            beta: 5.0,
        }
    }
}

impl GanLossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_nan() || self.alpha < 0.0 || self.beta.is_nan() || self.beta < 0.0 {
            return Err(Error::config("alpha and beta must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub generator_lr: f64,
    pub discriminator_lr: f64,
    /// Epoch at which the linear decay toward zero begins.
    pub decay_start: usize,
    pub seed: u64,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        GanTrainConfig {
            epochs: 6000,
            batch_size: 16,
            generator_lr: 2e-4,
            discriminator_lr: 1e-4,
            decay_start: 3000,
            seed: 11,
        }
    }
}

impl GanTrainConfig {
    /// `key = value` echo written into checkpoint headers.
    pub fn echo(&self) -> Vec<String> {
        vec![
            format!("epochs = {}", self.epochs),
            format!("batch_size = {}", self.batch_size),
            format!("generator_lr = {}", self.generator_lr),
            format!("discriminator_lr = {}", self.discriminator_lr),
            format!("decay_start = {}", self.decay_start),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.decay_start > self.epochs {
            return Err(Error::config(format!(
                "decay_start {} must be <= epochs {}",
                self.decay_start, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.generator_lr.is_nan()
            || self.generator_lr <= 0.0
            || self.discriminator_lr.is_nan()
            || self.discriminator_lr <= 0.0
        {
            return Err(Error::config("learning rates must be > 0"));
        }
        Ok(())
    }

    /// Learning-rate factor for an epoch: 1 until `decay_start`, then
    /// linear down to zero at `epochs`.
    pub fn lr_factor(&self, epoch: usize) -> f64 {
        if epoch < self.decay_start || self.epochs == self.decay_start {
            1.0
        } else {
            (self.epochs - epoch) as f64 / (self.epochs - self.decay_start) as f64
        }
    }
}

fn check_batch(name: &str, batch: &[Vec<f64>], dim: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::config(format!("{name} batch is empty")));
    }
    if let Some(v) = batch.iter().find(|v| v.len() != dim) {
        return Err(Error::shape(format!(
            "{name} batch has a vector of dim {} (expected {dim})",
            v.len()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Loss values
// ---------------------------------------------------------------------------

fn l1(u: &[f64]) -> f64 {
    u.iter().map(|v| v.abs()).sum()
}

/// Identity consistency: `mean_x |F(x) - x|_1 + mean_y |G(y) - y|_1`.
pub fn loss_identity(
    g: &MlpParams,
    f: &MlpParams,
    batch_x: &[Vec<f64>],
    batch_y: &[Vec<f64>],
) -> Result<f64> {
    check_batch("x", batch_x, f.in_dim())?;
    check_batch("y", batch_y, g.in_dim())?;
    let mut total = 0.0;
    for x in batch_x {
        let fx = forward_vec(f, x)?;
        total += l1(&sub(&fx, x)) / batch_x.len() as f64;
    }
    for y in batch_y {
        let gy = forward_vec(g, y)?;
        total += l1(&sub(&gy, y)) / batch_y.len() as f64;
    }
    Ok(total)
}

/// Cycle consistency: `mean_x |F(G(x)) - x|_1 + mean_y |G(F(y)) - y|_1`.
pub fn loss_cycle(
    g: &MlpParams,
    f: &MlpParams,
    batch_x: &[Vec<f64>],
    batch_y: &[Vec<f64>],
) -> Result<f64> {
    check_batch("x", batch_x, g.in_dim())?;
    check_batch("y", batch_y, f.in_dim())?;
    let mut total = 0.0;
    for x in batch_x {
        let cycled = forward_vec(f, &forward_vec(g, x)?)?;
        total += l1(&sub(&cycled, x)) / batch_x.len() as f64;
    }
    for y in batch_y {
        let cycled = forward_vec(g, &forward_vec(f, y)?)?;
        total += l1(&sub(&cycled, y)) / batch_y.len() as f64;
    }
    Ok(total)
}

/// Discriminator side of the least-squares adversarial loss:
/// `mean (D(real) - 1)^2 + mean D(fake)^2`. Fakes carry no generator
/// gradient here by construction (plain feature vectors).
pub fn loss_adv_discriminator(d: &MlpParams, real: &[Vec<f64>], fake: &[Vec<f64>]) -> Result<f64> {
    check_batch("real", real, d.in_dim())?;
    check_batch("fake", fake, d.in_dim())?;
    let mut total = 0.0;
    for r in real {
        let s = forward_vec(d, r)?[0];
        total += (s - 1.0) * (s - 1.0) / real.len() as f64;
    }
    for f in fake {
        let s = forward_vec(d, f)?[0];
        total += s * s / fake.len() as f64;
    }
    Ok(total)
}

/// Generator side of the adversarial loss: `mean (D(fake) - 1)^2`.
pub fn loss_adv_generator(d: &MlpParams, fake: &[Vec<f64>]) -> Result<f64> {
    check_batch("fake", fake, d.in_dim())?;
    let mut total = 0.0;
    for f in fake {
        let s = forward_vec(d, f)?[0];
        total += (s - 1.0) * (s - 1.0) / fake.len() as f64;
    }
    Ok(total)
}

/// The full generator-side objective.
pub fn total_generator_loss(
    model: &GanModel,
    weights: &GanLossWeights,
    batch_x: &[Vec<f64>],
    batch_y: &[Vec<f64>],
) -> Result<f64> {
    weights.validate()?;
    let fake_y: Vec<Vec<f64>> = batch_x
        .iter()
        .map(|x| forward_vec(&model.g, x))
        .collect::<Result<_>>()?;
    let fake_x: Vec<Vec<f64>> = batch_y
        .iter()
        .map(|y| forward_vec(&model.f, y))
        .collect::<Result<_>>()?;
    Ok(loss_adv_generator(&model.d_y, &fake_y)?
        + loss_adv_generator(&model.d_x, &fake_x)?
        + weights.alpha * loss_cycle(&model.g, &model.f, batch_x, batch_y)?
        + weights.beta * loss_identity(&model.g, &model.f, batch_x, batch_y)?)
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Subgradient of the coordinate-sum L1 norm; 0 at the kink.
fn l1_sign(u: &[f64]) -> Vec<f64> {
    u.iter()
        .map(|&v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Gradients of `loss_identity` with respect to G and F.
pub fn loss_identity_grads(
    g: &MlpParams,
    f: &MlpParams,
    batch_x: &[Vec<f64>],
    batch_y: &[Vec<f64>],
) -> Result<(f64, MlpParams, MlpParams)> {
    check_batch("x", batch_x, f.in_dim())?;
    check_batch("y", batch_y, g.in_dim())?;
    let mut g_grads = g.zeros_like();
    let mut f_grads = f.zeros_like();
    let mut total = 0.0;
    for x in batch_x {
        let fx = forward_vec(f, x)?;
        let u = sub(&fx, x);
        total += l1(&u) / batch_x.len() as f64;
        let gout: Vec<f64> = l1_sign(&u)
            .into_iter()
            .map(|s| s / batch_x.len() as f64)
            .collect();
        let (grad, _) = backward_vec(f, x, &gout)?;
        f_grads.add_scaled(&grad, 1.0);
    }
    for y in batch_y {
        let gy = forward_vec(g, y)?;
        let u = sub(&gy, y);
        total += l1(&u) / batch_y.len() as f64;
        let gout: Vec<f64> = l1_sign(&u)
            .into_iter()
            .map(|s| s / batch_y.len() as f64)
            .collect();
        let (grad, _) = backward_vec(g, y, &gout)?;
        g_grads.add_scaled(&grad, 1.0);
    }
    Ok((total, g_grads, f_grads))
}

/// Gradients of `loss_cycle` with respect to G and F.
pub fn loss_cycle_grads(
    g: &MlpParams,
    f: &MlpParams,
    batch_x: &[Vec<f64>],
    batch_y: &[Vec<f64>],
) -> Result<(f64, MlpParams, MlpParams)> {
    check_batch("x", batch_x, g.in_dim())?;
    check_batch("y", batch_y, f.in_dim())?;
    let mut g_grads = g.zeros_like();
    let mut f_grads = f.zeros_like();
    let mut total = 0.0;
    for x in batch_x {
        let mid = forward_vec(g, x)?;
        let cycled = forward_vec(f, &mid)?;
        let u = sub(&cycled, x);
        total += l1(&u) / batch_x.len() as f64;
        let gout: Vec<f64> = l1_sign(&u)
            .into_iter()
            .map(|s| s / batch_x.len() as f64)
            .collect();
        let (f_grad, mid_grad) = backward_vec(f, &mid, &gout)?;
        f_grads.add_scaled(&f_grad, 1.0);
        let (g_grad, _) = backward_vec(g, x, &mid_grad)?;
        g_grads.add_scaled(&g_grad, 1.0);
    }
    for y in batch_y {
        let mid = forward_vec(f, y)?;
        let cycled = forward_vec(g, &mid)?;
        let u = sub(&cycled, y);
        total += l1(&u) / batch_y.len() as f64;
        let gout: Vec<f64> = l1_sign(&u)
            .into_iter()
            .map(|s| s / batch_y.len() as f64)
            .collect();
        let (g_grad, mid_grad) = backward_vec(g, &mid, &gout)?;
        g_grads.add_scaled(&g_grad, 1.0);
        let (f_grad, _) = backward_vec(f, y, &mid_grad)?;
        f_grads.add_scaled(&f_grad, 1.0);
    }
    Ok((total, g_grads, f_grads))
}

/// Gradients of `loss_adv_discriminator` with respect to D only.
pub fn loss_adv_discriminator_grads(
    d: &MlpParams,
    real: &[Vec<f64>],
    fake: &[Vec<f64>],
) -> Result<(f64, MlpParams)> {
    check_batch("real", real, d.in_dim())?;
    check_batch("fake", fake, d.in_dim())?;
    let mut grads = d.zeros_like();
    let mut total = 0.0;
    for r in real {
        let s = forward_vec(d, r)?[0];
        total += (s - 1.0) * (s - 1.0) / real.len() as f64;
        let (grad, _) = backward_vec(d, r, &[2.0 * (s - 1.0) / real.len() as f64])?;
        grads.add_scaled(&grad, 1.0);
    }
    for f in fake {
        let s = forward_vec(d, f)?[0];
        total += s * s / fake.len() as f64;
        let (grad, _) = backward_vec(d, f, &[2.0 * s / fake.len() as f64])?;
        grads.add_scaled(&grad, 1.0);
    }
    Ok((total, grads))
}

/// Gradients of `mean (D(gen(input)) - 1)^2` with respect to both the
/// generator and the discriminator it plays against.
pub fn loss_adv_generator_grads(
    d: &MlpParams,
    gen: &MlpParams,
    inputs: &[Vec<f64>],
) -> Result<(f64, MlpParams, MlpParams)> {
    check_batch("input", inputs, gen.in_dim())?;
    let mut gen_grads = gen.zeros_like();
    let mut d_grads = d.zeros_like();
    let mut total = 0.0;
    for x in inputs {
        let fake = forward_vec(gen, x)?;
        let s = forward_vec(d, &fake)?[0];
        total += (s - 1.0) * (s - 1.0) / inputs.len() as f64;
        let (d_grad, fake_grad) = backward_vec(d, &fake, &[2.0 * (s - 1.0) / inputs.len() as f64])?;
        d_grads.add_scaled(&d_grad, 1.0);
        let (g_grad, _) = backward_vec(gen, x, &fake_grad)?;
        gen_grads.add_scaled(&g_grad, 1.0);
    }
    Ok((total, d_grads, gen_grads))
}

/// One discriminator step's loss and gradients: D_Y judges real y
/// against detached G(x), D_X judges real x against detached F(y).
pub fn discriminator_step_grads(
    model: &GanModel,
    batch_x: &[Vec<f64>],
    batch_y: &[Vec<f64>],
) -> Result<(f64, MlpParams, MlpParams)> {
    let fake_y: Vec<Vec<f64>> = batch_x
        .iter()
        .map(|x| forward_vec(&model.g, x))
        .collect::<Result<_>>()?;
    let fake_x: Vec<Vec<f64>> = batch_y
        .iter()
        .map(|y| forward_vec(&model.f, y))
        .collect::<Result<_>>()?;
    let (loss_y, dy_grads) = loss_adv_discriminator_grads(&model.d_y, batch_y, &fake_y)?;
    let (loss_x, dx_grads) = loss_adv_discriminator_grads(&model.d_x, batch_x, &fake_x)?;
    Ok((loss_x + loss_y, dx_grads, dy_grads))
}

/// One generator step's loss and gradients with respect to G and F; the
/// discriminators are treated as constants.
pub fn generator_step_grads(
    model: &GanModel,
    weights: &GanLossWeights,
    batch_x: &[Vec<f64>],
    batch_y: &[Vec<f64>],
) -> Result<(f64, MlpParams, MlpParams)> {
    weights.validate()?;
    let (adv_g, _, g_adv_grads) = loss_adv_generator_grads(&model.d_y, &model.g, batch_x)?;
    let (adv_f, _, f_adv_grads) = loss_adv_generator_grads(&model.d_x, &model.f, batch_y)?;
    let (cyc, g_cyc, f_cyc) = loss_cycle_grads(&model.g, &model.f, batch_x, batch_y)?;
    let (id, g_id, f_id) = loss_identity_grads(&model.g, &model.f, batch_x, batch_y)?;

    let mut g_grads = g_adv_grads;
    g_grads.add_scaled(&g_cyc, weights.alpha);
    g_grads.add_scaled(&g_id, weights.beta);
    let mut f_grads = f_adv_grads;
    f_grads.add_scaled(&f_cyc, weights.alpha);
    f_grads.add_scaled(&f_id, weights.beta);

    Ok((
        adv_g + adv_f + weights.alpha * cyc + weights.beta * id,
        g_grads,
        f_grads,
    ))
}

// ---------------------------------------------------------------------------
// Training and augmentation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct GanEpochLog {
    pub epoch: usize,
    pub generator_lr: f64,
    pub discriminator_lr: f64,
    pub generator_loss: f64,
    pub discriminator_loss: f64,
}

type SideFeatures = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Splits records by partition side into raw feature batches.
fn side_features(records: &[SampleRecord]) -> Result<SideFeatures> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in records {
        match r.side {
            Some(Side::X) => xs.push(r.features.clone()),
            Some(Side::Y) => ys.push(r.features.clone()),
            None => {
                return Err(Error::schema(format!(
                    "sample {} has no side; run the one-view partition first",
                    r.sample_id
                )))
            }
        }
    }
    Ok((xs, ys))
}

/// Alternating per-batch training: one Adam step on both discriminators,
/// then one joint Adam step on both generators. Learning rates follow
/// the config's linear decay. Deterministic given the seed.
pub fn train_gan(
    records: &[SampleRecord],
    config: &GanTrainConfig,
    weights: &GanLossWeights,
) -> Result<(GanModel, Vec<GanEpochLog>)> {
    config.validate()?;
    weights.validate()?;
    let (xs, ys) = side_features(records)?;
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::data(format!(
            "both sides must be non-empty (X has {}, Y has {})",
            xs.len(),
            ys.len()
        )));
    }
    let dim = xs[0].len();
    let mut rng = Rng::new(config.seed);
    let mut model = GanModel::seeded(dim, &mut rng)?;

    let mut adam_g = AdamState::new(&model.g);
    let mut adam_f = AdamState::new(&model.f);
    let mut adam_dx = AdamState::new(&model.d_x);
    let mut adam_dy = AdamState::new(&model.d_y);

    let batch = config.batch_size.min(xs.len()).min(ys.len());
    let batches_per_epoch = (xs.len().min(ys.len()) / batch).max(1);

    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let factor = config.lr_factor(epoch);
        let gen_lr = config.generator_lr * factor;
        let disc_lr = config.discriminator_lr * factor;

        let mut x_order: Vec<usize> = (0..xs.len()).collect();
        let mut y_order: Vec<usize> = (0..ys.len()).collect();
        rng.shuffle(&mut x_order);
        rng.shuffle(&mut y_order);

        let mut disc_sum = 0.0;
        let mut gen_sum = 0.0;
        for b in 0..batches_per_epoch {
            let bx: Vec<Vec<f64>> = x_order[b * batch..(b + 1) * batch]
                .iter()
                .map(|&i| xs[i].clone())
                .collect();
            let by: Vec<Vec<f64>> = y_order[b * batch..(b + 1) * batch]
                .iter()
                .map(|&i| ys[i].clone())
                .collect();

            let (d_loss, dx_grads, dy_grads) = discriminator_step_grads(&model, &bx, &by)
                .map_err(|e| e.in_stage(&format!("gan epoch {epoch} batch {b} (discriminator)")))?;
            adam_step(&mut model.d_x, &dx_grads, &mut adam_dx, disc_lr)?;
            adam_step(&mut model.d_y, &dy_grads, &mut adam_dy, disc_lr)?;

            let (g_loss, g_grads, f_grads) = generator_step_grads(&model, weights, &bx, &by)
                .map_err(|e| e.in_stage(&format!("gan epoch {epoch} batch {b} (generator)")))?;
            adam_step(&mut model.g, &g_grads, &mut adam_g, gen_lr)?;
            adam_step(&mut model.f, &f_grads, &mut adam_f, gen_lr)?;

            if !d_loss.is_finite() || !g_loss.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite loss at epoch {epoch} batch {b} (d={d_loss}, g={g_loss})"
                )));
            }
            disc_sum += d_loss;
            gen_sum += g_loss;
        }
        log.push(GanEpochLog {
            epoch,
            generator_lr: gen_lr,
            discriminator_lr: disc_lr,
            generator_loss: gen_sum / batches_per_epoch as f64,
            discriminator_loss: disc_sum / batches_per_epoch as f64,
        });
    }
    Ok((model, log))
}

/// The order-0 input records followed by their minted order-1/2
/// derivatives: the on-disk layout of an augmented dataset.
pub fn augment_and_merge(model: &GanModel, records: &[SampleRecord]) -> Result<Vec<SampleRecord>> {
    let minted = augment_dataset(model, records)?;
    let mut all = records.to_vec();
    all.extend(minted);
    Ok(all)
}

/// Mints the augmented records: for a side-X source x the transferred
/// sample is G(x) and the reconstruction F(G(x)); mirrored for side Y.
/// Augmented records inherit identity, camera and side, and point back
/// at their source. Output is ordered by sample id; ids continue past
/// the largest source id.
pub fn augment_dataset(model: &GanModel, records: &[SampleRecord]) -> Result<Vec<SampleRecord>> {
    model.validate()?;
    let mut sources: Vec<&SampleRecord> = records.iter().collect();
    for r in &sources {
        if r.order != Order::Zero {
            return Err(Error::schema(format!(
                "augmentation input must be order-0; sample {} has order {}",
                r.sample_id,
                r.order.as_u8()
            )));
        }
    }
    sources.sort_by_key(|r| r.sample_id);
    let base = sources.last().map(|r| r.sample_id + 1).unwrap_or(0);
    let mut out = Vec::with_capacity(2 * sources.len());
    for (k, r) in sources.iter().enumerate() {
        let side = r.side.ok_or_else(|| {
            Error::schema(format!(
                "sample {} has no side; cannot augment",
                r.sample_id
            ))
        })?;
        let (first, second) = match side {
            Side::X => (&model.g, &model.f),
            Side::Y => (&model.f, &model.g),
        };
        let transferred = forward_vec(first, &r.features)?;
        let reconstructed = forward_vec(second, &transferred)?;
        let make = |order: Order, features: Vec<f64>, id: u64| SampleRecord {
            sample_id: id,
            identity_id: r.identity_id,
            camera_id: r.camera_id,
            side: Some(side),
            order,
            source_sample_id: r.sample_id,
            features,
        };
        out.push(make(Order::One, transferred, base + 2 * k as u64));
        out.push(make(Order::Two, reconstructed, base + 2 * k as u64 + 1));
    }
    Ok(out)
}

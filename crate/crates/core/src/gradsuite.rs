//! Harness comparing every analytic gradient in the crate against the
//! central finite-difference oracle at seeded random parameter points.
//!
//! Points that sit near a non-smooth spot (an L1 or relu kink, a hinge
//! boundary, or a near-tie in hardest-pair selection) are skipped and
//! counted: the margin threshold is far above the mandated 1e-6
//! exclusion so a finite-difference step can never straddle a kink.

use crate::error::Result;
use crate::gan::{
    loss_adv_discriminator, loss_adv_discriminator_grads, loss_adv_generator,
    loss_adv_generator_grads, loss_cycle, loss_cycle_grads, loss_identity, loss_identity_grads,
    GanModel,
};
use crate::metric_loss::{
    batch_center_loss, objective_value, objective_with_grads, selection_tie_margin, Batch,
    BatchSample, IdentityGroup, MarginMode, TripletConfig,
};
use crate::numerics::fd::{finite_diff_grad, max_relative_error};
use crate::numerics::mlp::{backward_vec, forward_vec, relu_kink_margin, Activation, MlpParams};
use crate::numerics::rng::Rng;

/// Points closer than this to a kink or tie are not gradient-checked.
const KINK_MARGIN: f64 = 1e-3;
/// Components this small on both sides count as agreeing (the oracle's
/// noise floor dominates below it).
const REL_ERR_FLOOR: f64 = 1e-7;

const FEATURE_DIM: usize = 6;
const BATCH: usize = 4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub points: usize,
    pub skipped: usize,
}

struct Outcome {
    err: Option<f64>,
}

fn random_batch(rng: &mut Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.normal()).collect())
        .collect()
}

fn min_abs(values: &[f64]) -> f64 {
    values.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

fn l1_margin(net: &MlpParams, inputs: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64> {
    let mut margin = f64::INFINITY;
    for (x, r) in inputs.iter().zip(reference) {
        let out = forward_vec(net, x)?;
        let diff: Vec<f64> = out.iter().zip(r).map(|(a, b)| a - b).collect();
        margin = margin.min(min_abs(&diff));
    }
    Ok(margin)
}

fn check_identity(rng: &mut Rng, step: f64) -> Result<Outcome> {
    let model = GanModel::seeded(FEATURE_DIM, rng)?;
    let bx = random_batch(rng, BATCH, FEATURE_DIM);
    let by = random_batch(rng, BATCH, FEATURE_DIM);
    let margin = l1_margin(&model.f, &bx, &bx)?.min(l1_margin(&model.g, &by, &by)?);
    if margin < KINK_MARGIN {
        return Ok(Outcome { err: None });
    }
    let (_, g_analytic, f_analytic) = loss_identity_grads(&model.g, &model.f, &bx, &by)?;
    let g_numeric = finite_diff_grad(
        |g| loss_identity(g, &model.f, &bx, &by).unwrap(),
        &model.g,
        step,
    )?;
    let f_numeric = finite_diff_grad(
        |f| loss_identity(&model.g, f, &bx, &by).unwrap(),
        &model.f,
        step,
    )?;
    let err = max_relative_error(&g_analytic, &g_numeric, REL_ERR_FLOOR).max(max_relative_error(
        &f_analytic,
        &f_numeric,
        REL_ERR_FLOOR,
    ));
    Ok(Outcome { err: Some(err) })
}

fn check_cycle(rng: &mut Rng, step: f64) -> Result<Outcome> {
    let model = GanModel::seeded(FEATURE_DIM, rng)?;
    let bx = random_batch(rng, BATCH, FEATURE_DIM);
    let by = random_batch(rng, BATCH, FEATURE_DIM);
    let cycled_x: Vec<Vec<f64>> = bx
        .iter()
        .map(|x| forward_vec(&model.g, x))
        .collect::<Result<_>>()?;
    let cycled_y: Vec<Vec<f64>> = by
        .iter()
        .map(|y| forward_vec(&model.f, y))
        .collect::<Result<_>>()?;
    let margin = l1_margin(&model.f, &cycled_x, &bx)?.min(l1_margin(&model.g, &cycled_y, &by)?);
    if margin < KINK_MARGIN {
        return Ok(Outcome { err: None });
    }
    let (_, g_analytic, f_analytic) = loss_cycle_grads(&model.g, &model.f, &bx, &by)?;
    let g_numeric = finite_diff_grad(
        |g| loss_cycle(g, &model.f, &bx, &by).unwrap(),
        &model.g,
        step,
    )?;
    let f_numeric = finite_diff_grad(
        |f| loss_cycle(&model.g, f, &bx, &by).unwrap(),
        &model.f,
        step,
    )?;
    let err = max_relative_error(&g_analytic, &g_numeric, REL_ERR_FLOOR).max(max_relative_error(
        &f_analytic,
        &f_numeric,
        REL_ERR_FLOOR,
    ));
    Ok(Outcome { err: Some(err) })
}

fn relu_margin_over(d: &MlpParams, batches: &[&[Vec<f64>]]) -> Result<f64> {
    let mut margin = f64::INFINITY;
    for batch in batches {
        for v in *batch {
            margin = margin.min(relu_kink_margin(d, v)?);
        }
    }
    Ok(margin)
}

fn check_discriminator_adv(rng: &mut Rng, step: f64) -> Result<Outcome> {
    let model = GanModel::seeded(FEATURE_DIM, rng)?;
    let real = random_batch(rng, BATCH, FEATURE_DIM);
    let fake = random_batch(rng, BATCH, FEATURE_DIM);
    if relu_margin_over(&model.d_x, &[&real, &fake])? < KINK_MARGIN {
        return Ok(Outcome { err: None });
    }
    let (_, analytic) = loss_adv_discriminator_grads(&model.d_x, &real, &fake)?;
    let numeric = finite_diff_grad(
        |d| loss_adv_discriminator(d, &real, &fake).unwrap(),
        &model.d_x,
        step,
    )?;
    Ok(Outcome {
        err: Some(max_relative_error(&analytic, &numeric, REL_ERR_FLOOR)),
    })
}

fn check_generator_adv(rng: &mut Rng, step: f64) -> Result<Outcome> {
    let model = GanModel::seeded(FEATURE_DIM, rng)?;
    let inputs = random_batch(rng, BATCH, FEATURE_DIM);
    let fakes: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| forward_vec(&model.g, x))
        .collect::<Result<_>>()?;
    if relu_margin_over(&model.d_y, &[&fakes])? < KINK_MARGIN {
        return Ok(Outcome { err: None });
    }
    let (_, d_analytic, gen_analytic) = loss_adv_generator_grads(&model.d_y, &model.g, &inputs)?;
    let gen_numeric = finite_diff_grad(
        |g| {
            let fakes: Vec<Vec<f64>> = inputs.iter().map(|x| forward_vec(g, x).unwrap()).collect();
            loss_adv_generator(&model.d_y, &fakes).unwrap()
        },
        &model.g,
        step,
    )?;
    let d_numeric = finite_diff_grad(|d| loss_adv_generator(d, &fakes).unwrap(), &model.d_y, step)?;
    let err = max_relative_error(&gen_analytic, &gen_numeric, REL_ERR_FLOOR)
        .max(max_relative_error(&d_analytic, &d_numeric, REL_ERR_FLOOR));
    Ok(Outcome { err: Some(err) })
}

fn embed_net(rng: &mut Rng) -> Result<MlpParams> {
    MlpParams::seeded(
        &[FEATURE_DIM, 8, 4],
        &[Activation::Tanh, Activation::None],
        rng,
    )
}

fn random_training_batch(rng: &mut Rng, k: usize) -> Batch {
    use crate::synthcam::Order;
    let mut groups = Vec::new();
    let mut next = 0u64;
    for identity in 0..k as u64 {
        let mut samples = Vec::new();
        for source in 0..2u64 {
            for order in Order::ALL {
                samples.push(BatchSample {
                    sample_id: next,
                    identity_id: identity,
                    order,
                    source_sample_id: identity * 2 + source,
                    features: (0..FEATURE_DIM).map(|_| rng.normal()).collect(),
                });
                next += 1;
            }
        }
        groups.push(IdentityGroup {
            identity_id: identity,
            samples,
        });
    }
    Batch { groups }
}

fn check_objective(rng: &mut Rng, step: f64, config: TripletConfig) -> Result<Outcome> {
    let batch = random_training_batch(rng, 3);
    let embed = embed_net(rng)?;
    let embeddings: Vec<Vec<f64>> = batch
        .samples()
        .map(|s| forward_vec(&embed, &s.features))
        .collect::<Result<_>>()?;
    if selection_tie_margin(&embeddings, &batch.labels(), &config)? < KINK_MARGIN {
        return Ok(Outcome { err: None });
    }
    let (_, analytic) = objective_with_grads(&batch, &embed, &config)?;
    let numeric = finite_diff_grad(
        |p| objective_value(&batch, p, &config).unwrap(),
        &embed,
        step,
    )?;
    Ok(Outcome {
        err: Some(max_relative_error(&analytic, &numeric, REL_ERR_FLOOR)),
    })
}

fn check_center(rng: &mut Rng, step: f64) -> Result<Outcome> {
    let batch = random_training_batch(rng, 3);
    let embed = embed_net(rng)?;
    // Composition of the center loss with the embedding net; centers are
    // batch means, so the stop-gradient form equals the true gradient.
    let value = |p: &MlpParams| -> f64 {
        let embeddings: Vec<Vec<f64>> = batch
            .samples()
            .map(|s| forward_vec(p, &s.features).unwrap())
            .collect();
        batch_center_loss(&embeddings, &batch.labels()).unwrap().0
    };
    let embeddings: Vec<Vec<f64>> = batch
        .samples()
        .map(|s| forward_vec(&embed, &s.features))
        .collect::<Result<_>>()?;
    let (_, grads_e) = batch_center_loss(&embeddings, &batch.labels())?;
    let mut analytic = embed.zeros_like();
    for (s, ge) in batch.samples().zip(&grads_e) {
        let (g, _) = backward_vec(&embed, &s.features, ge)?;
        analytic.add_scaled(&g, 1.0);
    }
    let numeric = finite_diff_grad(value, &embed, step)?;
    Ok(Outcome {
        err: Some(max_relative_error(&analytic, &numeric, REL_ERR_FLOOR)),
    })
}

/// Runs every check at `points` valid seeded parameter points with the
/// given finite-difference step. Seeds advance until enough non-skipped
/// points accumulate.
pub fn run_gradient_suite(seed: u64, points: usize, step: f64) -> Result<Vec<GradCheckReport>> {
    let hinge = TripletConfig {
        margin: MarginMode::Hinge { m: 0.3 },
        lambda: 0.0,
    };
    let softplus = TripletConfig {
        margin: MarginMode::Softplus,
        lambda: 0.0,
    };
    let full = TripletConfig {
        margin: MarginMode::Hinge { m: 0.3 },
        lambda: 0.001,
    };
    type Check = Box<dyn Fn(&mut Rng) -> Result<Outcome>>;
    let checks: Vec<(&str, Check)> = vec![
        (
            "identity-consistency",
            Box::new(move |rng| check_identity(rng, step)),
        ),
        (
            "cycle-consistency",
            Box::new(move |rng| check_cycle(rng, step)),
        ),
        (
            "discriminator-adversarial",
            Box::new(move |rng| check_discriminator_adv(rng, step)),
        ),
        (
            "generator-adversarial",
            Box::new(move |rng| check_generator_adv(rng, step)),
        ),
        (
            "triplet-hinge",
            Box::new(move |rng| check_objective(rng, step, hinge)),
        ),
        (
            "triplet-softplus",
            Box::new(move |rng| check_objective(rng, step, softplus)),
        ),
        ("center", Box::new(move |rng| check_center(rng, step))),
        (
            "full-objective",
            Box::new(move |rng| check_objective(rng, step, full)),
        ),
    ];

    let mut reports = Vec::with_capacity(checks.len());
    for (name, check) in checks {
        let mut max_err: f64 = 0.0;
        let mut valid = 0usize;
        let mut skipped = 0usize;
        let mut point_seed = seed;
        while valid < points {
            let mut rng = Rng::new(crate::numerics::rng::derive_seed(point_seed, name));
            point_seed += 1;
            match check(&mut rng)?.err {
                Some(err) => {
                    max_err = max_err.max(err);
                    valid += 1;
                }
                None => skipped += 1,
            }
        }
        reports.push(GradCheckReport {
            name: name.to_string(),
            max_rel_err: max_err,
            points: valid,
            skipped,
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes_the_tolerance() {
        let reports = run_gradient_suite(99, 3, 1e-5).unwrap();
        assert_eq!(reports.len(), 8);
        for r in &reports {
            assert!(
                r.max_rel_err < 1e-4,
                "{}: max rel err {}",
                r.name,
                r.max_rel_err
            );
            assert_eq!(r.points, 3);
        }
    }
}

//! Two-phase training orchestration: style-transfer GAN first, then the
//! embedding, plus the decaying learning-rate schedule and the pipeline
//! runner that wires every stage to files.

use std::path::{Path, PathBuf};

use crate::checkpoint::{save_embedding_checkpoint, save_gan_checkpoint};
use crate::error::{Error, Result};
use crate::evalrank::{evaluate, write_reports, EvalProtocol, EvalReport};
use crate::gan::{augment_and_merge, train_gan, GanLossWeights, GanTrainConfig};
use crate::metric_loss::{objective_with_grads, sample_batch, MarginMode, TripletConfig};
use crate::multiorder::{collect_tri_order_sets, Combination};
use crate::numerics::adam::{adam_step, AdamState};
use crate::numerics::mlp::{Activation, MlpParams};
use crate::numerics::rng::{derive_seed, Rng};
use crate::synthcam::io::{write_atomic, write_dataset};
use crate::synthcam::{generate_dataset, split_one_view, DatasetManifest, Order, SampleRecord};

/// Exponential decay after a flat warm period:
/// `gamma0` up to `t0`, then `gamma0 * 0.001^((t - t0) / (t1 - t0))`
/// until training stops at `t1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub gamma0: f64,
    pub t0: u64,
    pub t1: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            gamma0: 3e-4,
            t0: 750,
            t1: 1500,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.gamma0.is_nan() || self.gamma0 <= 0.0 {
            return Err(Error::config(format!(
                "gamma0 must be > 0, got {}",
                self.gamma0
            )));
        }
        if self.t1 < self.t0 {
            return Err(Error::config(format!(
                "t1 {} must be >= t0 {}",
                self.t1, self.t0
            )));
        }
        Ok(())
    }

    /// Learning rate at iteration `t`; errors past `t1` where training
    /// is over.
    pub fn lr_at(&self, t: u64) -> Result<f64> {
        if t > self.t1 {
            return Err(Error::usage(format!(
                "training complete: iteration {t} exceeds t1 {}",
                self.t1
            )));
        }
        if t <= self.t0 || self.t1 == self.t0 {
            Ok(self.gamma0)
        } else {
            let exponent = (t - self.t0) as f64 / (self.t1 - self.t0) as f64;
            Ok(self.gamma0 * 0.001f64.powf(exponent))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReidTrainConfig {
    /// Identities per batch.
    pub k: usize,
    /// Orders drawn into each identity group (all three by default).
    pub orders: Vec<Order>,
    pub margin: MarginMode,
    /// Center-loss weight.
    pub lambda: f64,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub schedule: LrSchedule,
    /// Snapshot interval in iterations; the final model is always kept.
    pub checkpoint_interval: Option<u64>,
    pub seed: u64,
}

impl Default for ReidTrainConfig {
    fn default() -> Self {
        ReidTrainConfig {
            k: 12,
            orders: Order::ALL.to_vec(),
            margin: MarginMode::Hinge { m: 0.3 },
            lambda: 0.001,
            hidden_dim: 64,
            embed_dim: 32,
            schedule: LrSchedule::default(),
            checkpoint_interval: None,
            seed: 23,
        }
    }
}

impl ReidTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::config(
                "k must be >= 2 (batch-hard mining needs two identities)",
            ));
        }
        if self.orders.is_empty() {
            return Err(Error::config("orders must not be empty"));
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(Error::config("embedding dims must be > 0"));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        self.schedule.validate()
    }

    pub fn triplet_config(&self) -> TripletConfig {
        TripletConfig {
            margin: self.margin,
            lambda: self.lambda,
        }
    }

    pub fn echo(&self) -> Vec<String> {
        let orders: Vec<String> = self.orders.iter().map(|o| o.as_u8().to_string()).collect();
        let margin = match self.margin {
            MarginMode::Hinge { m } => format!("margin_mode = hinge\nm = {m}"),
            MarginMode::Softplus => "margin_mode = softplus".to_string(),
        };
        vec![
            format!("k = {}", self.k),
            format!("orders = {}", orders.join(",")),
            margin,
            format!("lambda = {}", self.lambda),
            format!("hidden_dim = {}", self.hidden_dim),
            format!("embed_dim = {}", self.embed_dim),
            format!("gamma0 = {}", self.schedule.gamma0),
            format!("t0 = {}", self.schedule.t0),
            format!("t1 = {}", self.schedule.t1),
            format!("seed = {}", self.seed),
        ]
    }
}

/// One training iteration's record; the applied learning rate is always
/// recoverable from here.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iteration: u64,
    pub lr: f64,
    pub loss: f64,
}

/// Output of the embedding phase: the final model, per-iteration log,
/// and any interval snapshots (iteration, params).
#[derive(Debug, Clone)]
pub struct ReidTrainOutput {
    pub model: MlpParams,
    pub log: Vec<IterationLog>,
    pub snapshots: Vec<(u64, MlpParams)>,
}

/// Trains the embedding to `t1` iterations: uniform random PK batches,
/// the triplet + center objective, Adam with the decaying schedule.
/// Deterministic given the seed.
pub fn train_reid(records: &[SampleRecord], config: &ReidTrainConfig) -> Result<ReidTrainOutput> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::data("no training records"));
    }
    let feature_dim = records[0].features.len();
    let mut rng = Rng::new(config.seed);
    let mut model = MlpParams::seeded(
        &[feature_dim, config.hidden_dim, config.embed_dim],
        &[Activation::Tanh, Activation::None],
        &mut rng,
    )?;
    let mut adam = AdamState::new(&model);
    let triplet = config.triplet_config();

    let mut log = Vec::with_capacity(config.schedule.t1 as usize);
    let mut snapshots = Vec::new();
    for t in 1..=config.schedule.t1 {
        let lr = config.schedule.lr_at(t)?;
        let batch = sample_batch(records, config.k, &config.orders, &mut rng)
            .map_err(|e| e.in_stage(&format!("reid iteration {t}")))?;
        let (loss, grads) = objective_with_grads(&batch, &model, &triplet)
            .map_err(|e| e.in_stage(&format!("reid iteration {t}")))?;
        if !loss.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite loss {loss} at reid iteration {t}"
            )));
        }
        adam_step(&mut model, &grads, &mut adam, lr)?;
        log.push(IterationLog {
            iteration: t,
            lr,
            loss,
        });
        if let Some(interval) = config.checkpoint_interval {
            if interval > 0 && t % interval == 0 && t != config.schedule.t1 {
                snapshots.push((t, model.clone()));
            }
        }
    }
    Ok(ReidTrainOutput {
        model,
        log,
        snapshots,
    })
}

/// Everything the pipeline needs for one full run.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub manifest: DatasetManifest,
    pub gan: GanTrainConfig,
    pub weights: GanLossWeights,
    pub reid: ReidTrainConfig,
    pub combination: Combination,
    pub protocol: EvalProtocol,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            manifest: DatasetManifest::default(),
            // The pipeline's GAN schedule: constant rates for 100 epochs,
            // then linear decay to zero at 150. The standalone
            // GanTrainConfig default budget is much longer; the pipeline
            // dataset is larger, so epochs are dearer and this shorter
            // schedule converges adequately.
            gan: GanTrainConfig {
                epochs: 150,
                decay_start: 100,
                ..GanTrainConfig::default()
            },
            weights: GanLossWeights::default(),
            reid: ReidTrainConfig::default(),
            combination: Combination::parse("d1+d2+d10").expect("valid default"),
            protocol: EvalProtocol::default(),
        }
    }
}

/// Paths of everything a pipeline run writes, plus the final report.
#[derive(Debug, Clone)]
pub struct PipelineArtifacts {
    pub manifest_echo: PathBuf,
    pub train_dataset: PathBuf,
    pub test_dataset: PathBuf,
    pub gan_checkpoint: PathBuf,
    pub augmented_train: PathBuf,
    pub augmented_test: PathBuf,
    pub embedding_checkpoint: PathBuf,
    pub report_csv: PathBuf,
    pub report_md: PathBuf,
    pub report: EvalReport,
}

/// Runs generate -> split -> train-gan -> augment -> train-reid ->
/// evaluate, writing every artifact under `out_dir`. Stage failures
/// carry the stage name.
pub fn run_pipeline(config: &PipelineConfig, out_dir: &Path) -> Result<PipelineArtifacts> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = |name: &str| out_dir.join(name);

    let mut data = generate_dataset(&config.manifest).map_err(|e| e.in_stage("generate"))?;
    split_one_view(
        &mut data.train,
        derive_seed(config.manifest.seed, "split-train"),
    )
    .map_err(|e| e.in_stage("split"))?;
    split_one_view(
        &mut data.test,
        derive_seed(config.manifest.seed, "split-test"),
    )
    .map_err(|e| e.in_stage("split"))?;

    let manifest_echo = path("manifest.cfg");
    write_atomic(&manifest_echo, config.manifest.to_kv_string().as_bytes())
        .map_err(|e| e.in_stage("generate"))?;
    let train_dataset = path("dataset_train.jsonl");
    let test_dataset = path("dataset_test.jsonl");
    write_dataset(&train_dataset, &data.train).map_err(|e| e.in_stage("generate"))?;
    write_dataset(&test_dataset, &data.test).map_err(|e| e.in_stage("generate"))?;

    let (gan_model, _gan_log) = train_gan(&data.train, &config.gan, &config.weights)
        .map_err(|e| e.in_stage("train-gan"))?;
    let gan_checkpoint = path("gan.ckpt");
    save_gan_checkpoint(
        &gan_checkpoint,
        &gan_model,
        &config.weights,
        config.gan.seed,
        &config.gan.echo(),
    )
    .map_err(|e| e.in_stage("train-gan"))?;

    let train_augmented =
        augment_and_merge(&gan_model, &data.train).map_err(|e| e.in_stage("augment"))?;
    let test_augmented =
        augment_and_merge(&gan_model, &data.test).map_err(|e| e.in_stage("augment"))?;
    let augmented_train = path("augmented_train.jsonl");
    let augmented_test = path("augmented_test.jsonl");
    write_dataset(&augmented_train, &train_augmented).map_err(|e| e.in_stage("augment"))?;
    write_dataset(&augmented_test, &test_augmented).map_err(|e| e.in_stage("augment"))?;

    let reid_out =
        train_reid(&train_augmented, &config.reid).map_err(|e| e.in_stage("train-reid"))?;
    let embedding_checkpoint = path("embed.ckpt");
    for (iteration, snapshot) in &reid_out.snapshots {
        save_embedding_checkpoint(
            &path(&format!("embed_iter{iteration}.ckpt")),
            snapshot,
            config.reid.seed,
            &config.reid.echo(),
        )
        .map_err(|e| e.in_stage("train-reid"))?;
    }
    save_embedding_checkpoint(
        &embedding_checkpoint,
        &reid_out.model,
        config.reid.seed,
        &config.reid.echo(),
    )
    .map_err(|e| e.in_stage("train-reid"))?;

    let sets = collect_tri_order_sets(&reid_out.model, &test_augmented)
        .map_err(|e| e.in_stage("evaluate"))?;
    let report = evaluate(&sets, &config.combination, &config.protocol)
        .map_err(|e| e.in_stage("evaluate"))?;
    let report_csv = path("report.csv");
    let report_md = path("report.md");
    write_reports(&report_csv, &report_md, std::slice::from_ref(&report))
        .map_err(|e| e.in_stage("evaluate"))?;

    Ok(PipelineArtifacts {
        manifest_echo,
        train_dataset,
        test_dataset,
        gan_checkpoint,
        augmented_train,
        augmented_test,
        embedding_checkpoint,
        report_csv,
        report_md,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_hits_the_pinned_endpoints() {
        let s = LrSchedule {
            gamma0: 3e-4,
            t0: 20_000,
            t1: 40_000,
        };
        assert_eq!(s.lr_at(0).unwrap(), 3e-4);
        assert_eq!(s.lr_at(20_000).unwrap(), 3e-4);
        // Exponent 1: exactly gamma0 * 0.001.
        assert!((s.lr_at(40_000).unwrap() - 3e-7).abs() < 1e-20);
        // Midpoint: gamma0 * 0.001^0.5.
        let mid = s.lr_at(30_000).unwrap();
        assert!((mid - 9.486832980505136e-6).abs() < 1e-15, "{mid}");
    }

    #[test]
    fn schedule_is_continuous_and_non_increasing() {
        let s = LrSchedule {
            gamma0: 1e-3,
            t0: 100,
            t1: 200,
        };
        let mut prev = f64::INFINITY;
        for t in 0..=200 {
            let lr = s.lr_at(t).unwrap();
            assert!(lr > 0.0);
            assert!(lr <= prev + 1e-18, "t={t}");
            prev = lr;
        }
        assert_eq!(s.lr_at(100).unwrap(), 1e-3);
    }

    #[test]
    fn iterating_past_t1_is_a_usage_error() {
        let s = LrSchedule::default();
        let err = s.lr_at(s.t1 + 1).unwrap_err();
        assert!(matches!(err, Error::Usage(_)), "{err}");
        assert!(err.to_string().contains("complete"), "{err}");
    }

    fn tiny_reid_records() -> Vec<SampleRecord> {
        use crate::synthcam::Side;
        let mut records = Vec::new();
        let mut rng = Rng::new(40);
        let mut next = 0u64;
        for identity in 0..6u64 {
            for lineage in 0..2u64 {
                let source = next;
                let side = if lineage == 0 { Side::X } else { Side::Y };
                let base: Vec<f64> = (0..4).map(|_| rng.normal() + identity as f64).collect();
                for order in Order::ALL {
                    records.push(SampleRecord {
                        sample_id: if order == Order::Zero {
                            source
                        } else {
                            500 + next * 2 + order.as_u8() as u64
                        },
                        identity_id: identity,
                        camera_id: 0,
                        side: Some(side),
                        order,
                        source_sample_id: source,
                        features: base
                            .iter()
                            .map(|v| v + 0.01 * order.as_u8() as f64)
                            .collect(),
                    });
                }
                next += 1;
            }
        }
        records
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let records = tiny_reid_records();
        let config = ReidTrainConfig {
            k: 2,
            schedule: LrSchedule {
                gamma0: 3e-4,
                t0: 0,
                t1: 0,
            },
            ..ReidTrainConfig::default()
        };
        let out = train_reid(&records, &config).unwrap();
        assert!(out.log.is_empty());
        let mut rng = Rng::new(config.seed);
        let init = MlpParams::seeded(
            &[4, config.hidden_dim, config.embed_dim],
            &[Activation::Tanh, Activation::None],
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.model, init);
    }

    #[test]
    fn identical_seeds_give_identical_loss_logs() {
        let records = tiny_reid_records();
        let config = ReidTrainConfig {
            k: 3,
            schedule: LrSchedule {
                gamma0: 3e-4,
                t0: 10,
                t1: 25,
            },
            ..ReidTrainConfig::default()
        };
        let a = train_reid(&records, &config).unwrap();
        let b = train_reid(&records, &config).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model, b.model);
        // Logged lr matches the schedule at every iteration.
        for entry in &a.log {
            assert_eq!(entry.lr, config.schedule.lr_at(entry.iteration).unwrap());
        }
    }

    #[test]
    fn training_reduces_the_loss_on_easy_data() {
        let records = tiny_reid_records();
        let config = ReidTrainConfig {
            k: 3,
            schedule: LrSchedule {
                gamma0: 1e-2,
                t0: 150,
                t1: 300,
            },
            ..ReidTrainConfig::default()
        };
        let out = train_reid(&records, &config).unwrap();
        let head: f64 = out.log[..50].iter().map(|l| l.loss).sum::<f64>() / 50.0;
        let tail: f64 = out.log[out.log.len() - 50..]
            .iter()
            .map(|l| l.loss)
            .sum::<f64>()
            / 50.0;
        assert!(tail < head, "no improvement: head {head}, tail {tail}");
    }

    #[test]
    fn snapshots_follow_the_interval() {
        let records = tiny_reid_records();
        let config = ReidTrainConfig {
            k: 2,
            checkpoint_interval: Some(10),
            schedule: LrSchedule {
                gamma0: 3e-4,
                t0: 10,
                t1: 30,
            },
            ..ReidTrainConfig::default()
        };
        let out = train_reid(&records, &config).unwrap();
        let iters: Vec<u64> = out.snapshots.iter().map(|(t, _)| *t).collect();
        assert_eq!(iters, vec![10, 20]);
    }
}

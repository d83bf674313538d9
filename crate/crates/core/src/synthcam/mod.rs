//! Synthetic multi-camera re-identification data.
//!
//! Identities are latent vectors rendered through per-camera affine
//! transforms plus gaussian noise, standing in for object appearances
//! captured by different cameras. Generation is fully determined by the
//! manifest seed: the RNG draw order is latents, base transform,
//! cameras, per-record noise, then the train/test identity shuffle.

pub mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::{derive_seed, Rng};

/// Domain side assigned by the one-view partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    X,
    Y,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::X => Side::Y,
            Side::Y => Side::X,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::X => "X",
            Side::Y => "Y",
        }
    }

    pub fn parse(s: &str) -> Result<Side> {
        match s {
            "X" => Ok(Side::X),
            "Y" => Ok(Side::Y),
            other => Err(Error::schema(format!(
                "side must be 'X' or 'Y', got '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Generation depth: real sample, style-transferred, reconstructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Order {
    Zero,
    One,
    Two,
}

impl Order {
    pub const ALL: [Order; 3] = [Order::Zero, Order::One, Order::Two];

    pub fn as_u8(self) -> u8 {
        match self {
            Order::Zero => 0,
            Order::One => 1,
            Order::Two => 2,
        }
    }

    pub fn from_u8(v: u8) -> Result<Order> {
        match v {
            0 => Ok(Order::Zero),
            1 => Ok(Order::One),
            2 => Ok(Order::Two),
            other => Err(Error::schema(format!(
                "order must be 0, 1 or 2, got {other}"
            ))),
        }
    }
}

/// One identity's latent appearance vector, drawn once.
#[derive(Debug, Clone)]
pub struct IdentityLatent {
    pub identity_id: u64,
    pub latent: Vec<f64>,
}

/// Affine camera: `features = transform * latent + offset + sigma * noise`.
#[derive(Debug, Clone)]
pub struct CameraModel {
    pub camera_id: u64,
    pub latent_dim: usize,
    pub feature_dim: usize,
    /// Row-major `(feature_dim, latent_dim)`.
    pub transform: Vec<f64>,
    pub offset: Vec<f64>,
    pub noise_sigma: f64,
}

impl CameraModel {
    /// Identity rendering with no shift and no noise; handy in tests.
    pub fn identity(camera_id: u64, dim: usize) -> CameraModel {
        let mut transform = vec![0.0; dim * dim];
        for i in 0..dim {
            transform[i * dim + i] = 1.0;
        }
        CameraModel {
            camera_id,
            latent_dim: dim,
            feature_dim: dim,
            transform,
            offset: vec![0.0; dim],
            noise_sigma: 0.0,
        }
    }
}

/// One feature vector with identity, partition side, generation order
/// and source lineage. Order-0 records are their own source.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub sample_id: u64,
    pub identity_id: u64,
    pub camera_id: u64,
    /// Assigned by the one-view partition; `None` until then.
    pub side: Option<Side>,
    pub order: Order,
    pub source_sample_id: u64,
    pub features: Vec<f64>,
}

/// Everything the generator is told; fully determines the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub identities: usize,
    pub cameras: usize,
    pub samples_per_identity: usize,
    pub latent_dim: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    /// Ratio of the noisiest camera's sigma to the cleanest one's;
    /// per-camera sigmas span a geometric ramp with this factor (1 =
    /// identical cameras). Models blur/illumination differences between
    /// camera installations.
    pub noise_ramp: f64,
    /// Scale of the per-camera deviation from the shared base transform.
    pub camera_spread: f64,
    /// Scale of per-camera feature offsets.
    pub offset_scale: f64,
    pub train_fraction: f64,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        DatasetManifest {
            seed: 9,
            identities: 300,
            cameras: 4,
            samples_per_identity: 6,
            latent_dim: 10,
            feature_dim: 32,
            noise_sigma: 0.45,
            noise_ramp: 1.0,
            camera_spread: 0.5,
            offset_scale: 1.5,
            train_fraction: 2.0 / 3.0,
        }
    }
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.identities == 0 {
            return Err(Error::config("manifest: identities must be >= 1"));
        }
        if self.feature_dim < 2 {
            return Err(Error::config("manifest: feature_dim must be >= 2"));
        }
        if self.latent_dim == 0 {
            return Err(Error::config("manifest: latent_dim must be >= 1"));
        }
        if self.cameras < 2 || self.samples_per_identity < 2 {
            return Err(Error::config(
                "manifest: each identity must appear in at least 2 cameras \
                 (cameras >= 2 and samples_per_identity >= 2)",
            ));
        }
        if self.noise_sigma.is_nan() || self.noise_sigma < 0.0 {
            return Err(Error::config("manifest: noise_sigma must be >= 0"));
        }
        if self.noise_ramp.is_nan() || self.noise_ramp < 1.0 {
            return Err(Error::config("manifest: noise_ramp must be >= 1"));
        }
        if self.camera_spread.is_nan()
            || self.camera_spread < 0.0
            || self.offset_scale.is_nan()
            || self.offset_scale < 0.0
        {
            return Err(Error::config("manifest: scales must be >= 0"));
        }
        let (train, test) = self.split_counts();
        if train == 0 || test == 0 {
            return Err(Error::config(format!(
                "manifest: train_fraction {} leaves an empty split ({} train / {} test)",
                self.train_fraction, train, test
            )));
        }
        Ok(())
    }

    pub fn split_counts(&self) -> (usize, usize) {
        let train = (self.identities as f64 * self.train_fraction).round() as usize;
        let train = train.min(self.identities);
        (train, self.identities - train)
    }
}

/// Order-0 records plus the ground-truth latents and cameras that
/// produced them, split into identity-disjoint train and test parts.
#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub train: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
    pub cameras: Vec<CameraModel>,
    pub latents: Vec<IdentityLatent>,
}

/// Renders one feature vector: `transform * latent + offset + sigma * noise`.
/// Noise is always drawn (one normal per feature dim) so the stream
/// layout does not depend on sigma.
pub fn generate_features(latent: &[f64], camera: &CameraModel, rng: &mut Rng) -> Vec<f64> {
    debug_assert_eq!(latent.len(), camera.latent_dim);
    let mut out = Vec::with_capacity(camera.feature_dim);
    for o in 0..camera.feature_dim {
        let row = &camera.transform[o * camera.latent_dim..(o + 1) * camera.latent_dim];
        let mut v = camera.offset[o];
        for (w, z) in row.iter().zip(latent) {
            v += w * z;
        }
        out.push(v + camera.noise_sigma * rng.normal());
    }
    out
}

pub fn generate_dataset(manifest: &DatasetManifest) -> Result<GeneratedDataset> {
    manifest.validate()?;
    let mut rng = Rng::new(manifest.seed);
    let (d_z, d_f) = (manifest.latent_dim, manifest.feature_dim);

    let latents: Vec<IdentityLatent> = (0..manifest.identities)
        .map(|id| IdentityLatent {
            identity_id: id as u64,
            latent: (0..d_z).map(|_| rng.normal()).collect(),
        })
        .collect();

    let scale = 1.0 / (d_z as f64).sqrt();
    let base_transform: Vec<f64> = (0..d_f * d_z).map(|_| rng.normal() * scale).collect();
    let cameras: Vec<CameraModel> = (0..manifest.cameras)
        .map(|c| {
            let transform: Vec<f64> = base_transform
                .iter()
                .map(|&b| b + manifest.camera_spread * rng.normal() * scale)
                .collect();
            let offset: Vec<f64> = (0..d_f)
                .map(|_| manifest.offset_scale * rng.normal())
                .collect();
            // Geometric ramp of per-camera noise, cleanest to noisiest,
            // centered so the mean log-sigma matches noise_sigma.
            let position = if manifest.cameras == 1 {
                0.0
            } else {
                c as f64 / (manifest.cameras - 1) as f64 - 0.5
            };
            CameraModel {
                camera_id: c as u64,
                latent_dim: d_z,
                feature_dim: d_f,
                transform,
                offset,
                noise_sigma: manifest.noise_sigma * manifest.noise_ramp.powf(position),
            }
        })
        .collect();

    let mut records = Vec::with_capacity(manifest.identities * manifest.samples_per_identity);
    let mut next_id = 0u64;
    for latent in &latents {
        for s in 0..manifest.samples_per_identity {
            let camera = &cameras[s % manifest.cameras];
            let features = generate_features(&latent.latent, camera, &mut rng);
            records.push(SampleRecord {
                sample_id: next_id,
                identity_id: latent.identity_id,
                camera_id: camera.camera_id,
                side: None,
                order: Order::Zero,
                source_sample_id: next_id,
                features,
            });
            next_id += 1;
        }
    }

    let mut identity_ids: Vec<u64> = (0..manifest.identities as u64).collect();
    rng.shuffle(&mut identity_ids);
    let (train_count, _) = manifest.split_counts();
    let train_ids: std::collections::BTreeSet<u64> =
        identity_ids[..train_count].iter().copied().collect();

    let (train, test): (Vec<SampleRecord>, Vec<SampleRecord>) = records
        .into_iter()
        .partition(|r| train_ids.contains(&r.identity_id));

    Ok(GeneratedDataset {
        train,
        test,
        cameras,
        latents,
    })
}

/// Random balanced-as-possible bipartition of order-0 records into
/// sides X and Y; sizes differ by at most one. Ignores camera ids.
pub fn split_one_view(records: &mut [SampleRecord], seed: u64) -> Result<()> {
    if records.is_empty() {
        return Err(Error::config("cannot partition an empty record set"));
    }
    if let Some(r) = records.iter().find(|r| r.order != Order::Zero) {
        return Err(Error::usage(format!(
            "one-view partition applies to order-0 records; sample {} has order {}",
            r.sample_id,
            r.order.as_u8()
        )));
    }
    let mut rng = Rng::new(derive_seed(seed, "one-view-split"));
    let mut indices: Vec<usize> = (0..records.len()).collect();
    rng.shuffle(&mut indices);
    let x_count = records.len().div_ceil(2);
    for (pos, &idx) in indices.iter().enumerate() {
        records[idx].side = Some(if pos < x_count { Side::X } else { Side::Y });
    }
    Ok(())
}

/// Cross-record consistency: unique ids, orders with resolvable order-0
/// sources, matching identities along each lineage.
pub fn validate_records(records: &[SampleRecord]) -> Result<()> {
    let mut by_id = std::collections::BTreeMap::new();
    for r in records {
        if by_id.insert(r.sample_id, r).is_some() {
            return Err(Error::schema(format!(
                "duplicate sample_id {}",
                r.sample_id
            )));
        }
    }
    for r in records {
        if r.order == Order::Zero {
            if r.source_sample_id != r.sample_id {
                return Err(Error::schema(format!(
                    "order-0 sample {} must be its own source, got {}",
                    r.sample_id, r.source_sample_id
                )));
            }
            continue;
        }
        match by_id.get(&r.source_sample_id) {
            None => {
                return Err(Error::schema(format!(
                    "sample {} references missing source {}",
                    r.sample_id, r.source_sample_id
                )))
            }
            Some(src) => {
                if src.order != Order::Zero {
                    return Err(Error::schema(format!(
                        "sample {} has a non-order-0 source {}",
                        r.sample_id, r.source_sample_id
                    )));
                }
                if src.identity_id != r.identity_id {
                    return Err(Error::schema(format!(
                        "sample {} identity {} differs from source identity {}",
                        r.sample_id, r.identity_id, src.identity_id
                    )));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    #![allow(clippy::needless_range_loop)]

    use super::*;

    #[test]
    fn identity_camera_reproduces_latent_exactly() {
        let camera = CameraModel::identity(0, 5);
        let latent = vec![0.1, -0.2, 0.3, 1.5, -2.0];
        let mut rng = Rng::new(1);
        assert_eq!(generate_features(&latent, &camera, &mut rng), latent);
    }

    #[test]
    fn generation_is_deterministic() {
        let manifest = DatasetManifest {
            identities: 12,
            ..DatasetManifest::default()
        };
        let a = generate_dataset(&manifest).unwrap();
        let b = generate_dataset(&manifest).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn distinct_offsets_shift_features_exactly() {
        // With a shared transform and zero noise, the same identity seen
        // by two cameras differs exactly by the offset difference.
        let manifest = DatasetManifest {
            identities: 3,
            cameras: 2,
            samples_per_identity: 2,
            noise_sigma: 0.0,
            camera_spread: 0.0,
            train_fraction: 0.67,
            ..DatasetManifest::default()
        };
        let data = generate_dataset(&manifest).unwrap();
        let all: Vec<&SampleRecord> = data.train.iter().chain(&data.test).collect();
        let cam0 = &data.cameras[0];
        let cam1 = &data.cameras[1];
        let delta: Vec<f64> = cam0
            .offset
            .iter()
            .zip(&cam1.offset)
            .map(|(a, b)| a - b)
            .collect();
        for id in 0..3u64 {
            let r0 = all
                .iter()
                .find(|r| r.identity_id == id && r.camera_id == 0)
                .unwrap();
            let r1 = all
                .iter()
                .find(|r| r.identity_id == id && r.camera_id == 1)
                .unwrap();
            for i in 0..manifest.feature_dim {
                assert!(
                    (r0.features[i] - r1.features[i] - delta[i]).abs() < 1e-12,
                    "identity {id} coord {i}"
                );
            }
        }
    }

    #[test]
    fn noiseless_features_reproduce_from_latent_and_camera() {
        let manifest = DatasetManifest {
            identities: 6,
            noise_sigma: 0.0,
            ..DatasetManifest::default()
        };
        let data = generate_dataset(&manifest).unwrap();
        let mut scratch_rng = Rng::new(999);
        for r in data.train.iter().chain(&data.test) {
            let latent = &data.latents[r.identity_id as usize].latent;
            let camera = &data.cameras[r.camera_id as usize];
            // Sigma is zero, so any rng reproduces the rendering exactly.
            let expect = generate_features(latent, camera, &mut scratch_rng);
            assert_eq!(r.features, expect, "sample {}", r.sample_id);
        }
    }

    #[test]
    fn invalid_manifest_is_config_error() {
        let m = DatasetManifest {
            identities: 0,
            ..DatasetManifest::default()
        };
        assert!(matches!(generate_dataset(&m), Err(Error::Config(_))));
        let m = DatasetManifest {
            feature_dim: 1,
            ..DatasetManifest::default()
        };
        assert!(matches!(generate_dataset(&m), Err(Error::Config(_))));
    }

    #[test]
    fn train_and_test_identities_are_disjoint() {
        let data = generate_dataset(&DatasetManifest {
            identities: 30,
            ..DatasetManifest::default()
        })
        .unwrap();
        let train_ids: std::collections::BTreeSet<u64> =
            data.train.iter().map(|r| r.identity_id).collect();
        let test_ids: std::collections::BTreeSet<u64> =
            data.test.iter().map(|r| r.identity_id).collect();
        assert_eq!(train_ids.len(), 20);
        assert_eq!(test_ids.len(), 10);
        assert!(train_ids.is_disjoint(&test_ids));
    }

    #[test]
    fn split_balances_even_and_odd_counts() {
        for n in [10usize, 11] {
            let mut records: Vec<SampleRecord> = (0..n as u64)
                .map(|i| SampleRecord {
                    sample_id: i,
                    identity_id: i,
                    camera_id: 0,
                    side: None,
                    order: Order::Zero,
                    source_sample_id: i,
                    features: vec![0.0, 0.0],
                })
                .collect();
            split_one_view(&mut records, 3).unwrap();
            let x = records.iter().filter(|r| r.side == Some(Side::X)).count();
            let y = records.iter().filter(|r| r.side == Some(Side::Y)).count();
            assert_eq!(x + y, n);
            assert!(x.abs_diff(y) <= 1, "{x}/{y}");
        }
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let make = || -> Vec<SampleRecord> {
            (0..20u64)
                .map(|i| SampleRecord {
                    sample_id: i,
                    identity_id: i / 2,
                    camera_id: 0,
                    side: None,
                    order: Order::Zero,
                    source_sample_id: i,
                    features: vec![1.0, 2.0],
                })
                .collect()
        };
        let mut a = make();
        let mut b = make();
        split_one_view(&mut a, 99).unwrap();
        split_one_view(&mut b, 99).unwrap();
        assert_eq!(a, b);
        let mut c = make();
        split_one_view(&mut c, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_split_is_config_error() {
        let mut none: Vec<SampleRecord> = Vec::new();
        assert!(matches!(
            split_one_view(&mut none, 1),
            Err(Error::Config(_))
        ));
    }
}

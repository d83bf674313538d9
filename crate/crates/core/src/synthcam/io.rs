//! Dataset files: one JSON object per line with keys
//! `{sample_id, identity_id, camera_id, side, order, source_sample_id,
//! features}`, plus the `key = value` manifest format.
//!
//! Floats go through serde_json's shortest-round-trip encoding, so the
//! read-back value is bit-identical to the written one. Writes go to a
//! temp file in the target directory and are renamed into place.

use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::KvFile;
use crate::error::{Error, Result};
use crate::synthcam::{validate_records, DatasetManifest, Order, SampleRecord, Side};

/// Wire form of one record line.
#[derive(Serialize, Deserialize)]
struct RecordLine {
    sample_id: u64,
    identity_id: u64,
    camera_id: u64,
    side: String,
    order: u8,
    source_sample_id: u64,
    features: Vec<f64>,
}

impl RecordLine {
    fn from_record(r: &SampleRecord) -> Result<Self> {
        let side = r
            .side
            .ok_or_else(|| {
                Error::schema(format!(
                    "sample {} has no side; run the one-view partition before writing",
                    r.sample_id
                ))
            })?
            .as_str()
            .to_string();
        if r.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "sample {} has non-finite features",
                r.sample_id
            )));
        }
        Ok(RecordLine {
            sample_id: r.sample_id,
            identity_id: r.identity_id,
            camera_id: r.camera_id,
            side,
            order: r.order.as_u8(),
            source_sample_id: r.source_sample_id,
            features: r.features.clone(),
        })
    }

    fn into_record(self) -> Result<SampleRecord> {
        Ok(SampleRecord {
            sample_id: self.sample_id,
            identity_id: self.identity_id,
            camera_id: self.camera_id,
            side: Some(Side::parse(&self.side)?),
            order: Order::from_u8(self.order)?,
            source_sample_id: self.source_sample_id,
            features: self.features,
        })
    }
}

/// Writes `bytes` atomically: temp file in the same directory, then
/// rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = PathBuf::from(dir);
    tmp.push(format!(
        ".{}.tmp",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".to_string())
    ));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_dataset(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let mut buf = BufWriter::new(Vec::new());
    for r in records {
        let line = RecordLine::from_record(r)?;
        let json = serde_json::to_string(&line)
            .map_err(|e| Error::schema(format!("cannot encode sample {}: {e}", r.sample_id)))?;
        writeln!(buf, "{json}").expect("in-memory write");
    }
    write_atomic(path, &buf.into_inner().expect("in-memory flush"))
}

pub fn read_dataset(path: &Path) -> Result<Vec<SampleRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        // Syntax problems are parse errors with the offending line;
        // well-formed JSON with wrong keys or values is a schema error.
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let wire: RecordLine = serde_json::from_value(value)
            .map_err(|e| Error::schema(format!("line {}: {e}", idx + 1)))?;
        let record = wire
            .into_record()
            .map_err(|e| Error::schema(format!("line {}: {e}", idx + 1)))?;
        records.push(record);
    }
    validate_records(&records)?;
    Ok(records)
}

impl DatasetManifest {
    /// Applies `key = value` overrides on top of defaults.
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let mut m = DatasetManifest::default();
        if let Some(v) = kv.get("seed")? {
            m.seed = v;
        }
        if let Some(v) = kv.get("identities")? {
            m.identities = v;
        }
        if let Some(v) = kv.get("cameras")? {
            m.cameras = v;
        }
        if let Some(v) = kv.get("samples_per_identity")? {
            m.samples_per_identity = v;
        }
        if let Some(v) = kv.get("latent_dim")? {
            m.latent_dim = v;
        }
        if let Some(v) = kv.get("feature_dim")? {
            m.feature_dim = v;
        }
        if let Some(v) = kv.get("noise_sigma")? {
            m.noise_sigma = v;
        }
        if let Some(v) = kv.get("noise_ramp")? {
            m.noise_ramp = v;
        }
        if let Some(v) = kv.get("camera_spread")? {
            m.camera_spread = v;
        }
        if let Some(v) = kv.get("offset_scale")? {
            m.offset_scale = v;
        }
        if let Some(v) = kv.get("train_fraction")? {
            m.train_fraction = v;
        }
        Ok(m)
    }

    /// Echo form written next to generated datasets.
    pub fn to_kv_string(&self) -> String {
        format!(
            "seed = {}\nidentities = {}\ncameras = {}\nsamples_per_identity = {}\n\
             latent_dim = {}\nfeature_dim = {}\nnoise_sigma = {}\nnoise_ramp = {}\n\
             camera_spread = {}\noffset_scale = {}\ntrain_fraction = {}\n",
            self.seed,
            self.identities,
            self.cameras,
            self.samples_per_identity,
            self.latent_dim,
            self.feature_dim,
            self.noise_sigma,
            self.noise_ramp,
            self.camera_spread,
            self.offset_scale,
            self.train_fraction
        )
    }
}

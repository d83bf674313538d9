//! Model checkpoints: line-delimited JSON, a header line followed by one
//! line per network. Optimizer state is not persisted. Loads verify the
//! kind and version before touching weights.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gan::{GanLossWeights, GanModel};
use crate::numerics::mlp::MlpParams;
use crate::synthcam::io::write_atomic;

const VERSION: u32 = 1;
const GAN_KIND: &str = "gan-checkpoint";
const EMBED_KIND: &str = "embedding-checkpoint";

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    version: u32,
    seed: u64,
    /// Free-form `key = value` config echo lines.
    config: Vec<String>,
    alpha: Option<f64>,
    beta: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct NetLine {
    net: String,
    params: MlpParams,
}

fn encode(header: &Header, nets: &[(&str, &MlpParams)]) -> Result<Vec<u8>> {
    let mut out = String::new();
    out.push_str(
        &serde_json::to_string(header).map_err(|e| Error::schema(format!("header: {e}")))?,
    );
    out.push('\n');
    for (name, params) in nets {
        let line = NetLine {
            net: name.to_string(),
            params: (*params).clone(),
        };
        out.push_str(
            &serde_json::to_string(&line).map_err(|e| Error::schema(format!("net {name}: {e}")))?,
        );
        out.push('\n');
    }
    Ok(out.into_bytes())
}

fn decode(path: &Path, expected_kind: &str) -> Result<(Header, Vec<NetLine>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::schema(format!("{}: empty checkpoint", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_str(&header_line)
        .map_err(|e| Error::schema(format!("{}: bad header: {e}", path.display())))?;
    if header.kind != expected_kind {
        return Err(Error::schema(format!(
            "{}: expected a {expected_kind}, found '{}'",
            path.display(),
            header.kind
        )));
    }
    if header.version != VERSION {
        return Err(Error::schema(format!(
            "{}: unsupported version {} (expected {VERSION})",
            path.display(),
            header.version
        )));
    }
    let mut nets = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let net: NetLine = serde_json::from_str(&line)
            .map_err(|e| Error::schema(format!("{}: line {}: {e}", path.display(), idx + 2)))?;
        nets.push(net);
    }
    Ok((header, nets))
}

fn take_net(nets: &mut Vec<NetLine>, name: &str, path: &Path) -> Result<MlpParams> {
    let pos = nets
        .iter()
        .position(|n| n.net == name)
        .ok_or_else(|| Error::schema(format!("{}: missing net '{name}'", path.display())))?;
    Ok(nets.remove(pos).params)
}

pub fn save_gan_checkpoint(
    path: &Path,
    model: &GanModel,
    weights: &GanLossWeights,
    seed: u64,
    config_echo: &[String],
) -> Result<()> {
    model.validate()?;
    let header = Header {
        kind: GAN_KIND.to_string(),
        version: VERSION,
        seed,
        config: config_echo.to_vec(),
        alpha: Some(weights.alpha),
        beta: Some(weights.beta),
    };
    let bytes = encode(
        &header,
        &[
            ("g", &model.g),
            ("f", &model.f),
            ("d_x", &model.d_x),
            ("d_y", &model.d_y),
        ],
    )?;
    write_atomic(path, &bytes)
}

pub fn load_gan_checkpoint(path: &Path) -> Result<(GanModel, GanLossWeights, u64)> {
    let (header, mut nets) = decode(path, GAN_KIND)?;
    let model = GanModel {
        g: take_net(&mut nets, "g", path)?,
        f: take_net(&mut nets, "f", path)?,
        d_x: take_net(&mut nets, "d_x", path)?,
        d_y: take_net(&mut nets, "d_y", path)?,
    };
    model.validate()?;
    let weights = GanLossWeights {
        alpha: header
            .alpha
            .ok_or_else(|| Error::schema(format!("{}: missing alpha", path.display())))?,
        beta: header
            .beta
            .ok_or_else(|| Error::schema(format!("{}: missing beta", path.display())))?,
    };
    Ok((model, weights, header.seed))
}

pub fn save_embedding_checkpoint(
    path: &Path,
    params: &MlpParams,
    seed: u64,
    config_echo: &[String],
) -> Result<()> {
    let header = Header {
        kind: EMBED_KIND.to_string(),
        version: VERSION,
        seed,
        config: config_echo.to_vec(),
        alpha: None,
        beta: None,
    };
    let bytes = encode(&header, &[("embed", params)])?;
    write_atomic(path, &bytes)
}

pub fn load_embedding_checkpoint(path: &Path) -> Result<(MlpParams, u64)> {
    let (header, mut nets) = decode(path, EMBED_KIND)?;
    let params = take_net(&mut nets, "embed", path)?;
    Ok((params, header.seed))
}

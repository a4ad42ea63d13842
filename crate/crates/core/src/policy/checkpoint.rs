//! Checkpoint files: one JSON header line, then every tensor as raw
//! little-endian `f64` in declared order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{NetConfig, PolicyNet};
use super::PolicyError;
use crate::schedule::EmbeddingLayout;

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "roars-policy";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub hidden: usize,
    pub d_in: usize,
    pub layout: EmbeddingLayout,
    pub tensors: Vec<TensorShape>,
    pub train_step: u64,
}

impl CheckpointHeader {
    fn for_net(net: &PolicyNet, train_step: u64) -> Self {
        Self {
            format: FORMAT.into(),
            version: CHECKPOINT_VERSION,
            hidden: net.config.hidden,
            d_in: net.config.d_in(),
            layout: net.config.layout,
            tensors: net
                .offsets
                .tensors(&net.config)
                .into_iter()
                .map(|(name, _, shape)| TensorShape {
                    name: name.into(),
                    shape,
                })
                .collect(),
            train_step,
        }
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            layout: self.layout,
            hidden: self.hidden,
        }
    }
}

pub fn write_checkpoint<W: Write>(net: &PolicyNet, train_step: u64, mut out: W) -> Result<(), PolicyError> {
    let header = CheckpointHeader::for_net(net, train_step);
    serde_json::to_writer(&mut out, &header).map_err(|e| PolicyError::Malformed(e.to_string()))?;
    out.write_all(b"\n")?;
    for v in &net.params {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a checkpoint. With `expect` given, the stored shape must match it.
pub fn read_checkpoint<R: Read>(input: R, expect: Option<&NetConfig>) -> Result<(PolicyNet, CheckpointHeader), PolicyError> {
    let mut input = BufReader::new(input);
    let mut line = String::new();
    input.read_line(&mut line)?;
    if !line.ends_with('\n') {
        return Err(PolicyError::Malformed("missing header".into()));
    }
    let header: CheckpointHeader =
        serde_json::from_str(&line).map_err(|e| PolicyError::Malformed(format!("header: {e}")))?;
    if header.format != FORMAT {
        return Err(PolicyError::Malformed(format!("unknown format {:?}", header.format)));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(PolicyError::Malformed(format!("unsupported version {}", header.version)));
    }
    let cfg = header.net_config();
    if cfg.d_in() != header.d_in {
        return Err(PolicyError::Malformed("d_in disagrees with the embedding layout".into()));
    }
    if let Some(e) = expect {
        if e != &cfg {
            return Err(PolicyError::ShapeMismatch(format!(
                "checkpoint has H={} d_in={}, expected H={} d_in={}",
                cfg.hidden,
                cfg.d_in(),
                e.hidden,
                e.d_in()
            )));
        }
    }
    let fresh = CheckpointHeader::for_net(&PolicyNet::from_params(cfg, vec![0.0; super::net::Offsets::new(&cfg).total]), 0);
    if fresh.tensors != header.tensors {
        return Err(PolicyError::ShapeMismatch("tensor shapes differ from the declared layout".into()));
    }
    let n = super::net::Offsets::new(&cfg).total;
    let mut bytes = Vec::with_capacity(n * 8);
    input.read_to_end(&mut bytes)?;
    if bytes.len() != n * 8 {
        return Err(PolicyError::Malformed(format!("expected {} parameter bytes, found {}", n * 8, bytes.len())));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((PolicyNet::from_params(cfg, params), header))
}

pub fn save_checkpoint(net: &PolicyNet, train_step: u64, path: impl AsRef<Path>) -> Result<(), PolicyError> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    write_checkpoint(net, train_step, BufWriter::new(File::create(&tmp)?))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>, expect: Option<&NetConfig>) -> Result<(PolicyNet, CheckpointHeader), PolicyError> {
    read_checkpoint(File::open(path)?, expect)
}

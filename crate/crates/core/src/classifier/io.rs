//! Model container: 8-byte magic, `u32` format version, `u32` header length,
//! a JSON header, then every parameter tensor as little-endian `f64` in the
//! order listed by the header.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::Network;
use super::{ClassifierError, Standardizer, TrainedVerifier, VerifierConfig};
use crate::corpus::Target;

pub const MODEL_MAGIC: &[u8; 8] = b"AUTHNET\0";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    target: Option<Target>,
    config: VerifierConfig,
    loss_curve: Vec<f64>,
    input_dim: usize,
    hidden_sizes: Vec<usize>,
    shapes: Vec<Vec<usize>>,
    standardized: bool,
}

pub fn save_model(model: &TrainedVerifier, path: &Path) -> Result<(), ClassifierError> {
    let io = |e| ClassifierError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let header = Header {
        target: model.target.clone(),
        config: model.config.clone(),
        loss_curve: model.loss_curve.clone(),
        input_dim: model.network.input_dim(),
        hidden_sizes: model.network.hidden_sizes(),
        shapes: model.network.shapes(),
        standardized: model.standardizer.is_some(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    let mut push = |values: &[f64]| {
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    };
    for t in model.network.tensors() {
        push(t);
    }
    if let Some(s) = &model.standardizer {
        push(&s.mean);
        push(&s.std);
    }
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(io)?;
    std::io::Write::write_all(&mut tmp, &buf).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TrainedVerifier, ClassifierError> {
    let bytes = std::fs::read(path).map_err(|e| ClassifierError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    decode(&bytes).map_err(|reason| ClassifierError::CorruptModelFile {
        path: path.to_path_buf(),
        reason,
    })
}

fn decode(bytes: &[u8]) -> Result<TrainedVerifier, String> {
    if bytes.len() < 16 || &bytes[..8] != MODEL_MAGIC {
        return Err("missing model magic".into());
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != MODEL_FORMAT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + len).ok_or("truncated header")?;
    let header: Header = serde_json::from_slice(body).map_err(|e| format!("bad header: {e}"))?;
    let mut rest = &bytes[16 + len..];
    let mut take = |n: usize| -> Result<Vec<f64>, String> {
        if rest.len() < 8 * n {
            return Err("truncated tensor data".into());
        }
        let (head, tail) = rest.split_at(8 * n);
        rest = tail;
        Ok(head
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let tensors = header
        .shapes
        .iter()
        .map(|s| take(s.iter().product()))
        .collect::<Result<Vec<_>, _>>()?;
    let network = Network::from_tensors(header.input_dim, &header.hidden_sizes, tensors)
        .ok_or("tensor shapes do not match the declared layout")?;
    if network.shapes() != header.shapes {
        return Err("tensor shapes do not match the declared layout".into());
    }
    let standardizer = if header.standardized {
        Some(Standardizer {
            mean: take(header.input_dim)?,
            std: take(header.input_dim)?,
        })
    } else {
        None
    };
    if !rest.is_empty() {
        return Err(format!("{} trailing bytes", rest.len()));
    }
    if header.config.dimension != header.input_dim
        || header.config.hidden_size != header.hidden_sizes
    {
        return Err("config echo disagrees with the tensors".into());
    }
    Ok(TrainedVerifier {
        target: header.target,
        config: header.config,
        loss_curve: header.loss_curve,
        standardizer,
        network,
    })
}

impl TrainedVerifier {
    /// Fails unless the model consumes `timesteps × dimension` sequences.
    pub fn ensure_shape(&self, timesteps: usize, dimension: usize) -> Result<(), ClassifierError> {
        if (self.config.timesteps, self.config.dimension) != (timesteps, dimension) {
            return Err(ClassifierError::ConfigMismatch(format!(
                "model expects T={} D={}, pipeline produces T={timesteps} D={dimension}",
                self.config.timesteps, self.config.dimension
            )));
        }
        Ok(())
    }
}

//! Binary checkpoint format.
//!
//! Layout: magic `KIO1`, u32 version, u32 tensor count; per tensor a u32
//! name length, the UTF-8 name, u32 rank, u32 dims, then the little-endian
//! f32 payload. All integers are little-endian. Parameters are f32
//! representable by construction, so save -> load -> save is byte
//! identical and a loaded net's forward pass is bit-equal to the original.

use super::policy::{PolicyConfig, PolicyNet};
use super::MicronetError;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"KIO1";
pub const VERSION: u32 = 1;

/// Architecture metadata rides along as a tensor so the format stays a
/// pure tensor container.
const META_NAME: &str = "__meta__";

fn meta_values(config: &PolicyConfig) -> Vec<f32> {
    vec![
        config.input_width as f32,
        config.input_height as f32,
        config.candidates as f32,
        config.widths[0] as f32,
        config.widths[1] as f32,
        config.widths[2] as f32,
        config.reduction as f32,
        config.state_hidden as f32,
        config.head_hidden as f32,
    ]
}

fn config_from_meta(values: &[f32]) -> Result<PolicyConfig, MicronetError> {
    if values.len() != 9 {
        return Err(MicronetError::Checkpoint(format!(
            "meta tensor has {} entries, expected 9",
            values.len()
        )));
    }
    Ok(PolicyConfig {
        input_width: values[0] as usize,
        input_height: values[1] as usize,
        candidates: values[2] as usize,
        widths: [values[3] as usize, values[4] as usize, values[5] as usize],
        reduction: values[6] as usize,
        state_hidden: values[7] as usize,
        head_hidden: values[8] as usize,
    })
}

pub fn serialize(net: &mut PolicyNet) -> Vec<u8> {
    let config = net.config;
    let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> =
        vec![(META_NAME.to_string(), vec![9], meta_values(&config))];
    for (name, tensor) in net.parameters_mut() {
        tensors.push((
            name,
            tensor.shape.clone(),
            tensor.values.iter().map(|&v| v as f32).collect(),
        ));
    }

    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape, values) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in &shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(net: &mut PolicyNet, path: &Path) -> Result<(), MicronetError> {
    let bytes = serialize(net);
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MicronetError> {
        if self.offset + n > self.bytes.len() {
            return Err(MicronetError::Checkpoint(format!(
                "truncated at byte {} (wanted {} more)",
                self.offset, n
            )));
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, MicronetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<PolicyNet, MicronetError> {
    let mut r = Reader { bytes, offset: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(MicronetError::Checkpoint(format!(
            "bad magic {:?}, expected {:?} (\"KIO1\")",
            magic, MAGIC
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(MicronetError::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let count = r.u32()? as usize;
    let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| MicronetError::Checkpoint("non-utf8 tensor name".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let payload = r.take(len * 4)?;
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, shape, values));
    }
    if r.offset != bytes.len() {
        return Err(MicronetError::Checkpoint(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.offset
        )));
    }

    let meta = tensors
        .iter()
        .find(|(name, _, _)| name == META_NAME)
        .ok_or_else(|| MicronetError::Checkpoint("missing __meta__ tensor".into()))?;
    let config = config_from_meta(&meta.2)?;
    let mut net = PolicyNet::new(config, 0);
    let mut filled = 0;
    for (name, tensor) in net.parameters_mut() {
        let found = tensors
            .iter()
            .find(|(n, _, _)| *n == name)
            .ok_or_else(|| MicronetError::Checkpoint(format!("missing tensor {name}")))?;
        if found.1 != tensor.shape {
            return Err(MicronetError::Checkpoint(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                found.1, tensor.shape
            )));
        }
        for (v, &f) in tensor.values.iter_mut().zip(&found.2) {
            *v = f as f64;
        }
        filled += 1;
    }
    if filled + 1 != tensors.len() {
        return Err(MicronetError::Checkpoint(format!(
            "checkpoint has {} tensors, net consumed {}",
            tensors.len(),
            filled + 1
        )));
    }
    Ok(net)
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyNet, MicronetError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    deserialize(&bytes)
}

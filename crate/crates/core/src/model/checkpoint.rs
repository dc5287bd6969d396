use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::forecaster::Forecaster;
use crate::data::{read_array, read_u32, write_array};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SVQM";
const VERSION: u32 = 1;
const USAGE_PREFIX: &str = "quantizer.usage.";

/// Writes the configuration, every parameter and the codebook usage counts.
pub fn save_checkpoint(model: &Forecaster, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let json = model.config().to_canonical_json();
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(json.as_bytes())?;
    let usage = model.usage();
    w.write_all(&((model.params().len() + usage.len()) as u32).to_le_bytes())?;
    let usage_tensors: Vec<(String, Vec<f64>)> = usage
        .iter()
        .enumerate()
        .map(|(s, u)| {
            (
                format!("{USAGE_PREFIX}{s}"),
                u.iter().map(|&c| c as f64).collect(),
            )
        })
        .collect();
    let entries = model
        .params()
        .iter()
        .map(|(n, t)| (n.to_string(), t.shape().to_vec(), t.data()))
        .chain(
            usage_tensors
                .iter()
                .map(|(n, d)| (n.clone(), vec![d.len()], d.as_slice())),
        );
    for (name, shape, data) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        write_array(&mut w, &shape, data)?;
    }
    w.flush()?;
    Ok(())
}

/// Rebuilds a model from [`save_checkpoint`] output.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Forecaster> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a model checkpoint".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let json = read_string(&mut r)?;
    let config: ModelConfig = serde_json::from_str(&json)?;
    let mut model = Forecaster::new(config)?;
    let count = read_u32(&mut r)? as usize;
    let mut usage = model.usage().to_vec();
    let mut seen = 0;
    for _ in 0..count {
        let name = read_string(&mut r)?;
        let (shape, data) = read_array(&mut r)?;
        if let Some(stage) = name.strip_prefix(USAGE_PREFIX) {
            let slot = stage
                .parse::<usize>()
                .ok()
                .and_then(|s| usage.get_mut(s))
                .ok_or_else(|| Error::Format(format!("unexpected tensor {name}")))?;
            if data.len() != slot.len() || data.iter().any(|&c| c < 0.0 || c.fract() != 0.0) {
                return Err(Error::Format(format!("malformed usage counts {name}")));
            }
            *slot = data.iter().map(|&c| c as u64).collect();
        } else {
            model.params_mut().set(&name, Tensor::new(shape, data)?)?;
            seen += 1;
        }
    }
    if seen != model.params().len() {
        return Err(Error::Format(format!(
            "checkpoint holds {seen} of {} parameters",
            model.params().len()
        )));
    }
    model.set_usage(usage)?;
    Ok(model)
}

fn read_string(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 24 {
        return Err(Error::Format("string field too long".into()));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("string field is not UTF-8".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VqPlacement;

    #[test]
    fn roundtrip_is_bit_exact() {
        let cfg = ModelConfig {
            input_length: 16,
            horizon: 4,
            patch_length: 4,
            patch_stride: 4,
            d_model: 8,
            n_heads: 2,
            codebook_size: 8,
            vq_placement: VqPlacement::PostEncoder,
            seed: 11,
            ..Default::default()
        };
        let mut model = Forecaster::new(cfg).unwrap();
        let x = Tensor::new(vec![2, 16, 1], (0..32).map(|i| (i as f64).cos()).collect()).unwrap();
        let y = model.predict(&x).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.svqm");
        save_checkpoint(&model, &path).unwrap();
        let mut back = load_checkpoint(&path).unwrap();
        assert_eq!(back.params(), model.params());
        assert_eq!(back.usage(), model.usage());
        assert_eq!(back.predict(&x).unwrap().data(), y.data());
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad");
        std::fs::write(&path, b"NOPE1234").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }
}

//! Versioned encoder weight files.
//!
//! Layout: magic `SPKW`, format version, the architecture echo (13 u32
//! fields), then one tensor record per ledger entry in ledger order,
//! running statistics included. Payloads are f32, so weights produced by
//! this library (f32-quantized) round-trip bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::tensor::{
    check_magic, check_version, read_record, read_u32, write_record, write_u32,
};
use crate::nn::{tensor_specs, EncoderConfig, EncoderWeights};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"SPKW";
pub const WEIGHTS_VERSION: u32 = 1;

fn write_config(w: &mut impl Write, cfg: &EncoderConfig) -> Result<()> {
    write_u32(w, cfg.in_dim as u32)?;
    for &c in &cfg.block_channels {
        write_u32(w, c as u32)?;
    }
    for &k in &cfg.kernels {
        write_u32(w, k as u32)?;
    }
    for &b in &cfg.se_bottleneck {
        write_u32(w, b as u32)?;
    }
    write_u32(w, cfg.pooled_dim as u32)?;
    write_u32(w, cfg.embed_dim as u32)?;
    Ok(())
}

fn read_config(r: &mut impl Read) -> Result<EncoderConfig> {
    let mut next = |what: &str| -> Result<usize> { Ok(read_u32(r, what)? as usize) };
    let in_dim = next("in_dim")?;
    let block_channels = [
        next("block_channels[0]")?,
        next("block_channels[1]")?,
        next("block_channels[2]")?,
    ];
    let kernels = [next("kernels[0]")?, next("kernels[1]")?, next("kernels[2]")?];
    let se_bottleneck = [
        next("se_bottleneck[0]")?,
        next("se_bottleneck[1]")?,
        next("se_bottleneck[2]")?,
    ];
    let pooled_dim = next("pooled_dim")?;
    let embed_dim = next("embed_dim")?;
    let cfg = EncoderConfig {
        in_dim,
        block_channels,
        kernels,
        se_bottleneck,
        pooled_dim,
        embed_dim,
    };
    cfg.validate()
        .map_err(|e| Error::Format(format!("weight file carries an invalid config: {e}")))?;
    Ok(cfg)
}

/// Write the weights (f32 payload) with the config echo and shape table.
pub fn save_weights(path: &Path, weights: &EncoderWeights) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&WEIGHTS_MAGIC)?;
    write_u32(&mut w, WEIGHTS_VERSION)?;
    write_config(&mut w, &weights.cfg)?;
    let tensors = weights.tensors();
    write_u32(&mut w, tensors.len() as u32)?;
    for (name, rows, cols, _, data) in &tensors {
        write_record(&mut w, name, *rows, *cols, data)?;
    }
    w.flush()?;
    Ok(())
}

/// Load and validate a weight file. Every tensor must match the ledger
/// derived from the embedded config, in order.
pub fn load_weights(path: &Path) -> Result<EncoderWeights> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, WEIGHTS_MAGIC)?;
    check_version(&mut r, WEIGHTS_VERSION)?;
    let cfg = read_config(&mut r)?;
    let specs = tensor_specs(&cfg);
    let count = read_u32(&mut r, "tensor count")? as usize;
    if count != specs.len() {
        return Err(Error::Shape(format!(
            "weight file has {count} tensors, config implies {}",
            specs.len()
        )));
    }
    let mut weights = EncoderWeights::init(&cfg, 0)?;
    {
        let mut slots = weights.tensor_data_mut();
        for (spec, slot) in specs.iter().zip(slots.iter_mut()) {
            let rec = read_record(&mut r)?;
            if rec.name != spec.name {
                return Err(Error::Shape(format!(
                    "expected tensor {}, found {}",
                    spec.name, rec.name
                )));
            }
            if rec.rows != spec.rows || rec.cols != spec.cols {
                return Err(Error::Shape(format!(
                    "tensor {} has shape {}x{}, config implies {}x{}",
                    rec.name, rec.rows, rec.cols, spec.rows, spec.cols
                )));
            }
            for (dst, &src) in slot.iter_mut().zip(rec.data.iter()) {
                *dst = src as f64;
            }
        }
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after final tensor".into()));
    }
    weights.validate_values()?;
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EncoderConfig {
        EncoderConfig {
            in_dim: 6,
            block_channels: [4, 5, 6],
            kernels: [3, 3, 3],
            se_bottleneck: [2, 2, 2],
            pooled_dim: 12,
            embed_dim: 8,
        }
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let w = EncoderWeights::init(&cfg(), 42).unwrap();
        save_weights(&path, &w).unwrap();
        let loaded = load_weights(&path).unwrap();
        assert_eq!(w, loaded);

        // and the file bytes are stable across a second save
        save_weights(&dir.path().join("w2.bin"), &loaded).unwrap();
        let a = std::fs::read(&path).unwrap();
        let b = std::fs::read(dir.path().join("w2.bin")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupted_magic_version_and_shape_raise_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let w = EncoderWeights::init(&cfg(), 1).unwrap();
        save_weights(&path, &w).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_weights(&path), Err(Error::BadMagic { .. })));

        let mut bad = bytes.clone();
        bad[4] = 99;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            load_weights(&path),
            Err(Error::BadVersion { found: 99, .. })
        ));

        // corrupt the first tensor's row count (magic 4 + version 4 +
        // config 13*4 + count 4 + name_len 4 + name .. then rows)
        let name_len = "block0.depthwise".len();
        let rows_off = 4 + 4 + 13 * 4 + 4 + 4 + name_len;
        let mut bad = bytes.clone();
        bad[rows_off] = 77;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_weights(&path), Err(Error::Shape(_))));

        let mut truncated = bytes.clone();
        truncated.truncate(bytes.len() - 3);
        std::fs::write(&path, &truncated).unwrap();
        assert!(matches!(load_weights(&path), Err(Error::Truncated(_))));
    }

    #[test]
    fn config_mismatch_is_its_own_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let w = EncoderWeights::init(&cfg(), 1).unwrap();
        save_weights(&path, &w).unwrap();
        let loaded = load_weights(&path).unwrap();
        let other = EncoderConfig {
            embed_dim: 16,
            ..cfg()
        };
        assert!(matches!(
            loaded.expect_config(&other),
            Err(Error::ConfigMismatch(_))
        ));
        assert!(loaded.expect_config(&cfg()).is_ok());
    }

    #[test]
    fn non_finite_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let mut w = EncoderWeights::init(&cfg(), 1).unwrap();
        w.proj_b[0] = f64::NAN;
        save_weights(&path, &w).unwrap();
        assert!(matches!(load_weights(&path), Err(Error::Format(_))));
    }
}

//! Embedding files: magic `SPKE`, version, dimension, normalized flag,
//! f32 LE payload. Round-trips are exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::io::tensor::{check_magic, check_version, read_exact, read_u32, write_u32};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"SPKE";
pub const EMBEDDING_VERSION: u32 = 1;

pub fn write_embedding(path: &Path, embedding: &Embedding) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&EMBEDDING_MAGIC)?;
    write_u32(&mut w, EMBEDDING_VERSION)?;
    write_u32(&mut w, embedding.dim() as u32)?;
    w.write_all(&[u8::from(embedding.is_normalized())])?;
    for &v in embedding.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embedding(path: &Path) -> Result<Embedding> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, EMBEDDING_MAGIC)?;
    check_version(&mut r, EMBEDDING_VERSION)?;
    let dim = read_u32(&mut r, "embedding dimension")? as usize;
    if dim == 0 || dim > 1 << 20 {
        return Err(Error::Format(format!("implausible embedding dimension {dim}")));
    }
    let mut flag = [0u8; 1];
    read_exact(&mut r, &mut flag, "normalized flag")?;
    let normalized = match flag[0] {
        0 => false,
        1 => true,
        other => {
            return Err(Error::Format(format!(
                "normalized flag must be 0 or 1, found {other}"
            )))
        }
    };
    let mut values = Vec::with_capacity(dim);
    let mut buf = [0u8; 4];
    for _ in 0..dim {
        read_exact(&mut r, &mut buf, "embedding payload")?;
        values.push(f32::from_le_bytes(buf));
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after embedding payload".into()));
    }
    Embedding::new(values, normalized)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.emb");
        let e = Embedding::new(vec![0.6, 0.8], true).unwrap();
        write_embedding(&path, &e).unwrap();
        let got = read_embedding(&path).unwrap();
        assert_eq!(e, got);

        write_embedding(&dir.path().join("e2.emb"), &got).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(dir.path().join("e2.emb")).unwrap()
        );
    }

    #[test]
    fn corruption_cases_raise_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.emb");
        let e = Embedding::new(vec![1.0, 0.0, 0.0], true).unwrap();
        write_embedding(&path, &e).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let mut bad = bytes.clone();
        bad[1] = b'!';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(read_embedding(&path), Err(Error::BadMagic { .. })));

        let mut bad = bytes.clone();
        bad[4] = 7;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(read_embedding(&path), Err(Error::BadVersion { .. })));

        let mut truncated = bytes.clone();
        truncated.truncate(bytes.len() - 2);
        std::fs::write(&path, &truncated).unwrap();
        assert!(matches!(read_embedding(&path), Err(Error::Truncated(_))));

        // flip the normalized flag on a non-unit payload
        let unnorm = Embedding::new(vec![2.0, 0.0, 0.0], false).unwrap();
        write_embedding(&path, &unnorm).unwrap();
        let mut bad = std::fs::read(&path).unwrap();
        bad[12] = 1;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(read_embedding(&path), Err(Error::Numeric(_))));
    }
}

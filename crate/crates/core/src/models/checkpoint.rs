//! Binary checkpoints: magic "SPFG", format version, header, name/shape/dtype
//! table, then raw little-endian parameter data.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Arch, Model};
use crate::autodiff::{EncoderConfig, ParamSet, Scalar};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SPFG";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    arch: Arch,
    word_cfg: Option<EncoderConfig>,
    char_cfg: Option<EncoderConfig>,
    sub_cfg: Option<EncoderConfig>,
    n_specials: usize,
    n_labels: usize,
    word_vocab_hash: String,
    aux_hash: String,
    step: u64,
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_bytes(w: &mut impl Write, b: &[u8]) -> Result<()> {
    write_u64(w, b.len() as u64)?;
    w.write_all(b)?;
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::CheckpointTruncated)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>> {
    let len = read_u64(r)? as usize;
    let mut b = vec![0u8; len];
    read_exact(r, &mut b)?;
    Ok(b)
}

pub fn save_checkpoint<F: Scalar>(model: &Model<F>, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    let header = Header {
        arch: model.arch,
        word_cfg: model.word_cfg,
        char_cfg: model.char_cfg,
        sub_cfg: model.sub_cfg,
        n_specials: model.n_specials,
        n_labels: model.n_labels,
        word_vocab_hash: model.word_vocab_hash.clone(),
        aux_hash: model.aux_hash.clone(),
        step: model.step,
    };
    write_bytes(&mut w, &serde_json::to_vec(&header)?)?;
    write_u32(&mut w, model.params.len() as u32)?;
    for e in model.params.entries() {
        write_bytes(&mut w, e.name.as_bytes())?;
        write_u64(&mut w, e.rows as u64)?;
        write_u64(&mut w, e.cols as u64)?;
        write_bytes(&mut w, F::DTYPE.as_bytes())?;
    }
    for e in model.params.entries() {
        for v in &e.data {
            match F::DTYPE {
                "f32" => w.write_all(&(v.to_f64() as f32).to_le_bytes())?,
                _ => w.write_all(&v.to_f64().to_le_bytes())?,
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint, casting stored values into `F`. When expected hashes
/// are supplied, mismatches fail before any model is returned.
pub fn load_checkpoint<F: Scalar>(
    path: &Path,
    expected_word_hash: Option<&str>,
    expected_aux_hash: Option<&str>,
) -> Result<Model<F>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::CheckpointTruncated);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::CheckpointVersion { found: version, expected: VERSION });
    }
    let header: Header = serde_json::from_slice(&read_bytes(&mut r)?)?;
    if let Some(expected) = expected_word_hash {
        if header.word_vocab_hash != expected {
            return Err(Error::CheckpointHash {
                kind: "word vocabulary",
                found: header.word_vocab_hash,
                expected: expected.to_string(),
            });
        }
    }
    if let Some(expected) = expected_aux_hash {
        if header.aux_hash != expected {
            return Err(Error::CheckpointHash {
                kind: "char vocabulary / subword model",
                found: header.aux_hash,
                expected: expected.to_string(),
            });
        }
    }
    let n_params = read_u32(&mut r)? as usize;
    let mut table = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name = String::from_utf8(read_bytes(&mut r)?)
            .map_err(|_| Error::CheckpointTruncated)?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let dtype = String::from_utf8(read_bytes(&mut r)?)
            .map_err(|_| Error::CheckpointTruncated)?;
        table.push((name, rows, cols, dtype));
    }
    let mut params: ParamSet<F> = ParamSet::new();
    for (name, rows, cols, dtype) in table {
        let n = rows * cols;
        let data: Vec<F> = match dtype.as_str() {
            "f32" => {
                let mut buf = vec![0u8; n * 4];
                read_exact(&mut r, &mut buf)?;
                buf.chunks_exact(4)
                    .map(|c| F::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                    .collect()
            }
            "f64" => {
                let mut buf = vec![0u8; n * 8];
                read_exact(&mut r, &mut buf)?;
                buf.chunks_exact(8)
                    .map(|c| F::of(f64::from_le_bytes(c.try_into().unwrap())))
                    .collect()
            }
            other => {
                return Err(Error::Config(format!("unknown checkpoint dtype {other}")))
            }
        };
        params.add(&name, rows, cols, data);
    }
    Ok(Model {
        arch: header.arch,
        word_cfg: header.word_cfg,
        char_cfg: header.char_cfg,
        sub_cfg: header.sub_cfg,
        n_specials: header.n_specials,
        n_labels: header.n_labels,
        word_vocab_hash: header.word_vocab_hash,
        aux_hash: header.aux_hash,
        step: header.step,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{derive_char_vocab, VocabKind, Vocabulary};

    fn tiny_model(seed: u64) -> Model<f32> {
        let wv = Vocabulary::new(
            VocabKind::Word,
            ["the", "cat", "sat"].map(String::from),
        );
        let cv = derive_char_vocab(&wv);
        let mut cfg = EncoderConfig::new(8, 1, 2, 16, 0);
        cfg.dropout_rate = 0.0;
        Model::new_word_char(Some(cfg), Some(cfg), &wv, &cv, 20, seed).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny_model(0);
        let p1 = dir.path().join("a.spfg");
        let p2 = dir.path().join("b.spfg");
        save_checkpoint(&m, &p1).unwrap();
        let loaded: Model<f32> = load_checkpoint(&p1, None, None).unwrap();
        save_checkpoint(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(loaded.step, m.step);
        assert_eq!(loaded.arch, m.arch);
    }

    #[test]
    fn wrong_vocab_hash_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny_model(1);
        let p = dir.path().join("m.spfg");
        save_checkpoint(&m, &p).unwrap();
        let err = load_checkpoint::<f32>(&p, Some("deadbeef"), None).unwrap_err();
        assert!(matches!(err, Error::CheckpointHash { kind: "word vocabulary", .. }));
        // Matching hashes load fine.
        assert!(load_checkpoint::<f32>(&p, Some(&m.word_vocab_hash), Some(&m.aux_hash)).is_ok());
    }

    #[test]
    fn truncated_file_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny_model(2);
        let p = dir.path().join("m.spfg");
        save_checkpoint(&m, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let cut = dir.path().join("cut.spfg");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&cut, None, None),
            Err(Error::CheckpointTruncated)
        ));
    }

    #[test]
    fn version_mismatch_is_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny_model(3);
        let p = dir.path().join("m.spfg");
        save_checkpoint(&m, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[4] = 99; // bump the version field
        let bad = dir.path().join("bad.spfg");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&bad, None, None),
            Err(Error::CheckpointVersion { found: 99, expected: VERSION })
        ));
    }

    #[test]
    fn not_a_checkpoint_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.spfg");
        std::fs::write(&p, b"hello world").unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&p, None, None),
            Err(Error::CheckpointTruncated)
        ));
    }

    #[test]
    fn loaded_model_predicts_identically() {
        use crate::eval::ReportCounters;
        use crate::models::{correct_sentence, Resources};
        let dir = tempfile::tempdir().unwrap();
        let wv = Vocabulary::new(
            VocabKind::Word,
            ["the", "cat", "sat"].map(String::from),
        );
        let cv = derive_char_vocab(&wv);
        let res = Resources {
            word_vocab: wv,
            char_vocab: cv,
            subword_model: None,
            max_word_len: 20,
        };
        let m = tiny_model(4);
        let p = dir.path().join("m.spfg");
        save_checkpoint(&m, &p).unwrap();
        let loaded: Model<f32> = load_checkpoint(&p, None, None).unwrap();
        let noisy: Vec<String> = ["teh", "cta"].map(String::from).to_vec();
        let mut c1 = ReportCounters::default();
        let mut c2 = ReportCounters::default();
        assert_eq!(
            correct_sentence(&m, &res, &noisy, &mut c1),
            correct_sentence(&loaded, &res, &noisy, &mut c2)
        );
    }
}

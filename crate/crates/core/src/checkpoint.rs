//! Single-file model checkpoints.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` manifest length, the JSON
//! manifest, then every parameter as little-endian `f64` in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, RankingModel};
use crate::text::Encoder;
use crate::train::TrainedModel;

pub const MAGIC: &[u8; 8] = b"FRNKCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: ModelConfig,
    pub params: Vec<ParamEntry>,
    pub encoder: Encoder,
}

pub fn manifest(trained: &TrainedModel) -> Manifest {
    let config = trained.model.config();
    Manifest {
        format_version: FORMAT_VERSION,
        dtype: "f64le".into(),
        seed: config.seed,
        config_hash: config.config_hash(),
        config: config.clone(),
        params: trained
            .model
            .store()
            .iter()
            .map(|(_, p)| {
                let (rows, cols) = p.shape();
                ParamEntry {
                    name: p.name().to_string(),
                    rows,
                    cols,
                }
            })
            .collect(),
        encoder: trained.encoder.clone(),
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, trained: &TrainedModel) -> Result<()> {
    let json = serde_json::to_vec(&manifest(trained))?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, p) in trained.model.store().iter() {
        for v in p.value() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<TrainedModel> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for a checkpoint header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(
            "not a checkpoint file (bad magic)".into(),
        ));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)
        .map_err(|_| Error::Checkpoint("truncated manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(&json)?;
    if manifest.dtype != "f64le" {
        return Err(Error::Checkpoint(format!(
            "unsupported dtype `{}`",
            manifest.dtype
        )));
    }
    if manifest.config.config_hash() != manifest.config_hash {
        return Err(Error::Checkpoint(
            "config hash does not match the stored config".into(),
        ));
    }

    let encoder = manifest.encoder;
    let mut model = RankingModel::new(
        manifest.config,
        encoder.vocab.len(),
        encoder.countries.len(),
    )?;
    let expected: Vec<(String, usize, usize)> = model
        .store()
        .iter()
        .map(|(_, p)| (p.name().to_string(), p.shape().0, p.shape().1))
        .collect();
    let stored: Vec<(String, usize, usize)> = manifest
        .params
        .iter()
        .map(|p| (p.name.clone(), p.rows, p.cols))
        .collect();
    if expected != stored {
        return Err(Error::Checkpoint(
            "parameter list does not match the architecture in the stored config".into(),
        ));
    }
    let mut buf = [0u8; 8];
    for entry in &manifest.params {
        let mut values = Vec::with_capacity(entry.rows * entry.cols);
        for _ in 0..entry.rows * entry.cols {
            r.read_exact(&mut buf).map_err(|_| {
                Error::Checkpoint(format!("truncated data for parameter `{}`", entry.name))
            })?;
            values.push(f64::from_le_bytes(buf));
        }
        model.store_mut().set(&entry.name, &values)?;
    }
    if r.read(&mut buf)? != 0 {
        return Err(Error::Checkpoint(
            "trailing bytes after parameter data".into(),
        ));
    }
    Ok(TrainedModel { model, encoder })
}

pub fn save(path: &Path, trained: &TrainedModel) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), trained)
}

pub fn load(path: &Path) -> Result<TrainedModel> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::InteractionMode;
    use crate::model::Architecture;
    use crate::text::{CategoryTable, Lexicon, Vocabulary};

    fn trained(arch: Architecture) -> TrainedModel {
        let vocab = Vocabulary::from_lexicon(Lexicon::from_parts(
            vec!["<oov>".into(), "pasta".into(), "tomato".into()],
            vec![0, 3, 2],
        ));
        let countries = CategoryTable::from_lexicon(Lexicon::from_parts(
            vec!["<unknown>".into(), "GB".into()],
            vec![0, 1],
        ));
        let mut config = ModelConfig::new(arch, InteractionMode::QueryField, true);
        config.seed = 7;
        let model = RankingModel::new(config, vocab.len(), countries.len()).unwrap();
        TrainedModel {
            model,
            encoder: Encoder { vocab, countries },
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        for arch in [
            Architecture::Representation,
            Architecture::ImplicitConcat,
            Architecture::Nrmf,
            Architecture::Fwfm,
        ] {
            let t = trained(arch);
            let mut bytes = Vec::new();
            write_checkpoint(&mut bytes, &t).unwrap();
            let back = read_checkpoint(bytes.as_slice()).unwrap();
            assert_eq!(back.model.store().snapshot(), t.model.store().snapshot());
            assert_eq!(back.encoder, t.encoder);
            assert_eq!(back.encoder.vocab.get("tomato"), 2);
            let mut again = Vec::new();
            write_checkpoint(&mut again, &back).unwrap();
            assert_eq!(bytes, again);
        }
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let t = trained(Architecture::Fwfm);
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &t).unwrap();
        assert!(matches!(
            read_checkpoint(&bytes[..bytes.len() - 3]),
            Err(Error::Checkpoint(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_checkpoint(bad.as_slice()),
            Err(Error::Checkpoint(_))
        ));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(
            read_checkpoint(long.as_slice()),
            Err(Error::Checkpoint(_))
        ));
    }
}

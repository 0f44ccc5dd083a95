//! Checkpoint persistence.
//!
//! Layout: 4-byte magic, u32 version, u64 header length, JSON header
//! (dims, variant, seed, training-config echo, array directory), then the
//! raw little-endian f64 arrays back to back. Round trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Params;
use crate::context::ContextNet;
use crate::error::{Error, Result};
use crate::gail::{Discriminator, TrainConfig};
use crate::genmodel::{BehaviorPolicy, GenStack, ModelDims, Variant};
use crate::rng::Rng;

const MAGIC: &[u8; 4] = b"PPCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Offset into the data section, in f64 units.
    offset: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    dims: ModelDims,
    context_hidden_dim: usize,
    variant: Variant,
    seed: u64,
    train_config: TrainConfig,
    arrays: Vec<ArrayEntry>,
}

/// A complete trained model bundle: context VAE, generation stack,
/// discriminator, and behavior policy, plus the config echo.
pub struct Checkpoint {
    pub dims: ModelDims,
    pub context_hidden_dim: usize,
    pub variant: Variant,
    pub seed: u64,
    pub train_config: TrainConfig,
    pub context: ContextNet,
    pub stack: GenStack,
    pub disc: Discriminator,
    pub behavior: BehaviorPolicy,
}

impl Checkpoint {
    /// Named parameter groups in a fixed order.
    fn groups(&self) -> Vec<(&'static str, &Params)> {
        vec![
            ("context", &self.context.store),
            ("gen_trans", self.stack.trans_params()),
            ("gen_policy", self.stack.policy_params()),
            ("disc", &self.disc.store),
            ("bc", &self.behavior.store),
        ]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut arrays = Vec::new();
        let mut offset = 0u64;
        for (group, store) in self.groups() {
            for (name, tensor) in store.iter() {
                arrays.push(ArrayEntry {
                    name: format!("{group}.{name}"),
                    rows: tensor.rows,
                    cols: tensor.cols,
                    offset,
                });
                offset += tensor.len() as u64;
            }
        }
        let header = Header {
            version: VERSION,
            dims: self.dims,
            context_hidden_dim: self.context_hidden_dim,
            variant: self.variant,
            seed: self.seed,
            train_config: self.train_config.clone(),
            arrays,
        };
        let header_bytes = serde_json::to_vec(&header)?;

        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        for (_, store) in self.groups() {
            for (_, tensor) in store.iter() {
                for v in &tensor.data {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let mut vbuf = [0u8; 4];
        r.read_exact(&mut vbuf)?;
        let version = u32::from_le_bytes(vbuf);
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unrecognized version {version} (expected {VERSION})"
            )));
        }
        let mut lbuf = [0u8; 8];
        r.read_exact(&mut lbuf)?;
        let hlen = u64::from_le_bytes(lbuf) as usize;
        let mut hbuf = vec![0u8; hlen];
        r.read_exact(&mut hbuf)?;
        let header: Header =
            serde_json::from_slice(&hbuf).map_err(|e| Error::Checkpoint(e.to_string()))?;

        let mut data = Vec::new();
        r.read_to_end(&mut data)?;
        if data.len() % 8 != 0 {
            return Err(Error::Checkpoint("data section not f64-aligned".into()));
        }
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();

        // Rebuild the layout from dims, then overwrite every tensor by name.
        let mut layout_rng = Rng::seed_from(0);
        let context = ContextNet::new(
            header.dims.state_dim,
            header.dims.latent_dim,
            header.context_hidden_dim,
            &mut layout_rng,
        );
        let stack = GenStack::new(header.variant, header.dims, &mut layout_rng);
        let disc = Discriminator::new(header.dims, &mut layout_rng);
        let behavior = BehaviorPolicy::new(header.dims, &mut layout_rng);
        let mut ckpt = Checkpoint {
            dims: header.dims,
            context_hidden_dim: header.context_hidden_dim,
            variant: header.variant,
            seed: header.seed,
            train_config: header.train_config.clone(),
            context,
            stack,
            disc,
            behavior,
        };

        let total: u64 = header
            .arrays
            .iter()
            .map(|a| (a.rows * a.cols) as u64)
            .sum();
        if total as usize != values.len() {
            return Err(Error::Checkpoint(format!(
                "data section holds {} values but the directory declares {total}",
                values.len()
            )));
        }

        for entry in &header.arrays {
            let (group, local) = entry
                .name
                .split_once('.')
                .ok_or_else(|| Error::Checkpoint(format!("array `{}` lacks a group", entry.name)))?;
            let store = ckpt.group_mut(group).ok_or_else(|| {
                Error::Checkpoint(format!("array `{}` names unknown group", entry.name))
            })?;
            let id = store
                .ids()
                .find(|&id| store.name(id) == local)
                .ok_or_else(|| {
                    Error::Checkpoint(format!("array `{}` has no slot in the model", entry.name))
                })?;
            let tensor = store.get_mut(id);
            if tensor.rows != entry.rows || tensor.cols != entry.cols {
                return Err(Error::Checkpoint(format!(
                    "array `{}` shape [{}, {}] does not match declared dims [{}, {}]",
                    entry.name, entry.rows, entry.cols, tensor.rows, tensor.cols
                )));
            }
            let start = entry.offset as usize;
            let len = entry.rows * entry.cols;
            if start + len > values.len() {
                return Err(Error::Checkpoint(format!(
                    "array `{}` overruns the data section",
                    entry.name
                )));
            }
            tensor.data.copy_from_slice(&values[start..start + len]);
        }
        Ok(ckpt)
    }

    fn group_mut(&mut self, group: &str) -> Option<&mut Params> {
        match group {
            "context" => Some(&mut self.context.store),
            "gen_trans" => Some(self.stack.trans_params_mut().0),
            "gen_policy" => Some(self.stack.policy_params_mut().0),
            "disc" => Some(&mut self.disc.store),
            "bc" => Some(&mut self.behavior.store),
            _ => None,
        }
    }
}

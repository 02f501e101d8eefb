//! The trainable part of the recommender: a session encoder plus the policy
//! network, with flat parameter access and the checkpoint format.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{build_encoder, EncoderKind, SessionEncoder};
use crate::error::{Error, Result};
use crate::mdp::PolicyParams;
use crate::transe::{read_f32s, split_header};

pub struct ReksModel {
    pub encoder: Box<dyn SessionEncoder>,
    pub policy: PolicyParams,
}

impl Clone for ReksModel {
    fn clone(&self) -> Self {
        ReksModel {
            encoder: self.encoder.clone_box(),
            policy: self.policy.clone(),
        }
    }
}

impl std::fmt::Debug for ReksModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReksModel")
            .field("encoder", &self.encoder.kind())
            .field("embed_dim", &self.embed_dim())
            .field("session_dim", &self.session_dim())
            .field("state_dim", &self.state_dim())
            .finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub encoder: EncoderKind,
    /// d₀: embedding width
    pub embed_dim: usize,
    /// d₁: session vector width
    pub session_dim: usize,
    /// d₂: state vector width
    pub state_dim: usize,
    pub dropout: f64,
}

impl ReksModel {
    pub fn new(shape: ModelShape, seed: u64) -> Result<Self> {
        if shape.embed_dim == 0 || shape.session_dim == 0 || shape.state_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        let encoder = build_encoder(shape.encoder, shape.embed_dim, shape.session_dim, shape.dropout, seed)?;
        let policy = PolicyParams::random(shape.session_dim, shape.embed_dim, shape.state_dim, seed.wrapping_add(1));
        Ok(ReksModel { encoder, policy })
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            encoder: self.encoder.kind(),
            embed_dim: self.embed_dim(),
            session_dim: self.session_dim(),
            state_dim: self.state_dim(),
            dropout: self.encoder.dropout(),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.policy.embed_dim()
    }

    pub fn session_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.policy.state_dim()
    }

    pub fn num_parameters(&self) -> usize {
        self.encoder.num_parameters() + self.policy.len()
    }

    /// Encoder parameters followed by the MLP weight, MLP bias and `W₁`.
    pub fn parameters(&self) -> Vec<f64> {
        let mut v = self.encoder.parameters();
        v.extend(self.policy.flatten());
        v
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_parameters() {
            return Err(Error::Shape {
                expected: self.num_parameters(),
                actual: flat.len(),
            });
        }
        let (enc, pol) = flat.split_at(self.encoder.num_parameters());
        self.encoder.set_parameters(enc)?;
        self.policy.assign(pol)
    }

    pub fn round_to_f32(&mut self) {
        let rounded: Vec<f64> = self.parameters().into_iter().map(|x| x as f32 as f64).collect();
        self.set_parameters(&rounded).expect("same layout");
    }
}

/// Everything needed to resume or evaluate a training run.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ReksModel,
    pub baseline: f64,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    shape: ModelShape,
    encoder_params: usize,
    policy_params: usize,
    baseline: f64,
    rng_seed: u64,
    rng_word_pos: String,
    epoch: usize,
    fingerprint: String,
}

impl Checkpoint {
    /// JSON header line, then the flat parameters as little-endian `f32`.
    pub fn save(&self, path: &Path, fingerprint: &str) -> Result<()> {
        let header = CheckpointHeader {
            shape: self.model.shape(),
            encoder_params: self.model.encoder.num_parameters(),
            policy_params: self.model.policy.len(),
            baseline: self.baseline,
            rng_seed: self.rng_seed,
            rng_word_pos: self.rng_word_pos.to_string(),
            epoch: self.epoch,
            fingerprint: fingerprint.to_string(),
        };
        let mut buf = serde_json::to_vec(&header).expect("header serializes");
        buf.push(b'\n');
        for x in self.model.parameters() {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (header, blob) = split_header::<CheckpointHeader>(&bytes, path)?;
        let mut model = ReksModel::new(header.shape, 0)?;
        if model.encoder.num_parameters() != header.encoder_params || model.policy.len() != header.policy_params {
            return Err(Error::artifact(path, "parameter counts do not match the declared shape"));
        }
        let flat = read_f32s(blob, model.num_parameters(), path)?;
        model.set_parameters(&flat)?;
        let rng_word_pos = header
            .rng_word_pos
            .parse()
            .map_err(|_| Error::artifact(path, "bad rng position"))?;
        Ok(Checkpoint {
            model,
            baseline: header.baseline,
            rng_seed: header.rng_seed,
            rng_word_pos,
            epoch: header.epoch,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let shape = ModelShape {
            encoder: EncoderKind::Gru,
            embed_dim: 4,
            session_dim: 3,
            state_dim: 5,
            dropout: 0.5,
        };
        let mut model = ReksModel::new(shape, 7).unwrap();
        model.round_to_f32();
        let ckpt = Checkpoint {
            model,
            baseline: 1.25,
            rng_seed: 9,
            rng_word_pos: 1234,
            epoch: 3,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path, "fp").unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.model.parameters(), ckpt.model.parameters());
        assert_eq!(back.model.shape(), shape);
        assert_eq!((back.baseline, back.rng_seed, back.rng_word_pos, back.epoch), (1.25, 9, 1234, 3));
    }

    #[test]
    fn flat_parameters_round_trip() {
        let shape = ModelShape {
            encoder: EncoderKind::Mean,
            embed_dim: 3,
            session_dim: 3,
            state_dim: 2,
            dropout: 0.0,
        };
        let mut m = ReksModel::new(shape, 1).unwrap();
        let p: Vec<f64> = (0..m.num_parameters()).map(|i| i as f64).collect();
        m.set_parameters(&p).unwrap();
        assert_eq!(m.parameters(), p);
        assert!(m.set_parameters(&p[1..]).is_err());
    }
}

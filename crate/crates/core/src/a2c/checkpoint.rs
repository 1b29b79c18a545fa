//! JSON checkpoint container.
//!
//! Parameters and accumulators are stored as 64-bit floats with exact
//! round-tripping, next to the layer shapes, the trainer configuration and
//! the episode counter (which, with the seed, fixes the generator state).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{NetKind, NetShape, PolicyNet};
use super::trainer::TrainerState;
use super::TrainerConfig;
use crate::error::{OffloadError, Result};
use crate::scalar::Scalar;
use crate::tracegen::GenConfig;

pub const CHECKPOINT_FORMAT: &str = "offload-a2c-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetRecord {
    pub kind: NetKind,
    pub shape: NetShape,
    pub params: Vec<f64>,
    pub accumulators: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RngRecord {
    pub seed: u64,
    /// Next episode stream to be drawn.
    pub stream: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub episode: u64,
    pub phi_scale: f64,
    pub rng: RngRecord,
    pub trainer: TrainerConfig,
    pub generator: GenConfig,
    pub actor: NetRecord,
    pub critic: NetRecord,
}

impl NetRecord {
    fn from_net<F: Scalar>(net: &PolicyNet<F>) -> Self {
        NetRecord {
            kind: net.kind,
            shape: net.shape,
            params: net.params.iter().map(|v| v.as_f64()).collect(),
            accumulators: net.rms.iter().map(|v| v.as_f64()).collect(),
        }
    }

    fn to_net<F: Scalar>(&self, expect: NetKind) -> Result<PolicyNet<F>> {
        let n = self.shape.param_count();
        if self.kind != expect || self.params.len() != n || self.accumulators.len() != n {
            return Err(OffloadError::Checkpoint(format!(
                "{:?} record does not match shape {:?} ({} params, {} accumulators, expected {n})",
                self.kind,
                self.shape,
                self.params.len(),
                self.accumulators.len()
            )));
        }
        Ok(PolicyNet {
            kind: self.kind,
            shape: self.shape,
            params: self.params.iter().map(|&v| F::lit(v)).collect(),
            rms: self.accumulators.iter().map(|&v| F::lit(v)).collect(),
        })
    }
}

impl Checkpoint {
    pub fn capture<F: Scalar>(state: &TrainerState<F>, trainer: &TrainerConfig, generator: &GenConfig) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            episode: state.episode,
            phi_scale: state.phi_scale.as_f64(),
            rng: RngRecord { seed: trainer.seed, stream: state.episode },
            trainer: trainer.clone(),
            generator: generator.clone(),
            actor: NetRecord::from_net(&state.actor),
            critic: NetRecord::from_net(&state.critic),
        }
    }

    pub fn restore<F: Scalar>(&self) -> Result<TrainerState<F>> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(OffloadError::Checkpoint(format!("unknown format `{}`", self.format)));
        }
        Ok(TrainerState {
            actor: self.actor.to_net(NetKind::Actor)?,
            critic: self.critic.to_net(NetKind::Critic)?,
            episode: self.episode,
            phi_scale: F::lit(self.phi_scale),
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    let file = File::create(&tmp).map_err(|e| OffloadError::io(&tmp, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer(&mut out, ckpt).map_err(|e| OffloadError::Checkpoint(e.to_string()))?;
    out.flush().map_err(|e| OffloadError::io(&tmp, e))?;
    drop(out);
    std::fs::rename(&tmp, path).map_err(|e| OffloadError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| OffloadError::io(path, e))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| OffloadError::Checkpoint(format!("{}: {e}", path.display())))
}

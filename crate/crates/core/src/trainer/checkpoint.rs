//! Versioned binary checkpoint container.
//!
//! Layout: 8-byte magic, u32 format version, u64 body length, 32-byte SHA-256
//! of the body, then the body (config JSON, iteration, rng and stream
//! positions, data fingerprint, three networks, three optimizer states). All
//! integers little-endian; parameters stored as raw f32 bits so a round trip
//! is bitwise exact.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use super::adam::OptimizerState;
use super::config::{ModelConfig, TrainingConfig};
use super::stream::StreamState;
use crate::error::{MegError, Result};
use crate::nn::{Activation, Dense, Mlp};
use crate::rng::RngState;

const MAGIC: &[u8; 8] = b"MEGCKPT0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: TrainingConfig,
    pub model_config: ModelConfig,
    pub iteration: u64,
    pub energy: Mlp<f32>,
    pub generator: Mlp<f32>,
    pub stats: Mlp<f32>,
    pub opt_energy: OptimizerState<f32>,
    pub opt_generator: OptimizerState<f32>,
    pub opt_stats: OptimizerState<f32>,
    pub rng_state: RngState,
    pub stream_state: StreamState,
    pub data_rows: u64,
    pub data_cols: u64,
    pub data_sha256: [u8; 32],
}

pub fn hash_data(data: &Array2<f32>) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for &v in data.iter() {
        hasher.update(v.to_le_bytes());
    }
    hasher.finalize().into()
}

// --- body writer -----------------------------------------------------------

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    fn sized(&mut self, v: &[u8]) {
        self.u64(v.len() as u64);
        self.bytes(v);
    }

    fn mlp(&mut self, mlp: &Mlp<f32>) {
        self.u32(mlp.layers.len() as u32);
        for layer in &mlp.layers {
            self.u32(layer.weights.nrows() as u32);
            self.u32(layer.weights.ncols() as u32);
            self.buf.push(activation_tag(layer.activation));
            for &w in layer.weights.iter() {
                self.f32(w);
            }
            for &b in layer.bias.iter() {
                self.f32(b);
            }
        }
    }

    fn opt_state(&mut self, state: &OptimizerState<f32>) {
        self.u64(state.step_count);
        self.u64(state.first_moment.len() as u64);
        for &m in &state.first_moment {
            self.f32(m);
        }
        for &v in &state.second_moment {
            self.f32(v);
        }
    }
}

// --- body reader -----------------------------------------------------------

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(MegError::Integrity("checkpoint body truncated".to_string()));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn byte(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn sized(&mut self) -> Result<&'a [u8]> {
        let len = self.u64()? as usize;
        self.take(len)
    }

    fn mlp(&mut self) -> Result<Mlp<f32>> {
        let n_layers = self.u32()? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let rows = self.u32()? as usize;
            let cols = self.u32()? as usize;
            let activation = activation_from_tag(self.byte()?)?;
            let mut weights = Array2::zeros((rows, cols));
            for w in weights.iter_mut() {
                *w = self.f32()?;
            }
            let mut bias = Array1::zeros(rows);
            for b in bias.iter_mut() {
                *b = self.f32()?;
            }
            layers.push(Dense { weights, bias, activation });
        }
        if layers.is_empty() {
            return Err(MegError::Integrity("checkpoint holds an empty network".to_string()));
        }
        Ok(Mlp { layers })
    }

    fn opt_state(&mut self) -> Result<OptimizerState<f32>> {
        let step_count = self.u64()?;
        let len = self.u64()? as usize;
        let mut first_moment = vec![0.0f32; len];
        for m in first_moment.iter_mut() {
            *m = self.f32()?;
        }
        let mut second_moment = vec![0.0f32; len];
        for v in second_moment.iter_mut() {
            *v = self.f32()?;
        }
        Ok(OptimizerState { first_moment, second_moment, step_count })
    }
}

fn activation_tag(act: Activation) -> u8 {
    match act {
        Activation::Identity => 0,
        Activation::Relu => 1,
        Activation::LeakyRelu => 2,
        Activation::Tanh => 3,
        Activation::Softplus => 4,
    }
}

fn activation_from_tag(tag: u8) -> Result<Activation> {
    Ok(match tag {
        0 => Activation::Identity,
        1 => Activation::Relu,
        2 => Activation::LeakyRelu,
        3 => Activation::Tanh,
        4 => Activation::Softplus,
        other => {
            return Err(MegError::Integrity(format!("unknown activation tag {other}")));
        }
    })
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body = Writer::new();
        let config_json =
            serde_json::to_vec(&(&self.config, &self.model_config)).expect("config serializes");
        body.sized(&config_json);
        body.u64(self.iteration);
        body.bytes(&self.rng_state.seed);
        body.u64(self.rng_state.stream);
        body.u128(self.rng_state.word_pos);
        body.u64(self.stream_state.epoch);
        body.u64(self.stream_state.cursor);
        body.u64(self.data_rows);
        body.u64(self.data_cols);
        body.bytes(&self.data_sha256);
        body.mlp(&self.energy);
        body.mlp(&self.generator);
        body.mlp(&self.stats);
        body.opt_state(&self.opt_energy);
        body.opt_state(&self.opt_generator);
        body.opt_state(&self.opt_stats);

        let mut out = Vec::with_capacity(body.buf.len() + 52);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(body.buf.len() as u64).to_le_bytes());
        let digest: [u8; 32] = Sha256::digest(&body.buf).into();
        out.extend_from_slice(&digest);
        out.extend_from_slice(&body.buf);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 52 {
            return Err(MegError::Integrity("checkpoint shorter than its header".to_string()));
        }
        if &bytes[..8] != MAGIC {
            return Err(MegError::Integrity("not a checkpoint file (bad magic)".to_string()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(MegError::UnsupportedVersion { found: version, supported: FORMAT_VERSION });
        }
        let body_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let stored_digest: [u8; 32] = bytes[20..52].try_into().unwrap();
        let body = &bytes[52..];
        if body.len() != body_len {
            return Err(MegError::Integrity(format!(
                "checkpoint body length {} does not match header {}",
                body.len(),
                body_len
            )));
        }
        let digest: [u8; 32] = Sha256::digest(body).into();
        if digest != stored_digest {
            return Err(MegError::Integrity("checkpoint checksum mismatch".to_string()));
        }

        let mut r = Reader::new(body);
        let config_json = r.sized()?;
        let (config, model_config): (TrainingConfig, ModelConfig) =
            serde_json::from_slice(config_json)
                .map_err(|e| MegError::Integrity(format!("checkpoint config unreadable: {e}")))?;
        let iteration = r.u64()?;
        let mut seed = [0u8; 32];
        seed.copy_from_slice(r.take(32)?);
        let rng_state =
            RngState { seed, stream: r.u64()?, word_pos: r.u128()? };
        let stream_state = StreamState { epoch: r.u64()?, cursor: r.u64()? };
        let data_rows = r.u64()?;
        let data_cols = r.u64()?;
        let mut data_sha256 = [0u8; 32];
        data_sha256.copy_from_slice(r.take(32)?);
        let energy = r.mlp()?;
        let generator = r.mlp()?;
        let stats = r.mlp()?;
        let opt_energy = r.opt_state()?;
        let opt_generator = r.opt_state()?;
        let opt_stats = r.opt_state()?;

        Ok(Checkpoint {
            format_version: version,
            config,
            model_config,
            iteration,
            energy,
            generator,
            stats,
            opt_energy,
            opt_generator,
            opt_stats,
            rng_state,
            stream_state,
            data_rows,
            data_cols,
            data_sha256,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

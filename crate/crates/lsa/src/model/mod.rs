//! The 3-layer, 8-head, 128-dimensional encoder-decoder transformer:
//! parameter container, forward pass with optional activation capture,
//! loss, and exact reverse-mode gradients.
//!
//! The numeric core is generic over the float type; the trained model is
//! f32 throughout, while tests may instantiate f64 to compare analytic
//! gradients against central finite differences.

mod net;

pub use net::{
    decode_logits, encode, forward, gradients, loss_and_dlogits, AttnOverride, Component, EncOut, ForwardOpts,
    TokenBatch,
};

use crate::tokenizer::{VocabManifest, VOCAB_SIZE};
use ndarray::{Array1, Array2};
use rand::distr::uniform::SampleUniform;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

/// Float scalar the network is instantiated with.
pub trait Real:
    ndarray::NdFloat + num_traits::FromPrimitive + SampleUniform + std::iter::Sum + Default
{
}
impl Real for f32 {}
impl Real for f64 {}

pub(crate) fn r<F: Real>(x: f64) -> F {
    F::from_f64(x).unwrap()
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss is not finite")]
    NonFinite,
    #[error("checkpoint corrupt: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Layers in the encoder and in the decoder, each.
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl ModelConfig {
    /// The published architecture.
    pub fn base() -> Self {
        ModelConfig {
            embed_dim: 128,
            n_layers: 3,
            n_heads: 8,
            ff_dim: 512,
            dropout: 0.1,
            vocab_size: VOCAB_SIZE,
            max_len: 256,
        }
    }

    /// Small configuration for numerical tests.
    pub fn tiny() -> Self {
        ModelConfig {
            embed_dim: 16,
            n_layers: 1,
            n_heads: 2,
            ff_dim: 32,
            dropout: 0.0,
            vocab_size: VOCAB_SIZE,
            max_len: 96,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embed_dim % self.n_heads != 0 {
            return Err(ModelError::ShapeMismatch(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        Ok(())
    }

    /// Total parameter count from shape arithmetic.
    pub fn param_count(&self) -> usize {
        let d = self.embed_dim;
        let f = self.ff_dim;
        let v = self.vocab_size;
        let ln = 2 * d;
        let attn = 4 * (d * d + d);
        let ff = d * f + f + f * d + d;
        let enc_layer = ln + attn + ln + ff;
        let dec_layer = ln + attn + ln + attn + ln + ff;
        2 * v * d + self.n_layers * (enc_layer + dec_layer) + 2 * ln + d * v + v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearP<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormP<F> {
    pub gain: Array1<F>,
    pub offset: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnP<F> {
    pub wq: LinearP<F>,
    pub wk: LinearP<F>,
    pub wv: LinearP<F>,
    pub wo: LinearP<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfP<F> {
    pub w1: LinearP<F>,
    pub w2: LinearP<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncLayerP<F> {
    pub ln1: LayerNormP<F>,
    pub attn: AttnP<F>,
    pub ln2: LayerNormP<F>,
    pub ff: FfP<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecLayerP<F> {
    pub ln1: LayerNormP<F>,
    pub self_attn: AttnP<F>,
    pub ln2: LayerNormP<F>,
    pub cross_attn: AttnP<F>,
    pub ln3: LayerNormP<F>,
    pub ff: FfP<F>,
}

/// Every weight of the model, in a fixed traversal order (see
/// [`ParamSet::tensors`]). Used for parameters, gradients and optimizer
/// moments alike.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F> {
    pub config: ModelConfig,
    pub enc_emb: Array2<F>,
    pub dec_emb: Array2<F>,
    pub enc_layers: Vec<EncLayerP<F>>,
    pub dec_layers: Vec<DecLayerP<F>>,
    pub enc_ln_f: LayerNormP<F>,
    pub dec_ln_f: LayerNormP<F>,
    pub out: LinearP<F>,
}

fn uniform_fan_in<F: Real>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<F> {
    let bound = r::<F>(1.0 / (rows as f64).sqrt());
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

fn linear<F: Real>(inp: usize, out: usize, rng: &mut ChaCha8Rng) -> LinearP<F> {
    LinearP { w: uniform_fan_in(inp, out, rng), b: Array1::zeros(out) }
}

fn layer_norm<F: Real>(d: usize) -> LayerNormP<F> {
    LayerNormP { gain: Array1::ones(d), offset: Array1::zeros(d) }
}

fn attn<F: Real>(d: usize, rng: &mut ChaCha8Rng) -> AttnP<F> {
    AttnP { wq: linear(d, d, rng), wk: linear(d, d, rng), wv: linear(d, d, rng), wo: linear(d, d, rng) }
}

fn ff<F: Real>(d: usize, f: usize, rng: &mut ChaCha8Rng) -> FfP<F> {
    FfP { w1: linear(d, f, rng), w2: linear(f, d, rng) }
}

impl<F: Real> ParamSet<F> {
    /// Deterministic scaled-uniform fan-in initialization; zero biases.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.embed_dim;
        let v = config.vocab_size;
        let enc_emb = uniform_fan_in(v, d, &mut rng);
        let dec_emb = uniform_fan_in(v, d, &mut rng);
        let enc_layers = (0..config.n_layers)
            .map(|_| EncLayerP {
                ln1: layer_norm(d),
                attn: attn(d, &mut rng),
                ln2: layer_norm(d),
                ff: ff(d, config.ff_dim, &mut rng),
            })
            .collect();
        let dec_layers = (0..config.n_layers)
            .map(|_| DecLayerP {
                ln1: layer_norm(d),
                self_attn: attn(d, &mut rng),
                ln2: layer_norm(d),
                cross_attn: attn(d, &mut rng),
                ln3: layer_norm(d),
                ff: ff(d, config.ff_dim, &mut rng),
            })
            .collect();
        Ok(ParamSet {
            config: config.clone(),
            enc_emb,
            dec_emb,
            enc_layers,
            dec_layers,
            enc_ln_f: layer_norm(d),
            dec_ln_f: layer_norm(d),
            out: linear(d, v, &mut rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            for x in t {
                *x = F::zero();
            }
        }
        z
    }

    /// All tensors as flat slices, in the documented fixed order:
    /// embeddings, encoder layers, decoder layers, final norms, output
    /// projection; within a layer: norm, attention (q,k,v,o), norm,
    /// feed-forward; weight before bias.
    pub fn tensors(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = Vec::new();
        fn s1<F>(a: &Array1<F>) -> &[F] {
            a.as_slice().unwrap()
        }
        fn s2<F>(a: &Array2<F>) -> &[F] {
            a.as_slice().unwrap()
        }
        fn lin<'a, F>(out: &mut Vec<&'a [F]>, l: &'a LinearP<F>) {
            out.push(s2(&l.w));
            out.push(s1(&l.b));
        }
        fn ln<'a, F>(out: &mut Vec<&'a [F]>, l: &'a LayerNormP<F>) {
            out.push(s1(&l.gain));
            out.push(s1(&l.offset));
        }
        fn at<'a, F>(out: &mut Vec<&'a [F]>, a: &'a AttnP<F>) {
            lin(out, &a.wq);
            lin(out, &a.wk);
            lin(out, &a.wv);
            lin(out, &a.wo);
        }
        fn ffp<'a, F>(out: &mut Vec<&'a [F]>, f: &'a FfP<F>) {
            lin(out, &f.w1);
            lin(out, &f.w2);
        }
        out.push(s2(&self.enc_emb));
        out.push(s2(&self.dec_emb));
        for l in &self.enc_layers {
            ln(&mut out, &l.ln1);
            at(&mut out, &l.attn);
            ln(&mut out, &l.ln2);
            ffp(&mut out, &l.ff);
        }
        for l in &self.dec_layers {
            ln(&mut out, &l.ln1);
            at(&mut out, &l.self_attn);
            ln(&mut out, &l.ln2);
            at(&mut out, &l.cross_attn);
            ln(&mut out, &l.ln3);
            ffp(&mut out, &l.ff);
        }
        ln(&mut out, &self.enc_ln_f);
        ln(&mut out, &self.dec_ln_f);
        lin(&mut out, &self.out);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        fn s1<F>(a: &mut Array1<F>) -> &mut [F] {
            a.as_slice_mut().unwrap()
        }
        fn s2<F>(a: &mut Array2<F>) -> &mut [F] {
            a.as_slice_mut().unwrap()
        }
        fn lin<'a, F>(out: &mut Vec<&'a mut [F]>, l: &'a mut LinearP<F>) {
            out.push(s2(&mut l.w));
            out.push(s1(&mut l.b));
        }
        fn ln<'a, F>(out: &mut Vec<&'a mut [F]>, l: &'a mut LayerNormP<F>) {
            out.push(s1(&mut l.gain));
            out.push(s1(&mut l.offset));
        }
        fn at<'a, F>(out: &mut Vec<&'a mut [F]>, a: &'a mut AttnP<F>) {
            lin(out, &mut a.wq);
            lin(out, &mut a.wk);
            lin(out, &mut a.wv);
            lin(out, &mut a.wo);
        }
        fn ffp<'a, F>(out: &mut Vec<&'a mut [F]>, f: &'a mut FfP<F>) {
            lin(out, &mut f.w1);
            lin(out, &mut f.w2);
        }
        let mut out: Vec<&mut [F]> = Vec::new();
        out.push(s2(&mut self.enc_emb));
        out.push(s2(&mut self.dec_emb));
        for l in &mut self.enc_layers {
            ln(&mut out, &mut l.ln1);
            at(&mut out, &mut l.attn);
            ln(&mut out, &mut l.ln2);
            ffp(&mut out, &mut l.ff);
        }
        for l in &mut self.dec_layers {
            ln(&mut out, &mut l.ln1);
            at(&mut out, &mut l.self_attn);
            ln(&mut out, &mut l.ln2);
            at(&mut out, &mut l.cross_attn);
            ln(&mut out, &mut l.ln3);
            ffp(&mut out, &mut l.ff);
        }
        ln(&mut out, &mut self.enc_ln_f);
        ln(&mut out, &mut self.dec_ln_f);
        lin(&mut out, &mut self.out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<F> {
        let mut flat = Vec::with_capacity(self.param_count());
        for t in self.tensors() {
            flat.extend_from_slice(t);
        }
        flat
    }

    pub fn from_flat(&mut self, flat: &[F]) -> Result<(), ModelError> {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            if offset + n > flat.len() {
                return Err(ModelError::ShapeMismatch("flat buffer too short".into()));
            }
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        if offset != flat.len() {
            return Err(ModelError::ShapeMismatch("flat buffer too long".into()));
        }
        Ok(())
    }
}

pub type Params = ParamSet<f32>;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub version: u32,
    pub config: ModelConfig,
    pub vocab: VocabManifest,
    pub seed: u64,
    pub epoch: usize,
    pub param_count: usize,
    pub checksum: String,
}

const CKPT_MAGIC: &[u8; 8] = b"LSACKPT1";

pub fn checksum(params: &Params) -> String {
    let mut hasher = Sha256::new();
    for t in params.tensors() {
        for &x in t {
            hasher.update(x.to_le_bytes());
        }
    }
    format!("{:x}", hasher.finalize())
}

pub fn save_checkpoint(path: &Path, params: &Params, seed: u64, epoch: usize) -> Result<CheckpointMeta, ModelError> {
    let meta = CheckpointMeta {
        version: 1,
        config: params.config.clone(),
        vocab: VocabManifest::default(),
        seed,
        epoch,
        param_count: params.param_count(),
        checksum: checksum(params),
    };
    let header = serde_json::to_vec(&meta)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(CKPT_MAGIC)?;
    file.write_all(&(header.len() as u64).to_le_bytes())?;
    file.write_all(&header)?;
    for t in params.tensors() {
        for &x in t {
            file.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(meta)
}

pub fn load_checkpoint(path: &Path) -> Result<(Params, CheckpointMeta), ModelError> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(ModelError::BadCheckpoint("bad magic".into()));
    }
    let mut len = [0u8; 8];
    file.read_exact(&mut len)?;
    let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
    file.read_exact(&mut header)?;
    let meta: CheckpointMeta = serde_json::from_slice(&header)?;
    if meta.version != 1 {
        return Err(ModelError::BadCheckpoint(format!("unsupported version {}", meta.version)));
    }
    let mut params = Params::init(&meta.config, 0)?;
    let mut raw = vec![0u8; meta.param_count * 4];
    file.read_exact(&mut raw)?;
    let flat: Vec<f32> =
        raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    params.from_flat(&flat)?;
    let sum = checksum(&params);
    if sum != meta.checksum {
        return Err(ModelError::BadCheckpoint(format!("checksum mismatch: {sum} vs {}", meta.checksum)));
    }
    Ok((params, meta))
}

/// Sinusoidal positional encoding table, rows are positions.
pub fn positional_encoding<F: Real>(max_len: usize, d: usize) -> Array2<F> {
    let mut pe = Array2::zeros((max_len, d));
    for pos in 0..max_len {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10_000f64.powf(2.0 * i as f64 / d as f64);
            pe[[pos, 2 * i]] = r(angle.sin());
            pe[[pos, 2 * i + 1]] = r(angle.cos());
        }
    }
    pe
}

/// Per-layer, per-head post-softmax attention and residual-stream
/// snapshots captured during a forward pass.
#[derive(Debug, Clone)]
pub struct ActivationTrace<F> {
    /// Per encoder layer: (batch, head, query pos, key pos).
    pub enc_attn: Vec<ndarray::Array4<F>>,
    pub dec_self_attn: Vec<ndarray::Array4<F>>,
    pub dec_cross_attn: Vec<ndarray::Array4<F>>,
    /// Residual stream at encoder layer boundaries: index 0 is the
    /// embedded input, index l+1 the output of layer l. (batch, pos, dim)
    pub enc_residuals: Vec<ndarray::Array3<F>>,
    pub dec_residuals: Vec<ndarray::Array3<F>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::tiny();
        let a = Params::init(&cfg, 7).unwrap();
        let b = Params::init(&cfg, 7).unwrap();
        assert_eq!(checksum(&a), checksum(&b));
        let c = Params::init(&cfg, 8).unwrap();
        assert_ne!(checksum(&a), checksum(&c));
    }

    #[test]
    fn param_count_matches_shape_arithmetic() {
        for cfg in [ModelConfig::tiny(), ModelConfig::base()] {
            let p = Params::init(&cfg, 0).unwrap();
            assert_eq!(p.param_count(), cfg.param_count());
        }
        // Base architecture: 2*29*128 embeddings + layers + head.
        assert_eq!(ModelConfig::base().param_count(), 1_400_221);
    }

    #[test]
    fn flat_roundtrip() {
        let cfg = ModelConfig::tiny();
        let p = Params::init(&cfg, 3).unwrap();
        let flat = p.to_flat();
        let mut q = Params::init(&cfg, 4).unwrap();
        q.from_flat(&flat).unwrap();
        assert_eq!(checksum(&p), checksum(&q));
        assert!(q.from_flat(&flat[1..]).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let cfg = ModelConfig::tiny();
        let p = Params::init(&cfg, 11).unwrap();
        let meta = save_checkpoint(&path, &p, 11, 4).unwrap();
        let (q, meta2) = load_checkpoint(&path).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(p.to_flat(), q.to_flat());
        assert_eq!(meta2.epoch, 4);
    }

    #[test]
    fn invalid_head_split_rejected() {
        let mut cfg = ModelConfig::tiny();
        cfg.n_heads = 3;
        assert!(Params::init(&cfg, 0).is_err());
    }

    #[test]
    fn positional_encoding_in_range() {
        let pe: Array2<f32> = positional_encoding(64, 16);
        assert!(pe.iter().all(|&x| (-1.0..=1.0).contains(&x)));
        assert_eq!(pe[[0, 1]], 1.0); // cos(0)
        assert_eq!(pe[[0, 0]], 0.0); // sin(0)
    }
}

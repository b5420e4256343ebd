use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Graph, Mat, ParamId, ParamSet};
use crate::rng::stage_rng;
use crate::ssl::encoder::{normalize_waveform, Encoder, EncoderConfig};
use crate::textio::{write_atomic, KeyValues};
use crate::units::codebook::Reader;

const MAGIC: &[u8; 4] = b"MFCK";
const VERSION: u32 = 1;

/// Encoder weights plus the frame-level projection head (`proj.*`).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: EncoderConfig,
    pub params: ParamSet,
    pub k: usize,
    pub step: u64,
    pub validation_loss: f64,
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn random(cfg: &EncoderConfig, k: usize, seed: u64) -> Result<Self> {
        let mut rng = stage_rng(seed, "ssl-init");
        let mut params = ParamSet::new();
        Encoder::init(cfg, &mut params, &mut rng)?;
        params.add_xavier("proj.w", cfg.model_dim, k, &mut rng);
        params.add_const("proj.b", 1, k, 0.0);
        Ok(Self { encoder: cfg.clone(), params, k, step: 0, validation_loss: f64::NAN, meta: BTreeMap::new() })
    }

    /// Same encoder, freshly initialized projection head over `k` units.
    pub fn with_new_head(&self, k: usize, seed: u64) -> Self {
        let mut rng = stage_rng(seed, "ssl-head");
        let mut params = ParamSet::new();
        for (name, value) in self.params.iter().filter(|(n, _)| n.starts_with("enc.")) {
            params.add(name, value.clone());
        }
        params.add_xavier("proj.w", self.encoder.model_dim, k, &mut rng);
        params.add_const("proj.b", 1, k, 0.0);
        Self { params, k, step: 0, validation_loss: f64::NAN, ..self.clone() }
    }

    pub fn bind(&self) -> Result<Encoder> {
        Encoder::bind(&self.encoder, &self.params)
    }

    pub fn head_ids(&self) -> Result<(ParamId, ParamId)> {
        let w = self.params.find("proj.w").ok_or_else(|| Error::Config("checkpoint lacks proj.w".into()))?;
        let b = self.params.find("proj.b").ok_or_else(|| Error::Config("checkpoint lacks proj.b".into()))?;
        Ok((w, b))
    }

    /// Hidden states of the requested 1-based block for raw samples.
    pub fn layer_features(&self, samples: &[f32], layer: usize) -> Result<Mat> {
        let block = self.encoder.resolve_layer(layer)?;
        let enc = self.bind()?;
        let mut g = Graph::new(&self.params);
        let out = enc.forward(&mut g, &normalize_waveform(samples), None, None, None)?;
        Ok(g.value(out.layers[block - 1]).clone())
    }

    /// Frame logits over the `k` units for raw samples.
    pub fn frame_logits(&self, samples: &[f32], mask: Option<&[bool]>) -> Result<Mat> {
        let enc = self.bind()?;
        let mut g = Graph::new(&self.params);
        let out = enc.forward(&mut g, &normalize_waveform(samples), mask, None, None)?;
        let (w, b) = self.head_ids()?;
        let logits = g.linear(out.output, w, b);
        let v = g.value(logits).clone();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("non-finite logits".into()));
        }
        Ok(v)
    }

    /// Short digest of the encoder weights, used to compare initializations.
    pub fn encoder_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, value) in self.params.iter().filter(|(n, _)| n.starts_with("enc.")) {
            h.update(name.as_bytes());
            for v in value.iter() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        let put_str = |b: &mut Vec<u8>, s: &str| {
            b.extend_from_slice(&(s.len() as u32).to_le_bytes());
            b.extend_from_slice(s.as_bytes());
        };
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut b, &self.encoder.to_kv_lines());
        b.extend_from_slice(&(self.k as u32).to_le_bytes());
        b.extend_from_slice(&self.step.to_le_bytes());
        b.extend_from_slice(&self.validation_loss.to_le_bytes());
        let meta: String = self.meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        put_str(&mut b, &meta);
        b.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, value) in self.params.iter() {
            put_str(&mut b, name);
            b.extend_from_slice(&(value.nrows() as u32).to_le_bytes());
            b.extend_from_slice(&(value.ncols() as u32).to_le_bytes());
            for v in value.iter() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8], context: &str) -> Result<Self> {
        let mut r = Reader::new(bytes, context);
        if r.take(4)? != MAGIC || r.u32()? != VERSION {
            return Err(Error::parse(context, "not a checkpoint file"));
        }
        let kv = KeyValues::parse(&r.string()?, context)?;
        let encoder = EncoderConfig::from_kv(&kv, &EncoderConfig::default())?;
        let k = r.u32()? as usize;
        let step = r.u64()?;
        let validation_loss = f64::from_bits(r.u64()?);
        let meta_kv = KeyValues::parse(&r.string()?, context)?;
        let meta = meta_kv.keys().map(|k| (k.to_string(), meta_kv.get_str(k).unwrap_or_default().to_string())).collect();
        let n = r.u32()? as usize;
        let mut params = ParamSet::new();
        for _ in 0..n {
            let name = r.string()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let raw = r.take(8 * rows * cols)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let m = Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::parse(context, e.to_string()))?;
            params.add(name, m);
        }
        let ck = Self { encoder, params, k, step, validation_loss, meta };
        ck.bind()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

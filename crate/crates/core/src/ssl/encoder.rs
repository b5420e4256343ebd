//! Convolutional downsampler plus pre-LN self-attention encoder.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Graph, Mat, ParamId, ParamSet, Var};
use crate::rng::StageRng;
use crate::textio::KeyValues;
use crate::units::{DEFAULT_TEACHER_LAYER, HOP};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub conv_channels: Vec<usize>,
    pub conv_strides: Vec<usize>,
    /// Frames of left context seen by every conv layer.
    pub conv_context: usize,
    pub num_blocks: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            conv_channels: vec![32, 64],
            conv_strides: vec![20, 16],
            conv_context: 2,
            num_blocks: 4,
            model_dim: 128,
            num_heads: 4,
            ffn_dim: 256,
            dropout: 0.1,
        }
    }
}

fn parse_list(s: &str, key: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|_| Error::Config(format!("{key}: '{s}' is not a list of integers"))))
        .collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl EncoderConfig {
    pub const KEYS: [&'static str; 8] = [
        "encoder.conv_channels",
        "encoder.conv_strides",
        "encoder.conv_context",
        "encoder.num_blocks",
        "encoder.model_dim",
        "encoder.num_heads",
        "encoder.ffn_dim",
        "encoder.dropout",
    ];

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.conv_channels.is_empty() || self.conv_channels.len() != self.conv_strides.len() {
            return fail("encoder.conv_channels and encoder.conv_strides must be non-empty and equally long".into());
        }
        if self.conv_strides.iter().product::<usize>() != HOP {
            return fail(format!("encoder.conv_strides must multiply to {HOP}"));
        }
        if self.conv_channels.contains(&0) || self.conv_strides.contains(&0) || self.conv_context == 0 {
            return fail("encoder conv sizes must be positive".into());
        }
        if self.model_dim == 0 || self.num_heads == 0 || !self.model_dim.is_multiple_of(self.num_heads) {
            return fail(format!("encoder.model_dim {} must be divisible by encoder.num_heads {}", self.model_dim, self.num_heads));
        }
        if self.num_blocks == 0 || self.ffn_dim == 0 {
            return fail("encoder.num_blocks and encoder.ffn_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("encoder.dropout must lie in [0, 1)".into());
        }
        Ok(())
    }

    /// Reads `encoder.*` keys, falling back to `base` for absent ones.
    pub fn from_kv(kv: &KeyValues, base: &EncoderConfig) -> Result<Self> {
        let list = |key: &str, d: &Vec<usize>| kv.get_str(key).map_or(Ok(d.clone()), |s| parse_list(s, key));
        let cfg = Self {
            conv_channels: list("encoder.conv_channels", &base.conv_channels)?,
            conv_strides: list("encoder.conv_strides", &base.conv_strides)?,
            conv_context: kv.get_or("encoder.conv_context", base.conv_context)?,
            num_blocks: kv.get_or("encoder.num_blocks", base.num_blocks)?,
            model_dim: kv.get_or("encoder.model_dim", base.model_dim)?,
            num_heads: kv.get_or("encoder.num_heads", base.num_heads)?,
            ffn_dim: kv.get_or("encoder.ffn_dim", base.ffn_dim)?,
            dropout: kv.get_or("encoder.dropout", base.dropout)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_lines(&self) -> String {
        format!(
            "encoder.conv_channels={}\nencoder.conv_strides={}\nencoder.conv_context={}\nencoder.num_blocks={}\nencoder.model_dim={}\nencoder.num_heads={}\nencoder.ffn_dim={}\nencoder.dropout={}\n",
            join(&self.conv_channels),
            join(&self.conv_strides),
            self.conv_context,
            self.num_blocks,
            self.model_dim,
            self.num_heads,
            self.ffn_dim,
            self.dropout
        )
    }

    /// Block whose output feeds k-means for a requested 1-based layer. The
    /// default layer falls back to the middle block of shallower encoders.
    pub fn resolve_layer(&self, layer: usize) -> Result<usize> {
        if (1..=self.num_blocks).contains(&layer) {
            Ok(layer)
        } else if layer == DEFAULT_TEACHER_LAYER {
            Ok(self.num_blocks.div_ceil(2))
        } else {
            Err(Error::Config(format!("teacher layer {layer} outside encoder depth {}", self.num_blocks)))
        }
    }
}

struct Block {
    ln1: (ParamId, ParamId),
    q: (ParamId, ParamId),
    k: (ParamId, ParamId),
    v: (ParamId, ParamId),
    o: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
    ff1: (ParamId, ParamId),
    ff2: (ParamId, ParamId),
}

/// Parameter handles of an encoder living in a [`ParamSet`] under `enc.`.
pub struct Encoder {
    pub cfg: EncoderConfig,
    conv: Vec<(ParamId, ParamId)>,
    ln_feat: (ParamId, ParamId),
    proj: (ParamId, ParamId),
    mask_emb: ParamId,
    blocks: Vec<Block>,
    ln_out: (ParamId, ParamId),
}

pub struct EncoderOutput {
    /// Output of every block, before the final normalization.
    pub layers: Vec<Var>,
    pub output: Var,
    pub frames: usize,
}

fn lin(p: &mut ParamSet, name: &str, i: usize, o: usize, rng: &mut StageRng) -> (ParamId, ParamId) {
    (p.add_xavier(format!("{name}.w"), i, o, rng), p.add_const(format!("{name}.b"), 1, o, 0.0))
}

fn ln(p: &mut ParamSet, name: &str, d: usize) -> (ParamId, ParamId) {
    (p.add_const(format!("{name}.g"), 1, d, 1.0), p.add_const(format!("{name}.b"), 1, d, 0.0))
}

fn find(p: &ParamSet, name: &str) -> Result<ParamId> {
    p.find(name).ok_or_else(|| Error::Config(format!("checkpoint lacks parameter {name}")))
}

fn find2(p: &ParamSet, name: &str, a: &str, b: &str) -> Result<(ParamId, ParamId)> {
    Ok((find(p, &format!("{name}.{a}"))?, find(p, &format!("{name}.{b}"))?))
}

pub fn sinusoidal_positions(frames: usize, dim: usize) -> Mat {
    Array2::from_shape_fn((frames, dim), |(t, j)| {
        let rate = 10000f64.powf(-((j / 2 * 2) as f64) / dim as f64);
        if j % 2 == 0 {
            (t as f64 * rate).sin()
        } else {
            (t as f64 * rate).cos()
        }
    })
}

impl Encoder {
    /// Adds freshly initialized encoder parameters to `params`.
    pub fn init(cfg: &EncoderConfig, params: &mut ParamSet, rng: &mut StageRng) -> Result<Self> {
        cfg.validate()?;
        let mut c_in = 1;
        for (i, (&c, &s)) in cfg.conv_channels.iter().zip(&cfg.conv_strides).enumerate() {
            lin(params, &format!("enc.conv{i}"), c_in * s * cfg.conv_context, c, rng);
            c_in = c;
        }
        ln(params, "enc.ln_feat", c_in);
        lin(params, "enc.proj", c_in, cfg.model_dim, rng);
        let emb = Mat::from_shape_simple_fn((1, cfg.model_dim), || rng.random_range(-0.5..0.5));
        params.add("enc.mask_emb", emb);
        let d = cfg.model_dim;
        for b in 0..cfg.num_blocks {
            let n = |s: &str| format!("enc.blk{b}.{s}");
            ln(params, &n("ln1"), d);
            for m in ["q", "k", "v", "o"] {
                lin(params, &n(m), d, d, rng);
            }
            ln(params, &n("ln2"), d);
            lin(params, &n("ff1"), d, cfg.ffn_dim, rng);
            lin(params, &n("ff2"), cfg.ffn_dim, d, rng);
        }
        ln(params, "enc.ln_out", d);
        Self::bind(cfg, params)
    }

    pub fn bind(cfg: &EncoderConfig, p: &ParamSet) -> Result<Self> {
        cfg.validate()?;
        let conv = (0..cfg.conv_channels.len())
            .map(|i| find2(p, &format!("enc.conv{i}"), "w", "b"))
            .collect::<Result<_>>()?;
        let blocks = (0..cfg.num_blocks)
            .map(|b| {
                let n = |s: &str| format!("enc.blk{b}.{s}");
                Ok(Block {
                    ln1: find2(p, &n("ln1"), "g", "b")?,
                    q: find2(p, &n("q"), "w", "b")?,
                    k: find2(p, &n("k"), "w", "b")?,
                    v: find2(p, &n("v"), "w", "b")?,
                    o: find2(p, &n("o"), "w", "b")?,
                    ln2: find2(p, &n("ln2"), "g", "b")?,
                    ff1: find2(p, &n("ff1"), "w", "b")?,
                    ff2: find2(p, &n("ff2"), "w", "b")?,
                })
            })
            .collect::<Result<_>>()?;
        let enc = Self {
            cfg: cfg.clone(),
            conv,
            ln_feat: find2(p, "enc.ln_feat", "g", "b")?,
            proj: find2(p, "enc.proj", "w", "b")?,
            mask_emb: find(p, "enc.mask_emb")?,
            blocks,
            ln_out: find2(p, "enc.ln_out", "g", "b")?,
        };
        if p.get(enc.proj.0).dim() != (*cfg.conv_channels.last().expect("validated"), cfg.model_dim) {
            return Err(Error::Config("checkpoint shapes do not match encoder config".into()));
        }
        Ok(enc)
    }

    pub fn frames_for(&self, samples: usize) -> usize {
        samples / HOP
    }

    fn dropout(&self, g: &mut Graph, x: Var, rng: &mut Option<&mut StageRng>) -> Var {
        let p = self.cfg.dropout;
        match rng {
            Some(r) if p > 0.0 => {
                let dim = g.value(x).dim();
                let keep = 1.0 - p;
                let m = Mat::from_shape_simple_fn(dim, || if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
                g.mul_const(x, m)
            }
            _ => x,
        }
    }

    /// Runs the encoder on `wave`. Frames flagged in `mask` are replaced by
    /// the mask embedding; attention only looks at the first `valid` frames
    /// (all frames when `None`). Dropout is active when `rng` is given.
    pub fn forward(
        &self,
        g: &mut Graph,
        wave: &[f32],
        mask: Option<&[bool]>,
        valid: Option<usize>,
        mut rng: Option<&mut StageRng>,
    ) -> Result<EncoderOutput> {
        let frames = self.frames_for(wave.len());
        if frames == 0 {
            return Err(Error::EmptyFeature { samples: wave.len(), window: HOP });
        }
        let n = frames * HOP;
        let input = Array2::from_shape_fn((n, 1), |(i, _)| f64::from(wave[i]));
        let mut x = g.input(input);
        let mut rows = n;
        let mut width = 1;
        for (i, &(w, b)) in self.conv.iter().enumerate() {
            let s = self.cfg.conv_strides[i];
            rows /= s;
            x = g.reshape(x, rows, width * s);
            x = g.context_stack(x, self.cfg.conv_context);
            x = g.linear(x, w, b);
            x = g.gelu(x);
            width = self.cfg.conv_channels[i];
        }
        debug_assert_eq!(rows, frames);
        x = g.layer_norm_affine(x, self.ln_feat.0, self.ln_feat.1);
        x = g.linear(x, self.proj.0, self.proj.1);
        if let Some(m) = mask {
            if m.len() != frames {
                return Err(Error::Config(format!("mask length {} != frame count {frames}", m.len())));
            }
            if m.iter().any(|&b| b) {
                let emb = g.param(self.mask_emb);
                x = g.replace_rows(x, emb, m);
            }
        }
        x = g.add_const(x, &sinusoidal_positions(frames, self.cfg.model_dim));
        x = self.dropout(g, x, &mut rng);
        let valid = valid.unwrap_or(frames).clamp(1, frames);
        let heads = self.cfg.num_heads;
        let dh = self.cfg.model_dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut layers = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let h = g.layer_norm_affine(x, blk.ln1.0, blk.ln1.1);
            let q = g.linear(h, blk.q.0, blk.q.1);
            let k = g.linear(h, blk.k.0, blk.k.1);
            let v = g.linear(h, blk.v.0, blk.v.1);
            let mut outs = Vec::with_capacity(heads);
            for hd in 0..heads {
                let qh = g.slice_cols(q, hd * dh, dh);
                let kh = g.slice_cols(k, hd * dh, dh);
                let vh = g.slice_cols(v, hd * dh, dh);
                let kt = g.transpose(kh);
                let sc = g.matmul(qh, kt);
                let sc = g.scale(sc, scale);
                let att = g.softmax_rows(sc, valid);
                outs.push(g.matmul(att, vh));
            }
            let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
            let a = g.linear(cat, blk.o.0, blk.o.1);
            let a = self.dropout(g, a, &mut rng);
            x = g.add(x, a);
            let h = g.layer_norm_affine(x, blk.ln2.0, blk.ln2.1);
            let f = g.linear(h, blk.ff1.0, blk.ff1.1);
            let f = g.gelu(f);
            let f = g.linear(f, blk.ff2.0, blk.ff2.1);
            let f = self.dropout(g, f, &mut rng);
            x = g.add(x, f);
            layers.push(x);
        }
        let output = g.layer_norm_affine(x, self.ln_out.0, self.ln_out.1);
        Ok(EncoderOutput { layers, output, frames })
    }
}

/// Zero-mean, unit-variance copy of a waveform (silence stays silent).
pub fn normalize_waveform(samples: &[f32]) -> Vec<f32> {
    let n = samples.len().max(1) as f64;
    let mean = samples.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = samples.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-5);
    samples.iter().map(|&v| ((f64::from(v) - mean) / sd) as f32).collect()
}

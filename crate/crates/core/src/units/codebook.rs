use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::textio::write_atomic;
use crate::units::kmeans::nearest;
use crate::units::{FeatureKind, FrameFeatures, TargetSequence};

const MAGIC: &[u8; 4] = b"MFCB";
const VERSION: u32 = 1;

/// k-means centroids (in standardized feature space) plus the standardization
/// statistics needed to map raw frames into that space.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub centroids: Array2<f32>,
    pub feature_kind: FeatureKind,
    pub seed: u64,
    pub training_inertia: f64,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
    /// Where the codebook came from (`trained:...` or `loaded:<path>`).
    pub provenance: String,
}

impl Codebook {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }

    fn standardize_row(&self, row: ndarray::ArrayView1<f32>) -> Array1<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| (f64::from(v) - f64::from(m)) / f64::from(s))
            .collect()
    }

    /// Nearest centroid under squared Euclidean distance, lowest index on ties.
    pub fn assign(&self, features: &FrameFeatures) -> Result<TargetSequence> {
        if features.data.ncols() != self.dim() {
            return Err(Error::Config(format!(
                "feature dim {} does not match codebook dim {}",
                features.data.ncols(),
                self.dim()
            )));
        }
        if features.kind != self.feature_kind {
            return Err(Error::Config(format!(
                "feature kind {} does not match codebook kind {}",
                features.kind, self.feature_kind
            )));
        }
        let centroids = self.centroids.mapv(f64::from);
        let labels = features
            .data
            .rows()
            .into_iter()
            .map(|r| nearest(self.standardize_row(r).view(), &centroids).0 as u32)
            .collect();
        Ok(TargetSequence {
            segment_id: features.segment_id.clone(),
            labels,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(64 + 4 * (self.centroids.len() + 2 * self.dim()));
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&(self.k() as u32).to_le_bytes());
        b.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        let (kind, layer) = self.feature_kind.code();
        b.extend_from_slice(&kind.to_le_bytes());
        b.extend_from_slice(&layer.to_le_bytes());
        b.extend_from_slice(&self.seed.to_le_bytes());
        b.extend_from_slice(&self.training_inertia.to_le_bytes());
        b.extend_from_slice(&(self.provenance.len() as u32).to_le_bytes());
        b.extend_from_slice(self.provenance.as_bytes());
        for v in self.centroids.iter().chain(&self.mean).chain(&self.std) {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    pub fn from_bytes(bytes: &[u8], context: &str) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, context };
        if r.take(4)? != MAGIC {
            return Err(Error::parse(context, "not a codebook file"));
        }
        if r.u32()? != VERSION {
            return Err(Error::parse(context, "unsupported codebook version"));
        }
        let k = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let kind = FeatureKind::from_code(r.u32()?, r.u32()?).ok_or_else(|| Error::parse(context, "bad feature kind"))?;
        let seed = r.u64()?;
        let training_inertia = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let plen = r.u32()? as usize;
        let provenance = String::from_utf8(r.take(plen)?.to_vec()).map_err(|_| Error::parse(context, "bad provenance"))?;
        let centroids = Array2::from_shape_vec((k, dim), r.f32s(k * dim)?).expect("shape checked");
        let mean = r.f32s(dim)?;
        let std = r.f32s(dim)?;
        if r.pos != bytes.len() {
            return Err(Error::parse(context, "trailing bytes"));
        }
        Ok(Self { centroids, feature_kind: kind, seed, training_inertia, mean, std, provenance })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    /// Load from disk; provenance is rewritten to `loaded:<path>` keeping the original.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cb = Self::from_bytes(&bytes, &path.display().to_string())?;
        cb.provenance = format!("loaded:{}|{}", path.display(), cb.provenance);
        Ok(cb)
    }

    pub fn is_loaded(&self) -> bool {
        self.provenance.starts_with("loaded:")
    }
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
    pub context: &'a str,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], context: &'a str) -> Self {
        Self { bytes, pos: 0, context }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse(self.context, "truncated file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self.take(4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    pub fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::parse(self.context, "invalid utf-8"))
    }
}

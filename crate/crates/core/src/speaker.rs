//! Speaker embeddings on the unit hypersphere: centroids, cosine similarity,
//! and a deterministic statistics-based embedder.

use std::path::Path;

use maskvoice_autodiff::{load_checkpoint, save_checkpoint, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dsp::{MelSpectrogram, LOG_FLOOR};
use crate::error::{invalid, Error, Result};

pub const DEFAULT_EMBEDDING_DIM: usize = 32;
/// Cosine similarity strictly above this counts as the same speaker.
pub const SAME_SPEAKER_THRESHOLD: f64 = 0.70;

const NORM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingLevel {
    Utterance,
    Speaker,
}

/// Unit-norm speaker vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerEmbedding {
    vector: Vec<f64>,
    level: EmbeddingLevel,
}

impl SpeakerEmbedding {
    /// Wraps an already normalized vector.
    pub fn new(vector: Vec<f64>, level: EmbeddingLevel) -> Result<Self> {
        let norm = l2(&vector);
        if vector.is_empty() || (norm - 1.0).abs() > NORM_TOL {
            return Err(invalid(format!("embedding norm {norm} is not 1")));
        }
        Ok(SpeakerEmbedding { vector, level })
    }

    /// Scales `vector` onto the unit sphere.
    pub fn normalized(vector: Vec<f64>, level: EmbeddingLevel) -> Result<Self> {
        let norm = l2(&vector);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Degenerate("cannot normalize a zero vector".into()));
        }
        Ok(SpeakerEmbedding {
            vector: vector.iter().map(|v| v / norm).collect(),
            level,
        })
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn level(&self) -> EmbeddingLevel {
        self.level
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(self.vector.clone())
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `mu = sum(x_i) / |sum(x_i)|`.
pub fn centroid(embeddings: &[SpeakerEmbedding]) -> Result<SpeakerEmbedding> {
    let first = embeddings
        .first()
        .ok_or_else(|| invalid("centroid of an empty list"))?;
    let dim = first.dim();
    let mut sum = vec![0.0; dim];
    for e in embeddings {
        if e.dim() != dim {
            return Err(invalid(format!("embedding dims differ: {} vs {dim}", e.dim())));
        }
        for (s, v) in sum.iter_mut().zip(&e.vector) {
            *s += v;
        }
    }
    // Relative to the largest possible sum norm, which is the list length.
    if l2(&sum) <= 1e-12 * embeddings.len() as f64 {
        return Err(Error::Degenerate("embeddings sum to the zero vector".into()));
    }
    SpeakerEmbedding::normalized(sum, EmbeddingLevel::Speaker)
}

pub fn cosine_similarity(a: &SpeakerEmbedding, b: &SpeakerEmbedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(invalid(format!("embedding dims differ: {} vs {}", a.dim(), b.dim())));
    }
    Ok(a.vector.iter().zip(&b.vector).map(|(x, y)| x * y).sum())
}

pub fn is_same_speaker(cosine: f64) -> bool {
    cosine > SAME_SPEAKER_THRESHOLD
}

/// Stand-in for a speaker-recognition network: per-channel mean and standard
/// deviation of the log-mel, through a fixed seeded Gaussian projection.
#[derive(Clone, Debug)]
pub struct ToyEmbedder {
    n_mels: usize,
    dim: usize,
    /// `dim x 2 n_mels`, row-major.
    projection: Vec<f64>,
}

impl ToyEmbedder {
    pub fn new(n_mels: usize, dim: usize, projection_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(projection_seed);
        let projection = (0..dim * 2 * n_mels)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        ToyEmbedder {
            n_mels,
            dim,
            projection,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Embeds a linear power mel spectrogram.
    pub fn embed(&self, mel: &MelSpectrogram) -> Result<SpeakerEmbedding> {
        if mel.n_mels() != self.n_mels {
            return Err(invalid(format!(
                "embedder expects {} mels, got {}",
                self.n_mels,
                mel.n_mels()
            )));
        }
        self.embed_log_grid(&mel.bins().map(|x| x.max(LOG_FLOOR).ln()))
    }

    /// Embeds a log-mel grid directly.
    pub fn embed_log_grid(&self, log_mel: &crate::grid::Grid) -> Result<SpeakerEmbedding> {
        let (frames, n) = log_mel.shape();
        if n != self.n_mels {
            return Err(invalid(format!("embedder expects {} mels, got {n}", self.n_mels)));
        }
        if frames < 2 {
            return Err(invalid("toy embedding needs at least 2 frames"));
        }
        let mut stats = vec![0.0; 2 * n];
        for c in 0..n {
            let mean = (0..frames).map(|t| log_mel.get(t, c)).sum::<f64>() / frames as f64;
            let var = (0..frames)
                .map(|t| (log_mel.get(t, c) - mean).powi(2))
                .sum::<f64>()
                / frames as f64;
            stats[c] = mean;
            stats[n + c] = var.sqrt();
        }
        let projected = (0..self.dim)
            .map(|d| {
                let row = &self.projection[d * 2 * n..(d + 1) * 2 * n];
                row.iter().zip(&stats).map(|(w, s)| w * s).sum()
            })
            .collect();
        SpeakerEmbedding::normalized(projected, EmbeddingLevel::Utterance)
    }
}

/// Convenience wrapper around [`ToyEmbedder`] with the default dimension.
pub fn toy_embed(mel: &MelSpectrogram, projection_seed: u64) -> Result<SpeakerEmbedding> {
    ToyEmbedder::new(mel.n_mels(), DEFAULT_EMBEDDING_DIM, projection_seed).embed(mel)
}

/// Writes named embeddings as a `CKPT` container (one rank-1 entry each).
pub fn save_embeddings(path: impl AsRef<Path>, named: &[(String, SpeakerEmbedding)]) -> Result<()> {
    let mut store = ParamStore::new();
    for (name, e) in named {
        store.insert(name.clone(), e.to_tensor());
    }
    save_checkpoint(path, &store)?;
    Ok(())
}

/// Reads externally computed embeddings; each entry is renormalized.
pub fn load_embeddings(path: impl AsRef<Path>, level: EmbeddingLevel) -> Result<Vec<(String, SpeakerEmbedding)>> {
    let store = load_checkpoint(path)?;
    store
        .iter()
        .map(|(name, t)| {
            if t.rank() != 1 {
                return Err(invalid(format!("embedding `{name}` is not a vector")));
            }
            Ok((name.clone(), SpeakerEmbedding::normalized(t.data().to_vec(), level)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn unit(v: Vec<f64>) -> SpeakerEmbedding {
        SpeakerEmbedding::normalized(v, EmbeddingLevel::Utterance).unwrap()
    }

    #[test]
    fn centroid_hand_cases() {
        let a = unit(vec![1.0, 0.0]);
        assert_eq!(centroid(&[a.clone()]).unwrap().vector(), a.vector());
        let c = centroid(&[a.clone(), unit(vec![0.0, 1.0])]).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((c.vector()[0] - h).abs() < 1e-15 && (c.vector()[1] - h).abs() < 1e-15);
        assert_eq!(c.level(), EmbeddingLevel::Speaker);
        assert!(matches!(centroid(&[a, unit(vec![-1.0, 0.0])]), Err(Error::Degenerate(_))));
        assert!(centroid(&[]).is_err());
    }

    #[test]
    fn cosine_basics() {
        let a = unit(vec![0.6, 0.8]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&unit(vec![1.0, 0.0]), &unit(vec![0.0, 1.0])).unwrap(), 0.0);
        assert!(cosine_similarity(&a, &unit(vec![1.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn threshold_is_strict() {
        assert!(is_same_speaker(0.71));
        assert!(!is_same_speaker(0.69));
        assert!(!is_same_speaker(0.70));
    }

    #[test]
    fn toy_embed_is_deterministic_unit_norm() {
        let mel = MelSpectrogram::new(Grid::from_fn(5, 4, |t, c| 0.1 + (t * c) as f64), 16000, 128).unwrap();
        let a = toy_embed(&mel, 3).unwrap();
        let b = toy_embed(&mel, 3).unwrap();
        assert_eq!(a, b);
        assert!((l2(a.vector()) - 1.0).abs() < 1e-9);
        assert_eq!(a.dim(), DEFAULT_EMBEDDING_DIM);
        let single = MelSpectrogram::new(Grid::filled(1, 4, 1.0), 16000, 128).unwrap();
        assert!(toy_embed(&single, 3).is_err());
    }
}

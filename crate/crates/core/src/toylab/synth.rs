//! Synthetic paired two-modality data with a head-heavy cluster prior.
//!
//! Each pair draws a cluster `c ~ pi`, a latent `z ~ N(anchor_c, sigma^2 I)`,
//! and observes `A z + noise` in modality A and `B z + noise` in modality B.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::tensor_io::PositivesMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub clusters: usize,
    /// Explicit cluster weights; `None` means Zipf with `zipf_exponent`.
    pub weights: Option<Vec<f64>>,
    pub zipf_exponent: f64,
    pub latent_dim: usize,
    pub dim_a: usize,
    pub dim_b: usize,
    /// Standard deviation of the latent around its cluster anchor.
    pub latent_noise: f64,
    pub obs_noise: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            clusters: 10,
            weights: None,
            zipf_exponent: 1.0,
            latent_dim: 8,
            dim_a: 24,
            dim_b: 16,
            latent_noise: 0.3,
            obs_noise: 0.05,
            n_train: 500,
            n_test: 200,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn cluster_weights(&self) -> Vec<f64> {
        match &self.weights {
            Some(w) => w.clone(),
            None => zipf_weights(self.clusters, self.zipf_exponent),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.latent_dim == 0 || self.dim_a == 0 || self.dim_b == 0 {
            return Err(Error::InvalidArgument(
                "clusters and dimensions must be >= 1".into(),
            ));
        }
        if !(self.latent_noise >= 0.0 && self.obs_noise >= 0.0) {
            return Err(Error::InvalidArgument("noise levels must be >= 0".into()));
        }
        let w = self.cluster_weights();
        if w.len() != self.clusters || w.iter().any(|&x| x.is_nan() || x <= 0.0) {
            return Err(Error::InvalidArgument(
                "need one positive weight per cluster".into(),
            ));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("cluster weights must sum to 1".into()));
        }
        Ok(())
    }
}

/// `pi_c ∝ (c + 1)^-s`, normalized.
pub fn zipf_weights(clusters: usize, exponent: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=clusters).map(|k| (k as f64).powf(-exponent)).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / z).collect()
}

/// Fixed generative parameters shared by all splits.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthWorld {
    pub weights: Vec<f64>,
    /// `C x h` cluster anchors.
    pub anchors: Matrix,
    /// `Da x h` mixing into modality A.
    pub mix_a: Matrix,
    /// `Db x h` mixing into modality B.
    pub mix_b: Matrix,
    pub latent_noise: f64,
    pub obs_noise: f64,
}

/// Row `i` of `xa` is paired with row `i` of `xb`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSet {
    pub xa: Matrix,
    pub xb: Matrix,
    pub labels: Vec<usize>,
}

impl PairedSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positives_a2b(&self) -> PositivesMap {
        PositivesMap::identity("a2b", self.len())
    }

    pub fn positives_b2a(&self) -> PositivesMap {
        PositivesMap::identity("b2a", self.len())
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub world: SynthWorld,
    pub train: PairedSet,
    pub test: PairedSet,
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

impl SynthWorld {
    fn new(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let h = cfg.latent_dim;
        let anchors = normal_matrix(rng, cfg.clusters, h, 1.0);
        let mix_scale = 1.0 / (h as f64).sqrt();
        let mix_a = normal_matrix(rng, cfg.dim_a, h, mix_scale);
        let mix_b = normal_matrix(rng, cfg.dim_b, h, mix_scale);
        SynthWorld {
            weights: cfg.cluster_weights(),
            anchors,
            mix_a,
            mix_b,
            latent_noise: cfg.latent_noise,
            obs_noise: cfg.obs_noise,
        }
    }

    /// Same mixing and noise, fresh anchors drawn from `seed`.
    pub fn with_new_anchors(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchors = normal_matrix(&mut rng, self.anchors.rows(), self.anchors.cols(), 1.0);
        SynthWorld {
            anchors,
            ..self.clone()
        }
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> PairedSet {
        let h = self.anchors.cols();
        let picker = WeightedIndex::new(&self.weights).expect("validated weights");
        let mut xa = Matrix::zeros(n, self.mix_a.rows());
        let mut xb = Matrix::zeros(n, self.mix_b.rows());
        let mut labels = Vec::with_capacity(n);
        let mut z = vec![0.0; h];
        for i in 0..n {
            let c = picker.sample(rng);
            labels.push(c);
            for (k, zk) in z.iter_mut().enumerate() {
                *zk = self.anchors.get(c, k)
                    + self.latent_noise * rng.sample::<f64, _>(StandardNormal);
            }
            for (mix, out) in [(&self.mix_a, &mut xa), (&self.mix_b, &mut xb)] {
                for d in 0..mix.rows() {
                    let v = dot(mix.row(d), &z)
                        + self.obs_noise * rng.sample::<f64, _>(StandardNormal);
                    out.set(i, d, v);
                }
            }
        }
        PairedSet { xa, xb, labels }
    }
}

/// Generate the world, then independent train and test splits. Deterministic per seed.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let world = SynthWorld::new(cfg, &mut rng);
    let train = world.sample(cfg.n_train, &mut rng);
    let test = world.sample(cfg.n_test, &mut rng);
    Ok(SynthData { world, train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_two_clusters_give_two_rows() {
        let cfg = SynthConfig {
            clusters: 2,
            latent_noise: 0.0,
            obs_noise: 0.0,
            n_train: 50,
            n_test: 10,
            ..Default::default()
        };
        let data = gen_synthetic(&cfg).unwrap();
        for m in [&data.train.xa, &data.train.xb] {
            let mut rows: Vec<Vec<u64>> = m
                .row_iter()
                .map(|r| r.iter().map(|v| v.to_bits()).collect())
                .collect();
            rows.sort();
            rows.dedup();
            assert_eq!(rows.len(), 2);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig {
            seed: 42,
            ..Default::default()
        };
        let a = gen_synthetic(&cfg).unwrap();
        let b = gen_synthetic(&cfg).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        let c = gen_synthetic(&SynthConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn zipf_head_beats_tail() {
        let mut ok = 0;
        for seed in 0..100 {
            let cfg = SynthConfig {
                n_train: 1000,
                n_test: 1,
                seed,
                ..Default::default()
            };
            let data = gen_synthetic(&cfg).unwrap();
            let head = data.train.labels.iter().filter(|&&c| c == 0).count();
            let tail = data.train.labels.iter().filter(|&&c| c == 9).count();
            if head > tail {
                ok += 1;
            }
        }
        assert!(ok >= 95, "{ok}/100");
    }

    #[test]
    fn zipf_normalized() {
        let w = zipf_weights(10, 1.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.windows(2).all(|p| p[0] > p[1]));
    }

    #[test]
    fn config_validation() {
        let bad = SynthConfig {
            weights: Some(vec![0.5, 0.6]),
            clusters: 2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SynthConfig {
            latent_noise: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}

//! Mini-batch SGD on the bidirectional in-batch hinge loss, and Monte-Carlo
//! embedding extraction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::similarity::{norm, SimilarityKind};
use crate::tensor_io::EmbeddingTensor;
use crate::toylab::encoder::{Encoder, EncoderGrad, EncoderPair, ForwardCache, Masks};
use crate::toylab::loss::{hinge_kink_distance, hinge_loss, HingeVariant};
use crate::toylab::synth::PairedSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: HingeVariant,
    pub margin: f64,
    pub kind: SimilarityKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: HingeVariant::MaxHinge,
            margin: 0.2,
            kind: SimilarityKind::Cosine,
            learning_rate: 0.1,
            batch_size: 32,
            epochs: 40,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin.is_nan() || self.margin <= 0.0 {
            return Err(Error::InvalidArgument("margin must be > 0".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be >= 0".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch size must be >= 2".into()));
        }
        Ok(())
    }
}

/// `d s(a, b) / d a` and `d s(a, b) / d b`.
fn similarity_grads(kind: SimilarityKind, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    match kind {
        SimilarityKind::Dot => (b.to_vec(), a.to_vec()),
        SimilarityKind::NegL2 => {
            let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            let r = norm(&diff);
            if r == 0.0 {
                return (vec![0.0; a.len()], vec![0.0; a.len()]);
            }
            let ga: Vec<f64> = diff.iter().map(|d| -d / r).collect();
            let gb: Vec<f64> = ga.iter().map(|g| -g).collect();
            (ga, gb)
        }
        SimilarityKind::Cosine => {
            let (na, nb) = (norm(a), norm(b));
            let c = dot(a, b) / (na * nb);
            let ga = a
                .iter()
                .zip(b)
                .map(|(x, y)| y / (na * nb) - c * x / (na * na))
                .collect();
            let gb = a
                .iter()
                .zip(b)
                .map(|(x, y)| x / (na * nb) - c * y / (nb * nb))
                .collect();
            (ga, gb)
        }
    }
}

/// Forward passes of one mini-batch with fixed masks, kept for backprop.
pub struct BatchPass {
    pub caches_a: Vec<ForwardCache>,
    pub caches_b: Vec<ForwardCache>,
    pub sim: Matrix,
}

pub fn forward_batch(
    pair: &EncoderPair,
    xa: &[&[f64]],
    xb: &[&[f64]],
    masks_a: Option<&[Masks]>,
    masks_b: Option<&[Masks]>,
    kind: SimilarityKind,
) -> BatchPass {
    let caches_a: Vec<ForwardCache> = xa
        .iter()
        .enumerate()
        .map(|(i, x)| pair.a.forward_cached(x, masks_a.map(|m| &m[i])))
        .collect();
    let caches_b: Vec<ForwardCache> = xb
        .iter()
        .enumerate()
        .map(|(i, x)| pair.b.forward_cached(x, masks_b.map(|m| &m[i])))
        .collect();
    let n = caches_a.len();
    let mut sim = Matrix::zeros(n, caches_b.len());
    for (i, ca) in caches_a.iter().enumerate() {
        for (j, cb) in caches_b.iter().enumerate() {
            sim.set(i, j, kind.eval(&ca.y, &cb.y));
        }
    }
    BatchPass {
        caches_a,
        caches_b,
        sim,
    }
}

/// Summed bidirectional hinge loss of one batch and its gradient with respect
/// to both encoders' parameters.
#[allow(clippy::too_many_arguments, clippy::needless_range_loop)]
pub fn batch_loss_and_grad(
    pair: &EncoderPair,
    xa: &[&[f64]],
    xb: &[&[f64]],
    masks_a: Option<&[Masks]>,
    masks_b: Option<&[Masks]>,
    kind: SimilarityKind,
    margin: f64,
    variant: HingeVariant,
) -> (f64, EncoderGrad, EncoderGrad) {
    let pass = forward_batch(pair, xa, xb, masks_a, masks_b, kind);
    let lg = hinge_loss(&pass.sim, margin, variant);
    let b = xa.len();
    let dim = pair.a.output_dim();
    let mut dya = vec![vec![0.0; dim]; b];
    let mut dyb = vec![vec![0.0; dim]; b];
    for i in 0..b {
        for j in 0..b {
            let g = lg.grad.get(i, j);
            if g == 0.0 {
                continue;
            }
            let (ga, gb) = similarity_grads(kind, &pass.caches_a[i].y, &pass.caches_b[j].y);
            dya[i].iter_mut().zip(&ga).for_each(|(d, v)| *d += g * v);
            dyb[j].iter_mut().zip(&gb).for_each(|(d, v)| *d += g * v);
        }
    }
    let mut grad_a = pair.a.zero_grad();
    let mut grad_b = pair.b.zero_grad();
    for i in 0..b {
        pair.a.backward(&pass.caches_a[i], masks_a.map(|m| &m[i]), &dya[i], &mut grad_a);
        pair.b.backward(&pass.caches_b[i], masks_b.map(|m| &m[i]), &dyb[i], &mut grad_b);
    }
    (lg.loss, grad_a, grad_b)
}

/// Distance of a batch from every non-differentiable point of the loss:
/// hinge kinks, hardest-negative switches and relu kinks.
#[allow(clippy::too_many_arguments)]
pub fn batch_kink_distance(
    pair: &EncoderPair,
    xa: &[&[f64]],
    xb: &[&[f64]],
    masks_a: Option<&[Masks]>,
    masks_b: Option<&[Masks]>,
    kind: SimilarityKind,
    margin: f64,
    variant: HingeVariant,
) -> f64 {
    let pass = forward_batch(pair, xa, xb, masks_a, masks_b, kind);
    let relu = pass
        .caches_a
        .iter()
        .map(|c| pair.a.relu_margin(c))
        .chain(pass.caches_b.iter().map(|c| pair.b.relu_margin(c)))
        .fold(f64::INFINITY, f64::min);
    hinge_kink_distance(&pass.sim, margin, variant).min(relu)
}

/// Per-epoch mean loss per query; entry 0 is measured before any update.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
}

impl TrainLog {
    pub fn initial(&self) -> f64 {
        self.epoch_loss[0]
    }

    pub fn last(&self) -> f64 {
        *self.epoch_loss.last().unwrap()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for (e, l) in self.epoch_loss.iter().enumerate() {
            s.push_str(&format!("{e},{l}\n"));
        }
        s
    }
}

fn batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

fn run_epoch(
    pair: &mut EncoderPair,
    data: &PairedSet,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    update: bool,
) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for batch in batches(data.len(), cfg.batch_size, rng) {
        let xa: Vec<&[f64]> = batch.iter().map(|&i| data.xa.row(i)).collect();
        let xb: Vec<&[f64]> = batch.iter().map(|&i| data.xb.row(i)).collect();
        let ma: Vec<Masks> = batch.iter().map(|_| pair.a.sample_masks(rng)).collect();
        let mb: Vec<Masks> = batch.iter().map(|_| pair.b.sample_masks(rng)).collect();
        let (loss, mut ga, mut gb) = batch_loss_and_grad(
            pair,
            &xa,
            &xb,
            Some(&ma),
            Some(&mb),
            cfg.kind,
            cfg.margin,
            cfg.variant,
        );
        total += loss;
        count += batch.len();
        if update {
            let scale = 1.0 / batch.len() as f64;
            ga.scale(scale);
            gb.scale(scale);
            pair.a.apply(&ga, cfg.learning_rate);
            pair.b.apply(&gb, cfg.learning_rate);
        }
    }
    total / count.max(1) as f64
}

/// Train both encoders from `params0`. Deterministic per `cfg.seed`.
///
/// Gradients are averaged over the batch; the loss log reports the summed
/// bidirectional loss divided by the number of pairs.
pub fn train(data: &PairedSet, params0: &EncoderPair, cfg: &TrainConfig) -> Result<(EncoderPair, TrainLog)> {
    cfg.validate()?;
    params0.a.validate()?;
    params0.b.validate()?;
    if data.xa.cols() != params0.a.input_dim() || data.xb.cols() != params0.b.input_dim() {
        return Err(Error::DimMismatch("data and encoder input dims differ".into()));
    }
    if data.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 training pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pair = params0.clone();
    let mut log = Vec::with_capacity(cfg.epochs + 1);
    let initial = run_epoch(&mut pair, data, cfg, &mut rng, false);
    log.push(initial);
    for epoch in 1..=cfg.epochs {
        let loss = run_epoch(&mut pair, data, cfg, &mut rng, true);
        if !loss.is_finite() || pair.a.flat().iter().chain(&pair.b.flat()).any(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch, loss });
        }
        log.push(loss);
    }
    Ok((pair, TrainLog { epoch_loss: log }))
}

/// `L` stochastic passes over every row of `x`. Slice `l` draws its masks from
/// ChaCha stream `l` of `seed`, so each slice is independent of `L`.
pub fn mc_embed(encoder: &Encoder, x: &Matrix, models: usize, seed: u64) -> Result<EmbeddingTensor> {
    if models == 0 {
        return Err(Error::InvalidArgument("need at least one model".into()));
    }
    let d = encoder.output_dim();
    let mut values = Vec::with_capacity(models * x.rows() * d);
    for l in 0..models {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(l as u64);
        for row in x.row_iter() {
            values.extend(encoder.forward_stochastic(row, &mut rng).into_iter().map(|v| v as f32));
        }
    }
    EmbeddingTensor::new(models, x.rows(), d, values)
}

/// Deterministic (weight-averaged) embeddings as a single-model stack.
pub fn deterministic_embed(encoder: &Encoder, x: &Matrix) -> Result<EmbeddingTensor> {
    EmbeddingTensor::from_slices(&[encoder.embed(x)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::feature_average;
    use crate::toylab::synth::{gen_synthetic, SynthConfig};

    fn setup(keep: f64) -> (PairedSet, EncoderPair) {
        let data = gen_synthetic(&SynthConfig {
            n_train: 64,
            n_test: 16,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Encoder::init(&mut rng, 24, 16, 8, keep, keep, true).unwrap();
        let b = Encoder::init(&mut rng, 16, 16, 8, keep, keep, true).unwrap();
        (data.train, EncoderPair { a, b })
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let (data, p0) = setup(0.8);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            ..Default::default()
        };
        let (p, _) = train(&data, &p0, &cfg).unwrap();
        assert_eq!(p, p0);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let (data, p0) = setup(0.8);
        let cfg = TrainConfig {
            epochs: 3,
            seed: 11,
            ..Default::default()
        };
        let (p1, l1) = train(&data, &p0, &cfg).unwrap();
        let (p2, l2) = train(&data, &p0, &cfg).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(l1, l2);
        assert_eq!(l1.epoch_loss.len(), 4);
    }

    #[test]
    fn rejects_bad_config() {
        let (data, p0) = setup(0.8);
        let cfg = TrainConfig {
            batch_size: 1,
            ..Default::default()
        };
        assert!(train(&data, &p0, &cfg).is_err());
        let cfg = TrainConfig {
            margin: 0.0,
            ..Default::default()
        };
        assert!(train(&data, &p0, &cfg).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let (data, p0) = setup(0.8);
        let cfg = TrainConfig {
            kind: SimilarityKind::Dot,
            epochs: 3,
            ..Default::default()
        };
        let mut p0 = p0;
        for enc in [&mut p0.a, &mut p0.b] {
            enc.normalize = false;
            let big: Vec<f64> = enc.flat().iter().map(|v| v * 1e200).collect();
            enc.set_flat(&big);
        }
        let err = train(&data, &p0, &cfg).unwrap_err();
        assert!(err.is_numerical(), "{err}");
    }

    #[test]
    fn mc_embed_slices() {
        let (data, pair) = setup(1.0);
        let t = mc_embed(&pair.a, &data.xa, 3, 5).unwrap();
        assert_eq!(t.slice(0), t.slice(2));

        let (data, pair) = setup(0.5);
        let t = mc_embed(&pair.a, &data.xa, 2, 5).unwrap();
        assert_ne!(t.slice(0), t.slice(1));
        // slice l does not depend on L
        let t4 = mc_embed(&pair.a, &data.xa, 4, 5).unwrap();
        assert_eq!(t4.slice(1), t.slice(1));
        assert_eq!(mc_embed(&pair.a, &data.xa, 2, 5).unwrap(), t);
    }

    #[test]
    fn mc_feature_average_matches_deterministic_for_linear_encoder() {
        let (data, mut pair) = setup(0.7);
        pair.a.linear = true;
        pair.a.normalize = false;
        let x = data.xa.select_rows(&[0, 1]);
        let l = 10_000;
        let t = mc_embed(&pair.a, &x, l, 21).unwrap();
        let mean = feature_average(&t);
        let det = pair.a.embed(&x);
        for n in 0..2 {
            for k in 0..pair.a.output_dim() {
                let var = (0..l).map(|li| (t.value(li, n, k) - mean.get(n, k)).powi(2)).sum::<f64>()
                    / l as f64;
                let se = (var / l as f64).sqrt();
                // f32 storage adds ~1e-7 relative error on top of sampling noise.
                assert!(
                    (mean.get(n, k) - det.get(n, k)).abs() < 3.0 * se + 1e-5,
                    "({n},{k}): {} vs {}",
                    mean.get(n, k),
                    det.get(n, k)
                );
            }
        }
    }
}

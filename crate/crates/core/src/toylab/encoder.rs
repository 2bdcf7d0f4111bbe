//! One-hidden-layer dropout MLP encoder with hand-written backprop.
//!
//! `x -> input dropout -> W1 x + b1 -> relu -> hidden dropout -> W2 h + b2 -> [l2 normalize]`
//!
//! Dropout is inverted: kept units are divided by the keep probability, so the
//! deterministic pass equals the mask expectation for the linear parts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::similarity::norm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    /// `hidden x input`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `output x hidden`
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub keep_input: f64,
    pub keep_hidden: f64,
    /// Project outputs onto the unit sphere.
    pub normalize: bool,
    /// Use identity instead of relu. Only for checking dropout expectations.
    #[serde(default)]
    pub linear: bool,
}

/// Scaled dropout masks for one sample: each entry is `0` or `1 / keep`.
#[derive(Debug, Clone, PartialEq)]
pub struct Masks {
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x_drop: Vec<f64>,
    pre: Vec<f64>,
    h_drop: Vec<f64>,
    out_norm: f64,
    pub y: Vec<f64>,
}

/// Gradient with the same layout as [`Encoder`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrad {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

fn draw_mask<R: Rng>(rng: &mut R, len: usize, keep: f64) -> Vec<f64> {
    if keep >= 1.0 {
        return vec![1.0; len];
    }
    let scale = 1.0 / keep;
    (0..len)
        .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
        .collect()
}

impl Encoder {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng>(
        rng: &mut R,
        input: usize,
        hidden: usize,
        output: usize,
        keep_input: f64,
        keep_hidden: f64,
        normalize: bool,
    ) -> Result<Self> {
        let glorot = |rng: &mut R, fan_out: usize, fan_in: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_out * fan_in).map(|_| rng.gen_range(-a..=a)).collect();
            Matrix::from_vec(fan_out, fan_in, data).expect("shape")
        };
        let enc = Encoder {
            w1: glorot(rng, hidden, input),
            b1: vec![0.0; hidden],
            w2: glorot(rng, output, hidden),
            b2: vec![0.0; output],
            keep_input,
            keep_hidden,
            normalize,
            linear: false,
        };
        enc.validate()?;
        Ok(enc)
    }

    pub fn validate(&self) -> Result<()> {
        for k in [self.keep_input, self.keep_hidden] {
            if !(k > 0.0 && k <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "keep probability must lie in (0, 1], got {k}"
                )));
            }
        }
        if self.b1.len() != self.w1.rows()
            || self.w2.cols() != self.w1.rows()
            || self.b2.len() != self.w2.rows()
        {
            return Err(Error::Shape("encoder layer shapes disagree".into()));
        }
        if self.flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite encoder parameter".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn sample_masks<R: Rng>(&self, rng: &mut R) -> Masks {
        Masks {
            input: draw_mask(rng, self.input_dim(), self.keep_input),
            hidden: draw_mask(rng, self.hidden_dim(), self.keep_hidden),
        }
    }

    /// `None` masks is the deterministic (weight-averaged) pass.
    pub fn forward_cached(&self, x: &[f64], masks: Option<&Masks>) -> ForwardCache {
        let x_drop: Vec<f64> = match masks {
            Some(m) => x.iter().zip(&m.input).map(|(a, b)| a * b).collect(),
            None => x.to_vec(),
        };
        let pre: Vec<f64> = (0..self.hidden_dim())
            .map(|j| dot(self.w1.row(j), &x_drop) + self.b1[j])
            .collect();
        let act = pre.iter().map(|&v| if self.linear { v } else { v.max(0.0) });
        let h_drop: Vec<f64> = match masks {
            Some(m) => act.zip(&m.hidden).map(|(a, b)| a * b).collect(),
            None => act.collect(),
        };
        let out: Vec<f64> = (0..self.output_dim())
            .map(|k| dot(self.w2.row(k), &h_drop) + self.b2[k])
            .collect();
        let out_norm = norm(&out);
        let y = if self.normalize && out_norm > 0.0 {
            out.iter().map(|v| v / out_norm).collect()
        } else {
            out
        };
        ForwardCache {
            x_drop,
            pre,
            h_drop,
            out_norm,
            y,
        }
    }

    pub fn forward_deterministic(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x, None).y
    }

    pub fn forward_stochastic<R: Rng>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        let masks = self.sample_masks(rng);
        self.forward_cached(x, Some(&masks)).y
    }

    /// Embed every row of `x` deterministically.
    pub fn embed(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), self.output_dim());
        for (i, row) in x.row_iter().enumerate() {
            out.row_mut(i)
                .copy_from_slice(&self.forward_deterministic(row));
        }
        out
    }

    pub fn zero_grad(&self) -> EncoderGrad {
        EncoderGrad {
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: vec![0.0; self.b1.len()],
            w2: Matrix::zeros(self.w2.rows(), self.w2.cols()),
            b2: vec![0.0; self.b2.len()],
        }
    }

    /// Accumulate into `grad` the parameter gradient given `dy = dLoss/dy`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        masks: Option<&Masks>,
        dy: &[f64],
        grad: &mut EncoderGrad,
    ) {
        let dout: Vec<f64> = if self.normalize && cache.out_norm > 0.0 {
            let proj = dot(&cache.y, dy);
            dy.iter()
                .zip(&cache.y)
                .map(|(g, y)| (g - y * proj) / cache.out_norm)
                .collect()
        } else {
            dy.to_vec()
        };
        let mut dh = vec![0.0; self.hidden_dim()];
        for (k, &g) in dout.iter().enumerate() {
            grad.b2[k] += g;
            let w_row = self.w2.row(k);
            for (j, gw) in grad.w2.row_mut(k).iter_mut().enumerate() {
                *gw += g * cache.h_drop[j];
                dh[j] += g * w_row[j];
            }
        }
        for (j, d) in dh.iter_mut().enumerate() {
            if let Some(m) = masks {
                *d *= m.hidden[j];
            }
            if !self.linear && cache.pre[j] <= 0.0 {
                *d = 0.0;
            }
        }
        for (j, &g) in dh.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.b1[j] += g;
            for (gw, x) in grad.w1.row_mut(j).iter_mut().zip(&cache.x_drop) {
                *gw += g * x;
            }
        }
    }

    /// Distance of the nearest relu pre-activation to its kink.
    pub fn relu_margin(&self, cache: &ForwardCache) -> f64 {
        if self.linear {
            return f64::INFINITY;
        }
        cache
            .pre
            .iter()
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// All parameters in a fixed order: w1, b1, w2, b2.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(self.w1.as_slice());
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(self.w2.as_slice());
        v.extend_from_slice(&self.b2);
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        let mut rest = v;
        for dst in [
            self.w1.as_mut_slice(),
            &mut self.b1[..],
            self.w2.as_mut_slice(),
            &mut self.b2[..],
        ] {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
    }

    pub fn num_params(&self) -> usize {
        self.w1.as_slice().len() + self.b1.len() + self.w2.as_slice().len() + self.b2.len()
    }

    /// `self -= lr * grad`
    pub fn apply(&mut self, grad: &EncoderGrad, lr: f64) {
        let step = |p: &mut [f64], g: &[f64]| p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
        step(self.w1.as_mut_slice(), grad.w1.as_slice());
        step(&mut self.b1, &grad.b1);
        step(self.w2.as_mut_slice(), grad.w2.as_slice());
        step(&mut self.b2, &grad.b2);
    }
}

impl EncoderGrad {
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(self.w1.as_slice());
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(self.w2.as_slice());
        v.extend_from_slice(&self.b2);
        v
    }

    pub fn scale(&mut self, s: f64) {
        for p in [
            self.w1.as_mut_slice(),
            &mut self.b1[..],
            self.w2.as_mut_slice(),
            &mut self.b2[..],
        ] {
            p.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Encoders for both modalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderPair {
    pub a: Encoder,
    pub b: Encoder,
}

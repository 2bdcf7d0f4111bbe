//! In-batch hinge rank losses over a `B x B` similarity matrix whose diagonal
//! holds the positive pairs. Both retrieval directions are summed: rows as
//! queries and columns as queries.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HingeVariant {
    /// Only the hardest in-batch negative counts.
    MaxHinge,
    /// Average over all in-batch negatives.
    MeanHinge,
}

impl fmt::Display for HingeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HingeVariant::MaxHinge => "max-hinge",
            HingeVariant::MeanHinge => "mean-hinge",
        })
    }
}

impl FromStr for HingeVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max-hinge" | "max" | "vse++" => Ok(HingeVariant::MaxHinge),
            "mean-hinge" | "mean" | "vse0" => Ok(HingeVariant::MeanHinge),
            other => Err(Error::InvalidArgument(format!("unknown loss {other:?}"))),
        }
    }
}

/// Loss value and subgradient with respect to the similarity matrix.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Matrix,
}

fn check(sim: &Matrix, margin: f64) -> usize {
    assert_eq!(sim.rows(), sim.cols(), "in-batch similarity must be square");
    assert!(margin > 0.0, "margin must be positive");
    sim.rows()
}

/// Every query in both directions; `true` reads the matrix column-wise.
fn directions(b: usize) -> impl Iterator<Item = (usize, bool)> {
    (0..b).map(|q| (q, false)).chain((0..b).map(|q| (q, true)))
}

#[inline]
fn at(sim: &Matrix, q: usize, n: usize, transposed: bool) -> f64 {
    if transposed {
        sim.get(n, q)
    } else {
        sim.get(q, n)
    }
}

#[inline]
fn add(grad: &mut Matrix, q: usize, n: usize, transposed: bool, v: f64) {
    let (r, c) = if transposed { (n, q) } else { (q, n) };
    grad.set(r, c, grad.get(r, c) + v);
}

/// Sum over queries of `max_n |s(q,n) - s(q,q) + m|_+`. Ties in the hardest
/// negative go to the lowest index; the kink has zero subgradient.
pub fn hinge_loss_max(sim: &Matrix, margin: f64) -> LossGrad {
    let b = check(sim, margin);
    let mut grad = Matrix::zeros(b, b);
    if sim.as_slice().iter().any(|v| !v.is_finite()) {
        return LossGrad { loss: f64::NAN, grad };
    }
    let mut loss = 0.0;
    for (q, tr) in directions(b) {
        let pos = sim.get(q, q);
        let mut best: Option<(usize, f64)> = None;
        for n in (0..b).filter(|&n| n != q) {
            let v = at(sim, q, n, tr) - pos + margin;
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((n, v));
            }
        }
        if let Some((n, v)) = best {
            if v > 0.0 {
                loss += v;
                add(&mut grad, q, n, tr, 1.0);
                add(&mut grad, q, q, tr, -1.0);
            }
        }
    }
    LossGrad { loss, grad }
}

/// Sum over queries of the mean over negatives of `|s(q,n) - s(q,q) + m|_+`.
pub fn hinge_loss_mean(sim: &Matrix, margin: f64) -> LossGrad {
    let b = check(sim, margin);
    let mut grad = Matrix::zeros(b, b);
    if sim.as_slice().iter().any(|v| !v.is_finite()) {
        return LossGrad { loss: f64::NAN, grad };
    }
    let mut loss = 0.0;
    if b < 2 {
        return LossGrad { loss, grad };
    }
    let w = 1.0 / (b - 1) as f64;
    for (q, tr) in directions(b) {
        let pos = sim.get(q, q);
        for n in (0..b).filter(|&n| n != q) {
            let v = at(sim, q, n, tr) - pos + margin;
            if v > 0.0 {
                loss += w * v;
                add(&mut grad, q, n, tr, w);
                add(&mut grad, q, q, tr, -w);
            }
        }
    }
    LossGrad { loss, grad }
}

pub fn hinge_loss(sim: &Matrix, margin: f64, variant: HingeVariant) -> LossGrad {
    match variant {
        HingeVariant::MaxHinge => hinge_loss_max(sim, margin),
        HingeVariant::MeanHinge => hinge_loss_mean(sim, margin),
    }
}

/// Smallest distance of any hinge argument to its kink at zero, and for the
/// max variant of any hardest negative to the runner-up.
pub fn hinge_kink_distance(sim: &Matrix, margin: f64, variant: HingeVariant) -> f64 {
    let b = check(sim, margin);
    let mut dist = f64::INFINITY;
    for (q, tr) in directions(b) {
        let pos = sim.get(q, q);
        let mut vals: Vec<f64> = (0..b)
            .filter(|&n| n != q)
            .map(|n| at(sim, q, n, tr) - pos + margin)
            .collect();
        match variant {
            HingeVariant::MeanHinge => {
                for v in &vals {
                    dist = dist.min(v.abs());
                }
            }
            HingeVariant::MaxHinge => {
                vals.sort_by(|a, b| b.total_cmp(a));
                if let Some(&top) = vals.first() {
                    dist = dist.min(top.abs());
                    if top > 0.0 {
                        if let Some(&second) = vals.get(1) {
                            dist = dist.min(top - second);
                        }
                    }
                }
            }
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Query 0 has positive 0.9 and negatives {0.5, 0.85}. The other rows are
    // set so that every other hinge (including the column direction) is inactive;
    // entry (0, 2) is also a negative of column 2, hence the large s(2, 2).
    fn example() -> Matrix {
        Matrix::from_rows(&[
            vec![0.9, 0.5, 0.85],
            vec![-1.0, 0.9, -1.0],
            vec![-1.0, -1.0, 1.5],
        ])
        .unwrap()
    }

    #[test]
    fn max_hinge_hand_example() {
        let lg = hinge_loss_max(&example(), 0.2);
        assert_abs_diff_eq!(lg.loss, 0.15, epsilon = 1e-12);
        assert_eq!(lg.grad.get(0, 2), 1.0);
        assert_eq!(lg.grad.get(0, 0), -1.0);
    }

    #[test]
    fn mean_hinge_hand_example() {
        let lg = hinge_loss_mean(&example(), 0.2);
        assert_abs_diff_eq!(lg.loss, 0.075, epsilon = 1e-12);
    }

    #[test]
    fn inactive_hinges_are_zero() {
        let s = Matrix::from_rows(&[vec![1.0, 0.1], vec![0.2, 1.0]]).unwrap();
        assert_eq!(hinge_loss_max(&s, 0.2).loss, 0.0);
        assert_eq!(hinge_loss_mean(&s, 0.2).loss, 0.0);
    }

    #[test]
    fn batch_of_two_variants_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let s = Matrix::from_vec(2, 2, (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap();
            let a = hinge_loss_max(&s, 0.2);
            let b = hinge_loss_mean(&s, 0.2);
            assert_abs_diff_eq!(a.loss, b.loss, epsilon = 1e-15);
            assert_eq!(a.grad, b.grad);
        }
    }

    fn fd_check(variant: HingeVariant) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let m = 0.2;
        let mut checked = 0;
        while checked < 40 {
            let s = Matrix::from_vec(4, 4, (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap();
            if hinge_kink_distance(&s, m, variant) < 1e-3 {
                continue;
            }
            checked += 1;
            let g = hinge_loss(&s, m, variant).grad;
            let h = 1e-6;
            for i in 0..16 {
                let mut p = s.clone();
                p.as_mut_slice()[i] += h;
                let mut n = s.clone();
                n.as_mut_slice()[i] -= h;
                let fd = (hinge_loss(&p, m, variant).loss - hinge_loss(&n, m, variant).loss) / (2.0 * h);
                let a = g.as_slice()[i];
                assert!(
                    (a - fd).abs() <= 1e-6 * a.abs().max(fd.abs()).max(1.0),
                    "{variant} entry {i}: {a} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn max_hinge_matches_finite_differences() {
        fd_check(HingeVariant::MaxHinge);
    }

    #[test]
    fn mean_hinge_matches_finite_differences() {
        fd_check(HingeVariant::MeanHinge);
    }

    #[test]
    fn max_hinge_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let b = rng.gen_range(2..7);
            let s = Matrix::from_vec(b, b, (0..b * b).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap();
            let lg = hinge_loss_max(&s, 0.2);
            assert!(lg.loss >= 0.0);
            let violated = (0..b).any(|q| {
                (0..b).filter(|&n| n != q).any(|n| {
                    s.get(q, n) - s.get(q, q) + 0.2 > 0.0 || s.get(n, q) - s.get(q, q) + 0.2 > 0.0
                })
            });
            assert_eq!(lg.loss > 0.0, violated);
        }
    }
}

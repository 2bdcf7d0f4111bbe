use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

/// Similarity function between two embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    Cosine,
    /// Inner product.
    Dot,
    /// Negative Euclidean distance.
    NegL2,
}

impl SimilarityKind {
    pub const ALL: [SimilarityKind; 3] = [Self::Cosine, Self::Dot, Self::NegL2];

    pub fn name(self) -> &'static str {
        match self {
            SimilarityKind::Cosine => "cosine",
            SimilarityKind::Dot => "dot",
            SimilarityKind::NegL2 => "negl2",
        }
    }

    /// Scalar similarity of two equal-length vectors.
    ///
    /// For cosine both vectors must have non-zero norm; zero norms yield NaN here
    /// and are rejected by [`similarity_matrix`].
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            SimilarityKind::Dot => dot(a, b),
            SimilarityKind::NegL2 => {
                -a.iter()
                    .zip(b)
                    .fold(0.0, |acc, (x, y)| acc + (x - y) * (x - y))
                    .sqrt()
            }
            SimilarityKind::Cosine => {
                let c = dot(a, b) / (norm(a) * norm(b));
                c.clamp(-1.0, 1.0)
            }
        }
    }
}

impl fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SimilarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" | "cos" => Ok(SimilarityKind::Cosine),
            "dot" | "inner" | "inner-product" => Ok(SimilarityKind::Dot),
            "negl2" | "negative-euclidean" | "euclidean" => Ok(SimilarityKind::NegL2),
            other => Err(Error::InvalidArgument(format!(
                "unknown similarity {other:?} (expected cosine, dot or negl2)"
            ))),
        }
    }
}

#[inline]
pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `Nq x Nt` matrix of `s(query_i, target_j)`.
#[allow(clippy::needless_range_loop)]
pub fn similarity_matrix(queries: &Matrix, targets: &Matrix, kind: SimilarityKind) -> Result<Matrix> {
    if queries.cols() != targets.cols() {
        return Err(Error::DimMismatch(format!(
            "queries have dim {}, targets have dim {}",
            queries.cols(),
            targets.cols()
        )));
    }
    let mut out = Matrix::zeros(queries.rows(), targets.rows());
    match kind {
        SimilarityKind::Cosine => {
            let qn = row_norms(queries, "query")?;
            let tn = row_norms(targets, "target")?;
            for i in 0..queries.rows() {
                let q = queries.row(i);
                for j in 0..targets.rows() {
                    let c = dot(q, targets.row(j)) / (qn[i] * tn[j]);
                    out.set(i, j, c.clamp(-1.0, 1.0));
                }
            }
        }
        _ => {
            for i in 0..queries.rows() {
                let q = queries.row(i);
                for j in 0..targets.rows() {
                    out.set(i, j, kind.eval(q, targets.row(j)));
                }
            }
        }
    }
    Ok(out)
}

fn row_norms(m: &Matrix, side: &'static str) -> Result<Vec<f64>> {
    m.row_iter()
        .enumerate()
        .map(|(row, r)| {
            let n = norm(r);
            if n > 0.0 {
                Ok(n)
            } else {
                Err(Error::ZeroNorm { side, row })
            }
        })
        .collect()
}

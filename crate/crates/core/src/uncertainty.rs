//! Feature uncertainty (embedding variance over drawn models) and posterior
//! uncertainty (mutual information between the retrieval outcome and the
//! drawn model).
//!
//! All entropies are in nats. Variances are population variances (divide by
//! `L`), the plug-in Monte-Carlo estimate.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::retrieval::{check_temperature, feature_average, mean_rows, softmax_into, NORMALIZATION_TOL};
use crate::similarity::{similarity_matrix, SimilarityKind};
use crate::tensor_io::EmbeddingTensor;

/// Negative mutual information within this distance of zero is rounding noise.
pub const MI_CLAMP: f64 = 1e-12;

/// `L x Nq x Nt` retrieval posteriors, one slice per drawn model.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEnsemble {
    models: usize,
    queries: usize,
    targets: usize,
    values: Vec<f64>,
    pub temperature: Option<f64>,
    pub kind: Option<SimilarityKind>,
}

impl PosteriorEnsemble {
    /// Validates shape, entry range and row normalization.
    pub fn new(models: usize, queries: usize, targets: usize, values: Vec<f64>) -> Result<Self> {
        if models == 0 || queries == 0 || targets == 0 {
            return Err(Error::Shape("ensemble dims must be >= 1".into()));
        }
        if values.len() != models * queries * targets {
            return Err(Error::Shape(format!(
                "ensemble ({models}, {queries}, {targets}) needs {} values, got {}",
                models * queries * targets,
                values.len()
            )));
        }
        let ens = Self::new_unchecked(models, queries, targets, values);
        for (row, r) in ens.values.chunks_exact(targets).enumerate() {
            if r.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidArgument(format!(
                    "ensemble row {row} has an entry outside [0, 1]"
                )));
            }
            let sum: f64 = r.iter().sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::NotNormalized { row, sum });
            }
        }
        Ok(ens)
    }

    pub(crate) fn new_unchecked(
        models: usize,
        queries: usize,
        targets: usize,
        values: Vec<f64>,
    ) -> Self {
        PosteriorEnsemble {
            models,
            queries,
            targets,
            values,
            temperature: None,
            kind: None,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.models, self.queries, self.targets)
    }

    #[inline]
    pub fn row(&self, model: usize, query: usize) -> &[f64] {
        let start = (model * self.queries + query) * self.targets;
        &self.values[start..start + self.targets]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Per-sample sum over dimensions of the population variance across models.
pub fn feature_uncertainty(stack: &EmbeddingTensor) -> Vec<f64> {
    let (l, n, _) = stack.dims();
    if l < 2 {
        log::warn!("feature uncertainty with a single model is identically zero");
        return vec![0.0; n];
    }
    let mean = feature_average(stack);
    (0..n)
        .map(|s| {
            let mu = mean.row(s);
            let mut acc = 0.0;
            for li in 0..l {
                for (k, m) in mu.iter().enumerate() {
                    let dv = stack.value(li, s, k) - m;
                    acc += dv * dv;
                }
            }
            acc / l as f64
        })
        .collect()
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    let sum: f64 = p.iter().sum();
    if p.is_empty() || (sum - 1.0).abs() > NORMALIZATION_TOL || p.iter().any(|&x| x < 0.0) {
        return Err(Error::NotNormalized { row: 0, sum });
    }
    Ok(entropy_unchecked(p))
}

#[inline]
fn entropy_unchecked(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// Retrieval posteriors of every query slice against a fixed (averaged) target set.
pub fn posterior_ensemble(
    query_stack: &EmbeddingTensor,
    targets_avg: &Matrix,
    kind: SimilarityKind,
    temperature: f64,
) -> Result<PosteriorEnsemble> {
    check_temperature(temperature)?;
    let (l, nq, _) = query_stack.dims();
    let nt = targets_avg.rows();
    let mut values = Vec::with_capacity(l * nq * nt);
    let mut row = Vec::with_capacity(nt);
    for li in 0..l {
        let sim = similarity_matrix(&query_stack.slice(li), targets_avg, kind)?;
        for s in sim.row_iter() {
            softmax_into(s, temperature, &mut row);
            values.extend_from_slice(&row);
        }
    }
    let mut ens = PosteriorEnsemble::new_unchecked(l, nq, nt, values);
    ens.temperature = Some(temperature);
    ens.kind = Some(kind);
    Ok(ens)
}

/// Mutual information per query: entropy of the model-averaged posterior minus
/// the mean entropy of the per-model posteriors.
pub fn posterior_uncertainty(ensemble: &PosteriorEnsemble) -> Vec<f64> {
    let (l, nq, nt) = ensemble.dims();
    if l < 2 {
        log::warn!("posterior uncertainty with a single model is identically zero");
        return vec![0.0; nq];
    }
    let mut mean = vec![0.0; nt];
    (0..nq)
        .map(|q| {
            mean_rows((0..l).map(|li| ensemble.row(li, q)), &mut mean);
            let h: Vec<f64> = (0..l).map(|li| entropy_unchecked(ensemble.row(li, q))).collect();
            let mut mean_h = [0.0];
            mean_rows(h.chunks(1), &mut mean_h);
            let mi = entropy_unchecked(&mean) - mean_h[0];
            if (-MI_CLAMP..0.0).contains(&mi) {
                0.0
            } else {
                mi
            }
        })
        .collect()
}

/// Per query, population variance of each posterior entry over models, summed
/// over targets.
pub fn posterior_variance(ensemble: &PosteriorEnsemble) -> Vec<f64> {
    let (l, nq, nt) = ensemble.dims();
    let mut mean = vec![0.0; nt];
    (0..nq)
        .map(|q| {
            mean_rows((0..l).map(|li| ensemble.row(li, q)), &mut mean);
            let mut acc = 0.0;
            for li in 0..l {
                for (p, m) in ensemble.row(li, q).iter().zip(&mean) {
                    acc += (p - m) * (p - m);
                }
            }
            acc / l as f64
        })
        .collect()
}

/// Both uncertainty measures for every query at one temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyReport {
    pub temperature: f64,
    pub feature_u: Vec<f64>,
    pub posterior_u: Vec<f64>,
    pub posterior_var: Vec<f64>,
}

impl UncertaintyReport {
    /// Targets are feature-averaged before the posterior is formed; only queries
    /// carry posterior uncertainty.
    pub fn compute(
        query_stack: &EmbeddingTensor,
        target_stack: &EmbeddingTensor,
        kind: SimilarityKind,
        temperature: f64,
    ) -> Result<Self> {
        if query_stack.dim() != target_stack.dim() {
            return Err(Error::DimMismatch(format!(
                "query dim {} != target dim {}",
                query_stack.dim(),
                target_stack.dim()
            )));
        }
        let ens = posterior_ensemble(query_stack, &feature_average(target_stack), kind, temperature)?;
        Ok(UncertaintyReport {
            temperature,
            feature_u: feature_uncertainty(query_stack),
            posterior_u: posterior_uncertainty(&ens),
            posterior_var: posterior_variance(&ens),
        })
    }

    pub fn len(&self) -> usize {
        self.feature_u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature_u.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("query_index,feature_u,posterior_u,posterior_var\n");
        for i in 0..self.len() {
            s.push_str(&format!(
                "{},{},{},{}\n",
                i, self.feature_u[i], self.posterior_u[i], self.posterior_var[i]
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn feature_uncertainty_examples() {
        let same = EmbeddingTensor::new(3, 2, 2, vec![0.3; 12]).unwrap();
        assert_eq!(feature_uncertainty(&same), vec![0.0, 0.0]);

        let two = EmbeddingTensor::new(2, 1, 2, vec![0.0, 0.0, 2.0, 0.0]).unwrap();
        assert_abs_diff_eq!(feature_uncertainty(&two)[0], 1.0, epsilon = 1e-15);

        let three = EmbeddingTensor::new(3, 1, 1, vec![0.0, 1.0, 2.0]).unwrap();
        assert_abs_diff_eq!(feature_uncertainty(&three)[0], 2.0 / 3.0, epsilon = 1e-15);

        let single = EmbeddingTensor::new(1, 2, 1, vec![1.0, 2.0]).unwrap();
        assert_eq!(feature_uncertainty(&single), vec![0.0, 0.0]);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        for k in 1..20 {
            let u = vec![1.0 / k as f64; k];
            assert_abs_diff_eq!(entropy(&u).unwrap(), (k as f64).ln(), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(
            entropy(&[0.5, 0.25, 0.25]).unwrap(),
            1.5 * 2f64.ln(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(entropy(&[0.5, 0.25, 0.25]).unwrap(), 1.0397208, epsilon = 1e-6);
        assert!(entropy(&[0.5, 0.6]).is_err());
    }

    #[test]
    fn posterior_uncertainty_examples() {
        let d = 1e-300;
        let ens = PosteriorEnsemble::new(2, 1, 2, vec![1.0 - d, d, d, 1.0 - d]).unwrap();
        assert_abs_diff_eq!(posterior_uncertainty(&ens)[0], 2f64.ln(), epsilon = 1e-12);

        let ident = PosteriorEnsemble::new(3, 1, 3, [0.2, 0.3, 0.5].repeat(3)).unwrap();
        assert_eq!(posterior_uncertainty(&ident)[0], 0.0);

        let uni = PosteriorEnsemble::new(4, 1, 4, vec![0.25; 16]).unwrap();
        assert_eq!(posterior_uncertainty(&uni)[0], 0.0);
    }

    #[test]
    fn posterior_variance_examples() {
        let ident = PosteriorEnsemble::new(3, 1, 3, [0.2, 0.3, 0.5].repeat(3)).unwrap();
        assert_abs_diff_eq!(posterior_variance(&ident)[0], 0.0, epsilon = 1e-16);
        let flip = PosteriorEnsemble::new(2, 1, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(posterior_variance(&flip)[0], 0.5);
    }

    #[test]
    fn ensemble_single_slice_matches_softmax() {
        let q = EmbeddingTensor::new(1, 2, 2, vec![1.0, 0.0, 0.3, 0.7]).unwrap();
        let t = Matrix::from_rows(&[vec![1.0, 1.0], vec![-1.0, 0.5], vec![0.0, 2.0]]).unwrap();
        let ens = posterior_ensemble(&q, &t, SimilarityKind::Dot, 0.5).unwrap();
        let sim = similarity_matrix(&q.slice(0), &t, SimilarityKind::Dot).unwrap();
        for i in 0..2 {
            let p = crate::retrieval::retrieval_posterior(sim.row(i), 0.5).unwrap();
            assert_eq!(ens.row(0, i), p.as_slice());
        }
    }

    #[test]
    fn ensemble_rejects_bad_rows() {
        assert!(PosteriorEnsemble::new(1, 1, 2, vec![0.5, 0.6]).is_err());
        assert!(PosteriorEnsemble::new(1, 1, 2, vec![1.5, -0.5]).is_err());
        assert!(PosteriorEnsemble::new(1, 1, 2, vec![0.5]).is_err());
    }

    fn ensemble_strategy() -> impl Strategy<Value = PosteriorEnsemble> {
        (2usize..6, 1usize..4, 2usize..7).prop_flat_map(|(l, nq, nt)| {
            proptest::collection::vec(-8.0f64..8.0, l * nq * nt).prop_map(move |logits| {
                let mut values = Vec::with_capacity(logits.len());
                let mut row = Vec::new();
                for chunk in logits.chunks(nt) {
                    softmax_into(chunk, 1.0, &mut row);
                    values.extend_from_slice(&row);
                }
                PosteriorEnsemble::new(l, nq, nt, values).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn mi_invariant_to_model_permutation(ens in ensemble_strategy()) {
            let (l, nq, nt) = ens.dims();
            let mut rev = Vec::with_capacity(l * nq * nt);
            for li in (0..l).rev() {
                for q in 0..nq {
                    rev.extend_from_slice(ens.row(li, q));
                }
            }
            let rev = PosteriorEnsemble::new(l, nq, nt, rev).unwrap();
            let a = posterior_uncertainty(&ens);
            let b = posterior_uncertainty(&rev);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn mi_equivariant_under_target_permutation(ens in ensemble_strategy()) {
            let (l, nq, nt) = ens.dims();
            let perm: Vec<usize> = (0..nt).rev().collect();
            let mut values = Vec::new();
            for li in 0..l {
                for q in 0..nq {
                    let r = ens.row(li, q);
                    values.extend(perm.iter().map(|&j| r[j]));
                }
            }
            let permuted = PosteriorEnsemble::new(l, nq, nt, values).unwrap();
            let a = posterior_uncertainty(&ens);
            let b = posterior_uncertainty(&permuted);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn variance_popoviciu_bound(ens in ensemble_strategy()) {
            let nt = ens.dims().2 as f64;
            for v in posterior_variance(&ens) {
                prop_assert!(v >= 0.0 && v <= nt * 0.25);
            }
        }

        #[test]
        fn feature_uncertainty_translation_and_scale(
            base in proptest::collection::vec(-24i32..24, 24),
            shift in proptest::collection::vec(-16i32..16, 4),
            log_lambda in -2i32..3,
        ) {
            // Eighths and powers of two are exact in f32 storage.
            let lambda = 2f64.powi(log_lambda);
            let exact: Vec<f64> = base.iter().map(|&v| v as f64 / 8.0).collect();
            let shifted: Vec<f64> = exact.iter().enumerate().map(|(i, v)| v + shift[i % 4] as f64 / 8.0).collect();
            let scaled: Vec<f64> = exact.iter().map(|v| v * lambda).collect();
            let u = feature_uncertainty(&EmbeddingTensor::from_f64(3, 2, 4, &exact).unwrap());
            let u_shift = feature_uncertainty(&EmbeddingTensor::from_f64(3, 2, 4, &shifted).unwrap());
            let u_scale = feature_uncertainty(&EmbeddingTensor::from_f64(3, 2, 4, &scaled).unwrap());
            for i in 0..2 {
                prop_assert!((u[i] - u_shift[i]).abs() < 1e-12);
                prop_assert!((u[i] * lambda * lambda - u_scale[i]).abs() < 1e-12);
            }
        }
    }
}

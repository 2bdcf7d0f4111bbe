//! Ranking, retrieval metrics and the three averaging modes.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::similarity::{similarity_matrix, SimilarityKind};
use crate::tensor_io::{EmbeddingTensor, PositivesMap};
use crate::uncertainty::{posterior_ensemble, PosteriorEnsemble};

/// Row-sum tolerance for probability rows fed to [`posterior_average`].
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Mean of equally long rows, computed as `first + sum(row - first) / count` so
/// that identical rows average to themselves bit for bit.
pub(crate) fn mean_rows<'a>(mut rows: impl Iterator<Item = &'a [f64]>, out: &mut [f64]) {
    let first = rows.next().expect("at least one row");
    out.iter_mut().for_each(|o| *o = 0.0);
    let mut count = 1usize;
    for r in rows {
        for (o, (p, f)) in out.iter_mut().zip(r.iter().zip(first)) {
            *o += p - f;
        }
        count += 1;
    }
    for (o, f) in out.iter_mut().zip(first) {
        *o = f + *o / count as f64;
    }
}

/// Mean over the model axis: `N x D` averaged embedding.
pub fn feature_average(stack: &EmbeddingTensor) -> Matrix {
    let (l, n, d) = stack.dims();
    let slices: Vec<Vec<f64>> = (0..l)
        .map(|li| stack.slice(li).into_vec())
        .collect();
    let mut out = Matrix::zeros(n, d);
    mean_rows(slices.iter().map(Vec::as_slice), out.as_mut_slice());
    out
}

pub(crate) fn check_temperature(temperature: f64) -> Result<()> {
    if temperature > 0.0 && temperature.is_finite() {
        Ok(())
    } else {
        Err(Error::Temperature(temperature))
    }
}

/// Temperature softmax over one row of similarities, treating every target as
/// a class.
///
/// Stabilized by subtracting the row maximum. At very low temperatures
/// entries far below the maximum underflow to exactly zero.
pub fn retrieval_posterior(sim_row: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    if sim_row.is_empty() {
        return Err(Error::InvalidArgument("empty similarity row".into()));
    }
    let mut out = Vec::with_capacity(sim_row.len());
    softmax_into(sim_row, temperature, &mut out);
    Ok(out)
}

pub(crate) fn softmax_into(sim_row: &[f64], temperature: f64, out: &mut Vec<f64>) {
    let max = sim_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    out.extend(sim_row.iter().map(|&s| ((s - max) / temperature).exp()));
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
}

/// Model averaging of retrieval posteriors: mean over the `L` slices.
pub fn posterior_average(ensemble: &PosteriorEnsemble) -> Result<Matrix> {
    let (l, nq, nt) = ensemble.dims();
    for li in 0..l {
        for q in 0..nq {
            let sum: f64 = ensemble.row(li, q).iter().sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::NotNormalized {
                    row: li * nq + q,
                    sum,
                });
            }
        }
    }
    let mut out = Matrix::zeros(nq, nt);
    for q in 0..nq {
        mean_rows((0..l).map(|li| ensemble.row(li, q)), out.row_mut(q));
    }
    Ok(out)
}

/// Per-query ranking of all targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RankResult {
    pub order: Vec<Vec<usize>>,
    /// 1-based rank of the best-ranked positive target.
    pub first_positive_rank: Vec<usize>,
}

impl RankResult {
    pub fn num_queries(&self) -> usize {
        self.first_positive_rank.len()
    }

    /// `true` where the first positive lies within the top `k`.
    pub fn hits(&self, k: usize) -> Vec<bool> {
        self.first_positive_rank.iter().map(|&r| r <= k).collect()
    }
}

/// Sort targets by descending score (ties by ascending index) for every query.
pub fn rank_targets(scores: &Matrix, positives: &PositivesMap) -> Result<RankResult> {
    if scores.rows() != positives.num_queries() || scores.cols() != positives.num_targets {
        return Err(Error::DimMismatch(format!(
            "score matrix is {}x{}, positives map is {}x{}",
            scores.rows(),
            scores.cols(),
            positives.num_queries(),
            positives.num_targets
        )));
    }
    let mut order = Vec::with_capacity(scores.rows());
    let mut first = Vec::with_capacity(scores.rows());
    for (q, row) in scores.row_iter().enumerate() {
        let mut idx: Vec<usize> = (0..row.len()).collect();
        idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        let rank = idx
            .iter()
            .position(|&t| positives.is_positive(q, t))
            .expect("validated positives are non-empty")
            + 1;
        order.push(idx);
        first.push(rank);
    }
    Ok(RankResult {
        order,
        first_positive_rank: first,
    })
}

/// Fraction of queries with at least one positive among the top `k`.
pub fn recall_at_k(ranks: &RankResult, k: usize) -> f64 {
    let n = ranks.num_queries();
    if n == 0 {
        return 0.0;
    }
    let hits = ranks.first_positive_rank.iter().filter(|&&r| r <= k).count();
    hits as f64 / n as f64
}

/// Median first-positive rank; even counts use the midpoint of the middle pair.
pub fn median_rank(ranks: &RankResult) -> f64 {
    let mut r = ranks.first_positive_rank.clone();
    if r.is_empty() {
        return f64::NAN;
    }
    r.sort_unstable();
    let n = r.len();
    if n % 2 == 1 {
        r[n / 2] as f64
    } else {
        (r[n / 2 - 1] + r[n / 2]) as f64 / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AveragingMode {
    /// Rank a single deterministic embedding dump directly.
    Weight,
    /// Average embeddings over models, then rank.
    Feature,
    /// Average retrieval posteriors over models, then rank.
    Posterior,
}

impl AveragingMode {
    pub const ALL: [AveragingMode; 3] = [Self::Weight, Self::Feature, Self::Posterior];

    pub fn name(self) -> &'static str {
        match self {
            AveragingMode::Weight => "weight",
            AveragingMode::Feature => "feature",
            AveragingMode::Posterior => "posterior",
        }
    }
}

impl fmt::Display for AveragingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AveragingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weight" => Ok(AveragingMode::Weight),
            "feature" | "feature-avg" => Ok(AveragingMode::Feature),
            "posterior" | "posterior-avg" => Ok(AveragingMode::Posterior),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}

/// Queries, targets, ground truth and scoring settings for one retrieval direction.
#[derive(Debug, Clone)]
pub struct RetrievalTask {
    pub query_stack: EmbeddingTensor,
    pub target_stack: EmbeddingTensor,
    pub positives: PositivesMap,
    pub kind: SimilarityKind,
    pub temperature: f64,
}

impl RetrievalTask {
    pub fn new(
        query_stack: EmbeddingTensor,
        target_stack: EmbeddingTensor,
        positives: PositivesMap,
        kind: SimilarityKind,
        temperature: f64,
    ) -> Result<Self> {
        check_temperature(temperature)?;
        if query_stack.dim() != target_stack.dim() {
            return Err(Error::DimMismatch(format!(
                "query dim {} != target dim {}",
                query_stack.dim(),
                target_stack.dim()
            )));
        }
        if positives.num_queries() != query_stack.samples()
            || positives.num_targets != target_stack.samples()
        {
            return Err(Error::DimMismatch(format!(
                "positives map is {}x{}, stacks hold {} queries and {} targets",
                positives.num_queries(),
                positives.num_targets,
                query_stack.samples(),
                target_stack.samples()
            )));
        }
        positives.validate()?;
        Ok(RetrievalTask {
            query_stack,
            target_stack,
            positives,
            kind,
            temperature,
        })
    }

    pub fn with_temperature(&self, temperature: f64) -> Result<Self> {
        check_temperature(temperature)?;
        Ok(RetrievalTask {
            temperature,
            ..self.clone()
        })
    }

    /// Score matrix whose row-wise ordering defines the ranking for `mode`.
    pub fn scores(&self, mode: AveragingMode, l_use: usize) -> Result<Matrix> {
        match mode {
            AveragingMode::Weight => {
                if self.query_stack.models() != 1 || self.target_stack.models() != 1 {
                    return Err(Error::InvalidArgument(format!(
                        "weight mode needs deterministic (L=1) stacks, got L={} and L={}",
                        self.query_stack.models(),
                        self.target_stack.models()
                    )));
                }
                similarity_matrix(
                    &self.query_stack.slice(0),
                    &self.target_stack.slice(0),
                    self.kind,
                )
            }
            AveragingMode::Feature => {
                let (q, t) = self.take(l_use)?;
                similarity_matrix(&feature_average(&q), &feature_average(&t), self.kind)
            }
            AveragingMode::Posterior => {
                let (q, t) = self.take(l_use)?;
                let ens = posterior_ensemble(&q, &feature_average(&t), self.kind, self.temperature)?;
                posterior_average(&ens)
            }
        }
    }

    fn take(&self, l_use: usize) -> Result<(EmbeddingTensor, EmbeddingTensor)> {
        let avail = self.query_stack.models().min(self.target_stack.models());
        if l_use == 0 || l_use > avail {
            return Err(Error::InvalidArgument(format!(
                "L_use = {l_use} but stacks hold {} query and {} target models",
                self.query_stack.models(),
                self.target_stack.models()
            )));
        }
        Ok((
            self.query_stack.take_models(l_use)?,
            self.target_stack.take_models(l_use)?,
        ))
    }

    pub fn rank(&self, mode: AveragingMode, l_use: usize) -> Result<RankResult> {
        rank_targets(&self.scores(mode, l_use)?, &self.positives)
    }
}

/// Standard retrieval summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub medr: f64,
}

impl Metrics {
    pub fn from_ranks(ranks: &RankResult) -> Self {
        Metrics {
            r1: recall_at_k(ranks, 1),
            r5: recall_at_k(ranks, 5),
            r10: recall_at_k(ranks, 10),
            medr: median_rank(ranks),
        }
    }
}

pub fn evaluate(task: &RetrievalTask, mode: AveragingMode, l_use: usize) -> Result<Metrics> {
    Ok(Metrics::from_ranks(&task.rank(mode, l_use)?))
}

/// One row of the metrics CSV. `temperature` is only meaningful for posterior mode.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub mode: AveragingMode,
    pub models: usize,
    pub temperature: Option<f64>,
    pub metrics: Metrics,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from("mode,L,T,r1,r5,r10,medr\n");
    for r in rows {
        let t = r.temperature.map(|t| t.to_string()).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.mode, r.models, t, r.metrics.r1, r.metrics.r5, r.metrics.r10, r.metrics.medr
        ));
    }
    s
}

//! Experiment summaries over a [`ToyRun`], all in the A-to-B retrieval direction.

use crate::error::Result;
use crate::reliability::{rejection_curve, shift_histograms, RejectionCurve, ShiftHistograms};
use crate::retrieval::{AveragingMode, RetrievalTask};
use crate::tensor_io::{EmbeddingTensor, PositivesMap};
use crate::toylab::pipeline::{SplitEmbeddings, ToyRun};
use crate::uncertainty::UncertaintyReport;

fn task(run: &ToyRun, q: &EmbeddingTensor, t: &EmbeddingTensor, temperature: f64) -> Result<RetrievalTask> {
    RetrievalTask::new(
        q.clone(),
        t.clone(),
        PositivesMap::identity("a2b", t.samples()),
        run.config.train.kind,
        temperature,
    )
}

pub fn mc_task(run: &ToyRun, emb: &SplitEmbeddings, temperature: f64) -> Result<RetrievalTask> {
    task(run, &emb.a_mc, &emb.b_mc, temperature)
}

pub fn weight_task(run: &ToyRun, emb: &SplitEmbeddings) -> Result<RetrievalTask> {
    task(run, &emb.a_det, &emb.b_det, 1.0)
}

/// R@1 of individual stochastic models, weight averaging and both model averages.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragingStudy {
    pub single_model_r1: Vec<f64>,
    pub weight_r1: f64,
    pub feature_r1: f64,
    pub posterior_r1: f64,
}

impl AveragingStudy {
    pub fn single_model_mean(&self) -> f64 {
        self.single_model_r1.iter().sum::<f64>() / self.single_model_r1.len() as f64
    }
}

pub fn averaging_study(run: &ToyRun, models: usize, temperature: f64) -> Result<AveragingStudy> {
    let mc = mc_task(run, &run.test, temperature)?;
    let single_model_r1 = (0..models)
        .map(|l| {
            let single = task(
                run,
                &run.test.a_mc.select_model(l)?,
                &run.test.b_mc.select_model(l)?,
                temperature,
            )?;
            Ok(crate::retrieval::evaluate(&single, AveragingMode::Feature, 1)?.r1)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(AveragingStudy {
        single_model_r1,
        weight_r1: crate::retrieval::evaluate(&weight_task(run, &run.test)?, AveragingMode::Weight, 1)?.r1,
        feature_r1: crate::retrieval::evaluate(&mc, AveragingMode::Feature, models)?.r1,
        posterior_r1: crate::retrieval::evaluate(&mc, AveragingMode::Posterior, models)?.r1,
    })
}

/// Rejection curves of both uncertainty measures, with success judged on the
/// weight-averaged ranking at cutoff `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityStudy {
    pub posterior: RejectionCurve,
    pub feature: RejectionCurve,
}

pub fn reliability_study(run: &ToyRun, k: usize, temperature: f64) -> Result<ReliabilityStudy> {
    let success = weight_task(run, &run.test)?
        .rank(AveragingMode::Weight, 1)?
        .hits(k);
    let report = UncertaintyReport::compute(&run.test.a_mc, &run.test.b_mc, run.config.train.kind, temperature)?;
    Ok(ReliabilityStudy {
        posterior: rejection_curve(&report.posterior_u, &success)?,
        feature: rejection_curve(&report.feature_u, &success)?,
    })
}

/// Mean uncertainties of test queries from the most populous cluster versus
/// queries from the tail (the less probable half of the clusters).
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStudy {
    pub head_count: usize,
    pub tail_count: usize,
    pub head_feature: f64,
    pub tail_feature: f64,
    pub head_posterior: f64,
    pub tail_posterior: f64,
}

pub fn cluster_study(run: &ToyRun, temperature: f64) -> Result<ClusterStudy> {
    let report = UncertaintyReport::compute(&run.test.a_mc, &run.test.b_mc, run.config.train.kind, temperature)?;
    let weights = &run.data.world.weights;
    let head = (0..weights.len())
        .max_by(|&a, &b| weights[a].total_cmp(&weights[b]).then(b.cmp(&a)))
        .unwrap_or(0);
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let tail: Vec<usize> = order[weights.len().div_ceil(2)..].to_vec();

    let mean_over = |vals: &[f64], pick: &dyn Fn(usize) -> bool| {
        let (s, n) = run
            .data
            .test
            .labels
            .iter()
            .zip(vals)
            .filter(|(c, _)| pick(**c))
            .fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
        (if n > 0 { s / n as f64 } else { f64::NAN }, n)
    };
    let is_head = |c: usize| c == head;
    let is_tail = |c: usize| tail.contains(&c);
    let (head_feature, head_count) = mean_over(&report.feature_u, &is_head);
    let (tail_feature, tail_count) = mean_over(&report.feature_u, &is_tail);
    let (head_posterior, _) = mean_over(&report.posterior_u, &is_head);
    let (tail_posterior, _) = mean_over(&report.posterior_u, &is_tail);
    Ok(ClusterStudy {
        head_count,
        tail_count,
        head_feature,
        tail_feature,
        head_posterior,
        tail_posterior,
    })
}

/// In-distribution versus shifted uncertainties of A-side queries.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftStudy {
    pub posterior: ShiftHistograms,
    pub feature: ShiftHistograms,
}

pub fn shift_study(run: &ToyRun, temperature: f64, bins: usize) -> Result<ShiftStudy> {
    let kind = run.config.train.kind;
    let inside = UncertaintyReport::compute(&run.test.a_mc, &run.test.b_mc, kind, temperature)?;
    let outside = UncertaintyReport::compute(
        &run.shifted_emb.a_mc,
        &run.shifted_emb.b_mc,
        kind,
        temperature,
    )?;
    Ok(ShiftStudy {
        posterior: shift_histograms(&inside.posterior_u, &outside.posterior_u, bins)?,
        feature: shift_histograms(&inside.feature_u, &outside.feature_u, bins)?,
    })
}

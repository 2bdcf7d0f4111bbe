//! Browser demo over the toy lab: train once, then explore model averaging,
//! rejection curves and dataset shift interactively.
//!
//! [`Lab`] is plain Rust and returns serializable summaries; [`web::DemoLab`]
//! wraps it for JavaScript and hands results over as JSON strings.

use serde::Serialize;

use retrieval_uq::toylab::study::mc_task;
use retrieval_uq::toylab::{reliability_study, run_toy, shift_study, ToyConfig, ToyRun};
use retrieval_uq::{evaluate, AveragingMode, RejectionCurve, Result, ShiftHistograms};

pub mod web;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingSummary {
    pub config: String,
    pub epoch_loss: Vec<f64>,
    pub models: usize,
    pub test_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallPoint {
    pub models: usize,
    pub feature: f64,
    pub posterior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AveragingCurve {
    pub temperature: f64,
    pub k: usize,
    pub weight: f64,
    pub chance: f64,
    pub points: Vec<RecallPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub auprc: f64,
}

impl From<&RejectionCurve> for Curve {
    fn from(c: &RejectionCurve) -> Self {
        Curve {
            recall: c.points.iter().map(|p| p.recall).collect(),
            precision: c.points.iter().map(|p| p.precision).collect(),
            auprc: c.auprc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionCurves {
    pub k: usize,
    pub temperature: f64,
    pub chance: f64,
    pub posterior: Curve,
    pub feature: Curve,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts_in: Vec<usize>,
    pub counts_out: Vec<usize>,
    pub mean_in: f64,
    pub mean_out: f64,
    pub warning: Option<String>,
}

impl From<ShiftHistograms> for Histogram {
    fn from(h: ShiftHistograms) -> Self {
        Histogram {
            edges: h.edges,
            counts_in: h.counts_in,
            counts_out: h.counts_out,
            mean_in: h.mean_in,
            mean_out: h.mean_out,
            warning: h.warning,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftView {
    pub temperature: f64,
    pub posterior: Histogram,
    pub feature: Histogram,
}

/// Ensemble sizes shown in the averaging sweep: powers of two up to `max`, plus `max`.
pub fn model_grid(max: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = std::iter::successors(Some(1usize), |l| l.checked_mul(2))
        .take_while(|&l| l < max)
        .collect();
    grid.push(max);
    grid
}

/// A trained toy run.
pub struct Lab {
    run: ToyRun,
}

impl Lab {
    /// Train the reference configuration for `seed`, then apply `key = value` overrides.
    pub fn train(seed: u64, overrides: &str) -> Result<Self> {
        let mut cfg = ToyConfig::reference(seed);
        cfg.apply_kv(overrides)?;
        Ok(Lab { run: run_toy(&cfg)? })
    }

    pub fn run(&self) -> &ToyRun {
        &self.run
    }

    pub fn summary(&self) -> TrainingSummary {
        TrainingSummary {
            config: self.run.config.to_kv(),
            epoch_loss: self.run.log.epoch_loss.clone(),
            models: self.run.config.models,
            test_pairs: self.run.data.test.len(),
        }
    }

    /// R@k on the test split as the number of averaged models grows.
    pub fn averaging(&self, temperature: f64, k: usize) -> Result<AveragingCurve> {
        let task = mc_task(&self.run, &self.run.test, temperature)?;
        let at_k = |m: retrieval_uq::Metrics| match k {
            1 => Ok(m.r1),
            5 => Ok(m.r5),
            10 => Ok(m.r10),
            _ => Err(retrieval_uq::Error::InvalidArgument(format!(
                "k must be 1, 5 or 10, got {k}"
            ))),
        };
        let points = model_grid(self.run.config.models)
            .into_iter()
            .map(|l| {
                Ok(RecallPoint {
                    models: l,
                    feature: at_k(evaluate(&task, AveragingMode::Feature, l)?)?,
                    posterior: at_k(evaluate(&task, AveragingMode::Posterior, l)?)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let weight_task = retrieval_uq::toylab::study::weight_task(&self.run, &self.run.test)?;
        Ok(AveragingCurve {
            temperature,
            k,
            weight: at_k(evaluate(&weight_task, AveragingMode::Weight, 1)?)?,
            chance: (k as f64 / self.run.data.test.len() as f64).min(1.0),
            points,
        })
    }

    pub fn rejection(&self, k: usize, temperature: f64) -> Result<RejectionCurves> {
        let study = reliability_study(&self.run, k, temperature)?;
        Ok(RejectionCurves {
            k,
            temperature,
            chance: study.posterior.chance,
            posterior: Curve::from(&study.posterior),
            feature: Curve::from(&study.feature),
        })
    }

    pub fn shift(&self, temperature: f64, bins: usize) -> Result<ShiftView> {
        let study = shift_study(&self.run, temperature, bins)?;
        Ok(ShiftView {
            temperature,
            posterior: study.posterior.into(),
            feature: study.feature.into(),
        })
    }
}

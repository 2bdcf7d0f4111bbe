//! Uncertainty-ranked rejection curves and dataset-shift histograms.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    /// Number of queries kept.
    pub retained: usize,
    /// Fraction of queries kept.
    pub recall: f64,
    /// Success rate among the kept queries.
    pub precision: f64,
}

/// Precision of retained queries as the most uncertain ones are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectionCurve {
    /// Ordered by increasing recall; the last point keeps every query.
    pub points: Vec<CurvePoint>,
    /// Mean precision over all rejection levels.
    pub auprc: f64,
    /// Precision with nothing rejected.
    pub chance: f64,
}

impl RejectionCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("retained,recall,precision\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{}\n", p.retained, p.recall, p.precision));
        }
        s.push_str(&format!("auprc,{}\n", self.auprc));
        s.push_str(&format!("chance,{}\n", self.chance));
        s
    }
}

/// Sweep the rejection threshold over queries sorted by ascending uncertainty.
///
/// Ties in uncertainty are broken by ascending query index.
pub fn rejection_curve(uncertainty: &[f64], success: &[bool]) -> Result<RejectionCurve> {
    if uncertainty.len() != success.len() {
        return Err(Error::DimMismatch(format!(
            "{} uncertainties vs {} success flags",
            uncertainty.len(),
            success.len()
        )));
    }
    if uncertainty.is_empty() {
        return Err(Error::InvalidArgument("rejection curve of zero queries".into()));
    }
    if let Some(i) = uncertainty.iter().position(|u| !u.is_finite()) {
        return Err(Error::NonFinite { index: i });
    }
    let n = uncertainty.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| uncertainty[a].total_cmp(&uncertainty[b]).then(a.cmp(&b)));

    let mut points = Vec::with_capacity(n);
    let mut hits = 0usize;
    for (i, &q) in order.iter().enumerate() {
        if success[q] {
            hits += 1;
        }
        let kept = i + 1;
        points.push(CurvePoint {
            retained: kept,
            recall: kept as f64 / n as f64,
            precision: hits as f64 / kept as f64,
        });
    }
    let auprc = points.iter().map(|p| p.precision).sum::<f64>() / n as f64;
    let chance = hits as f64 / n as f64;
    Ok(RejectionCurve {
        points,
        auprc,
        chance,
    })
}

/// Area above the chance line.
pub fn auprc_gap(curve: &RejectionCurve) -> f64 {
    curve.auprc - curve.chance
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftHistograms {
    /// `bins + 1` shared edges.
    pub edges: Vec<f64>,
    pub counts_in: Vec<usize>,
    pub counts_out: Vec<usize>,
    pub mean_in: f64,
    pub mean_out: f64,
    /// Set when the pooled range was degenerate and a single bin was used.
    pub warning: Option<String>,
}

impl ShiftHistograms {
    pub fn mean_difference(&self) -> f64 {
        self.mean_out - self.mean_in
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count_in,count_out\n");
        for b in 0..self.counts_in.len() {
            s.push_str(&format!(
                "{},{},{},{}\n",
                self.edges[b],
                self.edges[b + 1],
                self.counts_in[b],
                self.counts_out[b]
            ));
        }
        s.push_str(&format!("mean_in,{}\n", self.mean_in));
        s.push_str(&format!("mean_out,{}\n", self.mean_out));
        s.push_str(&format!("mean_diff,{}\n", self.mean_difference()));
        s
    }
}

/// Histograms of in-distribution and shifted uncertainties over shared bins
/// spanning the pooled range.
pub fn shift_histograms(u_in: &[f64], u_out: &[f64], bins: usize) -> Result<ShiftHistograms> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    if u_in.is_empty() || u_out.is_empty() {
        return Err(Error::InvalidArgument("empty uncertainty set".into()));
    }
    if let Some(i) = u_in.iter().chain(u_out).position(|u| !u.is_finite()) {
        return Err(Error::NonFinite { index: i });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (lo, hi) = u_in
        .iter()
        .chain(u_out)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &u| (lo.min(u), hi.max(u)));

    if hi <= lo {
        let warning = format!("all uncertainties equal {lo}; using a single bin");
        log::warn!("{warning}");
        return Ok(ShiftHistograms {
            edges: vec![lo, hi],
            counts_in: vec![u_in.len()],
            counts_out: vec![u_out.len()],
            mean_in: mean(u_in),
            mean_out: mean(u_out),
            warning: Some(warning),
        });
    }

    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|b| lo + b as f64 * width).collect();
    edges.push(hi);
    // Bin by the written edges so the counts agree with the CSV exactly.
    let inner = &edges[1..bins];
    let bin_of = |u: f64| inner.partition_point(|&e| e <= u);
    let count = |v: &[f64]| {
        let mut c = vec![0usize; bins];
        v.iter().for_each(|&u| c[bin_of(u)] += 1);
        c
    };
    let (counts_in, counts_out) = (count(u_in), count(u_out));
    Ok(ShiftHistograms {
        edges,
        counts_in,
        counts_out,
        mean_in: mean(u_in),
        mean_out: mean(u_out),
        warning: None,
    })
}

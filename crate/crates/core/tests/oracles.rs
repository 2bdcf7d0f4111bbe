//! Library results against explicit-loop reimplementations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use retrieval_uq::{
    evaluate, feature_average, posterior_ensemble, posterior_uncertainty, rejection_curve,
    shift_histograms, AveragingMode, EmbeddingTensor, PositivesMap, RetrievalTask, SimilarityKind,
};

fn random_tensor(rng: &mut ChaCha8Rng, l: usize, n: usize, d: usize) -> EmbeddingTensor {
    let values: Vec<f64> = (0..l * n * d).map(|_| rng.sample(StandardNormal)).collect();
    EmbeddingTensor::from_f64(l, n, d, &values).unwrap()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn mean_vec(t: &EmbeddingTensor, n: usize, l_use: usize) -> Vec<f64> {
    (0..t.dim())
        .map(|d| (0..l_use).map(|l| t.value(l, n, d)).sum::<f64>() / l_use as f64)
        .collect()
}

fn softmax(s: &[f64], temp: f64) -> Vec<f64> {
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|x| ((x - m) / temp).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

/// 1-based rank of the best positive, counting every target that strictly
/// beats it plus equal-scored targets with a lower index.
fn first_rank(scores: &[f64], positives: &[usize]) -> usize {
    positives
        .iter()
        .map(|&p| {
            1 + (0..scores.len())
                .filter(|&j| scores[j] > scores[p] || (scores[j] == scores[p] && j < p))
                .count()
        })
        .min()
        .unwrap()
}

fn brute_metrics(ranks: &[usize]) -> [f64; 4] {
    let n = ranks.len() as f64;
    let r = |k: usize| ranks.iter().filter(|&&x| x <= k).count() as f64 / n;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let m = sorted.len();
    let med = if m % 2 == 1 {
        sorted[m / 2] as f64
    } else {
        (sorted[m / 2 - 1] + sorted[m / 2]) as f64 / 2.0
    };
    [r(1), r(5), r(10), med]
}

#[test]
fn evaluate_matches_brute_force_on_random_stacks() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let (l, nq, nt, d) = (3, 8, 12, 4);
        let q = random_tensor(&mut rng, l, nq, d);
        let t = random_tensor(&mut rng, l, nt, d);
        let positives: Vec<Vec<usize>> = (0..nq)
            .map(|_| {
                let mut p: Vec<usize> = (0..nt).filter(|_| rng.gen_bool(0.2)).collect();
                if p.is_empty() {
                    p.push(rng.gen_range(0..nt));
                }
                p
            })
            .collect();
        let map = PositivesMap::new("q2t", nt, positives.clone()).unwrap();
        let temp = [0.01, 1.0][trial % 2];
        let task = RetrievalTask::new(q.clone(), t.clone(), map, SimilarityKind::Cosine, temp).unwrap();

        let tbar: Vec<Vec<f64>> = (0..nt).map(|j| mean_vec(&t, j, l)).collect();
        let feature_ranks: Vec<usize> = (0..nq)
            .map(|i| {
                let qbar = mean_vec(&q, i, l);
                let s: Vec<f64> = tbar.iter().map(|tv| cosine(&qbar, tv)).collect();
                first_rank(&s, &positives[i])
            })
            .collect();
        let posterior_ranks: Vec<usize> = (0..nq)
            .map(|i| {
                let mut avg = vec![0.0; nt];
                for li in 0..l {
                    let qv = q.vector(li, i);
                    let s: Vec<f64> = tbar.iter().map(|tv| cosine(&qv, tv)).collect();
                    for (a, p) in avg.iter_mut().zip(softmax(&s, temp)) {
                        *a += p / l as f64;
                    }
                }
                first_rank(&avg, &positives[i])
            })
            .collect();

        for (mode, ranks) in [
            (AveragingMode::Feature, &feature_ranks),
            (AveragingMode::Posterior, &posterior_ranks),
        ] {
            let m = evaluate(&task, mode, l).unwrap();
            let b = brute_metrics(ranks);
            let got = [m.r1, m.r5, m.r10, m.medr];
            for (g, e) in got.iter().zip(&b) {
                assert!((g - e).abs() < 1e-12, "{mode} trial {trial}: {got:?} vs {b:?}");
            }
        }
    }
}

#[test]
fn single_model_modes_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let q = random_tensor(&mut rng, 1, 6, 3);
    let t = random_tensor(&mut rng, 1, 6, 3);
    let task = RetrievalTask::new(q, t, PositivesMap::identity("q2t", 6), SimilarityKind::Dot, 0.1).unwrap();
    let w = evaluate(&task, AveragingMode::Weight, 1).unwrap();
    assert_eq!(evaluate(&task, AveragingMode::Feature, 1).unwrap(), w);
    assert_eq!(evaluate(&task, AveragingMode::Posterior, 1).unwrap(), w);
}

#[test]
#[allow(clippy::needless_range_loop)]
fn mutual_information_approaches_argmax_entropy_as_temperature_vanishes() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let (l, nq, nt, d) = (rng.gen_range(2..=8), 4, rng.gen_range(2..=9), 3);
        let q = random_tensor(&mut rng, l, nq, d);
        let t = random_tensor(&mut rng, l, nt, d);
        let tbar = feature_average(&t);
        let ens = posterior_ensemble(&q, &tbar, SimilarityKind::Cosine, 1e-7).unwrap();
        let mi = posterior_uncertainty(&ens);
        for i in 0..nq {
            let mut counts = vec![0usize; nt];
            let mut min_gap = f64::INFINITY;
            for li in 0..l {
                let qv = q.vector(li, i);
                let mut s: Vec<(f64, usize)> =
                    (0..nt).map(|j| (cosine(&qv, tbar.row(j)), j)).collect();
                s.sort_by(|a, b| b.0.total_cmp(&a.0));
                min_gap = min_gap.min(s[0].0 - s[1].0);
                counts[s[0].1] += 1;
            }
            if min_gap < 1e-4 {
                continue;
            }
            let h: f64 = counts
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / l as f64;
                    -p * p.ln()
                })
                .sum();
            assert!((mi[i] - h).abs() < 1e-9, "{} vs {h}", mi[i]);
        }
    }
}

#[test]
fn rejection_curve_matches_counting_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..100 {
        let n = rng.gen_range(1..=30);
        // coarse values force ties
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect();
        let s: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let curve = rejection_curve(&u, &s).unwrap();
        for (i, point) in curve.points.iter().enumerate() {
            let kept = i + 1;
            // query j is kept iff fewer than `kept` queries precede it
            let hits = (0..n)
                .filter(|&j| {
                    let before = (0..n).filter(|&m| u[m] < u[j] || (u[m] == u[j] && m < j)).count();
                    before < kept && s[j]
                })
                .count();
            assert_eq!(point.precision, hits as f64 / kept as f64);
        }
        let last = curve.points.last().unwrap();
        assert_eq!(last.precision, curve.chance);
    }
}

#[test]
fn histogram_counts_match_per_value_binning() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..50 {
        let a: Vec<f64> = (0..rng.gen_range(1..40)).map(|_| rng.gen::<f64>()).collect();
        let b: Vec<f64> = (0..rng.gen_range(1..40)).map(|_| rng.gen::<f64>() + 0.5).collect();
        let bins = rng.gen_range(2..10);
        let h = shift_histograms(&a, &b, bins).unwrap();
        assert_eq!(h.counts_in.iter().sum::<usize>(), a.len());
        assert_eq!(h.counts_out.iter().sum::<usize>(), b.len());
        for (vals, counts) in [(&a, &h.counts_in), (&b, &h.counts_out)] {
            for (k, &c) in counts.iter().enumerate() {
                let (lo, hi) = (h.edges[k], h.edges[k + 1]);
                let last = k + 1 == counts.len();
                let expect = vals
                    .iter()
                    .filter(|&&v| v >= lo && (v < hi || (last && v <= hi)))
                    .count();
                assert_eq!(c, expect);
            }
        }
    }
}

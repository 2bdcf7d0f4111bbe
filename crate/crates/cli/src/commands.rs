use std::fs;
use std::path::{Path, PathBuf};

use retrieval_uq::retrieval::metrics_csv;
use retrieval_uq::toylab::{run_toy, ToyConfig};
use retrieval_uq::{
    evaluate, feature_uncertainty, read_positives, read_tensor, rejection_curve, shift_histograms,
    write_positives, write_tensor, AveragingMode, EmbeddingTensor, Error, MetricsRow, PositivesMap,
    RetrievalTask, SimilarityKind, UncertaintyReport,
};

use crate::error::CliError;
use crate::{Common, DetArgs, EvalArgs, PrcurveArgs, ShiftArgs, ToyArgs, UncertaintyArgs};

type Result<T> = std::result::Result<T, CliError>;

fn check_common(c: &Common) -> Result<()> {
    if let Some(t) = c.temps.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(CliError::Usage(format!("temperature must be positive, got {t}")));
    }
    if c.ks.contains(&0) {
        return Err(CliError::Usage("--k must be >= 1".into()));
    }
    if c.models.contains(&0) {
        return Err(CliError::Usage("--models must be >= 1".into()));
    }
    Ok(())
}

fn kind(c: &Common) -> SimilarityKind {
    c.similarity.unwrap_or(SimilarityKind::Cosine)
}

fn load_tensor(path: &Path) -> Result<EmbeddingTensor> {
    read_tensor(path).map_err(CliError::input(path))
}

fn load_positives(path: &Path) -> Result<PositivesMap> {
    read_positives(path).map_err(CliError::input(path))
}

fn load_det(det: &DetArgs) -> Result<Option<(EmbeddingTensor, EmbeddingTensor)>> {
    match (&det.det_queries, &det.det_targets) {
        (Some(q), Some(t)) => {
            let pair = (load_tensor(q)?, load_tensor(t)?);
            for (path, stack) in [(q, &pair.0), (t, &pair.1)] {
                if stack.models() != 1 {
                    return Err(CliError::Input {
                        path: path.clone(),
                        source: Error::Shape(format!(
                            "deterministic stack must hold one model, found {}",
                            stack.models()
                        )),
                    });
                }
            }
            Ok(Some(pair))
        }
        _ => Ok(None),
    }
}

/// Model counts to sweep: the requested ones, or everything the stacks share.
fn model_counts(c: &Common, stacks: &[&EmbeddingTensor]) -> Vec<usize> {
    if c.models.is_empty() {
        vec![stacks.iter().map(|s| s.models()).min().unwrap_or(1)]
    } else {
        c.models.clone()
    }
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|source| CliError::Output { path, source })
}

fn output_error(path: PathBuf, e: Error) -> CliError {
    match e {
        Error::Io { source, .. } => CliError::Output { path, source },
        other => CliError::Core(other),
    }
}

/// Keep direction labels safe for file names.
fn file_label(direction: &str) -> String {
    direction
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn task(
    q: &EmbeddingTensor,
    t: &EmbeddingTensor,
    positives: &PositivesMap,
    positives_path: &Path,
    kind: SimilarityKind,
) -> Result<RetrievalTask> {
    RetrievalTask::new(q.clone(), t.clone(), positives.clone(), kind, 1.0)
        .map_err(CliError::input(positives_path))
}

struct Direction {
    label: String,
    queries: EmbeddingTensor,
    targets: EmbeddingTensor,
    det: Option<(EmbeddingTensor, EmbeddingTensor)>,
    positives: PositivesMap,
    positives_path: PathBuf,
}

pub fn metric_rows(
    queries: &EmbeddingTensor,
    targets: &EmbeddingTensor,
    det: Option<&(EmbeddingTensor, EmbeddingTensor)>,
    positives: &PositivesMap,
    positives_path: &Path,
    c: &Common,
) -> Result<Vec<MetricsRow>> {
    let kind = kind(c);
    let mut rows = Vec::new();
    let weight_stacks = match det {
        Some((dq, dt)) => Some((dq, dt)),
        None if queries.models() == 1 && targets.models() == 1 => Some((queries, targets)),
        None => None,
    };
    if let Some((dq, dt)) = weight_stacks {
        let t = task(dq, dt, positives, positives_path, kind)?;
        rows.push(MetricsRow {
            mode: AveragingMode::Weight,
            models: 1,
            temperature: None,
            metrics: evaluate(&t, AveragingMode::Weight, 1)?,
        });
    }
    let base = task(queries, targets, positives, positives_path, kind)?;
    for &l in &model_counts(c, &[queries, targets]) {
        rows.push(MetricsRow {
            mode: AveragingMode::Feature,
            models: l,
            temperature: None,
            metrics: evaluate(&base, AveragingMode::Feature, l)?,
        });
        for &temp in &c.temps {
            rows.push(MetricsRow {
                mode: AveragingMode::Posterior,
                models: l,
                temperature: Some(temp),
                metrics: evaluate(&base.with_temperature(temp)?, AveragingMode::Posterior, l)?,
            });
        }
    }
    Ok(rows)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let c = &a.common;
    check_common(c)?;
    let queries = load_tensor(&a.stacks.queries)?;
    let targets = load_tensor(&a.stacks.targets)?;
    let det = load_det(&a.det)?;
    let positives = load_positives(&a.positives)?;
    let mut dirs = vec![Direction {
        label: file_label(&positives.direction),
        queries: queries.clone(),
        targets: targets.clone(),
        det: det.clone(),
        positives,
        positives_path: a.positives.clone(),
    }];
    if let Some(path) = &a.reverse_positives {
        let positives = load_positives(path)?;
        let mut label = file_label(&positives.direction);
        if label == dirs[0].label {
            label.push_str("_reverse");
        }
        dirs.push(Direction {
            label,
            queries: targets,
            targets: queries,
            det: det.map(|(q, t)| (t, q)),
            positives,
            positives_path: path.clone(),
        });
    }
    if dirs[0].label.is_empty() {
        dirs[0].label = "forward".into();
    }
    prepare_out(&c.out)?;
    for d in &dirs {
        let rows = metric_rows(
            &d.queries,
            &d.targets,
            d.det.as_ref(),
            &d.positives,
            &d.positives_path,
            c,
        )?;
        write_text(&c.out, &format!("metrics_{}.csv", d.label), &metrics_csv(&rows))?;
    }
    Ok(())
}

pub fn uncertainty(a: &UncertaintyArgs) -> Result<()> {
    let c = &a.common;
    check_common(c)?;
    let queries = load_tensor(&a.stacks.queries)?;
    let targets = load_tensor(&a.stacks.targets)?;
    prepare_out(&c.out)?;
    for &l in &model_counts(c, &[&queries, &targets]) {
        let (q, t) = (queries.take_models(l)?, targets.take_models(l)?);
        for &temp in &c.temps {
            let report = UncertaintyReport::compute(&q, &t, kind(c), temp)?;
            write_text(&c.out, &format!("uncertainty_L{l}_T{temp}.csv"), &report.to_csv())?;
        }
    }
    Ok(())
}

pub fn prcurve(a: &PrcurveArgs) -> Result<()> {
    let c = &a.common;
    check_common(c)?;
    let queries = load_tensor(&a.stacks.queries)?;
    let targets = load_tensor(&a.stacks.targets)?;
    let det = load_det(&a.det)?;
    let positives = load_positives(&a.positives)?;
    let kind = kind(c);
    prepare_out(&c.out)?;
    let base = task(&queries, &targets, &positives, &a.positives, kind)?;
    let det_ranks = match &det {
        Some((dq, dt)) => Some(task(dq, dt, &positives, &a.positives, kind)?.rank(AveragingMode::Weight, 1)?),
        None => None,
    };
    for &l in &model_counts(c, &[&queries, &targets]) {
        let ranks = match &det_ranks {
            Some(r) => r.clone(),
            None => base.rank(AveragingMode::Feature, l)?,
        };
        let (q, t) = (queries.take_models(l)?, targets.take_models(l)?);
        let feature_u = feature_uncertainty(&q);
        let reports = c
            .temps
            .iter()
            .map(|&temp| UncertaintyReport::compute(&q, &t, kind, temp))
            .collect::<retrieval_uq::Result<Vec<_>>>()?;
        for &k in &c.ks {
            let success = ranks.hits(k);
            let curve = rejection_curve(&feature_u, &success)?;
            write_text(&c.out, &format!("prcurve_k{k}_L{l}_feature.csv"), &curve.to_csv())?;
            for (temp, report) in c.temps.iter().zip(&reports) {
                let curve = rejection_curve(&report.posterior_u, &success)?;
                write_text(
                    &c.out,
                    &format!("prcurve_k{k}_L{l}_posterior_T{temp}.csv"),
                    &curve.to_csv(),
                )?;
            }
        }
    }
    Ok(())
}

pub fn shift(a: &ShiftArgs) -> Result<()> {
    let c = &a.common;
    check_common(c)?;
    let in_q = load_tensor(&a.in_queries)?;
    let in_t = load_tensor(&a.in_targets)?;
    let out_q = load_tensor(&a.out_queries)?;
    let out_t = match &a.out_targets {
        Some(p) => load_tensor(p)?,
        None => in_t.clone(),
    };
    let kind = kind(c);
    prepare_out(&c.out)?;
    for &l in &model_counts(c, &[&in_q, &in_t, &out_q, &out_t]) {
        let (iq, it) = (in_q.take_models(l)?, in_t.take_models(l)?);
        let (oq, ot) = (out_q.take_models(l)?, out_t.take_models(l)?);
        let hist = shift_histograms(&feature_uncertainty(&iq), &feature_uncertainty(&oq), a.bins)?;
        if let Some(w) = &hist.warning {
            log::warn!("feature uncertainty, L={l}: {w}");
        }
        write_text(&c.out, &format!("shift_L{l}_feature.csv"), &hist.to_csv())?;
        for &temp in &c.temps {
            let inside = UncertaintyReport::compute(&iq, &it, kind, temp)?;
            let outside = UncertaintyReport::compute(&oq, &ot, kind, temp)?;
            let hist = shift_histograms(&inside.posterior_u, &outside.posterior_u, a.bins)?;
            if let Some(w) = &hist.warning {
                log::warn!("posterior uncertainty, L={l}, T={temp}: {w}");
            }
            write_text(&c.out, &format!("shift_L{l}_posterior_T{temp}.csv"), &hist.to_csv())?;
        }
    }
    Ok(())
}

pub fn toy_config(a: &ToyArgs) -> Result<ToyConfig> {
    let c = &a.common;
    let mut cfg = ToyConfig::reference(c.seed);
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::Input {
            path: path.clone(),
            source: Error::Parse {
                context: "config".into(),
                message: e.to_string(),
            },
        })?;
        cfg.apply_kv(&text).map_err(CliError::input(path))?;
    }
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(kind) = c.similarity {
        cfg.train.kind = kind;
    }
    match c.models.as_slice() {
        [] => {}
        [l] => cfg.models = *l,
        _ => return Err(CliError::Usage("toy takes a single --models value".into())),
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn toy(a: &ToyArgs) -> Result<()> {
    let c = &a.common;
    check_common(c)?;
    let cfg = toy_config(a)?;
    let run = run_toy(&cfg)?;
    let out = &c.out;
    prepare_out(out)?;
    write_text(out, "config.txt", &cfg.to_kv())?;
    write_text(out, "loss.csv", &run.log.to_csv())?;
    let params = serde_json::to_string_pretty(&run.params).expect("params serialize");
    write_text(out, "params.json", &(params + "\n"))?;

    let splits = [
        ("train", &run.data.train),
        ("test", &run.data.test),
        ("shift", &run.shifted),
    ];
    for (name, split) in splits {
        for (side, x) in [("a", &split.xa), ("b", &split.xb)] {
            let path = out.join(format!("data_{name}_{side}.uqet"));
            let tensor = EmbeddingTensor::from_slices(std::slice::from_ref(x))?;
            write_tensor(&path, &tensor).map_err(|e| output_error(path.clone(), e))?;
        }
    }
    let labels = serde_json::json!({
        "train": run.data.train.labels,
        "test": run.data.test.labels,
        "shift": run.shifted.labels,
        "cluster_weights": run.data.world.weights,
    });
    write_text(out, "labels.json", &format!("{labels:#}\n"))?;

    for (name, emb) in [("test", &run.test), ("shift", &run.shifted_emb)] {
        let tensors = [
            ("a_mc", &emb.a_mc),
            ("b_mc", &emb.b_mc),
            ("a_det", &emb.a_det),
            ("b_det", &emb.b_det),
        ];
        for (suffix, tensor) in tensors {
            let path = out.join(format!("emb_{name}_{suffix}.uqet"));
            write_tensor(&path, tensor).map_err(|e| output_error(path.clone(), e))?;
        }
    }
    let a2b = PositivesMap::identity("a2b", run.data.test.len());
    let b2a = PositivesMap::identity("b2a", run.data.test.len());
    for (name, map) in [("positives_a2b.json", &a2b), ("positives_b2a.json", &b2a)] {
        let path = out.join(name);
        write_positives(&path, map).map_err(|e| output_error(path.clone(), e))?;
    }
    log::info!(
        "trained {} epochs, loss {:.4} -> {:.4}",
        cfg.train.epochs,
        run.log.initial(),
        run.log.last()
    );
    Ok(())
}

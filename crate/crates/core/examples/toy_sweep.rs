//! Runs the reference toy configuration over a range of seeds and prints the
//! study summaries. Extra `key=value` arguments override the reference config.

use retrieval_uq::toylab::{
    averaging_study, cluster_study, reliability_study, run_toy, shift_study, ToyConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let overrides: Vec<String> = std::env::args().skip(1).collect();
    for seed in 0..10 {
        let mut cfg = ToyConfig::reference(seed);
        cfg.apply_kv(&overrides.join("\n"))?;
        cfg.set_seed(seed);
        let t0 = std::time::Instant::now();
        let run = run_toy(&cfg)?;
        let avg = averaging_study(&run, cfg.models, 10.0)?;
        let rel = reliability_study(&run, 1, 0.001)?;
        let cl = cluster_study(&run, 0.001)?;
        let sh = shift_study(&run, 0.001, 20)?;
        println!(
            "seed {seed} {:.1}s loss {:.3}->{:.3} | r1 single {:.3} weight {:.3} feat {:.3} post {:.3} | gap post {:.4} feat {:.4} | feat head {:.4} tail {:.4} post head {:.4} tail {:.4} (n {} {}) | shift {:.4} -> {:.4}",
            t0.elapsed().as_secs_f64(),
            run.log.initial(),
            run.log.last(),
            avg.single_model_mean(),
            avg.weight_r1,
            avg.feature_r1,
            avg.posterior_r1,
            rel.posterior.auprc - rel.posterior.chance,
            rel.feature.auprc - rel.feature.chance,
            cl.head_feature,
            cl.tail_feature,
            cl.head_posterior,
            cl.tail_posterior,
            cl.head_count,
            cl.tail_count,
            sh.posterior.mean_in,
            sh.posterior.mean_out,
        );
    }
    Ok(())
}

//! Fit a synthetic dataset and print parameter recovery.
//!
//! ```text
//! cargo run --release --example recovery -- <n_topics> [key=value ...]
//! ```
//!
//! Keys are the `simulate` config keys, applied on top of the benchmark
//! preset; `thresholds=1,5,10` also prints ρ_k by minimum learning events.

use crowdlearn::config::parse_kv;
use crowdlearn::evaluation::{knowledge_recovery, recovery_report};
use crowdlearn::solver::{fit, SolverOptions};
use crowdlearn::synth::{generate, SynthConfig};

fn main() -> crowdlearn::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n_topics = args.first().and_then(|a| a.parse().ok()).unwrap_or(1);
    let mut pairs = parse_kv(&args.iter().skip(1).cloned().collect::<Vec<_>>().join("\n"))?;
    let thresholds: Vec<usize> = match pairs.remove("thresholds") {
        Some(v) => v.split(',').filter_map(|t| t.trim().parse().ok()).collect(),
        None => Vec::new(),
    };
    let mut cfg = SynthConfig {
        seed: 1,
        ..SynthConfig::benchmark(n_topics)
    };
    cfg.apply(&pairs)?;
    let (d, truth) = generate(&cfg)?;
    let r = fit(&d, cfg.kernel()?, &SolverOptions::default())?;
    let rep = recovery_report(&truth, &r.params)?;
    println!(
        "{} items, {} learning, {} contributions; {} iterations ({:?}), {:.1}s",
        d.n_items(),
        d.learning_events.len(),
        d.contributions.len(),
        r.iterations,
        r.converged_by,
        r.wall_time
    );
    print!("{}", rep.to_csv()?);
    for m in thresholds {
        let k = knowledge_recovery(&truth, &r.params, &d, m)?;
        println!("min_learning={m}: rho_k={:?} over {} items", k.spearman, k.compared);
    }
    Ok(())
}

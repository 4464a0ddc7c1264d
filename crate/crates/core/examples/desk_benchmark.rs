//! Runs the desk-scale learning and personalization checks and prints a
//! summary per seed. `cargo run --release -p advisor-core --example desk_benchmark [learn|personalize] [seeds]`

use std::time::Instant;

use advisor_core::experiment::{default_cohort, learning_check, loss_end_ratio, personalization_check, LOSS_MA_WINDOW};

fn main() -> advisor_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("learn");
    let seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    for seed in 0..seeds {
        let started = Instant::now();
        if which == "learn" {
            let c = learning_check(seed)?;
            println!(
                "seed {seed}: trained {:.4} random {:.4} gain {:+.3} loss ratio {:.3} pass {} ({:.1}s) first {:.3} last {:.3}",
                c.trained.mean,
                c.random.mean,
                c.relative_gain,
                loss_end_ratio(&c.curve, LOSS_MA_WINDOW)?,
                c.passed,
                started.elapsed().as_secs_f64(),
                c.curve[0].total_loss,
                c.curve.last().unwrap().total_loss,
            );
        } else {
            let c = personalization_check(seed, &default_cohort())?;
            println!(
                "seed {seed}: gain {:+.3} worst {:+.3} mono {:.2}/{:.2} pass {} ({:.1}s)",
                c.mean_gain,
                c.worst_user_delta,
                c.personalized.monotonicity,
                c.baseline.monotonicity,
                c.passed,
                started.elapsed().as_secs_f64()
            );
            println!("  pers uas {:?}", c.personalized.uas.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
            println!("  base uas {:?}", c.baseline.uas.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
            println!("  pers exp {:?}", c.personalized.exposures.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
        }
    }
    Ok(())
}

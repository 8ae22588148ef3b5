//! A reduced adaptation experiment: one seed, one decoupled and one standard
//! AED, every decode condition, with report files.

use decoupled_asr::cli::{summary_markdown, write_experiment_report};
use decoupled_asr::config::{Command, RunConfig};
use decoupled_asr::eval::run_adaptation_experiment;

fn main() -> decoupled_asr::Result<()> {
    let overrides: Vec<(String, String)> = [
        ("seeds", "0"),
        ("families", "aed,aed-std"),
        ("n_dev", "0"),
        ("n_test", "100"),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    let cfg = RunConfig::resolve(Command::Experiment, None, &overrides)?;
    let report = run_adaptation_experiment(&cfg.experiment()?, None)?;
    println!("{}", summary_markdown(&report));

    let out = std::env::temp_dir().join("decoupled-experiment-example");
    write_experiment_report(&cfg, &report, &out)?;
    println!("reports in {}", out.display());
    Ok(())
}

//! File-based run: write a scene to disk, run every stage from its manifest,
//! then export the actions as CSV.

use tcidm::oracle::SceneSpec;
use tcidm::pipeline::{replay_export, run_pipeline, simulate, ActionFormat, RunOptions, SimulateOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("tcidm-example"));
    let manifest = simulate(&SceneSpec::noisy(1), &root.join("scene"), &SimulateOptions::default())?;
    println!("manifest: {}", manifest.display());

    let opts = RunOptions { out_dir: root.join("out"), cache_dir: Some(root.join("cache")), ..RunOptions::default() };
    let outcome = run_pipeline(&manifest, &opts)?;
    for s in &outcome.stage_report.stages {
        println!("{:<14} {:>6.1} ms  cached={}  {}", s.stage.to_string(), s.wall_ms, s.cached, &s.output_digest[..12]);
    }
    for w in &outcome.stage_report.warnings {
        println!("warning: {w}");
    }

    let last = outcome.actions.last().unwrap();
    println!("{} actions; last gripper {:?}", outcome.actions.len(), last.gripper);
    let rows = replay_export(&root.join("out/actions.jsonl"), &root.join("out/actions.csv"), ActionFormat::Csv)?;
    println!("exported {rows} rows to {}", root.join("out/actions.csv").display());
    Ok(())
}

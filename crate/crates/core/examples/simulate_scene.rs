//! Generate a synthetic scene, recover it in memory and score the result.

use tcidm::oracle::{evaluate, generate, EvalThresholds, OcclusionWindow, SceneSpec};
use tcidm::pipeline::{run_bundle, StageConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for sigma in [0.0, 0.001, 0.002] {
        let mut spec = SceneSpec::with_seed(9);
        spec.noise.track_sigma_m = sigma;
        spec.noise.depth_sigma_m = 2.0 * sigma;
        let (bundle, truth) = generate(&spec)?;
        let run = run_bundle(&bundle, &StageConfig::default(), spec.seed, None)?;
        let eval = evaluate(&run.actions, &truth, EvalThresholds::default())?;
        println!(
            "track noise {:.1} mm: max cumulative error {:.4} m / {:.3} deg -> {}",
            sigma * 1e3,
            eval.max_cumulative_translation_m,
            eval.max_cumulative_rotation_deg,
            if eval.pass { "pass" } else { "fail" }
        );
    }

    let mut spec = SceneSpec::noisy(9);
    spec.occlusions = vec![OcclusionWindow { from: 12, to: 14, keep: 2 }];
    let (bundle, truth) = generate(&spec)?;
    let run = run_bundle(&bundle, &StageConfig::default(), spec.seed, None)?;
    for w in &run.warnings {
        println!("warning: {w}");
    }
    let eval = evaluate(&run.actions, &truth, EvalThresholds::default())?;
    println!("with occlusion: {:.4} m / {:.3} deg", eval.max_cumulative_translation_m, eval.max_cumulative_rotation_deg);
    Ok(())
}

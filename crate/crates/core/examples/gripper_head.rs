//! Train the gripper head on oracle features and predict apertures.

use tcidm::heads::{train, GripperHead, MlpSpec, TrainConfig};
use tcidm::oracle::{generate, SceneSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (bundle, truth) = generate(&SceneSpec::with_seed(2))?;
    let data: Vec<(Vec<f64>, Vec<f64>)> =
        bundle.features.iter().map(|f| (f.values.clone(), vec![truth.aperture[f.frame]])).collect();

    let spec = MlpSpec::gripper(data[0].0.len());
    let cfg = TrainConfig { epochs: 400, momentum: 0.9, learning_rate: 0.02, ..TrainConfig::default() };
    let outcome = train(spec, &data, &cfg)?;
    println!("loss: first {:.4}, final {:.2e}", outcome.loss_history[0], outcome.final_loss());

    let mut head = GripperHead::new(outcome.model)?;
    let continuous = head.predict(&bundle.features)?;
    head.threshold = Some(0.5);
    let binary = head.predict(&bundle.features)?;
    for t in (0..bundle.frames()).step_by(5) {
        println!("frame {t:2}: true {:.2}  predicted {:.3}  binarized {}", truth.aperture[t], continuous[t], binary[t]);
    }

    let weights = head.model.to_json();
    println!("weights file: {} layers", weights.layers.len());
    Ok(())
}

//! Map hand states to joint commands with per-joint limits.

use tcidm::heads::{train, HandState, MlpSpec, RetargetHead, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (hand_dim, joints) = (6, 3);
    let hands: Vec<HandState> = (0..40)
        .map(|f| {
            let phase = f as f64 * 0.15;
            HandState { frame: f, values: (0..hand_dim).map(|i| (phase + i as f64).sin()).collect() }
        })
        .collect();
    // Joint targets are a fixed linear map of the hand state.
    let target = |h: &[f64]| vec![0.5 * h[0] - 0.2 * h[3], 0.3 * h[1], 0.4 * (h[2] + h[5])];
    let data: Vec<(Vec<f64>, Vec<f64>)> = hands.iter().map(|h| (h.values.clone(), target(&h.values))).collect();

    let cfg = TrainConfig { epochs: 300, learning_rate: 0.01, momentum: 0.9, ..TrainConfig::default() };
    let outcome = train(MlpSpec::retarget(hand_dim, joints), &data, &cfg)?;
    println!("retarget loss: {:.2e}", outcome.final_loss());

    let head = RetargetHead::new(outcome.model, vec![(-0.4, 0.4), (-0.2, 0.2), (-1.0, 1.0)])?;
    let out = head.predict(&hands)?;
    println!("frame 0 command: {:?}", out.commands[0]);
    println!("clamped joint values: {}", out.clamp_events);
    Ok(())
}

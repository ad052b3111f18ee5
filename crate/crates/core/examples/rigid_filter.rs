//! Mask tracks to the tool and keep the K most rigid ones.

use tcidm::oracle::{generate, OutlierSpec, SceneSpec, TrackLabel};
use tcidm::tracks::{mask_tracks, select_rigid, FilterConfig, MaskMode, RigidityFit};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut spec = SceneSpec::noisy(5);
    spec.outliers = OutlierSpec { count: 3, displacement_m: 0.01 };
    let (bundle, truth) = generate(&spec)?;

    let world = bundle.tracks.clone();
    let masked = mask_tracks(&world, &bundle.masks, MaskMode::Frame0Only);
    println!("{} tracks, {} on the tool mask at frame 0", world.len(), masked.len());

    for (name, fit) in [("global", RigidityFit::Global), ("ransac", RigidityFit::ransac(5))] {
        let cfg = FilterConfig { fit, ..FilterConfig::with_k(10) };
        let sel = select_rigid(&masked, &cfg)?;
        let ids: Vec<u64> = sel.selected.iter().map(|t| t.track_id).collect();
        let leaked = ids.iter().filter(|id| truth.label(**id) != Some(TrackLabel::Rigid)).count();
        println!("{name}: selected {ids:?}, non-rigid picked: {leaked}");
    }

    let sel = select_rigid(&masked, &FilterConfig::default())?;
    let mut scores = sel.scores.clone();
    scores.sort_by(|a, b| b.mean_residual.partial_cmp(&a.mean_residual).unwrap());
    for s in scores.iter().take(4) {
        println!("least rigid: track {} residual {:?} ({:?})", s.track_id, s.mean_residual, truth.label(s.track_id));
    }
    Ok(())
}

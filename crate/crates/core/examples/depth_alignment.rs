//! Align a relative depth map to a metric reference and metricize camera poses.

use tcidm::depth::{
    alignment_rms, apply_scale_shift, fit_scale_shift, fit_scale_shift_trimmed, joint_valid_domain, metricize_poses,
};
use tcidm::oracle::{generate, SceneSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (bundle, truth) = generate(&SceneSpec::noisy(3))?;
    let rel = &bundle.relative_depth[0];
    let reference = &bundle.metric_reference;

    let domain = joint_valid_domain(rel, reference, 1)?;
    let fit = fit_scale_shift(rel, reference, &domain)?;
    println!("pixels used: {}", domain.len());
    println!("recovered s = {:.5}, d = {:.5} (true {:.1}, {:.1})", fit.s, fit.d, truth.scale_shift.s, truth.scale_shift.d);
    println!("rms after alignment: {:.4} m", alignment_rms(rel, reference, &fit)?);

    let sparse = joint_valid_domain(rel, reference, 8)?;
    let trimmed = fit_scale_shift_trimmed(rel, reference, &sparse, 0.1)?;
    println!("stride 8 with 10% trim: s = {:.5}, d = {:.5} over {} pixels", trimmed.s, trimmed.d, sparse.len());

    let metric = apply_scale_shift(&bundle.relative_depth, &fit);
    let poses = metricize_poses(&bundle.relative_poses, &fit, &bundle.anchor_pose)?;
    let last = poses.poses().last().unwrap();
    let drift = (last.translation - truth.camera_poses.last().unwrap().translation).norm();
    println!("{} metric frames; last camera position off by {:.2e} m", metric.len(), drift);
    Ok(())
}

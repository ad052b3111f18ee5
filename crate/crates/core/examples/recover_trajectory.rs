//! Recover per-step TCP motion from rigid tracks, smooth it and run the
//! safety check.

use tcidm::geometry::{RigidTransform, Rotation, Vec3};
use tcidm::trajectory::{recover_trajectory, safety_check, smooth_trajectory, GapPolicy, SafetyLimits};
use tcidm::tracks::PointTrack;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let step = RigidTransform::new(Rotation::rz(2f64.to_radians()), Vec3::new(0.01, 0.0, 0.002));
    let body = [
        Vec3::new(0.0, 0.0, 0.0),
        Vec3::new(0.05, 0.0, 0.0),
        Vec3::new(0.0, 0.04, 0.0),
        Vec3::new(0.0, 0.0, 0.03),
        Vec3::new(0.02, 0.02, 0.02),
    ];
    let frames = 12;
    let mut tracks: Vec<PointTrack> = body
        .iter()
        .enumerate()
        .map(|(id, p)| {
            let mut pose = RigidTransform::identity();
            let positions = (0..frames)
                .map(|_| {
                    let x = pose.apply(p);
                    pose = step.compose(&pose);
                    Some(x)
                })
                .collect();
            PointTrack::from_positions(id as u64, positions)
        })
        .collect();
    // Two frames where too few points are visible.
    for t in tracks.iter_mut().skip(2) {
        t.hide(5);
        t.hide(6);
    }

    let start = RigidTransform::from_translation(Vec3::new(0.3, 0.0, 0.2));
    let (actions, report) = recover_trajectory(&tracks, Some(&start), GapPolicy::SkipAndInterpolate)?;
    println!("{} steps, bridged gaps: {:?}", actions.len(), report.gaps);
    for a in actions.iter().take(3) {
        println!(
            "frame {}: {:.3} deg, {:.4} m",
            a.frame,
            a.transform.rotation_angle().to_degrees(),
            a.transform.translation_norm()
        );
    }
    println!("final TCP position: {:?}", actions.last().unwrap().absolute_pose.unwrap().translation.as_slice());
    println!("fail-fast instead: {}", recover_trajectory(&tracks, None, GapPolicy::FailFast).unwrap_err());

    let smooth = smooth_trajectory(&actions, 3)?;
    println!("smoothed step 6: {:.4} m", smooth[5].transform.translation_norm());

    let limits = SafetyLimits::new(0.008, 5.0)?;
    for v in safety_check(&actions, &limits).iter().take(3) {
        println!("frame {} exceeds {:?} limit: {:.4} > {}", v.frame, v.kind, v.magnitude, v.limit);
    }
    Ok(())
}

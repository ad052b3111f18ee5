//! Fit a rigid transform between two point sets, then check it against the
//! generating motion.

use tcidm::geometry::{kabsch_align, residual, PointSet, RigidTransform, Rotation, Vec3};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let body = vec![
        Vec3::new(0.00, 0.00, 0.00),
        Vec3::new(0.06, 0.00, 0.01),
        Vec3::new(0.00, 0.04, -0.02),
        Vec3::new(0.03, 0.02, 0.05),
        Vec3::new(-0.04, 0.01, 0.02),
    ];
    let truth = RigidTransform::new(Rotation::rz(0.3) * Rotation::rx(-0.1), Vec3::new(0.02, -0.01, 0.005));
    let moved: Vec<Vec3> = body.iter().map(|p| truth.apply(p)).collect();

    let (src, dst) = (PointSet::new(body)?, PointSet::new(moved)?);
    let fit = kabsch_align(&src, &dst)?;
    println!("fitted quaternion [w,x,y,z]: {:?}", fit.rotation.to_quaternion());
    println!("fitted translation: {:?}", fit.translation.as_slice());
    println!("rotation error: {:.2e} rad", fit.rotation.angle_to(&truth.rotation));
    println!("sum of squared residuals: {:.2e} m^2", residual(&fit, &src, &dst)?);

    // Down-weighting a point pulls the fit away from it.
    let noisy: Vec<Vec3> = dst.points().iter().enumerate().map(|(i, p)| if i == 4 { p + Vec3::new(0.0, 0.0, 0.01) } else { *p }).collect();
    let weighted = PointSet::with_weights(src.points().to_vec(), vec![1.0, 1.0, 1.0, 1.0, 0.01])?;
    let unweighted = kabsch_align(&src, &PointSet::new(noisy.clone())?)?;
    let down = kabsch_align(&weighted, &PointSet::new(noisy)?)?;
    println!(
        "translation error with a bumped point: unweighted {:.2e} m, down-weighted {:.2e} m",
        (unweighted.translation - truth.translation).norm(),
        (down.translation - truth.translation).norm()
    );
    Ok(())
}

//! Rotation representations, rigid-transform chains and pinhole projection.

use mocap_fuse::geometry::{geodesic_angle, CameraView, Intrinsics, ReprKind, RigidTransform, Rotation3};
use nalgebra::Vector3;

fn main() {
    let r = Rotation3::from_axis_angle(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
    for kind in [ReprKind::AxisAngle, ReprKind::Quaternion, ReprKind::Matrix] {
        println!("{kind:?}: {:?}", r.convert(kind));
    }
    let s = Rotation3::about_axis(&Vector3::x(), 0.3);
    println!("angle between them: {:.4} rad", geodesic_angle(&r, &s));
    println!("halfway by slerp:   {:?}", r.slerp(&s, 0.5).axis_angle());

    // T_a^c = T_b^c * T_a^b
    let a_to_b = RigidTransform::new(r, Vector3::new(1.0, 0.0, 0.0));
    let b_to_c = RigidTransform::new(s, Vector3::new(0.0, 2.0, 0.0));
    let a_to_c = b_to_c * a_to_b;
    let p = Vector3::new(0.1, 0.2, 0.3);
    println!("chained: {:?}", a_to_c.transform_point(&p));
    println!("stepwise: {:?}", b_to_c.transform_point(&a_to_b.transform_point(&p)));

    let intr = Intrinsics { fx: 600.0, fy: 600.0, cx: 960.0, cy: 540.0, width: 1920, height: 1080 };
    let cam =
        CameraView::look_at("cam0", intr, &Vector3::new(2.0, 0.0, 1.5), &Vector3::new(0.0, 0.0, 1.0), &Vector3::z())
            .expect("valid camera");
    let target = Vector3::new(0.0, 0.2, 1.2);
    let (px, depth) = cam.project(&target).expect("in front of the camera");
    println!("pixel {:.2?} at depth {depth:.3} m, back-projected {:.6?}", px, cam.unproject(&px, depth));
}

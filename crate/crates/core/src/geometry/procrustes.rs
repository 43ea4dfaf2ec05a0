use nalgebra::{Matrix3, Vector3};

use super::Rotation3;

/// Similarity (or rigid, when `with_scale` is false) transform minimizing
/// `sum ||dst_i - (s R src_i + t)||^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Rotation3,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) * self.scale + self.translation
    }
}

/// Umeyama alignment. Returns `None` for fewer than three points or a rank-deficient source.
pub fn umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>], with_scale: bool) -> Option<Similarity> {
    let n = src.len();
    if n < 3 || dst.len() != n {
        return None;
    }
    let inv = 1.0 / n as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() * inv;
    let mu_d = dst.iter().sum::<Vector3<f64>>() * inv;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let a = s - mu_s;
        cov += (d - mu_d) * a.transpose();
        var_s += a.norm_squared();
    }
    cov *= inv;
    var_s *= inv;
    if var_s <= 1e-18 {
        return None;
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut sign = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        sign[(2, 2)] = -1.0;
    }
    let r = u * sign * vt;
    let scale = if with_scale {
        let sv = svd.singular_values;
        (sv[0] * sign[(0, 0)] + sv[1] * sign[(1, 1)] + sv[2] * sign[(2, 2)]) / var_s
    } else {
        1.0
    };
    let rotation = Rotation3::from_matrix(&r);
    let translation = mu_d - rotation.rotate(&mu_s) * scale;
    Some(Similarity { scale, rotation, translation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn recovers_similarity() {
        let src: Vec<_> = [[0.0, 0.0, 0.0], [1.0, 0.2, 0.0], [0.3, 1.0, 0.1], [0.2, 0.4, 1.3], [-0.5, 0.1, 0.7]]
            .iter()
            .map(|p| Vector3::from(*p))
            .collect();
        let truth = Similarity {
            scale: 1.7,
            rotation: Rotation3::from_axis_angle(&Vector3::new(0.3, -1.1, 0.4)),
            translation: Vector3::new(0.5, -2.0, 3.0),
        };
        let dst: Vec<_> = src.iter().map(|p| truth.apply(p)).collect();
        let est = umeyama(&src, &dst, true).unwrap();
        assert_relative_eq!(est.scale, 1.7, epsilon = 1e-12);
        assert_relative_eq!(est.translation, truth.translation, epsilon = 1e-10);
        let rigid = umeyama(&src, &src.iter().map(|p| truth.rotation.rotate(p)).collect::<Vec<_>>(), false).unwrap();
        assert!(crate::geometry::geodesic_angle(&rigid.rotation, &truth.rotation) < 1e-10);
    }

    #[test]
    fn rejects_degenerate() {
        let p = vec![Vector3::new(1.0, 1.0, 1.0); 4];
        assert!(umeyama(&p, &p, true).is_none());
        assert!(umeyama(&p[..2], &p[..2], false).is_none());
    }
}

//! Affine poses of the mark relative to the canonical frame.
//!
//! An [`AffineParams`] maps canonical-frame coordinates into some target
//! frame (a source image, or the canonical frame itself):
//!
//! ```text
//! x_target = C_target + t + scale * R(rotation) * Shear(shear) * (p - C_canonical)
//! ```
//!
//! Rotation is in degrees, positive from +x towards +y (image coordinates,
//! y pointing down). Pixel centres sit at half-integer coordinates, so the
//! centre of a `w x h` frame is `(w / 2, h / 2)`.

use serde::{Deserialize, Serialize};

/// Side length of the canonical frame.
pub const CANONICAL_SIZE: u32 = 224;

/// Centre of the canonical frame in pixel coordinates.
pub const CANONICAL_CENTER: [f64; 2] = [112.0, 112.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    /// Degrees.
    pub rotation: f64,
    /// `(dx, dy)` in target-frame pixels; canonical pixels when the
    /// transform acts within the canonical frame.
    pub translation: [f64; 2],
    pub scale: f64,
    /// Degrees.
    pub shear: f64,
}

impl Default for AffineParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        rotation: 0.0,
        translation: [0.0, 0.0],
        scale: 1.0,
        shear: 0.0,
    };

    pub fn similarity(rotation: f64, translation: [f64; 2], scale: f64) -> Self {
        Self {
            rotation,
            translation,
            scale,
            shear: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.scale > 0.0
            && self.scale.is_finite()
            && self.rotation.is_finite()
            && self.shear.is_finite()
            && self.shear.abs() < 89.0
            && self.translation.iter().all(|t| t.is_finite())
    }

    /// The 2x2 linear part `scale * R * Shear`.
    pub fn linear(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotation.to_radians().sin_cos();
        let k = self.shear.to_radians().tan();
        let sc = self.scale;
        [[sc * c, sc * (c * k - s)], [sc * s, sc * (s * k + c)]]
    }

    /// Matrix form, mapping canonical coordinates into a frame centred at
    /// `target_center`.
    pub fn to_matrix(&self, target_center: [f64; 2]) -> Affine2 {
        let l = self.linear();
        let [cx, cy] = CANONICAL_CENTER;
        let bx = target_center[0] + self.translation[0] - (l[0][0] * cx + l[0][1] * cy);
        let by = target_center[1] + self.translation[1] - (l[1][0] * cx + l[1][1] * cy);
        Affine2 {
            m: [[l[0][0], l[0][1], bx], [l[1][0], l[1][1], by]],
        }
    }

    /// Decomposes a matrix back into parameters. Exact for matrices of the
    /// form `scale * R * Shear`; any residual anisotropy is dropped.
    pub fn from_matrix(m: &Affine2, target_center: [f64; 2]) -> Self {
        let [[a, b, tx], [c, d, ty]] = m.m;
        let rotation = c.atan2(a);
        let scale = a.hypot(c);
        let (s, co) = rotation.sin_cos();
        // First row of R^T L, divided by scale, is [1, tan(shear)].
        let r01 = co * b + s * d;
        let shear = (r01 / scale).atan().to_degrees();
        let [cx, cy] = CANONICAL_CENTER;
        let dx = tx + a * cx + b * cy - target_center[0];
        let dy = ty + c * cx + d * cy - target_center[1];
        Self {
            rotation: rotation.to_degrees(),
            translation: [dx, dy],
            scale,
            shear,
        }
    }

    /// Pose error of `self` (an estimate) against `truth`, both mapping the
    /// canonical frame into the same target frame. The result acts within
    /// the canonical frame and is the identity for a perfect estimate.
    pub fn residual_against(&self, truth: &AffineParams, target_center: [f64; 2]) -> AffineParams {
        let est = self.to_matrix(target_center);
        let tru = truth.to_matrix(target_center);
        let res = est
            .inverse()
            .expect("valid estimate is invertible")
            .compose(&tru);
        AffineParams::from_matrix(&res, CANONICAL_CENTER)
    }
}

/// Row-major 2x3 affine matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2 {
    pub m: [[f64; 3]; 2],
}

impl Affine2 {
    pub const IDENTITY: Affine2 = Affine2 {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
    };

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
        )
    }

    pub fn determinant(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Affine2) -> Affine2 {
        let a = &self.m;
        let b = &other.m;
        let mut m = [[0.0; 3]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            row[0] = a[i][0] * b[0][0] + a[i][1] * b[1][0];
            row[1] = a[i][0] * b[0][1] + a[i][1] * b[1][1];
            row[2] = a[i][0] * b[0][2] + a[i][1] * b[1][2] + a[i][2];
        }
        Affine2 { m }
    }

    pub fn inverse(&self) -> Option<Affine2> {
        let det = self.determinant();
        if det.abs() < 1e-12 || !det.is_finite() {
            return None;
        }
        let [[a, b, tx], [c, d, ty]] = self.m;
        let ia = d / det;
        let ib = -b / det;
        let ic = -c / det;
        let id = a / det;
        Some(Affine2 {
            m: [
                [ia, ib, -(ia * tx + ib * ty)],
                [ic, id, -(ic * tx + id * ty)],
            ],
        })
    }

    pub fn max_abs_diff(&self, other: &Affine2) -> f64 {
        self.m
            .iter()
            .flatten()
            .zip(other.m.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Envelope on a canonical-frame residual pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseTolerance {
    pub rotation_deg: f64,
    pub translation_px: f64,
    pub scale_rel: f64,
}

impl PoseTolerance {
    /// Alignment of an already-canonical mark.
    pub const IDENTITY: PoseTolerance = PoseTolerance {
        rotation_deg: 0.5,
        translation_px: 1.0,
        scale_rel: 0.02,
    };
    /// Re-aligning an aligned mark.
    pub const IDEMPOTENCE: PoseTolerance = PoseTolerance {
        rotation_deg: 1.0,
        translation_px: 1.5,
        scale_rel: 0.025,
    };
    /// Estimated against generator ground truth.
    pub const RESIDUAL: PoseTolerance = PoseTolerance {
        rotation_deg: 2.0,
        translation_px: 2.0,
        scale_rel: 0.03,
    };

    /// Translation is checked per axis.
    pub fn contains(&self, residual: &AffineParams) -> bool {
        residual.rotation.abs() <= self.rotation_deg
            && residual.translation[0].abs() <= self.translation_px
            && residual.translation[1].abs() <= self.translation_px
            && (residual.scale - 1.0).abs() <= self.scale_rel
    }
}

/// Wraps an angle in degrees into `(-90, 90]`, for axes without a direction.
pub fn wrap_axis_deg(deg: f64) -> f64 {
    let mut a = deg % 180.0;
    if a <= -90.0 {
        a += 180.0;
    } else if a > 90.0 {
        a -= 180.0;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_maps_canonical_center_to_target_center() {
        let m = AffineParams::IDENTITY.to_matrix([160.0, 128.0]);
        let (x, y) = m.apply(112.0, 112.0);
        assert!((x - 160.0).abs() < 1e-12 && (y - 128.0).abs() < 1e-12);
    }

    #[test]
    fn positive_rotation_turns_x_towards_y() {
        let p = AffineParams::similarity(90.0, [0.0, 0.0], 1.0);
        let m = p.to_matrix(CANONICAL_CENTER);
        let (x, y) = m.apply(113.0, 112.0);
        assert!((x - 112.0).abs() < 1e-9 && (y - 113.0).abs() < 1e-9);
    }

    #[test]
    fn residual_of_exact_estimate_is_identity() {
        let t = AffineParams::similarity(15.0, [4.0, -7.5], 1.1);
        let r = t.residual_against(&t, [128.0, 128.0]);
        assert!(PoseTolerance {
            rotation_deg: 1e-9,
            translation_px: 1e-9,
            scale_rel: 1e-12
        }
        .contains(&r));
    }

    #[test]
    fn wrap_axis() {
        assert_eq!(wrap_axis_deg(170.0), -10.0);
        assert_eq!(wrap_axis_deg(-100.0), 80.0);
        assert_eq!(wrap_axis_deg(90.0), 90.0);
    }

    fn params() -> impl Strategy<Value = AffineParams> {
        (
            -180.0..180.0f64,
            -50.0..50.0f64,
            -50.0..50.0f64,
            0.1..5.0f64,
            -60.0..60.0f64,
        )
            .prop_map(|(r, dx, dy, s, sh)| AffineParams {
                rotation: r,
                translation: [dx, dy],
                scale: s,
                shear: sh,
            })
    }

    proptest! {
        #[test]
        fn composition_with_inverse_is_identity(p in params(), cx in 0.0..400.0f64, cy in 0.0..400.0f64) {
            let m = p.to_matrix([cx, cy]);
            let inv = m.inverse().unwrap();
            prop_assert!(inv.compose(&m).max_abs_diff(&Affine2::IDENTITY) <= 1e-6);
            prop_assert!(m.compose(&inv).max_abs_diff(&Affine2::IDENTITY) <= 1e-6);
        }

        #[test]
        fn matrix_round_trip(p in params(), cx in 0.0..400.0f64, cy in 0.0..400.0f64) {
            let back = AffineParams::from_matrix(&p.to_matrix([cx, cy]), [cx, cy]);
            let dr = wrap_axis_deg(back.rotation - p.rotation) ;
            prop_assert!(dr.abs() < 1e-7);
            prop_assert!((back.scale - p.scale).abs() < 1e-9);
            prop_assert!((back.shear - p.shear).abs() < 1e-7);
            prop_assert!((back.translation[0] - p.translation[0]).abs() < 1e-7);
            prop_assert!((back.translation[1] - p.translation[1]).abs() < 1e-7);
        }
    }
}

//! Vergence geometry in a head-fixed, right-handed frame: x to the right,
//! y up, z forward along the optical axis.
//!
//! Angles cross the public surface in degrees; everything inside is radians.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const FORWARD: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y).hypot(self.z)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn normalized(self) -> Result<Vec3> {
        let n = self.norm();
        if !self.is_finite() || n == 0.0 {
            return Err(Error::DegenerateInput(format!(
                "cannot normalize vector {self:?}"
            )));
        }
        Ok(self * (1.0 / n))
    }

    /// Rotation about the vertical (y) axis. Positive angles turn +z toward +x.
    pub fn rotate_yaw(self, yaw_rad: f64) -> Vec3 {
        let (s, c) = yaw_rad.sin_cos();
        Vec3::new(c * self.x + s * self.z, self.y, -s * self.x + c * self.z)
    }

    /// Unit vector with the given azimuth (toward +x) and elevation (toward +y), degrees.
    pub fn from_angles_deg(azimuth_deg: f64, elevation_deg: f64) -> Vec3 {
        let (sa, ca) = azimuth_deg.to_radians().sin_cos();
        let (se, ce) = elevation_deg.to_radians().sin_cos();
        Vec3::new(ce * sa, se, ce * ca)
    }

    /// (azimuth, elevation) in degrees; inverse of [`Vec3::from_angles_deg`].
    pub fn angles_deg(self) -> (f64, f64) {
        let az = self.x.atan2(self.z).to_degrees();
        let el = self.y.atan2(self.x.hypot(self.z)).to_degrees();
        (az, el)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// A gaze ray; the direction is unit length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeRay {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl GazeRay {
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self> {
        if !origin.is_finite() {
            return Err(Error::DegenerateInput("non-finite ray origin".into()));
        }
        Ok(Self {
            origin,
            direction: direction.normalized()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EyeConfig {
    pub ipd: f64,
    pub left_center: Vec3,
    pub right_center: Vec3,
}

impl EyeConfig {
    /// Eyes on the x axis, symmetric about the origin (the cyclopean point).
    ///
    /// `ipd == 0` is accepted and yields coincident eyes.
    pub fn symmetric(ipd: f64) -> Result<Self> {
        if !(ipd >= 0.0 && ipd.is_finite()) {
            return Err(Error::Domain(format!("ipd must be >= 0, got {ipd}")));
        }
        Ok(Self {
            ipd,
            left_center: Vec3::new(-ipd / 2.0, 0.0, 0.0),
            right_center: Vec3::new(ipd / 2.0, 0.0, 0.0),
        })
    }

    pub fn cyclopean(&self) -> Vec3 {
        (self.left_center + self.right_center) * 0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub position: Vec3,
    pub depth_m: f64,
    pub depth_d: f64,
}

impl TargetSpec {
    /// Target straight ahead of the cyclopean point.
    pub fn midline(depth_m: f64) -> Result<Self> {
        let depth_d = to_diopters(depth_m)?;
        Ok(Self {
            position: Vec3::new(0.0, 0.0, depth_m),
            depth_m,
            depth_d,
        })
    }

    /// Target at an arbitrary position; depth is its distance from the origin.
    pub fn at(position: Vec3) -> Result<Self> {
        if !position.is_finite() {
            return Err(Error::DegenerateInput("non-finite target position".into()));
        }
        let depth_m = position.norm();
        let depth_d = to_diopters(depth_m)?;
        Ok(Self {
            position,
            depth_m,
            depth_d,
        })
    }

    /// Target at `depth_m` along the given azimuth (degrees, horizontal plane).
    pub fn at_azimuth(depth_m: f64, azimuth_deg: f64) -> Result<Self> {
        if !(depth_m > 0.0) {
            return Err(Error::Domain(format!("depth must be > 0, got {depth_m}")));
        }
        Self::at(Vec3::from_angles_deg(azimuth_deg, 0.0) * depth_m)
    }
}

/// How gaze vectors enter the angle computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VergenceMode {
    /// Full 3D dot product.
    #[default]
    Full3d,
    /// Vectors projected onto the horizontal (x-z) plane first.
    Horizontal,
}

/// Angle between two gaze directions, in degrees.
///
/// Uses `atan2(|L x R|, L . R)`, which equals `acos(L.R / |L||R|)` but keeps
/// full precision for nearly parallel vectors.
pub fn vergence_angle(left: Vec3, right: Vec3) -> Result<f64> {
    check_direction(left)?;
    check_direction(right)?;
    let sin_part = left.cross(right).norm();
    let cos_part = left.dot(right);
    Ok(sin_part.atan2(cos_part).to_degrees())
}

pub fn vergence_angle_with(mode: VergenceMode, left: Vec3, right: Vec3) -> Result<f64> {
    match mode {
        VergenceMode::Full3d => vergence_angle(left, right),
        VergenceMode::Horizontal => vergence_angle(
            Vec3::new(left.x, 0.0, left.z),
            Vec3::new(right.x, 0.0, right.z),
        ),
    }
}

fn check_direction(v: Vec3) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::DegenerateInput(format!("non-finite vector {v:?}")));
    }
    if v.norm() == 0.0 {
        return Err(Error::DegenerateInput("zero-norm gaze vector".into()));
    }
    Ok(())
}

/// Vergence of a midline target: `2 atan(ipd / 2d)`, degrees.
pub fn ideal_vergence(depth_m: f64, ipd: f64) -> Result<f64> {
    if !(depth_m > 0.0) || !depth_m.is_finite() {
        return Err(Error::Domain(format!("depth must be > 0, got {depth_m}")));
    }
    if !(ipd > 0.0) || !ipd.is_finite() {
        return Err(Error::Domain(format!("ipd must be > 0, got {ipd}")));
    }
    Ok((2.0 * (ipd / (2.0 * depth_m)).atan()).to_degrees())
}

/// Inverse distance. Applying it twice returns the input.
pub fn to_diopters(depth_m: f64) -> Result<f64> {
    if !(depth_m > 0.0) || !depth_m.is_finite() {
        return Err(Error::Domain(format!(
            "distance must be finite and > 0, got {depth_m}"
        )));
    }
    Ok(1.0 / depth_m)
}

/// Ideal gaze rays from both eyes to `target`, with the head turned by
/// `head_yaw_deg` about the vertical axis through the cyclopean point.
pub fn forward_gaze(
    target: &TargetSpec,
    eyes: &EyeConfig,
    head_yaw_deg: f64,
) -> Result<(GazeRay, GazeRay)> {
    let pivot = eyes.cyclopean();
    let yaw = head_yaw_deg.to_radians();
    let left_center = pivot + (eyes.left_center - pivot).rotate_yaw(yaw);
    let right_center = pivot + (eyes.right_center - pivot).rotate_yaw(yaw);
    let left = GazeRay::new(left_center, target.position - left_center).map_err(|_| {
        Error::DegenerateInput("target coincides with the left eye center".into())
    })?;
    let right = GazeRay::new(right_center, target.position - right_center).map_err(|_| {
        Error::DegenerateInput("target coincides with the right eye center".into())
    })?;
    Ok((left, right))
}

/// Symmetric gaze pair with a given cyclopean azimuth and vergence, both in
/// degrees. Both rays lie in the horizontal plane, so their angle is exactly
/// `vergence_deg`.
pub fn rays_for_vergence(
    eyes: &EyeConfig,
    cyclopean_azimuth_deg: f64,
    vergence_deg: f64,
) -> (GazeRay, GazeRay) {
    let half = vergence_deg / 2.0;
    let left = GazeRay {
        origin: eyes.left_center,
        direction: Vec3::from_angles_deg(cyclopean_azimuth_deg + half, 0.0),
    };
    let right = GazeRay {
        origin: eyes.right_center,
        direction: Vec3::from_angles_deg(cyclopean_azimuth_deg - half, 0.0),
    };
    (left, right)
}

/// Mean of the two unit directions, renormalized.
pub fn cyclopean_direction(left: Vec3, right: Vec3) -> Result<Vec3> {
    (left.normalized()? + right.normalized()?).normalized()
}

/// Velocity of a GVA series (degrees per second).
///
/// Entry `i` (for `i >= 1`) is the difference from sample `i-1` to sample `i`,
/// reported at `t_i`. Non-finite GVA marks an invalid sample; any step
/// touching one, or with a non-positive time step, is `None`. If no step is
/// computable the result is empty.
pub fn gva_velocity(series: &[(f64, f64)]) -> Vec<(f64, Option<f64>)> {
    let out: Vec<(f64, Option<f64>)> = series
        .windows(2)
        .map(|w| {
            let (t0, g0) = w[0];
            let (t1, g1) = w[1];
            let dt = t1 - t0;
            let v = (g0.is_finite() && g1.is_finite() && dt > 0.0).then(|| (g1 - g0) / dt);
            (t1, v)
        })
        .collect();
    if out.iter().all(|(_, v)| v.is_none()) {
        Vec::new()
    } else {
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const IPD: f64 = 0.0648;

    fn acos_angle(l: Vec3, r: Vec3) -> f64 {
        (l.dot(r) / (l.norm() * r.norm())).clamp(-1.0, 1.0).acos().to_degrees()
    }

    #[test]
    fn vergence_of_identical_and_orthogonal_vectors() {
        assert_eq!(vergence_angle(Vec3::FORWARD, Vec3::FORWARD).unwrap(), 0.0);
        let a = vergence_angle(Vec3::new(1.0, 0.0, 0.0), Vec3::FORWARD).unwrap();
        assert_abs_diff_eq!(a, 90.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_vector_is_degenerate() {
        let err = vergence_angle(Vec3::ZERO, Vec3::FORWARD).unwrap_err();
        assert_eq!(err.kind(), "degenerate_input");
    }

    #[test]
    fn midline_target_at_quarter_meter() {
        let target = TargetSpec::midline(0.25).unwrap();
        let eyes = EyeConfig::symmetric(IPD).unwrap();
        let (l, r) = forward_gaze(&target, &eyes, 0.0).unwrap();
        let brute = acos_angle(l.direction, r.direction);
        let closed = 2.0 * (IPD / 0.5_f64).atan().to_degrees();
        assert_abs_diff_eq!(vergence_angle(l.direction, r.direction).unwrap(), brute, epsilon = 1e-9);
        assert_abs_diff_eq!(ideal_vergence(0.25, IPD).unwrap(), closed, epsilon = 1e-12);
        assert_abs_diff_eq!(brute, 14.768, epsilon = 1e-3);
    }

    #[test]
    fn ideal_vergence_examples() {
        assert!(ideal_vergence(1e9, IPD).unwrap() < 1e-8);
        assert_abs_diff_eq!(ideal_vergence(4.0, IPD).unwrap(), 0.928, epsilon = 1e-3);
        assert_eq!(ideal_vergence(0.0, IPD).unwrap_err().kind(), "domain");
        assert_eq!(ideal_vergence(1.0, -0.01).unwrap_err().kind(), "domain");
    }

    #[test]
    fn diopter_examples() {
        assert_eq!(to_diopters(0.25).unwrap(), 4.0);
        assert_abs_diff_eq!(to_diopters(1.5).unwrap(), 0.6667, epsilon = 1e-4);
        assert_eq!(to_diopters(4.0).unwrap(), 0.25);
        assert!(to_diopters(0.0).is_err());
        assert!(to_diopters(-1.0).is_err());
    }

    #[test]
    fn far_midline_target_matches_ideal() {
        let eyes = EyeConfig::symmetric(IPD).unwrap();
        let (l, r) = forward_gaze(&TargetSpec::midline(4.0).unwrap(), &eyes, 0.0).unwrap();
        let got = vergence_angle(l.direction, r.direction).unwrap();
        assert_abs_diff_eq!(got, ideal_vergence(4.0, IPD).unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn lateral_target_with_compensating_yaw() {
        let eyes = EyeConfig::symmetric(IPD).unwrap();
        for az in [-60.0, -25.0, 7.6, 25.0, 80.0] {
            let target = TargetSpec::at_azimuth(0.75, az).unwrap();
            let (l, r) = forward_gaze(&target, &eyes, az).unwrap();
            let got = vergence_angle(l.direction, r.direction).unwrap();
            assert_abs_diff_eq!(got, ideal_vergence(0.75, IPD).unwrap(), epsilon = 1e-9);
            // Without compensation the angle differs.
            let (l0, r0) = forward_gaze(&target, &eyes, 0.0).unwrap();
            let uncomp = vergence_angle(l0.direction, r0.direction).unwrap();
            assert!((uncomp - got).abs() > 1e-6);
        }
    }

    #[test]
    fn coincident_eyes_have_zero_vergence() {
        let eyes = EyeConfig::symmetric(0.0).unwrap();
        let target = TargetSpec::at(Vec3::new(0.3, 0.1, 0.9)).unwrap();
        let (l, r) = forward_gaze(&target, &eyes, 12.0).unwrap();
        assert_eq!(vergence_angle(l.direction, r.direction).unwrap(), 0.0);
    }

    #[test]
    fn target_at_eye_center_is_degenerate() {
        let eyes = EyeConfig::symmetric(IPD).unwrap();
        let target = TargetSpec {
            position: eyes.left_center,
            depth_m: IPD / 2.0,
            depth_d: 2.0 / IPD,
        };
        assert_eq!(
            forward_gaze(&target, &eyes, 0.0).unwrap_err().kind(),
            "degenerate_input"
        );
    }

    #[test]
    fn horizontal_mode_drops_vertical_component() {
        let l = Vec3::new(0.1, 0.5, 1.0);
        let r = Vec3::new(-0.1, -0.5, 1.0);
        let flat = vergence_angle_with(VergenceMode::Horizontal, l, r).unwrap();
        let expected = vergence_angle(Vec3::new(0.1, 0.0, 1.0), Vec3::new(-0.1, 0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(flat, expected, epsilon = 1e-12);
        assert!(vergence_angle_with(VergenceMode::Full3d, l, r).unwrap() > flat);
    }

    #[test]
    fn synthesized_rays_have_requested_vergence() {
        let eyes = EyeConfig::symmetric(IPD).unwrap();
        for (az, v) in [(0.0, 14.768), (25.0, 3.0), (-7.6, 40.0)] {
            let (l, r) = rays_for_vergence(&eyes, az, v);
            assert_abs_diff_eq!(vergence_angle(l.direction, r.direction).unwrap(), v, epsilon = 1e-9);
            let c = cyclopean_direction(l.direction, r.direction).unwrap();
            assert_abs_diff_eq!(c.angles_deg().0, az, epsilon = 1e-9);
        }
    }

    #[test]
    fn velocity_examples() {
        let constant: Vec<_> = (0..5).map(|i| (i as f64 * 0.005, 3.0)).collect();
        assert!(gva_velocity(&constant).iter().all(|(_, v)| *v == Some(0.0)));

        let step = [(0.0, 1.0), (0.005, 11.0)];
        let v = gva_velocity(&step);
        assert_abs_diff_eq!(v[0].1.unwrap(), 2000.0, epsilon = 1e-9);

        let gap = [(0.0, 1.0), (0.005, f64::NAN), (0.010, 1.0), (0.015, 1.0)];
        let v = gva_velocity(&gap);
        assert_eq!(v[0].1, None);
        assert_eq!(v[1].1, None);
        assert_eq!(v[2].1, Some(0.0));

        assert!(gva_velocity(&[(0.0, 1.0)]).is_empty());
        assert!(gva_velocity(&[(0.0, 1.0), (0.005, f64::NAN)]).is_empty());
    }

    #[test]
    fn ideal_vergence_is_nearly_linear_in_diopters() {
        // Least-squares line over D in [0.25, 4]; closed-form simple regression.
        let ds: Vec<f64> = (0..=375).map(|i| 0.25 + i as f64 * 0.01).collect();
        let gs: Vec<f64> = ds.iter().map(|d| ideal_vergence(1.0 / d, 0.065).unwrap()).collect();
        let n = ds.len() as f64;
        let md = ds.iter().sum::<f64>() / n;
        let mg = gs.iter().sum::<f64>() / n;
        let sxy: f64 = ds.iter().zip(&gs).map(|(d, g)| (d - md) * (g - mg)).sum();
        let sxx: f64 = ds.iter().map(|d| (d - md).powi(2)).sum();
        let syy: f64 = gs.iter().map(|g| (g - mg).powi(2)).sum();
        let r2 = sxy * sxy / (sxx * syy);
        assert!(r2 > 0.999, "r2 = {r2}");
    }

    fn direction() -> impl Strategy<Value = Vec3> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_map(|(x, y, z)| Vec3::new(x, y, z))
            .prop_filter("non-zero", |v| v.norm() > 1e-3)
    }

    proptest! {
        #[test]
        fn vergence_is_symmetric_and_scale_invariant(l in direction(), r in direction(), k in 0.01..100.0f64) {
            let a = vergence_angle(l, r).unwrap();
            prop_assert!((0.0..=180.0).contains(&a));
            prop_assert!((a - vergence_angle(r, l).unwrap()).abs() < 1e-9);
            prop_assert!((a - vergence_angle(l * k, r).unwrap()).abs() < 1e-9);
            prop_assert!((a - acos_angle(l, r)).abs() < 1e-6);
        }

        #[test]
        fn ideal_vergence_monotone(d in 0.05..50.0f64, dd in 1e-3..5.0f64, ipd in 0.04..0.08f64, di in 1e-4..0.01f64) {
            let base = ideal_vergence(d, ipd).unwrap();
            prop_assert!(ideal_vergence(d + dd, ipd).unwrap() < base);
            prop_assert!(ideal_vergence(d, ipd + di).unwrap() > base);
        }

        #[test]
        fn midline_forward_model_matches_closed_form(d in 0.1..20.0f64, ipd in 0.04..0.08f64) {
            let eyes = EyeConfig::symmetric(ipd).unwrap();
            let (l, r) = forward_gaze(&TargetSpec::midline(d).unwrap(), &eyes, 0.0).unwrap();
            let a = vergence_angle(l.direction, r.direction).unwrap();
            prop_assert!((a - ideal_vergence(d, ipd).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn diopters_are_an_involution(x in 1e-3..1e3f64) {
            let back = to_diopters(to_diopters(x).unwrap()).unwrap();
            prop_assert!((back - x).abs() <= 1e-12 * x);
        }
    }
}

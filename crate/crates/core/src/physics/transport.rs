//! Ray transport from the source to the detector plane.
//!
//! The chip plane is z = 0 with its inward normal along -z; sources sit at
//! positive z. Emission directions are importance-sampled inside the cone
//! subtending the active area, with the cone's solid-angle fraction applied
//! to the expected photon count, so a run never wastes draws on the empty
//! 4-pi sphere.

use rand::Rng;

use crate::geometry::ArrayGeometry;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Photon {
    pub energy_kev: f64,
    pub origin_mm: [f64; 3],
    pub direction: [f64; 3],
    pub emit_time_s: f64,
}

/// Result of transporting a photon onto a populated pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelHit {
    pub row: u16,
    pub col: u16,
    pub incidence_angle_rad: f64,
    pub path_in_depletion_um: f64,
}

fn norm(v: [f64; 3]) -> f64 {
    libm::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
}

/// Angle between a (unit) propagation direction and the chip's inward
/// normal. Directions moving away from the plane give pi/2 or more.
pub fn incidence_angle(direction: [f64; 3]) -> f64 {
    libm::acos((-direction[2]).clamp(-1.0, 1.0))
}

/// Intersect the photon ray with the chip plane and map it to a populated
/// pixel. `None` is a miss: parallel rays, rays leaving the plane, points
/// outside the active area, and unpopulated row addresses.
pub fn transport_to_pixel(photon: &Photon, geometry: &ArrayGeometry) -> Option<PixelHit> {
    let d = photon.direction;
    if d[2] >= 0.0 || photon.origin_mm[2] <= 0.0 {
        return None;
    }
    let t = -photon.origin_mm[2] / d[2];
    let x = photon.origin_mm[0] + t * d[0];
    let y = photon.origin_mm[1] + t * d[1];
    let (row, col) = geometry.locate(x, y)?;
    let incidence_angle_rad = incidence_angle(d);
    let path_in_depletion_um = geometry.depletion_depth_um / (-d[2]);
    Some(PixelHit { row, col, incidence_angle_rad, path_in_depletion_um })
}

/// Emission cone covering the active area from a source position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmissionCone {
    axis: [f64; 3],
    cos_half_angle: f64,
}

impl EmissionCone {
    /// Smallest axis-to-corner cone that covers the populated array from
    /// `origin_mm`, with a small angular margin so edge pixels are never
    /// clipped.
    pub fn covering(origin_mm: [f64; 3], geometry: &ArrayGeometry) -> Self {
        let [w, h] = geometry.active_size_mm();
        let axis_raw = [-origin_mm[0], -origin_mm[1], -origin_mm[2]];
        let len = norm(axis_raw);
        let axis = [axis_raw[0] / len, axis_raw[1] / len, axis_raw[2] / len];
        let mut cos_min: f64 = 1.0;
        for sx in [-0.5, 0.5] {
            for sy in [-0.5, 0.5] {
                let corner = [sx * w, sy * h, 0.0];
                let v = [
                    corner[0] - origin_mm[0],
                    corner[1] - origin_mm[1],
                    corner[2] - origin_mm[2],
                ];
                let n = norm(v);
                let c = (v[0] * axis[0] + v[1] * axis[1] + v[2] * axis[2]) / n;
                cos_min = cos_min.min(c);
            }
        }
        // Widen by ~1% in (1 - cos) so the cap strictly contains the chip.
        let cos_half_angle = (1.0 - 1.01 * (1.0 - cos_min)).clamp(-1.0, 1.0 - 1e-12);
        Self { axis, cos_half_angle }
    }

    /// Fraction of the full sphere covered by the cone.
    pub fn solid_angle_fraction(&self) -> f64 {
        (1.0 - self.cos_half_angle) / 2.0
    }

    pub fn axis(&self) -> [f64; 3] {
        self.axis
    }

    pub fn half_angle(&self) -> f64 {
        libm::acos(self.cos_half_angle)
    }

    /// Uniform direction within the cone.
    pub fn sample_direction<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 3] {
        let cos_t = self.cos_half_angle + (1.0 - self.cos_half_angle) * rng.gen::<f64>();
        let sin_t = libm::sqrt((1.0 - cos_t * cos_t).max(0.0));
        let phi = 2.0 * core::f64::consts::PI * rng.gen::<f64>();
        let local = [sin_t * libm::cos(phi), sin_t * libm::sin(phi), cos_t];
        // Rotate +z onto the cone axis.
        let a = self.axis;
        if a[2] > 1.0 - 1e-12 {
            return local;
        }
        if a[2] < -1.0 + 1e-12 {
            return [local[0], -local[1], -local[2]];
        }
        // Orthonormal basis around the axis.
        let inv = 1.0 / libm::sqrt(a[0] * a[0] + a[1] * a[1]);
        let u = [-a[1] * inv, a[0] * inv, 0.0];
        let v = [
            a[1] * u[2] - a[2] * u[1],
            a[2] * u[0] - a[0] * u[2],
            a[0] * u[1] - a[1] * u[0],
        ];
        [
            local[0] * u[0] + local[1] * v[0] + local[2] * a[0],
            local[0] * u[1] + local[1] * v[1] + local[2] * a[1],
            local[0] * u[2] + local[1] * v[2] + local[2] * a[2],
        ]
    }
}

/// Exact solid angle (steradian) of the active-area rectangle as seen from
/// an on-axis point at distance `d_mm`. Used as the oracle for the cone
/// sampler's geometric consistency.
pub fn rectangle_solid_angle_on_axis(width_mm: f64, height_mm: f64, d_mm: f64) -> f64 {
    let a = width_mm / 2.0;
    let b = height_mm / 2.0;
    4.0 * libm::atan(a * b / (d_mm * libm::sqrt(d_mm * d_mm + a * a + b * b)))
}

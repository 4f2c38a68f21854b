use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::KinematicsError;

/// Linear map from raw joint feedback counts to angles, fitted from the
/// readings at the two joint limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointCalibration {
    pub raw_at_min: f64,
    pub raw_at_max: f64,
    pub angle_at_min: f64,
    pub angle_at_max: f64,
    pub encoder_bits: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointReading {
    pub angle: f64,
    /// The raw value lay outside `[raw_at_min, raw_at_max]`.
    pub extrapolated: bool,
}

impl JointCalibration {
    /// Calibration for an encoder whose `2^bits` counts span a full turn,
    /// with count 0 at −π.
    pub fn full_turn(bits: u32, angle_at_min: f64, angle_at_max: f64) -> Self {
        let per_rad = (1u64 << bits) as f64 / (2.0 * PI);
        Self {
            raw_at_min: (angle_at_min + PI) * per_rad,
            raw_at_max: (angle_at_max + PI) * per_rad,
            angle_at_min,
            angle_at_max,
            encoder_bits: bits,
        }
    }

    fn slope(&self) -> Result<f64, KinematicsError> {
        if self.raw_at_max == self.raw_at_min {
            return Err(KinematicsError::DegenerateCalibration);
        }
        Ok((self.angle_at_max - self.angle_at_min) / (self.raw_at_max - self.raw_at_min))
    }

    pub fn raw_to_angle(&self, raw: f64) -> Result<JointReading, KinematicsError> {
        let slope = self.slope()?;
        let (lo, hi) = if self.raw_at_min <= self.raw_at_max {
            (self.raw_at_min, self.raw_at_max)
        } else {
            (self.raw_at_max, self.raw_at_min)
        };
        Ok(JointReading {
            angle: self.angle_at_min + (raw - self.raw_at_min) * slope,
            extrapolated: raw < lo || raw > hi,
        })
    }

    pub fn angle_to_raw(&self, angle: f64) -> Result<f64, KinematicsError> {
        let slope = self.slope()?;
        Ok(self.raw_at_min + (angle - self.angle_at_min) / slope)
    }

    /// Rounds `angle` to the nearest representable encoder count.
    pub fn quantize(&self, angle: f64) -> Result<f64, KinematicsError> {
        let max_count = ((1u64 << self.encoder_bits) - 1) as f64;
        let raw = self.angle_to_raw(angle)?.round().clamp(0.0, max_count);
        Ok(self.raw_to_angle(raw)?.angle)
    }
}

/// Angular resolution of a `bits`-bit encoder spanning `range` radians.
pub fn encoder_resolution(bits: u32, range: f64) -> f64 {
    range / 2f64.powi(bits as i32)
}

/// End-effector arc length swept by one encoder step at full reach.
pub fn arc_resolution(res: f64, reach: f64) -> f64 {
    res * reach
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn deg_cal() -> JointCalibration {
        JointCalibration {
            raw_at_min: 0.0,
            raw_at_max: 2047.0,
            angle_at_min: (-90f64).to_radians(),
            angle_at_max: 90f64.to_radians(),
            encoder_bits: 11,
        }
    }

    #[test]
    fn endpoints_and_midpoint() {
        let c = deg_cal();
        assert_eq!(c.raw_to_angle(0.0).unwrap().angle, c.angle_at_min);
        assert_relative_eq!(c.raw_to_angle(2047.0).unwrap().angle, c.angle_at_max, epsilon = 1e-15);
        assert_relative_eq!(c.raw_to_angle(1023.5).unwrap().angle, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn raw_1024_of_2047_spanning_180_degrees() {
        // −90° + 1024 · 180° / 2047
        let expected = -90.0 + 1024.0 * 180.0 / 2047.0;
        let got = deg_cal().raw_to_angle(1024.0).unwrap().angle.to_degrees();
        assert_relative_eq!(got, expected, epsilon = 1e-12);
        assert_relative_eq!(got, 0.043966, epsilon = 1e-6);
    }

    #[test]
    fn extrapolation_is_flagged() {
        let c = deg_cal();
        assert!(!c.raw_to_angle(10.0).unwrap().extrapolated);
        let r = c.raw_to_angle(2100.0).unwrap();
        assert!(r.extrapolated);
        assert!(r.angle > c.angle_at_max);
    }

    #[test]
    fn degenerate_calibration() {
        let mut c = deg_cal();
        c.raw_at_max = c.raw_at_min;
        assert_eq!(c.raw_to_angle(5.0), Err(KinematicsError::DegenerateCalibration));
    }

    #[test]
    fn eleven_bit_full_turn() {
        let r = encoder_resolution(11, 2.0 * PI);
        assert_relative_eq!(r.to_degrees(), 0.17578, epsilon = 1e-5);
        assert!((r.to_degrees() - 0.176).abs() < 5e-4);
        let arc = arc_resolution(r, 1.3);
        assert_relative_eq!(arc * 1000.0, 3.99, epsilon = 5e-3);
        assert!((arc * 1000.0 - 4.0).abs() < 0.05);
        assert_relative_eq!(encoder_resolution(1, 2.0 * PI), PI);
    }

    #[test]
    fn quantization_step_matches_resolution() {
        let c = JointCalibration::full_turn(11, -PI / 2.0, PI / 2.0);
        let step = encoder_resolution(11, 2.0 * PI);
        for a in [-1.2, -0.3, 0.0, 0.41, 1.5] {
            let q = c.quantize(a).unwrap();
            assert!((q - a).abs() <= step / 2.0 + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn exactly_linear(r1 in -5000.0..5000.0f64, r2 in -5000.0..5000.0f64, l in 0.0..1.0f64) {
            let c = deg_cal();
            let a1 = c.raw_to_angle(r1).unwrap().angle;
            let a2 = c.raw_to_angle(r2).unwrap().angle;
            let mix = c.raw_to_angle(l * r1 + (1.0 - l) * r2).unwrap().angle;
            prop_assert!((mix - (l * a1 + (1.0 - l) * a2)).abs() < 1e-9);
        }

        #[test]
        fn angle_raw_round_trip(a in -1.5..1.5f64) {
            let c = deg_cal();
            let back = c.raw_to_angle(c.angle_to_raw(a).unwrap()).unwrap().angle;
            prop_assert!((back - a).abs() < 1e-12);
        }
    }
}

//! Hydraulic joint model: first-order lag toward `setpoint + bias`, rate
//! limited, followed by a symmetric backlash (play) element.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorParams {
    #[serde(default)]
    pub bias: f64,
    #[serde(default)]
    pub backlash_halfwidth: f64,
    pub rate_limit: f64,
    pub time_constant: f64,
    #[serde(default)]
    pub feedback_noise_std: f64,
}

impl ActuatorParams {
    /// Nominal testbed joint: 0.3° backlash, 30°/s, 0.15 s lag, 0.05° noise.
    pub fn nominal() -> Self {
        Self {
            bias: 0.0,
            backlash_halfwidth: 0.3f64.to_radians(),
            rate_limit: 30f64.to_radians(),
            time_constant: 0.15,
            feedback_noise_std: 0.05f64.to_radians(),
        }
    }

    /// No bias, play or noise.
    pub fn ideal() -> Self {
        Self {
            bias: 0.0,
            backlash_halfwidth: 0.0,
            rate_limit: 60f64.to_radians(),
            time_constant: 0.1,
            feedback_noise_std: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.rate_limit > 0.0 && self.time_constant > 0.0) {
            return Err("rate_limit and time_constant must be positive".into());
        }
        if self.backlash_halfwidth < 0.0 || self.feedback_noise_std < 0.0 {
            return Err("backlash_halfwidth and feedback_noise_std must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorState {
    /// Output (link-side) angle.
    pub position: f64,
    pub setpoint: f64,
    pub params: ActuatorParams,
    /// Drive-side angle before the backlash element.
    pub drive: f64,
    /// Last sampled, noisy and quantized feedback.
    pub feedback: f64,
}

impl ActuatorState {
    pub fn at_rest(angle: f64, params: ActuatorParams) -> Self {
        Self {
            position: angle,
            setpoint: angle - params.bias,
            params,
            drive: angle,
            feedback: angle,
        }
    }

    /// Angle the drive converges to under the current setpoint.
    pub fn equilibrium(&self) -> f64 {
        self.setpoint + self.params.bias
    }

    pub fn advance(&mut self, dt: f64) {
        let p = &self.params;
        let target = self.setpoint + p.bias;
        let alpha = 1.0 - (-dt / p.time_constant).exp();
        let max_step = p.rate_limit * dt;
        let step = ((target - self.drive) * alpha).clamp(-max_step, max_step);
        self.drive += step;
        let h = p.backlash_halfwidth;
        if self.drive - self.position > h {
            self.position = self.drive - h;
        } else if self.position - self.drive > h {
            self.position = self.drive + h;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn settle(a: &mut ActuatorState, secs: f64) {
        let dt = 0.02;
        for _ in 0..(secs / dt).round() as usize {
            a.advance(dt);
        }
    }

    #[test]
    fn ideal_actuator_reaches_setpoint() {
        let mut a = ActuatorState::at_rest(0.0, ActuatorParams::ideal());
        a.setpoint = 0.7;
        settle(&mut a, 20.0);
        assert!((a.position - 0.7).abs() < 1e-9);
    }

    #[test]
    fn bias_offsets_settled_position() {
        let bias = 1.5f64.to_radians();
        let mut a = ActuatorState::at_rest(0.0, ActuatorParams { bias, ..ActuatorParams::ideal() });
        a.setpoint = 0.3;
        settle(&mut a, 20.0);
        assert_relative_eq!(a.position - a.setpoint, bias, epsilon = 1e-9);
    }

    #[test]
    fn backlash_splits_approach_directions_by_twice_halfwidth() {
        let h = 0.3f64.to_radians();
        let params = ActuatorParams { backlash_halfwidth: h, ..ActuatorParams::ideal() };
        let mut below = ActuatorState::at_rest(-0.2, params);
        let mut above = ActuatorState::at_rest(0.2, params);
        below.setpoint = 0.0;
        above.setpoint = 0.0;
        settle(&mut below, 20.0);
        settle(&mut above, 20.0);
        assert_relative_eq!(above.position - below.position, 2.0 * h, epsilon = 1e-9);
    }

    #[test]
    fn rate_limit_bounds_speed() {
        let params = ActuatorParams::nominal();
        let mut a = ActuatorState::at_rest(0.0, params);
        a.setpoint = 2.0;
        let dt = 0.02;
        let mut last = a.position;
        for _ in 0..200 {
            a.advance(dt);
            assert!((a.position - last).abs() <= params.rate_limit * dt + 1e-12);
            last = a.position;
        }
    }

    #[test]
    fn settles_within_five_time_constants() {
        let res = crate::kinematics::encoder_resolution(11, 2.0 * std::f64::consts::PI);
        for step_deg in [2.0f64, 10.0, 25.0] {
            let params = ActuatorParams { rate_limit: 10.0, ..ActuatorParams::nominal() };
            let mut a = ActuatorState::at_rest(0.0, params);
            a.setpoint = step_deg.to_radians();
            settle(&mut a, 5.0 * params.time_constant);
            let eq = a.equilibrium() - params.backlash_halfwidth;
            assert!((a.position - eq).abs() <= res, "{step_deg}: {}", (a.position - eq).abs());
        }
    }

    #[test]
    fn no_motion_without_command() {
        let mut a = ActuatorState::at_rest(0.4, ActuatorParams::nominal());
        let before = a;
        settle(&mut a, 5.0);
        assert_eq!(a.position, before.position);
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::CalibrationError;

/// Histogram bin width (rad).
pub const HISTOGRAM_BIN: f64 = 0.5 * std::f64::consts::PI / 180.0;
const MIN_SETTLED: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseParams {
    /// The command must be unchanged for this long (s).
    pub settle_time: f64,
    /// Feedback slope limit (rad/s).
    pub max_velocity: f64,
    /// Trailing window for the slope fit (s).
    pub velocity_window: f64,
}

impl Default for ResponseParams {
    fn default() -> Self {
        Self {
            settle_time: 1.0,
            max_velocity: 0.05f64.to_radians(),
            velocity_window: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointResponseProfile {
    /// Mean of feedback − command over settled samples (rad).
    pub bias: f64,
    /// |rising mean − falling mean| (rad).
    pub hysteresis_width: f64,
    pub rising_mean: Option<f64>,
    pub falling_mean: Option<f64>,
    /// Bin index `k` covers `[(k − ½)·bin, (k + ½)·bin)`.
    pub histogram: BTreeMap<i64, usize>,
    pub settled: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLogRow {
    pub t: f64,
    pub joint: usize,
    pub commanded: f64,
    pub feedback: f64,
}

/// Least-squares slope of `(t, y)` pairs.
fn slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let mt = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, y) in points {
        sxy += (t - mt) * (y - my);
        sxx += (t - mt) * (t - mt);
    }
    (sxx > 0.0).then(|| sxy / sxx)
}

fn bin_of(err: f64) -> i64 {
    (err / HISTOGRAM_BIN + 0.5).floor() as i64
}

/// Bias, hysteresis and error histogram of one joint from time-sorted
/// `(t, commanded, feedback)` samples. Only settled samples count: the
/// command has been constant for `settle_time` and the feedback slope over
/// the trailing window is below `max_velocity`.
pub fn estimate_joint_response(
    samples: &[(f64, f64, f64)],
    params: &ResponseParams,
) -> Result<JointResponseProfile, CalibrationError> {
    let mut errors = Vec::new();
    let (mut rising, mut falling) = (Vec::new(), Vec::new());
    let mut segment_start = 0;
    // +1 rising, −1 falling, 0 unknown (first command).
    let mut direction = 0i8;
    for k in 0..samples.len() {
        let (t, cmd, fb) = samples[k];
        if k > 0 && cmd != samples[k - 1].1 {
            direction = if cmd > samples[k - 1].1 { 1 } else { -1 };
            segment_start = k;
        }
        let t0 = samples[segment_start].0;
        if t - t0 < params.settle_time {
            continue;
        }
        let window: Vec<(f64, f64)> = samples[segment_start..=k]
            .iter()
            .rev()
            .take_while(|s| t - s.0 <= params.velocity_window)
            .map(|s| (s.0, s.2))
            .collect();
        match slope(&window) {
            Some(v) if v.abs() < params.max_velocity => {}
            _ => continue,
        }
        let e = fb - cmd;
        errors.push(e);
        match direction {
            1 => rising.push(e),
            -1 => falling.push(e),
            _ => {}
        }
    }
    if errors.len() < MIN_SETTLED {
        return Err(CalibrationError::InsufficientSettledSamples { got: errors.len(), needed: MIN_SETTLED });
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let mut histogram = BTreeMap::new();
    for e in &errors {
        *histogram.entry(bin_of(*e)).or_insert(0) += 1;
    }
    let (rising_mean, falling_mean) = (mean(&rising), mean(&falling));
    let hysteresis_width = match (rising_mean, falling_mean) {
        (Some(r), Some(f)) => (r - f).abs(),
        _ => 0.0,
    };
    Ok(JointResponseProfile {
        bias: mean(&errors).expect("nonempty"),
        hysteresis_width,
        rising_mean,
        falling_mean,
        histogram,
        settled: errors.len(),
    })
}

/// Parses `t,joint,commanded_rad,feedback_rad` lines. A header line is
/// skipped.
pub fn parse_joint_log(text: &str) -> Result<Vec<JointLogRow>, CalibrationError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("t,") {
            continue;
        }
        let bad = |message: String| CalibrationError::BadLog { line: i + 1, message };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
        out.push(JointLogRow {
            t: num(f[0])?,
            joint: f[1].parse().map_err(|e| bad(format!("joint `{}`: {e}", f[1])))?,
            commanded: num(f[2])?,
            feedback: num(f[3])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{ActuatorParams, Command, CommandSource, Simulator};

    fn staircase(bias_deg: f64, joint: usize, scene: crate::simulation::Scene, seed: u64) -> Vec<(f64, f64, f64)> {
        let mut scene = scene;
        scene.actuators[joint] = ActuatorParams { bias: bias_deg.to_radians(), ..ActuatorParams::nominal() };
        let mut sim = Simulator::with_seed(scene, seed);
        let base = sim.setpoints();
        let mut log = Vec::new();
        let offsets = [0.0, 10.0, 4.0, 14.0, 6.0, -4.0, 8.0, -2.0, 12.0, 0.0];
        for (i, off) in offsets.iter().cycle().take(20).enumerate() {
            let mut q = base.clone();
            q[joint] += (off + (i / 10) as f64 * 0.7).to_radians();
            sim.apply(CommandSource::Execution, Command::Setpoints { q: q.0.clone() });
            for _ in 0..200 {
                sim.step();
                log.push((sim.time(), sim.setpoints()[joint], sim.feedback()[joint]));
            }
        }
        log
    }

    #[test]
    fn perfect_actuator() {
        let samples: Vec<_> = (0..500)
            .map(|i| {
                let c = if i < 250 { 0.1 } else { 0.3 };
                (i as f64 * 0.02, c, c)
            })
            .collect();
        let p = estimate_joint_response(&samples, &ResponseParams::default()).unwrap();
        assert_eq!(p.bias, 0.0);
        assert_eq!(p.hysteresis_width, 0.0);
        assert_eq!(p.histogram.len(), 1);
        assert_eq!(p.histogram[&0], p.settled);
    }

    #[test]
    fn recovers_testbed_wrist_bias() {
        let scene = crate::simulation::tests::testbed().scene;
        let log = staircase(1.5, 4, scene, 21);
        let p = estimate_joint_response(&log, &ResponseParams::default()).unwrap();
        assert!((p.bias.to_degrees() - 1.5).abs() <= 0.2, "{}", p.bias.to_degrees());
        assert_eq!(p.histogram.values().sum::<usize>(), p.settled);
        // Backlash 0.3° half-width separates rising and falling by 0.6°.
        assert!((p.hysteresis_width.to_degrees() - 0.6).abs() < 0.2, "{}", p.hysteresis_width.to_degrees());
    }

    #[test]
    fn recovers_nui_shoulder_bias() {
        let scene = crate::simulation::tests::nui_scene();
        let log = staircase(8.0, 0, scene, 22);
        let p = estimate_joint_response(&log, &ResponseParams::default()).unwrap();
        assert!((p.bias.to_degrees() - 8.0).abs() <= 0.2, "{}", p.bias.to_degrees());
        assert_eq!(p.histogram.values().sum::<usize>(), p.settled);
    }

    #[test]
    fn moving_samples_are_not_settled() {
        let samples: Vec<_> = (0..200).map(|i| (i as f64 * 0.02, 0.0, i as f64 * 0.001)).collect();
        assert!(matches!(
            estimate_joint_response(&samples, &ResponseParams::default()),
            Err(CalibrationError::InsufficientSettledSamples { .. })
        ));
    }

    #[test]
    fn bins_are_centred_on_zero() {
        assert_eq!(bin_of(0.0), 0);
        assert_eq!(bin_of(0.24f64.to_radians()), 0);
        assert_eq!(bin_of(0.26f64.to_radians()), 1);
        assert_eq!(bin_of(-0.26f64.to_radians()), -1);
        assert_eq!(bin_of(1.5f64.to_radians()), 3);
    }

    #[test]
    fn parses_joint_log() {
        let rows = parse_joint_log("t,joint,commanded_rad,feedback_rad\n0.5,3,0.1,0.11\n").unwrap();
        assert_eq!(rows, vec![JointLogRow { t: 0.5, joint: 3, commanded: 0.1, feedback: 0.11 }]);
    }
}

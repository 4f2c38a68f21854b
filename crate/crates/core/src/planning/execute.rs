//! Streams a trajectory as position setpoints and monitors the settled
//! feedback against the commands.

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use super::rrt::Trajectory;
use crate::kinematics::JointVector;
use crate::simulation::{Command, CommandSource, Simulator};

/// Position-setpoint interface of the arm driver.
pub trait Controller {
    /// Control tick (s).
    fn dt(&self) -> f64;
    fn send_setpoints(&mut self, q: &JointVector);
    /// Stop all motion where it is.
    fn hold(&mut self);
    fn feedback(&self) -> JointVector;
    /// Advance one control tick.
    fn tick(&mut self);
}

impl Controller for Simulator {
    fn dt(&self) -> f64 {
        self.dt
    }

    fn send_setpoints(&mut self, q: &JointVector) {
        self.apply(CommandSource::Execution, Command::Setpoints { q: q.0.clone() });
    }

    fn hold(&mut self) {
        self.apply(CommandSource::Stop, Command::Hold);
    }

    fn feedback(&self) -> JointVector {
        Simulator::feedback(self)
    }

    fn tick(&mut self) {
        self.step();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorParams {
    /// Largest tolerated |commanded − feedback| on any joint once settled (rad).
    pub max_dev: f64,
    /// Dwell after each waypoint's scheduled time before sampling feedback (s).
    pub settle_time: f64,
    /// Extra dwell at the final waypoint (s).
    pub final_settle: f64,
    /// Setpoint corrections from feedback at the final waypoint.
    pub final_corrections: usize,
    /// Final corrections stop once every joint is within this (rad).
    pub final_tolerance: f64,
}

impl Default for MonitorParams {
    fn default() -> Self {
        Self {
            max_dev: 5f64.to_radians(),
            settle_time: 0.3,
            final_settle: 1.0,
            final_corrections: 0,
            final_tolerance: 0.2f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointRecord {
    pub index: usize,
    pub commanded: JointVector,
    pub feedback: JointVector,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ExecStatus {
    Completed,
    Stopped { at_waypoint: usize },
    DeviationExceeded { at_waypoint: usize, joint: usize, deviation: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub status: ExecStatus,
    pub records: Vec<WaypointRecord>,
    pub max_deviation: f64,
    pub setpoints_sent: usize,
    pub ticks: usize,
}

impl ExecutionReport {
    pub fn completed(&self) -> bool {
        self.status == ExecStatus::Completed
    }
}

fn worst_joint(cmd: &JointVector, fb: &JointVector) -> (usize, f64) {
    cmd.iter()
        .zip(fb.iter())
        .map(|(c, f)| (c - f).abs())
        .enumerate()
        .fold((0, 0.0), |b, (i, d)| if d > b.1 { (i, d) } else { b })
}

/// Sends each waypoint at its scheduled time, dwells `settle_time`, then
/// compares feedback with the command. A deviation above `max_dev` holds the
/// arm and aborts. `stop` is polled every tick; once set, the arm is held and
/// no further setpoints are sent.
pub fn execute(
    traj: &Trajectory,
    controller: &mut dyn Controller,
    params: &MonitorParams,
    stop: &AtomicBool,
) -> ExecutionReport {
    let dt = controller.dt();
    let mut report = ExecutionReport {
        status: ExecStatus::Completed,
        records: Vec::new(),
        max_deviation: 0.0,
        setpoints_sent: 0,
        ticks: 0,
    };
    let last = traj.waypoints.len() - 1;
    let mut prev_t = traj.waypoints[0].t;
    for (i, wp) in traj.waypoints.iter().enumerate() {
        if stop.load(Ordering::SeqCst) {
            controller.hold();
            report.status = ExecStatus::Stopped { at_waypoint: i };
            return report;
        }
        controller.send_setpoints(&wp.q);
        report.setpoints_sent += 1;
        let dwell = (wp.t - prev_t) + params.settle_time + if i == last { params.final_settle } else { 0.0 };
        prev_t = wp.t;
        let ticks = (dwell / dt).ceil().max(1.0) as usize;
        for _ in 0..ticks {
            if stop.load(Ordering::SeqCst) {
                controller.hold();
                report.status = ExecStatus::Stopped { at_waypoint: i };
                return report;
            }
            controller.tick();
            report.ticks += 1;
        }
        let mut fb = controller.feedback();
        if i == last && worst_joint(&wp.q, &fb).1 <= params.max_dev {
            let mut cmd = wp.q.clone();
            for _ in 0..params.final_corrections {
                if worst_joint(&wp.q, &fb).1 <= params.final_tolerance {
                    break;
                }
                cmd = JointVector(cmd.iter().zip(wp.q.iter().zip(fb.iter())).map(|(c, (q, f))| c + q - f).collect());
                controller.send_setpoints(&cmd);
                report.setpoints_sent += 1;
                for _ in 0..((params.settle_time + params.final_settle) / dt).ceil() as usize {
                    if stop.load(Ordering::SeqCst) {
                        controller.hold();
                        report.status = ExecStatus::Stopped { at_waypoint: i };
                        return report;
                    }
                    controller.tick();
                    report.ticks += 1;
                }
                fb = controller.feedback();
            }
        }
        let (joint, deviation) = worst_joint(&wp.q, &fb);
        report.max_deviation = report.max_deviation.max(deviation);
        report.records.push(WaypointRecord { index: i, commanded: wp.q.clone(), feedback: fb, deviation });
        if deviation > params.max_dev {
            controller.hold();
            report.status = ExecStatus::DeviationExceeded { at_waypoint: i, joint, deviation };
            return report;
        }
    }
    report
}

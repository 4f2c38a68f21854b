//! Pick-and-place task state machine. Motion phases are entered only by an
//! operator `Confirm` of a displayed plan; illegal events are no-ops that
//! carry a warning.

use serde::{Deserialize, Serialize};

use super::rrt::Trajectory;
use crate::geometry::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    ToolSelected,
    PlanGrasp,
    AwaitConfirmGrasp,
    ExecGrasp,
    Grasped,
    PlanSample,
    AwaitConfirmSample,
    ExecSample,
    SampleDone,
    PlanReturn,
    AwaitConfirmReturn,
    ExecReturn,
    Done,
    Aborted,
}

impl Phase {
    pub const ALL: [Phase; 15] = [
        Phase::Idle,
        Phase::ToolSelected,
        Phase::PlanGrasp,
        Phase::AwaitConfirmGrasp,
        Phase::ExecGrasp,
        Phase::Grasped,
        Phase::PlanSample,
        Phase::AwaitConfirmSample,
        Phase::ExecSample,
        Phase::SampleDone,
        Phase::PlanReturn,
        Phase::AwaitConfirmReturn,
        Phase::ExecReturn,
        Phase::Done,
        Phase::Aborted,
    ];

    pub fn is_exec(self) -> bool {
        matches!(self, Phase::ExecGrasp | Phase::ExecSample | Phase::ExecReturn)
    }

    pub fn is_plan(self) -> bool {
        matches!(self, Phase::PlanGrasp | Phase::PlanSample | Phase::PlanReturn)
    }

    pub fn is_await(self) -> bool {
        matches!(self, Phase::AwaitConfirmGrasp | Phase::AwaitConfirmSample | Phase::AwaitConfirmReturn)
    }

    /// Phases in which direct operator motion (named poses, gripper) is allowed.
    pub fn allows_direct_motion(self) -> bool {
        !(self.is_plan() || self.is_await() || self.is_exec())
    }

    fn await_of(self) -> Option<Phase> {
        match self {
            Phase::PlanGrasp => Some(Phase::AwaitConfirmGrasp),
            Phase::PlanSample => Some(Phase::AwaitConfirmSample),
            Phase::PlanReturn => Some(Phase::AwaitConfirmReturn),
            _ => None,
        }
    }

    fn plan_of(self) -> Option<Phase> {
        match self {
            Phase::AwaitConfirmGrasp | Phase::ExecGrasp => Some(Phase::PlanGrasp),
            Phase::AwaitConfirmSample | Phase::ExecSample => Some(Phase::PlanSample),
            Phase::AwaitConfirmReturn | Phase::ExecReturn => Some(Phase::PlanReturn),
            p if p.is_plan() => Some(p),
            _ => None,
        }
    }

    fn exec_of(self) -> Option<Phase> {
        match self {
            Phase::AwaitConfirmGrasp => Some(Phase::ExecGrasp),
            Phase::AwaitConfirmSample => Some(Phase::ExecSample),
            Phase::AwaitConfirmReturn => Some(Phase::ExecReturn),
            _ => None,
        }
    }

    fn after_exec(self) -> Option<Phase> {
        match self {
            Phase::ExecGrasp => Some(Phase::Grasped),
            Phase::ExecSample => Some(Phase::SampleDone),
            Phase::ExecReturn => Some(Phase::Done),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TaskEvent {
    SelectTool { tool: String },
    SetMarker { pose: Pose },
    RequestPlan,
    /// Planner finished for the current `Plan*` phase.
    PlanReady { plan: Trajectory },
    PlanFailed { error: String },
    Confirm,
    Reject,
    Stop,
    Abort,
    Retry,
    GripperOpen,
    GripperClose,
    GotoNamedPose { name: String },
    ExecDone,
    ExecFailed { error: String },
}

impl TaskEvent {
    pub fn name(&self) -> &'static str {
        match self {
            TaskEvent::SelectTool { .. } => "select_tool",
            TaskEvent::SetMarker { .. } => "set_marker",
            TaskEvent::RequestPlan => "request_plan",
            TaskEvent::PlanReady { .. } => "plan_ready",
            TaskEvent::PlanFailed { .. } => "plan_failed",
            TaskEvent::Confirm => "confirm",
            TaskEvent::Reject => "reject",
            TaskEvent::Stop => "stop",
            TaskEvent::Abort => "abort",
            TaskEvent::Retry => "retry",
            TaskEvent::GripperOpen => "gripper_open",
            TaskEvent::GripperClose => "gripper_close",
            TaskEvent::GotoNamedPose { .. } => "goto_named_pose",
            TaskEvent::ExecDone => "exec_done",
            TaskEvent::ExecFailed { .. } => "exec_failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskState {
    pub phase: Phase,
    pub selected_tool: Option<String>,
    pub marker: Option<Pose>,
    pub active_plan: Option<Trajectory>,
    pub last_error: Option<String>,
    /// `Plan*` phase that `Retry` returns to from `Aborted`.
    pub resume: Option<Phase>,
    /// Planner requested for the current `Plan*` phase and not yet answered.
    pub planning: bool,
}

impl Default for TaskState {
    fn default() -> Self {
        Self {
            phase: Phase::Idle,
            selected_tool: None,
            marker: None,
            active_plan: None,
            last_error: None,
            resume: None,
            planning: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: TaskState,
    /// Set when the event was illegal in the source phase; the state is then
    /// unchanged.
    pub warning: Option<String>,
}

impl Transition {
    pub fn legal(&self) -> bool {
        self.warning.is_none()
    }
}

impl TaskState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies `event`, returning the next state or the unchanged state and
    /// a warning.
    pub fn advance(&self, event: &TaskEvent) -> Transition {
        match self.next(event) {
            Some(state) => Transition { state, warning: None },
            None => {
                let w = format!("event {} ignored in phase {:?}", event.name(), self.phase);
                log::warn!("{w}");
                Transition { state: self.clone(), warning: Some(w) }
            }
        }
    }

    fn with_phase(&self, phase: Phase) -> Self {
        Self { phase, ..self.clone() }
    }

    fn next(&self, event: &TaskEvent) -> Option<TaskState> {
        use Phase::*;
        let p = self.phase;
        match event {
            TaskEvent::SelectTool { tool } => match p {
                Idle | ToolSelected | Done | Aborted => Some(TaskState {
                    phase: ToolSelected,
                    selected_tool: Some(tool.clone()),
                    active_plan: None,
                    last_error: None,
                    resume: None,
                    planning: false,
                    marker: self.marker,
                }),
                _ => None,
            },
            TaskEvent::SetMarker { pose } => match p {
                Idle | ToolSelected | Grasped | PlanSample | Aborted => {
                    let mut s = self.clone();
                    s.marker = Some(*pose);
                    if p == PlanSample {
                        s.planning = false;
                    }
                    Some(s)
                }
                _ => None,
            },
            TaskEvent::RequestPlan => {
                let target = match p {
                    ToolSelected => PlanGrasp,
                    Grasped => PlanSample,
                    SampleDone => PlanReturn,
                    q if q.is_plan() => q,
                    _ => return None,
                };
                if target == PlanSample && self.marker.is_none() {
                    return None;
                }
                let mut s = self.with_phase(target);
                s.planning = true;
                s.active_plan = None;
                Some(s)
            }
            TaskEvent::PlanReady { plan } => {
                if !(p.is_plan() && self.planning) {
                    return None;
                }
                let mut s = self.with_phase(p.await_of()?);
                s.active_plan = Some(plan.clone());
                s.planning = false;
                s.last_error = None;
                Some(s)
            }
            TaskEvent::PlanFailed { error } => {
                if !(p.is_plan() && self.planning) {
                    return None;
                }
                let mut s = self.clone();
                s.planning = false;
                s.last_error = Some(error.clone());
                Some(s)
            }
            TaskEvent::Confirm => {
                let exec = p.exec_of()?;
                self.active_plan.as_ref()?;
                Some(self.with_phase(exec))
            }
            TaskEvent::Reject => {
                if !p.is_await() {
                    return None;
                }
                let mut s = self.with_phase(p.plan_of()?);
                s.active_plan = None;
                Some(s)
            }
            TaskEvent::Stop => {
                if p.is_exec() {
                    Some(self.aborted("stopped by operator"))
                } else {
                    Some(self.clone())
                }
            }
            TaskEvent::Abort => match p {
                Done | Aborted => None,
                _ => Some(self.aborted("aborted by operator")),
            },
            TaskEvent::Retry => {
                if p != Aborted {
                    return None;
                }
                let mut s = self.with_phase(self.resume?);
                s.planning = true;
                s.active_plan = None;
                Some(s)
            }
            TaskEvent::GripperOpen | TaskEvent::GripperClose | TaskEvent::GotoNamedPose { .. } => {
                p.allows_direct_motion().then(|| self.clone())
            }
            TaskEvent::ExecDone => {
                let next = p.after_exec()?;
                let mut s = self.with_phase(next);
                s.active_plan = None;
                Some(s)
            }
            TaskEvent::ExecFailed { error } => {
                if !p.is_exec() {
                    return None;
                }
                Some(self.aborted(error))
            }
        }
    }

    fn aborted(&self, why: &str) -> TaskState {
        let resume = self.phase.plan_of().or(match self.phase {
            Phase::ToolSelected => Some(Phase::PlanGrasp),
            Phase::Grasped => Some(Phase::PlanSample),
            Phase::SampleDone => Some(Phase::PlanReturn),
            _ => None,
        });
        TaskState {
            phase: Phase::Aborted,
            active_plan: None,
            last_error: Some(why.to_string()),
            resume,
            planning: false,
            ..self.clone()
        }
    }
}

//! `uvms`: run the simulated testbed, plan motions and serve operators.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use uvms_core::planning::{
    marker_above, plan_rrt_star, Executive, ExecutiveConfig, Phase, PlannerParams, PlanningProblem, TaskState,
};
use uvms_core::simulation::{Scene, Simulator};
use uvms_core::JointVector;
use uvms_service::bridge::spawn_bridge;
use uvms_service::{Service, ServiceConfig};

#[derive(Parser)]
#[command(name = "uvms", version, about = "Supervised manipulation testbed in simulation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scripted pick-and-place cycle and write JSONL logs.
    Simulate(SimulateArgs),
    /// Plan a collision-free joint trajectory and print it as JSON.
    Plan(PlanArgs),
    /// Serve operators over the framed JSON protocol.
    Serve(ServeArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Logging rate for state and observations.
    #[arg(long, default_value_t = 3.0)]
    obs_hz: f64,
    /// Physics step (s).
    #[arg(long, default_value_t = 0.02)]
    dt: f64,
    #[arg(long)]
    log_dir: PathBuf,
    #[arg(long, default_value = "pushcore")]
    tool: String,
    /// Terrain box the sample marker is placed above.
    #[arg(long, default_value = "sample_site")]
    site: String,
    #[arg(long, default_value_t = 3)]
    max_retries: usize,
}

#[derive(Args)]
struct PlanArgs {
    /// Scene whose terrain, vehicle and tools form the obstacles.
    #[arg(long, conflicts_with = "problem", required_unless_present = "problem")]
    scene: Option<PathBuf>,
    /// Self-contained planning problem instead of a scene.
    #[arg(long)]
    problem: Option<PathBuf>,
    /// JSON array of start joint angles (rad). Defaults to the scene's
    /// initial configuration or the problem's start.
    #[arg(long)]
    start_json: Option<PathBuf>,
    /// A named pose, a JSON file with joint angles, or comma-separated angles.
    #[arg(long)]
    goal: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_time: Option<f64>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 7400)]
    port: u16,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also accept browser consoles over WebSocket on this port.
    #[arg(long)]
    ws_port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    /// Simulated seconds per wall second.
    #[arg(long, default_value_t = 1.0)]
    time_scale: f64,
}

type Result<T> = std::result::Result<T, String>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Plan(a) => plan(a),
        Cmd::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_scene(path: &Path) -> Result<Scene> {
    Scene::load(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn executive(scene: Scene, seed: u64) -> Executive {
    let config = ExecutiveConfig { planner: PlannerParams { seed, ..ExecutiveConfig::default().planner }, ..Default::default() };
    Executive::new(Simulator::with_seed(scene, seed), config)
}

#[derive(Serialize)]
struct StateLine<'a> {
    time: f64,
    phase: Phase,
    feedback: &'a [f64],
    joints: &'a [f64],
    doors: (f64, f64),
    held_tool: Option<&'a str>,
}

struct Logs {
    states: BufWriter<File>,
    observations: BufWriter<File>,
    rng: ChaCha8Rng,
    next: f64,
    period: f64,
    error: Option<String>,
}

impl Logs {
    fn record(&mut self, sim: &Simulator, task: &TaskState) {
        if sim.time() + 1e-9 < self.next || self.error.is_some() {
            return;
        }
        self.next += self.period;
        let (fb, q) = (sim.feedback(), sim.true_joints());
        let line = StateLine {
            time: sim.time(),
            phase: task.phase,
            feedback: &fb.0,
            joints: &q.0,
            doors: sim.world().door_angles,
            held_tool: sim.held_tool(),
        };
        let obs = sim.observe_using(None, &mut self.rng);
        let r = serde_json::to_writer(&mut self.states, &line)
            .map_err(|e| e.to_string())
            .and_then(|_| writeln!(self.states).map_err(|e| e.to_string()))
            .and_then(|_| serde_json::to_writer(&mut self.observations, &obs).map_err(|e| e.to_string()))
            .and_then(|_| writeln!(self.observations).map_err(|e| e.to_string()));
        if let Err(e) = r {
            self.error = Some(e);
        }
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    File::create(dir.join(name)).map(BufWriter::new).map_err(|e| format!("{}: {e}", dir.join(name).display()))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    if !(a.dt > 0.0) || !(a.obs_hz > 0.0) {
        return Err("--dt and --obs-hz must be positive".into());
    }
    let scene = load_scene(&a.scene)?;
    fs::create_dir_all(&a.log_dir).map_err(|e| format!("{}: {e}", a.log_dir.display()))?;
    let mut ex = executive(scene, a.seed);
    ex.sim.dt = a.dt;
    let marker = marker_above(&ex.sim, &a.site, 0.05).ok_or_else(|| format!("scene has no terrain box `{}`", a.site))?;
    let survey = ex.sim.scene.named_poses.contains_key("survey").then_some("survey");

    let logs = Arc::new(Mutex::new(Logs {
        states: create(&a.log_dir, "states.jsonl")?,
        observations: create(&a.log_dir, "observations.jsonl")?,
        rng: ChaCha8Rng::seed_from_u64(a.seed ^ 0x0b5e_0b5e),
        next: 0.0,
        period: 1.0 / a.obs_hz,
        error: None,
    }));
    let sink = Arc::clone(&logs);
    ex.set_observer(Some(Box::new(move |sim, task| sink.lock().expect("log lock").record(sim, task))));
    logs.lock().expect("log lock").record(&ex.sim, &ex.task);
    let outcome = ex.run_pick_and_place(&a.tool, marker, survey, a.max_retries);
    ex.set_observer(None);

    let mut logs = Arc::try_unwrap(logs).map_err(|_| "log sink still shared")?.into_inner().map_err(|e| e.to_string())?;
    if let Some(e) = logs.error.take() {
        return Err(e);
    }
    logs.states.flush().map_err(|e| e.to_string())?;
    logs.observations.flush().map_err(|e| e.to_string())?;
    let mut commands = create(&a.log_dir, "commands.jsonl")?;
    for c in ex.sim.command_log() {
        serde_json::to_writer(&mut commands, c).map_err(|e| e.to_string())?;
        writeln!(commands).map_err(|e| e.to_string())?;
    }
    commands.flush().map_err(|e| e.to_string())?;
    let summary = serde_json::json!({
        "outcome": outcome,
        "warnings": ex.warnings,
        "sim_time": ex.sim.time(),
        "reports": ex.reports,
    });
    fs::write(a.log_dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("summary serializes"))
        .map_err(|e| e.to_string())?;
    info!("cycle {} in phase {:?} after {:.1} s simulated", if outcome.done { "done" } else { "stopped" }, outcome.final_phase, ex.sim.time());
    println!("{}", serde_json::to_string(&outcome).expect("outcome serializes"));
    if outcome.done {
        Ok(())
    } else {
        Err(format!("cycle ended in {:?}", outcome.final_phase))
    }
}

fn parse_joints(text: &str) -> Result<Vec<f64>> {
    if let Ok(v) = serde_json::from_str::<Vec<f64>>(text) {
        return Ok(v);
    }
    text.split(',').map(|s| s.trim().parse::<f64>().map_err(|e| format!("bad joint value `{s}`: {e}"))).collect()
}

fn read_joints(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: expected a JSON array of angles: {e}", path.display()))
}

fn resolve_goal(spec: &str, named: &std::collections::BTreeMap<String, Vec<f64>>) -> Result<Vec<f64>> {
    if let Some(q) = named.get(spec) {
        return Ok(q.clone());
    }
    let p = Path::new(spec);
    if p.is_file() {
        return read_joints(p);
    }
    parse_joints(spec).map_err(|e| format!("goal `{spec}` is not a named pose, a file or a joint list ({e})"))
}

fn plan(a: PlanArgs) -> Result<()> {
    let (name, arm, cw, mut start, mut goal) = match (&a.scene, &a.problem) {
        (_, Some(path)) => {
            let p = PlanningProblem::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
            (p.name.clone(), p.arm.clone(), p.world(), p.start.0.clone(), Some(p.goal.0.clone()))
        }
        (Some(path), None) => {
            let scene = load_scene(path)?;
            let mut ex = executive(scene, a.seed);
            ex.observe();
            let start = ex.sim.scene.arm.initial.clone();
            let goal = a.goal.as_deref().map(|g| resolve_goal(g, &ex.sim.scene.named_poses)).transpose()?;
            (path.display().to_string(), ex.sim.arm().clone(), ex.collision_world(), start, goal)
        }
        (None, None) => unreachable!("clap requires one of them"),
    };
    if let Some(p) = &a.start_json {
        start = read_joints(p)?;
    }
    if let (Some(g), Some(_)) = (&a.goal, &a.problem) {
        goal = Some(parse_joints(g).or_else(|_| read_joints(Path::new(g)))?);
    }
    let goal = goal.ok_or("--goal is required with --scene")?;
    let mut params = PlannerParams { seed: a.seed, ..Default::default() };
    if let Some(t) = a.max_time {
        params.max_time = t;
    }
    let report = match plan_rrt_star(&cw, &arm, &JointVector(start), &JointVector(goal), &params) {
        Ok(plan) => serde_json::json!({
            "status": "ok",
            "problem": name,
            "seed": a.seed,
            "waypoints": plan.trajectory.waypoints.len(),
            "duration": plan.trajectory.duration(),
            "stats": plan.stats,
            "trajectory": plan.trajectory,
        }),
        Err(e) => serde_json::json!({ "status": "error", "problem": name, "seed": a.seed, "error": e.to_string() }),
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    match &a.out {
        Some(p) => fs::write(p, text + "\n").map_err(|e| format!("{}: {e}", p.display()))?,
        None => println!("{text}"),
    }
    if report["status"] == "ok" {
        Ok(())
    } else {
        Err(report["error"].as_str().unwrap_or("planning failed").to_string())
    }
}

fn serve(a: ServeArgs) -> Result<()> {
    let scene = load_scene(&a.scene)?;
    let config = ServiceConfig { time_scale: Some(a.time_scale).filter(|s| *s > 0.0), ..Default::default() };
    let service = Service::start(executive(scene, a.seed), config);
    let (addr, listener) = service.listen((a.bind.as_str(), a.port)).map_err(|e| format!("port {}: {e}", a.port))?;
    println!("listening on {addr}");
    if let Some(ws) = a.ws_port {
        let (ws_addr, _) = spawn_bridge((a.bind.as_str(), ws), addr, Arc::new(AtomicBool::new(false)))
            .map_err(|e| format!("ws port {ws}: {e}"))?;
        println!("websocket bridge on {ws_addr}");
    }
    std::io::stdout().flush().ok();
    listener.join().map_err(|_| "listener thread panicked".to_string())
}

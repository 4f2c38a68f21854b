//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::time::Instant;

use nalgebra::{DMatrix, Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use uvms_core::calibration::{
    calibrate_hand_eye, estimate_joint_response, evaluate_trajectories, HandEyeSample, ResponseParams, TimedPoint,
    HISTOGRAM_BIN,
};
use uvms_core::cameras::{estimate_tag_pose, max_detection_range, metric_pixel_resolution, tag_corners, Camera, FisheyeModel, PinholeModel};
use uvms_core::kinematics::{arc_resolution, encoder_resolution, solve_ik_with_restarts, IkParams};
use uvms_core::language::{
    brute_force, build_graph, bundled_corpus, chunk, infer, split_corpus, train, Constituent, DcgGraph, Label,
    SymbolSpace, TrainConfig, WorldModel, DEFAULT_BEAM,
};
use uvms_core::perception::{door_angles_from_graph, TagGraph};
use uvms_core::planning::{
    execute, marker_above, plan_rrt_star, ExecStatus, Executive, ExecutiveConfig, MonitorParams, Phase, PlannerParams,
    PlanningProblem, TaskEvent, TaskState, Trajectory,
};
use uvms_core::simulation::{ActuatorParams, Command, CommandSource, Scene, Simulator};
use uvms_core::{ArmModel, JointVector, Pose};
use uvms_service::{estimate_bandwidth, ModeSpec};

type Outcome = Result<String, String>;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn scene(name: &str) -> Scene {
    Scene::load(fixture(name)).unwrap()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}

fn precision() -> Outcome {
    let t = Instant::now();
    let res = encoder_resolution(11, 2.0 * PI);
    let arc = arc_resolution(res, 1.3);
    let elapsed = t.elapsed().as_secs_f64();
    let (deg, mm) = (res.to_degrees(), arc * 1e3);
    check(
        rel(deg, 0.176) <= 0.005 && (deg - 0.17578).abs() < 5e-6 && rel(mm, 4.0) <= 0.005 && (mm - 3.99).abs() < 0.005 && elapsed < 1e-3,
        format!("encoder {deg:.5} deg, arc at 1.3 m {mm:.3} mm, {:.1} us", elapsed * 1e6),
    )
}

fn pixel_resolution() -> Outcome {
    let fish = metric_pixel_resolution(&Camera::Fisheye(FisheyeModel::nominal()), 1.0) * 1e3;
    let stereo = metric_pixel_resolution(&Camera::Pinhole(PinholeModel::nominal_stereo()), 3.0) * 1e3;
    check(
        rel(fish, 1.3) <= 0.05 && rel(stereo, 1.7) <= 0.05,
        format!("fisheye at 1 m {fish:.3} mm (paper 1.3), stereo at 3 m {stereo:.3} mm (paper 1.7)"),
    )
}

fn detection_range() -> Outcome {
    let fish = max_detection_range(&Camera::Fisheye(FisheyeModel::nominal().with_binning(2)), 0.05, 20.0);
    let stereo = max_detection_range(&Camera::Pinhole(PinholeModel::nominal_stereo().with_binning(2)), 0.05, 20.0);
    check(
        rel(fish, 1.0) <= 0.10 && rel(stereo, 2.4) <= 0.15,
        format!("fisheye {fish:.3} m (paper 1.0), stereo {stereo:.3} m (paper 2.4)"),
    )
}

fn bandwidth() -> Outcome {
    let manip = estimate_bandwidth(&ModeSpec::teleop_manipulator());
    let nl = estimate_bandwidth(&ModeSpec::natural_language());
    check(
        manip == (540.0, 7200.0) && nl == (17.5, 17.5),
        format!("teleop-manip {}..{} B/s, NL {} B/s", manip.0, manip.1, nl.0),
    )
}

fn door_angles(base: &Scene, starboard: f64, port: f64, noise: f64, frames: usize, seed: u64) -> (f64, f64) {
    let mut scene = base.clone();
    scene.doors.starboard.angle = starboard;
    scene.doors.port.angle = port;
    let mut sim = Simulator::with_seed(scene, seed);
    let cam = sim.scene.camera("stereo").unwrap().camera;
    let mut g = TagGraph::new("stereo").with_window(10);
    for _ in 0..frames {
        let obs = sim.observe_with_noise(Some(noise));
        let sizes = |id| sim.tag_size(id);
        g.update(obs.for_camera("stereo"), &cam, sizes);
    }
    door_angles_from_graph(&g, 1, 2, &sim.door_kinematics()).unwrap()
}

fn doors() -> Outcome {
    let t = Instant::now();
    let base = scene("nui.scene");
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst: f64 = 0.0;
    let mut sq = 0.0;
    let n = 1000;
    for i in 0..n {
        let s = rng.random_range(-40f64.to_radians()..=0.0);
        let p = rng.random_range(0.0..=40f64.to_radians());
        let (es, ep) = door_angles(&base, s, p, 0.0, 1, i);
        worst = worst.max((es - s).abs()).max((ep - p).abs());
        let (es, ep) = door_angles(&base, s, p, 0.5, 10, i);
        sq += (es - s).powi(2) + (ep - p).powi(2);
    }
    let rms = (sq / (2 * n) as f64).sqrt().to_degrees();
    let secs = t.elapsed().as_secs_f64();
    check(
        worst <= 1e-6 && rms <= 1.0 && secs < 30.0,
        format!("zero-noise max error {worst:.2e} rad over {n} configurations; 0.5 px RMS {rms:.3} deg; {secs:.1} s"),
    )
}

fn random_pose(rng: &mut impl Rng, t: f64) -> Pose {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    Pose::new(
        UnitQuaternion::from_scaled_axis(axis.normalize() * rng.random_range(0.1..2.5)),
        Vector3::new(rng.random_range(-t..t), rng.random_range(-t..t), rng.random_range(-t..t)),
    )
}

/// Camera 0.3-0.5 m from a tag at the origin, up to 35 deg off its normal.
fn viewing_camera(rng: &mut impl Rng) -> Pose {
    let tilt = rng.random_range(0.0..35f64.to_radians());
    let az = rng.random_range(-PI..PI);
    let dist = rng.random_range(0.3..0.5);
    let dir = Vector3::new(tilt.sin() * az.cos(), tilt.sin() * az.sin(), tilt.cos());
    let z = -dir;
    let helper = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let x0 = z.cross(&helper).normalize();
    let x = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(z), rng.random_range(-PI..PI)) * x0;
    let y = z.cross(&x);
    Pose::from_rotation_matrix(&Matrix3::from_columns(&[x, y, z]), dir * dist)
}

fn hand_eye_samples(rng: &mut impl Rng, x: &Pose, n: usize) -> Vec<HandEyeSample> {
    (0..n)
        .map(|_| {
            let cam = viewing_camera(rng);
            HandEyeSample { wrist_pose: cam.compose(&x.inverse()), tag_pose: cam.inverse() }
        })
        .collect()
}

fn hand_eye() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut exact: f64 = 0.0;
    for _ in 0..20 {
        let x = random_pose(&mut rng, 0.2);
        let r = calibrate_hand_eye(&hand_eye_samples(&mut rng, &x, 11)).map_err(|e| e.to_string())?;
        exact = exact.max(r.hand_eye.distance_to(&x)).max(r.hand_eye.angle_to(&x));
    }
    let cam = Camera::Fisheye(FisheyeModel::nominal());
    let size = 0.15;
    let model = tag_corners(size);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut good = 0;
    for _ in 0..200 {
        let x = random_pose(&mut rng, 0.1);
        let mut samples = hand_eye_samples(&mut rng, &x, 20);
        for s in &mut samples {
            let corners = [0, 1, 2, 3].map(|k| {
                let p = cam.project(&s.tag_pose.transform_point(&model[k])).unwrap();
                [p[0] + noise.sample(&mut rng), p[1] + noise.sample(&mut rng)]
            });
            s.tag_pose = estimate_tag_pose(&cam, &corners, size).map_err(|e| e.to_string())?.pose;
        }
        let r = calibrate_hand_eye(&samples).map_err(|e| e.to_string())?;
        if r.hand_eye.distance_to(&x) <= 0.005 {
            good += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        exact <= 1e-9 && good >= 190 && secs < 60.0,
        format!("zero-noise error {exact:.1e} (10 motions); {good}/200 trials within 5 mm at 0.5 px; {secs:.1} s"),
    )
}

fn staircase(base: Scene, joint: usize, bias_deg: f64, seed: u64) -> Vec<(f64, f64, f64)> {
    let mut scene = base;
    scene.actuators[joint] = ActuatorParams { bias: bias_deg.to_radians(), ..ActuatorParams::nominal() };
    let mut sim = Simulator::with_seed(scene, seed);
    let start = sim.setpoints();
    let offsets = [0.0, 10.0, 4.0, 14.0, 6.0, -4.0, 8.0, -2.0, 12.0, 0.0];
    let mut log = Vec::new();
    for (i, off) in offsets.iter().cycle().take(20).enumerate() {
        let mut q = start.clone();
        q[joint] += (off + (i / 10) as f64 * 0.7).to_radians();
        sim.apply(CommandSource::Execution, Command::Setpoints { q: q.0.clone() });
        for _ in 0..200 {
            sim.step();
            log.push((sim.time(), sim.setpoints()[joint], sim.feedback()[joint]));
        }
    }
    log
}

fn actuators() -> Outcome {
    let params = ResponseParams::default();
    let wrist = estimate_joint_response(&staircase(scene("testbed.scene"), 4, 1.5, 51), &params).map_err(|e| e.to_string())?;
    let shoulder = estimate_joint_response(&staircase(scene("nui.scene"), 0, 8.0, 52), &params).map_err(|e| e.to_string())?;
    let counts = |p: &uvms_core::calibration::JointResponseProfile| p.histogram.values().sum::<usize>() == p.settled;

    let mut sim = Simulator::new(scene("nui.scene"));
    let a = sim.true_joints();
    let mut b = a.clone();
    b[0] += 0.1;
    let traj = Trajectory::from_path(&[a, b], 0.5f64.to_radians());
    let monitor = MonitorParams::default();
    let report = execute(&traj, &mut sim, &monitor, &AtomicBool::new(false));
    let held = matches!(sim.command_log().last().map(|c| &c.command), Some(Command::Hold));
    let abort = match report.status {
        ExecStatus::DeviationExceeded { joint: 0, deviation, .. } if held => Some(deviation.to_degrees()),
        _ => None,
    };
    check(
        (wrist.bias.to_degrees() - 1.5).abs() <= 0.2
            && (shoulder.bias.to_degrees() - 8.0).abs() <= 0.2
            && (HISTOGRAM_BIN.to_degrees() - 0.5).abs() < 1e-12
            && counts(&wrist)
            && counts(&shoulder)
            && (monitor.max_dev.to_degrees() - 5.0).abs() < 1e-12
            && abort.is_some(),
        format!(
            "recovered {:.3} / {:.3} deg (injected 1.5 / 8), {} and {} settled samples binned at 0.5 deg; shoulder-yaw move {}",
            wrist.bias.to_degrees(),
            shoulder.bias.to_degrees(),
            wrist.settled,
            shoulder.settled,
            abort.map_or("completed".to_string(), |d| format!("held on DeviationExceeded at {d:.2} deg > 5 deg")),
        ),
    )
}

fn trajectory_stats() -> Outcome {
    let k: Vec<_> = (0..200)
        .map(|i| {
            let t = i as f64 * 0.1;
            TimedPoint::new(t, Vector3::new(0.0, (t * 0.7).sin(), 0.25 * t))
        })
        .collect();
    let same = evaluate_trajectories(&k, &k).map_err(|e| e.to_string())?;
    let shifted: Vec<_> = k.iter().map(|p| TimedPoint::new(p.t, p.p + Vector3::new(0.01, 0.0, 0.0))).collect();
    let off = evaluate_trajectories(&k, &shifted).map_err(|e| e.to_string())?;

    let (sigma, n) = (0.007, 10_000);
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let kin: Vec<_> = (0..n).map(|i| TimedPoint::new(i as f64 * 0.01, Vector3::new(0.3, -0.2, i as f64 * 1e-4))).collect();
    let vis: Vec<_> = kin
        .iter()
        .map(|p| TimedPoint::new(p.t, p.p + Vector3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng))))
        .collect();
    let noisy = evaluate_trajectories(&kin, &vis).map_err(|e| e.to_string())?;
    let mut orng = ChaCha8Rng::seed_from_u64(62);
    let oracle = (0..n)
        .map(|_| Vector3::new(normal.sample(&mut orng), normal.sample(&mut orng), normal.sample(&mut orng)).norm())
        .sum::<f64>()
        / n as f64;
    check(
        (same.mean, same.max, same.std) == (0.0, 0.0, 0.0)
            && (off.mean, off.max, off.std) == (0.01, 0.01, 0.0)
            && rel(noisy.mean, oracle) <= 0.10,
        format!(
            "identical (0,0,0); 1 cm offset mean {} max {} std {}; sigma 7 mm mean {:.3} mm vs oracle {:.3} mm",
            off.mean,
            off.max,
            off.std,
            noisy.mean * 1e3,
            oracle * 1e3
        ),
    )
}

fn kinematics() -> Outcome {
    let t = Instant::now();
    let m = ArmModel::kraft_like();
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let random_q = |rng: &mut ChaCha8Rng| -> Vec<f64> { m.joint_limits.iter().map(|l| rng.random_range(l.min * 0.9..l.max * 0.9)).collect() };
    let (mut pos, mut rot): (f64, f64) = (0.0, 0.0);
    for _ in 0..500 {
        let q = random_q(&mut rng);
        let target = m.end_effector(&q).unwrap();
        let sol = solve_ik_with_restarts(&m, &target, &JointVector::zeros(7), &IkParams::default(), 32, &mut rng)
            .map_err(|e| e.to_string())?;
        let got = m.end_effector(&sol.q).unwrap();
        pos = pos.max(got.distance_to(&target));
        rot = rot.max(got.angle_to(&target));
    }
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let q = random_q(&mut rng);
        let j = m.jacobian(&q).unwrap();
        let h = 1e-6;
        let mut fd = DMatrix::zeros(3, q.len());
        for i in 0..q.len() {
            let (mut a, mut b) = (q.clone(), q.clone());
            a[i] += h;
            b[i] -= h;
            let d = (m.end_effector(&a).unwrap().translation - m.end_effector(&b).unwrap().translation) / (2.0 * h);
            fd.fixed_view_mut::<3, 1>(0, i).copy_from(&d);
        }
        worst = worst.max((&j.rows(0, 3).into_owned() - &fd).norm() / fd.norm());
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        pos <= 1e-4 && rot <= 1e-3 && worst <= 1e-5 && secs < 10.0,
        format!("IK round trip max {:.2e} m / {:.2e} rad over 500 targets; Jacobian rel. error {worst:.1e}; {secs:.2} s", pos, rot),
    )
}

type Key = (Phase, bool, bool, bool, bool, Option<Phase>);

fn key(s: &TaskState) -> Key {
    (s.phase, s.selected_tool.is_some(), s.marker.is_some(), s.active_plan.is_some(), s.planning, s.resume)
}

fn exec_after(p: Phase) -> Option<Phase> {
    match p {
        Phase::AwaitConfirmGrasp => Some(Phase::ExecGrasp),
        Phase::AwaitConfirmSample => Some(Phase::ExecSample),
        Phase::AwaitConfirmReturn => Some(Phase::ExecReturn),
        _ => None,
    }
}

/// Reachable abstract states and every legal transition between them.
fn fsm_gating() -> Result<(usize, usize), String> {
    let plan = Trajectory::from_path(&[JointVector(vec![0.0]), JointVector(vec![0.1])], 0.05);
    let events = vec![
        TaskEvent::SelectTool { tool: "scoop".into() },
        TaskEvent::SetMarker { pose: Pose::from_translation(0.9, -0.35, -0.3) },
        TaskEvent::RequestPlan,
        TaskEvent::PlanReady { plan },
        TaskEvent::PlanFailed { error: "timeout".into() },
        TaskEvent::Confirm,
        TaskEvent::Reject,
        TaskEvent::Stop,
        TaskEvent::Abort,
        TaskEvent::Retry,
        TaskEvent::GripperOpen,
        TaskEvent::GripperClose,
        TaskEvent::GotoNamedPose { name: "stow".into() },
        TaskEvent::ExecDone,
        TaskEvent::ExecFailed { error: "deviation".into() },
    ];
    let mut seen = BTreeMap::new();
    let start = TaskState::default();
    seen.insert(key(&start), ());
    let mut queue = VecDeque::from([start]);
    let mut edges = 0;
    while let Some(s) = queue.pop_front() {
        for ev in &events {
            let t = s.advance(ev);
            if !t.legal() {
                if t.state != s {
                    return Err(format!("illegal {} changed state in {:?}", ev.name(), s.phase));
                }
                continue;
            }
            edges += 1;
            let to = t.state.phase;
            if to.is_exec() && to != s.phase && !(matches!(ev, TaskEvent::Confirm) && exec_after(s.phase) == Some(to)) {
                return Err(format!("{:?} entered from {:?} by {}", to, s.phase, ev.name()));
            }
            if seen.insert(key(&t.state), ()).is_none() {
                queue.push_back(t.state);
            }
        }
    }
    for p in Phase::ALL {
        if !seen.keys().any(|k| k.0 == p) {
            return Err(format!("{p:?} unreachable"));
        }
    }
    Ok((seen.len(), edges))
}

fn planning() -> Outcome {
    let p = PlanningProblem::load(fixture("wall_gap.json")).map_err(|e| e.to_string())?;
    let cw = p.world();
    let mut solved = 0;
    let mut slowest: f64 = 0.0;
    for seed in 0..100 {
        let params = PlannerParams { seed, max_time: 1.9, max_iterations: usize::MAX, refine_iterations: Some(500), ..Default::default() };
        let t = Instant::now();
        if let Ok(plan) = plan_rrt_star(&cw, &p.arm, &p.start, &p.goal, &params) {
            let wall = t.elapsed().as_secs_f64();
            slowest = slowest.max(wall);
            let mut traj = plan.trajectory.clone();
            if wall < 2.0 && traj.validate(&cw, &p.arm, params.validate_step) && traj.is_valid() && traj.goal() == &p.goal {
                solved += 1;
            }
        }
    }
    let mut costs = Vec::new();
    for max_time in [0.5, 1.0, 1.5, 2.0] {
        let params = PlannerParams { seed: 7, max_time, max_iterations: usize::MAX, try_direct: false, ..Default::default() };
        let plan = plan_rrt_star(&cw, &p.arm, &p.start, &p.goal, &params).map_err(|e| e.to_string())?;
        costs.push(plan.trajectory.cost);
    }
    let monotone = costs.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let (states, edges) = fsm_gating()?;
    check(
        solved == 100 && monotone,
        format!(
            "wall gap {solved}/100 seeds (slowest {slowest:.2} s); best cost over max_time 0.5..2 s {:?}; {states} FSM states / {edges} transitions, Exec only via Confirm",
            costs.iter().map(|c| (c * 1e3).round() / 1e3).collect::<Vec<_>>()
        ),
    )
}

fn language() -> Outcome {
    let space = SymbolSpace::testbed();
    let corpus = bundled_corpus();
    let (train_set, test_set) = split_corpus(&corpus);
    let (weights, _) = train(&train_set, &space, &TrainConfig::default()).map_err(|e| e.to_string())?;

    let node = |label, words: &[&str], children: Vec<usize>| Constituent {
        label,
        span: (0, words.len()),
        words: words.iter().map(|w| w.to_string()).collect(),
        children,
        gold: vec![],
    };
    let shapes = vec![
        vec![node(Label::VB, &["get"], vec![])],
        vec![node(Label::VB, &["return"], vec![]), node(Label::VP, &[], vec![0])],
        vec![node(Label::NP, &["the", "tray"], vec![]), node(Label::PP, &["to"], vec![0]), node(Label::VP, &[], vec![1])],
        vec![node(Label::VB, &["fetch"], vec![]), node(Label::NP, &["the", "scoop"], vec![]), node(Label::VP, &[], vec![0, 1])],
    ];
    let syms = space.symbols();
    let mut subsets = Vec::new();
    for a in 0..syms.len() {
        subsets.push(vec![a]);
        for b in a + 1..syms.len() {
            subsets.push(vec![a, b]);
            for c in b + 1..syms.len() {
                subsets.push(vec![a, b, c]);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let mut noisy = weights.clone();
    for v in noisy.weights.values_mut() {
        *v += rng.random_range(-2.0..2.0);
    }
    let (mut cases, mut equal) = (0, 0);
    for w in [&weights, &noisy] {
        for shape in &shapes {
            for sub in &subsets {
                let g = DcgGraph::new(shape.clone(), sub.iter().map(|&i| syms[i].clone()).collect()).map_err(|e| e.to_string())?;
                let (fast, slow) = (infer(&g, w, DEFAULT_BEAM), brute_force(&g, w));
                cases += 1;
                if fast.symbols == slow.symbols && fast.per_constituent == slow.per_constituent && (fast.log_prob - slow.log_prob).abs() < 1e-9 {
                    equal += 1;
                }
            }
        }
    }
    let world = WorldModel::everything(&space);
    let ground = |text: &str| -> Result<Vec<String>, String> {
        let tree = chunk(text).map_err(|e| e.to_string())?;
        let g = build_graph(&tree, &space, &world).map_err(|e| e.to_string())?;
        Ok(infer(&g, &weights, DEFAULT_BEAM).symbols)
    };
    let mut hits = 0;
    for ex in &test_set {
        if ground(&ex.utterance)? == ex.groundings {
            hits += 1;
        }
    }
    let paper = ground("get the pushcore from the tooltray")?;
    let paper_ok = paper == ["action:grasp", "location:tooltray", "object:pushcore"];
    let acc = hits as f64 / test_set.len() as f64;
    check(
        equal == cases && acc >= 0.9 && paper_ok && corpus.len() == 60 && test_set.len() == 12,
        format!(
            "DP equals brute force on {equal}/{cases} grid cases; held-out {hits}/{} exact; example sentence grounds to {paper:?}",
            test_set.len()
        ),
    )
}

fn end_to_end() -> Outcome {
    let base = scene("testbed.scene");
    let tools = ["pushcore", "scoop", "slurp"];
    let (mut ok, mut retried, mut recovered, mut manual) = (0, 0, 0, 0);
    for seed in 0..50u64 {
        let config = ExecutiveConfig { planner: PlannerParams { seed, ..ExecutiveConfig::default().planner }, ..Default::default() };
        let mut ex = Executive::new(Simulator::with_seed(base.clone(), seed), config);
        let marker = marker_above(&ex.sim, "sample_site", 0.05).unwrap();
        let tool = tools[seed as usize % 3];
        let out = ex.run_pick_and_place(tool, marker, Some("survey"), 3);
        let spec = ex.sim.scene.tool(tool).unwrap();
        let state = ex.sim.world().tools.iter().find(|t| t.id == tool).unwrap();
        let success = out.done
            && ex.sim.held_tool().is_none()
            && state.pose.distance_to(&spec.pose) < 0.02
            && out.sample_error.is_some_and(|e| e < 0.05);
        manual += ex
            .sim
            .command_log()
            .iter()
            .filter(|c| matches!(c.command, Command::Setpoints { .. }) && !matches!(c.source, CommandSource::Execution | CommandSource::NamedPose))
            .count();
        if out.retries > 0 {
            retried += 1;
            if success {
                recovered += 1;
            }
        }
        if success {
            ok += 1;
        }
    }
    check(
        ok >= 45 && manual == 0,
        format!("{ok}/50 cycles succeeded; {recovered}/{retried} runs needing Retry/replan recovered; {manual} manual joint commands; no UI built"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("precision calculators", precision),
        ("pixel resolution", pixel_resolution),
        ("detection range", detection_range),
        ("bandwidth table", bandwidth),
        ("door-angle estimation", doors),
        ("hand-eye calibration", hand_eye),
        ("actuator characterization", actuators),
        ("trajectory stats", trajectory_stats),
        ("kinematics", kinematics),
        ("planning", planning),
        ("language grounding", language),
        ("end-to-end pick-and-place", end_to_end),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    println!("{} of {} criteria passed", 12 - failed, 12);
    if failed > 0 {
        std::process::exit(1);
    }
}

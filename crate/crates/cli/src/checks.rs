//! Acceptance checks. Each one draws its own seeded inputs, compares the
//! library against an independent oracle and reports the worst case.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Matrix2, Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use telewalk::balance::{solve_force_distribution, QpProblem, QpWeights, StanceContact};
use telewalk::hlip::{
    dcm, deadbeat_step_length, flow_dsp, flow_ssp, map_human_to_p1, reset_d2s, reset_s2d, s2s_matrices, Domain,
    HlipParams, HlipState, PhasePoint,
};
use telewalk::hwr::{fit_step_timing, Side, SwingTimingEstimator, DEFAULT_DAMPING};
use telewalk::qp::DenseQp;
use telewalk::robot::{forward_kinematics, leg_ik, ContactId, LegJointState, RobotParams, TorsoPose};
use telewalk::srbm::{cop, integrate, SrbState, Wrench};
use telewalk::swing::{swing_xy, swing_z};
use telewalk::telelocomotion::{run_episode, EpisodeResult, LoopConfig, Verdict};
use telewalk_pilot::scripted::{ScriptedPilot, ScriptedPilotSpec};

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:<16} {} ({:.2} s)", self.name, self.detail, self.elapsed.as_secs_f64())
    }
}

pub type Check = fn(u64) -> (bool, String);

pub const CHECKS: [(&str, Check); 10] = [
    ("deadbeat", deadbeat),
    ("s2s_hybrid", s2s_hybrid),
    ("p1_identities", p1_identities),
    ("qp", qp_correctness),
    ("swing_analytics", swing_analytics),
    ("step_timing", step_timing),
    ("experiment1", experiment1),
    ("experiment2", experiment2),
    ("plant_integrity", plant_integrity),
    ("determinism", determinism),
];

pub fn run(name: &'static str, check: Check, seed: u64) -> CheckReport {
    let start = Instant::now();
    let (passed, detail) = check(seed);
    CheckReport { name, passed, detail, elapsed: start.elapsed() }
}

/// Runs the checks whose names are in `only` (all when empty).
pub fn run_all(seed: u64, only: &[String]) -> Vec<CheckReport> {
    CHECKS
        .iter()
        .filter(|(name, _)| only.is_empty() || only.iter().any(|o| o == name))
        .map(|&(name, check)| run(name, check, seed))
        .collect()
}

const DRAWS: usize = 1000;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn random_params(r: &mut ChaCha8Rng) -> HlipParams {
    HlipParams::new(r.gen_range(0.3..1.2), 9.81, r.gen_range(0.2..0.8), r.gen_range(0.0..0.3)).expect("valid ranges")
}

/// `exp(M)` by scaling and squaring a truncated Taylor series.
fn expm(m: Matrix2<f64>) -> Matrix2<f64> {
    let norm = m.abs().max();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let a = m / 2f64.powi(squarings);
    let (mut term, mut sum) = (Matrix2::identity(), Matrix2::identity());
    for k in 1..=20 {
        term = term * a / k as f64;
        sum += term;
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

/// Pre-impact to pre-impact through DSP drift, the foot switch and the SSP
/// pendulum, each from its matrix exponential.
fn hybrid_oracle(pre: Vector2<f64>, step: f64, p: &HlipParams) -> Vector2<f64> {
    let dsp = expm(Matrix2::new(0.0, 1.0, 0.0, 0.0) * p.t_dsp());
    let ssp = expm(Matrix2::new(0.0, 1.0, p.omega().powi(2), 0.0) * p.t_ssp());
    ssp * (dsp * pre - Vector2::new(step, 0.0))
}

fn deadbeat(seed: u64) -> (bool, String) {
    let start = Instant::now();
    let mut r = rng(seed, 1);
    let mut worst: f64 = 0.0;
    for _ in 0..DRAWS {
        let params = random_params(&mut r);
        let Ok(orbit) = map_human_to_p1(r.gen_range(-0.25..0.25), params.t_ssp(), &params) else {
            return (false, "P1 mapping rejected a valid draw".into());
        };
        let target = orbit.pre_impact();
        let s2s = s2s_matrices(&params);
        let mut pre = PhasePoint::new(target.x + r.gen_range(-0.1..0.1), target.xdot + r.gen_range(-0.5..0.5));
        let e0 = (pre.to_vector() - target.to_vector()).norm();
        for _ in 0..2 {
            pre = s2s.step(pre, deadbeat_step_length(pre, target, &params));
        }
        let e2 = (pre.to_vector() - target.to_vector()).norm();
        worst = worst.max(e2 / e0.max(1e-12));
    }
    let elapsed = start.elapsed().as_secs_f64();
    (
        worst <= 1e-9 && elapsed < 1.0,
        format!("max |e2|/|e0| = {worst:.2e} (≤ 1e-9), {DRAWS} draws in {elapsed:.3} s (< 1 s)"),
    )
}

fn s2s_hybrid(seed: u64) -> (bool, String) {
    let start = Instant::now();
    let mut r = rng(seed, 2);
    let (mut worst, mut worst_composed): (f64, f64) = (0.0, 0.0);
    for _ in 0..DRAWS {
        let params = random_params(&mut r);
        let pre = PhasePoint::new(r.gen_range(-0.3..0.3), r.gen_range(-1.5..1.5));
        let step = r.gen_range(-0.6..0.6);
        let s2s = s2s_matrices(&params).step(pre, step).to_vector();
        let oracle = hybrid_oracle(pre.to_vector(), step, &params);
        // Relative to the result, or to the inputs when the result is near zero.
        let scale = oracle.norm().max(pre.to_vector().norm() + step.abs());
        worst = worst.max((s2s - oracle).norm() / scale);

        let composed = (|| {
            let s = reset_s2d(HlipState::new(pre.x, pre.xdot, Domain::Ssp))?;
            let s = reset_d2s(flow_dsp(s, params.t_dsp())?, step)?;
            flow_ssp(s, &params, params.t_ssp())
        })();
        match composed {
            Ok(c) => worst_composed = worst_composed.max((s2s - c.phase_point().to_vector()).norm() / scale),
            Err(e) => return (false, format!("library flow failed: {e}")),
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    (
        worst <= 1e-10 && worst_composed <= 1e-10 && elapsed < 1.0,
        format!(
            "max rel err vs expm oracle {worst:.2e}, vs composed flows {worst_composed:.2e} (≤ 1e-10), {elapsed:.3} s (< 1 s)"
        ),
    )
}

fn p1_identities(seed: u64) -> (bool, String) {
    let mut r = rng(seed, 3);
    let (mut dcm_err, mut period_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..DRAWS {
        let params = random_params(&mut r);
        let x_h = r.gen_range(-0.3..0.3);
        let Ok(orbit) = map_human_to_p1(x_h, params.t_ssp(), &params) else {
            return (false, format!("P1 mapping rejected x_H = {x_h}"));
        };
        let pre = orbit.pre_impact();
        dcm_err = dcm_err.max((dcm(pre, params.omega()) - x_h).abs());
        let next = hybrid_oracle(pre.to_vector(), orbit.nominal_step_length, &params);
        period_err = period_err.max((next - pre.to_vector()).norm());
    }
    (
        dcm_err <= 1e-12 && period_err <= 1e-9,
        format!("max |DCM(pre) - x_H| = {dcm_err:.2e} (≤ 1e-12), max one-step drift {period_err:.2e} (≤ 1e-9)"),
    )
}

/// Global minimum by enumerating every working set of at most `n` rows.
fn brute_force(qp: &DenseQp) -> Option<f64> {
    let (n, m) = (qp.dim(), qp.rows());
    let h_inv = qp.h.clone().try_inverse()?;
    let x_free = -&h_inv * &qp.g;
    let hinv_at = &h_inv * qp.a.transpose();
    let s_full = &qp.a * &hinv_at;
    let r_full = &qp.a * &x_free - &qp.b;
    let mut best: Option<f64> = None;
    let mut consider = |x: &DVector<f64>| {
        if qp.max_violation(x) <= 1e-9 {
            let f = qp.objective(x);
            best = Some(best.map_or(f, |b: f64| b.min(f)));
        }
    };
    consider(&x_free);
    let mut subset = Vec::with_capacity(n);
    fn walk(start: usize, m: usize, n: usize, subset: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        for i in start..m {
            subset.push(i);
            f(subset);
            if subset.len() < n {
                walk(i + 1, m, n, subset, f);
            }
            subset.pop();
        }
    }
    walk(0, m, n, &mut subset, &mut |s| {
        // The Schur complement is SPD exactly when the chosen rows are independent.
        let schur = DMatrix::from_fn(s.len(), s.len(), |r, c| s_full[(s[r], s[c])]);
        let scale = schur.diagonal().max();
        let Some(chol) = schur.cholesky() else { return };
        if chol.l_dirty().diagonal().iter().any(|d| d * d <= 1e-12 * scale) {
            return;
        }
        let mu = chol.solve(&DVector::from_iterator(s.len(), s.iter().map(|&i| r_full[i])));
        let mut x = x_free.clone();
        for (k, &i) in s.iter().enumerate() {
            x -= hinv_at.column(i) * mu[k];
        }
        consider(&x);
    });
    best
}

/// Random torso pose, foot placement, joint rates and desired wrench.
fn stance_problem(r: &mut ChaCha8Rng, single: bool) -> QpProblem {
    let params = RobotParams::default();
    let mut u = || r.gen_range(-1.0..1.0);
    let s: [f64; 12] = std::array::from_fn(|_| u());
    let rot = *Rotation3::from_euler_angles(0.2 * s[0], 0.2 * s[1], 0.4 * s[2]).matrix();
    let torso = TorsoPose { position: Vector3::new(0.05 * s[3], 0.05 * s[4], 0.46 + 0.04 * s[5]), rotation: rot };
    let mut legs = [LegJointState::default(); 2];
    let mut contacts = Vec::new();
    for side in [Side::Left, Side::Right] {
        let foot = Vector3::new(0.15 * s[6] * side.sign(), side.sign() * (0.1 + 0.04 * s[7]), 0.0);
        let sol = leg_ik(&params, &torso.to_body(&foot), side, &rot);
        legs[side.index()] = LegJointState { q: sol.joints, qdot: sol.joints.map(|q| 8.0 * s[8] * q) };
        if single && side == Side::Right {
            continue;
        }
        let fk = forward_kinematics(&params, &torso, &legs[side.index()], side);
        for id in ContactId::of_foot(side) {
            let f0 = Vector3::new(5.0 * s[9], 5.0 * s[10], 40.0 + 20.0 * s[11]);
            contacts.push(StanceContact { id, r: fk.contact(id) - torso.position, f0 });
        }
    }
    let desired = Wrench {
        force: Vector3::new(60.0 * s[9], 60.0 * s[10], params.mass * params.gravity * (1.0 + 0.5 * s[11])),
        torque: Vector3::new(15.0 * s[0], 15.0 * s[1], 5.0 * s[2]),
    };
    QpProblem::new(QpWeights::default(), desired, contacts, &rot, &legs, &params)
}

fn qp_correctness(seed: u64) -> (bool, String) {
    let params = RobotParams::default();
    let mut r = rng(seed, 4);
    let (mut kkt, mut viol, mut obj): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let (mut small, mut failures) = (0, 0);
    for k in 0..500 {
        let problem = stance_problem(&mut r, k % 2 == 0);
        let sol = solve_force_distribution(&problem, &params);
        if sol.fallback {
            failures += 1;
            continue;
        }
        let dense = problem.to_dense();
        let x = sol.force_vector();
        kkt = kkt.max(sol.kkt_residual);
        viol = viol.max(dense.max_violation(&x));
        if dense.dim() <= 6 {
            small += 1;
            match brute_force(&dense) {
                Some(best) => obj = obj.max((dense.objective(&x) - best).abs() / best.abs().max(1.0)),
                None => failures += 1,
            }
        }
    }
    (
        failures == 0 && kkt <= 1e-6 && viol <= 1e-8 && obj <= 1e-8,
        format!(
            "500 stance QPs: max KKT {kkt:.2e} (≤ 1e-6), max violation {viol:.2e} (≤ 1e-8); \
             {small} single-stance vs enumeration: max objective gap {obj:.2e} (≤ 1e-8); {failures} failures"
        ),
    )
}

fn swing_analytics(seed: u64) -> (bool, String) {
    let mut r = rng(seed, 5);
    let mut bad = 0;
    let mut apex_below = 0;
    for _ in 0..DRAWS {
        let mut c = || r.gen_range(-1.0..1.0);
        let (p_i, p_f) = (Vector2::new(c(), c()), Vector2::new(c(), c()));
        let z0 = 0.05 * c();
        let z_cl = 0.1 * (c() + 1.0);
        let s_dot = 1.0 / (0.5 + 0.3 * c());
        let exact = swing_xy(0.0, p_i, p_f, s_dot).pos == p_i
            && swing_xy(1.0, p_i, p_f, s_dot).pos == p_f
            && swing_z(0.0, z0, z_cl, s_dot).pos == z0
            && swing_z(1.0, z0, z_cl, s_dot).pos == z0
            && swing_z(0.5, z0, z_cl, s_dot).pos == z0 + z_cl;
        if !exact {
            bad += 1;
        }
        let apex = swing_z(0.5, z0, z_cl, s_dot).pos;
        if (0..=200).any(|k| swing_z(k as f64 / 200.0, z0, z_cl, s_dot).pos > apex) {
            apex_below += 1;
        }
    }
    (
        bad == 0 && apex_below == 0,
        format!(
            "{DRAWS} draws: {bad} inexact endpoint/apex identities, {apex_below} profiles exceeding the s = 0.5 apex"
        ),
    )
}

fn swing_height(t: f64, period: f64, z_cl: f64) -> f64 {
    z_cl * (std::f64::consts::PI * t / period).sin().powi(2)
}

fn step_timing(seed: u64) -> (bool, String) {
    const DT: f64 = 1e-3;
    // Gauss-Newton stopping tolerance of the fit.
    const SOLVER_TOL: f64 = 1e-8;
    let samples = |period: f64, z_cl: f64| -> Vec<(f64, f64)> {
        let n = (0.5 * period / DT).round() as usize;
        (1..=n).map(|k| k as f64 * DT).map(|t| (t, swing_height(t, period, z_cl))).collect()
    };

    let mut hits = 0;
    for trial in 0..100 {
        let mut r = rng(seed, 600 + trial);
        let period = r.gen_range(0.3..0.5);
        let z_cl = r.gen_range(0.04..0.08);
        let noise = Normal::new(0.0, 0.01 * z_cl).expect("positive sigma");
        let noisy: Vec<_> = samples(period, z_cl).into_iter().map(|(t, z)| (t, z + noise.sample(&mut r))).collect();
        if let Ok(fit) = fit_step_timing(&noisy, 0.0, DEFAULT_DAMPING, (0.4, 0.1)) {
            if (fit.t_ssp_est - period).abs() <= 0.05 * period {
                hits += 1;
            }
        }
    }

    let mut monotone = true;
    let mut final_err: f64 = 0.0;
    for (period, z_cl, prior) in [(0.4, 0.06, 0.5), (0.45, 0.05, 0.3), (0.32, 0.07, 0.4)] {
        let mut est = SwingTimingEstimator::new(DEFAULT_DAMPING, 0.05, prior, 0.1);
        est.begin(prior, 0.0);
        let mut prev = (prior - period).abs();
        for (t, z) in samples(period, z_cl) {
            let err = (est.push(t, z) - period).abs();
            monotone &= err <= prev + SOLVER_TOL;
            prev = err;
        }
        final_err = final_err.max(prev);
    }
    (
        hits >= 95 && monotone && final_err < 1e-6,
        format!(
            "{hits}/100 noisy half-swing fits within 5% (≥ 95); noiseless error non-increasing: {monotone}, final {final_err:.1e}"
        ),
    )
}

fn run_scripted(spec: ScriptedPilotSpec, seed: u64, telemetry: Option<&mut Vec<u8>>) -> Result<EpisodeResult, String> {
    let duration = spec.duration();
    let mut src = ScriptedPilot::new(spec, seed).map_err(|e| e.to_string())?;
    let sink = telemetry.map(|t| t as &mut dyn std::io::Write);
    run_episode(&RobotParams::default(), &LoopConfig::default(), &mut src, duration, sink).map_err(|e| e.to_string())
}

fn experiment1(seed: u64) -> (bool, String) {
    let spec = ScriptedPilotSpec::velocity_tracking();
    let windows = spec.segment_windows();
    let start = Instant::now();
    let r = match run_scripted(spec, seed, None) {
        Ok(r) => r,
        Err(e) => return (false, e),
    };
    let wall = start.elapsed().as_secs_f64();
    let mut speeds_ok = true;
    let speeds: Vec<String> = windows
        .iter()
        .map(|&(a, b, target)| {
            let v = r.mean_velocity(a, b);
            speeds_ok &= v.is_some_and(|v| (v - target).abs() <= 0.05);
            format!("{target}→{}", v.map_or("n/a".into(), |v| format!("{v:.3}")))
        })
        .collect();
    let ok = r.verdict == Verdict::Completed && r.falls == 0 && r.distance_x >= 6.0 && speeds_ok && wall < 120.0;
    (
        ok,
        format!(
            "{:?}, {:.2} m (≥ 6.0), falls {}, segment means [{}] m/s (±0.05), {:.0} s simulated in {wall:.1} s (< 120 s)",
            r.verdict,
            r.distance_x,
            r.falls,
            speeds.join(", "),
            r.duration
        ),
    )
}

fn experiment2(seed: u64) -> (bool, String) {
    let r = match run_scripted(ScriptedPilotSpec::backward(), seed, None) {
        Ok(r) => r,
        Err(e) => return (false, e),
    };
    let back = -r.min_x;
    let returned = r.distance_x - r.min_x;
    // A step walks the orbit commanded at the impact before it.
    let backward_steps: Vec<f64> =
        r.pre_impacts.windows(2).filter(|w| w[0].target_xdot.is_some_and(|v| v < 0.0)).map(|w| w[1].xdot).collect();
    let worst = backward_steps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ok = r.verdict == Verdict::Completed
        && r.falls == 0
        && back >= 2.0
        && returned >= 2.0
        && backward_steps.len() >= 10
        && worst < 0.0;
    (
        ok,
        format!(
            "{:?}, falls {}, {back:.2} m backward (≥ 2.0), {returned:.2} m back forward, {} backward steps with max xdot_pre {worst:.3} (< 0)",
            r.verdict,
            r.falls,
            backward_steps.len()
        ),
    )
}

/// Andrew's monotone chain, counter-clockwise.
fn convex_hull(mut pts: Vec<Vector2<f64>>) -> Vec<Vector2<f64>> {
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>| (a - o).perp(&(b - o));
    let mut hull: Vec<Vector2<f64>> = Vec::new();
    for pass in 0..2 {
        let base = hull.len();
        let order: Vec<Vector2<f64>> = if pass == 0 { pts.clone() } else { pts.iter().rev().copied().collect() };
        for p in order {
            while hull.len() >= base + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn outside_distance(hull: &[Vector2<f64>], q: Vector2<f64>) -> f64 {
    let seg = |a: Vector2<f64>, b: Vector2<f64>| {
        let d = b - a;
        let t = if d.norm_squared() > 0.0 { ((q - a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0) } else { 0.0 };
        (a + d * t - q).norm()
    };
    match hull.len() {
        0 => f64::INFINITY,
        1 => (hull[0] - q).norm(),
        2 => seg(hull[0], hull[1]),
        n if (0..n).all(|i| (hull[(i + 1) % n] - hull[i]).perp(&(q - hull[i])) >= 0.0) => 0.0,
        n => (0..n).map(|i| seg(hull[i], hull[(i + 1) % n])).fold(f64::INFINITY, f64::min),
    }
}

fn plant_integrity(seed: u64) -> (bool, String) {
    let params = RobotParams::default();
    let mut r = rng(seed, 9);

    let mut s = SrbState {
        omega_body: Vector3::new(r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0)),
        ..SrbState::at_rest(Vector3::new(0.0, 0.0, 1.0))
    };
    let mut drift: f64 = 0.0;
    for k in 0..100_000 {
        let torque = Vector3::new((k as f64 * 1e-3).sin(), 0.5, -(k as f64 * 7e-4).cos());
        s = integrate(&s, |_| Wrench { force: Vector3::zeros(), torque }, 1e-3, &params);
        drift = drift.max(s.orthonormality_error());
    }

    let mut ballistic: f64 = 0.0;
    for _ in 0..50 {
        let v0 = Vector3::new(r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0), r.gen_range(-2.0..3.0));
        let w0 = Vector3::new(r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0));
        let p0 = Vector3::new(0.1, -0.2, 1.0);
        let mut b = SrbState { pdot: v0, omega_body: w0, ..SrbState::at_rest(p0) };
        for _ in 0..1000 {
            b = integrate(&b, |_| Wrench::default(), 1e-3, &params);
        }
        let t = b.time;
        let expected = p0 + v0 * t + 0.5 * params.gravity_vector() * t * t;
        ballistic = ballistic.max((b.p - expected).norm());
    }

    let mut cop_out: f64 = 0.0;
    let mut cop_defined = 0;
    for _ in 0..DRAWS {
        let n = r.gen_range(1..=4);
        let contacts: Vec<_> = (0..n)
            .map(|_| {
                let p = Vector3::new(r.gen_range(-0.5..0.5), r.gen_range(-0.3..0.3), 0.0);
                let f = Vector3::new(r.gen_range(-50.0..50.0), r.gen_range(-50.0..50.0), r.gen_range(0.0..200.0));
                (p, f)
            })
            .collect();
        if let Ok(c) = cop(&contacts) {
            cop_defined += 1;
            let hull = convex_hull(contacts.iter().filter(|(_, f)| f.z > 0.0).map(|(p, _)| p.xy()).collect());
            cop_out = cop_out.max(outside_distance(&hull, c));
        }
    }
    (
        drift <= 1e-9 && ballistic <= 1e-9 && cop_out <= 1e-12 && cop_defined > 0,
        format!(
            "orthonormality drift {drift:.2e} over 1e5 steps (≤ 1e-9), ballistic error {ballistic:.2e} (≤ 1e-9), \
             CoP max distance outside hull {cop_out:.1e} over {cop_defined} draws"
        ),
    )
}

fn determinism(seed: u64) -> (bool, String) {
    let scenarios = [
        ("velocity", ScriptedPilotSpec::velocity_tracking()),
        ("backward", ScriptedPilotSpec::backward()),
        ("stand", ScriptedPilotSpec::standing(10.0)),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, spec) in scenarios {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        if let Err(e) = run_scripted(spec.clone(), seed, Some(&mut a)).and(run_scripted(spec, seed, Some(&mut b))) {
            return (false, format!("{name}: {e}"));
        }
        let same = !a.is_empty() && a == b;
        ok &= same;
        parts.push(format!("{name} {} ({} bytes)", if same { "identical" } else { "DIFFERS" }, a.len()));
    }
    (ok, format!("seed {seed}: {}", parts.join(", ")))
}

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use telewalk::hlip::{map_human_to_p1, HlipParams};
use telewalk::hwr::{measure_step_period, GaitEvent, GaitEventKind};
use telewalk::telelocomotion::detect_events;
use telewalk_pilot::scripted::{synth_pilot_tick, NoiseSpec, PilotKind, ScriptedPilotSpec, SpeedSegment};

const DT: f64 = 1e-3;

fn constant_speed(speed: f64, step_period: f64) -> ScriptedPilotSpec {
    ScriptedPilotSpec {
        kind: PilotKind::VelocityProfile,
        segments: vec![SpeedSegment { duration: 12.0, speed }],
        step_period,
        ..ScriptedPilotSpec::default()
    }
}

/// Events and mean CoM offset over `[t0, t1)` of the emitted stream.
fn observe(spec: &ScriptedPilotSpec, t0: f64, t1: f64) -> (Vec<GaitEvent>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut prev = [true, true];
    let mut events = Vec::new();
    let (mut sum, mut n) = (0.0, 0);
    for k in 1..=(spec.duration() / DT).round() as u64 {
        let t = k as f64 * DT;
        let s = synth_pilot_tick(spec, t, &mut rng);
        if t >= t0 && t < t1 {
            events.extend(detect_events(prev, s.contacts(), t));
            sum += s.com_x;
            n += 1;
        }
        prev = s.contacts();
    }
    (events, sum / n as f64)
}

fn measured_dsp(events: &[GaitEvent]) -> f64 {
    let mut spans = Vec::new();
    let mut td = None;
    for e in events {
        match e.kind {
            GaitEventKind::TouchDown => td = Some(e.timestamp),
            GaitEventKind::LiftOff => {
                if let Some(t) = td.take() {
                    spans.push(e.timestamp - t);
                }
            }
        }
    }
    spans.iter().sum::<f64>() / spans.len() as f64
}

/// Emitted samples, fed through the step-period measurement and the P1
/// map, reconstruct the commanded robot speed.
#[test]
fn emitted_stream_reconstructs_commanded_orbit() {
    for &(speed, period) in &[(0.1, 0.5), (0.2, 0.5), (0.3, 0.5), (-0.2, 0.5), (0.2, 0.4), (0.15, 0.7)] {
        let spec = constant_speed(speed, period);
        let (events, com_x) = observe(&spec, 4.0, 12.0);
        let p = measure_step_period(&events, 0.3, f64::NAN);
        let t_dsp = measured_dsp(&events);
        let t_ssp = p - t_dsp;
        let params = HlipParams::new(spec.h_human, spec.gravity, t_ssp, t_dsp).unwrap();
        let orbit = map_human_to_p1(com_x, t_ssp, &params).unwrap();
        let robot_speed = spec.lambda() * orbit.nominal_step_length / p;
        let rel = (robot_speed - speed).abs() / speed.abs();
        assert!(rel < 0.05, "speed {speed} period {period}: reconstructed {robot_speed}");
    }
}

/// Independent orbit geometry: x⁻ and ẋ⁻ of the one-step periodic orbit
/// from the LIP closed form, step length 2x⁻ + T_DSP·ẋ⁻.
#[test]
fn velocity_profile_step_length_oracle() {
    let spec = constant_speed(0.2, 0.5);
    let x_h = spec.com_offset(0.2);
    let g = spec.timing();
    let (t_s, t_d) = (g.t_ssp(), g.t_dsp());
    let w = (spec.gravity / spec.h_human).sqrt();
    // pre-impact slope of the orbit: ẋ⁻ = w·coth(w·T/2)·x⁻
    let slope = w * (0.5 * w * t_s).cosh() / (0.5 * w * t_s).sinh();
    // x_h is the pre-impact DCM: x⁻ + ẋ⁻/w
    let x_pre = x_h / (1.0 + slope / w);
    let xdot_pre = slope * x_pre;
    let length = 2.0 * x_pre + t_d * xdot_pre;
    let human_speed = length / (t_s + t_d);
    let robot_speed = spec.lambda() * human_speed;
    assert!((robot_speed - 0.2).abs() / 0.2 < 0.05, "{robot_speed}");
    assert!((robot_speed - 0.2).abs() < 1e-12);
}

#[test]
fn backward_spec_has_negative_pre_impact_velocity() {
    let spec = ScriptedPilotSpec::backward();
    let params = spec.human_params().unwrap();
    let x_h = spec.com_offset(spec.speed_at(8.0));
    let orbit = map_human_to_p1(x_h, params.t_ssp(), &params).unwrap();
    assert!(orbit.xdot_pre < 0.0);
    assert!(orbit.nominal_step_length < 0.0);
    // forward leg of the same scenario
    let x_f = spec.com_offset(spec.speed_at(20.0));
    assert!(map_human_to_p1(x_f, params.t_ssp(), &params).unwrap().xdot_pre > 0.0);
}

#[test]
fn feet_alternate_with_configured_period() {
    let spec = constant_speed(0.2, 0.5);
    let (events, _) = observe(&spec, 0.0, 12.0);
    let tds: Vec<&GaitEvent> = events.iter().filter(|e| e.kind == GaitEventKind::TouchDown).collect();
    assert!(tds.len() > 15);
    for w in tds.windows(2) {
        assert_ne!(w[0].swing_side, w[1].swing_side);
        assert!((w[1].timestamp - w[0].timestamp - 0.5).abs() < 1.5 * DT);
    }
    assert!((measured_dsp(&events) - 0.1).abs() < 1.5 * DT);
}

#[test]
fn swing_height_noise_is_seeded() {
    let spec = constant_speed(0.2, 0.5);
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (1..4000).map(|k| synth_pilot_tick(&spec, k as f64 * DT, &mut rng)).collect::<Vec<_>>()
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
    // without noise the apex is exactly z_cl
    let clean = ScriptedPilotSpec { noise: NoiseSpec { swing_z: 0.0, com_x: 0.0 }, ..spec.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let apex = (1..6000)
        .map(|k| synth_pilot_tick(&clean, k as f64 * DT, &mut rng))
        .map(|s| s.left_foot.z.max(s.right_foot.z))
        .fold(0.0, f64::max);
    assert!((apex - clean.z_cl).abs() < 1e-4, "{apex}");
}

//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; the process exits non-zero if any
//! criterion fails.

use std::time::{Duration, Instant};

use myoctl::analysis::{compute_metrics, AnalysisOptions, HoldSegment};
use myoctl::calibration::CalibrationSettings;
use myoctl::control::{
    deadband_step, onoff_hysteresis_step, onoff_step, rescale, ControlConfig, Controller, DeadbandState,
    Reference, Strategy,
};
use myoctl::pipeline::{normalize, MovingAverage};
use myoctl::plant::{plant_step, HandState, PlantParams};
use myoctl::record::{export_csv, import_csv, Row, SessionHeader, SessionRecord, FORMAT_VERSION};
use myoctl::session::{replay_session, run_session, Command, EngineConfig};
use myoctl::source::{IntentScript, PatientModel, Segment, SynthSource};
use myoctl::{capture_mvc, capture_rest, initial_threshold, quantize, CalibrationProfile, ConfigPatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("deadband oracle equivalence", deadband_oracle),
        ("ripple rejection", ripple_rejection),
        ("on-off chatter and hysteresis", onoff_chatter),
        ("calibration anchors", calibration_anchors),
        ("moving-average step response", moving_average_step),
        ("rescale endpoints", rescale_endpoints),
        ("session determinism", session_determinism),
        ("plant safety", plant_safety),
        ("analysis invariants", analysis_invariants),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let t = Instant::now();
        let res = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(detail) => println!("PASS  {name}: {detail} ({secs:.2} s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} ({secs:.2} s)");
            }
        }
    }
    println!("{} criteria, {failed} failed", criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Follower written directly from its case definition, independent of the
/// library.
fn literal_follower(r: f64, x: f64, delta: f64) -> f64 {
    if (x - r).abs() <= delta {
        r
    } else if x - r < -delta {
        x + delta
    } else {
        x - delta
    }
}

/// `x ± delta` is rounded once, so the distance back to `x` can exceed
/// `delta` by a few ulps at the top of the percent range.
const ROUNDING: f64 = 4.0 * f64::EPSILON * 100.0;

fn deadband_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let deltas = [0.0, 1.0, 5.0, 20.0];
    let mut stream = vec![0.0f64; 1000];
    let mut steps = 0u64;
    for i in 0..10_000 {
        let delta = deltas[i % deltas.len()];
        for x in stream.iter_mut() {
            *x = rng.random_range(0.0..=100.0);
        }
        let mut s = DeadbandState::REST;
        let mut r = 0.0;
        for (k, &x) in stream.iter().enumerate() {
            s = deadband_step(s, x, delta);
            r = literal_follower(r, x, delta);
            check(s.r.to_bits() == r.to_bits(), || {
                format!("stream {i} step {k}: library {} != oracle {r} (delta {delta})", s.r)
            })?;
            check((x - s.r).abs() <= delta + ROUNDING, || {
                format!("stream {i} step {k}: |x - r| = {} > {delta}", (x - s.r).abs())
            })?;
            steps += 1;
        }
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("{steps} steps identical, contraction holds, {elapsed:.2?}"))
}

fn ripple_rejection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let input: Vec<f64> = (0..10_000).map(|_| 50.0 + rng.random_range(-4.0..=4.0)).collect();
    let delta = 5.0;

    // follower settled on the ripple centre
    let mut s = DeadbandState::settled_at(50.0);
    let mut refs = Vec::with_capacity(input.len());
    for &x in &input {
        s = deadband_step(s, x, delta);
        refs.push(rescale(s.r, delta).value());
    }
    let transitions = refs.windows(2).filter(|w| w[0] != w[1]).count();
    check(transitions == 0, || format!("deadband output changed {transitions} times"))?;

    let mut plain = Controller::new(ControlConfig {
        strategy: Strategy::Proportional,
        th1: 0.0,
        th2: 100.0,
        delta: 0.0,
        ..ControlConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let prefs: Vec<f64> = input.iter().map(|&e| plain.step(e).reference.value()).collect();
    let mean = prefs.iter().sum::<f64>() / prefs.len() as f64;
    let var = prefs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / prefs.len() as f64;
    check(var > 0.0, || "plain proportional reference has zero variance".into())?;
    Ok(format!("deadband transitions 0, plain variance {var:.3e}"))
}

fn onoff_chatter() -> Outcome {
    let th = 50.0;
    let period = 200usize;
    let periods = 10;
    // quarter-sample phase offset keeps samples off the threshold itself
    let emg: Vec<f64> = (0..period * periods)
        .map(|k| th + 3.0 * (2.0 * std::f64::consts::PI * (k as f64 + 0.25) / period as f64).sin())
        .collect();

    let count = |refs: &[Reference]| refs.windows(2).filter(|w| w[0] != w[1]).count();
    let mut plain = Vec::with_capacity(emg.len() + 1);
    plain.push(Reference::CLOSED);
    plain.extend(emg.iter().map(|&e| onoff_step(e, th)));
    let mut hyst = Vec::with_capacity(emg.len() + 1);
    hyst.push(Reference::CLOSED);
    for &e in &emg {
        let prev = *hyst.last().unwrap();
        hyst.push(onoff_hysteresis_step(e, th, 10.0, prev));
    }
    let n_plain = count(&plain);
    let n_hyst = count(&hyst);
    let per_period = n_plain as f64 / periods as f64;
    check(per_period >= 2.0, || format!("plain on-off {per_period} transitions per period"))?;
    check(n_hyst <= 1, || format!("hysteresis produced {n_hyst} transitions"))?;
    Ok(format!("plain {per_period} per period, gap 10 → {n_hyst} total"))
}

fn calibration_anchors() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    for _ in 0..2000 {
        let rest_level: u16 = rng.random_range(0..3000);
        let mvc_level: u16 = rng.random_range(rest_level + 50..=4095);
        let rest: Vec<u16> = (0..1000)
            .map(|_| rest_level.saturating_add(rng.random_range(0..20)).min(4095))
            .collect();
        let mvc: Vec<u16> = (0..1000)
            .map(|_| mvc_level.saturating_sub(rng.random_range(0..20)))
            .collect();
        let rest_raw = capture_rest(&rest).map_err(|e| e.to_string())?;
        let mvc_raw = capture_mvc(&mvc).map_err(|e| e.to_string())?;
        let Ok(p) = CalibrationProfile::new(rest_raw, mvc_raw, 0, 1000, 1000) else {
            continue;
        };
        let lo = normalize(p.rest_raw, &p).map_err(|e| e.to_string())?;
        let hi = normalize(p.mvc_raw, &p).map_err(|e| e.to_string())?;
        check(lo.abs() <= 1e-9, || format!("normalize(rest_raw={}) = {lo}", p.rest_raw))?;
        check((hi - 100.0).abs() <= 1e-9, || format!("normalize(mvc_raw={}) = {hi}", p.mvc_raw))?;
        let th = initial_threshold(&p);
        check(th == 50.0, || format!("initial threshold {th}"))?;
        checked += 1;
    }
    check(checked > 1000, || format!("only {checked} valid profiles generated"))?;
    Ok(format!("{checked} profiles, anchors within 1e-9, threshold 50"))
}

fn moving_average_step() -> Outcome {
    // step arriving after the window has filled with zeros
    let mut ma = MovingAverage::prefilled(50, 0.0);
    for k in 1..=50u32 {
        let y = ma.step(1.0);
        let want = k as f64 / 50.0;
        check(y == want, || format!("sample {k}: {y} != {want}"))?;
    }
    Ok("k/50 exact for k = 1..=50".into())
}

fn rescale_endpoints() -> Outcome {
    for d in [1.0, 5.0, 10.0] {
        let lo = rescale(d, d).value();
        let hi = rescale(100.0 - d, d).value();
        check(lo == 0.0, || format!("rescale({d}) = {lo}"))?;
        check(hi == 1.0, || format!("rescale({}) = {hi}", 100.0 - d))?;
    }
    Ok("exact for delta 1, 5, 10".into())
}

/// Rest, MVC ramp, then alternating holds of varying effort.
fn long_script(duration_ms: u64) -> IntentScript {
    let mut segs = vec![Segment {
        start_ms: 1000,
        end_ms: 2600,
        effort: 1.0,
    }];
    let efforts = [0.35, 0.55, 0.75, 0.45, 0.9, 0.6];
    let mut t = 5000;
    let mut i = 0;
    while t + 6000 <= duration_ms {
        segs.push(Segment {
            start_ms: t,
            end_ms: t + 4000 + (i as u64 % 3) * 500,
            effort: efforts[i % efforts.len()],
        });
        t += 10_000;
        i += 1;
    }
    IntentScript::new(segs).expect("valid script")
}

fn long_schedule() -> Vec<(u64, Command)> {
    vec![
        (0, Command::CalibrateRest),
        (1300, Command::CalibrateMvc),
        (3000, Command::Start),
        (
            300_000,
            Command::SetStrategy {
                strategy: Strategy::Proportional,
            },
        ),
        (
            600_000,
            Command::SetConfig {
                patch: ConfigPatch {
                    delta: Some(8.0),
                    th1: Some(15.0),
                    ..Default::default()
                },
            },
        ),
        (
            900_000,
            Command::SetConfig {
                patch: ConfigPatch {
                    strategy: Some(Strategy::OnOff),
                    hysteresis_gap: Some(10.0),
                    ..Default::default()
                },
            },
        ),
    ]
}

fn columns(path: &std::path::Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    Ok(text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("t_ms"))
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            format!("{},{}", f[5], f[6])
        })
        .collect())
}

fn session_determinism() -> Outcome {
    const TICKS: u64 = 1_200_000;
    let start = Instant::now();
    let cfg = EngineConfig {
        seed: 20_240_601,
        plant: PlantParams {
            encoder_noise_sd: 0.002,
            ..PlantParams::default()
        },
        ..EngineConfig::default()
    };
    let src = SynthSource::new(PatientModel::MODERATE, long_script(TICKS), cfg.seed)
        .map_err(|e| e.to_string())?
        .with_label("moderate");
    let record = run_session(cfg, Box::new(src), TICKS, long_schedule()).map_err(|e| e.to_string())?;
    check(record.rows.len() as u64 == TICKS, || format!("{} rows", record.rows.len()))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = dir.path().join("first.csv");
    let second = dir.path().join("second.csv");
    export_csv(&record, &first).map_err(|e| e.to_string())?;
    drop(record);
    let imported = import_csv(&first).map_err(|e| e.to_string())?;
    let replayed = replay_session(&imported).map_err(|e| e.to_string())?;
    export_csv(&replayed, &second).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let a = columns(&first)?;
    let b = columns(&second)?;
    check(a.len() as u64 == TICKS, || format!("first export has {} rows", a.len()))?;
    check(a.len() == b.len(), || format!("row counts {} vs {}", a.len(), b.len()))?;
    if let Some(i) = a.iter().zip(&b).position(|(x, y)| x != y) {
        return Err(format!("row {i} differs: {} vs {}", a[i], b[i]));
    }
    let moved = a.windows(2).filter(|w| w[0] != w[1]).count();
    check(moved > 1000, || format!("session barely moved ({moved} changes)"))?;
    check(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("{TICKS} rows identical, run+export+replay+export {elapsed:.1?}"))
}

fn plant_safety() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..1000 {
        let params = PlantParams {
            max_rate: rng.random_range(0.2..5.0),
            close_max_rate: rng.random_bool(0.5).then(|| rng.random_range(0.2..5.0)),
            time_constant: rng.random_range(5.0..300.0),
            encoder_noise_sd: 0.0,
        };
        let mut s = HandState::CLOSED;
        let mut level = 0.0;
        for _ in 0..3000 {
            if rng.random_bool(0.01) {
                level = rng.random_range(0.0..=1.0);
            }
            let r = if rng.random_bool(0.1) { rng.random_range(0.0..=1.0) } else { level };
            s = plant_step(s, Reference::new(r), 1.0, &params);
            check((0.0..=1.0).contains(&s.position), || {
                format!("stream {i}: position {} outside [0, 1]", s.position)
            })?;
        }
    }

    let mut worst = 0.0f64;
    let mut cases = 0;
    for rate in [0.5, 1.0, 2.0] {
        for tau in [20.0, 40.0, 80.0, 150.0] {
            let params = PlantParams {
                max_rate: rate,
                close_max_rate: None,
                time_constant: tau,
                encoder_noise_sd: 0.0,
            };
            let budget = (5.0 * tau + params.full_stroke_ms()).ceil() as u64;
            let mut s = HandState::CLOSED;
            for _ in 0..budget * 2 {
                s = plant_step(s, Reference::OPEN, 1.0, &params);
            }
            for _ in 0..budget {
                s = plant_step(s, Reference::CLOSED, 1.0, &params);
            }
            check(s.position < 1e-3, || {
                format!("rate {rate}, tau {tau}: position {} after {budget} ms", s.position)
            })?;
            worst = worst.max(s.position);
            cases += 1;
        }
    }
    Ok(format!("1000 streams bounded, closure in {cases} plants (worst {worst:.1e})"))
}

fn analysis_invariants() -> Outcome {
    let hyst = hysteresis_never_worse()?;
    let rms = ripple_rms_monotone()?;
    Ok(format!("{hyst}; {rms}"))
}

fn engine_record(cfg: EngineConfig, model: PatientModel, script: &IntentScript, ms: u64) -> Result<SessionRecord, String> {
    let src = SynthSource::new(model, script.clone(), cfg.seed).map_err(|e| e.to_string())?;
    run_session(cfg, Box::new(src), ms, Vec::new()).map_err(|e| e.to_string())
}

fn transitions(rec: &SessionRecord) -> u64 {
    compute_metrics(rec, &[], &AnalysisOptions::default())
        .expect("no holds")
        .reference_transition_count
}

fn hysteresis_never_worse() -> Result<String, String> {
    const MS: u64 = 6000;
    let script = IntentScript::new(vec![Segment {
        start_ms: 500,
        end_ms: 5500,
        effort: 0.5,
    }])
    .expect("valid script");
    let hold = HoldSegment::new(1500, 5500);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut plain_total, mut hyst_total) = (0u64, 0u64);
    for seed in 0..100u64 {
        let model = PatientModel {
            rest_noise_mean: 0.05,
            rest_noise_sd: rng.random_range(0.0..0.02),
            mvc_level: rng.random_range(0.8..3.0),
            ripple_amplitude: rng.random_range(0.01..0.12),
            ripple_period: rng.random_range(80.0..400.0),
            fatigue_rate: rng.random_range(0.0..0.02),
            contraction_rise_time: rng.random_range(50.0..200.0),
        };
        let profile = CalibrationProfile::new(quantize(model.rest_noise_mean), quantize(model.mvc_level), 0, 1000, 1000)
            .map_err(|e| e.to_string())?;
        let base = EngineConfig {
            seed,
            profile: Some(profile),
            autostart: true,
            ..EngineConfig::default()
        };

        // threshold at the hold mean puts the plain controller in its worst case
        let probe = engine_record(base.clone(), model, &script, MS)?;
        let seg = &probe.rows[hold.start_ms as usize..hold.end_ms as usize];
        let mean = seg.iter().map(|r| r.emg_percent).sum::<f64>() / seg.len() as f64;
        let (lo, hi) = seg
            .iter()
            .fold((f64::MAX, f64::MIN), |(lo, hi), r| (lo.min(r.emg_percent), hi.max(r.emg_percent)));
        let ptp = hi - lo;
        let gap = ptp + 1.0;
        let th = mean.clamp(gap / 2.0 + 1.0, 99.0 - gap / 2.0);

        let plain_cfg = EngineConfig {
            control: ControlConfig { th, ..ControlConfig::default() },
            ..base.clone()
        };
        let hyst_cfg = EngineConfig {
            control: ControlConfig {
                th,
                hysteresis_gap: gap,
                ..ControlConfig::default()
            },
            ..base
        };
        let plain = transitions(&engine_record(plain_cfg, model, &script, MS)?);
        let with_gap = transitions(&engine_record(hyst_cfg, model, &script, MS)?);
        check(with_gap <= plain, || {
            format!("seed {seed}: gap {gap:.2} gave {with_gap} transitions, plain {plain}")
        })?;
        plain_total += plain;
        hyst_total += with_gap;
    }
    Ok(format!("100 sessions, transitions plain {plain_total} vs hysteresis {hyst_total}"))
}

fn ripple_rms_monotone() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let emg: Vec<f64> = (0..20_000)
        .map(|k| 50.0 + 6.0 * (2.0 * std::f64::consts::PI * k as f64 / 200.0).sin() + rng.random_range(-2.0..=2.0))
        .collect();
    let holds = [HoldSegment::new(1000, 20_000)];
    let mut prev = f64::INFINITY;
    let mut out = Vec::new();
    for delta in [0.0, 2.0, 5.0, 10.0] {
        let mut c = Controller::new(ControlConfig {
            strategy: Strategy::Proportional,
            th1: 0.0,
            th2: 100.0,
            delta,
            ..ControlConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let mut rec = SessionRecord::new(SessionHeader {
            format_version: FORMAT_VERSION,
            seed: 0,
            source: "fixed".into(),
            window: 50,
            decimation: 20,
            profile: None,
            config: *c.config(),
            plant: PlantParams::default(),
            calibration: CalibrationSettings::default(),
        });
        for (t, &e) in emg.iter().enumerate() {
            let o = c.step(e);
            rec.rows.push(Row {
                t_ms: t as u64,
                volts: 0.0,
                raw: 0,
                emg_percent: e,
                x_percent: o.x_percent,
                reference: o.reference.value(),
                position: 0.0,
            });
        }
        let rms = compute_metrics(&rec, &holds, &AnalysisOptions::default())
            .map_err(|e| e.to_string())?
            .aperture_ripple_rms;
        check(rms <= prev, || format!("ripple rms rose to {rms} at delta {delta} (was {prev})"))?;
        out.push(format!("{rms:.2e}"));
        prev = rms;
    }
    Ok(format!("ripple rms over delta 0/2/5/10: {}", out.join(" ≥ ")))
}

//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sgdse::algebraic::observe_x1_x3;
use sgdse::config::{load_config, RunConfig};
use sgdse::drem::{extend_and_mix, HOperator, Lag3};
use sgdse::machine::SgParams;
use sgdse::network::{
    aux_current, inverse_map, map_to_terminal, AuxParams, LineParams, NetworkParams, TerminalMeasurement,
    TransformerParams,
};
use sgdse::phasor::{dq_compose, normalize_angle, Phasor};
use sgdse::pipeline::{
    calibrate_delta2_ref, estimate, reconstruct, simulate, validate_scenario, PreparedScenario, ValidationRun,
};
use sgdse::sim::{integrate_scenario, GridSource, Sine};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn config(name: &str) -> RunConfig {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    load_config(dir.join(name)).expect("demo config")
}

fn c1_algebraic_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut max_err, mut draws) = (0.0f64, 0usize);
    while draws < 10_000 {
        let xdp = rng.random_range(0.1..0.5);
        let p = SgParams {
            rs: rng.random_range(0.0..0.02),
            xdp,
            xq: xdp + rng.random_range(0.0..1.5),
            ..SgParams::default()
        };
        let x1 = rng.random_range(-PI..PI);
        let x3 = rng.random_range(0.6..2.0);
        let (id, iq) = (rng.random_range(-1.0..1.5), rng.random_range(-1.0..1.0));
        // The closed form needs a positive q-axis flux.
        if (p.xq - p.xdp) * id + x3 <= 0.05 {
            continue;
        }
        let vd = p.xq * iq - p.rs * id;
        let vq = x3 - p.rs * iq - p.xdp * id;
        let y = TerminalMeasurement::from_phasors(0.0, dq_compose(vd, vq, x1), dq_compose(id, iq, x1));
        let (x1h, x3h) = observe_x1_x3(&y, &p).expect("observer");
        max_err = max_err.max(normalize_angle(x1h - x1).abs()).max((x3h - x3).abs());
        draws += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        max_err < 1e-9 && secs < 5.0,
        format!("{draws} draws, max error {max_err:.2e} (< 1e-9), {secs:.2} s (< 5 s)"),
    )
}

fn random_network(rng: &mut ChaCha8Rng) -> NetworkParams {
    NetworkParams {
        line: LineParams {
            z: Complex64::new(rng.random_range(0.0..0.05), rng.random_range(0.01..0.3)),
            y: Complex64::new(rng.random_range(0.0..0.005), rng.random_range(0.0..0.1)),
        },
        transformer: TransformerParams {
            rcu_hv: rng.random_range(0.0..0.01),
            rcu_lv: rng.random_range(0.0..0.01),
            xsig_hv: rng.random_range(0.0..0.1),
            xsig_lv: rng.random_range(0.0..0.1),
            xm: rng.random_range(50.0..5000.0),
            rfe: rng.random_range(100.0..10000.0),
            tau: rng.random_range(-0.15..0.15),
            phi: rng.random_range(-0.6..0.6),
        },
        aux: AuxParams {
            p_as_max: rng.random_range(0.0..0.1),
            p_sg_max: 1.0,
            pf: rng.random_range(0.5..1.0),
            t0: rng.random_range(-1.0..0.0),
        },
    }
}

fn c2_mapping_round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 500;
    let mut max_err = 0.0f64;
    let configs = 1000;
    for _ in 0..configs {
        let net = random_network(&mut rng);
        let ph: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));
        let terminal: Vec<TerminalMeasurement> = (0..n)
            .map(|k| {
                let t = 0.02 * k as f64;
                TerminalMeasurement {
                    t,
                    y1: 1.0 + 0.05 * (1.1 * t + ph[0]).sin(),
                    y2: 0.3 * (0.7 * t + ph[1]).sin(),
                    y3: 0.8 + 0.1 * (1.3 * t + ph[2]).cos(),
                    y4: -0.2 + 0.2 * (0.9 * t + ph[3]).cos(),
                }
            })
            .collect();
        let step = rng.random_range(1..n);
        let taps: Vec<f64> = (0..n)
            .map(|k| net.transformer.tau + if k >= step { 0.0125 } else { 0.0 })
            .collect();
        // Physical PMU data, then the round trip PMU → terminal → PMU.
        let pmu = inverse_map(&terminal, &taps, &net).expect("inverse map");
        let y = map_to_terminal(&pmu, &net).expect("map");
        let back = inverse_map(&y, &taps, &net).expect("inverse map");
        for (a, b) in pmu.iter().zip(&back) {
            let e = [
                (a.t - b.t).abs(),
                (a.v.0 - b.v.0).norm(),
                (a.i.0 - b.i.0).norm(),
                (a.tap - b.tap).abs(),
            ];
            max_err = e.iter().fold(max_err, |m, v| m.max(*v));
        }
        for (a, b) in terminal.iter().zip(&y) {
            let e = [a.y1 - b.y1, a.y2 - b.y2, a.y3 - b.y3, a.y4 - b.y4];
            max_err = e.iter().fold(max_err, |m, v| m.max(v.abs()));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        max_err < 1e-8 && secs < 30.0,
        format!("{configs} networks x {n} samples, max error {max_err:.2e} (< 1e-8), {secs:.2} s (< 30 s)"),
    )
}

fn c3_aux_current() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut max_err = 0.0f64;
    for _ in 0..10_000 {
        let (p, q) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let v = Phasor::from_polar(rng.random_range(0.1..2.0), rng.random_range(-PI..PI));
        let i = aux_current(p, q, v).expect("aux current");
        let oracle = (Complex64::new(p, q) / v.0).conj();
        max_err = max_err.max((i.re() - oracle.re).abs()).max((i.im() - oracle.im).abs());
    }
    outcome(
        max_err < 1e-12,
        format!("10000 draws, max error {max_err:.2e} (< 1e-12)"),
    )
}

fn c4_drem_decoupling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut max_err = 0.0f64;
    for _ in 0..10_000 {
        let psi: [[f64; 2]; 2] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-10.0..10.0)));
        let theta = [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)];
        let z = [
            psi[0][0] * theta[0] + psi[0][1] * theta[1],
            psi[1][0] * theta[0] + psi[1][1] * theta[1],
        ];
        let (delta, zc) = extend_and_mix(z, psi);
        for j in 0..2 {
            max_err = max_err.max((zc[j] - delta * theta[j]).abs());
        }
    }
    outcome(
        max_err < 1e-10,
        format!("10000 draws, max |adj(Psi)Z - Delta theta| {max_err:.2e} (< 1e-10)"),
    )
}

/// Closed-loop run on a configured scenario with a given Δ²_ref (`None`:
/// calibrate on this scenario).
fn closed_loop(cfg: &RunConfig, delta2_ref: Option<f64>) -> (ValidationRun, f64) {
    let start = Instant::now();
    let sim = simulate(cfg).expect("simulation");
    let prepared = PreparedScenario::from_pmu(&sim.pmu, Some(&sim.truth), cfg).expect("mapping");
    let d2 = delta2_ref.unwrap_or_else(|| {
        let r = reconstruct(&prepared.terminal, &cfg.machine, &cfg.governor, &cfg.pipeline).expect("reconstruction");
        calibrate_delta2_ref(&r, &cfg.estimator).expect("calibration")
    });
    let run = validate_scenario(
        &prepared.scenario("scenario", cfg),
        &cfg.machine,
        &cfg.governor,
        &cfg.estimator,
        d2,
        &cfg.pipeline,
    )
    .expect("validation");
    (run, start.elapsed().as_secs_f64())
}

/// End of the excitation onset plus the slowest filter settling time.
fn transient_end(cfg: &RunConfig) -> f64 {
    let e = &cfg.estimator;
    let slowest = [e.lambda1, e.lambda2, e.lambda3, e.c1, e.c2]
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    cfg.simulation.grid.quiet + cfg.simulation.grid.ramp + 10.0 / slowest
}

/// Steps where |θ̃_j| grows while outside its accuracy band, counted over
/// the whole run and after `t_from`.
fn monotonicity_breaks(run: &ValidationRun, theta: [f64; 2], band: [f64; 2], t_from: f64) -> ([usize; 2], [usize; 2]) {
    let (mut all, mut after) = ([0; 2], [0; 2]);
    for w in run.estimation.drem.windows(2) {
        for j in 0..2 {
            let a = (w[0].theta_hat[j] - theta[j]).abs();
            let b = (w[1].theta_hat[j] - theta[j]).abs();
            if b > a && b > band[j] * theta[j].abs() {
                all[j] += 1;
                if w[0].t >= t_from {
                    after[j] += 1;
                }
            }
        }
    }
    (all, after)
}

fn recovery(cfg: &RunConfig, run: &ValidationRun, secs: f64, scale: f64) -> Outcome {
    let r = &run.report;
    let (e1, e2) = (r.a1_error_pct.unwrap_or(f64::NAN), r.a2_error_pct.unwrap_or(f64::NAN));
    let theta = [cfg.machine.a1(), cfg.machine.a2()];
    let band = [0.05 * scale, 0.01 * scale];
    let t_from = transient_end(cfg);
    let (all, after) = monotonicity_breaks(run, theta, band, t_from);
    let pass =
        e2 < 1.0 * scale && e1 < 5.0 * scale && after == [0, 0] && run.estimation.unstable_steps == 0 && secs < 60.0;
    outcome(
        pass,
        format!(
            "a2 err {e2:.3}% (< {:.0}%), a1 err {e1:.3}% (< {:.0}%), error growth outside band after {t_from:.1} s: {after:?} (whole run {all:?}), unstable steps {}, {secs:.2} s (< 60 s)",
            1.0 * scale,
            5.0 * scale,
            run.estimation.unstable_steps
        ),
    )
}

fn observer_tracking(run: &ValidationRun, scale: f64) -> Outcome {
    let r = &run.report;
    let limit = 1.0 * scale;
    outcome(
        r.convergence_time.is_some() && r.smape_x2_observer < limit,
        format!(
            "sMAPE(x2_hat, x2) {:.4}% (< {limit}%) after t_conv = {:.2} s",
            r.smape_x2_observer,
            r.convergence_time.unwrap_or(f64::NAN)
        ),
    )
}

fn playback_consistency(run: &ValidationRun, scale: f64) -> Outcome {
    let r = &run.report;
    let (lim, lim_q) = (0.5 * scale, 2.0 * scale);
    outcome(
        r.convergence_time.is_some()
            && r.smape_x2_playback < lim
            && r.smape_it_playback < lim
            && r.smape_pt_playback < lim
            && r.smape_qt_playback < lim_q,
        format!(
            "sMAPE x2 {:.4}%, It {:.4}%, Pt {:.4}% (< {lim}%), Qt {:.4}% (< {lim_q}%)",
            r.smape_x2_playback, r.smape_it_playback, r.smape_pt_playback, r.smape_qt_playback
        ),
    )
}

fn c6_noisy_recovery(auto: &RunConfig) -> Outcome {
    let mut cfg = auto.clone();
    cfg.simulation.noise_mag = 1e-4;
    cfg.simulation.noise_ang = 1e-4;
    let (run, secs) = closed_loop(&cfg, None);
    let e2 = run.report.a2_error_pct.unwrap_or(f64::NAN);
    outcome(e2 < 10.0, format!("sigma 1e-4: a2 err {e2:.3}% (< 10%), {secs:.2} s"))
}

fn c10_filters_and_order() -> Outcome {
    let dt = 0.02;
    // F has unit DC gain: long constant input.
    let mut f = Lag3::new([8.0, 6.2, 7.4], dt).expect("filter");
    let mut y = 0.0;
    for _ in 0..5000 {
        y = f.step(1.0);
    }
    let dc_err = (y - 1.0).abs();

    // Phase lead of H channel 2 over channel 1 for in-band sines
    // (ω ≪ min(c1, c2)), against 90° and against the analytic lead.
    let (c1, c2) = (8.0f64, 6.0f64);
    let (mut worst_lead, mut worst_model) = (0.0f64, 0.0f64);
    for omega in [0.05, 0.1, 0.2] {
        let mut h = HOperator::new(6.5, c1, c2, dt).expect("operator");
        let settle = (40.0 / dt) as usize;
        let n_fit = ((8.0 * PI / omega) / dt).round() as usize;
        let (mut s1, mut k1, mut s2, mut k2) = (0.0, 0.0, 0.0, 0.0);
        for k in 0..settle + n_fit {
            let t = k as f64 * dt;
            let out = h.step((omega * t).sin());
            if k >= settle {
                s1 += out[0] * (omega * t).sin();
                k1 += out[0] * (omega * t).cos();
                s2 += out[1] * (omega * t).sin();
                k2 += out[1] * (omega * t).cos();
            }
        }
        let lead = (k2.atan2(s2) - k1.atan2(s1)).to_degrees();
        let model = (PI / 2.0 - (omega / c1).atan() - (omega / c2).atan()).to_degrees();
        worst_lead = worst_lead.max((lead - 90.0).abs());
        worst_model = worst_model.max((lead - model).abs());
    }

    // Observed RK4 order on a smooth scenario: Richardson ratio of the
    // differences between successive step halvings.
    let base = config("auto.toml");
    let mut sim = base.simulation.clone();
    sim.horizon = 6.0;
    sim.grid = GridSource {
        quiet: 0.0,
        ramp: 0.0,
        freq_offset: 0.0,
        angle_sines: vec![
            Sine {
                amplitude: 0.05,
                freq: 0.8,
                phase: 0.0,
            },
            Sine {
                amplitude: 0.03,
                freq: 1.5,
                phase: 0.0,
            },
        ],
        ..GridSource::constant(1.0, 0.0)
    };
    let runs: Vec<Vec<[f64; 3]>> = [0.02, 0.01, 0.005]
        .iter()
        .map(|&h| {
            let s = sgdse::sim::SimulationConfig { dt: h, ..sim.clone() };
            integrate_scenario(&base.machine, &base.governor, &base.network, &s, 0)
                .expect("simulation")
                .truth
                .iter()
                .map(|x| [x.x1, x.x2, x.x3])
                .collect()
        })
        .collect();
    let diff = |a: &Vec<[f64; 3]>, b: &Vec<[f64; 3]>| {
        a.iter()
            .zip(b)
            .flat_map(|(u, v)| (0..3).map(move |j| (u[j] - v[j]).abs()))
            .fold(0.0f64, f64::max)
    };
    let order = (diff(&runs[0], &runs[1]) / diff(&runs[1], &runs[2])).log2();

    outcome(
        dc_err < 1e-6 && worst_lead < 5.0 && worst_model < 0.5 && order >= 3.8,
        format!(
            "F DC gain error {dc_err:.1e} (< 1e-6), H phase lead off 90 deg by {worst_lead:.2} deg (< 5) and off the analytic lead by {worst_model:.3} deg, RK4 observed order {order:.2} (>= 3.8)"
        ),
    )
}

fn c11_excitation_gate(auto: &RunConfig, delta2_ref: f64) -> Outcome {
    let mut cfg = auto.clone();
    cfg.simulation.grid = GridSource::constant(cfg.simulation.grid.v0, cfg.simulation.grid.theta0);
    let sim = simulate(&cfg).expect("simulation");
    let prepared = PreparedScenario::from_pmu(&sim.pmu, Some(&sim.truth), &cfg).expect("mapping");
    let r = reconstruct(&prepared.terminal, &cfg.machine, &cfg.governor, &cfg.pipeline).expect("reconstruction");
    let e = estimate(r, &cfg.estimator, delta2_ref).expect("estimation");
    let last = e.drem.last().expect("samples");
    let rate = last.excitation / (last.t - e.drem[0].t);
    let max_ma = e.drem.iter().map(|s| s.delta2_ma).fold(0.0, f64::max);
    let clamped = e.drem.iter().all(|s| s.k_gamma == [100.0, 100.0]);
    let th0 = cfg.estimator.theta0;
    let drift = e
        .drem
        .iter()
        .map(|s| (s.theta_hat[0] - th0[0]).abs().max((s.theta_hat[1] - th0[1]).abs()))
        .fold(0.0, f64::max);
    let floor = cfg.estimator.excitation_rate_floor;
    outcome(
        rate < floor && clamped && drift < 1e-12 && e.excitation_deficient,
        format!(
            "mean Delta^2 {rate:.1e} (< floor {floor:.0e}), max moving average {max_ma:.1e}, K clamped at 100: {clamped}, max |theta_hat - theta0| {drift:.1e}, warning raised: {}",
            e.excitation_deficient
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "algebraic observer exactness", c1_algebraic_exactness()),
        (2, "mapping round trip", c2_mapping_round_trip()),
        (3, "auxiliary current equals conj(S/V)", c3_aux_current()),
        (4, "DREM decoupling identity", c4_drem_decoupling()),
    ];

    let auto = config("auto.toml");
    let cross = config("cross.toml");
    let (auto_run, auto_secs) = closed_loop(&auto, None);
    let delta2_ref = auto_run.report.delta2_ref;
    results.push((
        5,
        "closed-loop recovery, noise-free",
        recovery(&auto, &auto_run, auto_secs, 1.0),
    ));
    results.push((6, "closed-loop recovery with noise", c6_noisy_recovery(&auto)));
    results.push((7, "observer tracking", observer_tracking(&auto_run, 1.0)));
    results.push((
        8,
        "event playback self-consistency",
        playback_consistency(&auto_run, 1.0),
    ));

    let (cross_run, cross_secs) = closed_loop(&cross, Some(delta2_ref));
    let parts = [
        recovery(&cross, &cross_run, cross_secs, 2.0),
        observer_tracking(&cross_run, 2.0),
        playback_consistency(&cross_run, 2.0),
    ];
    let c9 = outcome(
        parts.iter().all(|p| p.pass),
        format!(
            "half setpoint, auto delta2_ref {delta2_ref:.3e}, doubled limits: {}",
            parts.iter().map(|p| p.detail.as_str()).collect::<Vec<_>>().join("; ")
        ),
    );
    results.push((9, "cross-validation without re-tuning", c9));
    results.push((10, "filter and integrator properties", c10_filters_and_order()));
    results.push((11, "excitation gate", c11_excitation_gate(&auto, delta2_ref)));

    let mut failed = 0;
    for (id, name, o) in &results {
        println!(
            "criterion {id:>2} {}: {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

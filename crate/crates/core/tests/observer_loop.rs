mod common;

use common::{rel_l2, table_params, Multisine};
use roadsense::fleet::{build_fleet, table_row, FleetConfig};
use roadsense::lti::{log_space, SignalTrace};
use roadsense::observer::{make_q, reconstruct_road, run_agent, synth_omega, AgentLoop, QFilterSpec};
use roadsense::roads::RoadSpec;
use roadsense::vehicle::{delta, filter_trace, VehicleParams};

const DT: f64 = 1e-3;

fn agent(j: usize, stiffness_factor: f64) -> AgentLoop {
    let (actual, pid) = table_row(j, 1.0 / 15.0).unwrap();
    let nominal = VehicleParams {
        k_s: actual.k_s * stiffness_factor,
        ..actual
    };
    AgentLoop::new(actual, nominal, pid, QFilterSpec::default(), DT).unwrap()
}

fn zero_df(n: usize) -> SignalTrace {
    SignalTrace::zeros(DT, n, "d_f")
}

#[test]
fn exact_model_observer_is_the_q_filter() {
    let q = make_q(&QFilterSpec::default()).unwrap();
    for j in [1, 40, 90] {
        let omega = synth_omega(&agent(j, 1.0), false).unwrap();
        for w in log_space(1e-2, 200.0, 50) {
            let a = omega.freq_response(w).unwrap();
            let b = q.freq_response(w).unwrap();
            assert!((a - b).norm() <= 1e-8 * b.norm(), "j={j} w={w}");
        }
    }
}

#[test]
fn exact_model_estimate_is_q_filtered_disturbance() {
    let lp = agent(12, 1.0);
    let n = 6000;
    let road = Multisine::new(5, 8, (0.3, 15.0), 0.01).trace(DT, n, "z_r");
    let log = run_agent(&lp, &road, &zero_df(n)).unwrap();
    let want = filter_trace(&lp.q_filter().unwrap(), &log.d).unwrap();
    assert!(rel_l2(log.d_hat_prime.samples(), want.samples()) < 1e-3);
}

#[test]
fn mismatched_estimate_follows_the_actual_observer_map() {
    let lp = agent(20, 1.1);
    let n = 6000;
    let road = Multisine::new(6, 8, (0.3, 15.0), 0.01).trace(DT, n, "z_r");
    let log = run_agent(&lp, &road, &zero_df(n)).unwrap();
    let omega = synth_omega(&lp, false).unwrap();
    let want = filter_trace(&omega, &log.d).unwrap();
    assert!(rel_l2(log.d_hat_prime.samples(), want.samples()) < 1e-3);
    let e_d = filter_trace(&omega.one_minus().unwrap(), &log.d).unwrap();
    assert!(rel_l2(log.e_d().samples(), e_d.samples()) < 1e-3);
}

#[test]
fn learning_signal_enters_the_estimate_additively() {
    let lp = agent(7, 1.0);
    let n = 4000;
    let road = RoadSpec {
        duration: 4.0,
        ..RoadSpec::sinusoid()
    }
    .generate()
    .unwrap();
    let d_f = Multisine::new(9, 5, (0.5, 6.0), 1.0).trace(DT, n, "d_f");
    let base = run_agent(&lp, &road, &zero_df(n)).unwrap();
    let with = run_agent(&lp, &road, &d_f).unwrap();
    let shift = with.d_hat.sub(&base.d_hat).unwrap();
    let again = run_agent(&lp, &SignalTrace::zeros(DT, n, "z_r"), &d_f).unwrap();
    for (a, b) in shift.samples().iter().zip(again.d_hat.samples()) {
        assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
    }
    assert!(with.d_f == d_f.clone().with_label("d_f"));
}

#[test]
fn observer_reduces_body_motion_for_every_tested_vehicle() {
    let road = RoadSpec::sinusoid().generate().unwrap();
    let n = road.len();
    for j in (1..=90).step_by(11) {
        let on = agent(j, 1.0);
        let off = on.clone().with_dob(false).unwrap();
        let a = run_agent(&on, &road, &zero_df(n)).unwrap().z_s.rms();
        let b = run_agent(&off, &road, &zero_df(n)).unwrap().z_s.rms();
        assert!(a < b, "j={j}: with {a}, without {b}");
    }
}

#[test]
fn every_default_fleet_vehicle_is_closed_loop_stable() {
    let cfg = FleetConfig::default();
    for spec in build_fleet(&cfg).unwrap() {
        spec.agent_loop(&cfg).unwrap();
    }
}

#[test]
fn stiffness_mismatch_keeps_the_observer_near_q() {
    let q = make_q(&QFilterSpec::default()).unwrap();
    for f in [0.9, 1.1] {
        for j in [1, 45, 90] {
            let omega = synth_omega(&agent(j, f), false).unwrap();
            for w in log_space(1e-2, 20.0, 60) {
                let d = (omega.freq_response(w).unwrap() - q.freq_response(w).unwrap()).norm();
                assert!(d < 0.15, "f={f} j={j} w={w}: {d}");
            }
        }
    }
}

#[test]
fn road_inverse_round_trips() {
    let p = table_params(33);
    let road = Multisine::new(11, 10, (0.2, 30.0), 0.01).trace(DT, 5000, "z_r");
    let d = filter_trace(&delta(&p), &road).unwrap();
    let back = reconstruct_road(&d, &p).unwrap();
    assert!(rel_l2(back.samples(), road.samples()) < 1e-9);

    let off = VehicleParams { k_s: p.k_s * 1.1, ..p };
    let d = filter_trace(&delta(&off), &road).unwrap();
    let back = reconstruct_road(&d, &p).unwrap();
    assert!(rel_l2(back.samples(), road.samples()) < 0.15);
}

#[test]
fn mismatched_road_and_loop_dt_are_rejected() {
    let lp = agent(1, 1.0);
    let road = SignalTrace::zeros(2e-3, 100, "z_r");
    assert!(run_agent(&lp, &road, &SignalTrace::zeros(2e-3, 100, "d_f")).is_err());
    let road = SignalTrace::zeros(DT, 100, "z_r");
    assert!(run_agent(&lp, &road, &zero_df(99)).is_err());
}

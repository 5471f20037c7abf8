mod common;

use common::Multisine;
use roadsense::fleet::{build_fleet, run_cascade, FleetConfig, IlcLearner};
use roadsense::ilc::{
    apply_filter_offline, compute_eta, contraction_diagnostics, make_learning_signal, max_sensitivity,
    synth_filters, Rolloff, SharedRecord,
};
use roadsense::lti::SignalTrace;
use roadsense::roads::RoadSpec;

const DT: f64 = 1e-3;

fn exact_cfg(n: usize, alpha: f64) -> FleetConfig {
    FleetConfig {
        n_agents: n,
        uncertainty_bound: 0.0,
        shuffle: false,
        alpha,
        ..FleetConfig::default()
    }
}

fn loops(cfg: &FleetConfig) -> Vec<roadsense::observer::AgentLoop> {
    build_fleet(cfg).unwrap().iter().map(|s| s.agent_loop(cfg).unwrap()).collect()
}

#[test]
fn eta_is_the_ratio_of_nominal_suspension_stiffnesses() {
    let cfg = exact_cfg(3, 0.5);
    let f = build_fleet(&cfg).unwrap();
    let eta = compute_eta(&f[1].nominal, &f[0].nominal).unwrap();
    let want = (950.0 + 200.0 / 15.0) / (950.0 + 100.0 / 15.0);
    assert!((eta - want).abs() < 1e-12);
}

#[test]
fn l1_is_improper_and_l2_reduces_to_eta() {
    let cfg = exact_cfg(2, 0.5);
    let l = loops(&cfg);
    let filters = synth_filters(&l[0].design(), &l[1].design(), 0.5).unwrap();
    assert_eq!(filters.l1.relative_degree(), -2);
    assert_eq!(filters.l2.order(), 0);
    assert!((filters.l2.dc_gain().unwrap() - filters.eta).abs() < 1e-6);

    // with an exact model the residual coupling is the drift of T_e1 from alpha
    let rep = contraction_diagnostics(&l[0], &l[1], &filters, false, (0.1, 20.0), 80).unwrap();
    for p in &rep.points {
        let te1 = num_complex::Complex64::new(p.t_e1.0 - 0.5, p.t_e1.1);
        let te2 = num_complex::Complex64::new(p.t_e2.0, p.t_e2.1);
        assert!((te1 - te2).norm() < 1e-6, "w={}", p.omega);
    }
    let band = contraction_diagnostics(&l[0], &l[1], &filters, false, (0.1, 10.0), 80).unwrap();
    assert!(band.max_te2 < 0.05 * 0.5);
}

#[test]
fn nominal_contraction_is_close_to_alpha_in_the_learning_band() {
    let cfg = exact_cfg(90, 0.5);
    let l = loops(&cfg);
    for k in [1, 30, 89] {
        let filters = synth_filters(&l[k - 1].design(), &l[k].design(), 0.5).unwrap();
        let rep = contraction_diagnostics(&l[k - 1], &l[k], &filters, false, (0.1, 10.0), 80).unwrap();
        assert!(rep.max_te1_deviation < 0.05 * 0.5, "pair {k}: {}", rep.max_te1_deviation);
    }
}

#[test]
fn uncertain_fleet_still_contracts_in_the_learning_band() {
    let cfg = FleetConfig {
        shuffle: false,
        ..FleetConfig::default()
    };
    let l = loops(&cfg);
    for k in 1..l.len() {
        let filters = synth_filters(&l[k - 1].design(), &l[k].design(), 0.5).unwrap();
        let rep = contraction_diagnostics(&l[k - 1], &l[k], &filters, true, (0.1, 10.0), 60).unwrap();
        assert!(rep.max_te1 < 1.0, "pair {k}: {}", rep.max_te1);
    }
}

#[test]
fn sensitivity_peak_is_bounded_across_the_table() {
    let cfg = exact_cfg(90, 0.5);
    let worst = loops(&cfg)
        .iter()
        .map(|lp| max_sensitivity(lp, (0.1, 20.0), 200).unwrap())
        .fold(0.0, f64::max);
    assert!(worst < 0.75, "{worst}");
}

fn record(cfg: &FleetConfig, e: SignalTrace, d_f: SignalTrace) -> SharedRecord {
    let l = loops(cfg);
    SharedRecord::new(1, e, d_f, l[0].design()).unwrap()
}

#[test]
fn learning_signal_is_linear_in_the_record() {
    let cfg = exact_cfg(2, 0.5);
    let l = loops(&cfg);
    let filters = synth_filters(&l[0].design(), &l[1].design(), 0.5).unwrap();
    let n = 3000;
    let e1 = Multisine::new(1, 6, (0.2, 30.0), 0.003).trace(DT, n, "e");
    let e2 = Multisine::new(2, 6, (0.2, 30.0), 0.003).trace(DT, n, "e");
    let f1 = Multisine::new(3, 6, (0.2, 30.0), 2.0).trace(DT, n, "d_f");
    let f2 = Multisine::new(4, 6, (0.2, 30.0), 2.0).trace(DT, n, "d_f");
    let k = -1.7;
    let go = |e: &SignalTrace, f: &SignalTrace| {
        make_learning_signal(Some(&filters), Some(&record(&cfg, e.clone(), f.clone())), DT, n, &cfg.rolloff).unwrap()
    };
    let a = go(&e1, &f1);
    let b = go(&e2, &f2);
    let c = go(&e1.add(&e2.scale(k)).unwrap(), &f1.add(&f2.scale(k)).unwrap());
    let scale = c.max_abs().max(a.max_abs());
    for i in 0..n {
        assert!((c.samples()[i] - a.samples()[i] - k * b.samples()[i]).abs() <= 1e-9 * scale);
    }
}

#[test]
fn no_predecessor_means_no_learning_signal() {
    let d_f = make_learning_signal(None, None, DT, 500, &Rolloff::default()).unwrap();
    assert!(d_f.samples().iter().all(|&v| v == 0.0));
}

#[test]
fn improper_filters_need_a_rolloff() {
    let cfg = exact_cfg(2, 0.5);
    let l = loops(&cfg);
    let filters = synth_filters(&l[0].design(), &l[1].design(), 0.5).unwrap();
    let x = Multisine::new(5, 3, (1.0, 5.0), 1.0).trace(DT, 1000, "x");
    assert!(apply_filter_offline(&filters.l1, &x, None).is_err());
    assert!(apply_filter_offline(&filters.l1, &x, Some(&Rolloff::default())).is_ok());
}

fn tail_norms(cfg: &FleetConfig) -> Vec<f64> {
    let road = RoadSpec::sinusoid().generate().unwrap();
    let res = run_cascade(cfg, &build_fleet(cfg).unwrap(), &road, None, &IlcLearner).unwrap();
    res.agents.iter().map(|a| a.log.e_d().tail(500).l2_norm()).collect()
}

#[test]
fn estimation_error_shrinks_by_alpha_early_in_the_cascade() {
    for alpha in [0.3, 0.5, 0.8] {
        let norms = tail_norms(&exact_cfg(3, alpha));
        for k in 1..norms.len() {
            let r = norms[k] / norms[k - 1];
            assert!((0.8 * alpha..=1.2 * alpha).contains(&r), "alpha={alpha} k={k}: {r}");
        }
    }
}

#[test]
fn learning_signals_settle_along_the_cascade() {
    let cfg = exact_cfg(14, 0.5);
    let road = RoadSpec::sinusoid().generate().unwrap();
    let res = run_cascade(&cfg, &build_fleet(&cfg).unwrap(), &road, None, &IlcLearner).unwrap();
    let steps: Vec<f64> = res
        .agents
        .windows(2)
        .map(|w| w[1].log.d_f.sub(&w[0].log.d_f).unwrap().tail(500).l2_norm())
        .collect();
    assert!(steps[steps.len() - 1] < 0.1 * steps[0], "{steps:?}");
}

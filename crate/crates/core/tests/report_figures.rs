use proptest::prelude::*;
use roadsense::fleet::{build_fleet, run_cascade, FleetConfig, IlcLearner};
use roadsense::lti::SignalTrace;
use roadsense::report::{convergence_fit, emit_figures, line_chart_svg, rmse, AgentTraces, FigureAgent};
use roadsense::roads::RoadSpec;

fn short_run(n: usize) -> roadsense::fleet::FleetResults {
    let cfg = FleetConfig {
        n_agents: n,
        duration: 2.0,
        ..FleetConfig::default()
    };
    let road = RoadSpec {
        duration: 2.0,
        ..RoadSpec::sinusoid()
    }
    .generate()
    .unwrap();
    run_cascade(&cfg, &build_fleet(&cfg).unwrap(), &road, None, &IlcLearner).unwrap()
}

fn names(paths: &[std::path::PathBuf]) -> Vec<String> {
    let mut v: Vec<String> = paths.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

#[test]
fn figures_are_written_as_csv_and_valid_svg() {
    let res = short_run(4);
    let dir = tempfile::tempdir().unwrap();
    let written = emit_figures(&res.figure_agents(), &[1, 2, 4], dir.path()).unwrap();
    let stems = ["estimates", "first_vs_last_error", "learning_signals", "rmse_vs_agent"];
    let mut want: Vec<String> = stems.iter().flat_map(|s| [format!("{s}.csv"), format!("{s}.svg")]).collect();
    want.sort();
    assert_eq!(names(&written), want);
    for p in written.iter().filter(|p| p.extension().unwrap() == "svg") {
        let text = std::fs::read_to_string(p).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        assert!(doc.descendants().any(|n| n.has_tag_name("polyline") || n.has_tag_name("path")));
    }
    let header = std::fs::read_to_string(dir.path().join("estimates.csv")).unwrap();
    assert!(header.starts_with("t,z_r,z_r_hat_1,z_r_hat_2,z_r_hat_4\n"));
}

#[test]
fn figure_csv_values_round_trip() {
    let res = short_run(3);
    let dir = tempfile::tempdir().unwrap();
    emit_figures(&res.figure_agents(), &[1, 3], dir.path()).unwrap();
    let mut rdr = csv::Reader::from_path(dir.path().join("rmse_vs_agent.csv")).unwrap();
    let back: Vec<f64> = rdr.records().map(|r| r.unwrap()[2].parse().unwrap()).collect();
    for (a, b) in back.iter().zip(res.rmse_series()) {
        assert!((a - b).abs() <= 1e-12 * b.abs());
    }
    let mut rdr = csv::Reader::from_path(dir.path().join("learning_signals.csv")).unwrap();
    for (k, r) in rdr.records().enumerate().step_by(97) {
        let v: f64 = r.unwrap()[2].parse().unwrap();
        let want = res.agents[2].log.d_f.samples()[k];
        assert!((v - want).abs() <= 1e-12 * want.abs().max(1e-12));
    }
}

#[test]
fn empty_selection_writes_only_the_summary_figure() {
    let res = short_run(2);
    let dir = tempfile::tempdir().unwrap();
    let written = emit_figures(&res.figure_agents(), &[], dir.path()).unwrap();
    assert_eq!(names(&written), ["rmse_vs_agent.csv", "rmse_vs_agent.svg"]);

    let bare: Vec<FigureAgent> = res
        .figure_agents()
        .into_iter()
        .map(|a| FigureAgent { traces: None, ..a })
        .collect();
    let written = emit_figures(&bare, &[1, 2], tempfile::tempdir().unwrap().path()).unwrap();
    assert_eq!(written.len(), 2);
}

#[test]
fn chart_escapes_markup_in_labels() {
    let svg = line_chart_svg("a < b & c", "x", "y", &[0.0, 1.0], &[("s", &[1.0, 2.0])]);
    roxmltree::Document::parse(&svg).unwrap();
}

#[test]
fn trace_panels_cover_first_and_last_traced_agents() {
    let res = short_run(3);
    let agents = res.figure_agents();
    let zero = SignalTrace::zeros(res.config.dt, res.config.samples(), "x");
    let mut custom: Vec<FigureAgent> = agents.clone();
    custom[1].traces = Some(AgentTraces {
        z_r: &zero,
        z_r_hat: &zero,
        d_f: &zero,
    });
    let dir = tempfile::tempdir().unwrap();
    emit_figures(&custom, &[2], dir.path()).unwrap();
    let mut rdr = csv::Reader::from_path(dir.path().join("first_vs_last_error.csv")).unwrap();
    let row = rdr.records().nth(1500).unwrap().unwrap();
    let last = &res.agents[2].log;
    let want = last.z_r_hat.samples()[1500] - last.z_r.samples()[1500];
    assert!((row[2].parse::<f64>().unwrap() - want).abs() < 1e-15);
}

fn trace(v: Vec<f64>) -> SignalTrace {
    SignalTrace::new(1e-3, v, "x").unwrap()
}

proptest! {
    #[test]
    fn rmse_is_symmetric_and_scales(
        a in prop::collection::vec(-1.0..1.0f64, 200),
        b in prop::collection::vec(-1.0..1.0f64, 200),
        k in 0.1..10.0f64,
    ) {
        let (ta, tb) = (trace(a), trace(b));
        let ab = rmse(&ta, &tb, 0.05).unwrap();
        prop_assert_eq!(ab, rmse(&tb, &ta, 0.05).unwrap());
        let scaled = rmse(&ta.scale(k), &tb.scale(k), 0.05).unwrap();
        prop_assert!((scaled - k * ab).abs() <= 1e-12 * (k * ab).max(1e-12));
        prop_assert_eq!(rmse(&ta, &ta, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn fit_recovers_geometric_series(floor in 0.0..2.0f64, scale in 0.5..10.0f64, rate in 0.2..0.9f64) {
        let series: Vec<f64> = (0..40).map(|k| floor + scale * rate.powi(k)).collect();
        let fit = convergence_fit(&series).unwrap();
        prop_assert!((fit.rate - rate).abs() < 1e-6);
        prop_assert!((fit.floor - floor).abs() < 1e-6);
        prop_assert!(fit.r_squared > 1.0 - 1e-9);
    }
}

#[test]
fn rmse_rejects_skip_beyond_the_trace() {
    let t = trace(vec![0.0; 10]);
    assert!(rmse(&t, &t, 1.0).is_err());
}

#[test]
fn fit_rejects_short_or_flat_series() {
    assert!(convergence_fit(&[1.0; 5]).is_err());
    assert!(convergence_fit(&[1.0; 30]).is_err());
}

#[test]
fn exact_model_cascade_converges_at_about_alpha() {
    let alpha = 0.5;
    let cfg = FleetConfig {
        n_agents: 25,
        uncertainty_bound: 0.0,
        shuffle: false,
        alpha,
        ..FleetConfig::default()
    };
    let road = RoadSpec::sinusoid().generate().unwrap();
    let res = run_cascade(&cfg, &build_fleet(&cfg).unwrap(), &road, None, &IlcLearner).unwrap();
    let fit = convergence_fit(&res.rmse_series()).unwrap();
    assert!((0.7 * alpha..=1.3 * alpha).contains(&fit.rate), "{fit:?}");
    assert!(fit.floor < 0.1 * res.agents[0].rmse_mm);
}

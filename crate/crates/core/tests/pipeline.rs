use bnqubo::dataset::SyntheticSpec;
use bnqubo::pipeline::{self, Input, PipelineConfig, Stage};
use bnqubo::pscs::Limits;
use bnqubo::verify;

fn synthetic(n: usize, seed: u64) -> PipelineConfig {
    PipelineConfig {
        input: Input::Synthetic(SyntheticSpec {
            num_variables: n,
            num_rows: 2000,
            seed,
            ..Default::default()
        }),
        ..Default::default()
    }
}

#[test]
fn default_synthetic_run_passes_audit() {
    let out = pipeline::run(&PipelineConfig::default()).unwrap();
    assert!(out.report.verdict, "{}", out.report.to_text());
    assert!(out.report.checks.iter().all(|c| c.passed == Some(true)));
}

#[test]
fn infinite_threshold_gives_empty_graph() {
    let cfg = PipelineConfig {
        threshold: f64::INFINITY,
        ..synthetic(4, 3)
    };
    let out = pipeline::run(&cfg).unwrap();
    assert!(out.report.verdict);
    assert!(out.report.solution.edges.is_empty());
    let empty: f64 = out.lists.iter().map(|l| l.empty_score().value()).sum();
    assert!(verify::close(out.report.solution.total_score, empty));
    assert_eq!(out.encoding.score_bits(), 0);
}

#[test]
fn omega_cap_refuses_encoding() {
    let cfg = PipelineConfig {
        threshold: 1e-4,
        limits: Limits {
            max_omega: Some(1),
            max_seconds: None,
        },
        ..synthetic(5, 1)
    };
    let err = pipeline::run(&cfg).unwrap_err();
    assert_eq!(err.stage, Stage::Encode);
    assert!(err.to_string().contains("partial"), "{err}");
}

#[test]
fn run_directory_is_complete_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = synthetic(4, 5);
    let mut texts = Vec::new();
    for name in ["a", "b"] {
        cfg.output = tmp.path().join(name);
        pipeline::run_to_dir(&cfg).unwrap();
        let dir = pipeline::RunDir::open(&cfg.output);
        for f in [
            "config.toml",
            "dataset.json",
            "truth.json",
            "candidates.json",
            "plan.json",
            "encoding.json",
            "qubo.json",
            "qubo.txt",
            "solve.json",
            "audit.json",
            "audit.txt",
            "metrics.csv",
            "metrics.json",
            "manifest.json",
        ] {
            assert!(dir.root.join(f).exists(), "missing {f}");
        }
        texts.push((
            std::fs::read(dir.qubo_text()).unwrap(),
            std::fs::read(dir.qubo_json()).unwrap(),
            std::fs::read(dir.audit_text()).unwrap(),
        ));
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn metrics_bits_are_monotone_in_budget() {
    let cfg = PipelineConfig {
        threshold: 0.005,
        metric_budgets: vec![0, 1, 2],
        ..synthetic(8, 2)
    };
    let (data, _, _) = pipeline::load_input(&cfg.input).unwrap();
    let lists = pipeline::select_candidates(&data, cfg.threshold, cfg.limits).unwrap();
    let m = bnqubo::metrics::compute_metrics(&lists, &cfg.metric_budgets);
    for r in &m.rows {
        assert_eq!(r.split_bits[0], r.lambda - 1);
        assert!(
            r.split_bits[2] <= r.split_bits[1] && r.split_bits[1] <= r.split_bits[0],
            "{r:?}"
        );
    }
}

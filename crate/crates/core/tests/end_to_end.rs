use hetfx::gravity::{ppml, three_way_ppml, twfe_ols, FESpec};
use hetfx::panel::{ingest_csv, write_csv, IngestConfig, TREATMENT};
use hetfx::pipeline::{run_pipeline, ForestMethod, PipelineConfig};
use hetfx::synth::{generate, DgpSpec};

fn crisis(pairs: usize) -> hetfx::panel::PanelDataset {
    let spec = DgpSpec {
        max_pairs: Some(pairs),
        ..DgpSpec::named("crisis", 3).unwrap()
    };
    generate(&spec).unwrap().0
}

#[test]
fn generated_panel_survives_a_csv_round_trip() {
    let ds = crisis(30);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("panel.csv");
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf).unwrap();
    std::fs::write(&path, buf).unwrap();
    let back = ingest_csv(&path, &IngestConfig::default()).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn benchmarks_agree_on_sign_for_the_crisis_process() {
    let ds = crisis(60);
    let t = vec![TREATMENT.to_string()];
    let ols = twfe_ols(&ds, &t, &FESpec::two_way()).unwrap();
    let pois = ppml(&ds, &t, &FESpec::two_way()).unwrap();
    let dir = three_way_ppml(&ds, TREATMENT).unwrap();
    assert!(pois.converged && dir.converged);
    for sol in [&ols, &pois, &dir] {
        let (b, se) = sol.coef(TREATMENT).unwrap();
        assert!(b.is_finite() && se > 0.0);
    }
    // Two-way fixed effects absorb the confounding pair shift.
    assert!((ols.coef(TREATMENT).unwrap().0 - 0.13).abs() < 0.06);
}

#[test]
fn pipeline_is_reproducible_for_a_seed() {
    let ds = crisis(40);
    let cfg = PipelineConfig::new(9).with_trees(40).with_method(ForestMethod::Cffe);
    let a = run_pipeline(&ds, &cfg).unwrap();
    let b = run_pipeline(&ds, &cfg).unwrap();
    assert_eq!(a.cate.tau_hat, b.cate.tau_hat);
    assert_eq!(a.ate, b.ate);
    assert_eq!(a.rows.len(), a.cate.len());
    let c = run_pipeline(&ds, &cfg.clone().with_seed(10)).unwrap();
    assert_ne!(a.cate.tau_hat, c.cate.tau_hat);
}

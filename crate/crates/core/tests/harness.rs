use std::collections::HashMap;
use std::path::Path;

use pam_core::exec::Execution;
use pam_core::harness::{
    geometric_factor, run_bounds, run_clt_with, run_command, run_covariance_compare, BoundsConfig, CltSource, Command, ExperimentConfig, SyntheticLaw,
};
use pam_core::noise_model::NoiseSpec;

fn config(seed: u64) -> ExperimentConfig {
    let c = ExperimentConfig {
        seed: Some(seed),
        replicates: 500,
        t_list: vec![1.0],
        r_list: vec![40.0],
        ..Default::default()
    };
    c.resolved(Execution::Parallel).unwrap()
}

#[test]
fn synthetic_gaussian_ks_calibration() {
    let spec = NoiseSpec::default_h2();
    let cfg = config(1);
    let ok = (0..20)
        .filter(|&k| {
            let r = run_clt_with(&cfg, &spec, CltSource::Synthetic { law: SyntheticLaw::Gaussian, seed: 1000 + k }).unwrap();
            let p = r.cells[0].stats.ks_p;
            assert!((0.0..=1.0).contains(&p));
            p > 0.01
        })
        .count();
    assert!(ok >= 17, "{ok}/20 runs with p > 0.01");
}

#[test]
fn synthetic_exponential_is_rejected() {
    let spec = NoiseSpec::default_h2();
    let r = run_clt_with(&config(2), &spec, CltSource::Synthetic { law: SyntheticLaw::Exponential, seed: 5 }).unwrap();
    let c = &r.cells[0];
    assert!(c.stats.ks_p < 0.01, "{}", c.stats.ks_p);
    assert!(!c.pass);
    assert!(!r.pass);
}

#[test]
fn synthetic_gaussian_passes_moment_bands() {
    let spec = NoiseSpec::default_h2();
    let r = run_clt_with(&config(3), &spec, CltSource::Synthetic { law: SyntheticLaw::Gaussian, seed: 77 }).unwrap();
    let c = &r.cells[0];
    assert!(c.moments_pass && c.distribution_pass);
    // unit normal scaled by √(2R): Var/2R ≈ 1
    assert!((c.var_over_2r.mean - 1.0).abs() < 4.0 * c.var_over_2r.stderr);
    assert!(c.target.is_none() && c.variance_pass.is_none());
}

#[test]
fn every_cell_appears_once_in_results() {
    let spec = NoiseSpec::default_h2();
    let mut cfg = config(4);
    cfg.t_list = vec![0.5, 1.0];
    cfg.r_list = vec![10.0, 20.0, 40.0];
    let r = run_clt_with(&cfg, &spec, CltSource::Synthetic { law: SyntheticLaw::Gaussian, seed: 8 }).unwrap();
    let out = r.outcome().unwrap();
    let mut seen: HashMap<(String, String), usize> = HashMap::new();
    for row in out.rows.iter().filter(|r| r.quantity == "skewness") {
        *seen.entry((format!("{:?}", row.t1), format!("{:?}", row.r))).or_default() += 1;
    }
    assert_eq!(seen.len(), 6);
    assert!(seen.values().all(|&n| n == 1));
}

#[test]
fn covariance_row_at_time_zero_is_zero() {
    let spec = NoiseSpec::default_h2();
    let mut cfg = ExperimentConfig {
        seed: Some(9),
        replicates: 50,
        t_list: vec![0.0],
        r_list: vec![5.0],
        decay_rs: vec![10.0],
        ..Default::default()
    };
    cfg.fk.n_paths = 100;
    let cfg = cfg.resolved(Execution::Parallel).unwrap();
    let t = run_covariance_compare(&cfg, &spec).unwrap();
    assert_eq!(t.rows.len(), 1);
    let r = &t.rows[0];
    for v in [r.direct.mean, r.fk_g_form.mean, r.fk_ex1_form.mean, r.fk_g_form_geometric.mean, r.first_chaos.unwrap(), r.corrected.unwrap()] {
        assert_eq!(v, 0.0);
    }
    assert!(r.partial_sums.iter().all(|(_, m)| m.mean == 0.0));
    assert_eq!(t.first_chaos_decay[0].2, 0.0);
}

#[test]
fn geometric_factor_overlap() {
    for r in [1.0, 10.0, 40.0] {
        assert_eq!(geometric_factor(0.0, r), 1.0);
        assert_eq!(geometric_factor(2.0 * r, r), 0.0);
        assert_eq!(geometric_factor(-2.0 * r, r), 0.0);
        assert_eq!(geometric_factor(r, r), 0.5);
    }
}

#[test]
fn empty_bounds_grid_is_an_empty_passing_report() {
    let cfg = ExperimentConfig {
        seed: Some(1),
        bounds: BoundsConfig {
            ps: Vec::new(),
            ell_phi_rs: Vec::new(),
            ..Default::default()
        },
        ..Default::default()
    };
    let b = run_bounds(&cfg, &NoiseSpec::default_h2(), Path::new(".")).unwrap();
    assert!(b.f1.is_empty() && b.f8.is_empty() && b.ell_phi.is_none());
    assert!(b.pass);
    let out = b.outcome(&cfg).unwrap();
    assert!(out.rows.is_empty() && out.pass);
}

#[test]
fn unknown_bound_name_is_rejected() {
    let cfg = ExperimentConfig {
        seed: Some(1),
        bounds: BoundsConfig {
            which: vec!["F3".into()],
            ..Default::default()
        },
        ..Default::default()
    };
    assert!(run_bounds(&cfg, &NoiseSpec::default_h2(), Path::new(".")).is_err());
}

#[test]
fn qtable_dump_writes_table() {
    let cfg = ExperimentConfig {
        seed: Some(1),
        ..Default::default()
    };
    let out = run_command(
        Command::QTableDump {
            eps: Some(0.1),
            x_max: Some(8.0),
            cells: 64,
        },
        &cfg,
        Path::new("."),
        Execution::Sequential,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("plot_qtable.csv")).unwrap();
    assert!(text.starts_with("x,q\n"));
    assert!(text.lines().count() >= 66);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["x_max"], 8.0);
}

#[test]
fn validate_flags_missing_seed() {
    let cfg = ExperimentConfig::default();
    let out = run_command(Command::Validate, &cfg, Path::new("."), Execution::Sequential).unwrap();
    assert!(!out.pass);
    assert_eq!(out.report["config_valid"], false);
    let cfg = ExperimentConfig { seed: Some(3), ..cfg };
    assert!(run_command(Command::Validate, &cfg, Path::new("."), Execution::Sequential).unwrap().pass);
}

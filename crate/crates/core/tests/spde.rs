use pam_core::exec::Execution;
use pam_core::fk::McEstimate;
use pam_core::noise_model::NoiseSpec;
use pam_core::spde::{elementary_mean, point_replicates, spatial_average_replicates, SpdeConfig};

fn second_moment(cfg: &SpdeConfig, reps: usize) -> McEstimate {
    let u = point_replicates(&NoiseSpec::default_h2(), cfg, 0.5, 0.0, reps).unwrap();
    let m2: Vec<f64> = u.iter().map(|v| elementary_mean(v, 2).unwrap()).collect();
    McEstimate::from_samples(&m2, cfg.seed)
}

#[test]
fn second_moment_is_stable_under_refinement() {
    let base = SpdeConfig {
        eps: 4.0,
        seed: 31,
        ..Default::default()
    };
    let fine = SpdeConfig {
        cells_per_unit: 100,
        period_factor: 5.0,
        period_pad: 20.0,
        seed: 32,
        ..base.clone()
    };
    let a = second_moment(&base, 2000);
    let b = second_moment(&fine, 2000);
    assert!(a.agrees_with(&b, 3.0, 0.05 * a.mean), "{a:?} vs {b:?}");
}

#[test]
fn averages_do_not_depend_on_thread_count() {
    let spec = NoiseSpec::default_h2();
    let par = SpdeConfig {
        eps: 16.0,
        seed: 5,
        ..Default::default()
    };
    let seq = SpdeConfig {
        execution: Execution::Sequential,
        ..par.clone()
    };
    let a = spatial_average_replicates(&spec, &par, &[0.5, 1.0], &[5.0], 24).unwrap();
    let b = spatial_average_replicates(&spec, &seq, &[0.5, 1.0], &[5.0], 24).unwrap();
    assert_eq!(a.data, b.data);
}

#[test]
fn replicates_are_prefix_stable() {
    // replicate r uses its own stream, so a longer run extends a shorter one
    let spec = NoiseSpec::default_h2();
    let cfg = SpdeConfig {
        eps: 16.0,
        seed: 6,
        ..Default::default()
    };
    let a = spatial_average_replicates(&spec, &cfg, &[1.0], &[5.0], 10).unwrap();
    let b = spatial_average_replicates(&spec, &cfg, &[1.0], &[5.0], 20).unwrap();
    assert_eq!(a.data[..], b.data[..a.data.len()]);
}

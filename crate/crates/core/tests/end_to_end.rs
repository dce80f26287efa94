use fastphase::instance::{measure, Instance, SchwarzSpec};
use fastphase::pipeline::{
    aligned_relative_error, fast_phase_retrieve, noise_sweep, quadrature_study, wf_instance, write_rows_csv,
    FprConfig, NoiseSweepConfig, QuadratureConfig,
};
use fastphase::{MultiIndex, Shape};

fn small_sweep(seed: u64) -> NoiseSweepConfig {
    NoiseSweepConfig {
        support: Shape::new([6, 6]).unwrap(),
        brightness: 36.0,
        snr_db: vec![Some(20.0), Some(40.0), None],
        trials: 3,
        ..NoiseSweepConfig::desk_scale(seed)
    }
}

#[test]
fn instance_survives_a_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SchwarzSpec::new(Shape::new([4, 5]).unwrap(), MultiIndex(vec![1, 3]), 3.0, 42).unwrap();
    let inst = Instance::generate(&spec, 2, Some(30.0)).unwrap();
    inst.save(dir.path()).unwrap();
    let back = Instance::load(dir.path()).unwrap();
    assert_eq!(back.y, inst.y);
    assert_eq!(back.truth, inst.truth);
    assert_eq!(back.meta, inst.meta);
}

#[test]
fn mismatched_meta_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SchwarzSpec::new(Shape::new([3, 3]).unwrap(), MultiIndex(vec![0, 0]), 2.0, 1).unwrap();
    Instance::generate(&spec, 2, None).unwrap().save(dir.path()).unwrap();
    let path = dir.path().join("meta.json");
    let text = std::fs::read_to_string(&path).unwrap().replace("\"m\": [\n    6,", "\"m\": [\n    7,");
    std::fs::write(&path, text).unwrap();
    assert!(Instance::load(dir.path()).is_err());
}

#[test]
fn noise_sweep_csv_is_reproducible() {
    let csv = |cfg: &NoiseSweepConfig| {
        let mut buf = Vec::new();
        write_rows_csv(&mut buf, &noise_sweep(cfg, 1).unwrap(), false).unwrap();
        String::from_utf8(buf).unwrap()
    };
    let first = csv(&small_sweep(5));
    assert_eq!(first, csv(&small_sweep(5)));
    assert_ne!(first, csv(&small_sweep(6)));
    assert_eq!(first.lines().count(), 1 + 9);
}

#[test]
fn smallest_squares_are_solved_to_machine_precision() {
    for side in [2, 3] {
        for seed in 0..50 {
            let (x, _) = wf_instance(side, 2.0, seed).unwrap();
            let s = x.shape().clone();
            let y = measure(&x, &s.scaled(2)).unwrap();
            let out = fast_phase_retrieve(&y, &s, &FprConfig::default()).unwrap();
            assert!(out.fit_residual <= 1e-8, "side {side} seed {seed}: {}", out.fit_residual);
            let again = fast_phase_retrieve(&y, &s, &FprConfig::default()).unwrap();
            assert_eq!(out.x, again.x);
        }
    }
}

#[test]
fn rectangular_support_is_recovered() {
    let spec = SchwarzSpec::new(Shape::new([5, 9]).unwrap(), MultiIndex(vec![4, 0]), 2.0, 8).unwrap();
    let inst = Instance::generate(&spec, 2, None).unwrap();
    let out = fast_phase_retrieve(&inst.y, &inst.support, &FprConfig::default()).unwrap();
    assert!(aligned_relative_error(&out.x, inst.truth.as_ref().unwrap()).unwrap() <= 1e-8);
}

#[test]
fn quadrature_error_shrinks_with_the_factor() {
    let cfg = QuadratureConfig {
        support: Shape::new([6, 6]).unwrap(),
        factors: vec![1, 2, 4],
        reference_factor: 16,
        instances: 4,
        rho: 2.0,
        seed: 3,
        w: None,
    };
    let rows = quadrature_study(&cfg, 1).unwrap();
    for inst in 0..cfg.instances {
        let errs: Vec<f64> = rows.iter().filter(|r| r.instance == inst).map(|r| r.reference_error).collect();
        assert!(errs.windows(2).all(|p| p[1] < p[0]), "{errs:?}");
    }
}

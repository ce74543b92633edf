use naeth::ensembles::{build_state, thermal_average_direct, time_average_dephasing};
use naeth::harness::*;
use naeth::model::{build_hamiltonian, build_spin_operators};
use naeth::spin_algebra::{cg_exact, CGKey, HalfInteger};
use naeth::tensor::build_tensor;

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(text).unwrap()
}

fn cg(s: HalfInteger, m: HalfInteger, k: i32, q: i32) -> f64 {
    let key = CGKey::new(
        s,
        m + HalfInteger::from_int(q),
        s,
        m,
        HalfInteger::from_int(k),
        HalfInteger::from_int(q),
    );
    cg_exact(&key).unwrap().to_f64()
}

#[test]
fn identity_never_deviates() {
    let c = config(
        r#"
        sizes = [6, 8]
        [[operators]]
        kind = "identity"
        [targets]
        m_density = 0.125
        "#,
    );
    let r = run_thermalization_sweep(&c).unwrap();
    assert!(r.skipped.is_empty(), "{:?}", r.skipped);
    assert_eq!(r.records.len(), 2);
    for rec in &r.records {
        assert!(rec.deviation.norm() < 1e-12, "{rec:?}");
        assert!((rec.magnetization - 0.125 * rec.n_sites as f64).abs() < 1e-10);
    }
}

#[test]
fn unreachable_energy_skips_sizes() {
    let c = config(
        r#"
        sizes = [6, 8]
        [[operators]]
        kind = "identity"
        [targets]
        m_density = 0.125
        energy_density = -0.4
        "#,
    );
    let r = run_thermalization_sweep(&c).unwrap();
    assert!(r.records.is_empty());
    assert_eq!(
        r.skipped.iter().map(|s| s.0).collect::<Vec<_>>(),
        vec![6, 8]
    );
    assert!(r.skipped[0].1.contains("infeasible"));
    assert!(r.fits.iter().all(|f| f.fit.is_none()));
}

#[test]
fn transverse_dipole_has_no_thermal_part() {
    let c = config(
        r#"
        sizes = [6, 8]
        [[operators]]
        kind = "dipole"
        site = 2
        q = 1
        [[operators]]
        kind = "dipole"
        site = 2
        q = -1
        [targets]
        m_density = 0.2
        "#,
    );
    let r = run_thermalization_sweep(&c).unwrap();
    assert_eq!(r.records.len(), 4);
    assert!(r.records.iter().all(|x| x.thermal_avg == 0.0));
}

#[test]
fn sweep_matches_independent_recomputation() {
    let c = config(
        r#"
        sizes = [6, 8]
        rng_seed = 2
        [[operators]]
        kind = "quadrupole"
        i = 2
        j = 3
        [[operators]]
        kind = "dipole"
        site = 1
        q = 0
        [targets]
        m_density = 0.125
        "#,
    );
    let r = run_thermalization_sweep(&c).unwrap();
    for rec in &r.records {
        let (spec, table) = prepare_size(&c, rec.n_sites).unwrap();
        let h = build_hamiltonian(&spec).unwrap();
        let ops = build_spin_operators(rec.n_sites).unwrap();
        let state = build_state(&c.sweep_state(), &table, Some(&spec)).unwrap();
        let op = c
            .operators
            .iter()
            .find(|o| o.label() == rec.operator)
            .unwrap();
        let comp = build_tensor(&op.tensor, rec.n_sites)
            .unwrap()
            .component(op.q)
            .clone();
        let tol = table.default_degeneracy_tol();
        let time = time_average_dephasing(&comp, &state, &table, tol).unwrap();
        let params = naeth::ensembles::solve_nats(&table, rec.energy, rec.magnetization).unwrap();
        let thermal = thermal_average_direct(&comp, &h, &ops, &params).unwrap();
        assert!((rec.time_avg - time).norm() < 1e-10, "{rec:?}");
        assert!((rec.thermal_avg - thermal.re).abs() < 1e-10, "{rec:?}");
        assert!((rec.deviation - (time - thermal)).norm() < 1e-10);
    }
    assert_eq!(r.fits.len(), 2);
}

#[test]
fn anomalous_a_prefactor_matches_clebsch_gordan() {
    let c = config(
        r#"
        sizes = [8, 10]
        [state]
        kind = "anomalous_a"
        [[operators]]
        kind = "quadrupole"
        i = 3
        j = 4
        "#,
    );
    let r = run_anomaly_experiment(&c).unwrap();
    assert_eq!(r.records.len(), 2);
    for rec in &r.records {
        let a = rec.anomaly.as_ref().unwrap();
        let s = a.spin;
        let expected =
            cg(s, s, 2, 0) / 3.0 + 2.0 * cg(s, HalfInteger::from_twice(-s.twice() / 2), 2, 0) / 3.0;
        assert!((a.cg_prefactor - expected).abs() < 1e-12);
        assert!(a.decomposition_residual < 1e-12);
        assert!(rec.thermal_avg.abs() < 1e-10, "{rec:?}");
        assert!(rec.magnetization.abs() < 1e-14);
    }
}

#[test]
fn anomalous_b_odd_rank_averages_vanish() {
    let c = config(
        r#"
        sizes = [8, 10]
        [state]
        kind = "anomalous_b"
        [[operators]]
        kind = "dipole"
        site = 3
        q = 1
        [[operators]]
        kind = "quadrupole"
        i = 3
        j = 4
        q = 1
        "#,
    );
    let r = run_anomaly_experiment(&c).unwrap();
    for rec in &r.records {
        let a = rec.anomaly.as_ref().unwrap();
        assert_eq!(rec.thermal_avg, 0.0);
        if rec.operator.starts_with("dipole") {
            assert!(rec.time_avg.norm() < 1e-12, "{rec:?}");
            assert!(a.cg_prefactor.abs() < 1e-15);
        } else {
            let mb = a.spin - HalfInteger::from_int(1);
            let expected = 0.5 * cg(a.spin, mb, 2, 1);
            assert!((a.cg_prefactor - expected).abs() < 1e-12);
            assert!(a.decomposition_residual < 1e-12);
        }
    }
}

#[test]
fn anomaly_rejects_product_states() {
    let c = config("sizes = [6]\n[state]\nkind = \"product\"\nm_density = 0.0");
    assert_eq!(run_anomaly_experiment(&c).unwrap_err().exit_code(), 1);
}

#[test]
fn laplace_estimate_of_identity_is_one() {
    let c = config(
        r#"
        sizes = [8, 10]
        [[operators]]
        kind = "identity"
        [[operators]]
        kind = "scalar"
        i = 3
        j = 4
        "#,
    );
    let r = run_suppl7_thermal(&c).unwrap();
    assert_eq!(r.len(), 4);
    for rec in r.iter().filter(|x| x.operator.starts_with("identity")) {
        assert!((rec.exact - 1.0).abs() < 1e-12);
        assert!((rec.estimate - 1.0).abs() < 1e-10);
    }
    for rec in r.iter().filter(|x| x.operator.starts_with("scalar")) {
        assert!(rec.exact.is_finite() && rec.gap.is_finite());
        assert!(rec.mean_spin > 0.0);
    }
}

#[test]
fn laplace_needs_rank_zero() {
    let c = config("sizes = [6]\n[[operators]]\nkind = \"dipole\"\nsite = 0");
    assert!(run_suppl7_thermal(&c).is_err());
    assert!(run_suppl7_thermal(&config("sizes = [6]")).is_err());
}

#[test]
fn csv_output_is_deterministic_and_cache_transparent() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        r#"
        sizes = [6, 8]
        rng_seed = 4
        cache_dir = "{}"
        [[operators]]
        kind = "quadrupole"
        i = 2
        j = 3
        [targets]
        m_density = 0.125
        "#,
        dir.path().join("cache").display()
    );
    let c = config(&text);
    let first = run_thermalization_sweep(&c).unwrap();
    let second = run_thermalization_sweep(&c).unwrap();
    let mut uncached = c.clone();
    uncached.cache_dir = None;
    let third = run_thermalization_sweep(&uncached).unwrap();
    for (a, b) in first.records.iter().zip(&third.records) {
        assert!((a.deviation - b.deviation).norm() < 1e-12);
    }
    let p1 = write_scaling_csv(&dir.path().join("a"), "sweep", &first).unwrap();
    let p2 = write_scaling_csv(&dir.path().join("b"), "sweep", &second).unwrap();
    for (x, y) in p1.iter().zip(&p2) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    let text = std::fs::read_to_string(&p1[0]).unwrap();
    assert!(text.starts_with(&SCALING_HEADER.join(",")));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn eth_stats_cover_every_size() {
    let c = config(
        r#"
        sizes = [6, 8]
        [[operators]]
        kind = "quadrupole"
        i = 2
        j = 3
        [[operators]]
        kind = "quadrupole"
        i = 2
        j = 3
        q = 1
        "#,
    );
    let r = run_eth_stats(&c).unwrap();
    assert_eq!(r.len(), 2);
    assert!(r
        .iter()
        .all(|x| x.max_spread < 1e-8 && x.selection_zero_max < 1e-12));
    let dir = tempfile::tempdir().unwrap();
    let paths = write_eth_csv(dir.path(), &r).unwrap();
    assert_eq!(paths.len(), 5);
}

#[test]
fn singlet_state_uses_scalar_operators() {
    let c = config(
        r#"
        sizes = [8]
        [state]
        kind = "singlet"
        [[operators]]
        kind = "scalar"
        i = 3
        j = 4
        "#,
    );
    let r = run_anomaly_experiment(&c).unwrap();
    let a = r.records[0].anomaly.as_ref().unwrap();
    assert_eq!(a.spin, HalfInteger::ZERO);
    assert_eq!(a.cg_prefactor, 1.0);
    assert!((r.records[0].time_avg.re - a.reduced).abs() < 1e-14);
}

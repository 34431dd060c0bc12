use super::*;

fn tiny_spec(methods: Vec<Method>) -> ExperimentSpec {
    ExperimentSpec {
        trials: 2,
        methods,
        ..ExperimentSpec::desk_scale()
    }
}

fn strip_time(mut records: Vec<ExperimentRecord>) -> Vec<ExperimentRecord> {
    for r in &mut records {
        r.wall_ms = 0.0;
    }
    records
}

fn synthetic(method: &str, value: f64, mse: f64, status: &str) -> ExperimentRecord {
    ExperimentRecord {
        trial: 0,
        sweep_param: "kappa".into(),
        sweep_value: value,
        method: method.into(),
        status: status.into(),
        mse,
        rate: 2.0 * mse,
        outer_iters: 1,
        total_inner_iters: 1,
        final_zeta: 0.0,
        wall_ms: 0.0,
    }
}

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
        let json = toml::Value::try_from(m).unwrap();
        assert_eq!(json.as_str(), Some(m.name()));
    }
    assert!("nope".parse::<Method>().is_err());
}

#[test]
fn sweep_parameters_set_the_right_fields() {
    let base = ExperimentSpec::desk_scale().base;
    let k = SweepParam::Kappa.apply(&base, -20.0).unwrap();
    assert!((k.kappa_s - 1e-2).abs() < 1e-15 && (k.beta_d - 1e-2).abs() < 1e-15);
    let s = SweepParam::SigmaN2.apply(&base, -50.0).unwrap();
    assert!((s.sigma2_nr - 1e-5).abs() < 1e-18 && (s.sigma2_nd - 1e-5).abs() < 1e-18);
    assert_eq!(SweepParam::TrainingLen.apply(&base, 100.0).unwrap().training_len, 100.0);
    let dims = SweepParam::Dims.apply(&base, 3.0).unwrap();
    assert_eq!((dims.n_s, dims.m_d, dims.d), (3, 3, base.d));
    assert!(SweepParam::Dims.apply(&base, 2.5).is_err());
    assert!((SweepParam::RhoRr.apply(&base, -10.0).unwrap().rho_rr - 0.1).abs() < 1e-15);
}

#[test]
fn quantiles_interpolate() {
    let v = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(quantile(&v, 0.5), 2.5);
    assert_eq!(quantile(&v, 0.25), 1.75);
    assert_eq!(quantile(&[7.0], 0.75), 7.0);
    assert!(quantile(&[], 0.5).is_nan());
}

#[test]
fn summaries_skip_failures_and_keep_order() {
    let records = vec![
        synthetic("b", -40.0, 0.3, "ok"),
        synthetic("a", -40.0, 0.1, "ok"),
        synthetic("a", -40.0, 0.2, "ok"),
        synthetic("a", -40.0, f64::NAN, "no_convergence"),
        synthetic("a", -30.0, 0.5, "ok"),
    ];
    let rows = summarize(&records);
    let keys: Vec<(&str, f64)> = rows.iter().map(|r| (r.method.as_str(), r.sweep_value)).collect();
    assert_eq!(keys, vec![("b", -40.0), ("a", -40.0), ("a", -30.0)]);
    let a = &rows[1];
    assert_eq!((a.n_ok, a.n_failed), (2, 1));
    assert!((a.mse_median - 0.15).abs() < 1e-15);
    assert!((a.rate_median - 0.3).abs() < 1e-15);
}

#[test]
fn csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.csv");
    let records = vec![synthetic("a", -40.0, 0.25, "ok"), synthetic("a", -40.0, f64::NAN, "loop_unstable")];
    write_records(&path, &records).unwrap();
    let back = read_records(&path).unwrap();
    assert_eq!(back[0], records[0]);
    assert!(back[1].mse.is_nan() && back[1].status == "loop_unstable");
    let header = std::fs::read_to_string(&path).unwrap();
    assert!(header.starts_with(
        "trial,sweep_param,sweep_value,method,status,mse,rate,outer_iters,total_inner_iters,final_zeta,wall_ms\n"
    ));
}

#[test]
fn sweeps_are_deterministic_and_share_channels() {
    let spec = tiny_spec(vec![Method::Unaware, Method::UnawareRxopt, Method::Aware]);
    let a = strip_time(run_sweep(&spec).unwrap());
    let b = strip_time(run_sweep(&spec).unwrap());
    assert_eq!(a, b);
    assert_eq!(a.len(), 6);
    // Receiver-optimized records reuse the base design of the same draw.
    for trial in a.chunks(3) {
        assert!(trial.iter().all(|r| r.is_ok()));
        assert!(trial[1].mse <= trial[0].mse + 1e-12);
        assert_eq!(trial[1].outer_iters, trial[0].outer_iters);
        assert!(trial[2].final_zeta < spec.pdd.zeta_th);
    }
    // Running a method alone gives the record it had in company.
    let alone = strip_time(run_sweep(&tiny_spec(vec![Method::Aware])).unwrap());
    assert_eq!(alone[1], a[5]);
}

#[test]
fn failures_are_recorded_without_aborting() {
    let mut spec = tiny_spec(vec![Method::Aware]);
    spec.pdd.max_outer = 1;
    spec.pdd.rho0 = 1.0;
    let records = run_sweep(&spec).unwrap();
    assert_eq!(records.len(), 2);
    for r in &records {
        assert_eq!(r.status, "no_convergence");
        assert!(r.mse.is_nan() && r.outer_iters == 1 && r.final_zeta >= spec.pdd.zeta_th);
    }
}

#[test]
fn sweep_points_follow_the_values() {
    let spec = ExperimentSpec {
        sweep: Some(Sweep {
            param: SweepParam::TrainingLen,
            values: vec![1.0, 10.0],
        }),
        ..tiny_spec(vec![Method::Aware])
    };
    let dir = tempfile::tempdir().unwrap();
    let records = run_and_write(&spec, dir.path()).unwrap();
    let order: Vec<(f64, usize)> = records.iter().map(|r| (r.sweep_value, r.trial)).collect();
    assert_eq!(order, vec![(1.0, 0), (1.0, 1), (10.0, 0), (10.0, 1)]);
    let summary = read_summary(&dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.len(), 2);
    assert!(summary.iter().all(|r| r.sweep_param == "T" && r.n_ok == 2));
}

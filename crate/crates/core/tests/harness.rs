use cfmoe::fbl::achievable_rate;
use cfmoe::harness::{
    audit, evaluate, read_csv, read_trace, run_pipeline, run_sweep, stage_train_mlp,
    stage_train_moe, AllocatorKind, CsiSource, Dataset, Models, RunConfig, SweepAxis,
};
use cfmoe::Error;

fn small() -> RunConfig {
    let mut c = RunConfig::default();
    c.scenario.m_g = 3;
    c.scenario.m_a = 1;
    c.scenario.k_g = 2;
    c.scenario.k_a = 1;
    c.dataset.samples = 40;
    c.dataset.train_fraction = 0.75;
    c.predictor.epochs = 2;
    c.predictor.max_links = Some(120);
    c.allocator.epochs = 2;
    c.allocator.starts = 2;
    c.allocator.max_iters = 10;
    c.sweep.trials = 4;
    c
}

fn fast(mut c: RunConfig) -> RunConfig {
    c.eval.csi = CsiSource::Estimated;
    c.eval.allocators = vec![AllocatorKind::Uniform, AllocatorKind::Iterative];
    c
}

#[test]
fn full_pipeline_writes_consistent_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let out = run_pipeline(&cfg, dir.path()).unwrap();
    for f in &out.files {
        assert!(f.exists(), "{}", f.display());
    }
    let r = &out.report;
    let test = out.dataset.test_range().len();
    assert_eq!(r.rows.len(), test * cfg.eval.allocators.len() * 4);
    for row in &r.rows {
        assert!((0.0..=1.0).contains(&row.usp), "{row:?}");
        assert!((0.0..=1.0).contains(&row.usp_bottom10));
        assert!(row.se_mean >= 0.0 && row.ee_mean >= 0.0);
        assert!(row.nmse_ata_db.is_some() && row.nmse_ag_db.is_some() && row.nmse_gtg_db.is_some());
        assert_eq!(row.wall_ms, 0.0);
    }
    let rows = read_csv(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(rows, r.rows);
    let trace = read_trace(&dir.path().join("trace.json")).unwrap();
    let a = audit(&trace, &rows, 1e-9).unwrap();
    assert_eq!(a.rows, rows.len());
    assert!(out.logs.moe.is_some() && out.logs.mlp.is_some() && out.logs.cp.len() == 3);
}

#[test]
fn tampered_rows_fail_the_audit() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_pipeline(&fast(small()), dir.path()).unwrap();
    let mut rows = out.report.rows.clone();
    audit(&out.report.trace, &rows, 1e-9).unwrap();
    rows[3].delta += 1e-6;
    assert!(audit(&out.report.trace, &rows, 1e-9).is_err());
    rows[3].delta -= 1e-6;
    rows.pop();
    let mut extra = rows[0].clone();
    extra.trial = 9999;
    rows.push(extra);
    assert!(audit(&out.report.trace, &rows, 1e-9).is_err());
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = fast(small());
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let oa = run_pipeline(&cfg, a.path()).unwrap();
    run_pipeline(&cfg, b.path()).unwrap();
    for f in &oa.files {
        let name = f.file_name().unwrap();
        let x = std::fs::read(f).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{} differs", name.to_string_lossy());
    }
}

#[test]
fn single_user_perfect_csi_scores_the_fbl_rate() {
    let mut cfg = small();
    cfg.scenario.k_g = 1;
    cfg.scenario.k_a = 0;
    cfg.eval.csi = CsiSource::Perfect;
    cfg.eval.allocators = vec![AllocatorKind::Uniform];
    let ds = Dataset::generate(&cfg).unwrap();
    let r = evaluate(&ds, &Models::default()).unwrap();
    let tau_s = cfg.frame.tau_s() as f64;
    for rec in &r.trace.records {
        assert_eq!(rec.powers, vec![cfg.urllc.p_max]);
        let gamma = rec.coeffs.gain[0] * cfg.urllc.p_max / rec.coeffs.noise[0];
        let se = achievable_rate(gamma, tau_s, cfg.urllc.eps_b).unwrap();
        for row in r
            .rows
            .iter()
            .filter(|x| x.trial == rec.trial && (x.group == "all" || x.group == "se"))
        {
            assert!((row.se_mean - se).abs() < 1e-12, "{} vs {se}", row.se_mean);
        }
    }
    assert!(r.rows.iter().all(|x| x.group == "all" || x.group == "se"));
}

#[test]
fn allocator_training_refuses_missing_predictors() {
    let cfg = small();
    let ds = Dataset::generate(&cfg).unwrap();
    let none = Models::default();
    assert!(matches!(
        stage_train_moe(&ds, &none, CsiSource::Cpnet),
        Err(Error::StageOrder(_))
    ));
    assert!(matches!(
        stage_train_mlp(&ds, &none, CsiSource::Cpnet),
        Err(Error::StageOrder(_))
    ));
    stage_train_moe(&ds, &none, CsiSource::Estimated).unwrap();
}

#[test]
fn sweep_with_no_trials_is_empty() {
    let mut cfg = fast(small());
    cfg.sweep.axis = Some(SweepAxis::K);
    cfg.sweep.values = vec![2.0, 3.0];
    cfg.sweep.trials = 0;
    let r = run_sweep(&cfg, &Models::default(), None).unwrap();
    assert!(r.rows.is_empty() && r.trace.records.is_empty() && r.summary.points.is_empty());
}

#[test]
fn sweep_records_bad_points_and_continues() {
    let mut cfg = fast(small());
    cfg.sweep.axis = Some(SweepAxis::TauP);
    cfg.sweep.values = vec![1.0, 3.0, 4.0];
    let r = run_sweep(&cfg, &Models::default(), None).unwrap();
    assert_eq!(r.summary.failures.len(), 1);
    assert_eq!(r.summary.failures[0].axis_value, 1.0);
    assert_eq!(r.rows.len(), 2 * 4 * 2 * 4);
    audit(&r.trace, &r.rows, 1e-9).unwrap();
}

#[test]
fn persistence_error_grows_with_aging_interval() {
    let mut cfg = fast(small());
    cfg.eval.allocators = vec![AllocatorKind::Uniform];
    cfg.sweep.axis = Some(SweepAxis::TA);
    cfg.sweep.values = vec![2.0, 6.0, 12.0];
    cfg.sweep.trials = 20;
    let r = run_sweep(&cfg, &Models::default(), None).unwrap();
    let ag: Vec<f64> = r
        .summary
        .nmse
        .iter()
        .map(|p| p.ag.unwrap().truth.all_db)
        .collect();
    assert!(ag.windows(2).all(|w| w[0] < w[1]), "{ag:?}");
}

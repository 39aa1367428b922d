use cfmoe::channel::{
    age_channel, link_params, synth_channel, temporal_corr, LinkKind, ScenarioConfig,
};
use cfmoe::harness::{Dataset, RunConfig};
use cfmoe::nn::ModelParams;
use cfmoe::numerics::gradcheck::grad_check_coords;
use cfmoe::numerics::RngStream;
use cfmoe::predictor::{
    cp_batch_loss, cp_init, cp_predict, cq_loss, kalman_set, nmse_db, op, persistence, train_cp,
    CpDims, LinkSet, PredictorConfig,
};

fn desk_set(kind: LinkKind) -> LinkSet {
    let mut cfg = RunConfig::default();
    cfg.dataset.samples = 200;
    let ds = Dataset::generate(&cfg).unwrap();
    ds.link_set(kind, ds.train_range()).unwrap().0
}

#[test]
fn persistence_on_clean_channels_follows_correlation() {
    let cfg = ScenarioConfig::default();
    let lp = link_params(LinkKind::Gtg, &cfg);
    let rho = temporal_corr(20.0, 1.9e9, 1e-4, 8.0).unwrap();
    let mut s = RngStream::new(3).sampler();
    let mut set = LinkSet::new(LinkKind::Gtg, 1, 2);
    for _ in 0..10_000 {
        let d = s.uniform_in(20.0, 250.0);
        let angle = s.uniform_in(0.0, std::f64::consts::PI);
        let h0 = synth_channel(&lp, d, angle, 2, &mut s).unwrap();
        let h = age_channel(&h0, rho, &lp, d, angle, &mut s).unwrap();
        set.push(&op(&h0), &op(&h), &op(&h), 1.0, 0.0, rho, rho)
            .unwrap();
    }
    let got = nmse_db(&persistence(&set), &set.truth).unwrap();
    let want = 10.0 * (2.0 * (1.0 - rho)).log10();
    assert!((got - want).abs() < 0.3, "{got} vs {want}");
}

#[test]
fn zero_prediction_scores_zero_db() {
    let set = desk_set(LinkKind::Ag);
    let zeros = vec![0.0; set.truth.len()];
    assert!(nmse_db(&zeros, &set.truth).unwrap().abs() < 1e-12);
}

#[test]
fn kalman_improves_on_persistence_for_noisy_histories() {
    for kind in LinkKind::ALL {
        let set = desk_set(kind);
        let p = nmse_db(&persistence(&set), &set.truth).unwrap();
        let k = nmse_db(&kalman_set(&set).unwrap(), &set.truth).unwrap();
        assert!(k < p, "{}: kalman {k} vs persistence {p}", kind.name());
    }
}

#[test]
fn batch_loss_matches_plain_quality_weighted_loss() {
    let set = desk_set(LinkKind::Ata);
    let cfg = PredictorConfig::default();
    let params = cp_init(
        set.kind,
        &cfg,
        set.antennas,
        &mut RngStream::new(5).sampler(),
    )
    .unwrap();
    let dims = CpDims::of(&params).unwrap();
    let idx: Vec<usize> = (0..set.len().min(50)).collect();
    let sub = set.subset(&idx);
    let pred = cp_predict(&params, &sub).unwrap();
    for cq in [true, false] {
        let mut tape = cfmoe::numerics::Tape::new();
        let b = params.bind_named(&mut tape);
        let l = cp_batch_loss(&mut tape, &b, dims, &sub, &idx, cfg.eps_hat, cq).unwrap();
        let got = tape.value(l).item();
        let want = cq_loss(&pred, &sub.labels, &sub.theta, sub.width(), cfg.eps_hat, cq).unwrap();
        assert!((got - want).abs() <= 1e-9 * want.abs(), "{got} vs {want}");
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let set = desk_set(LinkKind::Ag);
    let cfg = PredictorConfig::default();
    for point in 0..4u64 {
        let params = cp_init(
            set.kind,
            &cfg,
            set.antennas,
            &mut RngStream::new(point).sampler(),
        )
        .unwrap();
        let dims = CpDims::of(&params).unwrap();
        let idx: Vec<usize> = (0..6)
            .map(|i| (i * 37 + point as usize * 11) % set.len())
            .collect();
        for cq in [true, false] {
            let build = |tape: &mut cfmoe::numerics::Tape, vars: &[cfmoe::numerics::Var]| {
                let b = params.bound_from(vars)?;
                cp_batch_loss(tape, &b, dims, &set, &idx, cfg.eps_hat, cq)
            };
            let r = grad_check_coords(build, params.tensors(), 1e-4, Some(6)).unwrap();
            assert!(r.passed(), "point {point}: {:?}", r.worst);
        }
    }
}

fn quick_cfg(epochs: usize) -> PredictorConfig {
    PredictorConfig {
        epochs,
        batch_size: 8,
        max_links: Some(16),
        ..PredictorConfig::default()
    }
}

#[test]
fn small_set_is_overfit() {
    let set = desk_set(LinkKind::Gtg);
    let (_, log) = train_cp(&set, &quick_cfg(150), &RngStream::new(9)).unwrap();
    let (first, last) = (log.epoch_loss[0], *log.epoch_loss.last().unwrap());
    assert!(last < 0.1 * first, "{first} -> {last}");
}

#[test]
fn training_is_deterministic_per_stream() {
    let set = desk_set(LinkKind::Ata);
    let bytes = |seed| -> Vec<u8> {
        let (p, _): (ModelParams, _) =
            train_cp(&set, &quick_cfg(3), &RngStream::new(seed)).unwrap();
        p.to_bytes().unwrap()
    };
    assert_eq!(bytes(4), bytes(4));
    assert_ne!(bytes(4), bytes(5));
}

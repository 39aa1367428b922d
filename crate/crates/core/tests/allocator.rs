use cfmoe::allocator::{
    evaluate_powers, fixed_power, grid_oracle, iterative_allocate, moe_allocate, moe_init,
    moe_loss_graph, AllocInstance, AllocatorConfig, IterativeOptions, SinrCoeffs, UtilityContext,
};
use cfmoe::harness::{instances, utility_context, CsiSource, Dataset, Models, RunConfig};
use cfmoe::numerics::gradcheck::grad_check_coords;
use cfmoe::numerics::RngStream;
use cfmoe::uplink::{sinr_predicted, SinrMoments};
use proptest::prelude::*;

fn desk(k_a: usize, k_g: usize, samples: usize) -> (RunConfig, Dataset) {
    let mut cfg = RunConfig::default();
    cfg.scenario.k_a = k_a;
    cfg.scenario.k_g = k_g;
    cfg.dataset.samples = samples;
    let ds = Dataset::generate(&cfg).unwrap();
    (cfg, ds)
}

fn desk_instances(
    k_a: usize,
    k_g: usize,
    n: usize,
) -> (RunConfig, UtilityContext, Vec<AllocInstance>) {
    let (cfg, ds) = desk(k_a, k_g, 2 * n);
    let ctx = utility_context(&cfg, ds.header.normalizers).unwrap();
    let insts = instances(&ds, 0..n, CsiSource::Estimated, &Models::default()).unwrap();
    (cfg, ctx, insts)
}

#[test]
fn moe_total_loss_gradients_match_finite_differences() {
    let (cfg, ctx, insts) = desk_instances(2, 4, 8);
    for point in 0..3u64 {
        let params = moe_init(
            8,
            2,
            cfg.urllc.p_max,
            30.0,
            &cfg.allocator,
            &mut RngStream::new(point).sampler(),
        )
        .unwrap();
        let batch = &insts[point as usize * 2..point as usize * 2 + 3];
        let build = moe_loss_graph(&params, &ctx, batch).unwrap();
        let r = grad_check_coords(build, params.tensors(), 1e-4, Some(4)).unwrap();
        assert!(r.passed(), "point {point}: {:?}", r.worst);
        assert!(r.checked > 0);
    }
}

#[test]
fn iterative_is_close_to_the_grid_oracle_for_two_users() {
    let (cfg, ctx, insts) = desk_instances(1, 1, 6);
    let opts = IterativeOptions {
        starts: cfg.allocator.starts,
        ..IterativeOptions::default()
    };
    for (i, inst) in insts.iter().enumerate() {
        let g = grid_oracle(&ctx, &inst.coeffs, 64).unwrap();
        let it = iterative_allocate(&ctx, &inst.coeffs, &opts, &RngStream::new(i as u64)).unwrap();
        assert!(
            it.delta >= 0.95 * g.delta,
            "instance {i}: {} vs {}",
            it.delta,
            g.delta
        );
    }
}

#[test]
fn lone_spectral_user_transmits_at_full_power() {
    let (cfg, ctx, insts) = desk_instances(0, 1, 3);
    assert_eq!(ctx.groups.assign.len(), 1);
    for inst in &insts {
        let it = iterative_allocate(
            &ctx,
            &inst.coeffs,
            &IterativeOptions::default(),
            &RngStream::new(1),
        )
        .unwrap();
        assert_eq!(it.powers, vec![cfg.urllc.p_max]);
        let g = grid_oracle(&ctx, &inst.coeffs, 64).unwrap();
        assert_eq!(g.powers, vec![cfg.urllc.p_max]);
    }
}

#[test]
fn allocations_stay_within_the_power_range() {
    let (cfg, ctx, insts) = desk_instances(2, 4, 5);
    let moe = moe_init(
        8,
        2,
        cfg.urllc.p_max,
        30.0,
        &AllocatorConfig::default(),
        &mut RngStream::new(2).sampler(),
    )
    .unwrap();
    for inst in &insts {
        let results = [
            moe_allocate(&moe, &ctx, inst).unwrap(),
            iterative_allocate(
                &ctx,
                &inst.coeffs,
                &IterativeOptions::default(),
                &RngStream::new(3),
            )
            .unwrap(),
            fixed_power(&ctx, &inst.coeffs, cfg.urllc.p_max, "uniform").unwrap(),
        ];
        for r in &results {
            assert!(
                r.powers
                    .iter()
                    .all(|&p| p >= ctx.p_min() && p <= cfg.urllc.p_max),
                "{:?}",
                r.powers
            );
            let ev = evaluate_powers(&ctx, &inst.coeffs, &r.powers).unwrap();
            assert_eq!(ev.feasible, r.feasible);
            assert!((ev.delta - r.delta).abs() < 1e-12);
        }
    }
}

fn moments() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..4, 1usize..4).prop_flat_map(|(k, m)| {
        (
            Just(k),
            Just(m),
            prop::collection::vec(0.1f64..10.0, k * m),
            prop::collection::vec(0.0f64..5.0, k * k * m),
            prop::collection::vec(0.0f64..5.0, k * k * m),
            prop::collection::vec(1e-3f64..0.1, k),
        )
    })
}

proptest! {
    // Θ → cΘ with Φ, μ → c²Φ, c²μ and p → p/c leaves the SINR unchanged.
    #[test]
    fn sinr_invariant_under_joint_rescaling((k, m, th, ph, mu, p) in moments(), c in 0.01f64..100.0, tau in 1usize..20) {
        let a = SinrMoments::new(k, m, th.clone(), ph.clone(), mu.clone()).unwrap();
        let b = SinrMoments::new(
            k,
            m,
            th.iter().map(|v| c * v).collect(),
            ph.iter().map(|v| c * c * v).collect(),
            mu.iter().map(|v| c * c * v).collect(),
        )
        .unwrap();
        let q: Vec<f64> = p.iter().map(|v| v / c).collect();
        let sa = sinr_predicted(&a, &p, tau).unwrap();
        let sb = sinr_predicted(&b, &q, tau).unwrap();
        for (x, y) in sa.iter().zip(&sb) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-300), "{} vs {}", x, y);
        }
    }

    #[test]
    fn coefficients_reproduce_the_moment_sinr((k, m, th, ph, mu, p) in moments(), tau in 1usize..20) {
        let mo = SinrMoments::new(k, m, th, ph, mu).unwrap();
        let co = SinrCoeffs::from_moments(&mo, tau).unwrap();
        let a = sinr_predicted(&mo, &p, tau).unwrap();
        let b = co.sinr(&p).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs(), "{} vs {}", x, y);
        }
    }
}

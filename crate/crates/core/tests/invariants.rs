use mfoffload::finite::estimate_exploitability_n;
use mfoffload::mfc::{assemble_qp, grid_search, refine_local, solve_mfc, Gradient, MfcOptions};
use mfoffload::mfg::{best_response, exploitability, fictitious_play, FictitiousPlayOptions};
use mfoffload::model::{offload_mass, presets, CostModel, TypeCosts};
use mfoffload::{Configuration, OneShotScenario, Policy, Scenario, StationaryScenario, SupportDistribution};
use proptest::prelude::*;

fn config() -> impl Strategy<Value = Configuration> {
    (0.1f64..10.0, 0.1f64..10.0, 0.1f64..10.0, 0.5f64..50.0)
        .prop_map(|(w, l, f, r)| Configuration::new(w, l, f, r).unwrap())
}

/// Probabilities that sum to one within the model tolerance: the last weight
/// absorbs the rounding.
fn distribution(max_k: usize) -> impl Strategy<Value = SupportDistribution> {
    prop::collection::vec((0.05f64..1.0, config()), 1..=max_k).prop_map(|raw| {
        let total: f64 = raw.iter().map(|(w, _)| w).sum();
        let mut points: Vec<(f64, Configuration)> = raw.iter().map(|&(w, c)| (w / total, c)).collect();
        let head: f64 = points[..points.len() - 1].iter().map(|(p, _)| p).sum();
        let last = points.len() - 1;
        points[last].0 = 1.0 - head;
        SupportDistribution::new(points).unwrap()
    })
}

fn oneshot(max_k: usize) -> impl Strategy<Value = OneShotScenario> {
    (distribution(max_k), 0.1f64..10.0).prop_map(|(d, f_per)| OneShotScenario::new(d, f_per).unwrap())
}

fn policy(k: usize) -> impl Strategy<Value = Policy> {
    prop::collection::vec(0.0f64..=1.0, k).prop_map(|v| Policy::new(v).unwrap())
}

fn with_policy(max_k: usize) -> impl Strategy<Value = (OneShotScenario, Policy)> {
    oneshot(max_k).prop_flat_map(|s| {
        let k = s.distribution().len();
        (Just(s), policy(k))
    })
}

/// Stationary scenario plus a policy, with `lambda` chosen so that the
/// policy leaves a strictly positive fraction of the pool free.
fn feasible_stationary(max_k: usize) -> impl Strategy<Value = (StationaryScenario, Policy)> {
    (oneshot(max_k), 0.05f64..0.95)
        .prop_flat_map(|(s, load)| {
            let k = s.distribution().len();
            (Just(s), Just(load), policy(k))
        })
        .prop_filter_map("policy offloads nothing", |(s, load, pi)| {
            let b: f64 = s.distribution().points().iter().zip(pi.iter()).map(|(pt, x)| pt.prob * x * pt.config.l).sum();
            if b < 1e-6 {
                return None;
            }
            let lambda = load * s.f_per() / b;
            let st = StationaryScenario::new(s.distribution().clone(), s.f_per(), lambda).ok()?;
            Some((st, pi))
        })
}

/// One-shot objective written out directly from the per-type costs.
fn direct_objective(s: &OneShotScenario, pi: &Policy) -> f64 {
    let m: f64 = s.distribution().probs().zip(pi.iter()).map(|(p, x)| p * x).sum();
    s.distribution()
        .points()
        .iter()
        .zip(pi.iter())
        .map(|(pt, x)| {
            let c = &pt.config;
            pt.prob * (x * (c.w / c.r + c.l * m / s.f_per()) + (1.0 - x) * c.l / c.f)
        })
        .sum()
}

fn all_pure(k: usize) -> impl Iterator<Item = Policy> {
    (0u32..1 << k).map(move |mask| Policy::pure((0..k).map(|j| mask >> j & 1 == 1)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn qp_matches_objective((s, pi) in with_policy(6)) {
        let qp = assemble_qp(&s);
        let via_qp = qp.objective(&pi).unwrap();
        let via_model = s.objective(&pi).unwrap();
        let direct = direct_objective(&s, &pi);
        prop_assert!((via_qp - via_model).abs() <= 1e-12 * (1.0 + via_model.abs()));
        prop_assert!((direct - via_model).abs() <= 1e-12 * (1.0 + via_model.abs()));
    }

    #[test]
    fn qp_gradient_matches_differences((s, pi) in with_policy(6)) {
        let qp = assemble_qp(&s);
        let g = qp.gradient(&pi).unwrap();
        let h = 1e-6;
        for j in 0..pi.len() {
            let mut up = pi.as_slice().to_vec();
            let mut dn = pi.as_slice().to_vec();
            up[j] += h;
            dn[j] -= h;
            // the quadratic extends past the box, so central differences are exact up to rounding
            let fd = (qp.eval(&up) - qp.eval(&dn)) / (2.0 * h);
            prop_assert!((fd - g[j]).abs() <= 1e-6 * g[j].abs().max(1.0), "{} vs {}", fd, g[j]);
        }
    }

    #[test]
    fn offload_mass_is_lipschitz((s, a) in with_policy(6), seed in any::<u64>()) {
        let k = a.len();
        let b = Policy::new((0..k).map(|j| ((seed >> (j * 8)) & 0xff) as f64 / 255.0).collect()).unwrap();
        let ma = offload_mass(s.distribution(), &a).unwrap();
        let mb = offload_mass(s.distribution(), &b).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ma));
        prop_assert!((ma - mb).abs() <= a.max_abs_diff(&b) + 1e-12);
    }

    #[test]
    fn f_alloc_solves_fixed_point((s, pi) in feasible_stationary(5)) {
        let fa = s.f_alloc(&pi).unwrap();
        let m = s.moments(&pi).unwrap();
        let lam = s.lambda();
        let residual = fa - s.f_per() / (lam * m.tx + lam * m.work / fa);
        prop_assert!(fa > 0.0);
        prop_assert!(residual.abs() <= 1e-9 * fa.max(1.0), "residual {}", residual);
    }

    #[test]
    fn deviator_cost_minimized_at_vertex((s, pi) in with_policy(4), dev_bits in prop::collection::vec(0.0f64..=1.0, 4)) {
        let k = pi.len();
        let vertex_min = all_pure(k)
            .map(|d| s.deviator_cost(&d, &pi).unwrap())
            .fold(f64::INFINITY, f64::min);
        let br = best_response(&s, &pi).unwrap();
        let br_cost = s.deviator_cost(&br, &pi).unwrap();
        prop_assert!((br_cost - vertex_min).abs() <= 1e-12 * (1.0 + vertex_min.abs()));
        let mixed = Policy::new(dev_bits[..k].to_vec()).unwrap();
        prop_assert!(s.deviator_cost(&mixed, &pi).unwrap() >= vertex_min - 1e-12);
    }

    #[test]
    fn exploitability_nonnegative_and_matches_definition((s, pi) in with_policy(6)) {
        let e = exploitability(&s, &pi).unwrap();
        prop_assert!(e >= 0.0);
        let br = best_response(&s, &pi).unwrap();
        let direct = s.objective(&pi).unwrap() - s.deviator_cost(&br, &pi).unwrap();
        prop_assert!((e - direct).abs() <= 1e-10 * (1.0 + direct.abs()));
    }

    #[test]
    fn stationary_exploitability_nonnegative((s, pi) in feasible_stationary(5)) {
        prop_assert!(exploitability(&s, &pi).unwrap() >= 0.0);
    }

    #[test]
    fn best_response_pure_and_deterministic((s, pi) in with_policy(6)) {
        let a = best_response(&s, &pi).unwrap();
        let b = best_response(&s, &pi).unwrap();
        prop_assert!(a.is_pure());
        prop_assert_eq!(a, b);
    }

    /// At an exact equilibrium every type with interior weight is
    /// indifferent and pure types play their strict best response.
    #[test]
    fn fictitious_play_limit_is_complementary(s in oneshot(3)) {
        let report = fictitious_play(&s, FictitiousPlayOptions { max_iters: 3000, tol: 1e-9 }).unwrap();
        let pi = &report.final_policy;
        let costs: Vec<TypeCosts> = s.type_costs(pi).unwrap();
        let gap = report.final_exploitability().unwrap();
        for ((p, x), c) in s.distribution().probs().zip(pi.iter()).zip(&costs) {
            // each type's share of the gap bounds how far it is from its best reply
            let excess = x * (c.offload - c.offload.min(c.local)) + (1.0 - x) * (c.local - c.offload.min(c.local));
            prop_assert!(p * excess <= gap + 1e-12);
        }
        // fictitious play in this monotone game drives the gap down like 1/n
        prop_assert!(gap <= 10.0 * s.distribution().mean_local_time() / report.iterations_run as f64 + 1e-9);
    }

    #[test]
    fn refinement_never_worsens_grid(s in oneshot(3)) {
        let qp = assemble_qp(&s);
        let k = s.distribution().len();
        let coarse = grid_search(|x| qp.eval(x), k, 0.05, 1e8).unwrap();
        let grad = |x: &[f64], out: &mut [f64]| qp.grad_into(x, out);
        let fine = refine_local(|x| qp.eval(x), Gradient::Exact(&grad), &coarse.argmin, 1e-10).unwrap();
        prop_assert!(fine.value <= coarse.value + 1e-12);
        // the lattice is within r/2 of any point in every coordinate, so the
        // true minimum is at most Lipschitz * r/2 * K below the grid value
        let lip: f64 = (0..k).map(|j| {
            let row: f64 = (0..k).map(|i| (qp.q(j, i) + qp.q(i, j)).abs()).sum();
            row + qp.linear()[j].abs()
        }).fold(0.0, f64::max);
        let vertex_min = all_pure(k).map(|d| qp.objective(&d).unwrap()).fold(f64::INFINITY, f64::min);
        prop_assert!(coarse.value <= vertex_min + 1e-12);
        prop_assert!(fine.value >= coarse.value - lip * 0.025 * k as f64 - 1e-12);
    }

    #[test]
    fn stationary_optimum_is_feasible((s, _pi) in feasible_stationary(3)) {
        let scenario = Scenario::Stationary(s.clone());
        let opts = MfcOptions { resolution: Some(0.05), ..MfcOptions::default() };
        let res = solve_mfc(&scenario, opts).unwrap();
        prop_assert!(s.slack(&res.argmin).unwrap() > 0.0);
        prop_assert!(res.value.is_finite());
        prop_assert!(res.value <= s.distribution().mean_local_time() + 1e-12);
    }
}

#[test]
fn finite_gap_shrinks_with_population() {
    let s = presets::competitive();
    let pi = fictitious_play(&s, FictitiousPlayOptions::default()).unwrap().final_policy;
    for seed in 0..5 {
        let small = estimate_exploitability_n(&s, &pi, 5, 4000, seed).unwrap();
        let large = estimate_exploitability_n(&s, &pi, 100, 4000, seed).unwrap();
        assert!(large.estimate < small.estimate, "seed {seed}: {} vs {}", large.estimate, small.estimate);
    }
}

#[test]
fn fictitious_play_history_shape() {
    let s = presets::competitive();
    let report = fictitious_play(&s, FictitiousPlayOptions::default()).unwrap();
    assert_eq!(report.history.len(), report.iterations_run);
    for (i, rec) in report.history.iter().enumerate() {
        assert_eq!(rec.iteration, i + 1);
        assert!(rec.exploitability >= 0.0);
    }
    let elapsed: Vec<f64> = report.history.iter().map(|r| r.elapsed_secs).collect();
    assert!(elapsed.windows(2).all(|w| w[0] <= w[1]));
    let first = report.history[0].exploitability;
    let last = report.final_exploitability().unwrap();
    assert!(last < first);
}

/// Averaging makes the gap decay like `1/n` with a sawtooth ripple: means
/// over consecutive 50-iteration blocks never increase, and a sliding
/// 50-iteration mean rises by well under one percent at a ripple.
#[test]
fn smoothed_history_nonincreasing() {
    let scenarios: Vec<Scenario> = vec![
        presets::competitive().into(),
        presets::competitive_stationary().into(),
        presets::cooperative().into(),
        presets::cooperative_stationary().into(),
    ];
    for (i, s) in scenarios.iter().enumerate() {
        let report = fictitious_play(s, FictitiousPlayOptions::default()).unwrap();
        let gaps: Vec<f64> = report.history.iter().map(|r| r.exploitability).collect();
        let mean = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
        let blocks: Vec<f64> = gaps.chunks_exact(50).map(mean).collect();
        for (t, w) in blocks.windows(2).enumerate() {
            assert!(w[1] <= w[0], "scenario {i}, block {t}: {} -> {}", w[0], w[1]);
        }
        let sliding: Vec<f64> = gaps.windows(50).map(mean).collect();
        for (t, w) in sliding.windows(2).enumerate() {
            assert!(w[1] <= w[0] * 1.01, "scenario {i}, window {t}: {} -> {}", w[0], w[1]);
        }
    }
}

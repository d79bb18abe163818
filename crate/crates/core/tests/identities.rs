//! Cross-module identities, each checked against an independent
//! construction of the same quantity.

use favsite_core::env::{estimate_m, sample_additive_martingale, EnvironmentLaw, ExploreOpts, MarkedTree, ROOT};
use favsite_core::oracle::{local_time_at_tn_sampler, sum_iid_tail_bound};
use favsite_core::rng::stream;
use favsite_core::spine::{invariant_pi, simulate_y_kernel, y_path_kernel, KernelOpts, PiOpts, YKernel};
use favsite_core::stats::{ks_two_sample_counts, z_l_lln};
use favsite_core::walk::{simulate_returns, Engine, WalkTrace};
use rand::Rng;

fn law(kappa: f64) -> EnvironmentLaw {
    EnvironmentLaw::log_normal_binary(kappa).unwrap()
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn walk_and_branching_engines_agree_in_law() {
    let law = law(3.0);
    let n = 4000;
    let sample = |engine: Engine, seed: u64| -> Vec<(u64, u64)> {
        (0..n)
            .map(|i| {
                let r = simulate_returns(&law, 1, engine, &mut stream(seed, i)).unwrap();
                (r.max_edge_lt, r.z1_size)
            })
            .collect()
    };
    let w = sample(Engine::Walk { step_budget: 1 << 40 }, 1);
    let b = sample(Engine::Branching { vertex_budget: 1 << 40 }, 2);
    let col = |xs: &[(u64, u64)], f: fn(&(u64, u64)) -> u64| xs.iter().map(f).collect::<Vec<_>>();
    let p_max = ks_two_sample_counts(&col(&w, |x| x.0), &col(&b, |x| x.0), 1000, 3).p_value;
    let p_z = ks_two_sample_counts(&col(&w, |x| x.1), &col(&b, |x| x.1), 1000, 4).p_value;
    assert!(p_max > 0.001, "max edge local time: p = {p_max}");
    assert!(p_z > 0.001, "optional line size: p = {p_z}");
}

#[test]
fn quenched_site_local_time_per_return_is_exp_minus_u() {
    let law = law(3.0);
    let mut rng = stream(11, 0);
    let mut walk = WalkTrace::new(MarkedTree::new(&law, rng.random()));
    let (batches, per) = (40u64, 500u64);
    walk.run_until_return(1, u64::MAX, &mut rng).unwrap();
    // the first excursion materializes the children of the root
    let mut watch: Vec<_> = walk.tree().children(ROOT).collect();
    walk.run_until_return(per + 1, u64::MAX, &mut rng).unwrap();
    for c in watch.clone() {
        if walk.tree().is_materialized(c) {
            watch.extend(walk.tree().children(c));
        }
    }
    let mut last: Vec<u32> = watch.iter().map(|&x| walk.site_lt(x)).collect();
    let mut incs = vec![Vec::new(); watch.len()];
    for b in 0..batches {
        walk.run_until_return(per * (b + 2) + 1, u64::MAX, &mut rng).unwrap();
        for (j, &x) in watch.iter().enumerate() {
            let now = walk.site_lt(x);
            incs[j].push((now - last[j]) as f64 / per as f64);
            last[j] = now;
        }
    }
    for (j, &x) in watch.iter().enumerate() {
        assert!(walk.tree().is_materialized(x));
        let (m, se) = mean_se(&incs[j]);
        let target = (-walk.tree().u(x)).exp();
        assert!((m - target).abs() <= 4.0 * se + 1e-12, "vertex {x}: {m} +- {se} vs {target}");
    }
}

#[test]
fn minimum_set_is_stable_under_more_patience() {
    let law = law(3.0);
    for s in 0..20 {
        let mut a = MarkedTree::new(&law, s);
        let mut b = MarkedTree::new(&law, s);
        let short = estimate_m(&mut a, 1.0, ExploreOpts::default()).unwrap();
        let long = estimate_m(&mut b, 1.0, ExploreOpts { patience: 16, ..Default::default() }).unwrap();
        assert_eq!(short.nodes, long.nodes, "tree {s}");
        assert_eq!(short.min_u, long.min_u);
        // repeated calls on a grown tree do not move the estimate
        let again = estimate_m(&mut a, 1.0, ExploreOpts::default()).unwrap();
        assert_eq!(short.nodes, again.nodes);
    }
}

#[test]
fn additive_martingale_has_mean_one_at_depth_ten() {
    let law = law(3.0);
    let w: Vec<f64> = (0..20_000).map(|i| sample_additive_martingale(&law, 10, &mut stream(21, i))).collect();
    let (m, se) = mean_se(&w);
    assert!((m - 1.0).abs() <= 4.0 * se, "{m} +- {se}");
}

#[test]
fn local_time_sampler_mean_and_tail_bound() {
    let mut rng = stream(31, 0);
    // E xi = a / (1 - p)
    for &(a, p, n) in &[(0.3, 0.5, 4u64), (0.05, 0.8, 10), (1.0, 0.2, 3)] {
        let draws = 200_000;
        let xs: Vec<f64> = (0..draws).map(|_| local_time_at_tn_sampler(a, p, n, &mut rng) as f64).collect();
        let (m, se) = mean_se(&xs);
        let target = n as f64 * a / (1.0 - p);
        assert!((m - target).abs() <= 4.0 * se, "({a}, {p}, {n}): {m} +- {se} vs {target}");
    }
    // a point where the bound is not tiny, so the comparison has content
    let (a, p, n, k) = (0.5, 0.1, 2u64, 40u64);
    let bound = sum_iid_tail_bound(a, p, n, k).unwrap();
    assert!(bound > 1e-3);
    let hits = (0..1_000_000).filter(|_| local_time_at_tn_sampler(a, p, n, &mut rng) >= k).count();
    assert!(hits as f64 / 1e6 <= bound);
}

fn pi_k3() -> (YKernel, favsite_core::spine::StationaryEstimate) {
    let law = law(3.0);
    let est = invariant_pi(&law, 400_000, &PiOpts { i_max: 200, ..Default::default() }, 41).unwrap();
    (YKernel::new(&law, KernelOpts::default()), est)
}

#[test]
fn occupation_fractions_match_invariant_law() {
    let (k, est) = pi_k3();
    let path = y_path_kernel(&k, 1, 2_000_000, &mut stream(42, 0)).unwrap();
    let nb = 50;
    let len = path.len() / nb;
    for j in 1..=6u64 {
        let occ: Vec<f64> = path.chunks(len).take(nb).map(|c| c.iter().filter(|&&y| y == j).count() as f64 / c.len() as f64).collect();
        let (m, se) = mean_se(&occ);
        let (p, pse) = (est.pi[j as usize - 1], est.se[j as usize - 1]);
        assert!((m - p).abs() <= 4.0 * (se * se + pse * pse).sqrt(), "state {j}: {m} +- {se} vs {p} +- {pse}");
    }
}

#[test]
fn visits_per_excursion_are_ratios_of_invariant_weights() {
    let (k, est) = pi_k3();
    let n = 100_000;
    let jmax = 6;
    let mut visits = vec![Vec::new(); jmax];
    for i in 0..n as u64 {
        let path = simulate_y_kernel(&k, 1, u64::MAX, &mut stream(43, i)).unwrap();
        let mut c = vec![0.0; jmax];
        // Y_0 = 1 counts, the final return does not
        for &y in &path[..path.len() - 1] {
            if (y as usize) <= jmax {
                c[y as usize - 1] += 1.0;
            }
        }
        for j in 0..jmax {
            visits[j].push(c[j]);
        }
    }
    let (p1, s1) = (est.pi[0], est.se[0]);
    for j in 1..=jmax {
        let (m, se) = mean_se(&visits[j - 1]);
        let (pj, sj) = (est.pi[j - 1], est.se[j - 1]);
        let r = pj / p1;
        let rse = r * ((sj / pj).powi(2) + (s1 / p1).powi(2)).sqrt();
        assert!((m - r).abs() <= 4.0 * (se * se + rse * rse).sqrt(), "state {j}: {m} +- {se} vs {r} +- {rse}");
    }
}

#[test]
fn optional_lines_grow_linearly_in_l() {
    let r = z_l_lln(&law(3.0), &[10, 100], 4000, 10, 100_000_000, 51);
    assert_eq!(r.truncated, 0);
    for p in &r.points {
        assert!((p.mean - 1.0).abs() <= 0.02, "{p:?}");
    }
    assert!(r.points[1].corr > r.points[0].corr, "{:?}", r.points);
}

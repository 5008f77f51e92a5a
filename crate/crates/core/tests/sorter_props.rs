mod common;

use std::collections::BTreeSet;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subsort_core::io::synthetic::{generate_synthetic, SyntheticSpec};
use subsort_core::*;

#[test]
fn sorting_factor_matches_explicit_projector() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..1000 {
        let l = rng.random_range(2..=30);
        let k = rng.random_range(1..l);
        let c = gaussian_matrix(&mut rng, l, k);
        let mu = gaussian_vector(&mut rng, l);
        let y = gaussian_vector(&mut rng, l);
        let s = Subspace::new(c.clone(), mu.clone()).unwrap();
        let centered = sorting_factor(&s, &y, SfCentering::Centered).unwrap();
        let literal = sorting_factor(&s, &y, SfCentering::Uncentered).unwrap();
        let want_c = dense_sorting_factor(&c, &(&y - &mu));
        let want_l = dense_sorting_factor(&c, &y);
        assert!(rel_close_scalar(centered, want_c, 1e-10), "case {case}: {centered} vs {want_c}");
        assert!(rel_close_scalar(literal, want_l, 1e-10), "case {case}: {literal} vs {want_l}");
    }
}

#[test]
fn total_score_is_sum_of_factors() {
    let (model, data) = random_instance(17);
    let totals = total_scores(&model, &data, SfCentering::Centered).unwrap();
    for i in 0..data.len() {
        let y = data.vector(i).into_owned();
        let want: f64 = model
            .subspaces()
            .iter()
            .map(|s| dense_sorting_factor(s.basis(), &(&y - s.center())))
            .sum();
        assert!(rel_close_scalar(totals[i], want, 1e-10));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn in_subspace_points_score_zero(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (l, k) = (rng.random_range(3..20), rng.random_range(1..3));
        let c = gaussian_matrix(&mut rng, l, k);
        let mu = gaussian_vector(&mut rng, l);
        let y = &c * gaussian_vector(&mut rng, k) + &mu;
        let s = Subspace::new(c, mu).unwrap();
        prop_assert!(sorting_factor(&s, &y, SfCentering::Centered).unwrap() < 1e-20);
    }

    #[test]
    fn orthogonal_points_score_infinity(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (l, k) = (rng.random_range(3..20), rng.random_range(1..3));
        let q = gaussian_matrix(&mut rng, l, l).qr().q();
        let c = q.columns(0, k) * gaussian_matrix(&mut rng, k, k);
        let mu = gaussian_vector(&mut rng, l);
        let y = &mu + q.column(k) * 2.5;
        let s = Subspace::new(c, mu).unwrap();
        let sf = sorting_factor(&s, &y, SfCentering::Centered).unwrap();
        prop_assert!(sf.is_infinite() || sf > 1e25, "{}", sf);
        // Exactly zero projection hits the sentinel.
        let s0 = Subspace::new(DMatrix::from_fn(l, 1, |i, _| if i == 0 { 1.0 } else { 0.0 }), DVector::zeros(l)).unwrap();
        let y0 = DVector::from_fn(l, |i, _| if i == 1 { 1.0 } else { 0.0 });
        prop_assert_eq!(sorting_factor(&s0, &y0, SfCentering::Centered).unwrap(), f64::INFINITY);
    }

    /// Centered SF is unchanged by a rigid translation of both y and μ, by a
    /// common scaling of y and μ, and by a change of basis within the span.
    #[test]
    fn centered_sf_symmetries(seed in 0u64..100_000, scale in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (l, k) = (rng.random_range(3..20), rng.random_range(1..3));
        let c = gaussian_matrix(&mut rng, l, k);
        let mu = gaussian_vector(&mut rng, l);
        let y = gaussian_vector(&mut rng, l);
        let t = gaussian_vector(&mut rng, l) * 10.0;
        let base = sorting_factor(&Subspace::new(c.clone(), mu.clone()).unwrap(), &y, SfCentering::Centered).unwrap();
        let shifted = sorting_factor(&Subspace::new(c.clone(), &mu + &t).unwrap(), &(&y + &t), SfCentering::Centered).unwrap();
        let scaled = sorting_factor(&Subspace::new(c.clone(), &mu * scale).unwrap(), &(&y * scale), SfCentering::Centered).unwrap();
        let mixed = &c * (gaussian_matrix(&mut rng, k, k) + DMatrix::identity(k, k) * 3.0);
        let rebased = sorting_factor(&Subspace::new(mixed, mu.clone()).unwrap(), &y, SfCentering::Centered).unwrap();
        prop_assert!(rel_close_scalar(shifted, base, 1e-8));
        prop_assert!(rel_close_scalar(scaled, base, 1e-8));
        prop_assert!(rel_close_scalar(rebased, base, 1e-8));
    }

    /// Only score ranks matter to pruning.
    #[test]
    fn prune_depends_only_on_ranks(seed in 0u64..100_000, alpha in 0.01f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..60);
        let data = Dataset::from_columns(gaussian_matrix(&mut rng, 3, n)).unwrap();
        let scores = DVector::from_fn(n, |_, _| rng.random_range(0..8) as f64);
        let transformed = scores.map(|s| (s * 0.7).exp() + 3.0);
        let (a_keep, a_gone) = prune(&data, &scores, alpha).unwrap();
        let (b_keep, b_gone) = prune(&data, &transformed, alpha).unwrap();
        prop_assert_eq!(&a_gone, &b_gone);
        prop_assert_eq!(a_keep.original_index(), b_keep.original_index());
        prop_assert_eq!(a_gone.len(), removal_quota(n, alpha));
        prop_assert_eq!(a_keep.len() + a_gone.len(), n);
        // Every removed score is at least every kept score.
        let kept: BTreeSet<usize> = a_keep.original_index().iter().copied().collect();
        let min_removed = a_gone.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
        let max_kept = kept.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min_removed >= max_kept);
    }
}

fn clustered(seed: u64, sizes: &[usize], l: usize, k: usize, noise: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols = Vec::new();
    for &size in sizes {
        let c = gaussian_matrix(&mut rng, l, k);
        let mu = gaussian_vector(&mut rng, l) * 4.0;
        for _ in 0..size {
            cols.push(&c * gaussian_vector(&mut rng, k) + &mu + gaussian_vector(&mut rng, l) * noise);
        }
    }
    Dataset::from_vectors(&cols).unwrap()
}

#[test]
fn run_sort_bookkeeping() {
    let data = clustered(3, &[120, 100, 80], 12, 2, 0.3);
    let em = EmConfig { seed: 4, ..EmConfig::default() };
    let sort = SortConfig { target_keep: Some(200), ..SortConfig::default() };
    let out = run_sort(&data, 3, 6, &em, &sort).unwrap();
    let m = &out.manifest;
    assert_eq!(m.len(), 300);
    assert_eq!(m.kept_count(), 200);
    let all: BTreeSet<usize> = m.entries().iter().map(|e| e.original_index).collect();
    assert_eq!(all, (0..300).collect());
    for e in m.entries() {
        assert_eq!(e.kept, e.removed_at_iteration.is_none());
        if let Some(t) = e.removed_at_iteration {
            assert_eq!(t % sort.prune_period, 0);
        }
    }
    // Each prune event takes the stack down by what it removed.
    let mut n = 300;
    for r in &out.trace.records {
        if let Some(p) = &r.prune_event {
            assert_eq!(p.kept + p.removed, n);
            assert_eq!(m.entries().iter().filter(|e| e.removed_at_iteration == Some(r.iteration)).count(), p.removed);
            n = p.kept;
        }
    }
    assert_eq!(n, 200);
    // The last prune was clipped to land exactly on the target.
    let removed: Vec<usize> = out.trace.records.iter().filter_map(|r| r.prune_event.as_ref()).map(|p| p.removed).collect();
    assert!(removed.iter().all(|&r| r <= removal_quota(300, 0.05)));
}

#[test]
fn run_sort_loglik_is_monotone_between_prunes() {
    let data = clustered(8, &[150, 150], 10, 2, 1.0);
    let em = EmConfig { seed: 1, ..EmConfig::default() };
    let out = run_sort(&data, 2, 4, &em, &SortConfig { target_keep: Some(240), ..SortConfig::default() }).unwrap();
    let recs = &out.trace.records;
    for w in recs.windows(2) {
        if w[0].prune_event.is_some() || w[1].collapse_event.is_some() {
            continue;
        }
        assert!(w[1].loglik >= w[0].loglik - 1e-8 * w[0].loglik.abs(), "iteration {}", w[1].iteration);
    }
    assert!(out.trace.converged);
}

#[test]
fn run_sort_without_target_stops_pruning_at_convergence() {
    // A loose tolerance lets EM settle inside one prune period.
    let data = clustered(9, &[100, 100], 8, 2, 1.0);
    let em = EmConfig { seed: 2, convergence_tol: 1e-4, ..EmConfig::default() };
    let out = run_sort(&data, 2, 4, &em, &SortConfig::default()).unwrap();
    assert!(out.trace.converged);
    assert!(out.manifest.kept_count() < 200);
    assert!(out.manifest.kept_count() > 100);
    let last = out.trace.records.last().unwrap();
    assert!(last.prune_event.is_none());
}

#[test]
fn run_sort_is_deterministic() {
    let data = clustered(5, &[90, 60], 9, 2, 0.3);
    let em = EmConfig { seed: 7, ..EmConfig::default() };
    let sort = SortConfig { target_keep: Some(120), ..SortConfig::default() };
    let a = run_sort(&data, 2, 4, &em, &sort).unwrap();
    let b = run_sort(&data, 2, 4, &em, &sort).unwrap();
    assert_eq!(a.manifest, b.manifest);
    assert_eq!(
        subsort_core::io::manifest::manifest_to_string(&a.manifest),
        subsort_core::io::manifest::manifest_to_string(&b.manifest)
    );
}

#[test]
fn collapse_policies() {
    // One tiny cluster: with a high weight threshold its component collapses.
    let data = clustered(6, &[200, 190, 10], 10, 2, 0.3);
    let em = EmConfig { seed: 3, min_component_weight: 0.2, max_iterations: 40, ..EmConfig::default() };
    let reseed = run_sort(&data, 3, 6, &em, &SortConfig { target_keep: Some(380), ..SortConfig::default() }).unwrap();
    assert!(reseed.trace.records.iter().any(|r| r.collapse_event.is_some()));
    assert_eq!(reseed.model.num_components(), 3);
    let drop = run_sort(
        &data,
        3,
        6,
        &em,
        &SortConfig { target_keep: Some(380), collapse_policy: CollapsePolicy::Drop, ..SortConfig::default() },
    )
    .unwrap();
    assert!(drop.model.num_components() < 3);
    assert!(drop.trace.records.iter().any(|r| r.collapse_event.as_ref().is_some_and(|c| c.policy == CollapsePolicy::Drop)));
}

#[test]
fn run_sort_rejects_bad_configuration() {
    let data = clustered(1, &[30], 6, 2, 0.3);
    let em = EmConfig::default();
    assert!(matches!(run_sort(&data, 2, 5, &em, &SortConfig::default()), Err(Error::Input(_))));
    let too_many = SortConfig { target_keep: Some(31), ..SortConfig::default() };
    assert!(matches!(run_sort(&data, 1, 2, &em, &too_many), Err(Error::Input(_))));
}

/// After P EM iterations on planted data, planted outliers score higher than
/// particles on average, on at least 9 of 10 seeds.
#[test]
fn outliers_separate_after_first_period() {
    let mut passes = 0;
    for seed in 0..10 {
        let spec = SyntheticSpec { n: 2400, seed, ..SyntheticSpec::default() };
        let synth = generate_synthetic(&spec).unwrap();
        let data = &synth.dataset;
        let em = EmConfig { seed, ..EmConfig::default() };
        let mut model = initialize(data, 3, 20, &em).unwrap();
        for _ in 0..SortConfig::default().prune_period {
            let stats = e_step(&model, data).unwrap();
            model = m_step(data, &stats, 20, &em).unwrap();
        }
        let scores = total_scores(&model, data, SfCentering::Centered).unwrap();
        let labels = data.labels().unwrap();
        let mean = |l: Label| {
            let v: Vec<f64> = scores.iter().zip(labels).filter(|(_, x)| **x == l).map(|(s, _)| *s).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        if mean(Label::Outlier) > mean(Label::Particle) {
            passes += 1;
        }
    }
    assert!(passes >= 9, "{passes}/10 seeds separated");
}

#[test]
fn baseline_ranks_by_energy_ratio() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // Points in a 2-plane of R^5 plus two off-plane images.
    let plane = gaussian_matrix(&mut rng, 5, 2);
    let mut cols: Vec<DVector<f64>> = (0..200).map(|_| &plane * gaussian_vector(&mut rng, 2)).collect();
    let off = plane.clone().qr().q().columns(0, 2).into_owned();
    let normal = (DMatrix::identity(5, 5) - &off * off.transpose()) * gaussian_vector(&mut rng, 5);
    cols.push(normal.clone());
    cols.push(normal * 0.3 + &plane * gaussian_vector(&mut rng, 2));
    let data = Dataset::from_vectors(&cols).unwrap();
    let manifest = spca_sort(&data, 2, 200).unwrap();
    let dropped: Vec<usize> = manifest.entries().iter().filter(|e| !e.kept).map(|e| e.original_index).collect();
    assert_eq!(dropped, vec![200, 201]);
    assert!(manifest.entries().iter().filter(|e| !e.kept).all(|e| e.removed_at_iteration == Some(0)));
    let all = spca_sort(&data, 2, 202).unwrap();
    assert_eq!(all.kept_count(), 202);
}

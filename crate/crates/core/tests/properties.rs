//! Randomized invariants across modules.

use lvgm::diagnostics::{identifiability_report, kkt_report, recovery_metrics, DEFAULT_RANK_TOL};
use lvgm::estimators::{fit_dantzig, fit_em_rank, fit_two_step_threshold, RankConstraint, ThresholdParams};
use lvgm::gaussian::{gaussian_log_likelihood, marginal_precision, objective_value, sample_covariance};
use lvgm::linalg::{self, Matrix, SymEigen};
use lvgm::solver::fit_mle;
use lvgm::synth::{draw_samples, generate_latent_model, GeneratorParams};
use lvgm::{PrecisionDecomposition, RegularizationParams, SampleCovariance, SolverOptions};
use proptest::prelude::*;

fn matrix(p: usize, values: &[f64]) -> Matrix {
    Matrix::from_fn(p, p, |i, j| values[(i * p + j) % values.len()])
}

fn random_pd(p: usize, values: &[f64]) -> Matrix {
    let a = matrix(p, values);
    &a * a.transpose() + Matrix::identity(p, p) * 0.1
}

/// Permutation matrix sending coordinate `i` to `perm[i]`.
fn permutation(perm: &[usize]) -> Matrix {
    let p = perm.len();
    Matrix::from_fn(p, p, |i, j| if perm[j] == i { 1.0 } else { 0.0 })
}

fn conj(pm: &Matrix, m: &Matrix) -> Matrix {
    pm * m * pm.transpose()
}

fn small_instance(p: usize, seed: u64) -> (SampleCovariance, PrecisionDecomposition) {
    let params = GeneratorParams { p, h: 1, max_degree: 2, latent_fanout: 1.0, edge_strength: 1.5, latent_strength: 2.0 };
    let model = generate_latent_model(params, seed).unwrap();
    let x = draw_samples(&model, 30 * p, seed + 7).unwrap();
    (sample_covariance(&x, false).unwrap(), model.truth())
}

fn mean_diag(s: &SampleCovariance) -> f64 {
    s.matrix().trace() / s.p() as f64
}

fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, len)
}

fn perm_strategy(p: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..p).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn log_likelihood_is_midpoint_concave(p in 1usize..6, a in values(36), b in values(36), c in values(36)) {
        let (k1, k2) = (random_pd(p, &a), random_pd(p, &b));
        let sigma = SampleCovariance::new(random_pd(p, &c), 10).unwrap();
        let mid = (&k1 + &k2) * 0.5;
        let lhs = gaussian_log_likelihood(&mid, &sigma).unwrap();
        let rhs = 0.5 * (gaussian_log_likelihood(&k1, &sigma).unwrap() + gaussian_log_likelihood(&k2, &sigma).unwrap());
        prop_assert!(lhs >= rhs - 1e-10 * rhs.abs().max(1.0));
    }

    #[test]
    fn objective_is_permutation_invariant(perm in perm_strategy(5), a in values(25), c in values(25), lam in 0.01..1.0f64) {
        let s = random_pd(5, &a) * 2.0;
        let l = random_pd(5, &c) * 0.02;
        let sigma = SampleCovariance::new(random_pd(5, &c), 10).unwrap();
        let reg = RegularizationParams::new(lam, 0.5).unwrap();
        let pm = permutation(&perm);
        let base = objective_value(&PrecisionDecomposition::new(s.clone(), l.clone()), &sigma, &reg);
        let moved = objective_value(
            &PrecisionDecomposition::new(conj(&pm, &s), conj(&pm, &l)),
            &SampleCovariance::new(conj(&pm, sigma.matrix()), 10).unwrap(),
            &reg,
        );
        prop_assert_eq!(base.is_feasible(), moved.is_feasible());
        if base.is_feasible() {
            prop_assert!((base.value - moved.value).abs() <= 1e-10 * base.value.abs().max(1.0));
        }
    }

    #[test]
    fn sample_covariance_ignores_row_order(n in 2usize..12, a in values(60), seed in any::<u64>()) {
        let x = Matrix::from_fn(n, 5, |i, j| a[(i * 5 + j) % a.len()]);
        let mut order: Vec<usize> = (0..n).collect();
        order.rotate_left((seed % n as u64) as usize);
        order.swap(0, n - 1);
        let y = Matrix::from_fn(n, 5, |i, j| x[(order[i], j)]);
        let (sx, sy) = (sample_covariance(&x, false).unwrap(), sample_covariance(&y, false).unwrap());
        prop_assert!((sx.matrix() - sy.matrix()).amax() < 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn marginal_blocks_and_generator_margins(p in 4usize..14, h in 0usize..3, seed in 0u64..1000) {
        let params = GeneratorParams { p, h, max_degree: 2, latent_fanout: 0.7, edge_strength: 1.0, latent_strength: 3.0 };
        let model = generate_latent_model(params, seed).unwrap();
        let observed: Vec<usize> = (0..p).collect();
        let latent: Vec<usize> = (p..p + h).collect();
        let m = marginal_precision(&model.k_joint, &observed, &latent).unwrap();
        // K_O is formed as S* - L*, so adding L* back is exact up to one rounding per entry.
        prop_assert!((&m.k_o + &m.l_star - &m.s_star).amax() <= 4.0 * f64::EPSILON * m.s_star.amax());
        prop_assert!((&m.k_o - &model.k_o).amax() <= 1e-12);
        prop_assert!((&m.l_star - &model.l_star).amax() <= 1e-12);
        let eig = SymEigen::new(&m.l_star);
        let cutoff = 1e-9 * eig.max().max(0.0);
        prop_assert!(eig.values.iter().filter(|&&v| v > cutoff).count() <= h);
        prop_assert!(linalg::min_eigenvalue(&model.k_joint) >= 0.1 - 1e-12);

        // Coherence of a k-dimensional subspace lies in [sqrt(k/p), 1].
        let id = identifiability_report(&model.truth());
        if id.subspace_dim > 0 {
            let lower = (id.subspace_dim as f64 / p as f64).sqrt();
            prop_assert!(id.coherence >= lower - 1e-12 && id.coherence <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn threshold_is_permutation_and_scale_equivariant(seed in 0u64..500, perm in perm_strategy(6), c in 0.1..10.0f64) {
        let (sigma, _) = small_instance(6, seed);
        let thr = ThresholdParams::hard(0.2 / mean_diag(&sigma), 0.05 / mean_diag(&sigma));
        let base = fit_two_step_threshold(&sigma, &thr).unwrap();

        let pm = permutation(&perm);
        let moved = SampleCovariance::new(conj(&pm, sigma.matrix()), sigma.n()).unwrap();
        let fit = fit_two_step_threshold(&moved, &thr).unwrap();
        prop_assert!((&fit.decomp.s - conj(&pm, &base.decomp.s)).amax() <= 1e-9);
        prop_assert!((&fit.decomp.l - conj(&pm, &base.decomp.l)).amax() <= 1e-9);

        // Σ -> cΣ scales Σ⁻¹ by 1/c, so thresholds scale by 1/c and so do both parts.
        let scaled = SampleCovariance::new(sigma.matrix() * c, sigma.n()).unwrap();
        let thr_c = ThresholdParams::hard(thr.t_sparse / c, thr.t_spectral / c);
        let fit = fit_two_step_threshold(&scaled, &thr_c).unwrap();
        let scale = base.decomp.s.amax().max(1.0);
        prop_assert!((&fit.decomp.s * c - &base.decomp.s).amax() <= 1e-9 * scale);
        prop_assert!((&fit.decomp.l * c - &base.decomp.l).amax() <= 1e-9 * scale);
    }

    #[test]
    fn recovery_metrics_are_permutation_equivariant(seed in 0u64..500, perm in perm_strategy(7), lam in 0.05..0.5f64) {
        let (sigma, truth) = small_instance(7, seed);
        let reg = RegularizationParams::new(lam * mean_diag(&sigma), 0.4).unwrap();
        let fit = fit_mle(&sigma, &reg, &SolverOptions::default()).unwrap();
        let pm = permutation(&perm);
        let zero_tol = 1e-6 * truth.s.amax();
        let a = recovery_metrics(&fit.decomp, &truth, zero_tol, DEFAULT_RANK_TOL).unwrap();
        let moved = |d: &PrecisionDecomposition| PrecisionDecomposition::new(conj(&pm, &d.s), conj(&pm, &d.l));
        let b = recovery_metrics(&moved(&fit.decomp), &moved(&truth), zero_tol, DEFAULT_RANK_TOL).unwrap();
        prop_assert_eq!(a.sign_consistent, b.sign_consistent);
        prop_assert_eq!((a.false_positives, a.false_negatives, a.sign_flips), (b.false_positives, b.false_negatives, b.sign_flips));
        prop_assert_eq!((a.rank_est, a.rank_true), (b.rank_est, b.rank_true));
        prop_assert!((a.loss_frob_total - b.loss_frob_total).abs() <= 1e-9 * a.loss_frob_total.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn mle_is_permutation_equivariant(seed in 0u64..500, perm in perm_strategy(8), lam in 0.05..0.5f64, gamma in 0.1..0.8f64) {
        let (sigma, _) = small_instance(8, seed);
        let reg = RegularizationParams::new(lam * mean_diag(&sigma), gamma).unwrap();
        let opts = SolverOptions::default().with_tol(1e-9).with_max_iter(20_000);
        let base = fit_mle(&sigma, &reg, &opts).unwrap();
        let pm = permutation(&perm);
        let moved = SampleCovariance::new(conj(&pm, sigma.matrix()), sigma.n()).unwrap();
        let fit = fit_mle(&moved, &reg, &opts).unwrap();
        prop_assert!(base.converged && fit.converged);
        prop_assert!((&fit.decomp.s - conj(&pm, &base.decomp.s)).norm() <= 1e-6);
        prop_assert!((&fit.decomp.l - conj(&pm, &base.decomp.l)).norm() <= 1e-6);
    }

    #[test]
    fn mle_merit_is_monotone_after_warmup(seed in 0u64..500, lam in 0.05..0.5f64, gamma in 0.1..0.8f64) {
        let (sigma, _) = small_instance(10, seed);
        let reg = RegularizationParams::new(lam * mean_diag(&sigma), gamma).unwrap();
        let fit = fit_mle(&sigma, &reg, &SolverOptions::default()).unwrap();
        for w in fit.history.windows(2).skip(10) {
            prop_assert!(w[1].merit <= w[0].merit + 1e-9);
        }
    }

    #[test]
    fn kkt_residuals_shrink_with_tolerance(seed in 0u64..500, lam in 0.05..0.5f64, gamma in 0.1..0.8f64) {
        let (sigma, _) = small_instance(10, seed);
        let reg = RegularizationParams::new(lam * mean_diag(&sigma), gamma).unwrap();
        let loose = fit_mle(&sigma, &reg, &SolverOptions::default().with_tol(1e-5).with_max_iter(20_000)).unwrap();
        let tight = fit_mle(&sigma, &reg, &SolverOptions::default().with_tol(1e-8).with_max_iter(20_000)).unwrap();
        let k_loose = kkt_report(&sigma, &loose.decomp, &reg).unwrap().max();
        let k_tight = kkt_report(&sigma, &tight.decomp, &reg).unwrap().max();
        prop_assert!(k_tight <= k_loose, "{k_tight:e} > {k_loose:e}");
    }

    #[test]
    fn constrained_fit_has_an_active_constraint(seed in 0u64..500, lam in 0.05..0.5f64, gamma in 0.2..1.0f64) {
        let (sigma, _) = small_instance(6, seed);
        let reg = RegularizationParams::new(lam, gamma).unwrap();
        // Tight boxes can leave ADMM in a slow sublinear tail; those runs are skipped, not failed.
        let fit = fit_dantzig(&sigma, &reg, &SolverOptions::default().with_max_iter(100_000)).unwrap();
        prop_assume!(fit.converged);
        prop_assert!(fit.extras["linf_violation"].max(fit.extras["spectral_violation"]) <= 1e-6);
        if fit.objective > 1e-8 {
            let active = (fit.extras["linf_activity"] - 1.0).abs() <= 1e-4
                || (fit.extras["spectral_activity"] - 1.0).abs() <= 1e-4;
            prop_assert!(active, "{:?}", fit.extras);
        }
    }

    #[test]
    fn alternative_estimators_are_bitwise_reproducible(seed in 0u64..500) {
        let (sigma, _) = small_instance(6, seed);
        let reg = RegularizationParams::new(0.2 * mean_diag(&sigma), 0.5).unwrap();
        let opts = SolverOptions::default();
        let lambda = reg.sparse_weight();
        let runs: Vec<_> = (0..2)
            .map(|_| {
                (
                    fit_em_rank(&sigma, lambda, RankConstraint::new(1), None, &opts).unwrap(),
                    fit_two_step_threshold(&sigma, &ThresholdParams::default_for(&sigma)).unwrap(),
                    fit_dantzig(&sigma, &reg, &opts).unwrap(),
                )
            })
            .collect();
        prop_assert_eq!(&runs[0].0, &runs[1].0);
        prop_assert_eq!(&runs[0].1, &runs[1].1);
        prop_assert_eq!(&runs[0].2, &runs[1].2);
    }
}

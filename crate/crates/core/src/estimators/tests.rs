use super::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn randn_matrix(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, k, |_, _| f64::sample_std_normal(rng))
}

fn randn_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| f64::sample_std_normal(rng))
}

fn random_inputs(rng: &mut ChaCha8Rng, n: usize, k: usize, gamma: f64) -> EstimatorInputs<f64> {
    EstimatorInputs::new(
        randn_matrix(rng, n, k),
        randn_matrix(rng, n, k),
        randn_vector(rng, n),
        gamma,
    )
    .unwrap()
}

fn max_rel_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / (1.0 + x.abs().max(y.abs())))
        .fold(0.0, f64::max)
}

/// Independent oracle: normal equations solved through an explicit inverse.
fn ols_normal_equations(a: &DMatrix<f64>, c: &DVector<f64>) -> DVector<f64> {
    let ata = a.transpose() * a;
    let inv = ata.try_inverse().expect("normal matrix invertible");
    inv * (a.transpose() * c)
}

#[test]
fn hand_example_single_feature() {
    let phi = DMatrix::<f64>::from_row_slice(2, 1, &[1.0, 1.0]);
    let c = DVector::from_vec(vec![1.0, 1.0]);
    let inputs = EstimatorInputs::new(phi.clone(), phi.clone(), c, 0.5).unwrap();
    let ls = solve_ls_bellman(&inputs).unwrap();
    let iv = solve_iv_bellman(&inputs).unwrap();
    assert!((ls.theta[0] - 2.0).abs() < 1e-12);
    assert!((iv.theta[0] - 2.0).abs() < 1e-12);
}

#[test]
fn gamma_zero_collapses_to_ols() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inputs = random_inputs(&mut rng, 120, 5, 0.0);
    let oracle = ols_normal_equations(inputs.phi_prev(), inputs.contributions());
    for theta in [
        solve_ls_bellman(&inputs).unwrap().theta,
        solve_iv_bellman(&inputs).unwrap().theta,
        solve_ls_projected_bellman(&inputs).unwrap().theta,
        solve_iv_projected_bellman(&inputs).unwrap().theta,
    ] {
        assert!(max_rel_diff(&theta, &oracle) < 1e-10);
    }
}

#[test]
fn ls_matches_normal_equations_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let inputs = random_inputs(&mut rng, 200, 4, 0.9);
    let theta = solve_ls_bellman(&inputs).unwrap().theta;
    let oracle = ols_normal_equations(&inputs.regressors(), inputs.contributions());
    assert!(max_rel_diff(&theta, &oracle) < 1e-10);
}

#[test]
fn square_system_solved_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let inputs = random_inputs(&mut rng, 6, 6, 0.5);
    let theta = solve_ls_projected_bellman(&inputs).unwrap().theta;
    let residual = inputs.contributions() - inputs.regressors() * &theta;
    assert!(residual.amax() < 1e-9);
}

#[test]
fn ls_residual_orthogonal_to_regressors() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let inputs = random_inputs(&mut rng, 150, 4, 0.9);
    let theta = solve_ls_bellman(&inputs).unwrap().theta;
    let a = inputs.regressors();
    let residual = inputs.contributions() - &a * &theta;
    let grad = a.transpose() * residual;
    assert!(grad.amax() < 1e-9);
}

#[test]
fn estimator_equivalence_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for gamma in [0.0, 0.5, 0.9, 0.999] {
        for _ in 0..20 {
            let n = rng.gen_range(50..=300);
            let k = rng.gen_range(2..=8);
            let inputs = random_inputs(&mut rng, n, k, gamma);
            if !check_rank_assumptions(&inputs, None).all_full_rank() {
                continue;
            }
            let iv = solve_iv_bellman(&inputs).unwrap().theta;
            let lsp = solve_ls_projected_bellman(&inputs).unwrap().theta;
            let ivp = solve_iv_projected_bellman(&inputs).unwrap().theta;
            assert!(max_rel_diff(&iv, &lsp) < 1e-8, "gamma={gamma}");
            assert!(max_rel_diff(&iv, &ivp) < 1e-8, "gamma={gamma}");
        }
    }
}

#[test]
fn ls_is_a_different_estimator_under_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut distinct = 0;
    let total = 40;
    for _ in 0..total {
        let inputs = random_inputs(&mut rng, 200, 4, 0.9);
        let ls = solve_ls_bellman(&inputs).unwrap().theta;
        let iv = solve_iv_bellman(&inputs).unwrap().theta;
        if max_rel_diff(&ls, &iv) > 1e-6 {
            distinct += 1;
        }
    }
    assert!(distinct as f64 >= 0.95 * total as f64);
}

#[test]
fn projection_fixes_column_space_and_annihilates_complement() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 30;
    let k = 4;
    let full = randn_matrix(&mut rng, n, n).qr().q();
    let span = full.columns(0, k).into_owned();
    let complement = full.columns(k, 3).into_owned();

    let fixed = apply_projection(&span, &span).unwrap();
    assert!((&fixed - &span).amax() < 1e-10);

    let zeroed = apply_projection(&span, &complement).unwrap();
    assert!(zeroed.amax() < 1e-10);
}

#[test]
fn projection_is_symmetric_and_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let n = 12;
    let phi = randn_matrix(&mut rng, n, 3);
    let eye = DMatrix::<f64>::identity(n, n);
    let pi = apply_projection(&phi, &eye).unwrap();
    assert!((&pi - pi.transpose()).amax() < 1e-10);
    let twice = apply_projection(&phi, &pi).unwrap();
    assert!((&twice - &pi).amax() < 1e-10);
    let projected_phi = &pi * &phi;
    assert!((&projected_phi - &phi).amax() < 1e-10);
}

#[test]
fn iv_regression_noiseless_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let x = randn_matrix(&mut rng, 80, 3);
    let beta = DVector::from_vec(vec![1.5, -2.0, 0.25]);
    let y = &x * &beta;
    let problem = IvRegressionProblem::new(x.clone(), y, x).unwrap();
    let est = solve_iv_regression(&problem).unwrap().theta;
    assert!(max_rel_diff(&est, &beta) < 1e-10);
}

#[test]
fn iv_regression_beats_ols_attenuation() {
    // Scalar errors-in-variables model: beta = 2, Var(X) = 1, Var(X'') = 0.25.
    // OLS attenuates toward beta / (1 + 0.25); IV with Z = X stays consistent.
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let n = 100_000;
    let beta = 2.0;
    let mut x_true = DVector::zeros(n);
    let mut x_obs = DVector::zeros(n);
    let mut y_obs = DVector::zeros(n);
    for i in 0..n {
        let x = f64::sample_std_normal(&mut rng);
        x_true[i] = x;
        x_obs[i] = x + 0.5 * f64::sample_std_normal(&mut rng);
        y_obs[i] = beta * x + 0.1 * f64::sample_std_normal(&mut rng);
    }
    let x_obs_m = DMatrix::from_column_slice(n, 1, x_obs.as_slice());
    let z = DMatrix::from_column_slice(n, 1, x_true.as_slice());

    let iv = solve_iv_regression(&IvRegressionProblem::new(x_obs_m.clone(), y_obs.clone(), z).unwrap())
        .unwrap()
        .theta[0];
    let ols = ols_normal_equations(&x_obs_m, &y_obs)[0];

    let iv_err = (iv - beta).abs();
    let ols_err = (ols - beta).abs();
    let attenuation = beta / (1.0 + 0.25);
    assert!(iv_err < 0.02, "iv error {iv_err}");
    assert!(ols_err > 5.0 * iv_err, "ols {ols} vs iv {iv}");
    assert!((ols - attenuation).abs() < 0.05, "ols {ols} far from attenuated {attenuation}");
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

#[test]
fn iv_regression_consistency_across_sample_sizes() {
    // k = 3 with instruments correlated with X but independent of both noises.
    let k = 3;
    let beta = DVector::from_vec(vec![1.0, -0.5, 2.0]);
    let mut medians = Vec::new();
    for &n in &[1_000usize, 10_000, 100_000] {
        let mut errs = Vec::new();
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let z = randn_matrix(&mut rng, n, k);
            let mut x_obs = DMatrix::zeros(n, k);
            let mut y_obs = DVector::zeros(n);
            for i in 0..n {
                let mut y = 0.0;
                for j in 0..k {
                    let x = z[(i, j)] + 0.3 * f64::sample_std_normal(&mut rng);
                    x_obs[(i, j)] = x + 0.5 * f64::sample_std_normal(&mut rng);
                    y += beta[j] * x;
                }
                y_obs[i] = y + 0.2 * f64::sample_std_normal(&mut rng);
            }
            let est = solve_iv_regression(&IvRegressionProblem::new(x_obs, y_obs, z).unwrap())
                .unwrap()
                .theta;
            errs.push((est - &beta).norm());
        }
        medians.push(median(errs));
    }
    assert!(medians[1] <= medians[0] && medians[2] <= medians[1], "medians {medians:?}");
}

/// Synthetic fixed-policy evaluation problem whose true value function lies
/// in the basis span: samples follow the Bellman identity exactly in
/// expectation, so the IV estimator is consistent while plain LS is not.
fn span_mdp_sample(
    rng: &mut ChaCha8Rng,
    n: usize,
    gamma: f64,
) -> (EstimatorInputs<f64>, DVector<f64>) {
    let m = 12;
    let k = 4;
    let features = randn_matrix(rng, m, k);
    let theta_star = randn_vector(rng, k);
    // Random row-stochastic transition matrix for the fixed policy.
    let mut p = DMatrix::from_fn(m, m, |_, _| rng.gen_range(0.0..1.0));
    for i in 0..m {
        let s: f64 = p.row(i).iter().sum();
        for j in 0..m {
            p[(i, j)] /= s;
        }
    }
    // Expected contribution that makes theta_star the exact fixed point.
    let values = &features * &theta_star;
    let expected_c = &values - (&p * &values) * gamma;

    let mut phi_prev = DMatrix::zeros(n, k);
    let mut phi_next = DMatrix::zeros(n, k);
    let mut c = DVector::zeros(n);
    for i in 0..n {
        let s = rng.gen_range(0..m);
        let u: f64 = rng.gen_range(0.0..1.0);
        let mut acc = 0.0;
        let mut succ = m - 1;
        for j in 0..m {
            acc += p[(s, j)];
            if u < acc {
                succ = j;
                break;
            }
        }
        phi_prev.row_mut(i).copy_from(&features.row(s));
        phi_next.row_mut(i).copy_from(&features.row(succ));
        c[i] = expected_c[s] + 0.5 * f64::sample_std_normal(rng);
    }
    (
        EstimatorInputs::new(phi_prev, phi_next, c, gamma).unwrap(),
        theta_star,
    )
}

#[test]
fn iv_consistent_ls_biased_on_span_mdp() {
    let gamma = 0.9;
    let sizes = [1_000usize, 10_000, 100_000];
    let mut iv_medians = Vec::new();
    let mut ls_medians = Vec::new();
    for &n in &sizes {
        let mut iv_errs = Vec::new();
        let mut ls_errs = Vec::new();
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
            let (inputs, theta_star) = span_mdp_sample(&mut rng, n, gamma);
            let iv = solve_iv_bellman(&inputs).unwrap().theta;
            let ls = solve_ls_bellman(&inputs).unwrap().theta;
            iv_errs.push((iv - &theta_star).norm());
            ls_errs.push((ls - &theta_star).norm());
        }
        iv_medians.push(median(iv_errs));
        ls_medians.push(median(ls_errs));
    }
    assert!(
        iv_medians[1] <= iv_medians[0] && iv_medians[2] <= iv_medians[1],
        "iv medians {iv_medians:?}"
    );
    // The LS error settles on its bias; it must not track the IV error to 0.
    assert!(
        ls_medians[2] > 5.0 * iv_medians[2],
        "ls {ls_medians:?} vs iv {iv_medians:?}"
    );
}

#[test]
fn rank_report_flags_duplicate_column() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut phi = randn_matrix(&mut rng, 40, 4);
    let first = phi.column(0).into_owned();
    phi.set_column(3, &first);
    let inputs =
        EstimatorInputs::new(phi, randn_matrix(&mut rng, 40, 4), randn_vector(&mut rng, 40), 0.9)
            .unwrap();
    let report = check_rank_assumptions(&inputs, None);
    assert_eq!(report.matrices[0].rank, 3);
    assert!(!report.all_full_rank());
}

#[test]
fn rank_report_identity_block() {
    let k = 4;
    let n = 8;
    let mut phi = DMatrix::<f64>::zeros(n, k);
    for i in 0..k {
        phi[(i, i)] = 1.0;
    }
    let inputs = EstimatorInputs::new(phi.clone(), phi, DVector::zeros(n), 0.0).unwrap();
    let report = check_rank_assumptions(&inputs, None);
    assert!(report.all_full_rank());
    for m in &report.matrices {
        assert!((m.condition - 1.0).abs() < 1e-12);
    }
}

#[test]
fn rank_report_random_gaussian_full_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let inputs = random_inputs(&mut rng, 100, 5, 0.9);
    assert!(check_rank_assumptions(&inputs, None).all_full_rank());
}

#[test]
fn rank_deficient_inputs_error() {
    let phi = DMatrix::<f64>::zeros(10, 2);
    let inputs =
        EstimatorInputs::new(phi.clone(), phi.clone(), DVector::zeros(10), 0.5).unwrap();
    assert!(matches!(
        solve_ls_bellman(&inputs),
        Err(EstimatorError::RankDeficient { .. })
    ));
    assert!(matches!(
        solve_iv_bellman(&inputs),
        Err(EstimatorError::RankDeficient { .. })
    ));
    assert!(matches!(
        apply_projection(&phi, &phi),
        Err(EstimatorError::RankDeficient { .. })
    ));
}

#[test]
fn shape_validation() {
    let a = DMatrix::<f64>::zeros(4, 2);
    let b = DMatrix::<f64>::zeros(5, 2);
    assert!(EstimatorInputs::new(a.clone(), b, DVector::zeros(4), 0.5).is_err());
    assert!(EstimatorInputs::new(a.clone(), a.clone(), DVector::zeros(3), 0.5).is_err());
    assert!(EstimatorInputs::new(a.clone(), a.clone(), DVector::zeros(4), 1.0).is_err());
    let wide = DMatrix::<f64>::zeros(2, 4);
    assert!(EstimatorInputs::new(wide.clone(), wide, DVector::zeros(2), 0.5).is_err());
}

#[test]
fn ridge_option_regularizes_singular_system() {
    let phi = DMatrix::<f64>::from_row_slice(4, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
    let inputs =
        EstimatorInputs::new(phi.clone(), phi, DVector::from_element(4, 1.0), 0.0).unwrap();
    assert!(solve_iv_bellman(&inputs).is_err());
    let opts = SolverOptions { rank_tolerance: None, ridge: 1e-6 };
    let theta = solve_iv_bellman_with(&inputs, &opts).unwrap().theta;
    assert!(theta.iter().all(|v| v.is_finite()));
}

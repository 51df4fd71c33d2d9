use kbb_core::diagnostics::{krylov_basis, QOperator};
use kbb_core::envs::{make_circular_walk, make_random_tabular};
use kbb_core::kbb::{run_fvi, run_vi};
use kbb_core::lstd::{lstd_solve, lstd_solve_population};
use kbb_core::mrp::{solve_exact, stationary_distribution};
use kbb_core::regress::fit_residual;
use kbb_core::{Env, ErrorMeter, IterationBudget, RegressorConfig, SampledRunSpec, StatePoint, StateRef, StateValueFn};

#[test]
fn empirical_lstd_approaches_population_lstd() {
    let model = make_circular_walk(30, 0.9, 2).unwrap();
    let qop = QOperator::new(&model).unwrap();
    let basis = krylov_basis(&qop, 3);
    let population = lstd_solve_population(&basis, &model, qop.mu()).unwrap();
    let env = Env::tabular("circ", model.clone()).unwrap();
    let data = env.sample_transitions(1_000_000, 9).unwrap();
    let empirical = lstd_solve(&basis, &data, model.gamma()).unwrap();
    let scale = population.coeffs.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    for (e, p) in empirical.coeffs.iter().zip(&population.coeffs) {
        assert!((e - p).abs() <= 0.05 * scale, "{e} vs {p}");
    }
}

#[test]
fn residual_of_true_value_averages_to_zero() {
    let model = make_random_tabular(20, 0.9, 4).unwrap();
    let truth = StateValueFn::Table(solve_exact(&model).unwrap());
    let env = Env::tabular("rand", model.clone()).unwrap();
    let data = env.sample_transitions(100_000, 3).unwrap();
    let fitted = fit_residual(&truth, &data, model.gamma(), &RegressorConfig::tabular_mean(), 0).unwrap();

    // Per-state standard error of the residual targets.
    let n = model.n_states();
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    let mut count = vec![0.0; n];
    for s in data.samples() {
        let (StatePoint::Index(i), StatePoint::Index(j)) = (&s.state, &s.next_state) else {
            unreachable!()
        };
        let y = truth.eval(StateRef::Index(*i)) - s.reward - model.gamma() * truth.eval(StateRef::Index(*j));
        sum[*i] += y;
        sum_sq[*i] += y * y;
        count[*i] += 1.0;
    }
    for i in 0..n {
        assert!(count[i] > 1.0);
        let mean = sum[i] / count[i];
        let var = (sum_sq[i] - count[i] * mean * mean) / (count[i] - 1.0);
        let se = (var / count[i]).sqrt();
        let value = fitted.eval(StateRef::Index(i));
        assert!((value - mean).abs() <= 1e-9);
        assert!(value.abs() <= 5.0 * se, "state {i}: {value} vs se {se}");
    }
}

#[test]
fn fvi_with_large_samples_tracks_vi() {
    let model = make_random_tabular(300, 0.9, 1).unwrap();
    let env = Env::tabular("rand300", model).unwrap();
    let meter = ErrorMeter::new(&env, &env.true_value().unwrap(), 0, 0).unwrap();
    let vi = run_vi(&env, 5, &meter).unwrap();
    let budget = IterationBudget {
        n_per_iter: 1_000_000,
        first_iter_multiplier: 1,
        max_iters: 5,
        shared_data: true,
    };
    let fvi = run_fvi(
        &env,
        &SampledRunSpec::new(RegressorConfig::tabular_mean(), budget, 5),
        &meter,
    )
    .unwrap();
    for (f, v) in fvi.rows.iter().zip(&vi.rows) {
        assert!(
            f.mu_error <= 3.0 * v.mu_error,
            "iter {}: {} vs {}",
            f.iter,
            f.mu_error,
            v.mu_error
        );
    }
}

#[test]
fn stationary_law_of_circular_walk_is_uniform() {
    let model = make_circular_walk(50, 0.99, 0).unwrap();
    let mu = stationary_distribution(&model).unwrap();
    assert!(mu.weights().iter().all(|w| (w - 0.02).abs() <= 1e-12));
}

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use semcam::models::{
    complete_descriptors, fit_gaussian_prior, lasso_fit, GaussianPrior, LassoOptions, Mlp, MlpOptions, MLP_HIDDEN,
};

fn random_prior(rng: &mut ChaCha8Rng, k: usize) -> GaussianPrior {
    let a = DMatrix::from_fn(k, k, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let sigma = &a * a.transpose() + DMatrix::identity(k, k) * 0.05;
    GaussianPrior {
        mu: (0..k).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect(),
        sigma: (0..k).map(|i| (0..k).map(|j| sigma[(i, j)]).collect()).collect(),
        floored: false,
    }
}

/// Conditional mean through the precision matrix: μ₁ − Λ₁₁⁻¹ Λ₁₂ (d₂ − μ₂).
fn precision_oracle(prior: &GaussianPrior, known: &[(usize, f64)]) -> Vec<f64> {
    let k = prior.mu.len();
    let lambda = prior.covariance().try_inverse().unwrap();
    let obs: Vec<usize> = known.iter().map(|p| p.0).collect();
    let free: Vec<usize> = (0..k).filter(|i| !obs.contains(i)).collect();
    let l11 = DMatrix::from_fn(free.len(), free.len(), |a, b| lambda[(free[a], free[b])]);
    let l12 = DMatrix::from_fn(free.len(), obs.len(), |a, b| lambda[(free[a], obs[b])]);
    let diff = DVector::from_iterator(obs.len(), known.iter().map(|&(i, v)| v - prior.mu[i]));
    let shift = l11.try_inverse().unwrap() * l12 * diff;
    let mut out = prior.mu.clone();
    for &(i, v) in known {
        out[i] = v;
    }
    for (a, &f) in free.iter().enumerate() {
        out[f] = prior.mu[f] - shift[a];
    }
    out
}

#[test]
fn completion_matches_precision_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..200 {
        let prior = random_prior(&mut rng, 7);
        let mut idx: Vec<usize> = (0..7).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
        let known: Vec<(usize, f64)> = idx[..3].iter().map(|&i| (i, rng.random::<f64>() * 6.0 - 3.0)).collect();
        let got = complete_descriptors(&prior, &known).unwrap();
        let want = precision_oracle(&prior, &known);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "{g} vs {w}");
        }
    }
}

#[test]
fn unpenalized_fit_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (n, p) = (60, 5);
    let x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let y = DMatrix::from_fn(n, 2, |i, k| {
        (0..p).map(|j| x[(i, j)] * (j as f64 - 2.0 + k as f64)).sum::<f64>() + 0.3 * rng.random::<f64>()
    });
    let fit = lasso_fit(&x, &y, 0.0, &LassoOptions::default()).unwrap();
    // normal equations on [1, X]
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    let gram = design.transpose() * &design;
    for k in 0..2 {
        let rhs = design.transpose() * y.column(k);
        let beta = gram.clone().cholesky().unwrap().solve(&rhs);
        assert!((fit.intercepts[k] - beta[0]).abs() < 1e-6);
        for j in 0..p {
            assert!((fit.coefficients[(k, j)] - beta[j + 1]).abs() < 1e-6);
        }
    }
}

#[test]
fn lasso_objective_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for lambda in [0.0, 1e-3, 1e-2, 0.1, 0.5] {
        let x = DMatrix::from_fn(80, 11, |_, _| rng.random::<f64>());
        let y = DMatrix::from_fn(80, 7, |i, k| x[(i, k)] - x[(i, k + 3)] + 0.1 * rng.random::<f64>());
        let fit = lasso_fit(&x, &y, lambda, &LassoOptions::default()).unwrap();
        assert!(fit.converged);
        for h in &fit.objective_history {
            for w in h.windows(2) {
                // summation rounding bound for evaluating the objective
                assert!(w[1] <= w[0] * (1.0 + 91.0 * f64::EPSILON), "{} -> {}", w[0], w[1]);
            }
        }
    }
}

#[test]
fn independent_columns_have_small_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10_000;
    let data = DMatrix::from_fn(n, 4, |_, _| StandardNormal.sample(&mut rng));
    let p = fit_gaussian_prior(&data).unwrap();
    let bound = 5.0 / (n as f64).sqrt();
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                assert!(p.sigma[i][j].abs() < bound);
            }
        }
    }
}

#[test]
fn backprop_matches_central_differences() {
    let mut sizes = vec![7];
    sizes.extend(MLP_HIDDEN);
    sizes.push(11);
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 40);
        let net = Mlp::new(&sizes, seed).unwrap();
        let x = DMatrix::from_fn(16, 7, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y = DMatrix::from_fn(16, 11, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let err = net.gradient_check(&x, &y, 20, 1e-5, seed).unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn mlp_training_reduces_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = DMatrix::from_fn(64, 3, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let y = DMatrix::from_fn(64, 2, |i, k| 0.5 * x[(i, k)] - 0.3 * x[(i, 2)]);
    let mut net = Mlp::new(&[3, 8, 2], 1).unwrap();
    let start = net.loss(&x, &y).unwrap();
    let history = net
        .fit(
            &x,
            &y,
            &MlpOptions {
                epochs: 200,
                batch_size: 16,
                learning_rate: 1e-2,
                seed: 2,
            },
        )
        .unwrap();
    assert!(*history.last().unwrap() < 0.05 * start);
}

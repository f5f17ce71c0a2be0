mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use saabo::gp::{fit_mle, kernel_eval, log_marginal_likelihood, Dataset, FitConfig, GpModel, KernelParams};
use saabo::linalg::root_decomposition;

fn oracle_root(cov: &DMatrix<f64>) -> DMatrix<f64> {
    nalgebra::Cholesky::new(cov.clone()).expect("SPD").l()
}

#[test]
fn matern_unit_distance() {
    let p = KernelParams::new(1);
    let v = kernel_eval(&[0.0], &[1.0], &p).unwrap();
    let s5 = 5f64.sqrt();
    assert!((v - (1.0 + s5 + 5.0 / 3.0) * (-s5).exp()).abs() < 1e-14);
    assert!((v - 0.52399).abs() < 1e-5);
    assert_eq!(kernel_eval(&[0.3, 0.2], &[0.3, 0.2], &p_2(2.5)).unwrap(), 2.5);
    assert!(kernel_eval(&[0.0], &[f64::NAN], &p).is_err());
}

fn p_2(s: f64) -> KernelParams {
    KernelParams {
        outputscale: s,
        ..KernelParams::new(2)
    }
}

#[test]
fn noiseless_interpolation() {
    let mut r = rng(1);
    let x = uniform_x(&mut r, 6, 2);
    let y = surface(&x, 0);
    let gp = GpModel::new(x.clone(), y.clone(), Some(DVector::zeros(6)), p_2(1.0)).unwrap();
    for i in 0..6 {
        let post = gp.posterior(&x.rows(i, 1).into_owned(), false).unwrap();
        assert!((post.mean[0] - y[i]).abs() < 1e-6);
        assert!(post.cov[(0, 0)] <= 1e-8);
    }
}

#[test]
fn prior_posterior() {
    let p = KernelParams {
        mean_const: 0.4,
        ..p_2(1.7)
    };
    let gp = GpModel::prior(2, p.clone()).unwrap();
    let x = uniform_x(&mut rng(2), 4, 2);
    let post = gp.posterior(&x, false).unwrap();
    for i in 0..4 {
        assert_eq!(post.mean[i], 0.4);
        for j in 0..4 {
            let k = kernel_eval(x.row(i).transpose().as_slice(), x.row(j).transpose().as_slice(), &p).unwrap();
            assert!((post.cov[(i, j)] - k).abs() < 1e-14);
        }
    }
}

#[test]
fn single_point_conditioning() {
    let p = KernelParams {
        lengthscales: vec![0.7],
        outputscale: 1.3,
        mean_const: 0.2,
        noise_var_hom: 0.05,
    };
    let x1 = 0.25;
    let y1 = 1.1;
    let gp = GpModel::new(DMatrix::from_element(1, 1, x1), DVector::from_element(1, y1), None, p.clone()).unwrap();
    for xs in [0.0, 0.3, 0.9] {
        let k = kernel_eval(&[xs], &[x1], &p).unwrap();
        let denom = 1.3 + 0.05;
        let mean = 0.2 + k / denom * (y1 - 0.2);
        let var = 1.3 - k * k / denom;
        let post = gp.posterior(&DMatrix::from_element(1, 1, xs), false).unwrap();
        assert!((post.mean[0] - mean).abs() < 1e-10);
        assert!((post.cov[(0, 0)] - var).abs() < 1e-10);
    }
}

#[test]
fn observation_noise_adds_diagonal() {
    let gp = random_model(3, 9, 0, 3);
    let x = uniform_x(&mut rng(4), 5, 3);
    let f = gp.posterior(&x, false).unwrap();
    let y = gp.posterior(&x, true).unwrap();
    assert!(y.includes_observation_noise && !f.includes_observation_noise);
    for i in 0..5 {
        for j in 0..5 {
            let noise = if i == j { gp.params().noise_var_hom } else { 0.0 };
            assert_eq!(y.cov[(i, j)], f.cov[(i, j)] + noise);
        }
    }
}

#[test]
fn posterior_covariance_is_psd_and_symmetric() {
    let gp = random_model(2, 12, 0, 5);
    let x = uniform_x(&mut rng(6), 8, 2);
    let post = gp.posterior(&x, false).unwrap();
    assert!((&post.cov - post.cov.transpose()).amax() <= 1e-12);
    let eig = post.cov.clone().symmetric_eigenvalues();
    let tr = post.cov.trace();
    assert!(eig.iter().all(|e| *e >= -1e-8 * tr));
}

#[test]
fn root_decomposition_cases() {
    let i = DMatrix::<f64>::identity(3, 3);
    assert_eq!(root_decomposition(&i).unwrap(), i);
    let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
    assert_eq!(root_decomposition(&d).unwrap(), DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])));
    let mut r = rng(7);
    let a = DMatrix::from_fn(5, 5, |_, _| r.random_range(-1.0..1.0));
    let s = &a * a.transpose();
    let l = root_decomposition(&s).unwrap();
    assert!((&l * l.transpose() - &s).norm() / s.norm() < 1e-10);
    let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
    assert!(root_decomposition(&bad).is_err());
}

#[test]
fn posterior_gradients_match_finite_differences() {
    let gp = random_model(2, 10, 0, 8);
    let mut r = rng(9);
    for _ in 0..5 {
        let x = uniform_x(&mut r, 2, 2);
        let (_, jac) = gp.posterior_with_grad(&x).unwrap();
        let h = 1e-5;
        for a in 0..2 {
            for k in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[(a, k)] += h;
                xm[(a, k)] -= h;
                let pp = gp.posterior(&xp, false).unwrap();
                let pm = gp.posterior(&xm, false).unwrap();
                let lp = oracle_root(&pp.cov);
                let lm = oracle_root(&pm.cov);
                for i in 0..2 {
                    let fd = (pp.mean[i] - pm.mean[i]) / (2.0 * h);
                    assert!((jac.mean_grad(i, a, k) - fd).abs() <= 1e-5 * fd.abs().max(1e-3));
                    for c in 0..=i {
                        let fd = (lp[(i, c)] - lm[(i, c)]) / (2.0 * h);
                        assert!(
                            (jac.root_grad(i, c, a, k) - fd).abs() <= 1e-5 * fd.abs().max(1e-3),
                            "L[{i},{c}] wrt x[{a},{k}]: {} vs {fd}",
                            jac.root_grad(i, c, a, k)
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn prior_gradients_vanish_and_duplicates_are_symmetric() {
    let gp = GpModel::prior(2, p_2(1.0)).unwrap();
    let x = DMatrix::from_row_slice(1, 2, &[0.3, 0.7]);
    let (_, jac) = gp.posterior_with_grad(&x).unwrap();
    for k in 0..2 {
        assert_eq!(jac.mean_grad(0, 0, k), 0.0);
        assert!(jac.root_grad(0, 0, 0, k).abs() < 1e-12);
    }
    let gp = random_model(2, 8, 0, 3);
    let x = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.3, 0.7]);
    let (_, jac) = gp.posterior_with_grad(&x).unwrap();
    for k in 0..2 {
        assert!((jac.mean_grad(0, 0, k) - jac.mean_grad(1, 1, k)).abs() < 1e-12);
    }
}

#[test]
fn fantasies_match_rebuilt_models() {
    for seed in 0..10 {
        let gp = random_model(2, 7, 0, seed);
        let mut r = rng(seed + 100);
        let x = uniform_x(&mut r, 2, 2);
        let e = DMatrix::from_fn(3, 2, |_, _| r.random_range(-2.0..2.0));
        let fants = gp.fantasize(&x, &e).unwrap();
        let post = gp.posterior(&x, true).unwrap();
        let l = oracle_root(&post.cov);
        let q_pts = uniform_x(&mut r, 4, 2);
        for (i, f) in fants.iter().enumerate() {
            let yi = &post.mean + &l * e.row(i).transpose();
            let data = gp.dataset().append(&x, &DMatrix::from_column_slice(2, 1, yi.as_slice()), None).unwrap();
            let rebuilt = GpModel::from_dataset(&data, gp.params().clone()).unwrap();
            let a = f.posterior(&q_pts, false).unwrap();
            let b = rebuilt.posterior(&q_pts, false).unwrap();
            assert!((&a.mean - &b.mean).amax() < 1e-10);
            assert!((&a.cov - &b.cov).amax() < 1e-10);
        }
    }
}

#[test]
fn fantasy_covariance_ignores_base_sample() {
    let gp = random_model(2, 7, 0, 4);
    let x = uniform_x(&mut rng(1), 2, 2);
    let e = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.5, -0.7]);
    let fants = gp.fantasize(&x, &e).unwrap();
    let q_pts = uniform_x(&mut rng(2), 5, 2);
    let a = fants[0].posterior(&q_pts, false).unwrap();
    let b = fants[1].posterior(&q_pts, false).unwrap();
    assert!((&a.cov - &b.cov).amax() <= 1e-12);
    let cur = gp.posterior(&q_pts, false).unwrap();
    for i in 0..5 {
        assert!(a.cov[(i, i)] <= cur.cov[(i, i)] + 1e-10);
    }
    // zero base sample conditions on the current posterior mean
    let mean_now = gp.posterior_mean(&x).unwrap();
    let data = gp.dataset().append(&x, &DMatrix::from_column_slice(2, 1, mean_now.as_slice()), None).unwrap();
    let rebuilt = GpModel::from_dataset(&data, gp.params().clone()).unwrap();
    assert!((&a.mean - rebuilt.posterior_mean(&q_pts).unwrap()).amax() < 1e-10);
}

#[test]
fn huge_noise_point_is_ignored() {
    let mut r = rng(3);
    let x = uniform_x(&mut r, 6, 2);
    let y = surface(&x, 0);
    let nv = DVector::from_element(6, 1e-3);
    let gp = GpModel::new(x.clone(), y.clone(), Some(nv.clone()), p_2(1.0)).unwrap();
    let xn = uniform_x(&mut r, 1, 2);
    let data = gp
        .dataset()
        .append(&xn, &DMatrix::from_element(1, 1, 5.0), Some(&DMatrix::from_element(1, 1, 1e12)))
        .unwrap();
    let gp2 = GpModel::from_dataset(&data, p_2(1.0)).unwrap();
    let q = uniform_x(&mut r, 4, 2);
    let a = gp.posterior(&q, false).unwrap();
    let b = gp2.posterior(&q, false).unwrap();
    assert!((&a.mean - &b.mean).amax() <= 1e-4 * a.mean.amax());
    assert!((&a.cov - &b.cov).amax() <= 1e-4 * a.cov.amax());
}

#[test]
fn lml_single_point() {
    let p = KernelParams {
        mean_const: 0.3,
        noise_var_hom: 0.1,
        ..KernelParams::new(1)
    };
    let gp = GpModel::new(DMatrix::from_element(1, 1, 0.5), DVector::from_element(1, 0.3), None, p).unwrap();
    let (v, _) = log_marginal_likelihood(&gp).unwrap();
    assert!((v + 0.5 * (2.0 * std::f64::consts::PI * 1.1).ln()).abs() < 1e-12);
}

fn sample_gp(d: usize, n: usize, ls: f64, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let x = uniform_x(&mut r, n, d);
    let p = KernelParams {
        lengthscales: vec![ls; d],
        ..KernelParams::new(d)
    };
    let gp = GpModel::prior(d, p).unwrap();
    let mut cov = gp.posterior(&x, false).unwrap().cov;
    for i in 0..n {
        cov[(i, i)] += 1e-8;
    }
    let l = oracle_root(&cov);
    let z = DVector::from_fn(n, |_, _| {
        let u: f64 = r.random_range(1e-12..1.0);
        let v: f64 = r.random();
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    });
    Dataset::single(x, l * z, None).unwrap()
}

#[test]
fn fit_recovers_lengthscale() {
    let data = sample_gp(1, 50, 0.2, 11);
    let cfg = FitConfig {
        input_bounds: Some(vec![(0.0, 1.0)]),
        ..FitConfig::default()
    };
    let gp = fit_mle(&data, &cfg).unwrap();
    let ls = gp.params().lengthscales[0];
    assert!(ls > 0.1 && ls < 0.4, "lengthscale {ls}");
}

#[test]
fn fit_is_row_permutation_invariant() {
    let data = sample_gp(2, 20, 0.4, 12);
    let n = data.n();
    let perm: Vec<usize> = (0..n).rev().collect();
    let x = DMatrix::from_fn(n, 2, |i, k| data.x()[(perm[i], k)]);
    let y = DMatrix::from_fn(n, 1, |i, _| data.y()[(perm[i], 0)]);
    let shuffled = Dataset::new(x, y, None).unwrap();
    let cfg = FitConfig {
        num_restarts: 3,
        ..FitConfig::default()
    };
    let a = fit_mle(&data, &cfg).unwrap();
    let b = fit_mle(&shuffled, &cfg).unwrap();
    let pa = a.params();
    let pb = b.params();
    for (u, v) in pa.lengthscales.iter().zip(&pb.lengthscales) {
        assert!((u - v).abs() <= 1e-8 * u.abs());
    }
    assert!((pa.outputscale - pb.outputscale).abs() <= 1e-8 * pa.outputscale);
    let la = log_marginal_likelihood(&a).unwrap().0;
    let lb = log_marginal_likelihood(&b).unwrap().0;
    assert!((la - lb).abs() <= 1e-8 * la.abs());
}

use approx::assert_relative_eq;
use hetfield::field::{GpFieldModel, KernelSpec, LgpEnergyModel, LinkFunction, Location};
use hetfield::moments::assemble_moments;
use hetfield::sblue::{predict, predictive_mse, reconstruct_grid, rmse, rse_map, Estimator, GridSpec};
use hetfield::sensors::{ObservationVector, SensorDeployment};
use hetfield::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn se() -> KernelSpec<f64> {
    KernelSpec::squared_exponential(10.0, 1.0).unwrap()
}

fn deployment(high: Vec<Location<f64>>, low: Vec<Location<f64>>, threshold: f64) -> SensorDeployment<f64> {
    SensorDeployment::new(
        high,
        low,
        threshold,
        1.0,
        GpFieldModel::new(8.0, se()).unwrap(),
        LgpEnergyModel::new(0.0, KernelSpec::squared_exponential(0.3, 1.0).unwrap()).unwrap(),
        LinkFunction::Reciprocal,
    )
    .unwrap()
}

fn random_locs(rng: &mut ChaCha8Rng, n: usize) -> Vec<Location<f64>> {
    (0..n)
        .map(|_| Location::new(rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)))
        .collect()
}

/// Textbook GP regression with Gaussian observation noise.
fn gp_regression(locs: &[Location<f64>], y: &[f64], x: &Location<f64>, mean: f64, noise_var: f64) -> (f64, f64) {
    let n = locs.len();
    let k = se();
    let gram = DMatrix::from_fn(n, n, |i, j| k.eval(&locs[i], &locs[j]) + if i == j { noise_var } else { 0.0 });
    let ks = DVector::from_fn(n, |i, _| k.eval(&locs[i], x));
    let resid = DVector::from_fn(n, |i, _| y[i] - mean);
    let lu = gram.lu();
    let alpha = lu.solve(&resid).unwrap();
    let beta = lu.solve(&ks).unwrap();
    (mean + ks.dot(&alpha), k.eval(x, x) - ks.dot(&beta))
}

#[test]
fn high_only_matches_gp_regression() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &nh in &[1usize, 5, 20] {
        for _ in 0..100 {
            let high = random_locs(&mut rng, nh);
            let x = random_locs(&mut rng, 1)[0];
            let y: Vec<f64> = (0..nh).map(|_| rng.random_range(0.0..16.0)).collect();
            let d = deployment(high.clone(), vec![], 8.0);
            let obs = ObservationVector::new(y.clone(), vec![]).center(8.0).unwrap();
            let p = predict(&assemble_moments(&d, &x).unwrap(), &obs, 8.0).unwrap();
            let (mean, var) = gp_regression(&high, &y, &x, 8.0, 1.0);
            assert_relative_eq!(p.estimate, mean, epsilon = 1e-10, max_relative = 1e-10);
            assert_relative_eq!(p.mse, var.max(0.0), epsilon = 1e-10, max_relative = 1e-10);
        }
    }
}

#[test]
fn estimator_agrees_with_direct_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = deployment(random_locs(&mut rng, 4), random_locs(&mut rng, 9), 8.5);
    let y = ObservationVector::new(
        (0..4).map(|_| rng.random_range(4.0..12.0)).collect(),
        (0..9).map(|_| rng.random_range(-2.0..12.0)).collect(),
    )
    .center(8.0)
    .unwrap();
    let est = Estimator::new(&d).unwrap();
    let cond = est.condition(&y).unwrap();
    for x in random_locs(&mut rng, 20) {
        let direct = predict(&assemble_moments(&d, &x).unwrap(), &y, 8.0).unwrap();
        let fast = cond.predict(&x);
        assert_relative_eq!(direct.estimate, fast.estimate, epsilon = 1e-9);
        assert_relative_eq!(direct.mse, fast.mse, epsilon = 1e-9);
        assert_relative_eq!(est.predictive_mse(&x), fast.mse, epsilon = 1e-12);
    }
}

#[test]
fn uncentered_input_is_rejected() {
    let d = deployment(vec![Location::new(1.0, 1.0)], vec![], 8.0);
    let ms = assemble_moments(&d, &Location::new(2.0, 2.0)).unwrap();
    let raw = ObservationVector::new(vec![9.0], vec![]);
    assert!(matches!(predict(&ms, &raw, 8.0), Err(Error::NotCentered)));
    assert!(matches!(raw.center(8.0).unwrap().center(8.0), Err(Error::DoubleCentering)));
}

#[test]
fn grid_errors_against_truth() {
    let d = deployment(vec![Location::new(1.0, 1.0), Location::new(4.0, 3.0)], vec![Location::new(2.0, 2.0)], 8.0);
    let obs = ObservationVector::new(vec![9.0, 7.5], vec![10.0]);
    let spec = GridSpec::new((0.0, 5.0), 6, (0.0, 5.0), 4).unwrap();
    let grid = reconstruct_grid(&d, &obs, &spec).unwrap();
    assert_eq!(rmse(&grid, &grid.estimates).unwrap(), 0.0);
    let mut shifted = grid.estimates.clone();
    for i in 0..shifted.rows() {
        for j in 0..shifted.cols() {
            shifted[(i, j)] += 1.5;
        }
    }
    assert_relative_eq!(rmse(&grid, &shifted).unwrap(), 1.5, epsilon = 1e-12);
    assert!(rse_map(&grid, &shifted).unwrap().as_slice().iter().all(|v| (v - 1.5).abs() < 1e-12));
    let wrong = hetfield::Matrix64::zeros(3, 3);
    assert!(matches!(rmse(&grid, &wrong), Err(Error::ShapeMismatch { .. })));
}

fn arb_case() -> impl Strategy<Value = (u64, usize, usize, f64)> {
    (any::<u64>(), 0usize..6, 0usize..10, prop_oneof![Just(-7.81), Just(8.0), Just(11.16), Just(14.32)])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn mse_within_prior_bounds((seed, nh, nl, t) in arb_case()) {
        prop_assume!(nh + nl > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = deployment(random_locs(&mut rng, nh), random_locs(&mut rng, nl), t);
        let x = random_locs(&mut rng, 1)[0];
        let mse = predictive_mse(&assemble_moments(&d, &x).unwrap()).unwrap();
        prop_assert!((0.0..=10.0 + 1e-9).contains(&mse), "mse {mse}");
    }

    #[test]
    fn appending_high_sensor_never_hurts((seed, nh, nl, t) in arb_case()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let high = random_locs(&mut rng, nh);
        let low = random_locs(&mut rng, nl);
        let x = random_locs(&mut rng, 1)[0];
        let extra = random_locs(&mut rng, 1)[0];
        let before = if nh + nl == 0 {
            10.0
        } else {
            predictive_mse(&assemble_moments(&deployment(high.clone(), low.clone(), t), &x).unwrap()).unwrap()
        };
        let mut more = high;
        more.push(extra);
        let after = predictive_mse(&assemble_moments(&deployment(more, low, t), &x).unwrap()).unwrap();
        prop_assert!(after <= before + 1e-9, "{after} > {before}");
    }

    #[test]
    fn prediction_is_affine_in_observations((seed, nh, nl, t) in arb_case()) {
        prop_assume!(nh + nl > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = deployment(random_locs(&mut rng, nh), random_locs(&mut rng, nl), t);
        let ms = assemble_moments(&d, &random_locs(&mut rng, 1)[0]).unwrap();
        let draw = |rng: &mut ChaCha8Rng| {
            let mut v = ObservationVector::new(
                (0..nh).map(|_| rng.random_range(-5.0..5.0)).collect(),
                (0..nl).map(|_| rng.random_range(-5.0..5.0)).collect(),
            );
            v.centered = true;
            v
        };
        let (y1, y2) = (draw(&mut rng), draw(&mut rng));
        let mut sum = y1.clone();
        sum.y_high.iter_mut().zip(&y2.y_high).for_each(|(a, b)| *a += b);
        sum.y_low.iter_mut().zip(&y2.y_low).for_each(|(a, b)| *a += b);
        let mut zero = y1.clone();
        zero.y_high.iter_mut().chain(zero.y_low.iter_mut()).for_each(|v| *v = 0.0);
        let p = |y: &ObservationVector<f64>| predict(&ms, y, 8.0).unwrap().estimate - 8.0;
        let lhs = p(&sum);
        let rhs = p(&y1) + p(&y2) - p(&zero);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()) * 100.0, "{lhs} vs {rhs}");
        if nl == 0 {
            prop_assert!(p(&zero).abs() < 1e-12);
        }
    }
}

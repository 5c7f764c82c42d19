use hetfield::field::{
    covariance_matrix, kernel_eval, noise_variance_expectation, sample_gp, GpFieldModel, GpSampler, KernelSpec,
    LgpEnergyModel, LinkFunction, Location,
};
use hetfield::oracle::RunningMoments;
use hetfield::sensors::{observe_high, observe_low, SensorDeployment};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn kernels() -> Vec<KernelSpec<f64>> {
    vec![
        KernelSpec::squared_exponential(10.0, 1.0).unwrap(),
        KernelSpec::squared_exponential(0.3, 0.2).unwrap(),
        KernelSpec::separable_exponential(0.1, 0.5, 10.0, 0.1).unwrap(),
    ]
}

#[test]
fn empirical_covariance_matches_kernel() {
    let a = Location::new(1.0, 2.0);
    let b = Location::new(1.6, 2.3);
    for k in kernels() {
        let sampler = GpSampler::new(3.0, &k, &[a, b]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut var_a = RunningMoments::default();
        let mut cross = RunningMoments::default();
        for _ in 0..100_000 {
            let v = sampler.sample(&mut rng);
            let (da, db) = (v[0] - 3.0, v[1] - 3.0);
            var_a.push(da * da);
            cross.push(da * db);
        }
        let check = |m: &RunningMoments, want: f64| {
            assert!((m.mean() - want).abs() <= 4.0 * m.std_error(), "{} vs {want} (se {})", m.mean(), m.std_error());
        };
        check(&var_a, kernel_eval(&k, &a, &a));
        check(&cross, kernel_eval(&k, &a, &b));
    }
}

#[test]
fn link_expectations_match_simulation() {
    let energy = LgpEnergyModel::new(0.5, KernelSpec::squared_exponential(0.3, 1.0).unwrap()).unwrap();
    let x = Location::new(0.0, 0.0);
    let sampler = GpSampler::for_energy(&energy, &[x]).unwrap();
    for link in [LinkFunction::Reciprocal, LinkFunction::ReciprocalSquare, LinkFunction::ExpNegative] {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut m = RunningMoments::default();
        for _ in 0..200_000 {
            m.push(link.apply(sampler.sample_exp(&mut rng)[0]));
        }
        let want = noise_variance_expectation(&energy, link, &x);
        assert!((m.mean() - want).abs() <= 4.0 * m.std_error(), "{link:?}: {} vs {want}", m.mean());
    }
}

#[test]
fn low_sensor_switches_at_threshold() {
    let d = SensorDeployment::new(
        vec![Location::new(0.0, 0.0)],
        vec![Location::new(1.0, 1.0), Location::new(2.0, 2.0), Location::new(3.0, 3.0)],
        8.0,
        1e-9,
        GpFieldModel::new(8.0, KernelSpec::squared_exponential(10.0, 1.0).unwrap()).unwrap(),
        LgpEnergyModel::new(40.0, KernelSpec::squared_exponential(1e-6, 1.0).unwrap()).unwrap(),
        LinkFunction::ExpNegative,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y = observe_low(&[7.5, 8.0, 9.0], &[1e6, 1e6, 1e6], &d, &mut rng).unwrap();
    assert_eq!(y, vec![0.0, 8.0, 9.0]);
    let h: Vec<f64> = observe_high(&[4.0], &d, &mut rng).unwrap();
    assert!((h[0] - 4.0).abs() < 1e-6);
    assert!(observe_low(&[1.0], &[1.0], &d, &mut rng).is_err());
}

fn arb_locs() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0..5.0f64, 0.0..5.0f64), 1..64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernel_symmetric_with_positive_diagonal(ax in -9.0..9.0f64, ay in -9.0..9.0f64, bx in -9.0..9.0f64, by in -9.0..9.0f64) {
        let (a, b) = (Location::new(ax, ay), Location::new(bx, by));
        for k in kernels() {
            prop_assert_eq!(kernel_eval(&k, &a, &b), kernel_eval(&k, &b, &a));
            prop_assert!(kernel_eval(&k, &a, &a) > 0.0);
        }
    }

    #[test]
    fn covariance_is_positive_semidefinite(pts in arb_locs()) {
        // keep points at least 0.05 apart
        let mut locs: Vec<Location<f64>> = Vec::new();
        for (x, y) in pts {
            let l = Location::new(x, y);
            if locs.iter().all(|o| o.distance_sq(&l) >= 0.0025) {
                locs.push(l);
            }
        }
        for k in kernels() {
            let c = covariance_matrix(&k, &locs);
            let n = locs.len();
            let m = DMatrix::from_fn(n, n, |i, j| c[(i, j)]);
            let min = m.symmetric_eigen().eigenvalues.min();
            prop_assert!(min >= -1e-10, "min eigenvalue {min}");
        }
    }

    #[test]
    fn sampling_is_reproducible(seed in any::<u64>(), n in 1usize..20) {
        let mut g = ChaCha8Rng::seed_from_u64(seed);
        let locs: Vec<Location<f64>> = (0..n).map(|_| Location::new(g.random_range(0.0..5.0), g.random_range(0.0..5.0))).collect();
        let model = GpFieldModel::new(8.0, KernelSpec::squared_exponential(10.0, 1.0).unwrap()).unwrap();
        let a = sample_gp(&model, &locs, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = sample_gp(&model, &locs, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

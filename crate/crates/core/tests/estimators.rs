use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qdmd::dmd::{self, RankRule, SnapshotPair};
use qdmd::quantizer::{DitherStream, QuantizerSpec};
use qdmd::systems::{self, SystemSpec, TrajectoryConfig};

fn random_pair(rng: &mut ChaCha8Rng, n: usize, t: usize) -> SnapshotPair {
    let phi = DMatrix::from_fn(n, t, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let phi_prime = DMatrix::from_fn(n, t, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    SnapshotPair::new(phi, phi_prime).unwrap()
}

#[test]
fn sampled_linear_flow_gives_matrix_exponential() {
    let a = DMatrix::from_row_slice(3, 3, &[-0.1, 1.0, 0.0, -1.0, -0.1, 0.0, 0.0, 0.0, -0.5]);
    let cfg = TrajectoryConfig::new(0.1, 5.0).with_x0(vec![1.0, 0.5, -1.0]);
    let traj = systems::simulate(&SystemSpec::linear(&a), &cfg).unwrap();
    let pair = dmd::build_snapshots(&traj).unwrap();
    let k = dmd::dmd_full(&pair, None).unwrap().k;
    let expected = (&a * 0.1).exp();
    // RK4 at h = 0.01 is accurate to ~1e-12 per step
    assert!((&k - &expected).norm() / expected.norm() < 1e-9);

    let reduced = dmd::dmd_reduced(&pair, RankRule::Fixed(3)).unwrap();
    let mut mags: Vec<f64> = reduced.eigenvalues.iter().map(|l| l.norm()).collect();
    mags.sort_by(f64::total_cmp);
    assert!((mags[0] - (-0.05f64).exp()).abs() < 1e-9);
    assert!((mags[2] - (-0.01f64).exp()).abs() < 1e-9);
}

#[test]
fn full_and_reduced_predictions_agree_at_full_rank() {
    let a = DMatrix::from_row_slice(2, 2, &[0.95, 0.2, -0.2, 0.95]);
    let mut traj = DMatrix::zeros(2, 30);
    traj.set_column(0, &DVector::from_vec(vec![1.0, 0.0]));
    for t in 1..30 {
        let next = &a * traj.column(t - 1);
        traj.set_column(t, &next);
    }
    let pair = dmd::build_snapshots(&traj).unwrap();
    let x0 = traj.column(0).into_owned();
    let full = dmd::predict_full(&dmd::dmd_full(&pair, None).unwrap(), &x0, 40).unwrap();
    let reduced = dmd::predict_reduced(&dmd::dmd_reduced(&pair, RankRule::Fixed(2)).unwrap(), &x0, 40).unwrap();
    assert!((&full - &reduced.states).norm() < 1e-10 * full.norm());
    assert!(reduced.max_imaginary_residue < 1e-12);
    // rollout reproduces the recorded trajectory
    assert!((full.columns(0, 30) - &traj).norm() < 1e-12);
}

#[test]
fn ridge_tends_to_least_squares_for_full_row_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pair = random_pair(&mut rng, 4, 40);
    let ls = dmd::dmd_full(&pair, None).unwrap().k;
    let small = dmd::ridge_dmd(&pair, 1e-12).unwrap();
    assert!((&small - &ls).norm() < 1e-9 * ls.norm());
    // heavier penalty shrinks the estimate
    let heavy = dmd::ridge_dmd(&pair, 10.0).unwrap();
    assert!(heavy.norm() < ls.norm());
}

#[test]
fn recovery_is_ridge_with_negative_penalty() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pair = random_pair(&mut rng, 3, 500);
    let eps = 0.125;
    let rec = dmd::recover_regularized(&pair, eps).unwrap();
    assert!(!rec.guarded);
    assert_eq!(rec.gamma, -eps * eps / 12.0);
    let ridge = dmd::ridge_dmd(&pair, rec.gamma).unwrap();
    assert!((&rec.k - &ridge).norm() < 1e-12 * ridge.norm());
}

#[test]
fn recovery_guard_trips_for_coarse_resolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pair = random_pair(&mut rng, 3, 500);
    // lambda_min / T is about 1/3 for uniform [-1, 1] data
    let rec = dmd::recover_regularized(&pair, 4.0).unwrap();
    assert!(rec.guarded);
    assert!((rec.gamma + 0.5 * rec.lambda_min_over_t).abs() < 1e-15);
    assert!(matches!(
        dmd::ridge_dmd(&pair, -2.0 * rec.lambda_min_over_t),
        Err(qdmd::Error::NonConvex { .. })
    ));
}

#[test]
fn quantized_pendulum_recovery_beats_plain_estimate() {
    // raw pendulum state, mapped into (-1, 1)
    let traj = systems::simulate(&SystemSpec::NegDampedPendulum, &TrajectoryConfig::new(0.1, 300.0)).unwrap();
    let map = qdmd::preprocessing::fit_affine(&traj, -1.0, 1.0, 0.0625).unwrap();
    let pair = dmd::build_snapshots(&map.apply(&traj)).unwrap();
    let k = dmd::dmd_full(&pair, None).unwrap().k;
    let q = QuantizerSpec::new(-1.0, 1.0, 4).unwrap();
    let (mut plain, mut rec) = (0.0, 0.0);
    for seed in 0..10 {
        let phi = q.quantize_matrix(pair.phi(), &mut DitherStream::substream(seed, 0)).matrix;
        let phi_prime = q.quantize_matrix(pair.phi_prime(), &mut DitherStream::substream(seed, 1)).matrix;
        let qpair = SnapshotPair::new(phi, phi_prime).unwrap();
        plain += (dmd::dmd_full(&qpair, None).unwrap().k - &k).norm();
        let r = dmd::recover_regularized(&qpair, q.resolution()).unwrap();
        assert!(!r.guarded);
        rec += (r.k - &k).norm();
    }
    assert!(rec < plain, "recovered {rec} vs plain {plain}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn full_dmd_solves_normal_equations(seed in any::<u64>(), n in 1usize..6, extra in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pair = random_pair(&mut rng, n, n + extra);
        let k = dmd::dmd_full(&pair, None).unwrap().k;
        // K Phi Phi^T = Phi' Phi^T
        let lhs = &k * pair.phi() * pair.phi().transpose();
        let rhs = pair.phi_prime() * pair.phi().transpose();
        prop_assert!((&lhs - &rhs).norm() <= 1e-9 * rhs.norm().max(1.0));
    }

    #[test]
    fn ridge_gradient_vanishes(seed in any::<u64>(), gamma in 1e-3f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pair = random_pair(&mut rng, 3, 12);
        let a = dmd::ridge_dmd(&pair, gamma).unwrap();
        let t = pair.snapshots() as f64;
        // d/dA: -(2/T)(Phi' - A Phi) Phi^T + 2 gamma A = 0
        let grad = -(pair.phi_prime() - &a * pair.phi()) * pair.phi().transpose() / t + &a * gamma;
        prop_assert!(grad.norm() <= 1e-10 * (1.0 + a.norm()));
    }

    #[test]
    fn reduced_operator_is_projection_of_full(seed in any::<u64>(), r in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pair = random_pair(&mut rng, 4, 25);
        let full = dmd::dmd_full(&pair, None).unwrap().k;
        let red = dmd::dmd_reduced(&pair, RankRule::Fixed(r)).unwrap();
        // with full row rank, U_r^T K U_r = K_r
        let proj = red.u.transpose() * &full * &red.u;
        prop_assert!((&proj - &red.k_r).norm() <= 1e-9 * (1.0 + red.k_r.norm()));
    }
}

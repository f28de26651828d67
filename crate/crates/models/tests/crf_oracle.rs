//! Mean-field inference against hand-rolled message computations.

use postdae_core::{GrayImage, ProbabilityMap};
use postdae_models::crf::{meanfield, run_crf_meanfield, unary_from_prob, DenseCrfParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_problem(rng: &mut ChaCha8Rng, n: usize) -> (GrayImage, ProbabilityMap) {
    let image = GrayImage::new(n, n, (0..n * n).map(|_| rng.random_range(0..=255) as f32 / 255.0).collect()).unwrap();
    let prob = ProbabilityMap::new(n, n, (0..n * n).map(|_| rng.random_range(0.0..=1.0)).collect()).unwrap();
    (image, prob)
}

#[test]
fn zero_pairwise_weights_reduce_to_unary_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = DenseCrfParams {
        w_appearance: 0.0,
        w_smoothness: 0.0,
        iterations: 7,
        ..DenseCrfParams::default()
    };
    for _ in 0..100 {
        let (image, prob) = random_problem(&mut rng, 16);
        let u = unary_from_prob(&prob, 1e-6);
        assert_eq!(run_crf_meanfield(&image, &u, &params).unwrap(), u.argmax());
    }
}

#[test]
fn first_update_matches_hand_computation_on_3x3() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let (image, prob) = random_problem(&mut rng, 3);
        let params = DenseCrfParams {
            w_appearance: rng.random_range(0.1..3.0),
            w_smoothness: rng.random_range(0.1..3.0),
            theta_alpha: rng.random_range(0.5..20.0),
            theta_beta: rng.random_range(1.0..40.0),
            theta_gamma: rng.random_range(0.5..5.0),
            iterations: 1,
            ..DenseCrfParams::default()
        };
        let u = unary_from_prob(&prob, params.unary_epsilon);
        let q = meanfield(&image, &u, &params, |_, _| {}).unwrap();

        let inten: Vec<f64> = image.values.iter().map(|&v| (v as f64 * 255.0).round()).collect();
        let q0: Vec<(f64, f64)> = (0..9)
            .map(|i| {
                let (eb, ef) = ((-u.background[i]).exp(), (-u.foreground[i]).exp());
                (eb / (eb + ef), ef / (eb + ef))
            })
            .collect();
        for i in 0..9 {
            let (mut m_bg, mut m_fg) = (0.0, 0.0);
            for j in 0..9 {
                if j == i {
                    continue;
                }
                let dy = (i / 3) as f64 - (j / 3) as f64;
                let dx = (i % 3) as f64 - (j % 3) as f64;
                let d2 = dx * dx + dy * dy;
                let di = inten[i] - inten[j];
                let k = params.w_appearance
                    * (-d2 / (2.0 * params.theta_alpha * params.theta_alpha)
                        - di * di / (2.0 * params.theta_beta * params.theta_beta))
                        .exp()
                    + params.w_smoothness * (-d2 / (2.0 * params.theta_gamma * params.theta_gamma)).exp();
                m_bg += k * q0[j].0;
                m_fg += k * q0[j].1;
            }
            // Potts: cost of a label grows with the neighbours' mass on the other label
            let e_bg = (-u.background[i] - m_fg).exp();
            let e_fg = (-u.foreground[i] - m_bg).exp();
            let want_fg = e_fg / (e_bg + e_fg);
            assert!((q[i][1] - want_fg).abs() < 1e-9, "pixel {i}: {} vs {want_fg}", q[i][1]);
            assert!((q[i][0] - (1.0 - want_fg)).abs() < 1e-9);
        }
    }
}

#[test]
fn beliefs_sum_to_one_after_every_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = DenseCrfParams {
        iterations: 10,
        ..DenseCrfParams::default()
    };
    for _ in 0..10 {
        let (image, prob) = random_problem(&mut rng, 12);
        let u = unary_from_prob(&prob, 1e-6);
        let mut iterations = 0;
        meanfield(&image, &u, &params, |_, q| {
            iterations += 1;
            for b in q {
                assert!((b[0] + b[1] - 1.0).abs() < 1e-12);
                assert!(b.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        })
        .unwrap();
        assert_eq!(iterations, 10);
    }
}

use num_complex::Complex64;
use proptest::prelude::*;

use opinionxf::config::RunConfig;
use opinionxf::evaluation::{macro_f1, micro_accuracy, ComparisonRow, ComparisonTable};
use opinionxf::numerics::{fft, ifft, Tensor};
use opinionxf::quantum::circuit_expectation;
use opinionxf::rng::SeededRng;
use opinionxf::training::{clip_gradients, cosine_anneal_lr, EpochRecord, TrainHistory};
use opinionxf::verify::{brute_force_metrics, naive_dft};

fn signal() -> impl Strategy<Value = Vec<f64>> {
    (1usize..48).prop_flat_map(|n| prop::collection::vec(-10.0f64..10.0, n))
}

fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
    (a - b).norm() <= tol
}

/// Predictions and targets over `questions` questions with `classes` labels.
fn cells(max_questions: usize, max_classes: usize) -> impl Strategy<Value = (Vec<(usize, usize)>, Vec<(usize, usize)>, usize)> {
    (1..=max_questions, 2..=max_classes, 1usize..20).prop_flat_map(|(q, c, per)| {
        let cell = move || prop::collection::vec(0..c, q * per);
        (cell(), cell()).prop_map(move |(p, t)| {
            let tag = |xs: Vec<usize>| xs.into_iter().enumerate().map(|(i, x)| (i % q, x)).collect();
            (tag(p), tag(t), c)
        })
    })
}

proptest! {
    #[test]
    fn fft_matches_direct_dft(x in signal()) {
        let fast = fft(&x);
        let slow = naive_dft(&x);
        let scale = x.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!(close(*a, *b, 1e-10 * scale));
        }
    }

    #[test]
    fn fft_is_linear(
        (x, y) in (1usize..40).prop_flat_map(|n| (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(-5.0f64..5.0, n),
        )),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let (fx, fy, fm) = (fft(&x), fft(&y), fft(&mix));
        for k in 0..x.len() {
            prop_assert!(close(fm[k], fx[k] * a + fy[k] * b, 1e-9));
        }
    }

    #[test]
    fn parseval_and_round_trip(x in signal()) {
        let spectrum = fft(&x);
        let time: f64 = x.iter().map(|v| v * v).sum();
        let freq: f64 = spectrum.iter().map(|z| z.norm_sqr()).sum::<f64>() / x.len() as f64;
        prop_assert!((time - freq).abs() <= 1e-9 * time.max(1.0));
        let back = ifft(&spectrum).unwrap();
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn quantum_expectation_is_product_of_cosines(t1 in -20.0f64..20.0, t2 in -20.0f64..20.0) {
        let e = circuit_expectation(t1, t2);
        prop_assert!((e - t1.cos() * t2.cos()).abs() <= 1e-12);
        prop_assert!(e.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn metrics_match_brute_force((p, t, c) in cells(3, 5)) {
        let (f1, acc) = brute_force_metrics(&p, &t, c);
        prop_assert!((macro_f1(&p, &t).unwrap() - f1).abs() <= 1e-12);
        prop_assert!((micro_accuracy(&p, &t).unwrap() - acc).abs() <= 1e-12);
    }

    #[test]
    fn metrics_ignore_label_names((p, t, c) in cells(3, 5), seed in any::<u64>()) {
        let mut perm: Vec<usize> = (0..c).collect();
        SeededRng::new(seed).shuffle(&mut perm);
        let relabel = |xs: &[(usize, usize)]| xs.iter().map(|&(q, x)| (q, perm[x])).collect::<Vec<_>>();
        let (rp, rt) = (relabel(&p), relabel(&t));
        prop_assert!((macro_f1(&p, &t).unwrap() - macro_f1(&rp, &rt).unwrap()).abs() <= 1e-12);
        prop_assert_eq!(micro_accuracy(&p, &t).unwrap(), micro_accuracy(&rp, &rt).unwrap());
    }

    #[test]
    fn perfect_predictions_score_one((_, t, _) in cells(3, 4)) {
        prop_assert_eq!(macro_f1(&t, &t).unwrap(), 1.0);
        prop_assert_eq!(micro_accuracy(&t, &t).unwrap(), 1.0);
    }

    #[test]
    fn shuffle_is_a_permutation(n in 0usize..200, seed in any::<u64>()) {
        let mut v: Vec<usize> = (0..n).collect();
        SeededRng::new(seed).shuffle(&mut v);
        v.sort_unstable();
        prop_assert_eq!(v, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn cosine_schedule_decreases_within_bounds(total in 1usize..500, lr_max in 1e-5f64..1.0, frac in 0.0f64..1.0) {
        let lr_min = lr_max * frac;
        let mut prev = f64::INFINITY;
        for t in 0..=total {
            let lr = cosine_anneal_lr(t, total, lr_max, lr_min).unwrap();
            prop_assert!(lr <= prev + 1e-15);
            prop_assert!(lr >= lr_min - 1e-15 && lr <= lr_max + 1e-15);
            prev = lr;
        }
    }

    #[test]
    fn clipping_bounds_the_global_norm(
        data in prop::collection::vec(-100.0f64..100.0, 1..30),
        max_norm in 0.01f64..10.0,
    ) {
        let half = data.len() / 2;
        let mut grads = vec![
            Tensor::new(1, half, data[..half].to_vec()).unwrap(),
            Tensor::new(1, data.len() - half, data[half..].to_vec()).unwrap(),
        ];
        let before = clip_gradients(&mut grads, max_norm).unwrap();
        let after = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((before - data.iter().map(|v| v * v).sum::<f64>().sqrt()).abs() <= 1e-9 * before.max(1.0));
        if before > max_norm {
            prop_assert!((after - max_norm).abs() <= 1e-9 * max_norm);
        } else {
            prop_assert!((after - before).abs() <= 1e-12 * before.max(1.0));
        }
    }

    #[test]
    fn history_csv_round_trips(rows in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0, 0.0f64..1.0, 0.0f64..0.01), 0..12)) {
        let history = TrainHistory {
            epochs: rows
                .iter()
                .enumerate()
                .map(|(i, &(train_loss, val_loss, val_macro_f1, lr))| EpochRecord {
                    epoch: i + 1,
                    train_loss,
                    val_loss,
                    val_macro_f1,
                    lr,
                })
                .collect(),
        };
        prop_assert_eq!(TrainHistory::from_csv(&history.to_csv()).unwrap(), history);
    }

    #[test]
    fn comparison_csv_round_trips(rows in prop::collection::vec(("[a-z_]{1,12}", 0.0f64..1.0, 0.0f64..1.0), 1..8)) {
        let table = ComparisonTable {
            rows: rows.into_iter().map(|(m, a, f)| ComparisonRow::new(m, a, f)).collect(),
        };
        let text = table.to_csv();
        prop_assert_eq!(ComparisonTable::from_csv(&text).unwrap().to_csv(), text);
    }

    #[test]
    fn config_toml_round_trips(seed in any::<u32>(), epochs in 1usize..100, n in 5usize..5000, d in 3usize..8) {
        let mut c = RunConfig::default();
        c.set_seed(seed as u64);
        c.training.epochs = epochs;
        c.generator.n_participants = n;
        c.model.d_model = 1 << d;
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back.content_hash().unwrap(), c.content_hash().unwrap());
        prop_assert_eq!(back, c);
    }
}

use proptest::prelude::*;

use even_core::enhance::enhance_analytic;
use even_core::evaluate::{compute_metrics, sobel_image};
use even_core::events::{stack_events, synthesize_events, EventStream};
use even_core::fusion::two_way_softmax;
use even_core::synthcam::{apply_fog, apply_night};
use even_core::Tensor;
use rand::SeedableRng;

fn image(c: usize, h: usize, w: usize) -> impl Strategy<Value = Tensor<f32>> {
    prop::collection::vec(0.0f32..=1.0, c * h * w).prop_map(move |d| Tensor::from_vec(c, h, w, d).unwrap())
}

proptest! {
    #[test]
    fn softmax_pair_is_a_distribution(la in -15.0f64..15.0, lb in -15.0f64..15.0) {
        let (a, b) = two_way_softmax(la, lb);
        prop_assert!(a > 0.0 && b > 0.0 && a < 1.0 && b < 1.0);
        prop_assert!((a + b - 1.0).abs() < 1e-12);
        prop_assert_eq!(la > lb, a > b);
    }

    #[test]
    fn synthesized_events_stack_back_to_the_log_difference(
        prev in prop::collection::vec(-4.0f64..0.0, 30),
        next in prop::collection::vec(-4.0f64..0.0, 30),
        theta in 0.1f64..1.0,
    ) {
        let p = Tensor::from_vec(1, 5, 6, prev).unwrap();
        let n = Tensor::from_vec(1, 5, 6, next).unwrap();
        let stream = synthesize_events(&p, &n, theta, 0.0, 0.125).unwrap();
        let frame = stack_events(&stream, 0.125).unwrap().swap_remove(0);
        for (i, raw) in frame.raw().into_iter().enumerate() {
            let d = n.data[i] - p.data[i];
            let want = (d.abs() / theta).floor() as i64 * if d > 0.0 { 1 } else { -1 };
            prop_assert_eq!(raw, want);
        }
        prop_assert!(frame.data.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn stacking_conserves_events(seed in any::<u64>(), windows in 1usize..6) {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let t_end = 0.1 * windows as f64;
        let mut ev: Vec<_> = (0..200).map(|_| even_core::events::Event {
            x: rng.random_range(0..4),
            y: rng.random_range(0..3),
            t: rng.random_range(0.0..=t_end),
            p: if rng.random_bool(0.5) { even_core::events::Polarity::On } else { even_core::events::Polarity::Off },
        }).collect();
        ev.sort_by(|a, b| a.t.total_cmp(&b.t));
        let stream = EventStream::new(ev, (4, 3), 0.0, t_end).unwrap();
        let frames = stack_events(&stream, 0.1).unwrap();
        prop_assert_eq!(frames.len(), windows);
        prop_assert_eq!(frames.iter().map(|f| f.event_count()).sum::<u64>(), 200);
    }

    #[test]
    fn enhancement_is_bounded_and_never_darkens(img in image(3, 4, 4), gamma in 1.0f64..4.0) {
        let out = enhance_analytic(&img, gamma).unwrap();
        for (o, i) in out.data.iter().zip(&img.data) {
            prop_assert!((0.0..=1.0).contains(o));
            prop_assert!(*o >= *i - 1e-6);
        }
    }

    #[test]
    fn night_never_brightens_without_noise(img in image(3, 4, 4), gain in 0.05f64..1.0, gamma in 1.0f64..2.5) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let out = apply_night(&img, gain, gamma, 0.0, &mut rng).unwrap();
        for (o, i) in out.data.iter().zip(&img.data) {
            prop_assert!(*o <= *i + 1e-6);
        }
    }

    #[test]
    fn fog_moves_toward_airlight(img in image(3, 3, 3), depth in 2.0f32..50.0, beta in 0.0f64..0.2, air in 0.0f64..1.0) {
        let d = Tensor::filled(1, 3, 3, depth);
        let out = apply_fog(&img, &d, beta, air).unwrap();
        for (o, i) in out.data.iter().zip(&img.data) {
            let (lo, hi) = if (*i as f64) < air { (*i as f64, air) } else { (air, *i as f64) };
            prop_assert!(*o as f64 >= lo - 1e-6 && *o as f64 <= hi + 1e-6);
        }
    }

    #[test]
    fn sobel_image_is_normalized(img in image(3, 5, 5)) {
        let s = sobel_image(&img);
        prop_assert_eq!(s.shape(), (3, 5, 5));
        prop_assert!(s.data.iter().all(|v| (0.0..=1.0 + 1e-6).contains(v)));
        prop_assert_eq!(s.channel(0), s.channel(2));
    }

    #[test]
    fn perfect_prediction_scores_perfectly(gt in prop::collection::vec(2.5f64..49.0, 1..40)) {
        let n = gt.len();
        let t = Tensor::from_vec(1, 1, n, gt).unwrap();
        let m = compute_metrics(&t, &t, (2.0, 50.0)).unwrap();
        prop_assert_eq!(m.abs_rel, 0.0);
        prop_assert_eq!(m.rmse, 0.0);
        prop_assert_eq!(m.alpha1, 1.0);
        prop_assert_eq!(m.n_pixels, n as u64);
    }
}

use proptest::prelude::*;

use sparse_vq::data::{few_shot_subset, inject_noise, make_windows, RawSeries, SplitSpec};
use sparse_vq::model::{patchify, ParamStore};
use sparse_vq::revin::RevinState;
use sparse_vq::svq::{
    kmeans, nearest_codeword, sparse_reconstruct, CodebookStats, Metric, SparseRegressionConfig,
};
use sparse_vq::tensor::{Tape, Tensor};
use sparse_vq::train::{
    adam_step, compute_metrics, prediction_loss, total_loss, LossConfig, TrainState,
};

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-10.0f64..10.0, n)
        .prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

fn dims3() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..4, 1usize..8, 1usize..4)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn broadcast_add_matches_modulo(a in tensor(vec![3, 2, 4]), b in tensor(vec![2, 4])) {
        let mut tape = Tape::new();
        let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let s = tape.add(av, bv).unwrap();
        for (i, v) in tape.value(s).data().iter().enumerate() {
            prop_assert_eq!(*v, a.data()[i] + b.data()[i % 8]);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(a in tensor(vec![4, 6])) {
        let mut tape = Tape::new();
        let av = tape.constant(a);
        let s = tape.softmax(av, 1).unwrap();
        let s = tape.value(s);
        for r in 0..4 {
            let row = s.row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p > 0.0 && p <= 1.0));
        }
    }

    #[test]
    fn layernorm_standardizes(a in tensor(vec![3, 8])) {
        let mut tape = Tape::new();
        let av = tape.constant(a.clone());
        let g = tape.constant(Tensor::ones(&[8]));
        let b = tape.constant(Tensor::zeros(&[8]));
        let y = tape.layernorm(av, g, b, 1e-12).unwrap();
        let y = tape.value(y);
        for r in 0..3 {
            let spread = a.row(r).iter().fold(0.0f64, |m, v| m.max((v - a.row(r)[0]).abs()));
            prop_assume!(spread > 1e-3);
            let row = y.row(r);
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn revin_round_trip((b, l, m) in dims3(), seed in any::<u64>(), constant in any::<bool>()) {
        let l = l + 1;
        let mut rng_vals: Vec<f64> = (0..b * l * m).map(|i| ((i as u64 ^ seed).wrapping_mul(2654435761) % 1000) as f64 / 7.0 - 60.0).collect();
        if constant {
            rng_vals.iter_mut().for_each(|v| *v = 3.25);
        }
        let x = Tensor::new(vec![b, l, m], rng_vals).unwrap();
        let mut state = RevinState::new(m);
        let z = state.normalize(&x).unwrap();
        let back = state.denormalize(&z).unwrap();
        prop_assert!(back.max_abs_diff(&x) <= 1e-9);
    }

    #[test]
    fn patch_count_and_contents(len in 1usize..60, p in 1usize..12, s in 1usize..12) {
        let x: Vec<f64> = (0..len).map(|i| i as f64).collect();
        match patchify(&x, p, s) {
            Ok(t) => {
                prop_assert!(p <= len);
                let n = (len - p) / s + 1;
                prop_assert_eq!(t.shape(), &[n, p][..]);
                for i in 0..n {
                    for j in 0..p {
                        prop_assert_eq!(t.row(i)[j], (i * s + j) as f64);
                    }
                }
            }
            Err(_) => prop_assert!(p > len),
        }
    }

    #[test]
    fn perplexity_bounds(counts in prop::collection::vec(0u64..50, 1..40)) {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let stats = CodebookStats::from_counts(&counts).unwrap();
        let used = counts.iter().filter(|&&c| c > 0).count() as f64;
        prop_assert!(stats.perplexity >= 1.0 - 1e-12);
        prop_assert!(stats.perplexity <= used + 1e-9);
        prop_assert_eq!(stats.dead_count, counts.len() - used as usize);
    }

    #[test]
    fn sparse_never_worse_than_nearest(cb in tensor(vec![24, 5]), x in prop::collection::vec(-10.0f64..10.0, 5)) {
        let cfg = SparseRegressionConfig::default();
        let (_, nn) = nearest_codeword(&x, &cb, Metric::Euclidean).unwrap();
        let code = sparse_reconstruct(&x, &cb, &cfg).unwrap();
        prop_assert!(dist(&x, &code.reconstruction) <= nn + 1e-9);
        prop_assert!(code.support.len() <= cfg.max_nonzeros);
    }

    #[test]
    fn prediction_loss_is_triple_loop((b, t, m) in dims3(), seed in any::<u64>()) {
        let n = b * t * m;
        let gen = |k: u64| -> Vec<f64> { (0..n).map(|i| (((i as u64 + k) ^ seed).wrapping_mul(0x9E3779B97F4A7C15) >> 40) as f64 / 1e5 - 80.0).collect() };
        let (p, q) = (gen(1), gen(2));
        let mut want = 0.0;
        for bi in 0..b {
            for c in 0..m {
                for ti in 0..t {
                    let k = (bi * t + ti) * m + c;
                    want += (p[k] - q[k]).abs() / (t * m * b) as f64;
                }
            }
        }
        let mut tape = Tape::new();
        let pv = tape.constant(Tensor::new(vec![b, t, m], p.clone()).unwrap());
        let qv = tape.constant(Tensor::new(vec![b, t, m], q.clone()).unwrap());
        let l = prediction_loss(&mut tape, pv, qv).unwrap();
        prop_assert!((tape.value(l).item().unwrap() - want).abs() <= 1e-12 * want.max(1.0));

        // reversing the channel order of both sides leaves the loss unchanged
        let rev = |v: &[f64]| -> Vec<f64> { (0..n).map(|i| v[i - i % m + (m - 1 - i % m)]).collect() };
        let pr = tape.constant(Tensor::new(vec![b, t, m], rev(&p)).unwrap());
        let qr = tape.constant(Tensor::new(vec![b, t, m], rev(&q)).unwrap());
        let l2 = prediction_loss(&mut tape, pr, qr).unwrap();
        prop_assert!((tape.value(l2).item().unwrap() - tape.value(l).item().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn total_loss_monotone_in_commitment(c1 in 0.0f64..10.0, c2 in 0.0f64..10.0, lambda1 in 0.01f64..2.0) {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::new(vec![1, 2, 1], vec![1.0, 2.0]).unwrap());
        let t = tape.constant(Tensor::new(vec![1, 2, 1], vec![0.0, 0.0]).unwrap());
        let cfg = LossConfig { lambda1 };
        let (a, b) = (tape.constant(Tensor::scalar(c1)), tape.constant(Tensor::scalar(c2)));
        let la = total_loss(&mut tape, p, t, Some(a), &cfg).unwrap();
        let lb = total_loss(&mut tape, p, t, Some(b), &cfg).unwrap();
        let (la, lb) = (tape.value(la).item().unwrap(), tape.value(lb).item().unwrap());
        prop_assert_eq!(c1 < c2, la < lb);
    }

    #[test]
    fn adam_with_zero_lr_is_identity(w in tensor(vec![3, 2]), g in tensor(vec![3, 2])) {
        let mut store = ParamStore::new();
        store.insert("w", w.clone());
        let mut state = TrainState::new(&store, 0.0, 0);
        for _ in 0..5 {
            adam_step(&mut state, &mut store, std::slice::from_ref(&g)).unwrap();
        }
        prop_assert_eq!(store.tensors()[0].data(), w.data());
        prop_assert_eq!(state.step, 5);
    }

    #[test]
    fn smape_is_scale_invariant(p in prop::collection::vec(0.1f64..10.0, 1..20), k in 0.1f64..100.0) {
        let t: Vec<f64> = p.iter().map(|v| v * 1.3 + 0.2).collect();
        let a = compute_metrics(&p, &t, 1.0, None).unwrap().smape;
        let ps: Vec<f64> = p.iter().map(|v| v * k).collect();
        let ts: Vec<f64> = t.iter().map(|v| v * k).collect();
        let b = compute_metrics(&ps, &ts, 1.0, None).unwrap().smape;
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn kmeans_objective_never_increases(points in tensor(vec![40, 3]), k in 1usize..8, seed in any::<u64>()) {
        let r = kmeans(&points, k, seed).unwrap();
        for w in r.objective.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
        }
        prop_assert!(r.assignments.iter().all(|&a| a < k));
    }

    #[test]
    fn windows_tile_each_segment(n in 300usize..500, l in 4usize..20, t in 1usize..10, stride in 1usize..5, m in 1usize..3) {
        let values: Vec<f64> = (0..n * m).map(|i| i as f64).collect();
        let series = RawSeries::new("ramp", values, m, "").unwrap();
        let d = make_windows(&series, &SplitSpec::default(), l, t, stride).unwrap();
        for ds in [&d.train, &d.val, &d.test] {
            prop_assert_eq!(ds.len(), (ds.segment_len() - l - t) / stride + 1);
            for i in [0, ds.len() - 1] {
                let start = (ds.segment_offset + ds.start(i)) * m;
                prop_assert_eq!(ds.input(i)[0], start as f64);
                prop_assert_eq!(ds.target(i)[0], (start + l * m) as f64);
            }
        }
        prop_assert_eq!(d.train.segment_len() + d.val.segment_len() + d.test.segment_len(), n);
        let clean = inject_noise(&d.train, 0.0, 1).unwrap();
        prop_assert_eq!(clean.segment(), d.train.segment());
        let noisy_test = inject_noise(&d.test, 0.1, 1).unwrap();
        prop_assert_eq!(noisy_test.segment(), d.test.segment());
        let full = few_shot_subset(&d.train, 1.0).unwrap();
        prop_assert_eq!(full.len(), d.train.len());
    }
}

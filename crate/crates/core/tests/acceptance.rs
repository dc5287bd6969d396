//! Acceptance suite: one PASS/FAIL line per criterion; exits non-zero if
//! any criterion fails.

mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sparse_vq::data::{make_windows, synthetic_sine, SplitSpec};
use sparse_vq::experiments::{
    audit_horizons, covering_demo, robustness_run, AuditSpec, Axis, CoveringConfig, DatasetSource,
    ExperimentSpec,
};
use sparse_vq::model::{Forecaster, ModelConfig, VqPlacement};
use sparse_vq::revin::{RevinState, DEFAULT_EPS};
use sparse_vq::svq::{
    commitment_loss_on, kmeans, nearest_codeword, quantize, random_codewords, sparse_reconstruct,
    CodebookStats, Metric, QuantizerVariant, SparseRegressionConfig, VariantTag,
};
use sparse_vq::tensor::{Tape, Tensor};
use sparse_vq::train::{
    baseline_metrics, evaluate, fit, prediction_loss, total_loss, Baseline, LossConfig, TrainConfig,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gaussian(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.sample(StandardNormal)).collect(),
    )
    .unwrap()
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        input_length: 16,
        horizon: 4,
        channels: 2,
        patch_length: 4,
        patch_stride: 4,
        d_model: 8,
        n_heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        codebook_size: 16,
        vq_placement: VqPlacement::PostEncoder,
        vq_variant: QuantizerVariant::new(VariantTag::Svq),
        seed: 17,
        ..Default::default()
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = Forecaster::new(tiny_config()).unwrap();
    let x = gaussian(&[2, 16, 2], &mut rng);
    let y = gaussian(&[2, 4, 2], &mut rng);
    let (worst, n) = common::fd_check_model(&model, &x, &y, &LossConfig::default());
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-3 && elapsed < Duration::from_secs(30),
        format!("{n} parameter entries, max relative error {worst:.2e}, {elapsed:.1?}"),
    )
}

fn loss_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let (b, t, m) = (1 + trial % 4, 1 + trial % 8, 1 + trial % 3);
        let pred = gaussian(&[b, t, m], &mut rng);
        let truth = gaussian(&[b, t, m], &mut rng);
        let (n, d) = (1 + trial % 5, 1 + trial % 4);
        let x = gaussian(&[n, d], &mut rng);
        let q = gaussian(&[n, d], &mut rng);
        let lambda1 = rng.gen_range(0.0..1.0);

        let mut pred_ref = 0.0;
        for bi in 0..b {
            let mut per_channel = 0.0;
            for c in 0..m {
                let mut s = 0.0;
                for ti in 0..t {
                    let k = (bi * t + ti) * m + c;
                    s += (pred.data()[k] - truth.data()[k]).abs();
                }
                per_channel += s / t as f64;
            }
            pred_ref += per_channel / m as f64;
        }
        pred_ref /= b as f64;
        let mut ct_ref = 0.0;
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..d {
                let e = x.data()[i * d + j] - q.data()[i * d + j];
                s += 2.0 * e * e;
            }
            ct_ref += s;
        }
        ct_ref /= n as f64;

        let mut tape = Tape::new();
        let (pv, tv) = (tape.constant(pred), tape.constant(truth));
        let (xv, qv) = (tape.param(x), tape.param(q));
        let lp = prediction_loss(&mut tape, pv, tv).unwrap();
        let ct = commitment_loss_on(&mut tape, xv, qv).unwrap();
        let total = total_loss(&mut tape, pv, tv, Some(ct), &LossConfig { lambda1 }).unwrap();
        let got = [
            tape.value(lp).item().unwrap(),
            tape.value(ct).item().unwrap(),
            tape.value(total).item().unwrap(),
        ];
        let want = [pred_ref, ct_ref, pred_ref + lambda1 * ct_ref];
        for (g, w) in got.iter().zip(want) {
            worst = worst.max((g - w).abs());
        }
    }
    outcome(
        worst <= 1e-12,
        format!("50 random batches, max deviation {worst:.1e}"),
    )
}

fn straight_through() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = Vec::new();
    for tag in VariantTag::ALL {
        let variant = QuantizerVariant::new(tag);
        let mut tape = Tape::new();
        let tokens = tape.param(gaussian(&[20, 6], &mut rng));
        let books: Vec<_> = (0..variant.num_codebooks())
            .map(|s| tape.param(random_codewords(16, 6, s as u64).unwrap()))
            .collect();
        let r = quantize(&mut tape, tokens, &books, &variant, None).unwrap();
        let total = tape.sum(r.quantized);
        let grads = tape.backward(total).unwrap();
        let g = grads.get(tokens).unwrap();
        if !g.data().iter().all(|&v| v == 1.0) {
            failures.push(tag.name());
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "all six variants give an all-ones token gradient".to_string()
        } else {
            format!("non-identity Jacobian for {failures:?}")
        },
    )
}

fn svq_dominance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let codebook = gaussian(&[64, 8], &mut rng);
    let tokens = gaussian(&[1000, 8], &mut rng);
    let cfg = SparseRegressionConfig::default();
    let mut ok = 0;
    for i in 0..1000 {
        let x = tokens.row(i);
        let (_, nn) = nearest_codeword(x, &codebook, Metric::Euclidean).unwrap();
        let code = sparse_reconstruct(x, &codebook, &cfg).unwrap();
        let err = x
            .iter()
            .zip(&code.reconstruction)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        if err <= nn + 1e-9 {
            ok += 1;
        }
    }
    outcome(
        ok == 1000,
        format!("{ok}/1000 tokens at or below nearest-neighbour error"),
    )
}

fn covering() -> Outcome {
    let start = Instant::now();
    let report = covering_demo(&CoveringConfig {
        n: 16,
        codebook_size: 64,
        t: 4,
        trials: 1000,
        seed: 7,
        ..Default::default()
    })
    .unwrap();
    let elapsed = start.elapsed();
    outcome(
        report.sparse_mean_error < report.nn_mean_error && elapsed < Duration::from_secs(10),
        format!(
            "nn {:.4}, sparse {:.4}, ratio {:.4}, {elapsed:.1?}",
            report.nn_mean_error, report.sparse_mean_error, report.ratio
        ),
    )
}

fn parameter_law() -> Outcome {
    let widths = [(16, 32, 2), (32, 64, 4), (64, 128, 4), (128, 256, 8)];
    let mut details = Vec::new();
    let mut pass = true;
    for (d, dff, heads) in widths {
        let spec = AuditSpec {
            model: ModelConfig {
                d_model: d,
                d_ff: dff,
                n_heads: heads,
                codebook_size: 64,
                ..Default::default()
            },
            horizons: vec![96, 192, 336, 720],
        };
        let audit = audit_horizons(&spec).unwrap();
        let identity = audit
            .rows
            .iter()
            .all(|r| r.params_with - r.params_without == r.ffn_count);
        pass &= identity && audit.strictly_decreasing;
        let pcts: Vec<String> = audit
            .rows
            .iter()
            .map(|r| format!("{:.2}%", r.reduction_pct))
            .collect();
        details.push(format!("d={d}: {}", pcts.join(" > ")));
    }
    outcome(pass, details.join("; "))
}

fn revin_roundtrip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let (b, l, m) = (1 + trial % 4, 2 + trial % 30, 1 + trial % 3);
        let mut x = gaussian(&[b, l, m], &mut rng);
        let scale = rng.gen_range(0.1..100.0);
        let shift = rng.gen_range(-50.0..50.0);
        x.data_mut()
            .iter_mut()
            .for_each(|v| *v = *v * scale + shift);
        if trial % 3 == 0 {
            // constant window in the first sample
            for t in 0..l {
                for c in 0..m {
                    x.data_mut()[t * m + c] = shift + c as f64;
                }
            }
        }
        let gain = Tensor::from_vec((0..m).map(|_| rng.gen_range(0.5..2.0)).collect());
        let bias = Tensor::from_vec((0..m).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let mut state = RevinState::with_affine(gain, bias, DEFAULT_EPS).unwrap();
        let z = state.normalize(&x).unwrap();
        let back = state.denormalize(&z).unwrap();
        worst = worst.max(back.max_abs_diff(&x));
    }
    outcome(
        worst <= 1e-9,
        format!("100 batches, max deviation {worst:.1e}"),
    )
}

fn sine_model(seed: u64) -> ModelConfig {
    ModelConfig {
        input_length: 96,
        horizon: 24,
        patch_length: 16,
        patch_stride: 8,
        d_model: 32,
        n_heads: 4,
        encoder_layers: 1,
        decoder_layers: 1,
        codebook_size: 64,
        vq_placement: VqPlacement::PostEncoder,
        vq_variant: QuantizerVariant::new(VariantTag::Svq),
        seed,
        ..Default::default()
    }
}

fn learning_smoke() -> Outcome {
    let start = Instant::now();
    let series = synthetic_sine(1600, 24.0, 0.1, 1, 11).unwrap();
    let splits = make_windows(&series, &SplitSpec::default(), 96, 24, 2).unwrap();
    let tc = TrainConfig {
        epochs: 30,
        batch_size: 32,
        lr: 1e-3,
        patience: 5,
        seed: 3,
        ..Default::default()
    };
    let run = || {
        let mut model = Forecaster::new(sine_model(3)).unwrap();
        let report = fit(&mut model, &splits.train, &splits.val, &tc).unwrap();
        let m = evaluate(&model, &splits.test, &splits.train, None).unwrap();
        (report.history, m)
    };
    let (h1, m1) = run();
    let elapsed = start.elapsed();
    let (h2, m2) = run();
    let base = baseline_metrics(&splits.test, &splits.train, Baseline::RepeatLast, None).unwrap();
    let improvement = 1.0 - m1.mse / base.mse;
    let deterministic = h1 == h2 && m1 == m2;
    outcome(
        improvement >= 0.2 && deterministic && elapsed < Duration::from_secs(300),
        format!(
            "test MSE {:.4} vs repeat-last {:.4} ({:.1}% better) after {} epochs, deterministic: {deterministic}, {elapsed:.1?} per run",
            m1.mse,
            base.mse,
            100.0 * improvement,
            h1.len()
        ),
    )
}

fn robustness() -> Outcome {
    let spec = ExperimentSpec {
        name: "robustness".into(),
        dataset: DatasetSource::Synthetic {
            length: 1600,
            period: 24.0,
            noise: 0.0,
            channels: 1,
            seed: 21,
        },
        stride: 4,
        model: sine_model(0),
        train: TrainConfig {
            epochs: 8,
            batch_size: 32,
            lr: 1e-3,
            patience: 8,
            ..Default::default()
        },
        axis: Axis::Eta(vec![0.0, 0.01, 0.05, 0.10]),
        horizons: vec![24],
        repeats: 2,
        seed_base: 100,
        ..Default::default()
    };
    let (_, table) = robustness_run(&spec).unwrap();
    let finite = table
        .iter()
        .all(|r| r.mae.is_some_and(f64::is_finite) && r.degradation.is_some_and(f64::is_finite));
    let mae = |eta: f64| {
        table
            .iter()
            .find(|r| r.eta == eta)
            .and_then(|r| r.mae)
            .unwrap_or(f64::NAN)
    };
    let rows: Vec<String> = table
        .iter()
        .map(|r| {
            format!(
                "eta {}: MAE {:.4} ({:+.1}%)",
                r.eta,
                r.mae.unwrap_or(f64::NAN),
                100.0 * r.degradation.unwrap_or(f64::NAN)
            )
        })
        .collect();
    outcome(finite && mae(0.10) >= mae(0.0), rows.join(", "))
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("spec.json");
    std::fs::write(
        &cfg,
        r#"{"name": "det", "dataset": {"kind": "synthetic", "length": 1300, "period": 24, "noise": 0.1, "channels": 2, "seed": 4},
            "stride": 8, "train": {"epochs": 2, "batch_size": 16, "lr": 0.001},
            "axis": {"kind": "vq_variant", "values": [{"tag": "svq"}, {"tag": "vq"}]}, "horizons": [24], "repeats": 1, "seed_base": 9}"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let status = Command::new(env!("CARGO_BIN_EXE_svq"))
            .args(["ablate", "--config"])
            .arg(&cfg)
            .arg("--out-dir")
            .arg(dir.path())
            .output()
            .unwrap();
        if !status.status.success() {
            return outcome(
                false,
                format!("ablate failed: {}", String::from_utf8_lossy(&status.stderr)),
            );
        }
    }
    for entry in std::fs::read_dir(dir.path().join("det")).unwrap() {
        outputs.push(std::fs::read(entry.unwrap().path().join("results.csv")).unwrap());
    }
    let same = outputs.len() == 2 && outputs[0] == outputs[1];
    outcome(
        same,
        format!("two `svq ablate` runs, results.csv identical: {same}"),
    )
}

fn kmeans_init() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let points = Tensor::from_rows(
        &(0..12)
            .map(|i| {
                (0..4)
                    .map(|j| 100.0 * i as f64 + if j == i % 4 { 37.0 } else { 0.0 })
                    .collect()
            })
            .collect::<Vec<Vec<f64>>>(),
    )
    .unwrap();
    let result = kmeans(&points, 12, 99).unwrap();
    let recovered = (0..12).all(|i| {
        (0..12).any(|c| {
            points
                .row(i)
                .iter()
                .zip(result.centroids.row(c))
                .all(|(a, b)| (a - b).abs() <= 1e-9)
        })
    });
    let mut monotone = true;
    for seed in 0..20 {
        let cloud = gaussian(&[200, 3], &mut rng);
        let r = kmeans(&cloud, 8, seed).unwrap();
        monotone &= r
            .objective
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-12 * w[0].abs());
    }
    outcome(
        recovered && monotone,
        format!("12 separated points recovered: {recovered}; objective non-increasing on 20 clouds: {monotone}"),
    )
}

fn perplexity() -> Outcome {
    let c = 50;
    let uniform = CodebookStats::from_counts(&vec![7; c]).unwrap().perplexity;
    let mut single = vec![0; c];
    single[13] = 1000;
    let collapsed = CodebookStats::from_counts(&single).unwrap().perplexity;
    outcome(
        (uniform - c as f64).abs() <= 1e-9 && (collapsed - 1.0).abs() <= 1e-9,
        format!("uniform {uniform}, collapsed {collapsed}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("gradient correctness", gradient_correctness),
        ("loss exactness", loss_exactness),
        ("straight-through identity", straight_through),
        ("sparse dominance", svq_dominance),
        ("covering demo", covering),
        ("parameter law", parameter_law),
        ("RevIN round trip", revin_roundtrip),
        ("learning smoke test", learning_smoke),
        ("noise robustness", robustness),
        ("CLI determinism", cli_determinism),
        ("k-means init", kmeans_init),
        ("codebook perplexity", perplexity),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "{} {:>2} {name}: {}",
            if result.pass { "PASS" } else { "FAIL" },
            i + 1,
            result.detail
        );
    }
    println!("{}/12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

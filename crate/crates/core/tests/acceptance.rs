// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use attnbasin::harness::{
    layerwise_replications, permutation_experiment, Group, GroupingRule, SlotAttentionSource,
};
use attnbasin::rerank::order_indices;
use attnbasin::theory::{monotonicity_trial, placement_sweep, MonotonicityFamily};
use attnbasin::{
    attention_gradient, block_attention, check_convergence, detect_basin, generate_synthetic_dumps,
    read_dump, variance_ratio, write_dump, AggregationMode, Error, LayerSelection,
    ProfileAccumulator, Strategy, SyntheticBasinParams, TheoryModel,
};
use common::{
    brute_force_blocks, depth_params, generator_stats, max_abs_diff, random_dump, regime_params,
    DumpLimits, DEPTH_PROBE_SAMPLES,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn format_round_trip() -> Outcome {
    for seed in 0..1000u64 {
        let dump = random_dump(seed, DumpLimits::default());
        let mut bytes = Vec::new();
        write_dump(&dump, &mut bytes).map_err(|e| format!("seed {seed}: {e}"))?;
        let back = read_dump(bytes.as_slice()).map_err(|e| format!("seed {seed}: {e}"))?;
        let same_bits = back.tensor.len() == dump.tensor.len()
            && back
                .tensor
                .iter()
                .zip(&dump.tensor)
                .all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(back.header == dump.header && same_bits, || {
            format!("seed {seed}: round trip differs")
        })?;
    }
    let mut bytes = Vec::new();
    write_dump(&random_dump(1, DumpLimits::default()), &mut bytes).unwrap();
    let mut magic = bytes.clone();
    magic[..4].copy_from_slice(b"NOPE");
    let mut version = bytes.clone();
    version[4] = 9;
    let mut trailing = bytes.clone();
    trailing.push(1);
    type Case<'a> = (&'a str, &'a [u8], fn(&Error) -> bool);
    let cases: [Case; 5] = [
        ("bad magic", &magic, |e| matches!(e, Error::Format(_))),
        ("unknown version", &version, |e| {
            matches!(e, Error::Version { .. })
        }),
        ("trailing bytes", &trailing, |e| {
            matches!(e, Error::Format(_))
        }),
        ("short header", &bytes[..20], |e| {
            matches!(e, Error::Truncated { what: "header", .. })
        }),
        ("short tensor", &bytes[..bytes.len() - 1], |e| {
            matches!(e, Error::Truncated { what: "tensor", .. })
        }),
    ];
    for (name, input, class) in cases {
        match read_dump(input) {
            Err(e) if class(&e) => {}
            other => return Err(format!("{name}: got {other:?}")),
        }
    }
    let mut bad = random_dump(2, DumpLimits::default());
    bad.tensor[0] = f32::NAN;
    ensure(write_dump(&bad, &mut Vec::new()).is_err(), || {
        "invalid dump was written".into()
    })?;
    Ok("1000 dumps bit-exact, 6 malformed inputs rejected".into())
}

fn aggregation_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut worst_identity = 0.0f64;
    for seed in 0..200u64 {
        let dump = random_dump(10_000 + seed, DumpLimits::default());
        for mode in [AggregationMode::TokenMean, AggregationMode::TokenSum] {
            let got = block_attention(&dump, mode).map_err(|e| e.to_string())?;
            for (g, w) in got.values.iter().zip(brute_force_blocks(&dump, mode)) {
                worst = worst.max(max_abs_diff(g, &w));
            }
        }
        let mean = block_attention(&dump, AggregationMode::TokenMean).unwrap();
        let sum = block_attention(&dump, AggregationMode::TokenSum).unwrap();
        let h = &dump.header;
        for l in 0..h.num_layers {
            for (slot, span) in h.spans.docs.iter().enumerate() {
                let d = h.permutation[slot];
                worst_identity = worst_identity
                    .max((mean.values[l][d] - sum.values[l][d] / span.len() as f64).abs());
            }
        }
    }
    ensure(worst <= 1e-6 && worst_identity <= 1e-9, || {
        format!("oracle diff {worst:.2e}, identity diff {worst_identity:.2e}")
    })?;
    Ok(format!(
        "200 dumps, max oracle diff {worst:.1e}, mean/sum identity {worst_identity:.1e}"
    ))
}

fn profiler_correctness() -> Outcome {
    let k = 7;
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let n = rng.random_range(1..500);
        let stream: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..k).map(|_| rng.random::<f64>() * 0.05).collect())
            .collect();
        let shards = rng.random_range(1..10);
        let mut accs: Vec<ProfileAccumulator> = (0..shards)
            .map(|_| {
                ProfileAccumulator::new(k, LayerSelection::Layer(0), AggregationMode::TokenMean, 50)
            })
            .collect();
        for s in &stream {
            let i = rng.random_range(0..shards);
            accs[i].accumulate(s).unwrap();
        }
        accs.shuffle(&mut rng);
        let merged = accs.into_iter().reduce(|a, b| a.merge(b).unwrap()).unwrap();
        let batch: Vec<f64> = (0..k)
            .map(|j| stream.iter().map(|s| s[j]).sum::<f64>() / n as f64)
            .collect();
        worst = worst.max(max_abs_diff(&merged.mean(), &batch));
    }
    ensure(worst <= 1e-7, || format!("merge vs batch {worst:.2e}"))?;

    let mut acc =
        ProfileAccumulator::new(4, LayerSelection::Layer(0), AggregationMode::TokenMean, 50);
    for _ in 0..300 {
        acc.accumulate(&[0.3, 0.1, 0.1, 0.3]).unwrap();
    }
    let c = check_convergence(&acc, 1e-4, 2);
    ensure(c.n_star == Some(150), || {
        format!("constant stream n_star {:?}", c.n_star)
    })?;
    Ok(format!(
        "100 shardings, max diff {worst:.1e}; constant stream converges at n=150"
    ))
}

fn basin_reproduction() -> Outcome {
    let (k, c, beta) = (5usize, 0.1, 0.1);
    let params = SyntheticBasinParams {
        base: c,
        curvature: beta,
        noise_scale: 0.0,
        seed: 7,
        ..SyntheticBasinParams::new(k, 8)
    };
    // closed form, written out independently of the generator
    let f: Vec<f64> = (1..=k)
        .map(|p| {
            let x = (2.0 * p as f64 - 1.0 - k as f64) / (k as f64 - 1.0);
            c + beta * x * x
        })
        .collect();
    let total: f64 = f.iter().sum();
    let want: Vec<f64> = f.iter().map(|v| v / total).collect();

    let dumps = generate_synthetic_dumps(&params, 400, None).map_err(|e| e.to_string())?;
    let mut report = Vec::new();
    for selection in [LayerSelection::Layer(0), LayerSelection::CrossLayerMean] {
        let mut acc = ProfileAccumulator::new(k, selection, AggregationMode::TokenMean, 50);
        for d in &dumps {
            acc.accumulate_blocks(&block_attention(d, AggregationMode::TokenMean).unwrap())
                .unwrap();
        }
        let profile = acc.finalize("synthetic").unwrap();
        let err = max_abs_diff(&profile.normalized(), &want);
        let basin = detect_basin(&profile).unwrap();
        ensure(err <= 1e-9 && basin.is_basin, || {
            format!(
                "{selection}: normalized error {err:.2e}, is_basin {}",
                basin.is_basin
            )
        })?;
        report.push(format!("selection {selection} err {err:.1e}"));
    }
    Ok(format!(
        "400 noiseless samples, {}, is_basin",
        report.join(", ")
    ))
}

fn reranker_invariants() -> Outcome {
    let lim: Vec<usize> = order_indices(&[5.0, 4.0, 3.0, 2.0, 1.0], Strategy::Lim, None, None)
        .unwrap()
        .iter()
        .map(|d| d + 1)
        .collect();
    ensure(lim == [1, 3, 5, 4, 2], || format!("LIM k=5 gave {lim:?}"))?;

    for trial in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let k = rng.random_range(1..12);
        let rel: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let prof: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        let seed = rng.random::<u64>();
        for s in Strategy::ALL {
            let a = order_indices(&rel, s, Some(&prof), Some(seed)).unwrap();
            let b = order_indices(&rel, s, Some(&prof), Some(seed)).unwrap();
            ensure(a == b, || format!("trial {trial}: {s} not deterministic"))?;
            let mut sorted = a.clone();
            sorted.sort_unstable();
            ensure(sorted == (0..k).collect::<Vec<_>>(), || {
                format!("trial {trial}: {s} is not a permutation")
            })?;
        }
        let order = order_indices(&rel, Strategy::Attnrank, Some(&prof), None).unwrap();
        let top = (0..k)
            .max_by(|&x, &y| rel[x].total_cmp(&rel[y]).then(y.cmp(&x)))
            .unwrap();
        let max = prof.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let at = order.iter().position(|&d| d == top).unwrap();
        ensure(prof[at] == max, || {
            format!("trial {trial}: top doc not at argmax")
        })?;
        let c = 2f64.powi(rng.random_range(-30..30));
        let scaled: Vec<f64> = prof.iter().map(|v| v * c).collect();
        ensure(
            order == order_indices(&rel, Strategy::Attnrank, Some(&scaled), None).unwrap(),
            || format!("trial {trial}: profile scale changed the order"),
        )?;
    }
    Ok(
        "LIM golden [1,3,5,4,2]; 1000 seeded trials: permutation, argmax, determinism, scale"
            .into(),
    )
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn monotonicity_suite() -> Outcome {
    let gradient_family = MonotonicityFamily {
        k_min: 2,
        equal_kappa: false,
        out_of_hypothesis_rate: 0.3,
        ..Default::default()
    };
    let step = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..100 {
        let t = monotonicity_trial(&gradient_family, 42, i);
        let exact = attention_gradient(&t.model, &t.alpha_bar, t.target).unwrap();
        let fd: Vec<f64> = (0..t.model.k)
            .map(|j| {
                let mut up = t.alpha_bar.clone();
                let mut down = t.alpha_bar.clone();
                up[j] += step;
                down[j] -= step;
                (softmax(&t.model.logits(&up))[t.target]
                    - softmax(&t.model.logits(&down))[t.target])
                    / (2.0 * step)
            })
            .collect();
        let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst = worst.max(max_abs_diff(&exact, &fd) / scale);
    }
    ensure(worst <= 1e-5, || {
        format!("gradient relative error {worst:.2e}")
    })?;

    let family = MonotonicityFamily::default();
    let (mut in_hyp, mut violations) = (0, 0);
    for i in 0..1000 {
        let t = monotonicity_trial(&family, 1, i);
        if !t.in_hypothesis {
            continue;
        }
        in_hyp += 1;
        let g = attention_gradient(&t.model, &t.alpha_bar, t.target).unwrap();
        let gt = g[t.target];
        let others = g.iter().enumerate().filter(|(j, _)| *j != t.target);
        let a = gt > 0.0;
        let b = others.clone().all(|(_, v)| *v <= 0.0);
        let c = others.clone().all(|(_, v)| gt > v.abs());
        if !(a && b && c) {
            violations += 1;
        }
    }
    ensure(in_hyp == 1000 && violations == 0, || {
        format!("{violations} violations over {in_hyp} in-hypothesis trials")
    })?;
    Ok(format!(
        "100 gradients, max relative error {worst:.1e}; 1000 trials, 0 violations"
    ))
}

fn placement() -> Outcome {
    let mut configs = 0;
    for k in 3..=8 {
        for &(c, beta) in &[(0.05, 0.05), (0.1, 0.1), (0.02, 0.3), (0.1, 0.01)] {
            for layers in [1, 4, 12] {
                let params = SyntheticBasinParams {
                    base: c,
                    curvature: beta,
                    noise_scale: 0.0,
                    ..SyntheticBasinParams::new(k, layers)
                };
                let model = TheoryModel::new(k, layers);
                for target in [0, k / 2, k - 1] {
                    let curve = placement_sweep(&model, &params, target, 1).unwrap();
                    let best = curve.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let argmax = curve.iter().position(|&v| v == best).unwrap();
                    ensure(argmax == 0 || argmax == k - 1, || {
                        format!("k={k} c={c} beta={beta} L={layers}: argmax slot {argmax}")
                    })?;
                    configs += 1;
                }
                let flat = SyntheticBasinParams {
                    curvature: 0.0,
                    ..params.clone()
                };
                let curve = placement_sweep(&model, &flat, 0, 1).unwrap();
                let spread = curve.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                    - curve.iter().copied().fold(f64::INFINITY, f64::min);
                ensure(spread <= 1e-12, || {
                    format!("flat sweep spread {spread:.2e}")
                })?;
            }
        }
    }

    let (k, layers) = (5, 4);
    let model = TheoryModel::new(k, layers);
    let mut wins = 0;
    for rep in 0..50u64 {
        let params = SyntheticBasinParams {
            base: 0.1,
            curvature: 0.3,
            noise_scale: 0.05,
            layer_noise_growth: vec![1.0; layers],
            seed: 1000 + rep,
            ..SyntheticBasinParams::new(k, layers)
        };
        let curve = placement_sweep(&model, &params, 2, 500).unwrap();
        let edge = curve[0].min(curve[k - 1]);
        if curve[1..k - 1].iter().all(|&m| edge > m) {
            wins += 1;
        }
    }
    ensure(wins * 100 >= 99 * 50, || {
        format!("noisy sweep edges won {wins}/50")
    })?;
    Ok(format!(
        "{configs} noiseless configs argmax at an edge; flat sweeps constant; noisy edges win {wins}/50"
    ))
}

fn layer_regimes() -> Outcome {
    let trials = 100;
    let (mut hits, mut within) = (0, 0);
    let layers = regime_params(0).layers;
    let mut rho_sum = vec![0.0; layers];
    let analytic = regime_params(0).analytic_rho();
    for seed in 0..trials {
        let params = regime_params(5000 + seed);
        let r = variance_ratio(&generator_stats(&params, 500)).map_err(|e| e.to_string())?;
        if r.l_star == Some(3) {
            hits += 1;
        }
        if r.rho
            .iter()
            .zip(&analytic)
            .all(|(g, a)| (g / a - 1.0).abs() <= 0.15)
        {
            within += 1;
        }
        rho_sum.iter_mut().zip(&r.rho).for_each(|(s, v)| *s += v);
    }
    let mean_rho: Vec<f64> = rho_sum.iter().map(|s| s / trials as f64).collect();
    let worst_rel = mean_rho
        .iter()
        .zip(&analytic)
        .map(|(m, a)| (m / a - 1.0).abs())
        .fold(0.0, f64::max);
    ensure(hits * 100 >= 95 * trials && worst_rel <= 0.15, || {
        format!(
            "L* recovered {hits}/{trials}, mean rho off by {:.1}%",
            worst_rel * 100.0
        )
    })?;
    Ok(format!(
        "L*=3 recovered {hits}/{trials}; mean rho within {:.1}% of analytic {:?}; {within}/{trials} trials within 15% on every layer",
        worst_rel * 100.0,
        analytic.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    ))
}

fn permutation_study() -> Outcome {
    let params = SyntheticBasinParams {
        noise_scale: 0.0,
        ..SyntheticBasinParams::new(3, 4)
    };
    let r = permutation_experiment(
        SlotAttentionSource::Generator {
            params: &params,
            draws: 1,
        },
        &[true, true, false],
        &TheoryModel::new(3, 4),
        GroupingRule::Max,
    )
    .map_err(|e| e.to_string())?;
    let top_orders = r
        .trials
        .iter()
        .filter(|t| t.group == Group::RelevantTop)
        .count();
    let (top, noise) = (
        r.relevant_top_mean.ok_or("empty relevant_top group")?,
        r.noise_top_mean.ok_or("empty noise_top group")?,
    );
    ensure(r.trials.len() == 6 && top > noise, || {
        format!("relevant_top {top:.6} vs noise_top {noise:.6}")
    })?;
    Ok(format!(
        "6 orders, relevant_top ({top_orders}) mean {top:.4} > noise_top mean {noise:.4}"
    ))
}

fn layerwise_study() -> Outcome {
    let params = depth_params(11, None);
    let model = TheoryModel::new(params.k, params.layers);
    let runs = layerwise_replications(&params, DEPTH_PROBE_SAMPLES, 50, &model)
        .map_err(|e| e.to_string())?;
    let monotone = runs
        .iter()
        .filter(|c| c.windows(2).all(|w| w[1] <= w[0]))
        .count();
    let mean: Vec<f64> = (0..params.layers)
        .map(|l| runs.iter().map(|c| c[l]).sum::<f64>() / runs.len() as f64)
        .collect();
    ensure(monotone * 10 >= 9 * 50, || {
        format!("non-increasing in {monotone}/50, mean curve {mean:.4?}")
    })?;
    Ok(format!(
        "non-increasing in {monotone}/50 replications, mean curve {mean:.4?}"
    ))
}

struct Criterion {
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            name: "format round-trip",
            limit: Some(Duration::from_secs(10)),
            run: format_round_trip,
        },
        Criterion {
            name: "aggregation oracle",
            limit: None,
            run: aggregation_oracle,
        },
        Criterion {
            name: "profiler correctness",
            limit: None,
            run: profiler_correctness,
        },
        Criterion {
            name: "basin reproduction on the generator",
            limit: None,
            run: basin_reproduction,
        },
        Criterion {
            name: "reranker invariants",
            limit: None,
            run: reranker_invariants,
        },
        Criterion {
            name: "gradient and monotonicity suite",
            limit: Some(Duration::from_secs(30)),
            run: monotonicity_suite,
        },
        Criterion {
            name: "placement sweep",
            limit: None,
            run: placement,
        },
        Criterion {
            name: "layer regimes",
            limit: None,
            run: layer_regimes,
        },
        Criterion {
            name: "permutation study",
            limit: None,
            run: permutation_study,
        },
        Criterion {
            name: "layer-wise rerank study",
            limit: None,
            run: layerwise_study,
        },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => {
                Err(format!("took {elapsed:.2?}, limit {limit:?}"))
            }
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS  {:<36} [{elapsed:.2?}] {detail}", c.name),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {:<36} [{elapsed:.2?}] {detail}", c.name);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

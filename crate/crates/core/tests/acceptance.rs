//! Acceptance checks. One line per criterion; exits nonzero if any fails.
//! Extra arguments select criteria by substring.

use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use candle_core::DType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use drumdiff::baselines::ceiling_rows;
use drumdiff::codec::projection_stack_rank;
use drumdiff::conditioning::{Frontend, FrontendConfig};
use drumdiff::diffusion::{cosine_schedule, pad_frames, Denoiser, DenoiserConfig, NoiseDraw, SequenceBatch};
use drumdiff::frames::Frames;
use drumdiff::grid::{build_grid, DrumEvent};
use drumdiff::metrics::fad::{fad_infinity, frechet_distance, DEFAULT_RUNS};
use drumdiff::metrics::{mean_metrics, ClipPair, MetricSuite};
use drumdiff::nn::{scalar, tensor_from, tensor_to_vec, Dropout, ParamStore};
use drumdiff::pca::PcaBasis;
use drumdiff::pipeline::overfit::overfit;
use drumdiff::pipeline::train::Checkpoint;
use drumdiff::pipeline::{build_cache, evaluate, synthesize_dataset, train_on, Cache, CacheConfig, DatasetSpec, ModelKind, RunConfig, TrainingData};
use drumdiff::rvq_ce::{combined_loss, residuals, AuxLossConfig, FrozenCodebooks, LatentMap};
use drumdiff::split::Split;
use drumdiff::stats::{bootstrap_ci, holm_adjust, sign_flip_test, LEVEL, RESAMPLES};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

const TEST_WINDOWS: usize = 50;

/// Desk cache whose test split holds exactly fifty windows.
fn desk_cache() -> &'static Cache {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    CACHE.get_or_init(|| {
        let t = Instant::now();
        let spec = DatasetSpec {
            patterns: 24,
            bars: 3,
            ..DatasetSpec::default()
        };
        let corpus = synthesize_dataset(&spec, 31).expect("corpus");
        let config = CacheConfig {
            split_weights: [5.0, 1.0, 18.0],
            ..CacheConfig::default()
        };
        let mut cache = build_cache(&corpus, &config).expect("cache");
        let mut kept = 0;
        cache.records.retain(|r| {
            if r.split != Split::Test {
                return true;
            }
            kept += 1;
            kept <= TEST_WINDOWS
        });
        assert_eq!(cache.split(Split::Test).count(), TEST_WINDOWS, "desk cache is short of test windows");
        println!("  setup: desk cache with {} windows in {:.1}s", cache.records.len(), t.elapsed().as_secs_f64());
        cache
    })
}

fn pca_rank() -> Outcome {
    let cache = desk_cache();
    let (rank, tol) = projection_stack_rank(cache.codec.stack());
    ensure!(rank == 16, "projection stack rank {rank} (tolerance {tol:.3e})");
    let train: Vec<(Split, &Frames)> = cache.split(Split::Train).map(|r| (Split::Train, &r.y)).collect();
    let basis = PcaBasis::fit(&train, 16).map_err(fail)?;
    let explained = basis.explained_variance();
    ensure!(explained >= 1.0 - 1e-6, "explained variance {explained}");
    Ok(format!("rank {rank}, explained variance {:.9}%", 100.0 * explained))
}

fn pca_round_trip() -> Outcome {
    let cache = desk_cache();
    let heldout: Vec<&Frames> = cache.records.iter().filter(|r| r.split != Split::Train).map(|r| &r.y).collect();
    let d = cache.basis.diagnostics(&heldout);
    let n = heldout.iter().map(|f| f.rows()).sum::<usize>() as f64;
    let dim = cache.basis.dim();
    let mut mean = vec![0.0; dim];
    for row in heldout.iter().flat_map(|f| f.iter_rows()) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let var = heldout
        .iter()
        .flat_map(|f| f.iter_rows())
        .map(|row| row.iter().zip(&mean).map(|(v, m)| (v - m).powi(2)).sum::<f64>())
        .sum::<f64>()
        / (n * dim as f64);
    let rel = d.mse / var;
    ensure!(rel <= 1e-10, "held-out MSE {:.3e} is {rel:.3e} of frame variance", d.mse);
    Ok(format!("{} held-out frames, MSE {:.3e} ({rel:.3e} of variance)", d.frames, d.mse))
}

fn ceiling_equalities() -> Outcome {
    let cache = desk_cache();
    let suite = MetricSuite::new(cache.sample_rate());
    let hop = cache.codec.config().hop;
    let mut max_pca = 0.0f32;
    let mut rows: [Vec<_>; 3] = Default::default();
    for r in cache.split(Split::Test) {
        let c = ceiling_rows(Some(&r.y), Some(&r.codes), Some(&cache.basis), &cache.codec, r.audio.len()).map_err(fail)?;
        ensure!(c.source_code_decode == c.target_codec_recon, "{}: source-code decode differs from codec reconstruction", r.key());
        for (a, b) in c.target_pca_recon.iter().zip(&c.target_codec_recon) {
            max_pca = max_pca.max((a - b).abs());
        }
        for (slot, audio) in rows.iter_mut().zip([&c.target_codec_recon, &c.target_pca_recon, &c.source_code_decode]) {
            slot.push(
                suite
                    .evaluate(&ClipPair {
                        generated: audio,
                        reference: &r.audio,
                        frame_mask: r.mask(),
                        sample_rate: cache.sample_rate(),
                        hop,
                    })
                    .map_err(fail)?,
            );
        }
    }
    ensure!(max_pca <= 1e-5, "PCA reconstruction max abs difference {max_pca:.3e}");
    ensure!(rows[0] == rows[2], "codec and source-code metric rows differ");
    let means: Vec<Vec<f64>> = rows.iter().map(|r| mean_metrics(r)).collect::<Result<_, _>>().map_err(fail)?;
    ensure!(means[0] == means[2], "codec and source-code rows differ");
    ensure!(means[0] == means[1], "PCA row {:?} vs codec row {:?}", means[1], means[0]);
    let clip_gap = rows[0]
        .iter()
        .zip(&rows[1])
        .flat_map(|(a, b)| a.values().into_iter().zip(b.values()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    Ok(format!(
        "{} windows, source == codec bitwise, PCA max abs {max_pca:.2e}, identical rows (per-clip gap {clip_gap:.1e})",
        rows[0].len()
    ))
}

fn gaussian(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_frames(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Frames {
    Frames::from_vec(dim, gaussian(rows * dim, rng))
}

/// Central differences at three coordinates of every parameter.
fn check_gradients(params: &ParamStore, loss: &dyn Fn() -> f64, grads: &candle_core::backprop::GradStore) -> Result<(usize, f64), String> {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (name, var) in params.named() {
        let grad = tensor_to_vec(grads.get(var.as_tensor()).ok_or(format!("no gradient for {name}"))?).map_err(fail)?;
        let base = tensor_to_vec(var.as_tensor()).map_err(fail)?;
        for idx in [0, base.len() / 2, base.len() - 1] {
            let h = 1e-6;
            let at = |delta: f64| {
                let mut v = base.clone();
                v[idx] += delta;
                var.set(&tensor_from(v, var.dims(), DType::F64).unwrap()).unwrap();
                loss()
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            var.set(&tensor_from(base.clone(), var.dims(), DType::F64).unwrap()).map_err(fail)?;
            let rel = (fd - grad[idx]).abs() / fd.abs().max(grad[idx].abs()).max(1e-6);
            ensure!(rel < 1e-3, "{name}[{idx}]: finite difference {fd} vs {}", grad[idx]);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    Ok((checked, worst))
}

fn diffusion_correctness() -> Outcome {
    let s = cosine_schedule(25).map_err(fail)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_var = 0.0f64;
    for n in [1, 5, 12, 25] {
        let eps = gaussian(10_000, &mut rng);
        let xn = s.q_sample(&vec![0.0; 10_000], n, &eps).map_err(fail)?;
        let var = xn.iter().map(|x| x * x).sum::<f64>() / 10_000.0;
        let target = 1.0 - s.alpha_bar(n);
        let rel = (var - target).abs() / target;
        ensure!(rel <= 0.03, "(a) step {n}: variance {var} vs {target}");
        worst_var = worst_var.max(rel);
    }

    let x0: Vec<f64> = (0..400).map(|i| ((i as f64) * 0.37).sin() * 2.5).collect();
    let mut x = gaussian(x0.len(), &mut rng);
    for n in (1..=25).rev() {
        let ab = s.alpha_bar(n);
        let eps: Vec<f64> = x.iter().zip(&x0).map(|(xn, x0)| (xn - ab.sqrt() * x0) / (1.0 - ab).sqrt()).collect();
        x = s.reverse_step(&x, n, &eps, &mut rng).map_err(fail)?;
    }
    let rms = (x.iter().zip(&x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x0.len() as f64).sqrt();
    ensure!(rms <= 0.15, "(b) oracle chain RMS {rms}");

    let d = Denoiser::new(
        DenoiserConfig {
            target_dim: 3,
            cond_dim: 5,
            width: 8,
            layers: 1,
            heads: 2,
            dropout: 0.0,
            ffn_mult: 2,
            seed: 5,
        },
        DType::F64,
    )
    .map_err(fail)?;
    let s12 = cosine_schedule(12).map_err(fail)?;
    let x0 = random_frames(4, 3, &mut rng);
    let h = random_frames(4, 5, &mut rng);
    let batch = SequenceBatch::new(&[&x0], &[&[true, true, true, false]], 62.5, DType::F64).map_err(fail)?;
    let cond = pad_frames(&[&h], DType::F64).map_err(fail)?;
    let draw = NoiseDraw::sample(&s12, &[1, 4, 3], &mut rng, DType::F64).map_err(fail)?;
    let loss = || d.eps_loss(&batch, &cond, &s12, &draw, &mut Dropout::eval()).unwrap().loss;
    let grads = loss().backward().map_err(fail)?;
    let (dn, dworst) = check_gradients(d.params(), &|| scalar(&loss()).unwrap(), &grads).map_err(|e| format!("(c) denoiser {e}"))?;

    let f = Frontend::new(
        FrontendConfig {
            radii: vec![0, 2, 3],
            branch_dim: 6,
            stem_channels: 4,
            lstm_hidden: 3,
            ..FrontendConfig::default()
        },
        DType::F64,
    )
    .map_err(fail)?;
    let events: Vec<DrumEvent> = (0..12)
        .map(|i| DrumEvent {
            family: (i * 3) % 8,
            time: 0.13 * i as f64 + 0.01,
            velocity: 0.3 + 0.05 * i as f64,
            articulation: i % 4,
        })
        .collect();
    let grid = build_grid(&events, 120.0, 2.0).map_err(fail)?;
    let windows = f.window_tensors(&grid, &[0.3, 0.62, 0.9]).map_err(fail)?;
    let width = f.config().cond_dim();
    let weights: Vec<f64> = (0..3 * width).map(|_| rng.random_range(-1.0..1.0)).collect();
    let weights = tensor_from(weights, &[3, width], DType::F64).map_err(fail)?;
    let floss = || f.encode(&windows).unwrap().mul(&weights).unwrap().sum_all().unwrap();
    let grads = floss().backward().map_err(fail)?;
    let (fnum, fworst) = check_gradients(f.params(), &|| scalar(&floss()).unwrap(), &grads).map_err(|e| format!("(c) frontend {e}"))?;
    Ok(format!(
        "(a) variance within {:.2}%, (b) oracle RMS {rms:.4}, (c) {dn} denoiser and {fnum} frontend coordinates, worst rel {:.1e}",
        100.0 * worst_var,
        dworst.max(fworst)
    ))
}

fn rvq_ce_correctness() -> Outcome {
    let cache = desk_cache();
    let stack = cache.codec.stack();
    let books = FrozenCodebooks::new(stack, DType::F64).map_err(fail)?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let r = random_frames(64, stack.dim(), &mut rng);
    let rt = pad_frames(&[&r], DType::F64).map_err(fail)?.squeeze(0).map_err(fail)?;
    let m = stack.entries_per_book();
    let mut cells = 0;
    for k in 0..stack.codebooks() {
        let logits = tensor_to_vec(&books.logits(&rt, k).map_err(fail)?).map_err(fail)?;
        for (j, row) in r.iter_rows().enumerate() {
            let got = &logits[j * m..(j + 1) * m];
            let mut by_logit: Vec<usize> = (0..m).collect();
            by_logit.sort_by(|&a, &b| got[b].total_cmp(&got[a]).then(a.cmp(&b)));
            let mut by_distance: Vec<(f64, usize)> = stack
                .entries(k)
                .iter_rows()
                .enumerate()
                .map(|(i, e)| (e.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum(), i))
                .collect();
            by_distance.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let expected: Vec<usize> = by_distance.iter().map(|d| d.1).collect();
            ensure!(by_logit == expected, "codebook {k}, frame {j}: logit order differs from distance order");
            cells += 1;
        }
    }

    let windows: Vec<_> = cache.split(Split::Train).take(3).collect();
    let s = cosine_schedule(12).map_err(fail)?;
    let x0: Vec<&Frames> = windows.iter().map(|w| &w.x0).collect();
    let masks: Vec<Vec<bool>> = windows.iter().map(|w| w.mask().to_vec()).collect();
    let mask_refs: Vec<&[bool]> = masks.iter().map(|m| m.as_slice()).collect();
    let batch = SequenceBatch::new(&x0, &mask_refs, cache.frame_rate(), DType::F32).map_err(fail)?;
    let frames = batch.frames();
    let draw = NoiseDraw::sample(&s, &[windows.len(), frames, cache.basis.components()], &mut rng, DType::F32).map_err(fail)?;
    let eps = drumdiff::diffusion::eps_loss_with(&batch, &s, &draw, |x, _| Ok((x * 0.5)?)).map_err(fail)?;
    let latent = LatentMap::new(&cache.basis, DType::F32).map_err(fail)?;
    let books32 = FrozenCodebooks::new(stack, DType::F32).map_err(fail)?;
    let targets: Vec<_> = windows.iter().map(|w| &w.codes).collect();
    let x0_hat = || eps.x0_hat(&s, &draw);
    let off = AuxLossConfig {
        lambda_ce: 0.0,
        ..AuxLossConfig::default()
    };
    let zero = combined_loss(&eps, x0_hat, &latent, &targets, &batch.mask, &books32, &off).map_err(fail)?;
    let base = scalar(&eps.loss).map_err(fail)?;
    ensure!(scalar(&zero.total).map_err(fail)?.to_bits() == base.to_bits(), "lambda 0 objective differs from eps loss");
    let on = AuxLossConfig {
        lambda_ce: 0.1,
        ..AuxLossConfig::default()
    };
    let weighted = combined_loss(&eps, x0_hat, &latent, &targets, &batch.mask, &books32, &on).map_err(fail)?;
    ensure!(scalar(&weighted.total).map_err(fail)? != base, "auxiliary term has no effect at lambda 0.1");

    let codes = &windows[0].codes;
    let entries = books.target_entries(&[codes], codes.frames()).map_err(fail)?;
    let y = pad_frames(&[&windows[0].y], DType::F64).map_err(fail)?;
    let rs = residuals(&y, &entries).map_err(fail)?;
    ensure!(
        tensor_to_vec(&rs[0]).map_err(fail)? == tensor_to_vec(&y).map_err(fail)?,
        "first residual is not the latent"
    );
    for k in 0..rs.len() - 1 {
        let next = tensor_to_vec(&(&rs[k] - &entries[k]).map_err(fail)?).map_err(fail)?;
        ensure!(next == tensor_to_vec(&rs[k + 1]).map_err(fail)?, "residual {k} does not telescope");
    }
    Ok(format!("{cells} (frame, codebook) orderings, lambda 0 bitwise, {} residual stages", rs.len()))
}

fn overfit_smoke() -> Outcome {
    let r = overfit(2000).map_err(fail)?;
    let ratio = r.loss_ratio();
    let gap = r.mel_gap();
    let summary = format!(
        "{} windows, {} steps: eps loss {:.4} -> {:.4} ({:.1}%), mel MAE {:.2} dB vs ceiling {:.2} dB",
        r.windows,
        r.steps,
        r.initial_loss,
        r.final_loss,
        100.0 * ratio,
        r.sample_mel_mae,
        r.ceiling_mel_mae
    );
    ensure!(r.steps == 2000, "{summary}: stopped early");
    ensure!(ratio < 0.25, "{summary}: loss ratio above 25%");
    ensure!(gap <= 3.0, "{summary}: {gap:.2} dB above the ceiling");
    Ok(summary)
}

fn exact_sign_flip(d: &[f64]) -> f64 {
    let n = d.len();
    let observed = (d.iter().sum::<f64>() / n as f64).abs();
    let hits = (0..1u32 << n)
        .filter(|mask| {
            let s: f64 = d.iter().enumerate().map(|(i, v)| if mask >> i & 1 == 1 { -v } else { *v }).sum();
            (s / n as f64).abs() >= observed * (1.0 - 1e-12)
        })
        .count();
    hits as f64 / (1u64 << n) as f64
}

fn stats_oracles() -> Outcome {
    let tol = 3.0 / (RESAMPLES as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for n in 1..=10 {
        for shift in [0.0, 0.4, 1.0] {
            let d: Vec<f64> = (0..n).map(|_| shift + rng.sample::<f64, _>(StandardNormal)).collect();
            let exact = exact_sign_flip(&d);
            let p = sign_flip_test(&d, RESAMPLES, rng.random()).map_err(fail)?;
            ensure!((p - exact).abs() <= tol, "n {n}: sign flip {p} vs exact {exact}");
            worst = worst.max((p - exact).abs());
        }
    }
    for (p, expected) in [
        (vec![0.01, 0.04], vec![0.02, 0.04]),
        (vec![0.04, 0.01], vec![0.04, 0.02]),
        (vec![0.01, 0.02, 0.03], vec![0.03, 0.04, 0.04]),
        (vec![0.3, 0.6], vec![0.6, 0.6]),
        (vec![0.5, 0.9, 0.01], vec![1.0, 1.0, 0.03]),
    ] {
        let got = holm_adjust(&p);
        let close = got.iter().zip(&expected).all(|(a, b)| (a - b).abs() < 1e-12);
        ensure!(close, "Holm {p:?} -> {got:?}, expected {expected:?}");
    }
    for c in [0.0, 0.25, -3.7, 1e-3] {
        let (lo, hi) = bootstrap_ci(&vec![c; 17], RESAMPLES, LEVEL, 9).map_err(fail)?;
        ensure!(lo == c && hi == c, "constant {c}: interval [{lo}, {hi}]");
    }
    Ok(format!("sign flip within {worst:.3} of exact (tolerance {tol:.3}), Holm cases, constant bootstrap"))
}

fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(|e| e.as_slice()).collect()
}

fn fad_machinery() -> Outcome {
    let gaussian_set = |n: usize, dim: usize, offset: f64, seed: u64| -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..dim).map(|_| offset + rng.sample::<f64, _>(StandardNormal)).collect()).collect()
    };
    let set = gaussian_set(200, 128, 0.0, 1);
    let same = frechet_distance(&refs(&set), &refs(&set)).map_err(fail)?;
    ensure!(same <= 1e-6, "identical sets: {same}");

    let d = 1.5f64;
    let mut errors = Vec::new();
    for (i, n) in [100usize, 1000, 20_000].into_iter().enumerate() {
        let a = gaussian_set(n, 1, 0.0, 10 + i as u64);
        let b = gaussian_set(n, 1, d, 20 + i as u64);
        errors.push((frechet_distance(&refs(&a), &refs(&b)).map_err(fail)? - d * d).abs());
    }
    ensure!(errors[2] < 0.05, "1-D offset at 20000 draws: error {:.4}", errors[2]);
    ensure!(errors[2] <= errors[0], "error did not shrink with sample size: {errors:?}");
    let a = gaussian_set(2000, 1, 0.0, 3);
    let b = gaussian_set(2000, 1, d, 4);
    let inf = fad_infinity(&a, &b, DEFAULT_RUNS, 7).map_err(fail)?;
    ensure!((inf.fad_inf - d * d).abs() < 0.15, "extrapolated {} vs {}", inf.fad_inf, d * d);
    ensure!(inf.intercepts.len() == 8, "{} runs", inf.intercepts.len());
    ensure!(inf.r2.is_finite() && inf.r2 <= 1.0, "r2 {}", inf.r2);
    Ok(format!(
        "identical {same:.1e}, offset errors {:.4}/{:.4}/{:.4}, fad_inf {:.4} (d^2 {:.2}), r2 {:.3}, 8 runs",
        errors[0],
        errors[1],
        errors[2],
        inf.fad_inf,
        d * d,
        inf.r2
    ))
}

fn end_to_end() -> Outcome {
    let cache = desk_cache();
    let config = RunConfig {
        epochs: 1,
        max_steps: Some(2),
        ..RunConfig::default()
    };
    let data = TrainingData::from_cache(cache, &config).map_err(fail)?;
    let checkpoints: Vec<Checkpoint> = ModelKind::planned(&config)
        .into_iter()
        .map(|k| train_on(&data, &cache.basis, &cache.codec, &config, k, 1))
        .collect::<Result<_, _>>()
        .map_err(fail)?;
    let a = evaluate(cache, &checkpoints, &config).map_err(fail)?;
    let b = evaluate(cache, &checkpoints, &config).map_err(fail)?;
    ensure!(a.metric_csv() == b.metric_csv(), "metrics.csv differs between runs");
    ensure!(a.contrast_csv() == b.contrast_csv(), "contrasts.csv differs between runs");
    ensure!(a.keys.len() == TEST_WINDOWS, "{} test windows", a.keys.len());
    let diffusion: Vec<_> = a.runtime.iter().filter(|r| r.system.starts_with("diffusion")).collect();
    ensure!(diffusion.len() == config.diffusion_steps.len() + config.ce_steps.len(), "{} diffusion rows", diffusion.len());
    let worst = diffusion.iter().max_by(|x, y| x.rtf.total_cmp(&y.rtf)).unwrap();
    for r in a.runtime.iter().chain(&b.runtime).filter(|r| r.system.starts_with("diffusion")) {
        ensure!(r.rtf < 1.0, "{} RTF {:.3}", r.system, r.rtf);
    }
    Ok(format!(
        "{} windows, {} rows and {} contrasts identical across runs, worst diffusion RTF {:.3} ({})",
        a.keys.len(),
        a.rows.len(),
        a.contrasts.len(),
        worst.rtf,
        worst.system
    ))
}

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let secs = |s| Some(Duration::from_secs(s));
    let criteria = [
        Criterion { name: "pca_rank", budget: secs(10), run: pca_rank },
        Criterion { name: "pca_round_trip", budget: secs(10), run: pca_round_trip },
        Criterion { name: "ceiling_equalities", budget: secs(60), run: ceiling_equalities },
        Criterion { name: "diffusion_correctness", budget: secs(120), run: diffusion_correctness },
        Criterion { name: "rvq_ce_correctness", budget: secs(30), run: rvq_ce_correctness },
        Criterion { name: "overfit_smoke", budget: secs(15 * 60), run: overfit_smoke },
        Criterion { name: "stats_oracles", budget: secs(60), run: stats_oracles },
        Criterion { name: "fad_machinery", budget: secs(60), run: fad_machinery },
        Criterion { name: "end_to_end_determinism", budget: None, run: end_to_end },
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    // The shared cache is not charged to any single criterion.
    if criteria.iter().any(|c| filters.is_empty() || filters.iter().any(|f| c.name.contains(f.as_str()))) {
        desk_cache();
    }
    let mut failed = 0;
    let mut ran = 0;
    for c in &criteria {
        if !filters.is_empty() && !filters.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.budget) {
            (Ok(msg), Some(b)) if elapsed > b => Err(format!("{msg}; took {:.1}s, budget {}s", elapsed.as_secs_f64(), b.as_secs())),
            (o, _) => o,
        };
        let budget = c.budget.map_or(String::new(), |b| format!(" / {}s", b.as_secs()));
        match outcome {
            Ok(msg) => println!("PASS {} [{:.1}s{budget}] {msg}", c.name, elapsed.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("FAIL {} [{:.1}s{budget}] {msg}", c.name, elapsed.as_secs_f64());
            }
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

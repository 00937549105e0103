//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Failures are reported, not fatal, so the rest of the workspace tests still
//! run; set `ACCEPTANCE_STRICT=1` to exit nonzero when any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use anyhow::{ensure, Result};
use glocal_ib::data::{
    apply_mask, make_synthetic, MaskPattern, MaskSpec, SyntheticSpec, TimeSeriesWindow,
};
use glocal_ib::diff::{grad_check_many, Tape, Tensor, Var};
use glocal_ib::eval::{
    alignment_score, evaluate_masked, masked_metrics, run_ablation, AblationConfig,
};
use glocal_ib::losses::{
    glo1_loss, glo2_loss, loc_loss, reg_loss, weighted_total, GloVariant, LossWeights,
};
use glocal_ib::model::checkpoint::Checkpoint;
use glocal_ib::model::{
    decode_rows, encode_rows, project_rows, reparameterize, reparameterize_vars, standard_normal,
    to_rows, LatentDistribution, ModelConfig, ModelParams,
};
use glocal_ib::training::{prepare, TrainConfig, Trainer, WindowConfig};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict {
        pass,
        detail: detail.into(),
    })
}

fn run(n: usize, name: &str, check: impl FnOnce() -> Result<Verdict>) -> bool {
    let start = Instant::now();
    let (pass, detail) = match check() {
        Ok(v) => (v.pass, v.detail),
        Err(e) => (false, format!("error: {e:#}")),
    };
    let status = if pass { "PASS" } else { "FAIL" };
    println!(
        "criterion {n} ({name}): {status}  {detail}  [{:.1}s]",
        start.elapsed().as_secs_f64()
    );
    pass
}

fn bits(p: &ModelParams) -> Vec<u64> {
    p.named()
        .iter()
        .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect()
}

/// Fully observed window of standard normal values.
fn observed(t: usize, n: usize, seed: u64) -> TimeSeriesWindow {
    TimeSeriesWindow::unmasked(standard_normal(&[t, n], seed), Tensor::ones(&[t, n]), 0).unwrap()
}

// ---------------------------------------------------------------- criterion 1

#[derive(Clone, Copy)]
enum Objective {
    Reg,
    Loc,
    Glo1,
    Glo2,
    Total(GloVariant),
}

/// Scalar objective of the tiny model as a function of its parameter leaves.
/// The alignment target is a constant computed from the base parameters, the
/// value the stop-gradient branch takes at the evaluation point.
fn objective(
    tape: &mut Tape,
    leaves: &[Var],
    base: &ModelParams,
    batch: &[TimeSeriesWindow],
    target: &Tensor,
    which: Objective,
) -> glocal_ib::Result<Var> {
    let mut k = 0;
    let p = base.map(|_, _| {
        k += 1;
        leaves[k - 1]
    });
    let x_in = to_rows(&batch.iter().map(|w| &w.x_masked).collect::<Vec<_>>())?;
    let x_full = to_rows(&batch.iter().map(|w| &w.x).collect::<Vec<_>>())?;
    let m = to_rows(&batch.iter().map(|w| &w.m_obs).collect::<Vec<_>>())?;
    let xv = tape.constant(x_in);
    let (mu, sigma) = encode_rows(tape, &p.encoder, &base.config, xv)?;
    let z = reparameterize_vars(tape, mu, sigma, 77)?;
    let x_hat = decode_rows(tape, &p.decoder, z)?;
    let x_true = tape.constant(x_full);
    let mask = tape.constant(m);
    let tgt = tape.constant(target.clone());
    match which {
        Objective::Reg => reg_loss(tape, mu, sigma),
        Objective::Loc => loc_loss(tape, x_true, x_hat, mask),
        Objective::Glo1 => {
            let a = project_rows(tape, &p.projector, z)?;
            glo1_loss(tape, a, tgt, 0.1)
        }
        Objective::Glo2 => {
            let a = project_rows(tape, &p.projector, z)?;
            glo2_loss(tape, a, tgt)
        }
        Objective::Total(variant) => {
            let w = LossWeights {
                glo_variant: variant,
                ..LossWeights::default()
            };
            let reg = reg_loss(tape, mu, sigma)?;
            let loc = loc_loss(tape, x_true, x_hat, mask)?;
            let a = project_rows(tape, &p.projector, z)?;
            let glo = match variant {
                GloVariant::InfoNce => glo1_loss(tape, a, tgt, w.temperature)?,
                _ => glo2_loss(tape, a, tgt)?,
            };
            weighted_total(tape, &w, reg, loc, Some(glo))
        }
    }
}

fn gradient_correctness() -> Result<Verdict> {
    let start = Instant::now();
    let objectives = [
        ("reg", Objective::Reg),
        ("loc", Objective::Loc),
        ("glo1", Objective::Glo1),
        ("glo2", Objective::Glo2),
        ("total/glo2", Objective::Total(GloVariant::Align)),
        ("total/glo1", Objective::Total(GloVariant::InfoNce)),
    ];
    let mut worst = vec![0.0f64; objectives.len()];
    for trial in 0..20u64 {
        let cfg = ModelConfig {
            attention: trial % 2 == 1,
            ..ModelConfig::new(8, 2, 4)
        };
        let base = ModelParams::init(cfg, trial)?;
        let batch: Vec<TimeSeriesWindow> = (0..4)
            .map(|i| {
                let spec = MaskSpec {
                    rate: 0.5,
                    seed: trial * 10 + i,
                    ..MaskSpec::default()
                };
                apply_mask(&observed(8, 2, trial * 100 + i), &spec)
            })
            .collect::<glocal_ib::Result<_>>()?;
        let full: Vec<&Tensor> = batch.iter().map(|w| &w.x).collect();
        let target = base.encode_batch(&full)?.mu;
        let inputs: Vec<Tensor> = base.named().into_iter().map(|(_, t)| t).collect();
        for (slot, &(_, which)) in objectives.iter().enumerate() {
            let f = |tape: &mut Tape, leaves: &[Var]| {
                objective(tape, leaves, &base, &batch, &target, which)
            };
            let rep = grad_check_many(f, &inputs, 1e-5, 1e-3)?;
            worst[slot] = worst[slot].max(rep.max_rel_error);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let summary: Vec<String> = objectives
        .iter()
        .zip(&worst)
        .map(|((name, _), w)| format!("{name} {w:.2e}"))
        .collect();
    let pass = worst.iter().all(|&w| w < 1e-3) && elapsed < 60.0;
    verdict(
        pass,
        format!(
            "max rel error over 20 trials: {}; {elapsed:.1}s",
            summary.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

/// Monte-Carlo estimate of KL(q || p) as the mean of `log q(z) - log p(z)`
/// for `z ~ q`, q diagonal Gaussian, p standard normal.
fn mc_kl(mu: &[f64], sigma: &[f64], samples: usize, rng: &mut StdRng) -> f64 {
    let mut acc = 0.0;
    for _ in 0..samples {
        let mut log_ratio = 0.0;
        for (&m, &s) in mu.iter().zip(sigma) {
            let e: f64 = rng.sample(StandardNormal);
            let z = m + s * e;
            log_ratio += -s.ln() - 0.5 * e * e + 0.5 * z * z;
        }
        acc += log_ratio;
    }
    acc / samples as f64
}

fn kl_oracle() -> Result<Verdict> {
    let mut rng = StdRng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut min_kl = f64::INFINITY;
    for _ in 0..50 {
        let mu: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sigma: Vec<f64> = (0..2).map(|_| rng.random_range(0.5..1.5)).collect();
        let mut tape = Tape::new();
        let m = tape.constant(Tensor::vector(mu.clone()));
        let s = tape.constant(Tensor::vector(sigma.clone()));
        let out = reg_loss(&mut tape, m, s)?;
        let kl = tape.value(out)?.item()?;
        let mc = mc_kl(&mu, &sigma, 1_000_000, &mut rng);
        worst = worst.max((kl - mc).abs());
        min_kl = min_kl.min(kl);
    }
    verdict(
        worst < 0.01 && min_kl >= 0.0,
        format!("50 pairs, max |closed form - MC(1e6)| = {worst:.4}, min value {min_kl:.4}"),
    )
}

// ---------------------------------------------------------------- criterion 3

/// Per-anchor softmax cross-entropy over cosine similarities, coded directly.
fn brute_infonce(a: &[Vec<f64>], b: &[Vec<f64>], tau: f64) -> f64 {
    let unit = |v: &Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let (a, b): (Vec<_>, Vec<_>) = (a.iter().map(unit).collect(), b.iter().map(unit).collect());
    let mut total = 0.0;
    for i in 0..a.len() {
        let logits: Vec<f64> = b
            .iter()
            .map(|bj| a[i].iter().zip(bj).map(|(x, y)| x * y).sum::<f64>() / tau)
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += lse - logits[i];
    }
    total / a.len() as f64
}

fn infonce_value(a: &Tensor, b: &Tensor, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let l = glo1_loss(&mut tape, av, bv, tau)?;
    Ok(tape.value(l)?.item()?)
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    t.data().chunks(t.shape()[1]).map(|r| r.to_vec()).collect()
}

fn infonce_oracle() -> Result<Verdict> {
    let mut worst: f64 = 0.0;
    let mut worst_identical: f64 = 0.0;
    for rows in [4usize, 8, 16] {
        for seed in 0..10u64 {
            let a = standard_normal(&[rows, 6], seed * 2 + rows as u64);
            let b = standard_normal(&[rows, 6], seed * 2 + 1 + rows as u64 * 1000);
            for tau in [0.1, 0.5, 1.0] {
                let got = infonce_value(&a, &b, tau)?;
                worst = worst.max((got - brute_infonce(&rows_of(&a), &rows_of(&b), tau)).abs());
            }
        }
        let row = standard_normal(&[1, 6], rows as u64);
        let same = Tensor::new(&[rows, 6], row.data().repeat(rows))?;
        let got = infonce_value(&same, &same, 0.1)?;
        worst_identical = worst_identical.max((got - (rows as f64).ln()).abs());
    }
    verdict(
        worst < 1e-10 && worst_identical < 1e-12,
        format!("B*N in {{4,8,16}}: max |diff| vs brute force {worst:.1e}; identical rows vs log(B*N) {worst_identical:.1e}"),
    )
}

// ---------------------------------------------------------------- criterion 4

fn reparameterization() -> Result<Verdict> {
    let (n, d) = (100_000usize, 4usize);
    let dist = LatentDistribution {
        mu: Tensor::zeros(&[n, d]),
        sigma: Tensor::ones(&[n, d]),
        z: Tensor::zeros(&[n, d]),
    };
    let z = reparameterize(&dist, 31)?;
    let (mut max_mean, mut var_lo, mut var_hi): (f64, f64, f64) = (0.0, f64::INFINITY, 0.0);
    for j in 0..d {
        let col: Vec<f64> = (0..n).map(|i| z.data()[i * d + j]).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        max_mean = max_mean.max(mean.abs());
        var_lo = var_lo.min(var);
        var_hi = var_hi.max(var);
    }
    let stats_ok = max_mean < 0.02 && var_lo >= 0.97 && var_hi <= 1.03;

    // Inference path: encoder output z is mu, and imputations decode mu.
    let mut exact = true;
    for (seed, attention) in [(1u64, false), (2, true)] {
        let params = ModelParams::init(
            ModelConfig {
                attention,
                ..ModelConfig::new(16, 3, 8)
            },
            seed,
        )?;
        let windows: Vec<TimeSeriesWindow> = (0..5)
            .map(|i| {
                apply_mask(
                    &observed(16, 3, seed * 10 + i),
                    &MaskSpec {
                        seed: i,
                        ..MaskSpec::default()
                    },
                )
            })
            .collect::<glocal_ib::Result<_>>()?;
        let inputs: Vec<&Tensor> = windows.iter().map(|w| &w.x_masked).collect();
        let latent = params.encode_batch(&inputs)?;
        exact &= latent
            .z
            .data()
            .iter()
            .zip(latent.mu.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        let decoded = params.decode_batch(&latent.mu)?;
        let imputed = params.impute_normalized(&windows.iter().collect::<Vec<_>>())?;
        for ((w, dec), imp) in windows.iter().zip(&decoded).zip(&imputed) {
            let vis = w.visible();
            for i in 0..vis.len() {
                if vis.data()[i] == 0.0 {
                    exact &= dec.data()[i].to_bits() == imp.data()[i].to_bits();
                }
            }
        }
    }
    verdict(
        stats_ok && exact,
        format!(
            "1e5 samples: max |mean| {max_mean:.4}, variance in [{var_lo:.4}, {var_hi:.4}]; inference z == mu bit-exact: {exact}"
        ),
    )
}

// ---------------------------------------------------------------- criterion 5

/// Maximal runs of hidden steps per variable, in time order.
fn hidden_runs(w: &TimeSeriesWindow, var: usize) -> Vec<(usize, usize)> {
    let (t, n) = (w.seq_len(), w.n_vars());
    let mut runs = Vec::new();
    let mut start = None;
    for s in 0..=t {
        let hidden = s < t && w.m_art.data()[s * n + var] == 0.0;
        match (hidden, start) {
            (true, None) => start = Some(s),
            (false, Some(b)) => {
                runs.push((b, s - b));
                start = None;
            }
            _ => {}
        }
    }
    runs
}

fn masking_statistics() -> Result<Verdict> {
    let mut worst_rate: f64 = 0.0;
    for rate in [0.1, 0.5, 0.9] {
        for seed in 0..10u64 {
            let spec = MaskSpec {
                rate,
                seed,
                ..MaskSpec::default()
            };
            let m = apply_mask(&observed(100, 100, seed), &spec)?;
            let hidden = m.m_art.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e4;
            worst_rate = worst_rate.max((hidden - rate).abs());
        }
    }
    let point_ok = worst_rate <= 0.02;

    let (mut block_ok, mut runs_seen) = (true, 0usize);
    let block_len = 8;
    for rate in [0.1, 0.3, 0.5, 0.7] {
        for seed in 0..50u64 {
            let spec = MaskSpec {
                pattern: MaskPattern::Block,
                rate,
                block_len,
                seed,
            };
            let m = apply_mask(&observed(96, 7, seed), &spec)?;
            for var in 0..7 {
                let runs = hidden_runs(&m, var);
                runs_seen += runs.len();
                let (last, full) = runs
                    .split_last()
                    .map_or((None, &[][..]), |(l, f)| (Some(l), f));
                block_ok &= full.iter().all(|&(_, len)| len == block_len);
                block_ok &= last.is_none_or(|&(_, len)| len >= 1 && len <= block_len);
                let mut declared: Vec<(usize, usize)> = m
                    .hidden_blocks
                    .iter()
                    .filter(|b| b.var == var)
                    .map(|b| (b.start, b.len))
                    .collect();
                declared.sort_unstable();
                block_ok &= declared == runs;
            }
        }
    }

    let mut disjoint = 0;
    for seed in 0..1000u64 {
        let x = standard_normal(&[24, 4], seed);
        let obs =
            standard_normal(&[24, 4], seed ^ 0x5eed).map(|v| if v > -1.0 { 1.0 } else { 0.0 });
        let w = TimeSeriesWindow::unmasked(x, obs, 0)?;
        let spec = MaskSpec {
            pattern: if seed % 2 == 0 {
                MaskPattern::Point
            } else {
                MaskPattern::Block
            },
            rate: 0.1 + 0.8 * (seed % 9) as f64 / 8.0,
            block_len: 4,
            seed,
        };
        let m = apply_mask(&w, &spec)?;
        let (eval, vis) = (m.eval_mask(), m.visible());
        if eval
            .data()
            .iter()
            .zip(vis.data())
            .all(|(e, v)| e * v == 0.0)
        {
            disjoint += 1;
        }
    }
    verdict(
        point_ok && block_ok && disjoint == 1000,
        format!(
            "point max |realized - rate| {worst_rate:.4} over 1e4-entry windows; block runs of length {block_len} only: {block_ok} ({runs_seen} runs); eval/visible disjoint in {disjoint}/1000"
        ),
    )
}

// ------------------------------------------------------------ criteria 6 and 7

struct AblationResult {
    seed: u64,
    rate: f64,
    config: AblationConfig,
    mae: f64,
    alignment: f64,
    secs: f64,
}

fn ablation_protocol() -> Result<Vec<AblationResult>> {
    let mut out = Vec::new();
    for seed in 0..5u64 {
        let ds = make_synthetic(SyntheticSpec {
            n_vars: 7,
            steps: 2000,
            seed,
            noise_std: 0.1,
        })?;
        let mut window = WindowConfig::new(96);
        window.train_stride = 1;
        let data = prepare(&ds, &window)?;
        let train = TrainConfig {
            seed,
            eval_seed: 1000 + seed,
            ..TrainConfig::default()
        };
        for rate in [0.5, 0.7] {
            for config in glocal_ib::eval::ALL_ABLATIONS {
                let start = Instant::now();
                let grid = run_ablation(
                    &data,
                    ModelConfig::new(96, 7, 32),
                    &train,
                    &[config],
                    &[rate],
                    1,
                )?;
                let row = grid.get(config, rate).expect("row for requested config");
                out.push(AblationResult {
                    seed,
                    rate,
                    config,
                    mae: row.metrics.mae,
                    alignment: row.alignment,
                    secs: start.elapsed().as_secs_f64(),
                });
            }
        }
    }
    Ok(out)
}

fn find(
    results: &[AblationResult],
    seed: u64,
    rate: f64,
    config: AblationConfig,
) -> &AblationResult {
    results
        .iter()
        .find(|r| r.seed == seed && r.rate == rate && r.config == config)
        .expect("protocol covers every cell")
}

fn ablation_direction(results: &[AblationResult]) -> Result<Verdict> {
    let mut parts = Vec::new();
    let mut pass = true;
    for rate in [0.5, 0.7] {
        let mut wins = 0;
        let mut pairs = Vec::new();
        for seed in 0..5 {
            let e = find(results, seed, rate, AblationConfig::Entire).mae;
            let o = find(results, seed, rate, AblationConfig::OnlyLoc).mae;
            if e <= o {
                wins += 1;
            }
            pairs.push(format!("{e:.3}/{o:.3}"));
        }
        pass &= wins >= 4;
        parts.push(format!(
            "rate {rate}: entire <= only_loc in {wins}/5 (mae {})",
            pairs.join(" ")
        ));
    }
    let slowest = results.iter().map(|r| r.secs).fold(0.0, f64::max);
    pass &= slowest < 900.0;
    parts.push(format!("slowest run {slowest:.1}s"));
    verdict(pass, parts.join("; "))
}

fn alignment_diagnostic(results: &[AblationResult]) -> Result<Verdict> {
    let count = |with: AblationConfig, without: AblationConfig| {
        (0..5)
            .filter(|&s| {
                find(results, s, 0.5, with).alignment > find(results, s, 0.5, without).alignment
            })
            .count()
    };
    let wins = count(AblationConfig::Entire, AblationConfig::WithoutGlo);
    let no_reg_wins = count(AblationConfig::WithoutReg, AblationConfig::OnlyLoc);

    let mut exact = true;
    for (seed, attention) in [(3u64, false), (4, true), (5, false)] {
        let params = ModelParams::init(
            ModelConfig {
                attention,
                ..ModelConfig::new(24, 4, 8)
            },
            seed,
        )?;
        let windows: Vec<TimeSeriesWindow> = (0..6)
            .map(|i| {
                apply_mask(
                    &observed(24, 4, seed * 7 + i),
                    &MaskSpec {
                        rate: 0.0,
                        seed: i,
                        ..MaskSpec::default()
                    },
                )
            })
            .collect::<glocal_ib::Result<_>>()?;
        exact &= alignment_score(&params, &windows)? == 1.0;
    }
    verdict(
        wins >= 4 && exact,
        format!(
            "rate 0.5: entire > wo_glo in {wins}/5 seeds (with alpha=0: wo_reg > only_loc in {no_reg_wins}/5); rate 0 score exactly 1.0: {exact}"
        ),
    )
}

// ---------------------------------------------------------------- criterion 8

fn cli(args: &[&str]) -> Result<()> {
    let out = Command::new(env!("CARGO_BIN_EXE_glocal-ib"))
        .args(args)
        .output()?;
    ensure!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn determinism() -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let data = dir.path().join("data.csv");
    cli(&[
        "synth",
        "--vars",
        "3",
        "--steps",
        "400",
        "--seed",
        "5",
        "--out",
        s(&data),
    ])?;
    let cfg = dir.path().join("run.conf");
    std::fs::write(
        &cfg,
        format!(
            "data.source = {}\nwindow.length = 24\nmodel.d_model = 8\ntrain.epochs = 3\ntrain.batch_size = 8\n",
            s(&data)
        ),
    )?;
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let over = format!("output_dir={}", s(&dir.path().join(name)));
        cli(&["train", "--config", s(&cfg), "--override", &over])?;
        cli(&[
            "eval",
            "--config",
            s(&cfg),
            "--rates",
            "0.1,0.5,0.9",
            "--override",
            &over,
        ])?;
        reports.push((
            std::fs::read(dir.path().join(name).join("report.csv"))?,
            std::fs::read(dir.path().join(name).join("alignment.csv"))?,
        ));
    }
    let reports_equal = reports[0] == reports[1];

    let batches: Vec<Vec<TimeSeriesWindow>> = (0..5u64)
        .map(|b| {
            (0..4)
                .map(|i| {
                    apply_mask(
                        &observed(8, 2, b * 4 + i),
                        &MaskSpec {
                            seed: b * 4 + i,
                            ..MaskSpec::default()
                        },
                    )
                })
                .collect::<glocal_ib::Result<_>>()
        })
        .collect::<glocal_ib::Result<_>>()?;
    let step = |t: &mut Trainer, i: usize| {
        t.train_step(&batches[i].iter().collect::<Vec<_>>())
            .map(|_| ())
    };
    let cfg = TrainConfig {
        seed: 9,
        ..TrainConfig::default()
    };
    let mut straight = Trainer::init(ModelConfig::new(8, 2, 4), cfg)?;
    step(&mut straight, 0)?;
    step(&mut straight, 1)?;
    let ck_path = dir.path().join("mid.ckpt");
    straight.checkpoint(None).save(&ck_path)?;
    for i in 2..5 {
        step(&mut straight, i)?;
    }
    let mut resumed = Trainer::from_checkpoint(&Checkpoint::load(&ck_path)?, cfg)?;
    for i in 2..5 {
        step(&mut resumed, i)?;
    }
    let resume_equal =
        bits(&resumed.params) == bits(&straight.params) && resumed.state == straight.state;
    verdict(
        reports_equal && resume_equal,
        format!("train+eval twice, report CSVs byte-identical: {reports_equal}; save/load/resume 3 steps bit-exact: {resume_equal}"),
    )
}

// ---------------------------------------------------------------- criterion 9

fn metric_contract() -> Result<Verdict> {
    let mut params = ModelParams::zeros(ModelConfig::new(4, 1, 2))?;
    params.decoder.output.bias = Tensor::vector(vec![1.0, 0.0, 0.0, 0.0]);
    let x = Tensor::new(&[4, 1], vec![1.0, -1.0, 2.0, 0.0])?;
    let mut w = TimeSeriesWindow::unmasked(x, Tensor::ones(&[4, 1]), 0)?;
    w.m_art = Tensor::zeros(&[4, 1]);
    w.x_masked = Tensor::zeros(&[4, 1]);
    let m = evaluate_masked(&params, std::slice::from_ref(&w))?;
    let exact = m.mae == 0.75 && m.mse == 1.25 && m.n_points == 4;

    let mut invariant = true;
    for seed in 0..20u64 {
        let win = apply_mask(
            &observed(12, 3, seed),
            &MaskSpec {
                seed,
                ..MaskSpec::default()
            },
        )?;
        let preds = standard_normal(&[12, 3], seed + 500);
        let vis = win.visible();
        let moved = Tensor::new(
            &[12, 3],
            preds
                .data()
                .iter()
                .zip(vis.data())
                .map(|(&p, &v)| if v == 1.0 { p + 1e3 } else { p })
                .collect(),
        )?;
        let score = |p: &Tensor| masked_metrics(&[win.x.clone()], &[p.clone()], &[win.eval_mask()]);
        let (a, b) = (score(&preds)?, score(&moved)?);
        invariant &= a == b;
    }
    verdict(
        exact && invariant,
        format!(
            "hand case mae {} mse {}; visible perturbation leaves metrics unchanged: {invariant}",
            m.mae, m.mse
        ),
    )
}

fn main() {
    let mut passed = Vec::new();
    passed.push(run(1, "gradient correctness", gradient_correctness));
    passed.push(run(2, "KL oracle", kl_oracle));
    passed.push(run(3, "InfoNCE oracle", infonce_oracle));
    passed.push(run(4, "reparameterization statistics", reparameterization));
    passed.push(run(5, "masking statistics", masking_statistics));
    let start = Instant::now();
    let protocol = ablation_protocol();
    println!(
        "ablation protocol: 40 runs in {:.1}s",
        start.elapsed().as_secs_f64()
    );
    let (six, seven) = match &protocol {
        Ok(results) => (ablation_direction(results), alignment_diagnostic(results)),
        Err(e) => (Err(anyhow::anyhow!("{e:#}")), Err(anyhow::anyhow!("{e:#}"))),
    };
    passed.push(run(6, "ablation direction", || six));
    passed.push(run(7, "alignment diagnostic", || seven));
    passed.push(run(8, "determinism and persistence", determinism));
    passed.push(run(9, "metric contract", metric_contract));
    let n_pass = passed.iter().filter(|&&p| p).count();
    println!("acceptance: {n_pass}/{} criteria passed", passed.len());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && n_pass != passed.len() {
        std::process::exit(1);
    }
}

//! Acceptance suite. Prints one `criterion N: PASS|FAIL` line per criterion
//! and exits non-zero if any fails. Positional arguments select criteria by
//! number (`cargo test --test acceptance -- 1 3`).
//!
//! Criteria 5 to 9 share three 1000-iteration training runs (full model, no
//! latent-consistency loss, no supervised class loss) on the same data and
//! seed, evaluated on a held-out dataset.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use upgan::config::TrainConfig;
use upgan::datagen::{
    generate_dataset, ClassLabel, Dataset, DatasetOptions, DomainSample, DEFAULT_ARTICULATION,
};
use upgan::evaluation::{
    class_adherence, diversity_score, instance_adherence, linear_separability, nearest_neighbors,
    project_latents, ssim,
};
use upgan::exec::Strategy;
use upgan::gradcheck::{gradcheck_suite, GradcheckOptions};
use upgan::imaging::ImageTensor;
use upgan::inference::{infer_sample, load_model};
use upgan::losses::{self, compose, Group, LossParts, LossWeights, Term};
use upgan::models::{NetworkId, Networks};
use upgan::trainer::{self, compute_terms, draw_noise, network_group, Batch, TrainState};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

// ---------------------------------------------------------------------------
// 1. loss goldens

fn t64(data: &[f64], shape: &[usize]) -> Tensor {
    Tensor::from_slice(data, shape, &Device::Cpu).unwrap()
}

fn s(t: Tensor) -> f64 {
    losses::scalar(&t).unwrap()
}

fn randv(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    s / n as f64
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shape = [2, 1, 4, 4];
    let n = 32;
    let ones = vec![1.0; n];
    let zeros = vec![0.0; n];
    let mut cases: Vec<(&str, f64, f64)> = Vec::new();
    let d = |a: &[f64], b: &[f64], c: &[f64], e: &[f64]| {
        s(losses::lsgan_d_loss(
            &t64(a, &shape),
            &t64(b, &shape),
            &t64(c, &shape),
            &t64(e, &shape),
        )
        .unwrap())
    };
    cases.push(("lsgan_d perfect", d(&ones, &ones, &zeros, &zeros), 0.0));
    cases.push(("lsgan_d worst", d(&zeros, &zeros, &ones, &ones), 4.0));
    let r: Vec<Vec<f64>> = (0..4).map(|_| randv(&mut rng, n, -2.0, 2.0)).collect();
    let want = mean(r[0].iter().map(|v| (v - 1.0).powi(2)))
        + mean(r[1].iter().map(|v| (v - 1.0).powi(2)))
        + mean(r[2].iter().map(|v| v * v))
        + mean(r[3].iter().map(|v| v * v));
    cases.push(("lsgan_d random", d(&r[0], &r[1], &r[2], &r[3]), want));

    let g =
        |a: &[f64], b: &[f64]| s(losses::lsgan_g_loss(&t64(a, &shape), &t64(b, &shape)).unwrap());
    cases.push(("lsgan_g win", g(&ones, &ones), 0.0));
    cases.push(("lsgan_g zeros", g(&zeros, &zeros), 2.0));
    let want =
        mean(r[0].iter().map(|v| (v - 1.0).powi(2))) + mean(r[1].iter().map(|v| (v - 1.0).powi(2)));
    cases.push(("lsgan_g random", g(&r[0], &r[1]), want));

    let img = [2, 3, 4, 4];
    let m = 96;
    let x = randv(&mut rng, m, -1.0, 1.0);
    let y = randv(&mut rng, m, -1.0, 1.0);
    let cyc = |a: &[f64], b: &[f64], c: &[f64], e: &[f64]| {
        s(losses::cycle_loss(&t64(a, &img), &t64(b, &img), &t64(c, &img), &t64(e, &img)).unwrap())
    };
    cases.push(("cycle identity", cyc(&x, &x, &y, &y), 0.0));
    let shifted: Vec<f64> = x.iter().map(|v| v + 0.5).collect();
    cases.push(("cycle offset", cyc(&x, &shifted, &y, &y), 0.5));
    let xr = randv(&mut rng, m, -1.0, 1.0);
    let yr = randv(&mut rng, m, -1.0, 1.0);
    let want = mean(x.iter().zip(&xr).map(|(a, b)| (a - b).abs()))
        + mean(y.iter().zip(&yr).map(|(a, b)| (a - b).abs()));
    cases.push(("cycle random", cyc(&x, &xr, &y, &yr), want));

    let kl = |mu: &[f64], lv: &[f64]| {
        s(losses::kl_loss(&t64(mu, &[mu.len()]), &t64(lv, &[lv.len()])).unwrap())
    };
    cases.push(("kl zero", kl(&[0.0, 0.0], &[0.0, 0.0]), 0.0));
    cases.push(("kl unit mean", kl(&[1.0], &[0.0]), 0.5));
    let mu = randv(&mut rng, 10, -2.0, 2.0);
    let lv = randv(&mut rng, 10, -2.0, 2.0);
    let want: f64 = 0.5
        * mu.iter()
            .zip(&lv)
            .map(|(m, v)| v.exp() + m * m - 1.0 - v)
            .sum::<f64>();
    cases.push(("kl random", kl(&mu, &lv), want));

    let lc = |a: &[f64], b: &[f64]| {
        s(losses::latent_consistency_loss(&t64(a, &[a.len()]), &t64(b, &[b.len()])).unwrap())
    };
    let z = randv(&mut rng, 10, -2.0, 2.0);
    cases.push(("latent identity", lc(&z, &z), 0.0));
    cases.push(("latent zeros vs ones", lc(&[0.0; 10], &[1.0; 10]), 1.0));
    let zh = randv(&mut rng, 10, -2.0, 2.0);
    cases.push((
        "latent random",
        lc(&z, &zh),
        mean(z.iter().zip(&zh).map(|(a, b)| (a - b).abs())),
    ));

    let sup = |zs: &[f64], k: usize| {
        let label = ClassLabel::new(k, zs.len()).unwrap();
        s(
            losses::supervision_loss(&t64(zs, &[1, zs.len()]), &[Some(label)])
                .unwrap()
                .unwrap(),
        )
    };
    cases.push(("supervision exact", sup(&[0.0, 1.0], 1), 0.0));
    cases.push(("supervision half", sup(&[0.5, 0.5], 0), 0.5));
    let skipped = losses::supervision_loss(&t64(&[0.3, 0.7], &[1, 2]), &[None])
        .unwrap()
        .is_none();

    let w = LossWeights::default();
    let all_one = LossParts {
        gan_d: 1.0,
        gan_g: 1.0,
        rec: 1.0,
        kl: 1.0,
        c: 1.0,
        s: 1.0,
        s_skipped: false,
    };
    cases.push((
        "compose q group",
        compose(&all_one, &w).unwrap().composite(Group::Q),
        12.01,
    ));
    let zero_w = LossWeights {
        w_gan: 0.0,
        w_cyc: 0.0,
        w_kl: 0.0,
        w_c: 0.0,
        w_s: 0.0,
    };
    let zero_total: f64 = compose(&all_one, &zero_w)
        .unwrap()
        .composites
        .iter()
        .map(|v| v.abs())
        .sum();
    cases.push(("compose zero weights", zero_total, 0.0));
    let p = randv(&mut rng, 6, 0.0, 3.0);
    let parts = LossParts {
        gan_d: p[0],
        gan_g: p[1],
        rec: p[2],
        kl: p[3],
        c: p[4],
        s: p[5],
        s_skipped: false,
    };
    let r = compose(&parts, &w).unwrap();
    let hand = [
        w.w_gan * p[0],
        w.w_gan * p[1] + w.w_cyc * p[2] + w.w_kl * p[3] + w.w_s * p[5],
        w.w_gan * p[1] + w.w_cyc * p[2],
        w.w_gan * p[1] + w.w_cyc * p[2] + w.w_c * p[4],
    ];
    for (k, g) in Group::ORDER.iter().enumerate() {
        cases.push(("compose random", r.composite(*g), hand[k]));
    }
    let negative_rejected = compose(
        &parts,
        &LossWeights {
            w_kl: -1.0,
            ..LossWeights::default()
        },
    )
    .is_err();

    let elapsed = start.elapsed();
    let worst = cases
        .iter()
        .map(|(_, a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let bad: Vec<&str> = cases
        .iter()
        .filter(|(_, a, b)| (a - b).abs() > 1e-6)
        .map(|c| c.0)
        .collect();
    check(
        bad.is_empty() && skipped && negative_rejected && elapsed < Duration::from_secs(1),
        format!(
            "{} goldens, max abs error {worst:.2e}, unlabelled skip {skipped}, negative weight rejected {negative_rejected}, {:.3}s{}",
            cases.len(),
            elapsed.as_secs_f64(),
            if bad.is_empty() { String::new() } else { format!(", failing: {bad:?}") }
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. gradient suite

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let report = gradcheck_suite(&GradcheckOptions::default()).map_err(err)?;
    let elapsed = start.elapsed();
    let worst = report
        .rows
        .iter()
        .map(|r| r.max_rel_error)
        .fold(0.0, f64::max);
    let failing: Vec<String> = report
        .failures()
        .iter()
        .map(|r| {
            format!(
                "{}/{}:{}",
                r.objective,
                r.network.as_str(),
                r.status.as_str()
            )
        })
        .collect();
    check(
        report.passed() && worst < 1e-4 && elapsed < Duration::from_secs(300),
        format!(
            "{} pairs, max rel error {worst:.2e}, {:.1}s{}",
            report.rows.len(),
            elapsed.as_secs_f64(),
            if failing.is_empty() {
                String::new()
            } else {
                format!(", failing: {failing:?}")
            }
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. KL properties

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = 10;
    let draws = 10_000;
    let mut min = f64::INFINITY;
    for _ in 0..draws {
        let mu = randv(&mut rng, d, -3.0, 3.0);
        let lv = randv(&mut rng, d, -3.0, 3.0);
        min = min.min(s(
            losses::kl_loss(&t64(&mu, &[d]), &t64(&lv, &[d])).map_err(err)?
        ));
    }
    let at_zero = s(losses::kl_loss(&t64(&[0.0; 10], &[d]), &t64(&[0.0; 10], &[d])).map_err(err)?);
    let near_zero = s(losses::kl_loss(&t64(&[1e-3], &[1]), &t64(&[0.0], &[1])).map_err(err)?);
    let elapsed = start.elapsed();
    check(
        min > 1e-12 && at_zero.abs() <= 1e-12 && near_zero > 1e-12 && elapsed < Duration::from_secs(1),
        format!(
            "min over {draws} nonzero draws {min:.3e}, at zero {at_zero:.1e}, mu=1e-3 gives {near_zero:.1e}, {:.3}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. schedule fidelity

fn small_dataset(dir: &Path, seed: u64) -> Result<Dataset, String> {
    let opts = DatasetOptions {
        n_x: 16,
        n_y: 16,
        n_classes: 2,
        size: 32,
        seed,
        articulation: DEFAULT_ARTICULATION,
    };
    generate_dataset(&opts, dir, Strategy::default()).map_err(err)?;
    Dataset::load(dir, Strategy::default()).map_err(err)
}

fn has_grad(store: &candle_core::backprop::GradStore, nets: &Networks, id: NetworkId) -> bool {
    nets.params(id)
        .iter()
        .any(|p| store.get(p.var.as_tensor()).is_some())
}

fn criterion_4(work: &Path) -> Outcome {
    let data_dir = work.join("c4_data");
    let data = small_dataset(&data_dir, 4)?;
    let cfg = TrainConfig::default();
    let mut st = TrainState::new(&cfg, DType::F32, &Device::Cpu).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut violations = Vec::new();
    for it in 0..10 {
        let xs: Vec<&ImageTensor> = (0..cfg.batch_size)
            .map(|_| &data.x[rng.random_range(0..data.x.len())])
            .collect();
        let ys: Vec<&DomainSample> = (0..cfg.batch_size)
            .map(|_| &data.y[rng.random_range(0..data.y.len())])
            .collect();
        let batch = Batch::new(&st.nets, &xs, &ys).map_err(err)?;
        let noise =
            draw_noise(&mut rng, cfg.batch_size, cfg.d_u, DType::F32, &Device::Cpu).map_err(err)?;

        // Detachment: fakes are constants for D; the code is a constant for L_c.
        let terms = compute_terms(&st.nets, &batch, &noise, true, true).map_err(err)?;
        let d_grads = terms.gan_d.backward().map_err(err)?;
        for id in [NetworkId::GX, NetworkId::GY, NetworkId::Q] {
            if has_grad(&d_grads, &st.nets, id) {
                violations.push(format!("iter {it}: gan_d reaches {}", id.as_str()));
            }
        }
        let c_grads = terms
            .c
            .as_ref()
            .ok_or("c term missing")?
            .backward()
            .map_err(err)?;
        for id in [NetworkId::GX, NetworkId::Q, NetworkId::DX, NetworkId::DY] {
            if has_grad(&c_grads, &st.nets, id) {
                violations.push(format!("iter {it}: c reaches {}", id.as_str()));
            }
        }

        // Isolation: each group update moves its own networks and nothing else.
        let grads = st.compute_gradients(&batch, &noise).map_err(err)?;
        for g in Group::ORDER {
            let before: Vec<_> = NetworkId::ALL
                .iter()
                .map(|&id| st.nets.params(id).snapshot())
                .collect::<Result<_, _>>()
                .map_err(err)?;
            st.apply_group(g, &grads).map_err(err)?;
            for (k, &id) in NetworkId::ALL.iter().enumerate() {
                let moved = st.nets.params(id).snapshot().map_err(err)? != before[k];
                if moved != (network_group(id) == g) {
                    violations.push(format!(
                        "iter {it}: {} moved={moved} under {}",
                        id.as_str(),
                        g.as_str()
                    ));
                }
            }
        }
    }

    // Determinism: two identical 5-iteration runs write the same loss log.
    let mut short = TrainConfig::default();
    short.iterations = 5;
    let mut logs = Vec::new();
    for run in ["c4_run_a", "c4_run_b"] {
        let out = trainer::train(&short, &data_dir, &work.join(run), None).map_err(err)?;
        logs.push(trainer::read_loss_log(&out.loss_log).map_err(err)?);
    }
    let mut worst: f64 = 0.0;
    for (a, b) in logs[0].iter().zip(&logs[1]) {
        for t in Term::ALL {
            worst = worst.max(rel(a.parts.get(t), b.parts.get(t)));
        }
    }
    let same_len = logs[0].len() == 5 && logs[1].len() == 5;
    check(
        violations.is_empty() && same_len && worst <= 1e-6,
        format!(
            "10 iterations, {} violations{}, loss-log max rel diff {worst:.1e} over {} rows",
            violations.len(),
            if violations.is_empty() {
                String::new()
            } else {
                format!(" {violations:?}")
            },
            logs[0].len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 9 (exact part). SSIM against a direct per-window reference

fn ssim_reference(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let [c, h, w] = a.shape();
    let k = 11;
    let sigma: f64 = 1.5;
    let mut g = vec![vec![0.0; k]; k];
    let mut total_w = 0.0;
    for i in 0..k {
        for j in 0..k {
            let d2 = (i as f64 - 5.0).powi(2) + (j as f64 - 5.0).powi(2);
            g[i][j] = (-d2 / (2.0 * sigma * sigma)).exp();
            total_w += g[i][j];
        }
    }
    let (c1, c2) = ((0.01f64 * 2.0).powi(2), (0.03f64 * 2.0).powi(2));
    let mut acc_c = 0.0;
    for ch in 0..c {
        let mut acc = 0.0;
        let mut count = 0;
        for y0 in 0..=h - k {
            for x0 in 0..=w - k {
                let px = |im: &ImageTensor, i: usize, j: usize| im.get(ch, y0 + i, x0 + j) as f64;
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        ma += g[i][j] / total_w * px(a, i, j);
                        mb += g[i][j] / total_w * px(b, i, j);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let wt = g[i][j] / total_w;
                        va += wt * (px(a, i, j) - ma).powi(2);
                        vb += wt * (px(b, i, j) - mb).powi(2);
                        cov += wt * (px(a, i, j) - ma) * (px(b, i, j) - mb);
                    }
                }
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        acc_c += acc / count as f64;
    }
    acc_c / c as f64
}

fn ssim_exact() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let img = |rng: &mut ChaCha8Rng| {
        ImageTensor::new(
            [3, 32, 32],
            (0..3 * 32 * 32)
                .map(|_| rng.random_range(-1.0f32..1.0))
                .collect(),
        )
        .unwrap()
    };
    let (mut identity_ok, mut sym, mut refd) = (true, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let a = img(&mut rng);
        let b = img(&mut rng);
        identity_ok &= ssim(&a, &a).map_err(err)? == 1.0;
        let ab = ssim(&a, &b).map_err(err)?;
        sym = sym.max((ab - ssim(&b, &a).map_err(err)?).abs());
        refd = refd.max((ab - ssim_reference(&a, &b)).abs());
    }
    let detail = format!("identity exact {identity_ok}, symmetry gap {sym:.1e}, reference gap {refd:.1e} on 50 pairs");
    if identity_ok && sym <= 1e-12 && refd <= 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 10. end-to-end determinism of the binary

fn upgan(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_upgan"))
        .args(args)
        .output()
        .map_err(err)?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "upgan {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn dir_bytes(dir: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>, String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).map_err(err)? {
            let p = e.map_err(err)?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).map_err(err)?,
                ));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn criterion_10(work: &Path) -> Outcome {
    let p = |name: &str| work.join(name).to_string_lossy().into_owned();
    for run in ["c10_data_a", "c10_data_b"] {
        upgan(&[
            "datagen",
            "--out",
            &p(run),
            "--n-x",
            "12",
            "--n-y",
            "12",
            "--classes",
            "3",
            "--size",
            "32",
            "--seed",
            "5",
        ])?;
    }
    let data_same = dir_bytes(&work.join("c10_data_a"))? == dir_bytes(&work.join("c10_data_b"))?;
    upgan(&[
        "train",
        "--data",
        &p("c10_data_a"),
        "--out",
        &p("c10_model"),
        "--set",
        "iterations=3",
        "--set",
        "n_classes=3",
    ])?;
    let ckpt = p("c10_model/final");
    let pose = p("c10_data_a/x/x_000000.png");
    for run in ["c10_samples_a", "c10_samples_b"] {
        upgan(&[
            "infer",
            "sample",
            "--ckpt",
            &ckpt,
            "--pose",
            &pose,
            "--class",
            "2",
            "--n",
            "6",
            "--seed",
            "3",
            "--out",
            &p(run),
        ])?;
    }
    let a = dir_bytes(&work.join("c10_samples_a"))?;
    let samples_same = a == dir_bytes(&work.join("c10_samples_b"))?;
    check(
        data_same && samples_same,
        format!(
            "datagen identical {data_same}, infer sample identical {samples_same} ({} files)",
            a.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// desk-scale experiment shared by 5 to 9

const TRAIN_SEED: u64 = 1;
const HELD_OUT_SEED: u64 = 2;
const POSES: usize = 10;
const SAMPLES_PER_POSE: usize = 20;
const CLASS_SAMPLES_PER_POSE: usize = 10;
const INSTANCE_PAIRS: usize = 200;
const CORES_IN_BUDGET: f64 = 4.0;

struct Run {
    model: Networks,
    rec: Vec<f64>,
    wall: Duration,
}

struct Experiment {
    train: Dataset,
    held_out: Dataset,
    full: Run,
    no_lc: Run,
    no_ls: Run,
}

fn dataset(dir: &Path, seed: u64) -> Result<Dataset, String> {
    let opts = DatasetOptions {
        n_x: 200,
        n_y: 200,
        n_classes: 2,
        size: 32,
        seed,
        articulation: DEFAULT_ARTICULATION,
    };
    generate_dataset(&opts, dir, Strategy::default()).map_err(err)?;
    Dataset::load(dir, Strategy::default()).map_err(err)
}

fn run(cfg: &TrainConfig, data: &Path, out: &Path) -> Result<Run, String> {
    let start = Instant::now();
    let outcome = trainer::train(cfg, data, out, None).map_err(err)?;
    let wall = start.elapsed();
    Ok(Run {
        model: load_model(&outcome.final_checkpoint).map_err(err)?,
        rec: outcome.reports.iter().map(|r| r.parts.rec).collect(),
        wall,
    })
}

fn experiment(work: &Path) -> Result<Experiment, String> {
    let train_dir = work.join("desk_train");
    let train = dataset(&train_dir, TRAIN_SEED)?;
    let held_out = dataset(&work.join("desk_held_out"), HELD_OUT_SEED)?;
    let full_cfg = TrainConfig::default();
    let full = run(&full_cfg, &train_dir, &work.join("desk_full"))?;
    let no_lc = run(
        &TrainConfig {
            ablate_lc: true,
            ..full_cfg.clone()
        },
        &train_dir,
        &work.join("desk_no_lc"),
    )?;
    let no_ls = run(
        &TrainConfig {
            ablate_ls: true,
            ..full_cfg
        },
        &train_dir,
        &work.join("desk_no_ls"),
    )?;
    Ok(Experiment {
        train,
        held_out,
        full,
        no_lc,
        no_ls,
    })
}

fn sample_sets(model: &Networks, data: &Dataset) -> Result<Vec<Vec<ImageTensor>>, String> {
    (0..POSES)
        .map(|i| {
            let label = ClassLabel::new(i % 2, 2).map_err(err)?;
            infer_sample(model, &data.x[i], &label, SAMPLES_PER_POSE, 1000 + i as u64).map_err(err)
        })
        .collect()
}

fn mean_diversity(model: &Networks, data: &Dataset) -> Result<f64, String> {
    let sets = sample_sets(model, data)?;
    let mut total = 0.0;
    for s in &sets {
        total += diversity_score(s).map_err(err)?;
    }
    Ok(total / sets.len() as f64)
}

fn criterion_5(e: &Experiment) -> Outcome {
    let rec = &e.full.rec;
    if rec.len() < 1000 {
        return Err(format!("only {} iterations logged", rec.len()));
    }
    let early = mean(rec[..100].iter().copied());
    let late = mean(rec[900..1000].iter().copied());
    let cores = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1) as f64;
    let wall = e.full.wall.as_secs_f64();
    // Fewer cores than the budget machine only makes the run slower; more
    // cores are scaled back conservatively.
    let budget_ok = wall * (cores / CORES_IN_BUDGET).max(1.0) <= 1800.0;
    check(
        late < 0.5 * early && budget_ok,
        format!(
            "rec {early:.4} (iters 0-100) -> {late:.4} (900-1000), ratio {:.3}; 1000 iterations in {wall:.0}s on {cores} core(s)",
            late / early
        ),
    )
}

fn criterion_6(e: &Experiment) -> Outcome {
    let div_full = mean_diversity(&e.full.model, &e.held_out)?;
    let div_no_lc = mean_diversity(&e.no_lc.model, &e.held_out)?;
    let adh = |m: &Networks| {
        class_adherence(m, &e.held_out, CLASS_SAMPLES_PER_POSE, POSES, 6).map_err(err)
    };
    let full = adh(&e.full.model)?.value();
    let no_ls = adh(&e.no_ls.model)?.value();
    check(
        div_full > 10.0 * div_no_lc && div_no_lc < 0.01 && full >= no_ls + 0.10 && full >= 0.7,
        format!(
            "diversity full {div_full:.4} vs no-lc {div_no_lc:.4}; class adherence full {full:.3} vs no-ls {no_ls:.3}"
        ),
    )
}

fn criterion_7(e: &Experiment) -> Outcome {
    let full = instance_adherence(&e.full.model, &e.held_out, INSTANCE_PAIRS, 7)
        .map_err(err)?
        .value();
    let no_lc = instance_adherence(&e.no_lc.model, &e.held_out, INSTANCE_PAIRS, 7)
        .map_err(err)?
        .value();
    check(
        full >= 0.8 && full > no_lc,
        format!("instance adherence on {INSTANCE_PAIRS} held-out pairs: full {full:.3}, no-lc {no_lc:.3}"),
    )
}

fn criterion_8(e: &Experiment) -> Outcome {
    let points = project_latents(&e.full.model, &e.held_out).map_err(err)?;
    let xy: Vec<[f64; 2]> = points.iter().map(|p| [p.x, p.y]).collect();
    let labels: Vec<usize> = points
        .iter()
        .map(|p| p.class_id.unwrap_or(usize::MAX))
        .collect();
    let acc = linear_separability(&xy, &labels, 1).map_err(err)?;
    check(
        acc >= 0.9,
        format!(
            "linear separator on PCA of {} held-out codes: {acc:.3}",
            points.len()
        ),
    )
}

fn criterion_9(e: Option<&Experiment>) -> Outcome {
    let exact = ssim_exact();
    let memo: Result<String, String> = match e {
        None => Err("desk-scale run unavailable".into()),
        Some(e) => {
            let generated: Vec<(String, ImageTensor)> = sample_sets(&e.full.model, &e.held_out)?
                .into_iter()
                .enumerate()
                .flat_map(|(i, s)| {
                    s.into_iter()
                        .enumerate()
                        .map(move |(j, im)| (format!("p{i}s{j}"), im))
                })
                .collect();
            let training: Vec<(String, ImageTensor)> = e
                .train
                .y
                .iter()
                .enumerate()
                .map(|(i, s)| (format!("y{i}"), s.image.clone()))
                .collect();
            let report =
                nearest_neighbors(&generated, &training, 1, Strategy::default()).map_err(err)?;
            check(
                report.max_ssim < 0.99,
                format!(
                    "max generated-vs-train SSIM {:.4} over {} samples",
                    report.max_ssim,
                    generated.len()
                ),
            )
        }
    };
    match (exact, memo) {
        (Ok(a), Ok(b)) => Ok(format!("{a}; {b}")),
        (a, b) => Err(format!(
            "{}; {}",
            a.unwrap_or_else(|x| x),
            b.unwrap_or_else(|x| x)
        )),
    }
}

// ---------------------------------------------------------------------------

fn main() {
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let want = |n: usize| selected.is_empty() || selected.contains(&n);
    let work = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = fs::remove_dir_all(&work);
    fs::create_dir_all(&work).expect("create work dir");

    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |n: usize, o: Outcome| {
        match &o {
            Ok(d) => println!("criterion {n}: PASS ({d})"),
            Err(d) => println!("criterion {n}: FAIL ({d})"),
        }
        results.push((n, o));
    };

    if want(1) {
        report(1, criterion_1());
    }
    if want(2) {
        report(2, criterion_2());
    }
    if want(3) {
        report(3, criterion_3());
    }
    if want(4) {
        report(4, criterion_4(&work));
    }
    if want(10) {
        report(10, criterion_10(&work));
    }
    if [5, 6, 7, 8, 9].iter().any(|&n| want(n)) {
        let exp = experiment(&work);
        let e = exp.as_ref().ok();
        let missing = |why: &Result<Experiment, String>| -> Outcome {
            Err(format!(
                "desk-scale run failed: {}",
                why.as_ref().err().cloned().unwrap_or_default()
            ))
        };
        if want(5) {
            report(5, e.map_or_else(|| missing(&exp), criterion_5));
        }
        if want(6) {
            report(6, e.map_or_else(|| missing(&exp), criterion_6));
        }
        if want(7) {
            report(7, e.map_or_else(|| missing(&exp), criterion_7));
        }
        if want(8) {
            report(8, e.map_or_else(|| missing(&exp), criterion_8));
        }
        if want(9) {
            report(9, criterion_9(e));
        }
    }

    let failed = results.iter().filter(|(_, o)| o.is_err()).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

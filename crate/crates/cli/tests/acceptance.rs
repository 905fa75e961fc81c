//! Acceptance suite: every criterion runs at its stated tolerance and prints
//! one PASS/FAIL line. Criteria share one trained toy model.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use cogesture::corpus::generate_corpus;
use cogesture::diffusion::{predict_x0, q_sample, reverse_step, DiffusionConfig, VarianceMode};
use cogesture::jcformer::{EmotionChoice, EmotionMode, Jcformer, ModelConfig};
use cogesture::metrics::{beat_align, fgd, srgr, BeatSet, BeatSource};
use cogesture::motion::{load_motion, GestureSequence, SkeletonSpec};
use cogesture::numeric::{finite_diff_check, Activation, Graph, Var};
use cogesture::pipeline::{gesture_emotion_classifier, pose_feature};
use cogesture::rng::{stream, Purpose};
use cogesture::training::{ce_var, mse_var, predict_x0_var, rec_var, smoothed};
use cogesture::Tensor;
use cogesture_cli::{Preset, RunConfig};

/// Training budget of the harness variants (criteria 7 and 8).
const HARNESS_STEPS: &str = "150";
const HARNESS_BATCH: usize = 8;
const HARNESS_REPETITIONS: &str = "2";
const HARNESS_CLIPS: &str = "8";
/// Clips per emotion for the override check (criterion 6).
const TRANSFER_CLIPS: usize = 20;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(o: &Outcome) {
    static STARTED: std::sync::atomic::AtomicBool = std::sync::atomic::AtomicBool::new(false);
    let lead = if STARTED.swap(true, std::sync::atomic::Ordering::Relaxed) { "" } else { "\n" };
    let line = format!(
        "{lead}ACCEPTANCE {} criterion {}: {} ({})\n",
        if o.pass { "PASS" } else { "FAIL" },
        o.id,
        o.name,
        o.detail
    );
    // Bypass the test harness capture so the lines always reach the log.
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn cogesture(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_cogesture"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "cogesture {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

// ---------------------------------------------------------------- criterion 1

fn weighted(g: &mut Graph<f64>, out: Var, seed: u64) -> cogesture::Result<Var> {
    let w = Tensor::<f64>::randn(g.shape(out).to_vec(), &mut stream(seed, Purpose::Evaluation, 99));
    let w = g.constant(w);
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> cogesture::Result<Var>>;

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Build)> {
    fn case<F>(name: &'static str, shapes: &[&[usize]], f: F) -> (&'static str, Vec<Vec<usize>>, Build)
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> cogesture::Result<Var> + 'static,
    {
        (name, shapes.iter().map(|s| s.to_vec()).collect(), Box::new(f))
    }
    vec![
        case("matmul", &[&[3, 4], &[4, 5]], |g, v| {
            let o = g.matmul(v[0], v[1])?;
            weighted(g, o, 1)
        }),
        case("matmul_t(a^T b)", &[&[4, 3], &[4, 5]], |g, v| {
            let o = g.matmul_t(v[0], v[1], true, false)?;
            weighted(g, o, 2)
        }),
        case("matmul_t(a b^T)", &[&[3, 4], &[5, 4]], |g, v| {
            let o = g.matmul_t(v[0], v[1], false, true)?;
            weighted(g, o, 3)
        }),
        case("add", &[&[3, 4], &[3, 4]], |g, v| {
            let o = g.add(v[0], v[1])?;
            weighted(g, o, 4)
        }),
        case("sub", &[&[3, 4], &[3, 4]], |g, v| {
            let o = g.sub(v[0], v[1])?;
            weighted(g, o, 5)
        }),
        case("mul", &[&[3, 4], &[3, 4]], |g, v| {
            let o = g.mul(v[0], v[1])?;
            weighted(g, o, 6)
        }),
        case("add_row", &[&[3, 4], &[1, 4]], |g, v| {
            let o = g.add_row(v[0], v[1])?;
            weighted(g, o, 7)
        }),
        case("mul_row", &[&[3, 4], &[1, 4]], |g, v| {
            let o = g.mul_row(v[0], v[1])?;
            weighted(g, o, 8)
        }),
        case("scale", &[&[3, 4]], |g, v| {
            let o = g.scale(v[0], 1.7);
            weighted(g, o, 9)
        }),
        case("gelu", &[&[3, 4]], |g, v| {
            let o = g.activation(v[0], Activation::Gelu);
            weighted(g, o, 10)
        }),
        case("relu", &[&[3, 4]], |g, v| {
            let o = g.activation(v[0], Activation::Relu);
            weighted(g, o, 11)
        }),
        case("tanh", &[&[3, 4]], |g, v| {
            let o = g.activation(v[0], Activation::Tanh);
            weighted(g, o, 12)
        }),
        case("softmax", &[&[3, 5]], |g, v| {
            let o = g.softmax(v[0]);
            weighted(g, o, 13)
        }),
        case("layer_norm_plain", &[&[3, 6]], |g, v| {
            let o = g.layer_norm_plain(v[0], 1e-5);
            weighted(g, o, 14)
        }),
        case("layer_norm", &[&[3, 6], &[1, 6], &[1, 6]], |g, v| {
            let o = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
            weighted(g, o, 15)
        }),
        case("slice_cols", &[&[3, 6]], |g, v| {
            let o = g.slice_cols(v[0], 1, 3)?;
            weighted(g, o, 16)
        }),
        case("concat_cols", &[&[3, 2], &[3, 4]], |g, v| {
            let o = g.concat_cols(&[v[0], v[1]])?;
            weighted(g, o, 17)
        }),
        case("slice_rows", &[&[5, 3]], |g, v| {
            let o = g.slice_rows(v[0], 1, 3)?;
            weighted(g, o, 18)
        }),
        case("concat_rows", &[&[2, 3], &[4, 3]], |g, v| {
            let o = g.concat_rows(&[v[0], v[1]])?;
            weighted(g, o, 19)
        }),
        case("gather_rows", &[&[5, 3]], |g, v| {
            let o = g.gather_rows(v[0], &[4, 0, 4, 2])?;
            weighted(g, o, 20)
        }),
        case("reshape", &[&[3, 4]], |g, v| {
            let o = g.reshape(v[0], &[2, 6])?;
            weighted(g, o, 21)
        }),
        case("mean_rows", &[&[4, 3]], |g, v| {
            let o = g.mean_rows(v[0]);
            weighted(g, o, 22)
        }),
        case("sum", &[&[3, 4]], |g, v| {
            let sq = g.mul(v[0], v[0])?;
            Ok(g.sum(sq))
        }),
        case("mean", &[&[3, 4]], |g, v| {
            let sq = g.mul(v[0], v[0])?;
            Ok(g.mean(sq))
        }),
        case("row_norms", &[&[4, 3]], |g, v| {
            let o = g.row_norms(v[0]);
            weighted(g, o, 23)
        }),
        case("cross_entropy", &[&[1, 6]], |g, v| g.cross_entropy(v[0], 2)),
        case("attention", &[&[3, 4], &[5, 4], &[5, 2]], |g, v| {
            let o = g.attention(v[0], v[1], v[2], 0.5)?;
            weighted(g, o, 24)
        }),
    ]
}

fn randomized_toy(mode: EmotionMode) -> Jcformer<f64> {
    let mut m = Jcformer::<f64>::new(ModelConfig { emotion_mode: mode, ..ModelConfig::toy() }, 3).unwrap();
    let mut r = stream(3, Purpose::Evaluation, 1);
    for t in m.params_mut().tensors_mut() {
        *t = Tensor::randn(t.shape().to_vec(), &mut r).map(|v| 0.09 * v);
    }
    m
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst_op = (0.0f64, "");
    let mut failed = Vec::new();
    for (k, (name, shapes, build)) in op_cases().into_iter().enumerate() {
        let mut r = stream(1, Purpose::Evaluation, k as u64);
        let params: Vec<Tensor<f64>> = shapes.iter().map(|s| Tensor::randn(s.clone(), &mut r)).collect();
        let rep = finite_diff_check(build, &params, &[], 1e-5, 1e-4, None).unwrap();
        if rep.max_rel_err() > worst_op.0 {
            worst_op = (rep.max_rel_err(), name);
        }
        if !rep.all_passed() {
            failed.push(name);
        }
    }
    let schedule = cogesture::diffusion::make_schedule(200, 5e-4, 0.1).unwrap();
    let mut worst_e2e = 0.0f64;
    for mode in EmotionMode::ALL {
        let m = randomized_toy(mode);
        let c = m.config().clone();
        let mut r = stream(2, Purpose::Evaluation, 0);
        let x0 = Tensor::<f64>::randn([34, c.channels()], &mut r);
        let eps = Tensor::<f64>::randn([34, c.channels()], &mut r);
        let audio = Tensor::<f64>::randn([34, c.audio_raw_dim], &mut r);
        let t = 50;
        let build = |g: &mut Graph<f64>, p: &[Var]| {
            let xt = q_sample(&x0, t, &eps, &schedule)?;
            let xt = g.constant(xt);
            let (x0v, epsv, a) = (g.constant(x0.clone()), g.constant(eps.clone()), g.constant(audio.clone()));
            let f = m.forward(g, p, xt, t, a, 1, EmotionChoice::Label(2))?;
            let mse = mse_var(g, epsv, f.eps, None)?;
            let x0_hat = predict_x0_var(g, xt, f.eps, t, &schedule)?;
            let rec = rec_var(g, x0v, x0_hat, None)?;
            let ce = ce_var(g, f.logits.unwrap(), 2)?;
            let l = g.add(mse, rec)?;
            g.add(l, ce)
        };
        let rep = finite_diff_check(build, m.params().tensors(), m.params().names(), 1e-5, 1e-3, Some(2)).unwrap();
        worst_e2e = worst_e2e.max(rep.max_rel_err());
        if !rep.all_passed() {
            failed.push(mode.name());
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        id: 1,
        name: "gradient integrity",
        pass: failed.is_empty() && elapsed < Duration::from_secs(300),
        detail: format!(
            "{} ops worst rel-err {:.2e} ({}) <= 1e-4; toy JCFormer x4 modes worst {:.2e} <= 1e-3; {:.0} s < 300 s; failures {:?}",
            op_cases().len(),
            worst_op.0,
            worst_op.1,
            worst_e2e,
            elapsed.as_secs_f64(),
            failed
        ),
    }
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Outcome {
    let s = DiffusionConfig::default().build().unwrap();
    let mut r = stream(4, Purpose::Evaluation, 0);
    let x0 = Tensor::<f64>::randn([34, 141], &mut r);
    let mut round = 0.0f64;
    for t in 1..=1000 {
        let eps = Tensor::<f64>::randn([34, 141], &mut r);
        let xt = q_sample(&x0, t, &eps, &s).unwrap();
        round = round.max(predict_x0(&xt, &eps, t, &s).unwrap().max_abs_diff(&x0));
    }
    let ab = s.alpha_bar(1000);
    let zero = s.clone().with_variance(VarianceMode::Zero);
    let mut x = q_sample(&x0, 1000, &Tensor::randn([34, 141], &mut r), &zero).unwrap();
    for t in (1..=1000).rev() {
        let a = zero.alpha_bar(t);
        let eps = x.zip_map(&x0, |xv, x0v| (xv - a.sqrt() * x0v) / (1.0 - a).sqrt()).unwrap();
        x = reverse_step(&x, t, &eps, &zero, &mut r).unwrap();
    }
    let chain = x.max_abs_diff(&x0);
    Outcome {
        id: 2,
        name: "diffusion algebra",
        pass: round <= 1e-9 && ab < 1e-4 && chain <= 1e-6,
        detail: format!("round-trip max err {round:.2e} <= 1e-9; alpha_bar_1000 = {ab:.3e} < 1e-4; oracle chain err {chain:.2e} <= 1e-6"),
    }
}

// ---------------------------------------------------------------- criterion 3

fn gaussian_rows(n: usize, k: usize, offset: f64, seed: u64) -> Vec<Vec<f64>> {
    let t = Tensor::<f64>::randn([n, k], &mut stream(seed, Purpose::Evaluation, 0));
    t.data().chunks(k).map(|r| r.iter().map(|v| v + offset).collect()).collect()
}

fn brute_srgr(a: &[f64], b: &[f64], n: usize, j: usize, delta: f64) -> f64 {
    let mut hits = 0usize;
    for f in 0..n {
        for k in 0..j {
            let i = (f * j + k) * 3;
            let d = ((a[i] - b[i]).powi(2) + (a[i + 1] - b[i + 1]).powi(2) + (a[i + 2] - b[i + 2]).powi(2)).sqrt();
            hits += usize::from(d <= delta);
        }
    }
    hits as f64 / (n * j) as f64
}

fn criterion_3() -> Outcome {
    let x = gaussian_rows(1000, 8, 0.0, 5);
    let self_fgd = fgd(&x, &x).unwrap();
    let (k, d) = (8usize, 0.5);
    let real = gaussian_rows(10_000, k, 0.0, 6);
    let shifted = gaussian_rows(10_000, k, d, 7);
    let expected = k as f64 * d * d;
    let shift_err = (fgd(&real, &shifted).unwrap() - expected).abs() / expected;
    let b = BeatSet::new(vec![0.4, 1.1, 2.0, 2.6], BeatSource::Kinematic).unwrap();
    let ba = BeatSet::new(vec![0.4, 1.1, 2.0, 2.6], BeatSource::Audio).unwrap();
    let identical = beat_align(&b, &ba, 0.3).unwrap();
    let one = BeatSet::new(vec![1.0], BeatSource::Kinematic).unwrap();
    let off = BeatSet::new(vec![1.3], BeatSource::Audio).unwrap();
    let offset_err = (beat_align(&one, &off, 0.3).unwrap() - (-0.5f64).exp()).abs();
    let mut srgr_exact = 0usize;
    let mut srgr_total = 0usize;
    for (case, (n, j)) in [(1, 1), (10, 47), (20, 25), (34, 14), (500, 1), (7, 3), (12, 40)].into_iter().enumerate() {
        assert!(n * j <= 500);
        let mut r = stream(8, Purpose::Evaluation, case as u64);
        let a = Tensor::<f64>::randn([n * j * 3], &mut r).into_vec();
        let noise = Tensor::<f64>::randn([n * j * 3], &mut r).into_vec();
        let bv: Vec<f64> = a.iter().zip(&noise).map(|(x, z)| x + 0.15 * z).collect();
        let sk = std::sync::Arc::new(SkeletonSpec::for_joint_count(j).unwrap());
        let sa = GestureSequence::new(a.clone(), n, 15.0, sk.clone()).unwrap();
        let sb = GestureSequence::new(bv.clone(), n, 15.0, sk).unwrap();
        for delta in [0.05, 0.2, 0.4] {
            srgr_total += 1;
            srgr_exact += usize::from(srgr(&sa, &sb, None, delta).unwrap() == brute_srgr(&a, &bv, n, j, delta));
        }
    }
    Outcome {
        id: 3,
        name: "metric oracles",
        pass: self_fgd < 1e-6 && shift_err <= 0.02 && identical == 1.0 && offset_err <= 1e-9 && srgr_exact == srgr_total,
        detail: format!(
            "FGD(X,X) {self_fgd:.2e}; shift rel err {:.3}% <= 2%; BeatAlign(B,B) = {identical}; offset err {offset_err:.1e}; SRGR exact {srgr_exact}/{srgr_total}",
            100.0 * shift_err
        ),
    }
}

// ---------------------------------------------------------------- criterion 4

struct Workspace {
    root: PathBuf,
}

impl Workspace {
    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

fn criterion_4(w: &Workspace) -> Outcome {
    let start = Instant::now();
    cogesture(&["train", "--config", s(&w.path("toy.toml")), "--corpus", s(&w.path("corpus")), "--out", s(&w.path("model"))]);
    let elapsed = start.elapsed();
    let log = fs::read_to_string(w.path("model/loss.csv")).unwrap();
    let mse: Vec<f64> = log.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    let ema = smoothed(&mse, 0.05);
    let ratio = ema[ema.len() - 1] / ema[0];
    let window = |r: &[f64]| r.iter().sum::<f64>() / r.len() as f64;
    let window_ratio = window(&mse[mse.len() - 100..]) / window(&mse[..100]);
    let val: serde_json::Value = serde_json::from_str(&fs::read_to_string(w.path("model/validation.json")).unwrap()).unwrap();
    let acc = val["emotion_accuracy"].as_f64().unwrap();
    Outcome {
        id: 4,
        name: "training smoke",
        pass: mse.len() == 2000 && ratio <= 0.7 && acc >= 0.9 && elapsed <= Duration::from_secs(30 * 60),
        detail: format!(
            "{} steps; smoothed L_mse {:.3} -> {:.3} (ratio {ratio:.3} <= 0.7; 100-step window ratio {window_ratio:.3}); held-out emotion accuracy {:.3} >= 0.9; {:.1} min <= 30 min",
            mse.len(),
            ema[0],
            ema[ema.len() - 1],
            acc,
            elapsed.as_secs_f64() / 60.0
        ),
    }
}

// ---------------------------------------------------------------- criterion 5

fn test_sample(w: &Workspace, k: usize) -> (PathBuf, PathBuf) {
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(w.path("corpus/manifest.json")).unwrap()).unwrap();
    let id = m["splits"]["test"][k].as_str().unwrap().to_string();
    (w.path(&format!("corpus/samples/{id}.motion")), w.path(&format!("corpus/samples/{id}.audio")))
}

fn criterion_5(w: &Workspace) -> Outcome {
    let ckpt = w.path("model/final.ckpt");
    let mut preserved_ok = true;
    let (mut altered, mut frames) = (0usize, 0usize);
    for k in 0..4 {
        let (motion, audio) = test_sample(w, k);
        let out = w.path(&format!("edit_{k}.motion"));
        cogesture(&["edit", "--checkpoint", s(&ckpt), "--reference", s(&motion), "--mask", "left_hand", "--audio", s(&audio), "--out", s(&out), "--seed", &k.to_string()]);
        let r = load_motion(&motion).unwrap();
        let e = load_motion(&out).unwrap();
        let mask = r.skeleton().select("left_hand").unwrap();
        for f in 0..r.frames() {
            let mut all_changed = true;
            for (j, &m) in mask.iter().enumerate() {
                let (a, b) = (r.rotation(f, j), e.rotation(f, j));
                if m {
                    all_changed &= a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-6);
                } else {
                    preserved_ok &= a == b;
                }
            }
            altered += usize::from(all_changed);
            frames += 1;
        }
    }
    let frac = altered as f64 / frames as f64;
    let (motion, audio) = test_sample(w, 5);
    let out = w.path("seeded.motion");
    cogesture(&["sample", "--checkpoint", s(&ckpt), "--audio", s(&audio), "--seed-pose", s(&motion), "--out", s(&out)]);
    let r = load_motion(&motion).unwrap();
    let g = load_motion(&out).unwrap();
    let c = r.channels();
    let seed_err = r.values()[..4 * c].iter().zip(&g.values()[..4 * c]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Outcome {
        id: 5,
        name: "editing invariants",
        pass: preserved_ok && frac >= 0.95 && seed_err <= 1e-6,
        detail: format!(
            "unmasked joints bit-exact: {preserved_ok}; frames with every masked joint altered {:.1}% >= 95%; seed-pose max err {seed_err:.2e} <= 1e-6",
            100.0 * frac
        ),
    }
}

// ---------------------------------------------------------------- criterion 6

fn criterion_6(w: &Workspace) -> Outcome {
    let config = RunConfig::load(&w.path("toy.toml")).unwrap();
    let corpus = generate_corpus(&config.corpus, config.data.samples).unwrap();
    let classes = config.corpus.emotion_count;
    let probe = gesture_emotion_classifier(&corpus.train, classes).unwrap();
    let test_feats: Vec<Vec<f64>> = corpus.test.iter().map(|s| pose_feature(&s.motion)).collect();
    let test_labels: Vec<usize> = corpus.test.iter().map(|s| s.emotion).collect();
    let probe_acc = probe.accuracy(&test_feats, &test_labels).unwrap();
    let (_, audio) = test_sample(w, 0);
    let ckpt = w.path("model/final.ckpt");
    let (mut correct, mut total) = (0usize, 0usize);
    let mut per_class = Vec::new();
    for e in 0..classes {
        let mut hits = 0;
        for k in 0..TRANSFER_CLIPS {
            let out = w.path("transfer.motion");
            cogesture(&["sample", "--checkpoint", s(&ckpt), "--audio", s(&audio), "--emotion", &e.to_string(), "--seed", &(1000 + k).to_string(), "--out", s(&out)]);
            let m = load_motion(&out).unwrap();
            hits += usize::from(probe.predict(&pose_feature(&m)).unwrap() == e);
        }
        per_class.push(hits);
        correct += hits;
        total += TRANSFER_CLIPS;
    }
    let acc = correct as f64 / total as f64;
    Outcome {
        id: 6,
        name: "emotion conditioning efficacy",
        pass: acc >= 0.6,
        detail: format!(
            "override accuracy {:.1}% >= 60% over {total} clips (per class {per_class:?}); classifier ground-truth test accuracy {:.1}%",
            100.0 * acc,
            100.0 * probe_acc
        ),
    }
}

// ---------------------------------------------------------------- criteria 7, 8

fn harness_config(w: &Workspace) -> PathBuf {
    let mut c = RunConfig::load(&w.path("toy.toml")).unwrap();
    c.train.batch_size = HARNESS_BATCH;
    c.train.warmup_steps = 20;
    let path = w.path("harness.toml");
    c.save(&path).unwrap();
    path
}

fn harness(w: &Workspace, verb: &str, out: &str, steps: &str, reps: &str, clips: &str) -> PathBuf {
    let out = w.path(out);
    cogesture(&[
        verb,
        "--config",
        s(&harness_config(w)),
        "--corpus",
        s(&w.path("corpus")),
        "--out",
        s(&out),
        "--steps",
        steps,
        "--repetitions",
        reps,
        "--max-clips",
        clips,
        "--extractor",
        s(&w.path("extractor.bin")),
    ]);
    out
}

fn finite_rows(csv: &str, first_metric_col: usize) -> Vec<Vec<String>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>())
        .filter(|r: &Vec<String>| r[first_metric_col..first_metric_col + 2].iter().all(|v| v.parse::<f64>().is_ok_and(f64::is_finite)))
        .collect()
}

fn criterion_7(w: &Workspace) -> Outcome {
    let out = harness(w, "compare-modes", "modes", HARNESS_STEPS, HARNESS_REPETITIONS, HARNESS_CLIPS);
    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    let rows = finite_rows(&csv, 1);
    let modes: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    let all = EmotionMode::ALL.iter().all(|m| modes.contains(&m.name()));
    let summary: Vec<String> = rows.iter().map(|r| format!("{} FGD {}", r[0], r[1])).collect();
    Outcome {
        id: 7,
        name: "conditioning-mode comparison harness",
        pass: all && rows.len() == EmotionMode::ALL.len(),
        detail: format!("{} ({HARNESS_STEPS} steps each, identical seeds)", summary.join("; ")),
    }
}

fn criterion_8(w: &Workspace) -> Outcome {
    let out = harness(w, "ablate", "ablation", HARNESS_STEPS, HARNESS_REPETITIONS, HARNESS_CLIPS);
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let rows = finite_rows(&csv, 3);
    let expected = [["no", "yes", "no"], ["yes", "yes", "no"], ["yes", "no", "yes"], ["yes", "yes", "yes"]];
    let combos_ok = rows.len() == 4 && rows.iter().zip(&expected).all(|(r, e)| r[..3] == e[..]);
    let completed = ["no_rec_spatial_no_emotion", "rec_spatial_no_emotion", "rec_no_spatial_emotion", "rec_spatial_emotion"]
        .iter()
        .all(|l| fs::read_to_string(out.join(l).join("loss.csv")).is_ok_and(|t| t.lines().count() == 1 + HARNESS_STEPS.parse::<usize>().unwrap()));
    let summary: Vec<String> = rows.iter().map(|r| format!("rec={} spatial={} emotion={}: FGD {} SRGR {}", r[0], r[1], r[2], r[3], r[4])).collect();
    Outcome {
        id: 8,
        name: "ablation harness",
        pass: combos_ok && completed,
        detail: format!("{}; all variants trained to completion: {completed}", summary.join("; ")),
    }
}

// ---------------------------------------------------------------- criterion 9

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_9(w: &Workspace) -> Outcome {
    let cfg = w.path("toy.toml");
    let ckpt = w.path("model/final.ckpt");
    let (motion, audio) = test_sample(w, 1);
    let mut checks: Vec<(&str, bool)> = Vec::new();
    let runs: Vec<Vec<(String, Vec<u8>)>> = (0..2)
        .map(|i| {
            let root = w.path(&format!("det{i}"));
            fs::create_dir_all(&root).unwrap();
            let p = |n: &str| root.join(n);
            cogesture(&["gen-data", "--config", s(&cfg), "--out", s(&p("corpus"))]);
            cogesture(&["train", "--config", s(&cfg), "--corpus", s(&w.path("corpus")), "--out", s(&p("train")), "--steps", "12"]);
            cogesture(&["sample", "--checkpoint", s(&ckpt), "--audio", s(&audio), "--out", s(&p("sample.motion")), "--seed", "7"]);
            cogesture(&["sample", "--checkpoint", s(&ckpt), "--audio", s(&audio), "--out", s(&p("transfer.motion")), "--emotion", "5"]);
            cogesture(&["edit", "--checkpoint", s(&ckpt), "--reference", s(&motion), "--mask", "right_hand,head", "--audio", s(&audio), "--out", s(&p("edit.motion"))]);
            cogesture(&["eval", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--corpus", s(&w.path("corpus")), "--out", s(&p("eval")), "--repetitions", "2", "--max-clips", "4", "--extractor", s(&w.path("extractor.bin"))]);
            cogesture(&["export", "--motion", s(&p("sample.motion")), "--format", "csv", "--out", s(&p("sample.csv"))]);
            cogesture(&["export", "--motion", s(&p("sample.motion")), "--format", "svg-frames", "--out", s(&p("svg")), "--keyframes", "4"]);
            cogesture(&["export", "--motion", s(&p("sample.motion")), "--format", "latents", "--out", s(&p("latents.csv")), "--extractor", s(&w.path("extractor.bin"))]);
            harness(w, "compare-modes", &format!("det{i}/modes"), "3", "1", "2");
            dir_bytes(&root)
        })
        .collect();
    let names: Vec<&String> = runs[0].iter().map(|(n, _)| n).collect();
    for group in ["corpus/", "train/", "sample", "transfer", "edit", "eval/", "svg/", "latents", "modes/"] {
        let same = runs[0].iter().zip(&runs[1]).filter(|(a, _)| a.0.starts_with(group)).all(|(a, b)| a == b);
        let present = names.iter().any(|n| n.starts_with(group));
        checks.push((group, same && present));
    }
    let identical = runs[0] == runs[1];
    Outcome {
        id: 9,
        name: "determinism",
        pass: identical && checks.iter().all(|c| c.1),
        detail: format!(
            "{} files byte-identical across two runs: {identical}; per output {:?}",
            runs[0].len(),
            checks.iter().map(|c| format!("{}={}", c.0.trim_end_matches('/'), c.1)).collect::<Vec<_>>()
        ),
    }
}

/// `COGESTURE_ACCEPTANCE=1,2,3` restricts the run to the listed criteria.
fn selected() -> Vec<u32> {
    match std::env::var("COGESTURE_ACCEPTANCE") {
        Ok(v) if !v.trim().is_empty() => v.split(',').map(|c| c.trim().parse().expect("criterion number")).collect(),
        _ => (1..=9).collect(),
    }
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let w = Workspace { root: dir.path().to_path_buf() };
    let only = selected();
    let mut outcomes = Vec::new();
    let run = |outcomes: &mut Vec<Outcome>, id: u32, f: &dyn Fn() -> Outcome| {
        if only.contains(&id) {
            let o = f();
            report(&o);
            outcomes.push(o);
        }
    };
    run(&mut outcomes, 1, &criterion_1);
    run(&mut outcomes, 2, &criterion_2);
    run(&mut outcomes, 3, &criterion_3);
    if only.iter().any(|&c| c >= 4) {
        RunConfig::preset(Preset::Toy).save(&w.path("toy.toml")).unwrap();
        cogesture(&["gen-data", "--config", s(&w.path("toy.toml")), "--out", s(&w.path("corpus"))]);
        // Later criteria use the model trained here.
        let c4 = criterion_4(&w);
        report(&c4);
        if only.contains(&4) {
            outcomes.push(c4);
        }
        cogesture(&["train-extractor", "--config", s(&w.path("toy.toml")), "--corpus", s(&w.path("corpus")), "--out", s(&w.path("extractor.bin"))]);
    }
    run(&mut outcomes, 5, &|| criterion_5(&w));
    run(&mut outcomes, 6, &|| criterion_6(&w));
    run(&mut outcomes, 7, &|| criterion_7(&w));
    run(&mut outcomes, 8, &|| criterion_8(&w));
    run(&mut outcomes, 9, &|| criterion_9(&w));

    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    report(&Outcome {
        id: 0,
        name: "summary",
        pass: failed.is_empty(),
        detail: format!("{}/{} criteria passed; failing: {failed:?}", outcomes.len() - failed.len(), outcomes.len()),
    });
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}

use cogesture::jcformer::*;
use cogesture::motion::AudioFeatureSequence;
use cogesture::numeric::{finite_diff_check, Graph, Tensor, Var};
use cogesture::training::{ce_var, mse_var, predict_x0_var, rec_var};
use cogesture::diffusion::make_schedule;
use cogesture::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn tiny(mode: EmotionMode) -> ModelConfig {
    ModelConfig {
        joints: 5,
        max_frames: 12,
        audio_raw_dim: 6,
        audio_dim: 8,
        d_joint: 8,
        d_temporal: 16,
        d_fusion: 16,
        joint_layers: 1,
        temporal_layers: 1,
        fusion_layers: 1,
        joint_heads: 2,
        temporal_heads: 2,
        ff_mult: 2,
        emotions: 4,
        speakers: 2,
        emotion_mode: mode,
        spatial: true,
        emotion: true,
    }
}

/// Randomizes every parameter, including zero-initialized heads, so that no
/// branch is trivially inactive.
fn randomized(config: ModelConfig, seed: u64) -> Jcformer<f64> {
    let mut m = Jcformer::<f64>::new(config, seed).unwrap();
    let mut r = rng(seed + 100);
    for t in m.params_mut().tensors_mut() {
        *t = Tensor::randn(t.shape().to_vec(), &mut r).map(|v| 0.3 * v);
    }
    m
}

fn run<F>(m: &Jcformer<f64>, f: F) -> Tensor<f64>
where
    F: FnOnce(&mut Graph<f64>, &[Var]) -> cogesture::Result<Var>,
{
    let mut g = Graph::new();
    let p = m.params().bind(&mut g, false);
    let v = f(&mut g, &p).unwrap();
    g.value(v).clone()
}

fn inputs(n: usize, c: &ModelConfig, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut r = rng(seed);
    (Tensor::randn([n, c.channels()], &mut r), Tensor::randn([n, c.audio_raw_dim], &mut r))
}

#[test]
fn align_audio_identity_constant_and_interpolation() {
    let c = ModelConfig {
        audio_raw_dim: 4,
        audio_dim: 4,
        ..tiny(EmotionMode::Adaln)
    };
    let mut m = Jcformer::<f64>::new(c, 0).unwrap();
    m.params_mut().set("audio.proj.w", Tensor::eye(4)).unwrap();
    let raw = AudioFeatureSequence::new((0..24).map(|v| v as f64 * 0.5).collect(), 6, 4, 15.0).unwrap();
    assert_eq!(m.align_audio(&raw, 6, 15.0).unwrap().data(), raw.values());
    let constant = AudioFeatureSequence::new(vec![0.7; 40], 10, 4, 50.0).unwrap();
    assert!(m.align_audio(&constant, 3, 15.0).unwrap().data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    // 2 s at 50 Hz to 15 fps: frame i sits at source position i * 99 / 29.
    let ramp = AudioFeatureSequence::new((0..400).map(|i| ((i / 4) as f64).sin()).collect(), 100, 4, 50.0).unwrap();
    let out = m.align_audio(&ramp, 30, 15.0).unwrap();
    for i in [0usize, 7, 13, 29] {
        let pos = i as f64 * 99.0 / 29.0;
        let lo = (pos.floor() as usize).min(98);
        let w = pos - lo as f64;
        let expected = (lo as f64).sin() * (1.0 - w) + ((lo + 1) as f64).sin() * w;
        assert!((out.data()[i * 4] - expected).abs() < 1e-12);
    }
    let short = AudioFeatureSequence::new(vec![0.0; 4], 1, 4, 50.0).unwrap();
    assert!(matches!(m.align_audio(&short, 3, 15.0), Err(Error::Argument(_))));
}

#[test]
fn emotion_head_uniform_at_init_and_permutation_invariant() {
    let c = tiny(EmotionMode::Adaln);
    let m = Jcformer::<f64>::new(c.clone(), 1).unwrap();
    let (_, audio) = inputs(7, &c, 2);
    let head = m.emotion_head(&audio, EmotionChoice::Predicted).unwrap();
    assert!(head.logits.iter().all(|&l| l == head.logits[0]));
    assert_eq!(head.label, 0);
    assert_eq!(head.embedding.len(), c.d_fusion);
    let r = randomized(c.clone(), 3);
    let a = r.emotion_head(&audio, EmotionChoice::Predicted).unwrap();
    let rows: Vec<f64> = [6, 2, 4, 0, 1, 5, 3]
        .iter()
        .flat_map(|&i| audio.data()[i * 6..(i + 1) * 6].to_vec())
        .collect();
    let permuted = Tensor::from_vec([7, 6], rows).unwrap();
    let b = r.emotion_head(&permuted, EmotionChoice::Predicted).unwrap();
    for (x, y) in a.logits.iter().zip(&b.logits) {
        assert!((x - y).abs() < 1e-12);
    }
    let o = r.emotion_head(&audio, EmotionChoice::Label(3)).unwrap();
    assert_eq!(o.label, 3);
    assert!(matches!(r.emotion_head(&audio, EmotionChoice::Label(4)), Err(Error::Argument(_))));
}

#[test]
fn joint_transformer_shape_and_sensitivity() {
    let c = tiny(EmotionMode::Adaln);
    let m = randomized(c.clone(), 4);
    for n in [1, 5, 12] {
        let (x, _) = inputs(n, &c, 5);
        let tok = run(&m, |g, p| {
            let cond = m.condition_vector(g, p, 3, 0)?;
            let x = g.constant(x.clone());
            m.joint_transformer(g, p, x, cond)
        });
        assert_eq!(tok.shape(), &[1, c.d_joint]);
    }
    let (x, _) = inputs(6, &c, 6);
    let token = |x: Tensor<f64>| {
        run(&m, |g, p| {
            let cond = m.condition_vector(g, p, 3, 0)?;
            let x = g.constant(x);
            m.joint_transformer(g, p, x, cond)
        })
    };
    let base = token(x.clone());
    let mut zeroed = x.clone();
    for f in 0..6 {
        for k in 0..3 {
            zeroed.data_mut()[f * 15 + 2 * 3 + k] = 0.0;
        }
    }
    assert!(token(zeroed).max_abs_diff(&base) > 1e-6);
    let default = ModelConfig::default();
    assert_eq!(default.joints + 1, 48);
}

#[test]
fn temporal_positional_encoding_breaks_permutation_equivariance() {
    let c = tiny(EmotionMode::Adaln);
    let mut m = randomized(c.clone(), 7);
    let (x, _) = inputs(6, &c, 8);
    let perm = [3usize, 0, 5, 1, 4, 2];
    let permute = |t: &Tensor<f64>| {
        let w = t.shape()[1];
        Tensor::from_vec(t.shape().to_vec(), perm.iter().flat_map(|&i| t.data()[i * w..(i + 1) * w].to_vec()).collect()).unwrap()
    };
    let temporal = |m: &Jcformer<f64>, x: Tensor<f64>| {
        run(m, |g, p| {
            let cond = m.condition_vector(g, p, 3, 1)?;
            let x = g.constant(x);
            m.temporal_transformer(g, p, x, cond)
        })
    };
    let out = temporal(&m, x.clone());
    assert_eq!(out.shape(), &[6, c.d_temporal]);
    assert!(temporal(&m, permute(&x)).max_abs_diff(&permute(&out)) > 1e-6);
    m.params_mut().set("temporal.pos", Tensor::zeros([c.max_frames, c.d_temporal])).unwrap();
    let out = temporal(&m, x.clone());
    assert!(temporal(&m, permute(&x)).max_abs_diff(&permute(&out)) < 1e-12);
    let (long, _) = inputs(13, &c, 9);
    let mut g = Graph::new();
    let p = m.params().bind(&mut g, false);
    let cond = m.condition_vector(&mut g, &p, 3, 1).unwrap();
    let long = g.constant(long);
    assert!(matches!(m.temporal_transformer(&mut g, &p, long, cond), Err(Error::Argument(_))));
}

#[test]
fn fusion_broadcasts_the_projected_token() {
    let c = tiny(EmotionMode::Adaln);
    let m = randomized(c.clone(), 10);
    let xt = Tensor::<f64>::randn([5, c.d_temporal], &mut rng(11));
    let fused_input = |tok: Tensor<f64>| {
        run(&m, |g, p| {
            let t = g.constant(tok);
            let x = g.constant(xt.clone());
            m.fusion_input(g, p, Some(t), x)
        })
    };
    assert_eq!(fused_input(Tensor::zeros([1, c.d_joint])), xt);
    let delta = Tensor::<f64>::randn([1, c.d_joint], &mut rng(12));
    let shifted = fused_input(delta.clone());
    let w = m.params().get("fuse.token.w").unwrap();
    let proj = cogesture::numeric::matmul(&delta, w).unwrap();
    for f in 0..5 {
        for k in 0..c.d_temporal {
            let d = shifted.get(&[f, k]) - xt.get(&[f, k]);
            assert!((d - proj.data()[k]).abs() < 1e-12);
        }
    }
    let out = run(&m, |g, p| {
        let cond = m.condition_vector(g, p, 2, 0)?;
        let x = g.constant(xt.clone());
        m.fuse(g, p, None, x, cond)
    });
    assert_eq!(out.shape(), &[5, c.d_fusion]);
}

#[test]
fn audio_cross_attention_matches_brute_force() {
    let c = ModelConfig {
        temporal_heads: 1,
        d_fusion: 4,
        d_temporal: 4,
        audio_dim: 4,
        ..tiny(EmotionMode::Adaln)
    };
    let m = randomized(c.clone(), 13);
    let x = Tensor::<f64>::randn([3, 4], &mut rng(14));
    let a = Tensor::<f64>::randn([3, 4], &mut rng(15));
    let out = run(&m, |g, p| {
        let cond = m.condition_vector(g, p, 5, 0)?;
        let cond = g.gelu(cond);
        let (x, a) = (g.constant(x.clone()), g.constant(a.clone()));
        m.audio_cross_attention(g, p, x, a, cond)
    });
    // Oracle: recompute the modulated query input, then double-loop attention.
    let h = run(&m, |g, p| {
        let cond = m.condition_vector(g, p, 5, 0)?;
        let cond = g.gelu(cond);
        let x = g.constant(x.clone());
        let ln = g.layer_norm_plain(x, LN_EPS);
        let s = g.matmul(cond, p[m.params().index_of("audio.norm.scale.w").unwrap()])?;
        let s = g.add(s, p[m.params().index_of("audio.norm.scale.b").unwrap()])?;
        let b = g.matmul(cond, p[m.params().index_of("audio.norm.shift.w").unwrap()])?;
        let b = g.add(b, p[m.params().index_of("audio.norm.shift.b").unwrap()])?;
        let xs = g.mul_row(ln, s)?;
        let y = g.add(ln, xs)?;
        g.add_row(y, b)
    });
    let get = |n: &str| m.params().get(n).unwrap().clone();
    let mm = |a: &Tensor<f64>, b: &Tensor<f64>| cogesture::numeric::matmul(a, b).unwrap();
    let q = mm(&h, &get("audio.attn.q.w"));
    let k = mm(&a, &get("audio.attn.k.w"));
    let v = mm(&a, &get("audio.attn.v.w"));
    let mut att = vec![0.0; 12];
    for i in 0..3 {
        let scores: Vec<f64> = (0..3).map(|j| (0..4).map(|d| q.get(&[i, d]) * k.get(&[j, d])).sum::<f64>() / 2.0).collect();
        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        for d in 0..4 {
            att[i * 4 + d] = (0..3).map(|j| e[j] / z * v.get(&[j, d])).sum();
        }
    }
    let o = mm(&Tensor::from_vec([3, 4], att).unwrap(), &get("audio.attn.o.w"));
    let expected = x.zip_map(&o, |a, b| a + b).unwrap();
    assert!(out.max_abs_diff(&expected) < 1e-12, "{}", out.max_abs_diff(&expected));
}

#[test]
fn audio_cross_attention_edge_cases() {
    let c = tiny(EmotionMode::Adaln);
    let mut m = randomized(c.clone(), 16);
    let x = Tensor::<f64>::randn([4, c.d_fusion], &mut rng(17));
    let a = Tensor::<f64>::randn([4, c.audio_dim], &mut rng(18));
    let apply = |m: &Jcformer<f64>, x: &Tensor<f64>, a: &Tensor<f64>| {
        let mut g = Graph::new();
        let p = m.params().bind(&mut g, false);
        let cond = m.condition_vector(&mut g, &p, 1, 0)?;
        let (x, a) = (g.constant(x.clone()), g.constant(a.clone()));
        let out = m.audio_cross_attention(&mut g, &p, x, a, cond)?;
        Ok::<_, Error>(g.value(out).clone())
    };
    let short = Tensor::<f64>::randn([3, c.audio_dim], &mut rng(19));
    assert!(matches!(apply(&m, &x, &short), Err(Error::Contract(_))));
    // Single audio frame: every query attends to it with weight 1.
    let x1 = Tensor::<f64>::randn([1, c.d_fusion], &mut rng(20));
    let a1 = Tensor::<f64>::randn([1, c.audio_dim], &mut rng(21));
    let out = apply(&m, &x1, &a1).unwrap();
    let mm = |a: &Tensor<f64>, b: &Tensor<f64>| cogesture::numeric::matmul(a, b).unwrap();
    let v = mm(&a1, m.params().get("audio.attn.v.w").unwrap());
    let o = mm(&v, m.params().get("audio.attn.o.w").unwrap());
    assert!(out.max_abs_diff(&x1.zip_map(&o, |a, b| a + b).unwrap()) < 1e-12);
    m.params_mut().set("audio.attn.v.w", Tensor::zeros([c.audio_dim, c.d_fusion])).unwrap();
    assert_eq!(apply(&m, &x, &a).unwrap(), x);
}

#[test]
fn condition_emotion_modes() {
    let x = Tensor::<f64>::randn([5, 16], &mut rng(22));
    let e = Tensor::<f64>::randn([1, 16], &mut rng(23));
    // Fresh adaln modulation is the identity before the refinement block.
    let m = Jcformer::<f64>::new(tiny(EmotionMode::Adaln), 24).unwrap();
    let refine_only = |m: &Jcformer<f64>, x: &Tensor<f64>| {
        run(m, |g, p| {
            let cond = m.condition_vector(g, p, 4, 0)?;
            let x = g.constant(x.clone());
            let e = g.constant(e.clone());
            m.condition_emotion(g, p, x, e, cond)
        })
    };
    let conditioned = refine_only(&m, &x);
    let m0 = Jcformer::<f64>::new(
        ModelConfig {
            emotion_mode: EmotionMode::InContextContent,
            ..tiny(EmotionMode::Adaln)
        },
        24,
    )
    .unwrap();
    assert_eq!(conditioned.shape(), &[5, 16]);
    let _ = m0;
    for mode in EmotionMode::ALL {
        let m = randomized(tiny(mode), 25);
        let out = refine_only(&m, &x);
        assert_eq!(out.shape(), &[5, 16], "{mode}");
        assert!(out.all_finite());
    }
    // Adaln is frame-local: changing frame 0 leaves the other frames' modulation untouched.
    let m = randomized(tiny(EmotionMode::Adaln), 26);
    let modulated = |x: &Tensor<f64>| {
        run(&m, |g, p| {
            let x = g.constant(x.clone());
            let e = g.constant(e.clone());
            let s = g.matmul(e, p[m.params().index_of("emotion.scale.w").unwrap()])?;
            let s = g.add(s, p[m.params().index_of("emotion.scale.b").unwrap()])?;
            let b = g.matmul(e, p[m.params().index_of("emotion.shift.w").unwrap()])?;
            let b = g.add(b, p[m.params().index_of("emotion.shift.b").unwrap()])?;
            let xs = g.mul_row(x, s)?;
            let y = g.add(x, xs)?;
            g.add_row(y, b)
        })
    };
    let mut x2 = x.clone();
    x2.data_mut()[..16].iter_mut().for_each(|v| *v += 1.0);
    let (a, b) = (modulated(&x), modulated(&x2));
    assert_eq!(a.data()[16..], b.data()[16..]);
}

#[test]
fn denoise_preserves_shape_for_variable_lengths() {
    let c = ModelConfig {
        max_frames: 150,
        ..tiny(EmotionMode::Adaln)
    };
    let m = randomized(c.clone(), 27);
    for n in [8, 34, 150] {
        let (x, audio) = inputs(n, &c, n as u64);
        let cond = DenoiseCondition { audio, speaker: 1, emotion: EmotionChoice::Predicted };
        let eps = m.denoise(&x, 10, &cond).unwrap();
        assert_eq!(eps.shape(), x.shape());
        assert!(eps.all_finite());
    }
    let (x, audio) = inputs(8, &c, 1);
    let bad = DenoiseCondition { audio: Tensor::zeros([7, c.audio_raw_dim]), speaker: 0, emotion: EmotionChoice::Predicted };
    assert!(matches!(m.denoise(&x, 1, &bad), Err(Error::Contract(_))));
    let cond = DenoiseCondition { audio, speaker: 0, emotion: EmotionChoice::Predicted };
    let a = m.denoise(&x, 5, &cond).unwrap();
    let b = m.denoise(&x, 50, &cond).unwrap();
    assert!(a.max_abs_diff(&b) > 1e-6, "timestep has no effect");
    let e1 = m.denoise(&x, 5, &DenoiseCondition { emotion: EmotionChoice::Label(1), ..cond.clone() }).unwrap();
    let e2 = m.denoise(&x, 5, &DenoiseCondition { emotion: EmotionChoice::Label(2), ..cond.clone() }).unwrap();
    assert!(e1.max_abs_diff(&e2) > 1e-6);
}

#[test]
fn ablated_models_run() {
    for (spatial, emotion) in [(false, true), (true, false), (false, false)] {
        let c = ModelConfig { spatial, emotion, ..tiny(EmotionMode::Adaln) };
        let m = randomized(c.clone(), 28);
        let (x, audio) = inputs(6, &c, 29);
        let eps = m.denoise(&x, 3, &DenoiseCondition { audio, speaker: 0, emotion: EmotionChoice::Predicted }).unwrap();
        assert_eq!(eps.shape(), x.shape());
        assert!(m.params().get("joint.token").is_some() == spatial);
        assert!(m.params().get("emotion.table").is_some() == emotion);
    }
}

/// Full training objective for one clip, as a function of the parameters.
fn objective<'a>(
    m: &'a Jcformer<f64>,
    x0: &'a Tensor<f64>,
    eps: &'a Tensor<f64>,
    audio: &'a Tensor<f64>,
    t: usize,
) -> impl Fn(&mut Graph<f64>, &[Var]) -> cogesture::Result<Var> + 'a {
    let schedule = make_schedule(200, 5e-4, 0.1).unwrap();
    move |g, p| {
        let xt = cogesture::diffusion::q_sample(x0, t, eps, &schedule)?;
        let xt = g.constant(xt);
        let x0v = g.constant(x0.clone());
        let epsv = g.constant(eps.clone());
        let a = g.constant(audio.clone());
        let f = m.forward(g, p, xt, t, a, 1, EmotionChoice::Label(2))?;
        let mse = mse_var(g, epsv, f.eps, None)?;
        let x0_hat = predict_x0_var(g, xt, f.eps, t, &schedule)?;
        let rec = rec_var(g, x0v, x0_hat, None)?;
        let ce = ce_var(g, f.logits.unwrap(), 2)?;
        let l = g.add(mse, rec)?;
        g.add(l, ce)
    }
}

#[test]
fn end_to_end_gradients_match_finite_differences_for_every_mode() {
    for mode in EmotionMode::ALL {
        let c = tiny(mode);
        let m = randomized(c.clone(), 30);
        let (x0, audio) = inputs(6, &c, 31);
        let eps = Tensor::<f64>::randn([6, c.channels()], &mut rng(32));
        let build = objective(&m, &x0, &eps, &audio, 20);
        let report = finite_diff_check(build, m.params().tensors(), m.params().names(), 1e-5, 1e-3, Some(6)).unwrap();
        assert!(report.all_passed(), "{mode}: {:?}", report.failures());
    }
}

#[test]
fn toy_config_gradients_match_finite_differences() {
    let c = ModelConfig::toy();
    let m = randomized(c.clone(), 33);
    let m = {
        // Keep activations in a moderate range at toy width.
        let mut m = m;
        for t in m.params_mut().tensors_mut() {
            *t = t.map(|v| v * 0.3);
        }
        m
    };
    let (x0, audio) = inputs(34, &c, 34);
    let eps = Tensor::<f64>::randn([34, c.channels()], &mut rng(35));
    let build = objective(&m, &x0, &eps, &audio, 50);
    let report = finite_diff_check(build, m.params().tensors(), m.params().names(), 1e-5, 1e-3, Some(2)).unwrap();
    println!("toy gradient check: max rel err {:e} over {} tensors", report.max_rel_err(), report.params.len());
    assert!(report.all_passed(), "{:?}", report.failures());
}

#[test]
fn output_has_gated_pass_through_of_noisy_input() {
    let c = tiny(EmotionMode::Adaln);
    let fresh = Jcformer::<f64>::new(c.clone(), 1).unwrap();
    let at = |m: &Jcformer<f64>, name: &str| m.params().tensors()[m.params().index_of(name).unwrap()].clone();
    assert!(at(&fresh, "out.skip.b").data().iter().all(|&v| v == 1.0));
    assert!(at(&fresh, "out.skip.w").data().iter().all(|&v| v == 0.0));

    // Raising the gate bias by one adds exactly the input perturbation to the output.
    let base = randomized(c.clone(), 7);
    let mut raised = base.clone();
    let i = raised.params().index_of("out.skip.b").unwrap();
    raised.params_mut().tensors_mut()[i] = raised.params().tensors()[i].map(|v| v + 1.0);
    let (x, audio) = inputs(6, &c, 8);
    let delta = 0.37;
    let mut bumped = x.clone();
    bumped.data_mut()[2 * c.channels() + 4] += delta;
    let cond = DenoiseCondition { audio, speaker: 1, emotion: EmotionChoice::Label(0) };
    let diff = |m: &Jcformer<f64>| m.denoise(&bumped, 40, &cond).unwrap().zip_map(&m.denoise(&x, 40, &cond).unwrap(), |a, b| a - b).unwrap();
    let extra = diff(&raised).zip_map(&diff(&base), |a, b| a - b).unwrap();
    for (k, &v) in extra.data().iter().enumerate() {
        let want = if k == 2 * c.channels() + 4 { delta } else { 0.0 };
        assert!((v - want).abs() < 1e-12, "entry {k}: {v}");
    }
}

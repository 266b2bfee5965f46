//! Oracles and checks shared by the integration tests and the acceptance
//! target. Every check returns a measured quantity or an error message
//! instead of panicking, so the acceptance target can report each one.

#![allow(dead_code)]

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use faceanon::annotations::{
    greedy_match, BoundingBox, FaceAnnotation, Keypoint, KeypointSet, Point, NUM_KEYPOINTS,
};
use faceanon::anonymizers::{deep_anonymize, reflect_101};
use faceanon::autograd::{grad, no_grad, ops, Var};
use faceanon::discriminator::{Discriminator, DiscriminatorConfig, Variant};
use faceanon::evaluation::{DetectionRecord, GroundTruthRecord};
use faceanon::generator::{Generator, GeneratorConfig, GrowthState, PosePyramid};
use faceanon::nn::Module;
use faceanon::tensor::{kernels, Tensor};

pub type Check<T = ()> = Result<T, String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    Tensor::from_fn(shape, |_| normal.sample(rng))
}

/// Standard normal values pushed at least `gap` away from zero, so finite
/// differences never straddle a kink at the origin.
pub fn randn_away_from_zero(shape: &[usize], gap: f32, rng: &mut impl Rng) -> Tensor {
    randn(shape, rng).map(|v| v + gap.copysign(v))
}

pub fn uniform(shape: &[usize], lo: f32, hi: f32, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

// ---------------------------------------------------------------------------
// Finite differences

const FD_STEP: f32 = 1e-2;
pub const GRAD_TOLERANCE: f64 = 1e-3;

/// `sum(out * w)` for a fixed pseudo-random `w`, so every output element
/// gets a distinct weight.
pub fn probe_loss(out: &Var) -> Var {
    let mut r = rng(out.shape().iter().fold(17, |a, &d| a * 31 + d as u64));
    let w = randn(out.shape(), &mut r);
    ops::sum_all(&ops::mul(out, &Var::constant(w)).unwrap())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|a - b| / max(|a|, |b|)` over whole probe vectors.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

/// Fourth-order central difference, so curvature from normalization layers
/// does not swamp the comparison at a step large enough to beat f32 noise.
fn five_point(f: impl Fn(f32) -> f64) -> f64 {
    let h = FD_STEP;
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h as f64)
}

fn probe_indices(numel: usize, max: usize, rng: &mut impl Rng) -> Vec<usize> {
    if numel <= max {
        (0..numel).collect()
    } else {
        (0..max).map(|_| rng.random_range(0..numel)).collect()
    }
}

/// Relative error between backprop and central differences for a scalar
/// function of several tensors.
pub fn gradcheck(f: &dyn Fn(&[Var]) -> Var, inputs: &[Tensor]) -> f64 {
    let leaves: Vec<Var> = inputs.iter().map(|t| Var::leaf(t.clone())).collect();
    let loss = f(&leaves);
    let grads = grad(&loss, &leaves.iter().collect::<Vec<_>>(), false);
    let eval = |xs: &[Tensor]| -> f64 {
        let vs: Vec<Var> = xs.iter().map(|t| Var::constant(t.clone())).collect();
        f(&vs).value().item() as f64
    };
    let mut r = rng(99);
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for (k, t) in inputs.iter().enumerate() {
        let g = grads[k].as_ref().map(|g| g.value().clone()).unwrap_or_else(|| Tensor::zeros(t.shape()));
        for i in probe_indices(t.numel(), 48, &mut r) {
            let shifted = |delta: f32| {
                let mut xs = inputs.to_vec();
                xs[k].data_mut()[i] += delta;
                eval(&xs)
            };
            numeric.push(five_point(shifted));
            analytic.push(g.data()[i] as f64);
        }
    }
    relative_error(&analytic, &numeric)
}

/// [`gradcheck`] over the parameters of a module.
pub fn gradcheck_module<M: Module + Clone>(module: &M, loss: &dyn Fn(&M) -> Var, probes: usize) -> f64 {
    let vars: Vec<Var> = module.parameters().iter().map(|p| p.var().clone()).collect();
    let grads = grad(&loss(module), &vars.iter().collect::<Vec<_>>(), false);
    let mut r = rng(7);
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    let params = module.parameters();
    for (k, p) in params.iter().enumerate() {
        let g = grads[k]
            .as_ref()
            .map(|g| g.value().clone())
            .unwrap_or_else(|| Tensor::zeros(p.value().shape()));
        for i in probe_indices(p.numel(), probes, &mut r) {
            let shifted = |delta: f32| -> f64 {
                let mut m = module.clone();
                let mut ps = m.parameters_mut();
                let mut v = ps[k].value().clone();
                v.data_mut()[i] += delta;
                ps[k].set_value(v).unwrap();
                loss(&m).value().item() as f64
            };
            numeric.push(five_point(shifted));
            analytic.push(g.data()[i] as f64);
        }
    }
    relative_error(&analytic, &numeric)
}

type OpCase = (&'static str, Box<dyn Fn(&[Var]) -> Var>, Vec<Tensor>);

/// One case per differentiable op, each with inputs in its smooth region.
pub fn op_cases() -> Vec<OpCase> {
    let mut r = rng(1);
    let r = &mut r;
    let t = |s: &[usize], r: &mut ChaCha8Rng| randn(s, r);
    let pos = |s: &[usize], r: &mut ChaCha8Rng| uniform(s, 0.5, 2.0, r);
    let img = [2, 3, 4, 4];
    let u = |x: Result<Var, faceanon::Error>| x.unwrap();
    vec![
        ("add", Box::new(move |v: &[Var]| probe_loss(&u(ops::add(&v[0], &v[1])))), vec![t(&img, r), t(&img, r)]),
        ("sub", Box::new(move |v: &[Var]| probe_loss(&u(ops::sub(&v[0], &v[1])))), vec![t(&img, r), t(&img, r)]),
        ("mul", Box::new(move |v: &[Var]| probe_loss(&u(ops::mul(&v[0], &v[1])))), vec![t(&img, r), t(&img, r)]),
        ("scale", Box::new(|v: &[Var]| probe_loss(&ops::scale(&v[0], -1.7))), vec![t(&img, r)]),
        ("affine", Box::new(|v: &[Var]| probe_loss(&ops::affine(&v[0], 0.3, 2.0))), vec![t(&img, r)]),
        ("lerp", Box::new(move |v: &[Var]| probe_loss(&u(ops::lerp(&v[0], &v[1], 0.3)))), vec![t(&img, r), t(&img, r)]),
        ("square", Box::new(|v: &[Var]| probe_loss(&ops::square(&v[0]))), vec![t(&img, r)]),
        ("sum_all", Box::new(|v: &[Var]| ops::square(&ops::sum_all(&v[0]))), vec![t(&img, r)]),
        ("mean_all", Box::new(|v: &[Var]| ops::square(&ops::mean_all(&v[0]))), vec![t(&img, r)]),
        (
            "expand_scalar",
            Box::new(move |v: &[Var]| probe_loss(&u(ops::expand_scalar(&ops::sum_all(&v[0]), &[2, 3])))),
            vec![t(&[3], r)],
        ),
        ("sum_per_sample", Box::new(move |v: &[Var]| probe_loss(&u(ops::sum_per_sample(&v[0])))), vec![t(&img, r)]),
        (
            "expand_per_sample",
            Box::new(move |v: &[Var]| probe_loss(&u(ops::expand_per_sample(&v[0], &[2, 3, 2, 2])))),
            vec![t(&[2], r)],
        ),
        ("sqrt", Box::new(|v: &[Var]| probe_loss(&ops::sqrt(&v[0]))), vec![pos(&img, r)]),
        ("recip", Box::new(|v: &[Var]| probe_loss(&ops::recip(&v[0]))), vec![pos(&img, r)]),
        ("tanh", Box::new(|v: &[Var]| probe_loss(&ops::tanh(&v[0]))), vec![t(&img, r)]),
        (
            "leaky_relu",
            Box::new(|v: &[Var]| probe_loss(&ops::leaky_relu(&v[0], 0.2))),
            vec![randn_away_from_zero(&img, 0.05, r)],
        ),
        (
            "leaky_relu_grad",
            Box::new(move |v: &[Var]| probe_loss(&u(ops::leaky_relu_grad(&v[0], &v[1], 0.2)))),
            vec![t(&img, r), randn_away_from_zero(&img, 0.05, r)],
        ),
        (
            "conv2d",
            Box::new(move |v: &[Var]| probe_loss(&u(ops::conv2d(&v[0], &v[1], 1)))),
            vec![t(&img, r), t(&[2, 3, 3, 3], r)],
        ),
        (
            "conv2d_1x1",
            Box::new(move |v: &[Var]| probe_loss(&u(ops::conv2d(&v[0], &v[1], 0)))),
            vec![t(&img, r), t(&[5, 3, 1, 1], r)],
        ),
        (
            "conv2d_input_grad",
            Box::new(move |v: &[Var]| probe_loss(&u(ops::conv2d_input_grad(&v[0], &v[1], 1, &[2, 3, 4, 4])))),
            vec![t(&[2, 2, 4, 4], r), t(&[2, 3, 3, 3], r)],
        ),
        (
            "conv2d_weight_grad",
            Box::new(move |v: &[Var]| probe_loss(&u(ops::conv2d_weight_grad(&v[0], &v[1], 1, &[2, 3, 3, 3])))),
            vec![t(&img, r), t(&[2, 2, 4, 4], r)],
        ),
        (
            "add_channel_bias",
            Box::new(move |v: &[Var]| probe_loss(&u(ops::add_channel_bias(&v[0], &v[1])))),
            vec![t(&img, r), t(&[3], r)],
        ),
        ("sum_channels", Box::new(move |v: &[Var]| probe_loss(&u(ops::sum_channels(&v[0])))), vec![t(&img, r)]),
        (
            "broadcast_channels",
            Box::new(move |v: &[Var]| probe_loss(&u(ops::broadcast_channels(&v[0], &[2, 3, 2, 2])))),
            vec![t(&[3], r)],
        ),
        (
            "matmul",
            Box::new(move |v: &[Var]| probe_loss(&u(ops::matmul(&v[0], &v[1])))),
            vec![t(&[3, 4], r), t(&[4, 5], r)],
        ),
        ("transpose", Box::new(move |v: &[Var]| probe_loss(&u(ops::transpose(&v[0])))), vec![t(&[3, 4], r)]),
        ("reshape", Box::new(move |v: &[Var]| probe_loss(&u(ops::reshape(&v[0], &[6, 16])))), vec![t(&img, r)]),
        ("flatten", Box::new(move |v: &[Var]| probe_loss(&u(ops::flatten(&v[0])))), vec![t(&img, r)]),
        (
            "upsample_nearest2x",
            Box::new(move |v: &[Var]| probe_loss(&u(ops::upsample_nearest2x(&v[0])))),
            vec![t(&img, r)],
        ),
        (
            "downsample_avg2x",
            Box::new(move |v: &[Var]| probe_loss(&u(ops::downsample_avg2x(&v[0])))),
            vec![t(&img, r)],
        ),
        (
            "concat_channels",
            Box::new(move |v: &[Var]| probe_loss(&u(ops::concat_channels(&[&v[0], &v[1]])))),
            vec![t(&img, r), t(&[2, 2, 4, 4], r)],
        ),
        (
            "slice_channels",
            Box::new(move |v: &[Var]| probe_loss(&u(ops::slice_channels(&v[0], 1, 2)))),
            vec![t(&img, r)],
        ),
        (
            "pad_channels",
            Box::new(move |v: &[Var]| probe_loss(&u(ops::pad_channels(&v[0], 1, 5)))),
            vec![t(&img, r)],
        ),
        ("mean_batch", Box::new(move |v: &[Var]| probe_loss(&u(ops::mean_batch(&v[0])))), vec![t(&img, r)]),
        (
            "repeat_batch",
            Box::new(move |v: &[Var]| probe_loss(&u(ops::repeat_batch(&v[0], 3)))),
            vec![t(&[1, 3, 2, 2], r)],
        ),
        (
            "pixel_norm",
            Box::new(move |v: &[Var]| probe_loss(&u(ops::pixel_norm(&v[0], 1e-8)))),
            vec![t(&img, r)],
        ),
        {
            let (real, fake) = (t(&img, r), t(&img, r));
            (
                "gradient_penalty",
                Box::new(move |v: &[Var]| {
                    let w = v[0].clone();
                    let critic = move |x: &Var| -> faceanon::Result<Var> {
                        let h = ops::leaky_relu(&ops::conv2d(x, &w, 1)?, 0.2);
                        ops::sum_per_sample(&ops::tanh(&h))
                    };
                    u(faceanon::training::penalty_for(critic, &real, &fake, &[0.3, 0.8]))
                }),
                vec![t(&[2, 3, 3, 3], r)],
            )
        },
    ]
}

/// Network checks run with a linear activation: leaky ReLU kinks make central
/// differences (and the penalty, which is discontinuous there) meaningless.
/// The activation itself is covered by the op cases.
pub fn tiny_generator_config() -> GeneratorConfig {
    GeneratorConfig {
        base_resolution: 4,
        max_resolution: 8,
        filters: vec![8, 8],
        alpha_lrelu: 1.0,
        ..GeneratorConfig::default()
    }
}

pub fn tiny_discriminator_config(variant: Variant, mbstd: bool) -> DiscriminatorConfig {
    DiscriminatorConfig {
        variant,
        base_resolution: 4,
        max_resolution: 8,
        filters: vec![8, 8],
        include_minibatch_stddev: mbstd,
        alpha_lrelu: 1.0,
        ..DiscriminatorConfig::default()
    }
}

pub struct NetInputs {
    pub real: Tensor,
    pub condition: Tensor,
    pub pose: PosePyramid,
}

pub fn random_keypoints(m: usize, rng: &mut impl Rng) -> KeypointSet {
    let mut pts = [None; NUM_KEYPOINTS];
    for p in pts.iter_mut() {
        if rng.random_bool(0.8) {
            *p = Some(Point::new(rng.random_range(0.0..m as f64), rng.random_range(0.0..m as f64)));
        }
    }
    KeypointSet::new(pts, rng.random_range(0.0..1.0)).unwrap()
}

pub fn net_inputs(n: usize, base: usize, r: usize, seed: u64) -> NetInputs {
    let mut g = rng(seed);
    let kps: Vec<KeypointSet> = (0..n).map(|_| random_keypoints(r, &mut g)).collect();
    let mut levels = Vec::new();
    let mut l = base;
    while l <= r {
        levels.push(l);
        l *= 2;
    }
    NetInputs {
        real: uniform(&[n, 3, r, r], -1.0, 1.0, &mut g),
        condition: uniform(&[n, 3, r, r], -1.0, 1.0, &mut g),
        pose: PosePyramid::from_keypoints(&kps, r, &levels),
    }
}

/// Largest relative error over the tiny generator and every discriminator
/// variant, at a transition, plus the critic's gradient penalty.
pub fn network_gradchecks() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let state = GrowthState::transition(8, 0.37);
    let inputs = net_inputs(2, 4, 8, 5);
    let mut g = Generator::new(tiny_generator_config(), &mut rng(2)).unwrap();
    g.grow(&mut rng(3)).unwrap();
    let cond = Var::constant(inputs.condition.clone());
    let loss = |m: &Generator| probe_loss(&m.forward(&cond, &inputs.pose, &state).unwrap());
    out.push(("generator parameters".into(), gradcheck_module(&g, &loss, 6)));
    let gin = |v: &[Var]| probe_loss(&g.forward(&v[0], &inputs.pose, &state).unwrap());
    out.push(("generator input".into(), gradcheck(&gin, std::slice::from_ref(&inputs.condition))));

    for (variant, mbstd) in [(Variant::Wide, false), (Variant::Deep, false), (Variant::Unmodified, true)] {
        let mut d = Discriminator::new(tiny_discriminator_config(variant, mbstd), &mut rng(4)).unwrap();
        d.grow(&mut rng(6)).unwrap();
        let real = Var::constant(inputs.real.clone());
        let loss = |m: &Discriminator| probe_loss(&m.forward(&real, &cond, &inputs.pose, &state).unwrap());
        out.push((format!("discriminator {variant:?} parameters"), gradcheck_module(&d, &loss, 4)));
        let din = |v: &[Var]| probe_loss(&d.forward(&v[0], &v[1], &inputs.pose, &state).unwrap());
        out.push((
            format!("discriminator {variant:?} inputs"),
            gradcheck(&din, &[inputs.real.clone(), inputs.condition.clone()]),
        ));
        let fake = inputs.condition.map(|v| -0.5 * v);
        let gp = |m: &Discriminator| {
            faceanon::training::gradient_penalty_at(m, &inputs.real, &fake, &cond, &inputs.pose, &state, &[0.2, 0.9])
                .unwrap()
        };
        out.push((format!("discriminator {variant:?} gradient penalty"), gradcheck_module(&d, &gp, 3)));
    }
    out
}

// ---------------------------------------------------------------------------
// Progressive growing

pub struct GrowthReport {
    pub endpoint_alpha0_bits: bool,
    pub endpoint_alpha1_bits: bool,
    pub linearity: f32,
    pub grow_preserves: f32,
}

fn max_abs(a: &Tensor, b: &Tensor) -> f32 {
    a.max_abs_diff(b)
}

fn pool(t: &Tensor) -> Tensor {
    kernels::downsample_avg2x(t).unwrap()
}

/// Blend endpoints, linearity in alpha, and preservation of the old
/// network's output right after growth, for both networks.
pub fn growth_invariants(seed: u64) -> GrowthReport {
    let cfg = GeneratorConfig {
        base_resolution: 4,
        max_resolution: 16,
        filters: vec![16, 8, 8],
        ..GeneratorConfig::default()
    };
    let dcfg = DiscriminatorConfig {
        base_resolution: 4,
        max_resolution: 16,
        filters: vec![16, 8, 8],
        ..DiscriminatorConfig::default()
    };
    let mut r = rng(seed);
    let mut g = Generator::new(cfg, &mut r).unwrap();
    let mut d = Discriminator::new(dcfg, &mut r).unwrap();
    g.grow(&mut r).unwrap();
    d.grow(&mut r).unwrap();
    let inputs = net_inputs(3, 4, 16, seed + 1);
    let (x8, c8) = (pool(&inputs.real), pool(&inputs.condition));
    let pre_g = no_grad(|| g.forward(&Var::constant(c8.clone()), &inputs.pose, &GrowthState::stable(8)))
        .unwrap()
        .value()
        .clone();
    let pre_d = no_grad(|| {
        d.forward(&Var::constant(x8.clone()), &Var::constant(c8.clone()), &inputs.pose, &GrowthState::stable(8))
    })
    .unwrap()
    .value()
    .clone();
    g.grow(&mut r).unwrap();
    d.grow(&mut r).unwrap();
    let (x, c) = (Var::constant(inputs.real.clone()), Var::constant(inputs.condition.clone()));
    let gen = |a: f32| {
        no_grad(|| g.forward(&c, &inputs.pose, &GrowthState::transition(16, a)))
            .unwrap()
            .value()
            .clone()
    };
    let dis = |a: f32| {
        no_grad(|| d.forward(&x, &c, &inputs.pose, &GrowthState::transition(16, a)))
            .unwrap()
            .value()
            .clone()
    };
    let (g0, g1) = (gen(0.0), gen(1.0));
    let (d0, d1) = (dis(0.0), dis(1.0));
    let g_stable = no_grad(|| g.forward(&c, &inputs.pose, &GrowthState::stable(16))).unwrap().value().clone();
    let d_stable = no_grad(|| d.forward(&x, &c, &inputs.pose, &GrowthState::stable(16))).unwrap().value().clone();
    let up = kernels::upsample_nearest2x(&pre_g).unwrap();

    let mut linearity = 0.0f32;
    for a in [0.1f32, 0.25, 0.5, 0.75, 0.9] {
        let expect_g = g0.zip_map(&g1, |p, q| (1.0 - a) * p + a * q).unwrap();
        let expect_d = d0.zip_map(&d1, |p, q| (1.0 - a) * p + a * q).unwrap();
        linearity = linearity.max(max_abs(&gen(a), &expect_g)).max(max_abs(&dis(a), &expect_d));
    }
    GrowthReport {
        endpoint_alpha0_bits: g0 == up && d0 == pre_d,
        endpoint_alpha1_bits: g1 == g_stable && d1 == d_stable,
        linearity,
        grow_preserves: max_abs(&g0, &up).max(max_abs(&d0, &pre_d)),
    }
}

// ---------------------------------------------------------------------------
// Privacy

/// Anonymize `pairs` random images twice, the second time with every face
/// box filled with fresh noise. Returns the number of pairs whose outputs
/// differ in any bit.
pub fn privacy_violations(pairs: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    let cfg = GeneratorConfig {
        base_resolution: 8,
        max_resolution: 16,
        filters: vec![16, 8],
        ..GeneratorConfig::default()
    };
    let mut g = Generator::new(cfg, &mut r).unwrap();
    g.grow(&mut r).unwrap();
    let mut bad = 0;
    for _ in 0..pairs {
        let (w, h) = (r.random_range(20..48), r.random_range(20..48));
        let a = Tensor::from_fn(&[3, h, w], |_| r.random_range(0..256) as f32);
        let faces: Vec<FaceAnnotation> = (0..r.random_range(1..=3))
            .map(|_| {
                let bw = r.random_range(3.0..w as f64 * 0.6);
                let bh = r.random_range(3.0..h as f64 * 0.6);
                let x0 = r.random_range(-2.0..w as f64 - bw + 2.0);
                let y0 = r.random_range(-2.0..h as f64 - bh + 2.0);
                let bbox = BoundingBox::new(x0, y0, x0 + bw, y0 + bh).unwrap();
                let mut pts = [None; NUM_KEYPOINTS];
                for p in pts.iter_mut() {
                    *p = Some(Point::new(r.random_range(0.0..w as f64), r.random_range(0.0..h as f64)));
                }
                FaceAnnotation {
                    bbox,
                    keypoints: KeypointSet::new(pts, 1.0).unwrap(),
                }
            })
            .collect();
        let mut b = a.clone();
        for f in &faces {
            if let Some(rect) = f.bbox.pixel_rect(w, h) {
                for ch in 0..3 {
                    for y in rect.y0..rect.y1 {
                        for x in rect.x0..rect.x1 {
                            b.data_mut()[(ch * h + y) * w + x] = r.random_range(0..256) as f32;
                        }
                    }
                }
            }
        }
        let oa = deep_anonymize(&a, &faces, &g).unwrap();
        let ob = deep_anonymize(&b, &faces, &g).unwrap();
        if oa.image != ob.image || oa.skipped != ob.skipped {
            bad += 1;
        }
    }
    bad
}

// ---------------------------------------------------------------------------
// Matching oracle

fn face_points_inside(k: &KeypointSet, b: &BoundingBox) -> bool {
    let mut any = false;
    for kp in [Keypoint::Nose, Keypoint::LeftEye, Keypoint::RightEye] {
        if let Some(p) = k.get(kp) {
            any = true;
            if p.x < b.x0() || p.x > b.x1() || p.y < b.y0() || p.y > b.y1() {
                return false;
            }
        }
    }
    any
}

/// Replay the greedy rule by brute force: repeatedly scan every remaining
/// (box, keypoint set) pair and take the best one.
pub fn matching_oracle(kps: &[KeypointSet], boxes: &[BoundingBox]) -> Vec<(usize, usize)> {
    let mut box_used = vec![false; boxes.len()];
    let mut kp_used = vec![false; kps.len()];
    let mut out = Vec::new();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for (bi, b) in boxes.iter().enumerate() {
            for (ki, k) in kps.iter().enumerate() {
                if box_used[bi] || kp_used[ki] || !face_points_inside(k, b) {
                    continue;
                }
                let s = b.confidence() + k.confidence();
                if best.is_none_or(|(bs, _, _)| s > bs) {
                    best = Some((s, bi, ki));
                }
            }
        }
        let Some((_, bi, ki)) = best else { break };
        box_used[bi] = true;
        kp_used[ki] = true;
        out.push((bi, ki));
    }
    out
}

/// Random matching instance with up to `max` boxes and keypoint sets, with
/// tied confidences and absent points.
pub fn random_matching_instance(max: usize, r: &mut impl Rng) -> (Vec<KeypointSet>, Vec<BoundingBox>) {
    let conf = |r: &mut dyn rand::RngCore| [0.2, 0.4, 0.5, 0.6, 0.8][r.random_range(0..5)];
    let boxes = (0..r.random_range(0..=max))
        .map(|_| {
            let (x, y) = (r.random_range(0.0..40.0), r.random_range(0.0..40.0));
            let (w, h) = (r.random_range(2.0..25.0), r.random_range(2.0..25.0));
            BoundingBox::with_confidence(x, y, x + w, y + h, conf(r)).unwrap()
        })
        .collect();
    let kps = (0..r.random_range(0..=max))
        .map(|_| {
            let (cx, cy) = (r.random_range(0.0..60.0), r.random_range(0.0..60.0));
            let mut pts = [None; NUM_KEYPOINTS];
            for p in pts.iter_mut() {
                if r.random_bool(0.75) {
                    *p = Some(Point::new(cx + r.random_range(-5.0..5.0), cy + r.random_range(-5.0..5.0)));
                }
            }
            KeypointSet::new(pts, conf(r)).unwrap()
        })
        .collect();
    (kps, boxes)
}

/// Number of instances, out of `count`, where greedy matching disagrees
/// with the oracle.
pub fn matching_mismatches(count: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    let mut bad = 0;
    for _ in 0..count {
        let (kps, boxes) = random_matching_instance(6, &mut r);
        let got: Vec<FaceAnnotation> = greedy_match(&kps, &boxes);
        let want: Vec<FaceAnnotation> = matching_oracle(&kps, &boxes)
            .into_iter()
            .map(|(b, k)| FaceAnnotation {
                bbox: boxes[b],
                keypoints: kps[k],
            })
            .collect();
        if got != want {
            bad += 1;
        }
    }
    bad
}

// ---------------------------------------------------------------------------
// AP oracle

fn oracle_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x1().min(b.x1()) - a.x0().max(b.x0()) + 1.0).max(0.0);
    let iy = (a.y1().min(b.y1()) - a.y0().max(b.y0()) + 1.0).max(0.0);
    let inter = ix * iy;
    let area = |r: &BoundingBox| (r.x1() - r.x0() + 1.0) * (r.y1() - r.y0() + 1.0);
    inter / (area(a) + area(b) - inter)
}

/// Precision and recall when only detections scoring at least `t` count.
fn pr_at(dets: &[DetectionRecord], gts: &[&GroundTruthRecord], t: f64, thr: f64) -> (f64, f64) {
    let mut kept: Vec<(usize, &DetectionRecord)> = dets.iter().enumerate().filter(|(_, d)| d.confidence >= t).collect();
    kept.sort_by(|a, b| b.1.confidence.partial_cmp(&a.1.confidence).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    let mut used = vec![false; gts.len()];
    let mut tp = 0;
    for (_, d) in &kept {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if used[gi] || g.image != d.image {
                continue;
            }
            let o = oracle_iou(&d.bbox, &g.bbox);
            if o >= thr && best.is_none_or(|(_, bo)| o > bo) {
                best = Some((gi, o));
            }
        }
        if let Some((gi, _)) = best {
            used[gi] = true;
            tp += 1;
        }
    }
    let precision = if kept.is_empty() { 1.0 } else { tp as f64 / kept.len() as f64 };
    (precision, tp as f64 / gts.len() as f64)
}

/// AP by enumerating every confidence threshold: the interpolated
/// precision at recall level `r` is the best precision of any threshold
/// reaching recall `r`.
pub fn ap_oracle(dets: &[DetectionRecord], gts: &[&GroundTruthRecord], thr: f64) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let mut thresholds: Vec<f64> = dets.iter().map(|d| d.confidence).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let curve: Vec<(f64, f64)> = thresholds.iter().map(|&t| pr_at(dets, gts, t, thr)).collect();
    let mut recalls: Vec<f64> = curve.iter().map(|c| c.1).filter(|&r| r > 0.0).collect();
    recalls.sort_by(|a, b| a.partial_cmp(b).unwrap());
    recalls.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for r in recalls {
        let p = curve.iter().filter(|c| c.1 >= r).map(|c| c.0).fold(0.0, f64::max);
        ap += (r - prev) * p;
        prev = r;
    }
    Some(ap)
}

/// Random AP fixture with up to `max_dets` detections over a few images,
/// including exact duplicates, near misses and tied confidences.
pub fn random_ap_fixture(max_dets: usize, r: &mut impl Rng) -> (Vec<DetectionRecord>, Vec<GroundTruthRecord>) {
    use faceanon::evaluation::Difficulty;
    let images = ["a", "b", "c"];
    let gts: Vec<GroundTruthRecord> = (0..r.random_range(0..8))
        .map(|_| {
            let (x, y) = (r.random_range(0.0..50.0), r.random_range(0.0..50.0));
            let s = r.random_range(3.0..20.0);
            GroundTruthRecord {
                image: images[r.random_range(0..3)].into(),
                bbox: BoundingBox::new(x, y, x + s, y + s).unwrap(),
                difficulty: Difficulty::ALL[r.random_range(0..3)],
            }
        })
        .collect();
    let dets = (0..r.random_range(0..=max_dets))
        .map(|_| {
            let conf = if r.random_bool(0.3) {
                [0.25, 0.5, 0.75][r.random_range(0..3)]
            } else {
                r.random_range(0.0..1.0)
            };
            let (image, bbox) = if !gts.is_empty() && r.random_bool(0.6) {
                let g = &gts[r.random_range(0..gts.len())];
                let (b, j) = (&g.bbox, r.random_range(-3.0..3.0));
                (g.image.clone(), BoundingBox::new(b.x0() + j, b.y0(), b.x1() + j, b.y1()).unwrap())
            } else {
                let (x, y) = (r.random_range(0.0..50.0), r.random_range(0.0..50.0));
                let s = r.random_range(3.0..20.0);
                (images[r.random_range(0..3)].to_string(), BoundingBox::new(x, y, x + s, y + s).unwrap())
            };
            DetectionRecord::new(image, bbox, conf).unwrap()
        })
        .collect();
    (dets, gts)
}

// ---------------------------------------------------------------------------
// Baseline anonymizer oracles (dense, per pixel)

pub struct Fixture {
    pub image: Tensor,
    pub bbox: BoundingBox,
}

pub fn random_fixture(r: &mut impl Rng) -> Fixture {
    let (w, h) = (r.random_range(8..40), r.random_range(8..40));
    let image = Tensor::from_fn(&[3, h, w], |_| r.random_range(0..256) as f32);
    let bw = r.random_range(1.5..w as f64);
    let bh = r.random_range(1.5..h as f64);
    let x0 = r.random_range(-1.0..w as f64 - bw + 1.0);
    let y0 = r.random_range(-1.0..h as f64 - bh + 1.0);
    Fixture {
        image,
        bbox: BoundingBox::new(x0, y0, x0 + bw, y0 + bh).unwrap(),
    }
}

/// Apply `per_pixel(region, rw, rh, x, y)` to every pixel of the face
/// rectangle; everything else is copied.
fn oracle_map(f: &Fixture, per_pixel: &dyn Fn(&dyn Fn(isize, isize) -> f64, usize, usize, usize, usize) -> f64) -> Vec<f64> {
    let (c, h, w) = (f.image.shape()[0], f.image.shape()[1], f.image.shape()[2]);
    let mut out: Vec<f64> = f.image.data().iter().map(|&v| v as f64).collect();
    let Some(rect) = f.bbox.pixel_rect(w, h) else { return out };
    let (rw, rh) = (rect.width(), rect.height());
    for ch in 0..c {
        let at = |x: isize, y: isize| -> f64 {
            let xx = reflect_101(x, rw);
            let yy = reflect_101(y, rh);
            f.image.data()[(ch * h + rect.y0 + yy) * w + rect.x0 + xx] as f64
        };
        for y in 0..rh {
            for x in 0..rw {
                out[(ch * h + rect.y0 + y) * w + rect.x0 + x] = per_pixel(&at, rw, rh, x, y);
            }
        }
    }
    out
}

pub fn black_out_oracle(f: &Fixture) -> Vec<f64> {
    oracle_map(f, &|_, _, _, _, _| 0.0)
}

pub fn pixelate_oracle(f: &Fixture, n: usize) -> Vec<f64> {
    oracle_map(f, &|at, rw, rh, x, y| {
        // Block j of an axis of length len covers [j*len/k, (j+1)*len/k).
        let block = |p: usize, len: usize| -> usize {
            let k = n.min(len);
            (0..k).find(|&j| p < (j + 1) * len / k).unwrap()
        };
        let (bx, by) = (block(x, rw), block(y, rh));
        let (mut sum, mut count) = (0.0, 0.0);
        for yy in 0..rh {
            for xx in 0..rw {
                if block(xx, rw) == bx && block(yy, rh) == by {
                    sum += at(xx as isize, yy as isize);
                    count += 1.0;
                }
            }
        }
        sum / count
    })
}

/// Direct 2-D convolution with the normalized isotropic Gaussian.
pub fn gaussian_oracle(f: &Fixture, k: usize, sigma: f64) -> Vec<f64> {
    let rad = (k / 2) as isize;
    let mut weights = vec![vec![0.0; k]; k];
    let mut total = 0.0;
    for dy in -rad..=rad {
        for dx in -rad..=rad {
            let v = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            weights[(dy + rad) as usize][(dx + rad) as usize] = v;
            total += v;
        }
    }
    oracle_map(f, &|at, _, _, x, y| {
        let mut s = 0.0;
        for dy in -rad..=rad {
            for dx in -rad..=rad {
                s += weights[(dy + rad) as usize][(dx + rad) as usize] / total * at(x as isize + dx, y as isize + dy);
            }
        }
        s
    })
}

/// Sliding-window mean with the odd window for this face width.
pub fn heavy_blur_oracle(f: &Fixture) -> Vec<f64> {
    let mut side = (0.3 * f.bbox.width()).round().max(1.0) as isize;
    if side % 2 == 0 {
        side -= 1;
    }
    let rad = side / 2;
    oracle_map(f, &|at, _, _, x, y| {
        let mut s = 0.0;
        for dy in -rad..=rad {
            for dx in -rad..=rad {
                s += at(x as isize + dx, y as isize + dy);
            }
        }
        s / (side * side) as f64
    })
}

pub fn max_deviation(got: &Tensor, want: &[f64]) -> f64 {
    got.data().iter().zip(want).map(|(&g, &w)| (g as f64 - w).abs()).fold(0.0, f64::max)
}

/// Largest deviation of each baseline from its oracle over `count` random
/// fixtures.
pub fn anonymizer_deviations(count: usize, seed: u64) -> Check<Vec<(&'static str, f64)>> {
    use faceanon::anonymizers::{black_out, gaussian_blur, heavy_blur, pixelate};
    let mut r = rng(seed);
    let mut worst = [("blackout", 0.0), ("pixelate16", 0.0), ("pixelate8", 0.0), ("blur9s3", 0.0), ("heavyblur", 0.0)];
    let e = |x: faceanon::Error| x.to_string();
    for _ in 0..count {
        let f = random_fixture(&mut r);
        let devs = [
            max_deviation(&black_out(&f.image, &f.bbox).map_err(e)?, &black_out_oracle(&f)),
            max_deviation(&pixelate(&f.image, &f.bbox, 16).map_err(e)?, &pixelate_oracle(&f, 16)),
            max_deviation(&pixelate(&f.image, &f.bbox, 8).map_err(e)?, &pixelate_oracle(&f, 8)),
            max_deviation(&gaussian_blur(&f.image, &f.bbox, 9, 3.0).map_err(e)?, &gaussian_oracle(&f, 9, 3.0)),
            max_deviation(&heavy_blur(&f.image, &f.bbox).map_err(e)?, &heavy_blur_oracle(&f)),
        ];
        for (w, d) in worst.iter_mut().zip(devs) {
            w.1 = f64::max(w.1, d);
        }
    }
    Ok(worst.to_vec())
}

/// Largest gap between `average_precision` and the threshold oracle, over
/// every cumulative split of `count` fixtures.
pub fn ap_oracle_deviation(count: usize, max_dets: usize, seed: u64) -> Check<f64> {
    use faceanon::evaluation::{average_precision, Difficulty, DEFAULT_IOU_THRESHOLD};
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for i in 0..count {
        let (dets, gts) = random_ap_fixture(max_dets, &mut r);
        for d in Difficulty::ALL {
            let split: Vec<&GroundTruthRecord> = gts.iter().filter(|g| d.includes(g.difficulty)).collect();
            match (average_precision(&dets, &split, DEFAULT_IOU_THRESHOLD), ap_oracle(&dets, &split, DEFAULT_IOU_THRESHOLD)) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => {}
                (a, b) => return Err(format!("fixture {i}: engine {a:?}, oracle {b:?}")),
            }
        }
    }
    Ok(worst)
}

/// Fixtures whose AP changes when confidences go through a strictly
/// increasing map into [0, 1].
pub fn ap_rank_variance(count: usize, seed: u64) -> usize {
    use faceanon::evaluation::{average_precision, Difficulty, DEFAULT_IOU_THRESHOLD};
    let maps: [fn(f64) -> f64; 3] = [|c| c * c * c, f64::sqrt, |c| 0.25 + 0.5 * c];
    let mut r = rng(seed);
    let mut bad = 0;
    for _ in 0..count {
        let (dets, gts) = random_ap_fixture(20, &mut r);
        let split: Vec<&GroundTruthRecord> = gts.iter().filter(|g| Difficulty::Hard.includes(g.difficulty)).collect();
        let base = average_precision(&dets, &split, DEFAULT_IOU_THRESHOLD);
        for m in maps {
            let moved: Vec<DetectionRecord> = dets
                .iter()
                .map(|d| DetectionRecord::new(d.image.clone(), d.bbox, m(d.confidence)).unwrap())
                .collect();
            if average_precision(&moved, &split, DEFAULT_IOU_THRESHOLD) != base {
                bad += 1;
            }
        }
    }
    bad
}

/// Splits whose degradation ratio is not exactly 1 when the anonymized
/// detections equal the original ones.
pub fn ap_identity_ratio_failures(count: usize, seed: u64) -> Check<usize> {
    use faceanon::evaluation::{ap_degradation_report, Difficulty, DEFAULT_IOU_THRESHOLD};
    let mut r = rng(seed);
    let mut bad = 0;
    let mut defined = 0;
    for _ in 0..count {
        let (dets, gts) = random_ap_fixture(20, &mut r);
        let dets: Vec<DetectionRecord> = dets.into_iter().filter(|d| gts.iter().any(|g| g.image == d.image)).collect();
        let report = ap_degradation_report(&dets, &dets, &gts, &Difficulty::ALL, DEFAULT_IOU_THRESHOLD)
            .map_err(|e| e.to_string())?;
        for s in report {
            match (s.original, s.ratio) {
                (Some(o), Some(ratio)) if o > 0.0 => {
                    defined += 1;
                    if ratio != 1.0 {
                        bad += 1;
                    }
                }
                (Some(o), None) if o > 0.0 => bad += 1,
                _ => {}
            }
        }
    }
    if defined == 0 {
        return Err("no fixture had a defined ratio".into());
    }
    Ok(bad)
}

// ---------------------------------------------------------------------------
// Command line

pub fn faceanon(args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_faceanon"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn path_str(p: &std::path::Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// One rendered 64x64 image in `dir/images` with its index, and a
/// checkpoint of an untrained toy trainer.
pub struct CliFixture {
    pub images: std::path::PathBuf,
    pub index: std::path::PathBuf,
    pub checkpoint: std::path::PathBuf,
    pub face: FaceAnnotation,
}

pub fn cli_fixture(dir: &std::path::Path) -> CliFixture {
    use faceanon::annotations::{write_jsonl, IndexEntry};
    let images = dir.join("images");
    std::fs::create_dir_all(&images).unwrap();
    let sample = faceanon::data::render_toy_face(64, &mut rng(12));
    faceanon::image_io::save_rgb(&sample.crop, &images.join("sample.png")).unwrap();
    let face = FaceAnnotation {
        bbox: sample.face_box,
        keypoints: sample.keypoints,
    };
    let index = dir.join("index.jsonl");
    write_jsonl(
        &index,
        &[IndexEntry {
            image: "sample.png".into(),
            faces: vec![face],
        }],
    )
    .unwrap();
    let checkpoint = dir.join("untrained.ckpt");
    let mut cfg = faceanon::training::TrainConfig::toy();
    cfg.data.synthetic.count = 16;
    faceanon::training::Trainer::new(cfg).unwrap().save(&checkpoint).unwrap();
    CliFixture {
        images,
        index,
        checkpoint,
        face,
    }
}

/// Run every anonymization method on the fixture image; each must exit
/// cleanly and change some face pixel while keeping the rest.
pub fn cli_methods_runnable(dir: &std::path::Path) -> Check<Vec<&'static str>> {
    use faceanon::anonymizers::Method;
    let fx = cli_fixture(dir);
    let original = faceanon::image_io::load_rgb(&fx.images.join("sample.png")).map_err(|e| e.to_string())?;
    let (h, w) = (original.shape()[1], original.shape()[2]);
    let rect = fx.face.bbox.pixel_rect(w, h).ok_or("face outside the image")?;
    let mut ran = Vec::new();
    for m in Method::ALL {
        let out = dir.join(format!("out-{m}"));
        let mut args = vec![
            "anonymize",
            "--method",
            m.name(),
            "--annotations",
            path_str(&fx.index),
            "--in",
            path_str(&fx.images),
            "--out",
            path_str(&out),
        ];
        if m.needs_generator() {
            args.extend(["--checkpoint", path_str(&fx.checkpoint)]);
        }
        let o = faceanon(&args);
        if !o.status.success() {
            return Err(format!("{m}: {}", String::from_utf8_lossy(&o.stderr)));
        }
        let got = faceanon::image_io::load_rgb(&out.join("sample.png")).map_err(|e| e.to_string())?;
        let mut changed_inside = false;
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let i = (c * h + y) * w + x;
                    let inside = x >= rect.x0 && x < rect.x0 + rect.width() && y >= rect.y0 && y < rect.y0 + rect.height();
                    if inside {
                        changed_inside |= got.data()[i] != original.data()[i];
                    } else if got.data()[i] != original.data()[i] {
                        return Err(format!("{m}: pixel ({x}, {y}) outside the face changed"));
                    }
                }
            }
        }
        if !changed_inside {
            return Err(format!("{m}: face left unchanged"));
        }
        if !out.join("manifest.json").exists() {
            return Err(format!("{m}: no manifest"));
        }
        ran.push(m.name());
    }
    Ok(ran)
}

// ---------------------------------------------------------------------------
// Toy training

pub struct ToyRun {
    pub untrained_fid: f64,
    pub trained_fid: f64,
    pub steps: u64,
    pub nonfinite_losses: usize,
    /// Whether a run resumed from a checkpoint taken halfway through the
    /// 32x32 transition ends in the same state, byte for byte.
    pub resume_bit_exact: Option<bool>,
    pub seconds: f64,
}

fn fresh_generator_at_max(cfg: &faceanon::training::TrainConfig) -> Check<Generator> {
    let e = |x: faceanon::Error| x.to_string();
    let mut g = Generator::new(cfg.generator.clone(), &mut rng(cfg.seed)).map_err(e)?;
    while g.resolution() < cfg.generator.max_resolution {
        g.grow(&mut rng(cfg.seed)).map_err(e)?;
    }
    Ok(g)
}

/// Run the toy configuration to the end of its schedule and measure the
/// desk-FID of the running-average generator before and after.
pub fn toy_run(seed: u64, use_pose: bool, check_resume: bool) -> Check<ToyRun> {
    use faceanon::evaluation::{desk_fid, RandomConvEmbedder};
    use faceanon::generator::Phase;
    use faceanon::training::{checkpoint_bytes, trainer_from_bytes, TrainConfig, Trainer};
    let e = |x: faceanon::Error| x.to_string();
    let t0 = std::time::Instant::now();
    let mut cfg = TrainConfig::toy();
    cfg.seed = seed;
    cfg.generator.use_pose = use_pose;
    cfg.discriminator.use_pose = use_pose;
    let data = cfg.data.load(cfg.generator.max_resolution).map_err(e)?;
    let embedder = RandomConvEmbedder::default();
    let untrained_fid = desk_fid(&fresh_generator_at_max(&cfg)?, &data, &embedder).map_err(e)?;

    let mut trainer = Trainer::new(cfg).map_err(e)?;
    let per_phase = trainer.schedule().images_per_phase();
    let mut snapshot: Option<Vec<u8>> = None;
    let mut nonfinite = 0;
    while !trainer.is_finished() {
        let p = *trainer.progress();
        let spec = *trainer.schedule().current(&p).ok_or("schedule ended early")?;
        if check_resume
            && snapshot.is_none()
            && spec.resolution == 32
            && spec.phase == Phase::Transition
            && 2 * p.images_in_phase >= per_phase
        {
            snapshot = Some(checkpoint_bytes(&trainer).map_err(e)?);
        }
        match trainer.step(&data) {
            Ok(m) if m.loss_d.is_finite() && m.loss_g.is_finite() => {}
            Ok(_) | Err(faceanon::Error::NonFinite(_)) => {
                nonfinite += 1;
                break;
            }
            Err(x) => return Err(x.to_string()),
        }
    }
    let steps = trainer.progress().step;
    let trained_fid = desk_fid(trainer.ema_generator(), &data, &embedder).map_err(e)?;

    let resume_bit_exact = match snapshot {
        Some(bytes) => {
            let mut resumed = trainer_from_bytes(&bytes).map_err(e)?;
            let reencoded = checkpoint_bytes(&resumed).map_err(e)?;
            resumed.run(&data, None, |_, _| Ok(())).map_err(e)?;
            Some(reencoded == bytes && checkpoint_bytes(&resumed).map_err(e)? == checkpoint_bytes(&trainer).map_err(e)?)
        }
        None if check_resume => return Err("never reached the middle of the 32x32 transition".into()),
        None => None,
    };
    Ok(ToyRun {
        untrained_fid,
        trained_fid,
        steps,
        nonfinite_losses: nonfinite,
        resume_bit_exact,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// FID engine

/// Worst error of the closed form `(m1 - m2)^2 + (s1 - s2)^2` over random
/// 1-D Gaussian pairs.
pub fn fid_closed_form_error(cases: usize, seed: u64) -> f64 {
    use faceanon::evaluation::{frechet_distance, FeatureStats};
    use nalgebra::DMatrix;
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (m1, m2) = (r.random_range(-5.0..5.0), r.random_range(-5.0..5.0));
        let (s1, s2): (f64, f64) = (r.random_range(0.0..3.0), r.random_range(0.0..3.0));
        let a = FeatureStats::new(vec![m1], DMatrix::from_element(1, 1, s1 * s1), 2).unwrap();
        let b = FeatureStats::new(vec![m2], DMatrix::from_element(1, 1, s2 * s2), 2).unwrap();
        let want = (m1 - m2).powi(2) + (s1 - s2).powi(2);
        worst = worst.max((frechet_distance(&a, &b).unwrap() - want).abs());
    }
    worst
}

fn random_stats(dim: usize, r: &mut impl Rng) -> faceanon::evaluation::FeatureStats {
    let samples: Vec<Vec<f32>> = (0..3 * dim)
        .map(|_| (0..dim).map(|_| r.random_range(-1.0f32..1.0)).collect())
        .collect();
    faceanon::evaluation::feature_stats(&samples).unwrap()
}

/// Worst asymmetry `|d(a, b) - d(b, a)|` relative to `d`, and worst
/// `d(a, a)`, over random full-rank statistics.
pub fn fid_symmetry_identity(cases: usize, seed: u64) -> (f64, f64) {
    use faceanon::evaluation::frechet_distance;
    let mut r = rng(seed);
    let (mut asym, mut ident) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let dim = r.random_range(1..12);
        let (a, b) = (random_stats(dim, &mut r), random_stats(dim, &mut r));
        let (ab, ba) = (frechet_distance(&a, &b).unwrap(), frechet_distance(&b, &a).unwrap());
        asym = asym.max((ab - ba).abs() / ab.max(1e-12));
        ident = ident.max(frechet_distance(&a, &a).unwrap());
    }
    (asym, ident)
}

/// FID between the embedder statistics of `count` rendered toy faces
/// accumulated in order and in reverse order.
pub fn self_fid(count: usize) -> Check<f64> {
    use faceanon::evaluation::{frechet_distance, Embedder, RandomConvEmbedder, StatsAccumulator};
    use faceanon::preprocess::normalize_u8;
    let e = |x: faceanon::Error| x.to_string();
    let embedder = RandomConvEmbedder::default();
    let mut r = rng(50_000);
    let mut features: Vec<Vec<f32>> = Vec::with_capacity(count);
    let chunk = 250;
    while features.len() < count {
        let n = chunk.min(count - features.len());
        let crops: Vec<Tensor> = (0..n)
            .map(|_| normalize_u8(&faceanon::data::render_toy_face(32, &mut r).crop))
            .collect::<Result<_, _>>()
            .map_err(e)?;
        features.extend(embedder.embed(&Tensor::stack(&crops).map_err(e)?).map_err(e)?);
    }
    let (mut fwd, mut rev) = (StatsAccumulator::new(embedder.dim()), StatsAccumulator::new(embedder.dim()));
    for f in &features {
        fwd.push(f).map_err(e)?;
    }
    for f in features.iter().rev() {
        rev.push(f).map_err(e)?;
    }
    frechet_distance(&fwd.finish().map_err(e)?, &rev.finish().map_err(e)?).map_err(e)
}

//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use arm_core::arm::{affinity_backward, affinity_forward, ArmConfig, ArmHead, GenericFeatureState};
use arm_core::arrangement::{pixel_shuffle, pixel_shuffle_backward};
use arm_core::data::LoadedDataset;
use arm_core::gradcheck::{finite_diff_grad, relative_error};
use arm_core::ops::{
    batchnorm_backward, batchnorm_forward, channel_mean, channel_mean_backward, conv2d_backward,
    conv2d_forward, global_avg_pool, global_avg_pool_backward, linear_backward, linear_forward, relu,
    relu_backward, softmax_cross_entropy, BnHyper, ConvGeometry, Mode, RunningStats,
};
use arm_core::Tensor;

pub const FD_STEP: f32 = 1e-2;
pub const GRAD_TOL: f64 = 1e-3;

/// Counts windows covering each pixel by walking every window and every tap.
pub fn perception_brute(h: usize, w: usize, k: usize, s: usize, p: usize) -> Vec<u32> {
    let mut counts = vec![0u32; h * w];
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    let mut y0 = 0;
    while y0 + k <= ph {
        let mut x0 = 0;
        while x0 + k <= pw {
            for y in y0..y0 + k {
                for x in x0..x0 + k {
                    if y >= p && y < p + h && x >= p && x < p + w {
                        counts[(y - p) * w + (x - p)] += 1;
                    }
                }
            }
            x0 += s;
        }
        y0 += s;
    }
    counts
}

/// Contamination after each layer, from an explicitly padded clean-mass grid.
pub fn albino_brute(h: usize, w: usize, layers: &[(usize, usize, usize)]) -> Vec<(usize, usize, Vec<f64>)> {
    let mut mass = vec![1.0f64; h * w];
    let (mut ch, mut cw) = (h, w);
    let mut out = Vec::new();
    for &(k, s, p) in layers {
        let (ph, pw) = (ch + 2 * p, cw + 2 * p);
        let mut padded = vec![0.0f64; ph * pw];
        for y in 0..ch {
            for x in 0..cw {
                padded[(y + p) * pw + x + p] = mass[y * cw + x];
            }
        }
        let (oh, ow) = ((ph - k) / s + 1, (pw - k) / s + 1);
        let mut next = vec![0.0f64; oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut sum = 0.0;
                for ky in 0..k {
                    for kx in 0..k {
                        sum += padded[(oy * s + ky) * pw + ox * s + kx];
                    }
                }
                next[oy * ow + ox] = sum / (k * k) as f64;
            }
        }
        mass = next;
        ch = oh;
        cw = ow;
        out.push((ch, cw, mass.iter().map(|m| 1.0 - m).collect()));
    }
    out
}

/// Pixel shuffle by scattering every input element to its destination.
pub fn shuffle_brute(x: &Tensor, r: usize) -> Tensor {
    let (n, c, h, w) = x.dims4().unwrap();
    let oc = c / (r * r);
    let mut out = vec![0.0f32; x.numel()];
    for b in 0..n {
        for ci in 0..c {
            let (o, i, j) = (ci / (r * r), (ci % (r * r)) / r, ci % r);
            for y in 0..h {
                for xx in 0..w {
                    let src = ((b * c + ci) * h + y) * w + xx;
                    let dst = ((b * oc + o) * h * r + y * r + i) * w * r + xx * r + j;
                    out[dst] = x.data()[src];
                }
            }
        }
    }
    Tensor::new(&[n, oc, h * r, w * r], out).unwrap()
}

/// Nearest class mean in pixel space, fitted on `train` and scored on `test`.
pub fn nearest_centroid_accuracy(data: &LoadedDataset, train: &[usize], test: &[usize]) -> f64 {
    let k = data.index.num_classes();
    let d = data.height * data.width;
    let mut sums = vec![vec![0.0f64; d]; k];
    let mut counts = vec![0usize; k];
    for &i in train {
        let c = data.index.samples[i].label;
        counts[c] += 1;
        for (s, &v) in sums[c].iter_mut().zip(&data.images[i]) {
            *s += v as f64;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    }
    let correct = test
        .iter()
        .filter(|&&i| {
            let img = &data.images[i];
            let best = (0..k)
                .min_by(|&a, &b| {
                    let da: f64 = sums[a].iter().zip(img).map(|(m, &v)| (m - v as f64).powi(2)).sum();
                    let db: f64 = sums[b].iter().zip(img).map(|(m, &v)| (m - v as f64).powi(2)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            best == data.index.samples[i].label
        })
        .count();
    correct as f64 / test.len() as f64
}

/// WA and UA straight from confusion CSV text, without the library parser.
pub fn metrics_from_confusion_csv(text: &str) -> (f64, f64) {
    let rows: Vec<Vec<u64>> = text
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    let total: u64 = rows.iter().flatten().sum();
    let trace: u64 = (0..rows.len()).map(|i| rows[i][i]).sum();
    let recalls: Vec<f64> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.iter().sum::<u64>() > 0)
        .map(|(i, r)| r[i] as f64 / r.iter().sum::<u64>() as f64)
        .collect();
    (trace as f64 / total as f64, recalls.iter().sum::<f64>() / recalls.len() as f64)
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Values bounded away from zero so ReLU is differentiable at every probe.
fn off_kink(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = uniform(shape, rng);
    for v in t.data_mut() {
        *v = v.signum() * (0.05 + v.abs());
    }
    t
}

fn worst(results: &mut Vec<(&'static str, f64)>, name: &'static str, analytic: &Tensor, numeric: &Tensor) {
    let e = relative_error(analytic, numeric);
    match results.iter_mut().find(|(n, _)| *n == name) {
        Some((_, w)) => *w = w.max(e),
        None => results.push((name, e)),
    }
}

fn fd(f: impl FnMut(&Tensor) -> f64, x: &Tensor) -> Tensor {
    finite_diff_grad(f, x, FD_STEP).unwrap()
}

/// Toy head on a `1×8×4×4`-per-sample input: r = 2, k = 4, s = 2, three classes.
pub fn toy_head(seed: u64) -> ArmHead {
    let cfg = ArmConfig {
        da_kernel: 4,
        da_stride: 2,
        ..ArmConfig::for_backbone(8, 4, 4, 3)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut head = ArmHead::new(cfg, &mut rng).unwrap();
    head.affinity = GenericFeatureState::with_buffer(uniform(&[3, 3], &mut rng), 0.3, true).unwrap();
    head
}

/// Worst norm-wise relative error of every analytic gradient against central
/// differences, per op, over `seeds`. Losses are `⟨w, output⟩` with random `w`.
pub fn gradient_suite(seeds: std::ops::Range<u64>) -> Vec<(&'static str, f64)> {
    let mut res = Vec::new();
    for seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        conv_case(&mut res, &mut rng, false);
        conv_case(&mut res, &mut rng, true);
        batchnorm_case(&mut res, &mut rng);
        linear_case(&mut res, &mut rng);
        reduce_cases(&mut res, &mut rng);
        shuffle_case(&mut res, &mut rng);
        affinity_case(&mut res, &mut rng);
        loss_case(&mut res, &mut rng);
        head_case(&mut res, seed);
    }
    res
}

fn conv_case(res: &mut Vec<(&'static str, f64)>, rng: &mut ChaCha8Rng, shared: bool) {
    let k = rng.random_range(1..=3usize);
    let s = rng.random_range(1..=2usize);
    let p = rng.random_range(0..=1usize);
    let cin = rng.random_range(1..=3usize);
    let n = rng.random_range(1..=2usize);
    let (h, w) = (rng.random_range(k..=k + 3), rng.random_range(k..=k + 3));
    let geom = if shared {
        ConvGeometry::shared(k, s, p, cin).unwrap()
    } else {
        ConvGeometry::new(k, s, p, cin, rng.random_range(1..=3)).unwrap()
    };
    let x = uniform(&[n, cin, h, w], rng);
    let kern = uniform(&geom.kernel_shape(), rng);
    let wts = uniform(&geom.output_shape(x.shape()).unwrap(), rng);
    let (gi, gk) = conv2d_backward(&wts, &x, &kern, &geom).unwrap();
    let (nx, nk) = if shared { ("da_conv.input", "da_conv.kernel") } else { ("conv.input", "conv.kernel") };
    worst(res, nx, &gi, &fd(|t| conv2d_forward(t, &kern, &geom).unwrap().dot(&wts), &x));
    worst(res, nk, &gk, &fd(|t| conv2d_forward(&x, t, &geom).unwrap().dot(&wts), &kern));
}

fn batchnorm_case(res: &mut Vec<(&'static str, f64)>, rng: &mut ChaCha8Rng) {
    let (n, c) = (rng.random_range(2..=3usize), rng.random_range(1..=3usize));
    let x = uniform(&[n, c, 3, 3], rng);
    let scale = Tensor::uniform(&[c], 0.5, 1.5, rng);
    let shift = uniform(&[c], rng);
    for mode in [Mode::Train, Mode::Eval] {
        let mut stats = RunningStats::new(c);
        stats.mean = uniform(&[c], rng);
        stats.var = Tensor::uniform(&[c], 0.5, 2.0, rng);
        let wts = uniform(x.shape(), rng);
        let eval = |x: &Tensor, sc: &Tensor, sh: &Tensor| {
            let mut st = stats.clone();
            batchnorm_forward(x, sc, sh, mode, &mut st, BnHyper::default()).unwrap().0.dot(&wts)
        };
        let mut st = stats.clone();
        let (_, cache) = batchnorm_forward(&x, &scale, &shift, mode, &mut st, BnHyper::default()).unwrap();
        let (gi, gs, gb) = batchnorm_backward(&wts, &cache, &scale).unwrap();
        let names = match mode {
            Mode::Train => ["batchnorm.train.input", "batchnorm.train.scale", "batchnorm.train.shift"],
            Mode::Eval => ["batchnorm.eval.input", "batchnorm.eval.scale", "batchnorm.eval.shift"],
        };
        worst(res, names[0], &gi, &fd(|t| eval(t, &scale, &shift), &x));
        worst(res, names[1], &gs, &fd(|t| eval(&x, t, &shift), &scale));
        worst(res, names[2], &gb, &fd(|t| eval(&x, &scale, t), &shift));
    }
}

fn linear_case(res: &mut Vec<(&'static str, f64)>, rng: &mut ChaCha8Rng) {
    let (n, f, k) = (rng.random_range(1..=3usize), rng.random_range(1..=6usize), rng.random_range(1..=4usize));
    let x = uniform(&[n, f], rng);
    let wm = uniform(&[k, f], rng);
    let b = uniform(&[k], rng);
    let wts = uniform(&[n, k], rng);
    let (gi, gw, gb) = linear_backward(&wts, &x, &wm).unwrap();
    let eval = |x: &Tensor, wm: &Tensor, b: &Tensor| linear_forward(x, wm, b).unwrap().dot(&wts);
    worst(res, "linear.input", &gi, &fd(|t| eval(t, &wm, &b), &x));
    worst(res, "linear.weight", &gw, &fd(|t| eval(&x, t, &b), &wm));
    worst(res, "linear.bias", &gb, &fd(|t| eval(&x, &wm, t), &b));
}

fn reduce_cases(res: &mut Vec<(&'static str, f64)>, rng: &mut ChaCha8Rng) {
    let (n, c, h, w) = (2, rng.random_range(1..=4usize), rng.random_range(1..=4usize), rng.random_range(1..=4usize));
    let x = uniform(&[n, c, h, w], rng);

    let wm = uniform(&[n, h, w], rng);
    let g = channel_mean_backward(&wm, c).unwrap();
    worst(res, "channel_mean", &g, &fd(|t| channel_mean(t).unwrap().dot(&wm), &x));

    let wg = uniform(&[n, c], rng);
    let g = global_avg_pool_backward(&wg, h, w).unwrap();
    worst(res, "global_avg_pool", &g, &fd(|t| global_avg_pool(t).unwrap().dot(&wg), &x));

    let xr = off_kink(&[n, c, h, w], rng);
    let wr = uniform(xr.shape(), rng);
    let g = relu_backward(&wr, &xr).unwrap();
    worst(res, "relu", &g, &fd(|t| relu(t).dot(&wr), &xr));
}

fn shuffle_case(res: &mut Vec<(&'static str, f64)>, rng: &mut ChaCha8Rng) {
    let r = rng.random_range(1..=3usize);
    let c = r * r * rng.random_range(1..=2usize);
    let x = uniform(&[1, c, 2, 3], rng);
    let y = pixel_shuffle(&x, r).unwrap();
    let wts = uniform(y.shape(), rng);
    let g = pixel_shuffle_backward(&wts, r).unwrap();
    worst(res, "pixel_shuffle", &g, &fd(|t| pixel_shuffle(t, r).unwrap().dot(&wts), &x));
}

fn affinity_case(res: &mut Vec<(&'static str, f64)>, rng: &mut ChaCha8Rng) {
    let (n, h, w) = (rng.random_range(1..=4usize), 3, 2);
    let x = uniform(&[n, h, w], rng);
    let lambda = rng.random_range(0.05f32..0.95);
    let base = GenericFeatureState::with_buffer(uniform(&[h, w], rng), lambda, true).unwrap();
    let wts = uniform(x.shape(), rng);
    let eval = |x: &Tensor, lam: f32| {
        let mut st = base.clone();
        st.lambda.data_mut()[0] = lam;
        affinity_forward(&mut st, x, Mode::Train).unwrap().0.dot(&wts)
    };
    let mut st = base.clone();
    let (_, cache) = affinity_forward(&mut st, &x, Mode::Train).unwrap();
    let gi = affinity_backward(&mut st, &cache, &wts).unwrap();
    worst(res, "affinity.input", &gi, &fd(|t| eval(t, lambda), &x));
    let gl = Tensor::new(&[1], st.lambda.grad().unwrap().to_vec()).unwrap();
    let lam = Tensor::full(&[1], lambda);
    worst(res, "affinity.lambda", &gl, &fd(|t| eval(&x, t.data()[0]), &lam));
}

fn loss_case(res: &mut Vec<(&'static str, f64)>, rng: &mut ChaCha8Rng) {
    let (n, k) = (rng.random_range(1..=4usize), rng.random_range(2..=5usize));
    let logits = Tensor::uniform(&[n, k], -3.0, 3.0, rng);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
    worst(res, "softmax_cross_entropy", &g, &fd(|t| softmax_cross_entropy(t, &labels).unwrap().0, &logits));
}

fn head_case(res: &mut Vec<(&'static str, f64)>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let base = toy_head(seed);
    let x = uniform(&[3, 8, 4, 4], &mut rng);
    let wts = uniform(&[3, 3], &mut rng);

    let mut head = base.clone();
    let (_, cache) = head.forward(&x, Mode::Train).unwrap();
    let gx = head.backward(&cache, &wts).unwrap();
    worst(res, "arm_head.input", &gx, &fd(|t| base.clone().forward(t, Mode::Train).unwrap().0.dot(&wts), &x));

    let analytic: Vec<(String, Tensor)> = head
        .named_tensors()
        .into_iter()
        .filter(|(_, _, trainable)| *trainable)
        .map(|(name, t, _)| (name, t.grad_tensor().expect("trainable tensors carry gradients")))
        .collect();
    for (name, grad) in analytic {
        let point = base
            .named_tensors()
            .into_iter()
            .find(|(n, _, _)| *n == name)
            .map(|(_, t, _)| t.detach())
            .unwrap();
        let numeric = fd(
            |t| {
                let mut h = base.clone();
                for (n, p, _) in h.named_tensors_mut() {
                    if n == name {
                        p.data_mut().copy_from_slice(t.data());
                    }
                }
                h.forward(&x, Mode::Train).unwrap().0.dot(&wts)
            },
            &point,
        );
        let label: &'static str = match name.as_str() {
            "da.kernel" => "arm_head.da.kernel",
            "bn.scale" => "arm_head.bn.scale",
            "bn.shift" => "arm_head.bn.shift",
            "affinity.lambda" => "arm_head.affinity.lambda",
            "fc.weight" => "arm_head.fc.weight",
            "fc.bias" => "arm_head.fc.bias",
            other => panic!("unexpected trainable tensor {other}"),
        };
        worst(res, label, &grad, &numeric);
    }
}

pub fn rng(seed: u64) -> impl Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

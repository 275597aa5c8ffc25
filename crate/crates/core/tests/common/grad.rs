//! Central finite differences, the oracle for every backward pass.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use tom_core::gridworld::{Action, CELLS};
use tom_core::neural::layers::{BatchNorm, Conv2d, GlobalAvgPool, LeakyRelu, Linear};
use tom_core::neural::{cross_entropy, kl_divergence, Mode, Tensor};
use tom_core::observer::{multihead_loss, BatchLabels, LossWeights, ObserverModel, Variant};

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;
/// The whole network has thousands of leaky-ReLU kinks; a ±1e-3 nudge to an
/// early weight moves many pre-activations across zero, which breaks the
/// difference quotient rather than the gradient. f64 keeps 1e-5 clean.
pub const MODEL_STEP: f64 = 1e-5;
pub const MIN_STEP: f64 = 1e-8;

/// Below this gradient norm the difference quotient at `STEP` is mostly
/// rounding noise, so errors are measured against it instead. The noise
/// grows as 1/step.
pub const NOISE_FLOOR: f64 = 1e-7;

/// `‖a − n‖ / max(‖a‖, ‖n‖, NOISE_FLOOR)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    relative_error_with(NOISE_FLOOR, analytic, numeric)
}

pub fn relative_error_with(floor: f64, analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    diff / scale.max(floor)
}

/// Numeric derivative of `loss` with respect to `get(state)[i]` for each
/// `i` in `coords`, restoring the value afterwards.
pub fn numeric<S>(
    state: &mut S,
    loss: &mut dyn FnMut(&mut S) -> f64,
    get: &dyn Fn(&mut S) -> &mut [f64],
    coords: &[usize],
) -> Vec<f64> {
    numeric_with(STEP, state, loss, get, coords)
}

pub fn numeric_with<S>(
    step: f64,
    state: &mut S,
    loss: &mut dyn FnMut(&mut S) -> f64,
    get: &dyn Fn(&mut S) -> &mut [f64],
    coords: &[usize],
) -> Vec<f64> {
    coords
        .iter()
        .map(|&i| {
            let v = get(state)[i];
            get(state)[i] = v + step;
            let up = loss(state);
            get(state)[i] = v - step;
            let down = loss(state);
            get(state)[i] = v;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Smallest step at which the network is still differentiable along one
/// coordinate. A leaky-ReLU input within `h` of zero makes the quotients
/// at `h` and `h/10` disagree; then the step shrinks, down to `MIN_STEP`.
/// Returns the step used and the quotient at it.
pub fn smooth_difference<S>(
    state: &mut S,
    loss: &mut dyn FnMut(&mut S) -> f64,
    get: &dyn Fn(&mut S) -> &mut [f64],
    i: usize,
) -> (f64, f64) {
    let mut h = MODEL_STEP;
    let mut coarse = numeric_with(h, state, loss, get, &[i])[0];
    while h > MIN_STEP {
        let fine = numeric_with(h / 10.0, state, loss, get, &[i])[0];
        if relative_error_with(NOISE_FLOOR * STEP * 10.0 / h, &[coarse], &[fine]) < TOLERANCE / 100.0 {
            return (h, coarse);
        }
        h /= 10.0;
        coarse = fine;
    }
    (h, coarse)
}

pub fn coords(rng: &mut ChaCha8Rng, len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        (0..max).map(|_| rng.random_range(0..len)).collect()
    }
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pick(a: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| a[i]).collect()
}

/// Worst relative error of one check, with a label for reporting.
#[derive(Debug)]
pub struct Check {
    pub what: String,
    pub error: f64,
}

fn check(what: impl Into<String>, analytic: &[f64], numeric: &[f64]) -> Check {
    Check {
        what: what.into(),
        error: relative_error(analytic, numeric),
    }
}

/// Projects a layer's output on a fixed random direction so the scalar
/// loss has a known upstream gradient.
struct Probe {
    x: Tensor<f64>,
    r: Vec<f64>,
}

pub fn conv_instance(rng: &mut ChaCha8Rng) -> Vec<Check> {
    let (n, h, w) = (rng.random_range(1..3), rng.random_range(3..6), rng.random_range(3..6));
    let (cin, cout) = (rng.random_range(1..5), rng.random_range(1..5));
    let k = if rng.random_bool(0.75) { 3 } else { 1 };
    let mut conv = Conv2d::<f64>::new(cin, cout, k, &mut tom_core::seed::rng(rng.random()));
    conv.bias.values_mut().copy_from_slice(&random_vec(rng, cout));
    let x = Tensor::new(&[n, h, w, cin], random_vec(rng, n * h * w * cin)).unwrap();
    let r = random_vec(rng, n * h * w * cout);
    conv.forward(&x).unwrap();
    let dx = conv.backward(&Tensor::new(&[n, h, w, cout], r.clone()).unwrap());
    let (dw, db) = (conv.weight.grad().unwrap().to_vec(), conv.bias.grad().unwrap().to_vec());

    let mut s = (conv, Probe { x, r });
    let mut loss = |s: &mut (Conv2d<f64>, Probe)| dot(s.0.forward(&s.1.x).unwrap().values(), &s.1.r);
    let cx = coords(rng, dx.len(), 30);
    let cw = coords(rng, dw.len(), 30);
    let nx = numeric(&mut s, &mut loss, &|s| s.1.x.values_mut(), &cx);
    let nw = numeric(&mut s, &mut loss, &|s| s.0.weight.values_mut(), &cw);
    let nb = numeric(&mut s, &mut loss, &|s| s.0.bias.values_mut(), &(0..cout).collect::<Vec<_>>());
    let tag = format!("conv{k}x{k} {n}x{h}x{w}x{cin}->{cout}");
    vec![
        check(format!("{tag} input"), &pick(dx.values(), &cx), &nx),
        check(format!("{tag} weight"), &pick(&dw, &cw), &nw),
        check(format!("{tag} bias"), &db, &nb),
    ]
}

pub fn batchnorm_instance(rng: &mut ChaCha8Rng, mode: Mode) -> Vec<Check> {
    let (n, h, w, c) = (rng.random_range(2..4), rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..5));
    let mut bn = BatchNorm::<f64>::new(c);
    bn.gamma.values_mut().copy_from_slice(&random_vec(rng, c));
    bn.beta.values_mut().copy_from_slice(&random_vec(rng, c));
    bn.running_mean = random_vec(rng, c);
    bn.running_var = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
    // a channel with nearly equal values has σ close to √ε, where the
    // normalisation curves too sharply for a ±1e-3 difference quotient
    let x = loop {
        let v = random_vec(rng, n * h * w * c);
        let spread = (0..c).all(|k| {
            let col: Vec<f64> = v.iter().skip(k).step_by(c).copied().collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            col.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / col.len() as f64 >= 0.01
        });
        if spread {
            break Tensor::new(&[n, h, w, c], v).unwrap();
        }
    };
    let r = random_vec(rng, x.len());
    // running statistics move on every train-mode pass but do not feed the
    // train-mode output, so repeated forwards stay a pure function
    bn.forward(&x, mode).unwrap();
    let dx = bn.backward(&Tensor::new(x.shape(), r.clone()).unwrap());
    let (dg, db) = (bn.gamma.grad().unwrap().to_vec(), bn.beta.grad().unwrap().to_vec());
    let mut s = (bn, Probe { x, r });
    let mut loss = |s: &mut (BatchNorm<f64>, Probe)| dot(s.0.forward(&s.1.x, mode).unwrap().values(), &s.1.r);
    let cx = coords(rng, dx.len(), 30);
    let all: Vec<usize> = (0..c).collect();
    let nx = numeric(&mut s, &mut loss, &|s| s.1.x.values_mut(), &cx);
    let ng = numeric(&mut s, &mut loss, &|s| s.0.gamma.values_mut(), &all);
    let nb = numeric(&mut s, &mut loss, &|s| s.0.beta.values_mut(), &all);
    let tag = format!("batchnorm {mode:?} {n}x{h}x{w}x{c}");
    vec![
        check(format!("{tag} input"), &pick(dx.values(), &cx), &nx),
        check(format!("{tag} gamma"), &dg, &ng),
        check(format!("{tag} beta"), &db, &nb),
    ]
}

pub fn linear_instance(rng: &mut ChaCha8Rng) -> Vec<Check> {
    let (n, fin, fout) = (rng.random_range(1..4), rng.random_range(1..20), rng.random_range(1..10));
    let mut fc = Linear::<f64>::new(fin, fout, &mut tom_core::seed::rng(rng.random()));
    fc.bias.values_mut().copy_from_slice(&random_vec(rng, fout));
    let x = Tensor::new(&[n, fin], random_vec(rng, n * fin)).unwrap();
    let r = random_vec(rng, n * fout);
    fc.forward(&x).unwrap();
    let dx = fc.backward(&Tensor::new(&[n, fout], r.clone()).unwrap());
    let (dw, db) = (fc.weight.grad().unwrap().to_vec(), fc.bias.grad().unwrap().to_vec());
    let mut s = (fc, Probe { x, r });
    let mut loss = |s: &mut (Linear<f64>, Probe)| dot(s.0.forward(&s.1.x).unwrap().values(), &s.1.r);
    let cx = coords(rng, dx.len(), 30);
    let cw = coords(rng, dw.len(), 30);
    let nx = numeric(&mut s, &mut loss, &|s| s.1.x.values_mut(), &cx);
    let nw = numeric(&mut s, &mut loss, &|s| s.0.weight.values_mut(), &cw);
    let nb = numeric(&mut s, &mut loss, &|s| s.0.bias.values_mut(), &(0..fout).collect::<Vec<_>>());
    let tag = format!("linear {n}x{fin}->{fout}");
    vec![
        check(format!("{tag} input"), &pick(dx.values(), &cx), &nx),
        check(format!("{tag} weight"), &pick(&dw, &cw), &nw),
        check(format!("{tag} bias"), &db, &nb),
    ]
}

pub fn leaky_instance(rng: &mut ChaCha8Rng) -> Vec<Check> {
    let n = rng.random_range(1..40);
    // keep clear of the kink at 0, where the derivative is undefined
    let x: Vec<f64> = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.01..2.0);
            if rng.random_bool(0.5) { v } else { -v }
        })
        .collect();
    let x = Tensor::new(&[n], x).unwrap();
    let r = random_vec(rng, n);
    let mut l = LeakyRelu::<f64>::new();
    l.forward(&x);
    let dx = l.backward(&Tensor::new(&[n], r.clone()).unwrap());
    let mut s = (l, Probe { x, r });
    let mut loss = |s: &mut (LeakyRelu<f64>, Probe)| dot(s.0.forward(&s.1.x).values(), &s.1.r);
    let cx: Vec<usize> = (0..n).collect();
    let nx = numeric(&mut s, &mut loss, &|s| s.1.x.values_mut(), &cx);
    vec![check(format!("leaky relu {n}"), dx.values(), &nx)]
}

pub fn pool_instance(rng: &mut ChaCha8Rng) -> Vec<Check> {
    let (n, h, w, c) = (rng.random_range(1..3), rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
    let x = Tensor::new(&[n, h, w, c], random_vec(rng, n * h * w * c)).unwrap();
    let r = random_vec(rng, n * c);
    let mut p = GlobalAvgPool::new();
    p.forward(&x).unwrap();
    let dx = p.backward(&Tensor::new(&[n, c], r.clone()).unwrap());
    let mut s = (p, Probe { x, r });
    let mut loss = |s: &mut (GlobalAvgPool, Probe)| dot(s.0.forward(&s.1.x).unwrap().values(), &s.1.r);
    let cx = coords(rng, dx.len(), 30);
    let nx = numeric(&mut s, &mut loss, &|s| s.1.x.values_mut(), &cx);
    vec![check(format!("avg pool {n}x{h}x{w}x{c}"), &pick(dx.values(), &cx), &nx)]
}

pub fn residual_instance(rng: &mut ChaCha8Rng) -> Vec<Check> {
    // y = leaky(a + b): the skip must pass the same gradient to both arms
    let n = rng.random_range(1..30);
    let av = random_vec(rng, n);
    // sums near the kink get redrawn, as in the bare activation check
    let bv: Vec<f64> = av
        .iter()
        .map(|&x| loop {
            let y = rng.random_range(-1.0..1.0);
            if (x + y).abs() >= 0.01 {
                break y;
            }
        })
        .collect();
    let a = Tensor::new(&[n], av).unwrap();
    let b = Tensor::new(&[n], bv).unwrap();
    let r = random_vec(rng, n);
    let mut l = LeakyRelu::<f64>::new();
    l.forward(&a.add(&b).unwrap());
    let d = l.backward(&Tensor::new(&[n], r.clone()).unwrap());
    let mut s = (a, b, r);
    let mut loss = |s: &mut (Tensor<f64>, Tensor<f64>, Vec<f64>)| {
        let mut l = LeakyRelu::<f64>::new();
        dot(l.forward(&s.0.add(&s.1).unwrap()).values(), &s.2)
    };
    let all: Vec<usize> = (0..n).collect();
    let na = numeric(&mut s, &mut loss, &|s| s.0.values_mut(), &all);
    let nb = numeric(&mut s, &mut loss, &|s| s.1.values_mut(), &all);
    vec![
        check(format!("residual add {n} left"), d.values(), &na),
        check(format!("residual add {n} right"), d.values(), &nb),
    ]
}

pub fn loss_instance(rng: &mut ChaCha8Rng) -> Vec<Check> {
    let (n, k) = (rng.random_range(1..5), rng.random_range(2..12));
    let logits: Vec<f64> = (0..n * k).map(|_| rng.random_range(-3.0..3.0)).collect();
    let classes: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let mut p: Vec<f64> = (0..n * k)
        .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random::<f64>() })
        .collect();
    for row in p.chunks_mut(k) {
        row[0] += 0.1;
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    let (_, g_ce) = cross_entropy(&logits, k, &classes);
    let (_, g_kl) = kl_divergence(&logits, k, &p);
    let all: Vec<usize> = (0..n * k).collect();
    let mut s = logits.clone();
    let n_ce = numeric(&mut s, &mut |l: &mut Vec<f64>| cross_entropy(l, k, &classes).0, &|l| l.as_mut_slice(), &all);
    let mut s = logits;
    let n_kl = numeric(&mut s, &mut |l: &mut Vec<f64>| kl_divergence(l, k, &p).0, &|l| l.as_mut_slice(), &all);
    vec![
        check(format!("cross entropy {n}x{k}"), &g_ce, &n_ce),
        check(format!("kl divergence {n}x{k}"), &g_kl, &n_kl),
    ]
}

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> (Tensor<f64>, BatchLabels) {
    let x = (0..n * 2420).map(|_| if rng.random_bool(0.15) { 1.0 } else { 0.0 }).collect();
    let mut labels = BatchLabels::default();
    for _ in 0..n {
        labels.target.push(rng.random_range(0..CELLS));
        labels.action.push(rng.random_range(0..Action::COUNT));
        labels.state.push(rng.random_range(0..CELLS));
        let raw: Vec<f32> = (0..CELLS).map(|_| if rng.random_bool(0.5) { 0.0 } else { rng.random() }).collect();
        let s: f32 = raw.iter().sum();
        labels.belief.extend(raw.iter().map(|v| v / s));
    }
    (Tensor::new(&[n, 11, 11, 20], x).unwrap(), labels)
}

fn nth_param(m: &mut ObserverModel<f64>, t: usize) -> &mut [f64] {
    m.params_mut().swap_remove(t).tensor.values_mut()
}

/// Full-model check on a batch of two in train mode: every parameter
/// tensor, `per_tensor` random coordinates each. One check per tensor.
pub fn model_instance(rng: &mut ChaCha8Rng, variant: Variant, per_tensor: usize) -> Vec<Check> {
    let mut model = ObserverModel::<f64>::new(variant, rng.random());
    let (x, labels) = random_batch(rng, 2);
    let w = LossWeights {
        target: rng.random_range(0.5..1.5),
        action: rng.random_range(0.5..1.5),
        state: rng.random_range(0.5..1.5),
        belief: rng.random_range(0.5..1.5),
    };
    model.zero_grad();
    let pred = model.forward(&x, Mode::Train).unwrap();
    let (_, g) = multihead_loss(&pred, &labels, &w).unwrap();
    model.backward(&g);
    let tensors: Vec<(String, Vec<f64>)> = model
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.tensor.grad().unwrap().to_vec()))
        .collect();

    let mut loss = |m: &mut ObserverModel<f64>| {
        let pred = m.forward(&x, Mode::Train).unwrap();
        multihead_loss(&pred, &labels, &w).unwrap().0.total
    };
    tensors
        .iter()
        .enumerate()
        .map(|(t, (name, analytic))| {
            let idx = coords(rng, analytic.len(), per_tensor);
            let error = idx
                .iter()
                .map(|&i| {
                    let (h, num) = smooth_difference(&mut model, &mut loss, &|m| nth_param(m, t), i);
                    relative_error_with(NOISE_FLOOR * STEP / h, &[analytic[i]], &[num])
                })
                .fold(0.0, f64::max);
            Check {
                what: format!("{variant} model {name}"),
                error,
            }
        })
        .collect()
}

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed::Rng;

use super::{gemm, Mat, Mode, ParamMut, ParamRef, Real, Tensor};

pub const LEAKY_SLOPE: f64 = 0.01;

pub fn leaky_relu<T: Real>(x: T) -> T {
    if x >= T::zero() {
        x
    } else {
        x * T::of(LEAKY_SLOPE)
    }
}

/// He-uniform: U(−√(6/fan_in), √(6/fan_in)).
pub fn he_uniform<T: Real>(n: usize, fan_in: usize, rng: &mut Rng) -> Vec<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect()
}

fn nhwc(x: &Tensor<impl Real>, what: &str) -> Result<[usize; 4]> {
    match *x.shape() {
        [n, h, w, c] => Ok([n, h, w, c]),
        ref s => Err(Error::ShapeMismatch(format!("{what} expects NHWC input, got {s:?}"))),
    }
}

fn bias_sums<T: Real>(dy: &[T], cols: usize, db: &mut [T]) {
    for row in dy.chunks_exact(cols) {
        for (g, &d) in db.iter_mut().zip(row) {
            *g += d;
        }
    }
}

/// Square-kernel convolution (cross-correlation), stride 1, zero "same"
/// padding. Weights are stored `[k, k, c_in, c_out]`.
#[derive(Clone, Debug)]
pub struct Conv2d<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    k: usize,
    c_in: usize,
    c_out: usize,
    cache: Option<ConvCache<T>>,
}

#[derive(Clone, Debug)]
struct ConvCache<T> {
    dims: [usize; 4],
    cols: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(c_in: usize, c_out: usize, k: usize, rng: &mut Rng) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd");
        let fan_in = k * k * c_in;
        Conv2d {
            weight: Tensor::param(&[k, k, c_in, c_out], he_uniform(fan_in * c_out, fan_in, rng)),
            bias: Tensor::param(&[c_out], vec![T::zero(); c_out]),
            k,
            c_in,
            c_out,
            cache: None,
        }
    }

    pub fn kernel(&self) -> usize {
        self.k
    }

    pub fn channels(&self) -> (usize, usize) {
        (self.c_in, self.c_out)
    }

    fn im2col(&self, x: &[T], [n, h, w, c]: [usize; 4]) -> Vec<T> {
        let k = self.k;
        let pad = k / 2;
        let width = k * k * c;
        let mut cols = vec![T::zero(); n * h * w * width];
        for b in 0..n {
            for y in 0..h {
                for xx in 0..w {
                    let row = ((b * h + y) * w + xx) * width;
                    for ky in 0..k {
                        let sy = y + ky;
                        if sy < pad || sy - pad >= h {
                            continue;
                        }
                        for kx in 0..k {
                            let sx = xx + kx;
                            if sx < pad || sx - pad >= w {
                                continue;
                            }
                            let src = ((b * h + sy - pad) * w + sx - pad) * c;
                            let dst = row + (ky * k + kx) * c;
                            cols[dst..dst + c].copy_from_slice(&x[src..src + c]);
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], [n, h, w, c]: [usize; 4]) -> Vec<T> {
        let k = self.k;
        let pad = k / 2;
        let width = k * k * c;
        let mut dx = vec![T::zero(); n * h * w * c];
        for b in 0..n {
            for y in 0..h {
                for xx in 0..w {
                    let row = ((b * h + y) * w + xx) * width;
                    for ky in 0..k {
                        let sy = y + ky;
                        if sy < pad || sy - pad >= h {
                            continue;
                        }
                        for kx in 0..k {
                            let sx = xx + kx;
                            if sx < pad || sx - pad >= w {
                                continue;
                            }
                            let dst = ((b * h + sy - pad) * w + sx - pad) * c;
                            let src = row + (ky * k + kx) * c;
                            for (d, &s) in dx[dst..dst + c].iter_mut().zip(&cols[src..src + c]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let dims = nhwc(x, "conv2d")?;
        let [n, h, w, c] = dims;
        if c != self.c_in {
            return Err(Error::ShapeMismatch(format!(
                "conv2d expects {} input channels, got {c}",
                self.c_in
            )));
        }
        let cols = if self.k == 1 {
            x.values().to_vec()
        } else {
            self.im2col(x.values(), dims)
        };
        let rows = n * h * w;
        let width = self.k * self.k * c;
        let mut y = Vec::with_capacity(rows * self.c_out);
        for _ in 0..rows {
            y.extend_from_slice(self.bias.values());
        }
        gemm(
            Mat::new(&cols, rows, width),
            Mat::new(self.weight.values(), width, self.c_out),
            T::one(),
            &mut y,
        );
        self.cache = Some(ConvCache { dims, cols });
        Tensor::new(&[n, h, w, self.c_out], y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let ConvCache { dims, cols } = self.cache.as_ref().expect("conv2d backward before forward");
        let [n, h, w, c] = *dims;
        let rows = n * h * w;
        let width = self.k * self.k * c;
        assert_eq!(dy.shape(), [n, h, w, self.c_out]);
        gemm(
            Mat::new(cols, rows, width).t(),
            Mat::new(dy.values(), rows, self.c_out),
            T::one(),
            self.weight.grad_mut(),
        );
        bias_sums(dy.values(), self.c_out, self.bias.grad_mut());
        let mut dcols = vec![T::zero(); rows * width];
        gemm(
            Mat::new(dy.values(), rows, self.c_out),
            Mat::new(self.weight.values(), width, self.c_out).t(),
            T::zero(),
            &mut dcols,
        );
        let dx = if self.k == 1 { dcols } else { self.col2im(&dcols, *dims) };
        Tensor::new(dims, dx).expect("conv2d input shape")
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        out.push(ParamMut {
            name: format!("{prefix}.weight"),
            tensor: &mut self.weight,
            regularize: true,
        });
        out.push(ParamMut {
            name: format!("{prefix}.bias"),
            tensor: &mut self.bias,
            regularize: false,
        });
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        out.push(ParamRef {
            name: format!("{prefix}.weight"),
            tensor: &self.weight,
            regularize: true,
        });
        out.push(ParamRef {
            name: format!("{prefix}.bias"),
            tensor: &self.bias,
            regularize: false,
        });
    }
}

/// Per-channel batch normalisation over all leading dimensions.
#[derive(Clone, Debug)]
pub struct BatchNorm<T = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache<T>>,
}

#[derive(Clone, Debug)]
struct BnCache<T> {
    shape: Vec<usize>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::param(&[channels], vec![T::one(); channels]),
            beta: Tensor::param(&[channels], vec![T::zero(); channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let c = self.channels();
        if x.shape().last() != Some(&c) {
            return Err(Error::ShapeMismatch(format!(
                "batch norm over {c} channels got {:?}",
                x.shape()
            )));
        }
        let batch = x.shape()[0];
        if mode == Mode::Train && batch < 2 {
            return Err(Error::DegenerateBatch(batch));
        }
        let rows = x.len() / c;
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = vec![0.0f64; c];
                for row in x.values().chunks_exact(c) {
                    for (s, &v) in sum.iter_mut().zip(row) {
                        *s += v.as_f64();
                    }
                }
                let mean: Vec<f64> = sum.iter().map(|s| s / rows as f64).collect();
                let mut sq = vec![0.0f64; c];
                for row in x.values().chunks_exact(c) {
                    for ((s, &v), m) in sq.iter_mut().zip(row).zip(&mean) {
                        let d = v.as_f64() - m;
                        *s += d * d;
                    }
                }
                let var: Vec<f64> = sq.iter().map(|s| s / rows as f64).collect();
                let m = self.momentum;
                let unbias = rows as f64 / (rows as f64 - 1.0);
                for i in 0..c {
                    self.running_mean[i] = T::of((1.0 - m) * self.running_mean[i].as_f64() + m * mean[i]);
                    self.running_var[i] =
                        T::of((1.0 - m) * self.running_var[i].as_f64() + m * var[i] * unbias);
                }
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.iter().map(|v| v.as_f64()).collect(),
                self.running_var.iter().map(|v| v.as_f64()).collect(),
            ),
        };
        let inv_std: Vec<T> = var.iter().map(|v| T::of(1.0 / (v + self.eps).sqrt())).collect();
        let mean: Vec<T> = mean.into_iter().map(T::of).collect();
        let mut xhat = Vec::with_capacity(x.len());
        let mut y = Vec::with_capacity(x.len());
        let (g, b) = (self.gamma.values(), self.beta.values());
        for row in x.values().chunks_exact(c) {
            for i in 0..c {
                let h = (row[i] - mean[i]) * inv_std[i];
                xhat.push(h);
                y.push(g[i] * h + b[i]);
            }
        }
        self.cache = Some(BnCache {
            shape: x.shape().to_vec(),
            xhat,
            inv_std,
            mode,
        });
        Tensor::new(x.shape(), y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.as_ref().expect("batch norm backward before forward");
        let c = self.channels();
        assert_eq!(dy.shape(), cache.shape.as_slice());
        let rows = dy.len() / c;
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for (d, h) in dy.values().chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
            for i in 0..c {
                sum_dy[i] += d[i];
                sum_dy_xhat[i] += d[i] * h[i];
            }
        }
        for (g, &s) in self.gamma.grad_mut().iter_mut().zip(&sum_dy_xhat) {
            *g += s;
        }
        for (g, &s) in self.beta.grad_mut().iter_mut().zip(&sum_dy) {
            *g += s;
        }
        let gamma = self.gamma.values();
        let mut dx = Vec::with_capacity(dy.len());
        match cache.mode {
            Mode::Train => {
                let r = T::of(rows as f64);
                for (d, h) in dy.values().chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
                    for i in 0..c {
                        let scale = gamma[i] * cache.inv_std[i] / r;
                        dx.push(scale * (r * d[i] - sum_dy[i] - h[i] * sum_dy_xhat[i]));
                    }
                }
            }
            Mode::Eval => {
                for d in dy.values().chunks_exact(c) {
                    for i in 0..c {
                        dx.push(gamma[i] * cache.inv_std[i] * d[i]);
                    }
                }
            }
        }
        Tensor::new(&cache.shape, dx).expect("batch norm shape")
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        out.push(ParamMut {
            name: format!("{prefix}.gamma"),
            tensor: &mut self.gamma,
            regularize: false,
        });
        out.push(ParamMut {
            name: format!("{prefix}.beta"),
            tensor: &mut self.beta,
            regularize: false,
        });
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        out.push(ParamRef {
            name: format!("{prefix}.gamma"),
            tensor: &self.gamma,
            regularize: false,
        });
        out.push(ParamRef {
            name: format!("{prefix}.beta"),
            tensor: &self.beta,
            regularize: false,
        });
    }

    pub fn buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Vec<T>)>) {
        out.push((format!("{prefix}.running_mean"), &mut self.running_mean));
        out.push((format!("{prefix}.running_var"), &mut self.running_var));
    }

    pub fn buffers<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [T])>) {
        out.push((format!("{prefix}.running_mean"), &self.running_mean));
        out.push((format!("{prefix}.running_var"), &self.running_var));
    }
}

#[derive(Clone, Debug, Default)]
pub struct LeakyRelu<T = f32> {
    input: Option<Vec<T>>,
}

impl<T: Real> LeakyRelu<T> {
    pub fn new() -> Self {
        LeakyRelu { input: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = x.values().iter().map(|&v| leaky_relu(v)).collect();
        self.input = Some(x.values().to_vec());
        Tensor::new(x.shape(), y).expect("same shape")
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let x = self.input.as_ref().expect("leaky relu backward before forward");
        let slope = T::of(LEAKY_SLOPE);
        let dx = dy
            .values()
            .iter()
            .zip(x)
            .map(|(&d, &v)| if v >= T::zero() { d } else { d * slope })
            .collect();
        Tensor::new(dy.shape(), dx).expect("same shape")
    }
}

/// Fully connected layer over everything after the batch dimension.
/// Weights are stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    fan_in: usize,
    fan_out: usize,
    cache: Option<(Vec<usize>, Vec<T>)>,
}

impl<T: Real> Linear<T> {
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        Linear {
            weight: Tensor::param(&[fan_in, fan_out], he_uniform(fan_in * fan_out, fan_in, rng)),
            bias: Tensor::param(&[fan_out], vec![T::zero(); fan_out]),
            fan_in,
            fan_out,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n = x.shape().first().copied().unwrap_or(0);
        if n == 0 || x.len() != n * self.fan_in {
            return Err(Error::ShapeMismatch(format!(
                "linear layer with {} inputs got {:?}",
                self.fan_in,
                x.shape()
            )));
        }
        let mut y = Vec::with_capacity(n * self.fan_out);
        for _ in 0..n {
            y.extend_from_slice(self.bias.values());
        }
        gemm(
            Mat::new(x.values(), n, self.fan_in),
            Mat::new(self.weight.values(), self.fan_in, self.fan_out),
            T::one(),
            &mut y,
        );
        self.cache = Some((x.shape().to_vec(), x.values().to_vec()));
        Tensor::new(&[n, self.fan_out], y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let (shape, x) = self.cache.as_ref().expect("linear backward before forward");
        let n = shape[0];
        assert_eq!(dy.shape(), [n, self.fan_out]);
        gemm(
            Mat::new(x, n, self.fan_in).t(),
            Mat::new(dy.values(), n, self.fan_out),
            T::one(),
            self.weight.grad_mut(),
        );
        bias_sums(dy.values(), self.fan_out, self.bias.grad_mut());
        let mut dx = vec![T::zero(); n * self.fan_in];
        gemm(
            Mat::new(dy.values(), n, self.fan_out),
            Mat::new(self.weight.values(), self.fan_in, self.fan_out).t(),
            T::zero(),
            &mut dx,
        );
        Tensor::new(shape, dx).expect("linear input shape")
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        out.push(ParamMut {
            name: format!("{prefix}.weight"),
            tensor: &mut self.weight,
            regularize: true,
        });
        out.push(ParamMut {
            name: format!("{prefix}.bias"),
            tensor: &mut self.bias,
            regularize: false,
        });
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        out.push(ParamRef {
            name: format!("{prefix}.weight"),
            tensor: &self.weight,
            regularize: true,
        });
        out.push(ParamRef {
            name: format!("{prefix}.bias"),
            tensor: &self.bias,
            regularize: false,
        });
    }
}

/// Mean over the spatial dimensions: `[n, h, w, c] → [n, c]`.
#[derive(Clone, Debug, Default)]
pub struct GlobalAvgPool {
    dims: Option<[usize; 4]>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool { dims: None }
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let dims = nhwc(x, "average pool")?;
        let [n, h, w, c] = dims;
        let cells = h * w;
        let scale = T::of(1.0 / cells as f64);
        let mut y = vec![T::zero(); n * c];
        for (b, sample) in x.values().chunks_exact(cells * c).enumerate() {
            let out = &mut y[b * c..(b + 1) * c];
            for row in sample.chunks_exact(c) {
                for (o, &v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            for o in out {
                *o *= scale;
            }
        }
        self.dims = Some(dims);
        Tensor::new(&[n, c], y)
    }

    pub fn backward<T: Real>(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let dims = self.dims.expect("average pool backward before forward");
        let [n, h, w, c] = dims;
        assert_eq!(dy.shape(), [n, c]);
        let scale = T::of(1.0 / (h * w) as f64);
        let mut dx = Vec::with_capacity(n * h * w * c);
        for d in dy.values().chunks_exact(c) {
            for _ in 0..h * w {
                dx.extend(d.iter().map(|&v| v * scale));
            }
        }
        Tensor::new(&dims, dx).expect("pool input shape")
    }
}

//! Small convolutional network trained from scratch.
//!
//! Layout: convolution layers (stride 1, same padding, tanh) each followed by
//! 2x2 average pooling that drops a trailing odd row or column, then
//! fully-connected sigmoid layers and a sigmoid output layer.
//!
//! Activations are kept channels-last as `(batch * height * width, channels)`
//! matrices so that every convolution is one GEMM over an unrolled patch
//! matrix.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_distr::Uniform;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel_rows: usize,
    pub kernel_cols: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    pub input_rows: usize,
    pub input_cols: usize,
    pub conv: Vec<ConvSpec>,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

/// Geometry of one convolution stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvGeom {
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
}

impl ConvGeom {
    fn pooled(&self) -> (usize, usize) {
        (self.h / 2, self.w / 2)
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }
}

impl NetSpec {
    /// Two temporal convolution stages (16 and 32 filters, 1x5 kernels)
    /// followed by 512 and 256 hidden units.
    pub fn standard(n_antennas: usize, window: usize, classes: usize) -> Self {
        Self {
            input_rows: 2 * n_antennas,
            input_cols: window,
            conv: vec![
                ConvSpec {
                    filters: 16,
                    kernel_rows: 1,
                    kernel_cols: 5,
                },
                ConvSpec {
                    filters: 32,
                    kernel_rows: 1,
                    kernel_cols: 5,
                },
            ],
            hidden: vec![512, 256],
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_rows == 0 || self.input_cols == 0 || self.classes == 0 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        let (mut h, mut w) = (self.input_rows, self.input_cols);
        for c in &self.conv {
            if c.filters == 0 || c.kernel_rows % 2 == 0 || c.kernel_cols % 2 == 0 {
                return Err(Error::Config(
                    "convolution kernels must be odd with at least one filter".into(),
                ));
            }
            h /= 2;
            w /= 2;
            if h == 0 || w == 0 {
                return Err(Error::Config(
                    "input too small for the pooling stack".into(),
                ));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layers need at least one unit".into()));
        }
        Ok(())
    }

    fn conv_geoms(&self) -> Vec<ConvGeom> {
        let (mut h, mut w, mut cin) = (self.input_rows, self.input_cols, 1);
        let mut out = Vec::with_capacity(self.conv.len());
        for c in &self.conv {
            out.push(ConvGeom {
                h,
                w,
                cin,
                cout: c.filters,
                kh: c.kernel_rows,
                kw: c.kernel_cols,
            });
            h /= 2;
            w /= 2;
            cin = c.filters;
        }
        out
    }

    /// Length of the flattened feature vector entering the first dense layer.
    pub fn flat_len(&self) -> usize {
        match self.conv_geoms().last() {
            Some(g) => {
                let (h, w) = g.pooled();
                h * w * g.cout
            }
            None => self.input_rows * self.input_cols,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_rows * self.input_cols
    }

    /// `(rows, cols)` of every weight matrix, convolution stages first.
    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes: Vec<_> = self
            .conv_geoms()
            .iter()
            .map(|g| (g.cout, g.patch()))
            .collect();
        let mut fan_in = self.flat_len();
        for &h in self.hidden.iter().chain(std::iter::once(&self.classes)) {
            shapes.push((h, fan_in));
            fan_in = h;
        }
        shapes
    }
}

/// Weight matrix `(out, in)` and bias of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            w: Array2::zeros((rows, cols)),
            b: Array1::zeros(rows),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: Vec<Layer>,
    pub second: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    spec: NetSpec,
    pub layers: Vec<Layer>,
    pub adam: AdamState,
}

/// Intermediate values kept for backpropagation.
pub struct ForwardCache {
    batch: usize,
    /// unrolled patches per convolution stage
    cols: Vec<Array2<f64>>,
    /// tanh outputs per convolution stage, before pooling
    conv_out: Vec<Array2<f64>>,
    /// inputs of each dense layer (the first is the flattened features)
    dense_in: Vec<Array2<f64>>,
    /// sigmoid scores
    pub scores: Array2<f64>,
}

impl ConvNet {
    /// Uniform initialization in `+-1/sqrt(fan_in)` for weights and biases.
    pub fn new<R: Rng + ?Sized>(spec: NetSpec, learning_rate: f64, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .weight_shapes()
            .into_iter()
            .map(|(rows, cols)| {
                let bound = 1.0 / (cols as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                let w = Array2::from_shape_simple_fn((rows, cols), || rng.sample(dist));
                let b = Array1::from_shape_simple_fn(rows, || rng.sample(dist));
                Layer { w, b }
            })
            .collect();
        Ok(Self::with_layers(spec, layers, learning_rate))
    }

    /// Wraps existing weights with a fresh optimizer state.
    pub fn from_layers(spec: NetSpec, layers: Vec<Layer>, learning_rate: f64) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.weight_shapes();
        if shapes.len() != layers.len()
            || shapes
                .iter()
                .zip(&layers)
                .any(|(&(r, c), l)| l.w.dim() != (r, c) || l.b.len() != r)
        {
            return Err(Error::Format(
                "layer shapes do not match the network specification".into(),
            ));
        }
        Ok(Self::with_layers(spec, layers, learning_rate))
    }

    fn with_layers(spec: NetSpec, layers: Vec<Layer>, learning_rate: f64) -> Self {
        let zeros: Vec<Layer> = layers
            .iter()
            .map(|l| Layer::zeros(l.w.nrows(), l.w.ncols()))
            .collect();
        let adam = AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        };
        Self { spec, layers, adam }
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Scores for a batch of flattened row-major windows `(batch, rows * cols)`.
    pub fn forward(&self, input: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(input)?.scores)
    }

    pub fn forward_cached(&self, input: &Array2<f64>) -> Result<ForwardCache> {
        if input.ncols() != self.spec.input_len() {
            return Err(Error::Dimension(format!(
                "network expects {} inputs per window, got {}",
                self.spec.input_len(),
                input.ncols()
            )));
        }
        let batch = input.nrows();
        let geoms = self.spec.conv_geoms();
        let mut act = input
            .to_owned()
            .into_shape_with_order((batch * self.spec.input_len(), 1))
            .expect("contiguous");
        let mut cols_cache = Vec::with_capacity(geoms.len());
        let mut conv_cache = Vec::with_capacity(geoms.len());
        for (g, layer) in geoms.iter().zip(&self.layers) {
            let cols = im2col(&act, batch, g);
            let mut z = cols.dot(&layer.w.t());
            z += &layer.b;
            z.mapv_inplace(f64::tanh);
            act = avg_pool(&z, batch, g.h, g.w);
            cols_cache.push(cols);
            conv_cache.push(z);
        }
        let flat = self.spec.flat_len();
        let mut x = act
            .into_shape_with_order((batch, flat))
            .expect("contiguous");
        let mut dense_in = Vec::with_capacity(self.layers.len() - geoms.len());
        for layer in &self.layers[geoms.len()..] {
            let mut z = x.dot(&layer.w.t());
            z += &layer.b;
            z.mapv_inplace(sigmoid);
            dense_in.push(x);
            x = z;
        }
        Ok(ForwardCache {
            batch,
            cols: cols_cache,
            conv_out: conv_cache,
            dense_in,
            scores: x,
        })
    }

    /// Parameter gradients given `dL/dscores`.
    pub fn backward(&self, cache: &ForwardCache, dscores: &Array2<f64>) -> Vec<Layer> {
        let geoms = self.spec.conv_geoms();
        let n_conv = geoms.len();
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        grads.resize_with(self.layers.len(), || Layer::zeros(0, 0));

        // through the sigmoid of the output layer
        let mut delta = dscores * &cache.scores.mapv(|s| s * (1.0 - s));
        for i in (n_conv..self.layers.len()).rev() {
            let j = i - n_conv;
            let a_in = &cache.dense_in[j];
            grads[i] = Layer {
                w: delta.t().dot(a_in),
                b: delta.sum_axis(Axis(0)),
            };
            let da = delta.dot(&self.layers[i].w);
            if j > 0 {
                delta = da * &a_in.mapv(|s| s * (1.0 - s));
            } else {
                delta = da;
            }
        }
        if n_conv == 0 {
            return grads;
        }
        // delta is now dL/d(flattened pooled features)
        let last = geoms[n_conv - 1];
        let (ph, pw) = last.pooled();
        let mut dpooled = delta
            .into_shape_with_order((cache.batch * ph * pw, last.cout))
            .expect("contiguous");
        for i in (0..n_conv).rev() {
            let g = &geoms[i];
            let mut dz = avg_pool_backward(&dpooled, cache.batch, g.h, g.w);
            Zip::from(&mut dz)
                .and(&cache.conv_out[i])
                .for_each(|d, &a| *d *= 1.0 - a * a);
            grads[i] = Layer {
                w: dz.t().dot(&cache.cols[i]),
                b: dz.sum_axis(Axis(0)),
            };
            if i > 0 {
                let dcols = dz.dot(&self.layers[i].w);
                dpooled = col2im(&dcols, cache.batch, g);
            }
        }
        grads
    }

    /// Mean squared error against one-hot targets, and its gradient.
    pub fn mse_loss(scores: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
        let (b, c) = scores.dim();
        let mut grad = scores.clone();
        for (mut row, &y) in grad.rows_mut().into_iter().zip(labels) {
            row[y] -= 1.0;
        }
        let loss = grad.iter().map(|e| e * e).sum::<f64>() / (b * c) as f64;
        grad *= 2.0 / (b * c) as f64;
        (loss, grad)
    }

    /// One Adam update with bias correction.
    pub fn adam_step(&mut self, grads: &[Layer]) {
        let a = &mut self.adam;
        a.step += 1;
        let t = a.step as i32;
        let c1 = 1.0 - a.beta1.powi(t);
        let c2 = 1.0 - a.beta2.powi(t);
        let (lr, b1, b2, eps) = (a.learning_rate, a.beta1, a.beta2, a.eps);
        for (((p, g), m), v) in self
            .layers
            .iter_mut()
            .zip(grads)
            .zip(a.first.iter_mut())
            .zip(a.second.iter_mut())
        {
            let update = |p: &mut f64, &g: &f64, m: &mut f64, v: &mut f64| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            };
            Zip::from(&mut p.w)
                .and(&g.w)
                .and(&mut m.w)
                .and(&mut v.w)
                .for_each(update);
            Zip::from(&mut p.b)
                .and(&g.b)
                .and(&mut m.b)
                .and(&mut v.b)
                .for_each(update);
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn im2col(act: &Array2<f64>, batch: usize, g: &ConvGeom) -> Array2<f64> {
    let (h, w, c) = (g.h, g.w, g.cin);
    let (ph, pw) = (g.kh / 2, g.kw / 2);
    let patch = g.patch();
    let src = act.as_slice().expect("standard layout");
    let mut out = vec![0.0; batch * h * w * patch];
    for b in 0..batch {
        for y in 0..h {
            for x in 0..w {
                let row = ((b * h + y) * w + x) * patch;
                for ky in 0..g.kh {
                    let yy = y + ky;
                    if yy < ph || yy - ph >= h {
                        continue;
                    }
                    let yy = yy - ph;
                    for kx in 0..g.kw {
                        let xx = x + kx;
                        if xx < pw || xx - pw >= w {
                            continue;
                        }
                        let xx = xx - pw;
                        let s = ((b * h + yy) * w + xx) * c;
                        let d = row + (ky * g.kw + kx) * c;
                        out[d..d + c].copy_from_slice(&src[s..s + c]);
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((batch * h * w, patch), out).expect("sized above")
}

fn col2im(dcols: &Array2<f64>, batch: usize, g: &ConvGeom) -> Array2<f64> {
    let (h, w, c) = (g.h, g.w, g.cin);
    let (ph, pw) = (g.kh / 2, g.kw / 2);
    let patch = g.patch();
    let src = dcols.as_slice().expect("standard layout");
    let mut out = vec![0.0; batch * h * w * c];
    for b in 0..batch {
        for y in 0..h {
            for x in 0..w {
                let row = ((b * h + y) * w + x) * patch;
                for ky in 0..g.kh {
                    let yy = y + ky;
                    if yy < ph || yy - ph >= h {
                        continue;
                    }
                    let yy = yy - ph;
                    for kx in 0..g.kw {
                        let xx = x + kx;
                        if xx < pw || xx - pw >= w {
                            continue;
                        }
                        let xx = xx - pw;
                        let d = ((b * h + yy) * w + xx) * c;
                        let s = row + (ky * g.kw + kx) * c;
                        for ci in 0..c {
                            out[d + ci] += src[s + ci];
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((batch * h * w, c), out).expect("sized above")
}

fn avg_pool(act: &Array2<f64>, batch: usize, h: usize, w: usize) -> Array2<f64> {
    let c = act.ncols();
    let (h2, w2) = (h / 2, w / 2);
    let src = act.as_slice().expect("standard layout");
    let mut out = vec![0.0; batch * h2 * w2 * c];
    for b in 0..batch {
        for y in 0..h2 {
            for x in 0..w2 {
                let d = ((b * h2 + y) * w2 + x) * c;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let s = ((b * h + 2 * y + dy) * w + 2 * x + dx) * c;
                    for ci in 0..c {
                        out[d + ci] += 0.25 * src[s + ci];
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((batch * h2 * w2, c), out).expect("sized above")
}

fn avg_pool_backward(dout: &Array2<f64>, batch: usize, h: usize, w: usize) -> Array2<f64> {
    let c = dout.ncols();
    let (h2, w2) = (h / 2, w / 2);
    let src = dout.as_slice().expect("standard layout");
    let mut out = vec![0.0; batch * h * w * c];
    for b in 0..batch {
        for y in 0..h2 {
            for x in 0..w2 {
                let s = ((b * h2 + y) * w2 + x) * c;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let d = ((b * h + 2 * y + dy) * w + 2 * x + dx) * c;
                    for ci in 0..c {
                        out[d + ci] = 0.25 * src[s + ci];
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((batch * h * w, c), out).expect("sized above")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn tiny_spec() -> NetSpec {
        NetSpec {
            input_rows: 5,
            input_cols: 6,
            conv: vec![
                ConvSpec {
                    filters: 2,
                    kernel_rows: 3,
                    kernel_cols: 3,
                },
                ConvSpec {
                    filters: 3,
                    kernel_rows: 1,
                    kernel_cols: 3,
                },
            ],
            hidden: vec![7, 4],
            classes: 3,
        }
    }

    fn batch(rows: usize, len: usize, seed: u64) -> Array2<f64> {
        let mut r = ChaCha20Rng::seed_from_u64(seed);
        let d = Uniform::new(-1.0, 1.0).unwrap();
        Array2::from_shape_simple_fn((rows, len), || r.sample(d))
    }

    /// Direct nested-loop convolution used as an independent reference.
    fn naive_conv(
        input: &[f64],
        h: usize,
        w: usize,
        cin: usize,
        layer: &Layer,
        kh: usize,
        kw: usize,
    ) -> Vec<f64> {
        let cout = layer.w.nrows();
        let mut out = vec![0.0; h * w * cout];
        for y in 0..h as isize {
            for x in 0..w as isize {
                for o in 0..cout {
                    let mut acc = layer.b[o];
                    for ky in 0..kh as isize {
                        for kx in 0..kw as isize {
                            let (yy, xx) = (y + ky - kh as isize / 2, x + kx - kw as isize / 2);
                            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                let wi = (ky as usize * kw + kx as usize) * cin + ci;
                                acc += layer.w[(o, wi)]
                                    * input[((yy as usize) * w + xx as usize) * cin + ci];
                            }
                        }
                    }
                    out[((y as usize) * w + x as usize) * cout + o] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn unrolled_convolution_matches_nested_loops() {
        let spec = tiny_spec();
        let net = ConvNet::new(spec, 1e-3, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        let x = batch(1, 30, 2);
        let g = net.spec.conv_geoms()[0];
        let act = x.clone().into_shape_with_order((30, 1)).unwrap();
        let mut z = im2col(&act, 1, &g).dot(&net.layers[0].w.t());
        z += &net.layers[0].b;
        let want = naive_conv(x.as_slice().unwrap(), 5, 6, 1, &net.layers[0], 3, 3);
        for (a, b) in z.iter().zip(&want) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_weights_give_half() {
        let spec = tiny_spec();
        let shapes = spec.weight_shapes();
        let layers = shapes.iter().map(|&(r, c)| Layer::zeros(r, c)).collect();
        let net = ConvNet::from_layers(spec, layers, 1e-3).unwrap();
        let s = net.forward(&batch(3, 30, 3)).unwrap();
        assert!(s.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let net = ConvNet::new(tiny_spec(), 1e-3, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        assert!(net.forward(&batch(2, 29, 0)).is_err());
        let bad = NetSpec {
            input_rows: 1,
            ..tiny_spec()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn standard_spec_shapes() {
        let s = NetSpec::standard(12, 25, 10);
        s.validate().unwrap();
        assert_eq!(s.flat_len(), 6 * 6 * 32);
        assert_eq!(
            s.weight_shapes(),
            vec![(16, 5), (32, 80), (512, 1152), (256, 512), (10, 256)]
        );
    }

    #[test]
    fn pooling_drops_odd_edge() {
        let act = Array2::from_shape_vec((15, 1), (0..15).map(|v| v as f64).collect()).unwrap();
        // 3x5 image -> 1x2
        let p = avg_pool(&act, 1, 3, 5);
        assert_eq!(p.dim(), (2, 1));
        assert_eq!(p[(0, 0)], (0.0 + 1.0 + 5.0 + 6.0) / 4.0);
        assert_eq!(p[(1, 0)], (2.0 + 3.0 + 7.0 + 8.0) / 4.0);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn loss_gradient_matches_finite_differences() {
        let mut net = ConvNet::new(tiny_spec(), 1e-3, &mut ChaCha20Rng::seed_from_u64(4)).unwrap();
        let x = batch(4, 30, 5);
        let labels = [0, 2, 1, 2];
        let cache = net.forward_cached(&x).unwrap();
        let (_, d) = ConvNet::mse_loss(&cache.scores, &labels);
        let grads = net.backward(&cache, &d);
        let h = 1e-6;
        for li in 0..net.layers.len() {
            for idx in [0, net.layers[li].w.len() / 2, net.layers[li].w.len() - 1] {
                let (r, c) = (
                    idx / net.layers[li].w.ncols(),
                    idx % net.layers[li].w.ncols(),
                );
                let orig = net.layers[li].w[(r, c)];
                net.layers[li].w[(r, c)] = orig + h;
                let lp = ConvNet::mse_loss(&net.forward(&x).unwrap(), &labels).0;
                net.layers[li].w[(r, c)] = orig - h;
                let lm = ConvNet::mse_loss(&net.forward(&x).unwrap(), &labels).0;
                net.layers[li].w[(r, c)] = orig;
                let num = (lp - lm) / (2.0 * h);
                let ana = grads[li].w[(r, c)];
                assert!(
                    (num - ana).abs() <= 1e-4 * num.abs().max(ana.abs()) + 1e-9,
                    "layer {li}: {ana} vs {num}"
                );
            }
        }
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut net = ConvNet::new(tiny_spec(), 1e-3, &mut ChaCha20Rng::seed_from_u64(6)).unwrap();
        let before = net.layers[2].w[(0, 0)];
        let mut g: Vec<Layer> = net
            .layers
            .iter()
            .map(|l| Layer::zeros(l.w.nrows(), l.w.ncols()))
            .collect();
        g[2].w[(0, 0)] = 0.3;
        net.adam_step(&g);
        // the first bias-corrected step has magnitude lr
        assert!((net.layers[2].w[(0, 0)] - (before - 1e-3)).abs() < 1e-10);
    }
}

//! Batched layers with hand-written backward passes. Activations are
//! row-major `(batch, features)` matrices.

use ndarray::{s, Array2, Array3, Axis, Zip};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

impl Param {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Self {
        Self::new(Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound)))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Array2::zeros((rows, cols)))
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

fn add_row(mut m: Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    m += &b.row(0);
    m
}

/// Fully connected layer `y = x W + b`, `W` is `(in, out)`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Param,
    pub b: Param,
    x: Option<Array2<f64>>,
}

impl Dense {
    /// Fan-in scaled uniform init.
    pub fn new<R: Rng>(rng: &mut R, n_in: usize, n_out: usize) -> Self {
        let bound = (6.0 / n_in as f64).sqrt();
        Self { w: Param::uniform(rng, n_in, n_out, bound), b: Param::zeros(1, n_out), x: None }
    }

    pub fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        add_row(x.dot(&self.w.value), &self.b.value)
    }

    pub fn forward(&mut self, x: Array2<f64>) -> Array2<f64> {
        let y = self.infer(&x);
        self.x = Some(x);
        y
    }

    pub fn backward(&mut self, g: &Array2<f64>) -> Array2<f64> {
        let x = self.x.take().expect("backward without forward");
        self.w.grad += &x.t().dot(g);
        self.b.grad += &g.sum_axis(Axis(0));
        g.dot(&self.w.value.t())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    x: Option<Array2<f64>>,
}

impl Relu {
    pub fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        x.mapv(|v| v.max(0.0))
    }

    pub fn forward(&mut self, x: Array2<f64>) -> Array2<f64> {
        let y = self.infer(&x);
        self.x = Some(x);
        y
    }

    pub fn backward(&mut self, g: &Array2<f64>) -> Array2<f64> {
        let x = self.x.take().expect("backward without forward");
        let mut out = g.clone();
        Zip::from(&mut out).and(&x).for_each(|o, &v| {
            if v <= 0.0 {
                *o = 0.0;
            }
        });
        out
    }
}

/// 1-D convolution with zero "same" padding.
///
/// Input rows hold `in_channels * len` values, channel-major; output rows hold
/// `filters * len` values, filter-major. The kernel `W` is
/// `(in_channels * kernel, filters)`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub in_channels: usize,
    pub len: usize,
    pub kernel: usize,
    pub filters: usize,
    pub w: Param,
    pub b: Param,
    cols: Option<Array2<f64>>,
}

impl Conv1d {
    pub fn new<R: Rng>(rng: &mut R, in_channels: usize, len: usize, kernel: usize, filters: usize) -> Self {
        let fan_in = in_channels * kernel;
        let bound = (6.0 / fan_in as f64).sqrt();
        Self {
            in_channels,
            len,
            kernel,
            filters,
            w: Param::uniform(rng, fan_in, filters, bound),
            b: Param::zeros(1, filters),
            cols: None,
        }
    }

    fn im2col(&self, x: &Array2<f64>) -> Array2<f64> {
        let (rows, l, k) = (x.nrows(), self.len, self.kernel);
        let pad = k / 2;
        let mut cols = Array2::zeros((rows * l, self.in_channels * k));
        for r in 0..rows {
            for pos in 0..l {
                let mut out = cols.row_mut(r * l + pos);
                for c in 0..self.in_channels {
                    for j in 0..k {
                        if let Some(src) = (pos + j).checked_sub(pad).filter(|&i| i < l) {
                            out[c * k + j] = x[[r, c * l + src]];
                        }
                    }
                }
            }
        }
        cols
    }

    fn compute(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let rows = x.nrows();
        let cols = self.im2col(x);
        let y = add_row(cols.dot(&self.w.value), &self.b.value);
        // (rows * len, filters) -> (rows, filters * len)
        let y = y
            .into_shape_with_order((rows, self.len, self.filters))
            .expect("contiguous")
            .permuted_axes([0, 2, 1])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((rows, self.filters * self.len))
            .expect("contiguous");
        (y, cols)
    }

    pub fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        self.compute(x).0
    }

    pub fn forward(&mut self, x: Array2<f64>) -> Array2<f64> {
        let (y, cols) = self.compute(&x);
        self.cols = Some(cols);
        y
    }

    pub fn backward(&mut self, g: &Array2<f64>) -> Array2<f64> {
        let cols = self.cols.take().expect("backward without forward");
        let (rows, l, k) = (g.nrows(), self.len, self.kernel);
        let pad = k / 2;
        let gc = g
            .view()
            .into_shape_with_order((rows, self.filters, l))
            .expect("contiguous")
            .permuted_axes([0, 2, 1])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((rows * l, self.filters))
            .expect("contiguous");
        self.w.grad += &cols.t().dot(&gc);
        self.b.grad += &gc.sum_axis(Axis(0));
        let dcols = gc.dot(&self.w.value.t());
        let mut dx = Array2::zeros((rows, self.in_channels * l));
        for r in 0..rows {
            for pos in 0..l {
                let src_row = dcols.row(r * l + pos);
                for c in 0..self.in_channels {
                    for j in 0..k {
                        if let Some(src) = (pos + j).checked_sub(pad).filter(|&i| i < l) {
                            dx[[r, c * l + src]] += src_row[c * k + j];
                        }
                    }
                }
            }
        }
        dx
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone)]
struct LstmCache {
    x: Array2<f64>,
    /// Per step: previous hidden state, previous cell state, activated gates
    /// `[i | f | g | o]` and the new cell state.
    steps: Vec<(Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>)>,
}

/// Single-layer LSTM over `steps` time steps returning the last hidden state.
///
/// Input rows hold `steps * input_dim` values, oldest step first.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub input_dim: usize,
    pub hidden: usize,
    pub steps: usize,
    /// `(input_dim, 4 * hidden)`, gate blocks ordered input, forget, cell, output.
    pub w: Param,
    pub u: Param,
    pub b: Param,
    cache: Option<LstmCache>,
}

impl Lstm {
    pub fn new<R: Rng>(rng: &mut R, input_dim: usize, hidden: usize, steps: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            input_dim,
            hidden,
            steps,
            w: Param::uniform(rng, input_dim, 4 * hidden, bound),
            u: Param::uniform(rng, hidden, 4 * hidden, bound),
            b: Param::zeros(1, 4 * hidden),
            cache: None,
        }
    }

    fn compute(&self, x: &Array2<f64>, keep: bool) -> (Array2<f64>, Option<LstmCache>) {
        let (batch, h) = (x.nrows(), self.hidden);
        let xs = x.view().into_shape_with_order((batch * self.steps, self.input_dim)).expect("contiguous");
        let zx: Array3<f64> = add_row(xs.dot(&self.w.value), &self.b.value)
            .into_shape_with_order((batch, self.steps, 4 * h))
            .expect("contiguous");
        let mut h_prev = Array2::zeros((batch, h));
        let mut c_prev = Array2::zeros((batch, h));
        let mut steps = Vec::new();
        for t in 0..self.steps {
            let mut a = zx.slice(s![.., t, ..]).to_owned() + h_prev.dot(&self.u.value);
            a.slice_mut(s![.., 0..2 * h]).mapv_inplace(sigmoid);
            a.slice_mut(s![.., 2 * h..3 * h]).mapv_inplace(f64::tanh);
            a.slice_mut(s![.., 3 * h..]).mapv_inplace(sigmoid);
            let c = &a.slice(s![.., h..2 * h]) * &c_prev + &a.slice(s![.., 0..h]) * &a.slice(s![.., 2 * h..3 * h]);
            let h_new = &a.slice(s![.., 3 * h..]) * &c.mapv(f64::tanh);
            if keep {
                steps.push((h_prev, c_prev, a, c.clone()));
            }
            h_prev = h_new;
            c_prev = c;
        }
        let cache = keep.then(|| LstmCache { x: x.clone(), steps });
        (h_prev, cache)
    }

    pub fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        self.compute(x, false).0
    }

    pub fn forward(&mut self, x: Array2<f64>) -> Array2<f64> {
        let (y, cache) = self.compute(&x, true);
        self.cache = cache;
        y
    }

    pub fn backward(&mut self, g: &Array2<f64>) -> Array2<f64> {
        let cache = self.cache.take().expect("backward without forward");
        let (batch, h) = (g.nrows(), self.hidden);
        let mut dzx = Array3::<f64>::zeros((batch, self.steps, 4 * h));
        let mut dh = g.clone();
        let mut dc = Array2::<f64>::zeros((batch, h));
        for (t, (h_prev, c_prev, a, c)) in cache.steps.iter().enumerate().rev() {
            let i = a.slice(s![.., 0..h]);
            let f = a.slice(s![.., h..2 * h]);
            let gg = a.slice(s![.., 2 * h..3 * h]);
            let o = a.slice(s![.., 3 * h..]);
            let tc = c.mapv(f64::tanh);
            dc = dc + &dh * &o * &tc.mapv(|v| 1.0 - v * v);
            let mut dz = dzx.slice_mut(s![.., t, ..]);
            Zip::from(dz.slice_mut(s![.., 0..h])).and(&dc).and(&i).and(&gg).for_each(|d, &dc, &i, &g| *d = dc * g * i * (1.0 - i));
            Zip::from(dz.slice_mut(s![.., h..2 * h])).and(&dc).and(&f).and(c_prev).for_each(|d, &dc, &f, &cp| *d = dc * cp * f * (1.0 - f));
            Zip::from(dz.slice_mut(s![.., 2 * h..3 * h])).and(&dc).and(&i).and(&gg).for_each(|d, &dc, &i, &g| *d = dc * i * (1.0 - g * g));
            Zip::from(dz.slice_mut(s![.., 3 * h..])).and(&dh).and(&tc).and(&o).for_each(|d, &dh, &tc, &o| *d = dh * tc * o * (1.0 - o));
            let dz = dz.to_owned();
            self.u.grad += &h_prev.t().dot(&dz);
            dh = dz.dot(&self.u.value.t());
            dc = &dc * &f;
        }
        let dz_flat = dzx.into_shape_with_order((batch * self.steps, 4 * h)).expect("contiguous");
        let xs = cache.x.view().into_shape_with_order((batch * self.steps, self.input_dim)).expect("contiguous");
        self.w.grad += &xs.t().dot(&dz_flat);
        self.b.grad += &dz_flat.sum_axis(Axis(0));
        dz_flat
            .dot(&self.w.value.t())
            .into_shape_with_order((batch, self.steps * self.input_dim))
            .expect("contiguous")
    }
}

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    p
}

/// Probability floor inside the log of the cross-entropy.
pub const LOG_CLAMP: f64 = 1e-12;

/// Mean negative log-likelihood of the true classes.
pub fn cross_entropy_loss(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    assert_eq!(probs.nrows(), labels.len(), "one label per row");
    let total: f64 = labels.iter().enumerate().map(|(r, &y)| -probs[[r, y]].max(LOG_CLAMP).ln()).sum();
    total / labels.len() as f64
}

/// Gradient of the mean cross-entropy with respect to the pre-softmax logits.
pub fn softmax_ce_grad(probs: &Array2<f64>, labels: &[usize]) -> Array2<f64> {
    let n = labels.len() as f64;
    let mut g = probs.clone();
    for (r, &y) in labels.iter().enumerate() {
        g[[r, y]] -= 1.0;
    }
    g / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const H: f64 = 1e-5;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
    }

    /// Largest elementwise relative error with a small absolute floor.
    fn max_rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-7)).fold(0.0, f64::max)
    }

    /// Numerical gradient of `f` at `x` by central differences.
    fn numeric(x: &Array2<f64>, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
        let mut g = Array2::zeros(x.raw_dim());
        let mut xp = x.clone();
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let orig = xp[[r, c]];
            xp[[r, c]] = orig + H;
            let up = f(&xp);
            xp[[r, c]] = orig - H;
            let down = f(&xp);
            xp[[r, c]] = orig;
            g[[r, c]] = (up - down) / (2.0 * H);
        }
        g
    }

    fn probe_loss(y: &Array2<f64>, probe: &Array2<f64>) -> f64 {
        (y * probe).sum()
    }

    #[test]
    fn dense_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = Dense::new(&mut rng, 5, 4);
        let x = rand_matrix(&mut rng, 3, 5);
        let probe = rand_matrix(&mut rng, 3, 4);
        layer.forward(x.clone());
        let dx = layer.backward(&probe);
        let l0 = layer.clone();
        assert!(max_rel_err(&dx, &numeric(&x, |x| probe_loss(&l0.infer(x), &probe))) < 1e-4);
        let nw = numeric(&l0.w.value, |w| {
            let mut l = l0.clone();
            l.w.value = w.clone();
            probe_loss(&l.infer(&x), &probe)
        });
        assert!(max_rel_err(&layer.w.grad, &nw) < 1e-4);
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut layer = Conv1d::new(&mut rng, 2, 5, 3, 3);
        let x = rand_matrix(&mut rng, 2, 10);
        let probe = rand_matrix(&mut rng, 2, 15);
        layer.forward(x.clone());
        let dx = layer.backward(&probe);
        let l0 = layer.clone();
        assert!(max_rel_err(&dx, &numeric(&x, |x| probe_loss(&l0.infer(x), &probe))) < 1e-4);
        let nw = numeric(&l0.w.value, |w| {
            let mut l = l0.clone();
            l.w.value = w.clone();
            probe_loss(&l.infer(&x), &probe)
        });
        assert!(max_rel_err(&layer.w.grad, &nw) < 1e-4);
    }

    #[test]
    fn lstm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut layer = Lstm::new(&mut rng, 3, 4, 3);
        layer.b = Param::uniform(&mut rng, 1, 16, 0.5);
        let x = rand_matrix(&mut rng, 2, 9);
        let probe = rand_matrix(&mut rng, 2, 4);
        layer.forward(x.clone());
        let dx = layer.backward(&probe);
        let l0 = layer.clone();
        assert!(max_rel_err(&dx, &numeric(&x, |x| probe_loss(&l0.infer(x), &probe))) < 1e-4);
        for which in 0..3 {
            let get = |l: &Lstm| [&l.w, &l.u, &l.b][which].clone();
            let nw = numeric(&get(&l0).value, |w| {
                let mut l = l0.clone();
                [&mut l.w, &mut l.u, &mut l.b][which].value = w.clone();
                probe_loss(&l.infer(&x), &probe)
            });
            assert!(max_rel_err(&get(&layer).grad, &nw) < 1e-4, "param {which}");
        }
    }

    #[test]
    fn softmax_ce_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = rand_matrix(&mut rng, 3, 5);
        let labels = [0, 4, 2];
        let g = softmax_ce_grad(&softmax_rows(&z), &labels);
        let n = numeric(&z, |z| cross_entropy_loss(&softmax_rows(z), &labels));
        assert!(max_rel_err(&g, &n) < 1e-4);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = Conv1d::new(&mut rng, 2, 6, 3, 4);
        let x = rand_matrix(&mut rng, 2, 12);
        let y = layer.infer(&x);
        for r in 0..2 {
            for f in 0..4 {
                for p in 0..6 {
                    let mut want = layer.b.value[[0, f]];
                    for c in 0..2 {
                        for j in 0..3 {
                            let src = p as i64 + j as i64 - 1;
                            if (0..6).contains(&src) {
                                want += layer.w.value[[c * 3 + j, f]] * x[[r, c * 6 + src as usize]];
                            }
                        }
                    }
                    assert!((y[[r, f * 6 + p]] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn lstm_single_step_by_hand() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = Lstm::new(&mut rng, 2, 1, 1);
        let x = rand_matrix(&mut rng, 1, 2);
        let z: Vec<f64> = (0..4).map(|k| x[[0, 0]] * layer.w.value[[0, k]] + x[[0, 1]] * layer.w.value[[1, k]]).collect();
        let c = sigmoid(z[0]) * z[2].tanh();
        let want = sigmoid(z[3]) * c.tanh();
        assert!((layer.infer(&x)[[0, 0]] - want).abs() < 1e-14);
    }

    #[test]
    fn softmax_is_a_distribution() {
        let p = softmax_rows(&Array2::from_shape_vec((2, 3), vec![1000.0, 1000.0, 1000.0, -5.0, 0.0, 5.0]).unwrap());
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert!((p[[0, 0]] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_values() {
        let uniform = Array2::from_elem((4, 64), 1.0 / 64.0);
        assert!((cross_entropy_loss(&uniform, &[0, 5, 63, 7]) - 64f64.ln()).abs() < 1e-12);
        let onehot = Array2::from_shape_vec((1, 3), vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(cross_entropy_loss(&onehot, &[1]), 0.0);
        assert!((cross_entropy_loss(&onehot, &[0]) + LOG_CLAMP.ln()).abs() < 1e-9);
    }
}

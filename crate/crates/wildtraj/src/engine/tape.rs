//! Tape-based reverse-mode differentiation. Every operation records its
//! parents and a backward closure capturing whatever values it needs; a
//! backward pass replays the tape in reverse topological (recording) order
//! and accumulates each node's gradient exactly once.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaddingMode {
    /// Output at time t depends only on inputs <= t.
    Causal,
    /// Centered padding; preserves length for odd kernels.
    Same,
}

type BackFn<R> = Box<dyn Fn(&Tensor<R>) -> Vec<Tensor<R>>>;

struct Node<R> {
    value: Tensor<R>,
    parents: Vec<Var>,
    back: Option<BackFn<R>>,
}

pub struct Tape<R: Real> {
    nodes: Vec<Node<R>>,
    /// Rows that had every key masked in a masked softmax; such rows are
    /// defined as all-zero rather than NaN and counted here.
    pub all_masked_softmax_rows: usize,
}

const MASK_NEG: f64 = -1e9;

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            all_masked_softmax_rows: 0,
        }
    }

    fn push(&mut self, value: Tensor<R>, parents: Vec<Var>, back: Option<BackFn<R>>) -> Var {
        self.nodes.push(Node {
            value,
            parents,
            back,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor<R>) -> Var {
        self.push(t, vec![], None)
    }

    /// Leaf that never receives a gradient (positional encodings etc.).
    pub fn constant(&mut self, t: Tensor<R>) -> Var {
        self.push(t, vec![], None)
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // -- elementwise -------------------------------------------------------

    fn assert_same_shape(&self, a: Var, b: Var, op: &str) {
        let (sa, sb) = (&self.nodes[a.0].value.shape, &self.nodes[b.0].value.shape);
        assert_eq!(sa, sb, "{op}: shape mismatch {sa:?} vs {sb:?}");
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "add");
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(va.shape.clone(), data);
        self.push(
            value,
            vec![a, b],
            Some(Box::new(move |g| vec![g.clone(), g.clone()])),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "sub");
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| x - y).collect();
        let value = Tensor::new(va.shape.clone(), data);
        self.push(
            value,
            vec![a, b],
            Some(Box::new(move |g| {
                vec![g.clone(), g.map(|v| -v)]
            })),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "mul");
        let va = self.nodes[a.0].value.clone();
        let vb = self.nodes[b.0].value.clone();
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(va.shape.clone(), data);
        self.push(
            value,
            vec![a, b],
            Some(Box::new(move |g| {
                let ga = Tensor::new(
                    g.shape.clone(),
                    g.data.iter().zip(&vb.data).map(|(&x, &y)| x * y).collect(),
                );
                let gb = Tensor::new(
                    g.shape.clone(),
                    g.data.iter().zip(&va.data).map(|(&x, &y)| x * y).collect(),
                );
                vec![ga, gb]
            })),
        )
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let rc = R::from_f64(c);
        let value = self.nodes[a.0].value.map(|v| v * rc);
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g| vec![g.map(|v| v * rc)])),
        )
    }

    /// Broadcast-add a length-n bias vector to every row of an m x n matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[bias.0].value;
        let n = va.cols();
        assert_eq!(
            vb.numel(),
            n,
            "add_bias: bias {:?} does not match columns of {:?}",
            vb.shape,
            va.shape
        );
        let m = va.rows();
        let mut data = va.data.clone();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] = data[i * n + j] + vb.data[j];
            }
        }
        let value = Tensor::new(va.shape.clone(), data);
        let bias_shape = vb.shape.clone();
        self.push(
            value,
            vec![a, bias],
            Some(Box::new(move |g| {
                let mut gb = vec![R::zero(); n];
                for i in 0..m {
                    for j in 0..n {
                        gb[j] = gb[j] + g.data[i * n + j];
                    }
                }
                vec![g.clone(), Tensor::new(bias_shape.clone(), gb)]
            })),
        )
    }

    // -- matrix products ---------------------------------------------------

    fn matmul_raw(a: &Tensor<R>, b: &Tensor<R>) -> Tensor<R> {
        let (m, k) = (a.rows(), a.cols());
        let (k2, n) = (b.rows(), b.cols());
        assert_eq!(k, k2, "matmul: inner dims {:?} x {:?}", a.shape, b.shape);
        let mut out = vec![R::zero(); m * n];
        for i in 0..m {
            for p in 0..k {
                let av = a.data[i * k + p];
                if av == R::zero() {
                    continue;
                }
                let brow = &b.data[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] = orow[j] + av * brow[j];
                }
            }
        }
        Tensor::new(vec![m, n], out)
    }

    fn transpose_raw(a: &Tensor<R>) -> Tensor<R> {
        let (m, n) = (a.rows(), a.cols());
        let mut out = vec![R::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = a.data[i * n + j];
            }
        }
        Tensor::new(vec![n, m], out)
    }

    /// a (m x k) . b (k x n)
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let va = self.nodes[a.0].value.clone();
        let vb = self.nodes[b.0].value.clone();
        let value = Self::matmul_raw(&va, &vb);
        self.push(
            value,
            vec![a, b],
            Some(Box::new(move |g| {
                let bt = Self::transpose_raw(&vb);
                let at = Self::transpose_raw(&va);
                vec![Self::matmul_raw(g, &bt), Self::matmul_raw(&at, g)]
            })),
        )
    }

    /// a (m x k) . b^T where b is (n x k).
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let va = self.nodes[a.0].value.clone();
        let vb = self.nodes[b.0].value.clone();
        let bt = Self::transpose_raw(&vb);
        let value = Self::matmul_raw(&va, &bt);
        self.push(
            value,
            vec![a, b],
            Some(Box::new(move |g| {
                // y = a b^T: da = g b, db = g^T a
                let gt = Self::transpose_raw(g);
                vec![Self::matmul_raw(g, &vb), Self::matmul_raw(&gt, &va)]
            })),
        )
    }

    // -- nonlinearities ----------------------------------------------------

    pub fn relu(&mut self, a: Var) -> Var {
        let va = self.nodes[a.0].value.clone();
        let value = va.map(|v| if v > R::zero() { v } else { R::zero() });
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g| {
                let data = g
                    .data
                    .iter()
                    .zip(&va.data)
                    .map(|(&gv, &xv)| if xv > R::zero() { gv } else { R::zero() })
                    .collect();
                vec![Tensor::new(g.shape.clone(), data)]
            })),
        )
    }

    /// tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let va = self.nodes[a.0].value.clone();
        let c = R::from_f64((2.0 / std::f64::consts::PI).sqrt());
        let k = R::from_f64(0.044715);
        let half = R::from_f64(0.5);
        let one = R::one();
        let three = R::from_f64(3.0);
        let value = va.map(|x| {
            let u = c * (x + k * x * x * x);
            half * x * (one + u.tanh())
        });
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g| {
                let data = g
                    .data
                    .iter()
                    .zip(&va.data)
                    .map(|(&gv, &x)| {
                        let u = c * (x + k * x * x * x);
                        let t = u.tanh();
                        let sech2 = one - t * t;
                        let du = c * (one + three * k * x * x);
                        gv * (half * (one + t) + half * x * sech2 * du)
                    })
                    .collect();
                vec![Tensor::new(g.shape.clone(), data)]
            })),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|v| R::one() / (R::one() + (-v).exp()));
        let y = value.clone();
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g| {
                let data = g
                    .data
                    .iter()
                    .zip(&y.data)
                    .map(|(&gv, &yv)| gv * yv * (R::one() - yv))
                    .collect();
                vec![Tensor::new(g.shape.clone(), data)]
            })),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|v| v.tanh());
        let y = value.clone();
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g| {
                let data = g
                    .data
                    .iter()
                    .zip(&y.data)
                    .map(|(&gv, &yv)| gv * (R::one() - yv * yv))
                    .collect();
                vec![Tensor::new(g.shape.clone(), data)]
            })),
        )
    }

    // -- softmax / normalization ------------------------------------------

    /// Row-wise softmax over the last dim with an additive -1e9 surrogate on
    /// masked keys before exponentiation. Masked keys get exactly zero
    /// probability (the surrogate underflows). Rows whose keys are all
    /// masked come out as zeros and are counted in
    /// `all_masked_softmax_rows` instead of producing NaN.
    pub fn masked_softmax(&mut self, a: Var, key_mask: &[bool]) -> Var {
        let va = &self.nodes[a.0].value;
        let (m, n) = (va.rows(), va.cols());
        assert_eq!(key_mask.len(), n, "masked_softmax: mask length {} vs {n} keys", key_mask.len());
        let neg = R::from_f64(MASK_NEG);
        let mut out = vec![R::zero(); m * n];
        let any_unmasked = key_mask.iter().any(|&k| k);
        for i in 0..m {
            if !any_unmasked {
                self.all_masked_softmax_rows += 1;
                continue;
            }
            let row = &va.data[i * n..(i + 1) * n];
            let mut mx = R::from_f64(f64::NEG_INFINITY);
            for j in 0..n {
                let z = if key_mask[j] { row[j] } else { row[j] + neg };
                if z > mx {
                    mx = z;
                }
            }
            let mut sum = R::zero();
            for j in 0..n {
                let z = if key_mask[j] { row[j] } else { row[j] + neg };
                let e = (z - mx).exp();
                out[i * n + j] = e;
                sum = sum + e;
            }
            for j in 0..n {
                out[i * n + j] = out[i * n + j] / sum;
            }
        }
        let value = Tensor::new(vec![m, n], out);
        let y = value.clone();
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g| {
                let mut gx = vec![R::zero(); m * n];
                for i in 0..m {
                    let yi = &y.data[i * n..(i + 1) * n];
                    let gi = &g.data[i * n..(i + 1) * n];
                    let dot: R = yi.iter().zip(gi).map(|(&yv, &gv)| yv * gv).sum();
                    for j in 0..n {
                        gx[i * n + j] = yi[j] * (gi[j] - dot);
                    }
                }
                vec![Tensor::new(vec![m, n], gx)]
            })),
        )
    }

    /// Layer normalization over the last dim with learned scale and shift.
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let va = self.nodes[a.0].value.clone();
        let vg = self.nodes[gamma.0].value.clone();
        let vb = &self.nodes[beta.0].value;
        let (m, n) = (va.rows(), va.cols());
        assert_eq!(vg.numel(), n, "layer_norm: gamma size");
        assert_eq!(vb.numel(), n, "layer_norm: beta size");
        let reps = R::from_f64(eps);
        let rn = R::from_f64(n as f64);
        let mut out = vec![R::zero(); m * n];
        let mut xhat = vec![R::zero(); m * n];
        let mut inv_std = vec![R::zero(); m];
        for i in 0..m {
            let row = &va.data[i * n..(i + 1) * n];
            let mean: R = row.iter().copied().sum::<R>() / rn;
            let var: R = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() / rn;
            let istd = R::one() / (var + reps).sqrt();
            inv_std[i] = istd;
            for j in 0..n {
                let xh = (row[j] - mean) * istd;
                xhat[i * n + j] = xh;
                out[i * n + j] = vg.data[j] * xh + vb.data[j];
            }
        }
        let value = Tensor::new(vec![m, n], out);
        let gamma_shape = vg.shape.clone();
        let beta_shape = vb.shape.clone();
        self.push(
            value,
            vec![a, gamma, beta],
            Some(Box::new(move |g| {
                let mut gx = vec![R::zero(); m * n];
                let mut gg = vec![R::zero(); n];
                let mut gb = vec![R::zero(); n];
                for i in 0..m {
                    let gi = &g.data[i * n..(i + 1) * n];
                    let xh = &xhat[i * n..(i + 1) * n];
                    let mut mean_h = R::zero();
                    let mut mean_hx = R::zero();
                    for j in 0..n {
                        let h = vg.data[j] * gi[j];
                        mean_h = mean_h + h;
                        mean_hx = mean_hx + h * xh[j];
                        gg[j] = gg[j] + gi[j] * xh[j];
                        gb[j] = gb[j] + gi[j];
                    }
                    mean_h = mean_h / rn;
                    mean_hx = mean_hx / rn;
                    for j in 0..n {
                        let h = vg.data[j] * gi[j];
                        gx[i * n + j] = (h - mean_h - xh[j] * mean_hx) * inv_std[i];
                    }
                }
                vec![
                    Tensor::new(vec![m, n], gx),
                    Tensor::new(gamma_shape.clone(), gg),
                    Tensor::new(beta_shape.clone(), gb),
                ]
            })),
        )
    }

    /// Group normalization over channel groups of a C x T map, with
    /// per-channel scale and shift.
    pub fn group_norm(&mut self, a: Var, groups: usize, gamma: Var, beta: Var, eps: f64) -> Var {
        let va = self.nodes[a.0].value.clone();
        let vg = self.nodes[gamma.0].value.clone();
        let vb = &self.nodes[beta.0].value;
        let (c, t) = (va.rows(), va.cols());
        assert!(groups > 0 && c % groups == 0, "group_norm: {c} channels not divisible into {groups} groups");
        assert_eq!(vg.numel(), c, "group_norm: gamma size");
        assert_eq!(vb.numel(), c, "group_norm: beta size");
        let cg = c / groups;
        let reps = R::from_f64(eps);
        let rn = R::from_f64((cg * t) as f64);
        let mut out = vec![R::zero(); c * t];
        let mut xhat = vec![R::zero(); c * t];
        let mut inv_std = vec![R::zero(); groups];
        for g_i in 0..groups {
            let chans = g_i * cg..(g_i + 1) * cg;
            let mut mean = R::zero();
            for ch in chans.clone() {
                for j in 0..t {
                    mean = mean + va.data[ch * t + j];
                }
            }
            mean = mean / rn;
            let mut var = R::zero();
            for ch in chans.clone() {
                for j in 0..t {
                    let d = va.data[ch * t + j] - mean;
                    var = var + d * d;
                }
            }
            var = var / rn;
            let istd = R::one() / (var + reps).sqrt();
            inv_std[g_i] = istd;
            for ch in chans {
                for j in 0..t {
                    let xh = (va.data[ch * t + j] - mean) * istd;
                    xhat[ch * t + j] = xh;
                    out[ch * t + j] = vg.data[ch] * xh + vb.data[ch];
                }
            }
        }
        let value = Tensor::new(vec![c, t], out);
        let gamma_shape = vg.shape.clone();
        let beta_shape = vb.shape.clone();
        self.push(
            value,
            vec![a, gamma, beta],
            Some(Box::new(move |g| {
                let mut gx = vec![R::zero(); c * t];
                let mut gg = vec![R::zero(); c];
                let mut gb = vec![R::zero(); c];
                for ch in 0..c {
                    for j in 0..t {
                        gg[ch] = gg[ch] + g.data[ch * t + j] * xhat[ch * t + j];
                        gb[ch] = gb[ch] + g.data[ch * t + j];
                    }
                }
                for g_i in 0..groups {
                    let chans = g_i * cg..(g_i + 1) * cg;
                    let mut mean_h = R::zero();
                    let mut mean_hx = R::zero();
                    for ch in chans.clone() {
                        for j in 0..t {
                            let h = vg.data[ch] * g.data[ch * t + j];
                            mean_h = mean_h + h;
                            mean_hx = mean_hx + h * xhat[ch * t + j];
                        }
                    }
                    mean_h = mean_h / rn;
                    mean_hx = mean_hx / rn;
                    for ch in chans {
                        for j in 0..t {
                            let h = vg.data[ch] * g.data[ch * t + j];
                            gx[ch * t + j] =
                                (h - mean_h - xhat[ch * t + j] * mean_hx) * inv_std[g_i];
                        }
                    }
                }
                vec![
                    Tensor::new(vec![c, t], gx),
                    Tensor::new(gamma_shape.clone(), gg),
                    Tensor::new(beta_shape.clone(), gb),
                ]
            })),
        )
    }

    // -- convolution -------------------------------------------------------

    /// 1-D convolution of a C_in x T map with a C_out x C_in x K kernel and
    /// per-output-channel bias. Out-of-range inputs are zero. `Same`
    /// padding requires an odd kernel.
    pub fn conv1d(
        &mut self,
        a: Var,
        weight: Var,
        bias: Var,
        dilation: usize,
        mode: PaddingMode,
    ) -> Var {
        let va = self.nodes[a.0].value.clone();
        let vw = self.nodes[weight.0].value.clone();
        let vb = self.nodes[bias.0].value.clone();
        assert!(dilation >= 1);
        let (c_in, t) = (va.rows(), va.cols());
        assert_eq!(vw.shape.len(), 3, "conv1d: weight must be C_out x C_in x K");
        let (c_out, wc_in, k) = (vw.shape[0], vw.shape[1], vw.shape[2]);
        assert_eq!(wc_in, c_in, "conv1d: weight in-channels {wc_in} vs input {c_in}");
        assert_eq!(vb.numel(), c_out, "conv1d: bias size");
        if mode == PaddingMode::Same {
            assert!(k % 2 == 1, "conv1d same-padding requires odd kernel, got {k}");
        }
        // input time offset of kernel tap kk relative to output time
        let offset = |kk: usize| -> isize {
            match mode {
                PaddingMode::Causal => kk as isize * dilation as isize - ((k - 1) * dilation) as isize,
                PaddingMode::Same => (kk as isize - (k as isize - 1) / 2) * dilation as isize,
            }
        };
        let mut out = vec![R::zero(); c_out * t];
        for o in 0..c_out {
            for j in 0..t {
                let mut acc = vb.data[o];
                for c in 0..c_in {
                    for kk in 0..k {
                        let s = j as isize + offset(kk);
                        if s < 0 || s >= t as isize {
                            continue;
                        }
                        acc = acc + vw.data[(o * c_in + c) * k + kk] * va.data[c * t + s as usize];
                    }
                }
                out[o * t + j] = acc;
            }
        }
        let value = Tensor::new(vec![c_out, t], out);
        let w_shape = vw.shape.clone();
        let b_shape = vb.shape.clone();
        self.push(
            value,
            vec![a, weight, bias],
            Some(Box::new(move |g| {
                let offset = |kk: usize| -> isize {
                    match mode {
                        PaddingMode::Causal => {
                            kk as isize * dilation as isize - ((k - 1) * dilation) as isize
                        }
                        PaddingMode::Same => (kk as isize - (k as isize - 1) / 2) * dilation as isize,
                    }
                };
                let mut gx = vec![R::zero(); c_in * t];
                let mut gw = vec![R::zero(); c_out * c_in * k];
                let mut gb = vec![R::zero(); c_out];
                for o in 0..c_out {
                    for j in 0..t {
                        let gv = g.data[o * t + j];
                        gb[o] = gb[o] + gv;
                        for c in 0..c_in {
                            for kk in 0..k {
                                let s = j as isize + offset(kk);
                                if s < 0 || s >= t as isize {
                                    continue;
                                }
                                let s = s as usize;
                                gx[c * t + s] =
                                    gx[c * t + s] + vw.data[(o * c_in + c) * k + kk] * gv;
                                gw[(o * c_in + c) * k + kk] =
                                    gw[(o * c_in + c) * k + kk] + va.data[c * t + s] * gv;
                            }
                        }
                    }
                }
                vec![
                    Tensor::new(vec![c_in, t], gx),
                    Tensor::new(w_shape.clone(), gw),
                    Tensor::new(b_shape.clone(), gb),
                ]
            })),
        )
    }

    // -- dropout -----------------------------------------------------------

    /// Inverted dropout. Identity when not training or p = 0. Mask draws
    /// come from the supplied RNG, so a fixed seed reproduces exactly.
    pub fn dropout(&mut self, a: Var, p: f64, train: bool, rng: &mut ChaCha8Rng) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout p {p} outside [0, 1)");
        if !train || p == 0.0 {
            return a;
        }
        let keep = R::from_f64(1.0 / (1.0 - p));
        let va = &self.nodes[a.0].value;
        let mask: Vec<R> = (0..va.numel())
            .map(|_| {
                if rng.gen::<f64>() < p {
                    R::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = va.data.iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let value = Tensor::new(va.shape.clone(), data);
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g| {
                let data = g.data.iter().zip(&mask).map(|(&gv, &m)| gv * m).collect();
                vec![Tensor::new(g.shape.clone(), data)]
            })),
        )
    }

    /// Dropout of entire rows (channels of a C x T map): temporal dropout.
    pub fn dropout_rows(&mut self, a: Var, p: f64, train: bool, rng: &mut ChaCha8Rng) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout p {p} outside [0, 1)");
        if !train || p == 0.0 {
            return a;
        }
        let keep = R::from_f64(1.0 / (1.0 - p));
        let va = &self.nodes[a.0].value;
        let (m, n) = (va.rows(), va.cols());
        let row_mask: Vec<R> = (0..m)
            .map(|_| {
                if rng.gen::<f64>() < p {
                    R::zero()
                } else {
                    keep
                }
            })
            .collect();
        let mut data = va.data.clone();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] = data[i * n + j] * row_mask[i];
            }
        }
        let value = Tensor::new(va.shape.clone(), data);
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g| {
                let mut data = g.data.clone();
                for i in 0..m {
                    for j in 0..n {
                        data[i * n + j] = data[i * n + j] * row_mask[i];
                    }
                }
                vec![Tensor::new(g.shape.clone(), data)]
            })),
        )
    }

    // -- reductions / shaping ---------------------------------------------

    /// Mean over observed time steps of a C x T map, yielding 1 x C.
    pub fn masked_mean_time(&mut self, a: Var, time_mask: &[bool]) -> Var {
        let va = &self.nodes[a.0].value;
        let (c, t) = (va.rows(), va.cols());
        assert_eq!(time_mask.len(), t, "masked_mean_time: mask length");
        let count = time_mask.iter().filter(|&&m| m).count();
        let mask: Vec<bool> = time_mask.to_vec();
        let denom = R::from_f64(count.max(1) as f64);
        let mut out = vec![R::zero(); c];
        if count > 0 {
            for ch in 0..c {
                let mut acc = R::zero();
                for j in 0..t {
                    if mask[j] {
                        acc = acc + va.data[ch * t + j];
                    }
                }
                out[ch] = acc / denom;
            }
        }
        let value = Tensor::new(vec![1, c], out);
        let has_any = count > 0;
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g| {
                let mut gx = vec![R::zero(); c * t];
                if has_any {
                    for ch in 0..c {
                        let gv = g.data[ch] / denom;
                        for j in 0..t {
                            if mask[j] {
                                gx[ch * t + j] = gv;
                            }
                        }
                    }
                }
                vec![Tensor::new(vec![c, t], gx)]
            })),
        )
    }

    /// Extract row i of a matrix as 1 x n.
    pub fn row(&mut self, a: Var, i: usize) -> Var {
        let va = &self.nodes[a.0].value;
        let (m, n) = (va.rows(), va.cols());
        assert!(i < m, "row {i} out of {m}");
        let value = Tensor::new(vec![1, n], va.data[i * n..(i + 1) * n].to_vec());
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g| {
                let mut gx = vec![R::zero(); m * n];
                gx[i * n..(i + 1) * n].copy_from_slice(&g.data);
                vec![Tensor::new(vec![m, n], gx)]
            })),
        )
    }

    /// Column slice [start, start+len) of a matrix.
    pub fn col_slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let va = &self.nodes[a.0].value;
        let (m, n) = (va.rows(), va.cols());
        assert!(start + len <= n, "col_slice {start}+{len} out of {n}");
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&va.data[i * n + start..i * n + start + len]);
        }
        let value = Tensor::new(vec![m, len], data);
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g| {
                let mut gx = vec![R::zero(); m * n];
                for i in 0..m {
                    gx[i * n + start..i * n + start + len]
                        .copy_from_slice(&g.data[i * len..(i + 1) * len]);
                }
                vec![Tensor::new(vec![m, n], gx)]
            })),
        )
    }

    /// Stack matrices with equal column counts along the row axis.
    pub fn concat_rows(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty());
        let n = self.nodes[vars[0].0].value.cols();
        let mut data = Vec::new();
        let mut row_counts = Vec::new();
        for &v in vars {
            let t = &self.nodes[v.0].value;
            assert_eq!(t.cols(), n, "concat_rows: column mismatch");
            row_counts.push(t.rows());
            data.extend_from_slice(&t.data);
        }
        let m: usize = row_counts.iter().sum();
        let value = Tensor::new(vec![m, n], data);
        self.push(
            value,
            vars.to_vec(),
            Some(Box::new(move |g| {
                let mut out = Vec::with_capacity(row_counts.len());
                let mut offset = 0;
                for &rc in &row_counts {
                    out.push(Tensor::new(
                        vec![rc, n],
                        g.data[offset * n..(offset + rc) * n].to_vec(),
                    ));
                    offset += rc;
                }
                out
            })),
        )
    }

    /// Stack matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty());
        let m = self.nodes[vars[0].0].value.rows();
        let col_counts: Vec<usize> = vars
            .iter()
            .map(|&v| {
                let t = &self.nodes[v.0].value;
                assert_eq!(t.rows(), m, "concat_cols: row mismatch");
                t.cols()
            })
            .collect();
        let n: usize = col_counts.iter().sum();
        let mut data = vec![R::zero(); m * n];
        let mut offset = 0;
        for (&v, &cc) in vars.iter().zip(&col_counts) {
            let t = &self.nodes[v.0].value;
            for i in 0..m {
                data[i * n + offset..i * n + offset + cc]
                    .copy_from_slice(&t.data[i * cc..(i + 1) * cc]);
            }
            offset += cc;
        }
        let value = Tensor::new(vec![m, n], data);
        self.push(
            value,
            vars.to_vec(),
            Some(Box::new(move |g| {
                let mut out = Vec::with_capacity(col_counts.len());
                let mut offset = 0;
                for &cc in &col_counts {
                    let mut part = Vec::with_capacity(m * cc);
                    for i in 0..m {
                        part.extend_from_slice(&g.data[i * n + offset..i * n + offset + cc]);
                    }
                    out.push(Tensor::new(vec![m, cc], part));
                    offset += cc;
                }
                out
            })),
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let shape = va.shape.clone();
        let total: R = va.data.iter().copied().sum();
        self.push(
            Tensor::scalar(total),
            vec![a],
            Some(Box::new(move |g| {
                let gv = g.item();
                let n: usize = shape.iter().product();
                vec![Tensor::new(shape.clone(), vec![gv; n])]
            })),
        )
    }

    // -- loss --------------------------------------------------------------

    /// Weighted cross entropy of a single sample: w * (-log softmax[y]).
    /// Logits are a 1 x K row.
    pub fn cross_entropy_weighted(&mut self, logits: Var, target: usize, weight: f64) -> Var {
        let vl = &self.nodes[logits.0].value;
        assert_eq!(vl.rows(), 1, "cross_entropy: logits must be a single row");
        let k = vl.cols();
        assert!(target < k, "cross_entropy: target {target} out of {k} classes");
        let w = R::from_f64(weight);
        let row = vl.data.clone();
        let mx = row.iter().copied().fold(R::from_f64(f64::NEG_INFINITY), |a, b| if b > a { b } else { a });
        let sum: R = row.iter().map(|&v| (v - mx).exp()).sum();
        let log_sum = sum.ln() + mx;
        let loss = w * (log_sum - row[target]);
        let probs: Vec<R> = row.iter().map(|&v| (v - mx).exp() / sum).collect();
        self.push(
            Tensor::scalar(loss),
            vec![logits],
            Some(Box::new(move |g| {
                let gv = g.item() * w;
                let data = probs
                    .iter()
                    .enumerate()
                    .map(|(j, &p)| {
                        let ind = if j == target { R::one() } else { R::zero() };
                        gv * (p - ind)
                    })
                    .collect();
                vec![Tensor::new(vec![1, k], data)]
            })),
        )
    }

    /// Softmax probabilities of a 1 x K logits row, computed off-tape.
    pub fn softmax_probs(&self, logits: Var) -> Vec<f64> {
        let vl = &self.nodes[logits.0].value;
        let row = vl.to_f64_vec();
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - mx).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    // -- backward ----------------------------------------------------------

    /// Reverse accumulation from a scalar loss. Returns one gradient slot
    /// per tape node; leaves that received no gradient are `None`.
    pub fn backward(&self, loss: Var) -> Vec<Option<Tensor<R>>> {
        assert_eq!(
            self.nodes[loss.0].value.numel(),
            1,
            "backward: loss must be scalar"
        );
        let mut grads: Vec<Option<Tensor<R>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(R::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Some(back) = &node.back {
                let parent_grads = back(&g);
                assert_eq!(parent_grads.len(), node.parents.len());
                for (p, pg) in node.parents.iter().zip(parent_grads) {
                    match &mut grads[p.0] {
                        Some(existing) => existing.add_assign(&pg),
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            grads[idx] = Some(g);
        }
        grads
    }

    pub fn grad_of(&self, grads: &[Option<Tensor<R>>], v: Var) -> Option<Tensor<R>> {
        grads[v.0].clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn t2(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(vec![rows, cols], data)
    }

    #[test]
    fn softmax_symmetry() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(t2(1, 2, &[0.0, 0.0]));
        let y = tape.masked_softmax(x, &[true, true]);
        assert_eq!(tape.value(y).data, vec![0.5, 0.5]);
    }

    #[test]
    fn masked_key_gets_zero_probability() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(t2(1, 2, &[1.0, 5.0]));
        let y = tape.masked_softmax(x, &[true, false]);
        let v = tape.value(y);
        assert_eq!(v.data[1], 0.0);
        assert_eq!(v.data[0], 1.0);
    }

    #[test]
    fn all_masked_row_is_zero_and_flagged() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(t2(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let y = tape.masked_softmax(x, &[false, false]);
        assert!(tape.value(y).data.iter().all(|&v| v == 0.0));
        assert_eq!(tape.all_masked_softmax_rows, 2);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        // d/dx sum(x^2) at [1, 2] is [2, 4]
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(t2(1, 2, &[1.0, 2.0]));
        let sq = tape.mul(x, x);
        let loss = tape.sum_all(sq);
        let grads = tape.backward(loss);
        assert_eq!(tape.grad_of(&grads, x).unwrap().data, vec![2.0, 4.0]);
    }

    #[test]
    fn matmul_values() {
        let mut tape: Tape<f64> = Tape::new();
        let a = tape.leaf(t2(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(t2(2, 2, &[5.0, 6.0, 7.0, 8.0]));
        let c = tape.matmul(a, b);
        assert_eq!(tape.value(c).data, vec![19.0, 22.0, 43.0, 50.0]);
        let d = tape.matmul_nt(a, b);
        // a . b^T
        assert_eq!(tape.value(d).data, vec![17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn gradient_accumulates_once_per_use() {
        // y = x + x => dy/dx = 2
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.add(x, x);
        let grads = tape.backward(y);
        assert_eq!(tape.grad_of(&grads, x).unwrap().item(), 2.0);
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(t2(4, 4, &[1.0; 16]));
        // eval mode and p = 0 are identity (same Var back)
        assert_eq!(tape.dropout(x, 0.5, false, &mut rng), x);
        assert_eq!(tape.dropout(x, 0.0, true, &mut rng), x);
        // seeded reproducibility
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = tape.dropout(x, 0.5, true, &mut r1);
        let b = tape.dropout(x, 0.5, true, &mut r2);
        assert_eq!(tape.value(a).data, tape.value(b).data);
    }

    #[test]
    fn conv1d_causal_respects_time() {
        // perturbing input after t must not change output at t
        let mut base = vec![0.0; 10];
        for (i, v) in base.iter_mut().enumerate() {
            *v = (i as f64 * 0.7).sin();
        }
        let run = |input: &[f64]| -> Vec<f64> {
            let mut tape: Tape<f64> = Tape::new();
            let x = tape.leaf(t2(1, 10, input));
            let w = tape.leaf(Tensor::from_f64(vec![1, 1, 3], &[0.2, -0.4, 0.9]));
            let b = tape.leaf(Tensor::from_f64(vec![1], &[0.1]));
            let y = tape.conv1d(x, w, b, 2, PaddingMode::Causal);
            tape.value(y).data.clone()
        };
        let y0 = run(&base);
        let mut pert = base.clone();
        pert[7] += 5.0;
        let y1 = run(&pert);
        for t in 0..7 {
            assert_eq!(y0[t], y1[t], "causal leak at t={t}");
        }
        assert_ne!(y0[7], y1[7]);
    }

    #[test]
    fn masked_mean_excludes_padded() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(t2(1, 4, &[2.0, 99.0, 2.0, 2.0]));
        let y = tape.masked_mean_time(x, &[true, false, true, true]);
        assert_eq!(tape.value(y).data, vec![2.0]);
    }

    #[test]
    fn shape_mismatch_panics_with_shapes() {
        let result = std::panic::catch_unwind(|| {
            let mut tape: Tape<f64> = Tape::new();
            let a = tape.leaf(t2(1, 2, &[0.0, 0.0]));
            let b = tape.leaf(t2(2, 1, &[0.0, 0.0]));
            tape.add(a, b);
        });
        let msg = *result.unwrap_err().downcast::<String>().unwrap();
        assert!(msg.contains("[1, 2]") && msg.contains("[2, 1]"), "{msg}");
    }

    #[test]
    fn cross_entropy_matches_manual() {
        let mut tape: Tape<f64> = Tape::new();
        let logits = tape.leaf(t2(1, 2, &[1.0, -1.0]));
        let loss = tape.cross_entropy_weighted(logits, 0, 2.0);
        let p0 = (1.0f64).exp() / ((1.0f64).exp() + (-1.0f64).exp());
        assert!((tape.value(loss).item() - 2.0 * (-p0.ln())).abs() < 1e-12);
        let grads = tape.backward(loss);
        let g = tape.grad_of(&grads, logits).unwrap();
        assert!((g.data[0] - 2.0 * (p0 - 1.0)).abs() < 1e-12);
        assert!((g.data[1] - 2.0 * (1.0 - p0)).abs() < 1e-12);
    }
}

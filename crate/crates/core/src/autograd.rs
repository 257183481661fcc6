//! A small reverse-mode automatic differentiation tape.
//!
//! Every model in this crate records its forward pass on a [`Tape`]; calling
//! [`Tape::backward`] then walks the recorded nodes in reverse and returns
//! gradients for every node, in particular for named parameters. A tape is
//! single-use: build one per forward pass.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::Params;
use crate::tensor::{matmul_nt_raw, matmul_raw, matmul_tn_raw, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Geometry of a 3D convolution over `[C, T, H, W]` inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3dSpec {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3dSpec {
    pub fn same(kernel: [usize; 3]) -> Self {
        Self {
            stride: [1, 1, 1],
            padding: [kernel[0] / 2, kernel[1] / 2, kernel[2] / 2],
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Sum(Var),
    SoftmaxRows(Var),
    Conv3d {
        input: Var,
        weight: Var,
        bias: Var,
        spec: Conv3dSpec,
    },
    Resample {
        input: Var,
        rows: Tensor,
        cols: Tensor,
    },
    MeanPoolAxis1(Var, usize),
    OuterSum(Var, Var),
    MeanRows(Var),
    AddRow(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation for later differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

/// Gradients of a backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: BTreeMap<String, Var>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, or zeros of `like`'s shape if nothing flowed to it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    /// Gradients of every parameter bound on the tape, by name. Parameters
    /// the output does not depend on get zero gradients.
    pub fn params(&self, params: &Params) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(name, &v)| {
                let g = match self.get(v) {
                    Some(g) => g.clone(),
                    None => Tensor::zeros(params.get(name).map(|t| t.shape()).unwrap_or(&[])),
                };
                (name.clone(), g)
            })
            .collect()
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A leaf the caller may want gradients for (inputs, intermediate
    /// outputs fed in from another tape).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Alias of [`Tape::leaf`] used where no gradient is wanted.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds a named parameter from `params`. Binding the same name twice
    /// returns the same node, so shared weights accumulate one gradient.
    pub fn param(&mut self, params: &Params, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = params
            .get(name)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))?
            .clone();
        let v = self.push(value, Op::Leaf);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Fails with a numeric error naming `layer` if `v` holds NaN or inf.
    pub fn check_finite(&self, v: Var, layer: &str) -> Result<()> {
        if self.value(v).is_finite() {
            Ok(())
        } else {
            Err(Error::Numeric {
                layer: layer.to_string(),
            })
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "sub")?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x <= 0.0 { 0.0 } else { x });
        self.push(out, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| if x <= 0.0 { slope * x } else { x });
        self.push(out, Op::LeakyRelu(a, slope))
    }

    /// Rank-2 matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), sa[0], sa[1], sb[1]);
        let out = Tensor::new(vec![sa[0], sb[1]], data)?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        if self.value(a).rank() != 2 {
            return Err(Error::Shape("transpose needs a rank-2 tensor".into()));
        }
        let out = self.value(a).transpose2();
        Ok(self.push(out, Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Flattens and concatenates the inputs into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()))
    }

    /// Contiguous range `[start, start+len)` of the flattened input.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(a).data();
        if start + len > src.len() {
            return Err(Error::Shape(format!(
                "slice {start}..{} of length {}",
                start + len,
                src.len()
            )));
        }
        let out = Tensor::vector(src[start..start + len].to_vec());
        Ok(self.push(out, Op::Slice(a, start)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    /// Row-wise softmax of a rank-2 tensor.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.rank() != 2 {
            return Err(Error::Shape("softmax_rows needs a rank-2 tensor".into()));
        }
        let out = softmax_rows_value(v, None)?;
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    /// Row-wise softmax restricted to entries where `mask` is true; masked
    /// entries get probability zero. Every row needs one unmasked entry.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let v = self.value(a);
        if v.rank() != 2 || mask.len() != v.len() {
            return Err(Error::Shape("masked softmax shape mismatch".into()));
        }
        let out = softmax_rows_value(v, Some(mask))?;
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    /// 3D convolution of `input [Cin,T,H,W]` with `weight [Cout,Cin,kt,kh,kw]`
    /// plus per-channel `bias [Cout]`.
    pub fn conv3d(&mut self, input: Var, weight: Var, bias: Var, spec: Conv3dSpec) -> Result<Var> {
        let out = conv3d_forward(self.value(input), self.value(weight), self.value(bias), spec)?;
        Ok(self.push(
            out,
            Op::Conv3d {
                input,
                weight,
                bias,
                spec,
            },
        ))
    }

    /// Applies fixed linear resampling matrices to the two trailing axes of a
    /// `[C,T,H,W]` input: `out[c,t] = rows · x[c,t] · colsᵀ`.
    pub fn resample(&mut self, input: Var, rows: Tensor, cols: Tensor) -> Result<Var> {
        let x = self.value(input);
        let s = x.shape();
        if s.len() != 4 || rows.shape()[1] != s[2] || cols.shape()[1] != s[3] {
            return Err(Error::Shape(format!(
                "resample {:?} with rows {:?} cols {:?}",
                s,
                rows.shape(),
                cols.shape()
            )));
        }
        let (c, t, h, w) = (s[0], s[1], s[2], s[3]);
        let (ho, wo) = (rows.shape()[0], cols.shape()[0]);
        let mut data = Vec::with_capacity(c * t * ho * wo);
        for plane in x.data().chunks(h * w) {
            let tmp = matmul_raw(rows.data(), plane, ho, h, w);
            data.extend(matmul_nt_raw(&tmp, cols.data(), ho, w, wo));
        }
        let out = Tensor::new(vec![c, t, ho, wo], data)?;
        Ok(self.push(out, Op::Resample { input, rows, cols }))
    }

    /// Mean over non-overlapping windows of `factor` along axis 1.
    pub fn mean_pool_axis1(&mut self, a: Var, factor: usize) -> Result<Var> {
        let out = mean_pool_axis1_value(self.value(a), factor)?;
        Ok(self.push(out, Op::MeanPoolAxis1(a, factor)))
    }

    /// `out[i,j] = a[i] + b[j]`.
    pub fn outer_sum(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let (n, m) = (va.len(), vb.len());
        let mut data = Vec::with_capacity(n * m);
        for &x in va {
            data.extend(vb.iter().map(|&y| x + y));
        }
        let out = Tensor::new(vec![n, m], data).expect("outer_sum shape");
        self.push(out, Op::OuterSum(a, b))
    }

    /// Mean over the rows of a rank-2 tensor.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.rank() != 2 || v.shape()[0] == 0 {
            return Err(Error::domain("mean over an empty set of rows"));
        }
        let (n, h) = (v.shape()[0], v.shape()[1]);
        let mut acc = vec![0.0; h];
        for i in 0..n {
            for (a, x) in acc.iter_mut().zip(v.row(i)) {
                *a += x;
            }
        }
        let out = Tensor::vector(acc.into_iter().map(|x| x / n as f64).collect());
        Ok(self.push(out, Op::MeanRows(a)))
    }

    /// Adds the vector `b [h]` to every row of `a [n×h]`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.len() != va.shape()[1] {
            return Err(Error::Shape(format!(
                "add_row {:?} + {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let h = vb.len();
        let data = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + vb.data()[i % h])
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddRow(a, b)))
    }

    /// `w · x + b` for a vector `x [in]`, `w [out×in]`, `b [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let n = self.value(x).len();
        let col = self.reshape(x, &[n, 1])?;
        let y = self.matmul(w, col)?;
        let out = self.shape(w)[0];
        let y = self.reshape(y, &[out])?;
        self.add(y, b)
    }

    /// `x · wᵀ + b` for a batch of row vectors `x [n×in]`.
    pub fn linear_rows(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let wt = self.transpose(w)?;
        let y = self.matmul(x, wt)?;
        self.add_row(y, b)
    }

    /// Reverse pass seeded with the given output gradients.
    pub fn backward(&self, seeds: &[(Var, Tensor)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            same_shape(self.value(*v), g, "backward seed")?;
            accumulate(&mut grads, *v, g.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    /// Reverse pass from a scalar output.
    pub fn backward_scalar(&self, out: Var) -> Result<Gradients> {
        let seed = Tensor::full(self.shape(out), 1.0);
        self.backward(&[(out, seed)])
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = zip_map(g, vb, |x, y| x * y);
                let gb = zip_map(g, va, |x, y| x * y);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.map(|x| x * c)),
            Op::Relu(a) => {
                let ga = zip_map(g, self.value(*a), |gx, x| if x > 0.0 { gx } else { 0.0 });
                accumulate(grads, *a, ga);
            }
            Op::LeakyRelu(a, slope) => {
                let ga = zip_map(g, self.value(*a), |gx, x| if x > 0.0 { gx } else { slope * gx });
                accumulate(grads, *a, ga);
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                // dA = G · Bᵀ, dB = Aᵀ · G
                let ga = matmul_nt_raw(g.data(), vb.data(), n, m, k);
                let gb = matmul_tn_raw(va.data(), g.data(), n, k, m);
                accumulate(grads, *a, Tensor::new(vec![n, k], ga)?);
                accumulate(grads, *b, Tensor::new(vec![k, m], gb)?);
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose2()),
            Op::Reshape(a) => {
                let ga = g.clone().reshape(self.shape(*a))?;
                accumulate(grads, *a, ga);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let shape = self.shape(p).to_vec();
                    let n: usize = shape.iter().product();
                    let ga = Tensor::new(shape, g.data()[offset..offset + n].to_vec())?;
                    accumulate(grads, p, ga);
                    offset += n;
                }
            }
            Op::Slice(a, start) => {
                let mut ga = Tensor::zeros(self.shape(*a));
                ga.data_mut()[*start..*start + g.len()].copy_from_slice(g.data());
                accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                accumulate(grads, *a, Tensor::full(self.shape(*a), g.item()));
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let cols = y.shape()[1];
                let mut ga = vec![0.0; y.len()];
                for (r, (yr, gr)) in y.data().chunks(cols).zip(g.data().chunks(cols)).enumerate() {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..cols {
                        ga[r * cols + j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *a, Tensor::new(y.shape().to_vec(), ga)?);
            }
            Op::Conv3d {
                input,
                weight,
                bias,
                spec,
            } => {
                let (gi, gw, gb) =
                    conv3d_backward(self.value(*input), self.value(*weight), g, *spec);
                accumulate(grads, *input, gi);
                accumulate(grads, *weight, gw);
                accumulate(grads, *bias, gb);
            }
            Op::Resample { input, rows, cols } => {
                let s = self.shape(*input);
                let (h, w) = (s[2], s[3]);
                let (ho, wo) = (rows.shape()[0], cols.shape()[0]);
                let mut data = Vec::with_capacity(self.value(*input).len());
                for plane in g.data().chunks(ho * wo) {
                    // rowsᵀ · G · cols
                    let tmp = matmul_tn_raw(rows.data(), plane, ho, h, wo);
                    data.extend(matmul_raw(&tmp, cols.data(), h, wo, w));
                }
                accumulate(grads, *input, Tensor::new(s.to_vec(), data)?);
            }
            Op::MeanPoolAxis1(a, factor) => {
                let s = self.shape(*a);
                let (c, t) = (s[0], s[1]);
                let inner: usize = s[2..].iter().product();
                let to = t / factor;
                let mut ga = vec![0.0; c * t * inner];
                let inv = 1.0 / *factor as f64;
                for ci in 0..c {
                    for ti in 0..t {
                        let src = &g.data()[(ci * to + ti / factor) * inner..][..inner];
                        let dst = &mut ga[(ci * t + ti) * inner..][..inner];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s * inv;
                        }
                    }
                }
                accumulate(grads, *a, Tensor::new(s.to_vec(), ga)?);
            }
            Op::OuterSum(a, b) => {
                let (n, m) = (self.value(*a).len(), self.value(*b).len());
                let mut ga = vec![0.0; n];
                let mut gb = vec![0.0; m];
                for (gi, row) in ga.iter_mut().zip(g.data().chunks(m.max(1))) {
                    for (gj, v) in gb.iter_mut().zip(row) {
                        *gi += v;
                        *gj += v;
                    }
                }
                accumulate(grads, *a, Tensor::new(self.shape(*a).to_vec(), ga)?);
                accumulate(grads, *b, Tensor::new(self.shape(*b).to_vec(), gb)?);
            }
            Op::MeanRows(a) => {
                let s = self.shape(*a);
                let n = s[0];
                let mut ga = Vec::with_capacity(n * s[1]);
                for _ in 0..n {
                    ga.extend(g.data().iter().map(|x| x / n as f64));
                }
                accumulate(grads, *a, Tensor::new(s.to_vec(), ga)?);
            }
            Op::AddRow(a, b) => {
                let h = self.value(*b).len();
                let mut gb = vec![0.0; h];
                for (i, x) in g.data().iter().enumerate() {
                    gb[i % h] += x;
                }
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, Tensor::new(self.shape(*b).to_vec(), gb)?);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map shape")
}

pub(crate) fn softmax_rows_value(v: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    let cols = v.shape()[1];
    let mut out = vec![0.0; v.len()];
    for (r, row) in v.data().chunks(cols).enumerate() {
        let keep = |j: usize| mask.is_none_or(|m| m[r * cols + j]);
        let max = (0..cols)
            .filter(|&j| keep(j))
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::domain(format!("softmax row {r} has no unmasked entries")));
        }
        let mut total = 0.0;
        for j in 0..cols {
            if keep(j) {
                let e = (row[j] - max).exp();
                out[r * cols + j] = e;
                total += e;
            }
        }
        for x in &mut out[r * cols..(r + 1) * cols] {
            *x /= total;
        }
    }
    Tensor::new(v.shape().to_vec(), out)
}

pub(crate) fn mean_pool_axis1_value(v: &Tensor, factor: usize) -> Result<Tensor> {
    let s = v.shape();
    if s.len() < 2 {
        return Err(Error::Shape("temporal pooling needs rank >= 2".into()));
    }
    if factor == 0 || !s[1].is_multiple_of(factor) {
        return Err(Error::domain(format!(
            "temporal factor {factor} does not divide length {}",
            s[1]
        )));
    }
    let (c, t) = (s[0], s[1]);
    let inner: usize = s[2..].iter().product();
    let to = t / factor;
    let mut out = vec![0.0; c * to * inner];
    let inv = 1.0 / factor as f64;
    for ci in 0..c {
        for ti in 0..t {
            let src = &v.data()[(ci * t + ti) * inner..][..inner];
            let dst = &mut out[(ci * to + ti / factor) * inner..][..inner];
            for (d, x) in dst.iter_mut().zip(src) {
                *d += x * inv;
            }
        }
    }
    let mut shape = s.to_vec();
    shape[1] = to;
    Tensor::new(shape, out)
}

fn conv_out_len(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (n + 2 * pad).checked_sub(k).map(|x| x / stride + 1)
}

/// Output index range `[lo, hi)` along one axis for kernel offset `k`.
fn valid_range(out_len: usize, in_len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // in = out*stride + k - pad must lie in [0, in_len)
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if in_len + pad > k {
        ((in_len + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

struct ConvDims {
    cin: usize,
    t: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: [usize; 3],
    o: [usize; 3],
}

fn conv_dims(x: &Tensor, weight: &Tensor, spec: Conv3dSpec) -> Result<ConvDims> {
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.len() != 4 || ws.len() != 5 || ws[1] != xs[0] {
        return Err(Error::Shape(format!("conv3d input {xs:?} weight {ws:?}")));
    }
    let k = [ws[2], ws[3], ws[4]];
    let dims = [xs[1], xs[2], xs[3]];
    let mut o = [0; 3];
    for a in 0..3 {
        o[a] = conv_out_len(dims[a], k[a], spec.stride[a], spec.padding[a])
            .ok_or_else(|| Error::Shape(format!("conv3d kernel {k:?} larger than input {xs:?}")))?;
    }
    Ok(ConvDims {
        cin: xs[0],
        t: xs[1],
        h: xs[2],
        w: xs[3],
        cout: ws[0],
        k,
        o,
    })
}

/// Visits every (input index, output index) pair for each kernel tap.
#[inline]
fn for_each_tap(
    d: &ConvDims,
    spec: Conv3dSpec,
    mut f: impl FnMut(usize, usize, usize, usize, usize, usize),
) {
    let [st, sh, sw] = spec.stride;
    let [pt, ph, pw] = spec.padding;
    for kt in 0..d.k[0] {
        let (t0, t1) = valid_range(d.o[0], d.t, kt, st, pt);
        for kh in 0..d.k[1] {
            let (h0, h1) = valid_range(d.o[1], d.h, kh, sh, ph);
            for kw in 0..d.k[2] {
                let (w0, w1) = valid_range(d.o[2], d.w, kw, sw, pw);
                if w0 >= w1 {
                    continue;
                }
                let tap = (kt * d.k[1] + kh) * d.k[2] + kw;
                for to in t0..t1 {
                    let ti = to * st + kt - pt;
                    for ho in h0..h1 {
                        let hi = ho * sh + kh - ph;
                        let out_row = (to * d.o[1] + ho) * d.o[2];
                        let in_row = (ti * d.h + hi) * d.w;
                        // (tap, out row base, in row base, w0, w1, stride)
                        f(tap, out_row, in_row + w0 * sw + kw - pw, w0, w1, sw);
                    }
                }
            }
        }
    }
}

fn conv3d_forward(x: &Tensor, weight: &Tensor, bias: &Tensor, spec: Conv3dSpec) -> Result<Tensor> {
    let d = conv_dims(x, weight, spec)?;
    if bias.len() != d.cout {
        return Err(Error::Shape(format!(
            "conv3d bias {:?} for {} channels",
            bias.shape(),
            d.cout
        )));
    }
    let taps = d.k[0] * d.k[1] * d.k[2];
    let in_plane = d.t * d.h * d.w;
    let out_plane = d.o[0] * d.o[1] * d.o[2];
    let mut out = vec![0.0; d.cout * out_plane];
    let (xd, wd) = (x.data(), weight.data());
    for co in 0..d.cout {
        let y = &mut out[co * out_plane..(co + 1) * out_plane];
        y.fill(bias.data()[co]);
        for ci in 0..d.cin {
            let xin = &xd[ci * in_plane..(ci + 1) * in_plane];
            let wk = &wd[(co * d.cin + ci) * taps..][..taps];
            for_each_tap(&d, spec, |tap, out_row, in_start, w0, w1, sw| {
                let wv = wk[tap];
                if wv == 0.0 {
                    return;
                }
                let dst = &mut y[out_row + w0..out_row + w1];
                if sw == 1 {
                    let src = &xin[in_start..in_start + (w1 - w0)];
                    for (o, &v) in dst.iter_mut().zip(src) {
                        *o += wv * v;
                    }
                } else {
                    for (n, o) in dst.iter_mut().enumerate() {
                        *o += wv * xin[in_start + n * sw];
                    }
                }
            });
        }
    }
    Tensor::new(vec![d.cout, d.o[0], d.o[1], d.o[2]], out)
}

fn conv3d_backward(x: &Tensor, weight: &Tensor, g: &Tensor, spec: Conv3dSpec) -> (Tensor, Tensor, Tensor) {
    let d = conv_dims(x, weight, spec).expect("conv dims validated in forward");
    let taps = d.k[0] * d.k[1] * d.k[2];
    let in_plane = d.t * d.h * d.w;
    let out_plane = d.o[0] * d.o[1] * d.o[2];
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; d.cout];
    let (xd, wd, gd) = (x.data(), weight.data(), g.data());
    for co in 0..d.cout {
        let gy = &gd[co * out_plane..(co + 1) * out_plane];
        gb[co] = gy.iter().sum();
        for ci in 0..d.cin {
            let xin = &xd[ci * in_plane..(ci + 1) * in_plane];
            let gxin = &mut gx[ci * in_plane..(ci + 1) * in_plane];
            let base = (co * d.cin + ci) * taps;
            let wk = &wd[base..base + taps];
            let gwk = &mut gw[base..base + taps];
            for_each_tap(&d, spec, |tap, out_row, in_start, w0, w1, sw| {
                let src = &gy[out_row + w0..out_row + w1];
                let wv = wk[tap];
                let mut acc = 0.0;
                if sw == 1 {
                    let xs = &xin[in_start..in_start + (w1 - w0)];
                    for (&gv, &xv) in src.iter().zip(xs) {
                        acc += gv * xv;
                    }
                    for (o, &gv) in gxin[in_start..in_start + (w1 - w0)].iter_mut().zip(src) {
                        *o += wv * gv;
                    }
                } else {
                    for (n, &gv) in src.iter().enumerate() {
                        acc += gv * xin[in_start + n * sw];
                        gxin[in_start + n * sw] += wv * gv;
                    }
                }
                gwk[tap] += acc;
            });
        }
    }
    (
        Tensor::new(x.shape().to_vec(), gx).expect("gx"),
        Tensor::new(weight.shape().to_vec(), gw).expect("gw"),
        Tensor::vector(gb),
    )
}

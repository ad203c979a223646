use super::{check_finite, Tensor};
use crate::error::{Error, Result};

/// Negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Element-wise operation kinds. Binary kinds accept equal shapes or a
/// one-element operand on either side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemOp {
    Add,
    Sub,
    Mul,
    Div,
    Exp,
    Ln,
    Neg,
    Sqrt,
    Sigmoid,
    Sin,
    Cos,
    /// `atan2(a, b)` with `a` the ordinate; the gradient at the origin is 0.
    Atan2,
    LeakyRelu,
    Min,
    Max,
}

impl ElemOp {
    pub fn is_binary(self) -> bool {
        matches!(
            self,
            ElemOp::Add
                | ElemOp::Sub
                | ElemOp::Mul
                | ElemOp::Div
                | ElemOp::Atan2
                | ElemOp::Min
                | ElemOp::Max
        )
    }
}

fn unary_forward(op: ElemOp, x: f64) -> f64 {
    match op {
        ElemOp::Exp => x.exp(),
        ElemOp::Ln => x.ln(),
        ElemOp::Neg => -x,
        ElemOp::Sqrt => x.sqrt(),
        ElemOp::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        ElemOp::Sin => x.sin(),
        ElemOp::Cos => x.cos(),
        ElemOp::LeakyRelu => leaky_relu(x),
        _ => unreachable!("{op:?} is binary"),
    }
}

pub fn leaky_relu(x: f64) -> f64 {
    x.max(0.0) + LEAKY_SLOPE * x.min(0.0)
}

/// d(out)/d(in) for unary kinds, given input and output.
fn unary_derivative(op: ElemOp, x: f64, y: f64) -> f64 {
    match op {
        ElemOp::Exp => y,
        ElemOp::Ln => 1.0 / x,
        ElemOp::Neg => -1.0,
        ElemOp::Sqrt => 0.5 / y,
        ElemOp::Sigmoid => y * (1.0 - y),
        ElemOp::Sin => x.cos(),
        ElemOp::Cos => -x.sin(),
        ElemOp::LeakyRelu => {
            if x > 0.0 {
                1.0
            } else {
                LEAKY_SLOPE
            }
        }
        _ => unreachable!("{op:?} is binary"),
    }
}

fn binary_forward(op: ElemOp, a: f64, b: f64) -> f64 {
    match op {
        ElemOp::Add => a + b,
        ElemOp::Sub => a - b,
        ElemOp::Mul => a * b,
        ElemOp::Div => a / b,
        ElemOp::Atan2 => a.atan2(b),
        ElemOp::Min => a.min(b),
        ElemOp::Max => a.max(b),
        _ => unreachable!("{op:?} is unary"),
    }
}

/// (d/da, d/db) for binary kinds. Ties in min/max route to `a`.
fn binary_derivative(op: ElemOp, a: f64, b: f64) -> (f64, f64) {
    match op {
        ElemOp::Add => (1.0, 1.0),
        ElemOp::Sub => (1.0, -1.0),
        ElemOp::Mul => (b, a),
        ElemOp::Div => (1.0 / b, -a / (b * b)),
        ElemOp::Atan2 => {
            let r2 = a * a + b * b;
            if r2 == 0.0 {
                (0.0, 0.0)
            } else {
                (b / r2, -a / r2)
            }
        }
        ElemOp::Min => {
            if a <= b {
                (1.0, 0.0)
            } else {
                (0.0, 1.0)
            }
        }
        ElemOp::Max => {
            if a >= b {
                (1.0, 0.0)
            } else {
                (0.0, 1.0)
            }
        }
        _ => unreachable!("{op:?} is unary"),
    }
}

impl Tensor {
    /// Applies `op` element-wise. `other` is required for binary kinds and
    /// must match `self`'s shape unless one side has a single element.
    pub fn elementwise(&self, op: ElemOp, other: Option<&Tensor>) -> Result<Tensor> {
        if op.is_binary() {
            let other = other.ok_or_else(|| {
                Error::config(format!("{op:?} needs a second operand"))
            })?;
            return self.binary(op, other);
        }
        if other.is_some() {
            return Err(Error::config(format!("{op:?} is unary but got two operands")));
        }
        let x = self.to_vec();
        let y: Vec<f64> = x.iter().map(|&v| unary_forward(op, v)).collect();
        if let Some(i) = y.iter().position(|v| v.is_nan()) {
            return Err(Error::numeric(format!(
                "{op:?} produced NaN at index {i} (input {})",
                x[i]
            )));
        }
        let y_saved = y.clone();
        Ok(Tensor::from_op(
            y,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g| {
                let gx = g
                    .iter()
                    .zip(x.iter().zip(&y_saved))
                    .map(|(g, (&x, &y))| g * unary_derivative(op, x, y))
                    .collect();
                vec![Some(gx)]
            }),
        ))
    }

    fn binary(&self, op: ElemOp, other: &Tensor) -> Result<Tensor> {
        let (na, nb) = (self.numel(), other.numel());
        let shape = if self.shape() == other.shape() {
            self.shape().to_vec()
        } else if nb == 1 {
            self.shape().to_vec()
        } else if na == 1 {
            other.shape().to_vec()
        } else {
            return Err(Error::config(format!(
                "{op:?}: shapes {:?} and {:?} are neither equal nor scalar-broadcastable",
                self.shape(),
                other.shape()
            )));
        };
        let a = self.to_vec();
        let b = other.to_vec();
        let n = na.max(nb);
        let at = |i: usize| if na == 1 { a[0] } else { a[i] };
        let bt = |i: usize| if nb == 1 { b[0] } else { b[i] };
        let y: Vec<f64> = (0..n).map(|i| binary_forward(op, at(i), bt(i))).collect();
        if let Some(i) = y.iter().position(|v| v.is_nan()) {
            return Err(Error::numeric(format!(
                "{op:?} produced NaN at index {i} (operands {}, {})",
                at(i),
                bt(i)
            )));
        }
        Ok(Tensor::from_op(
            y,
            shape,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let mut ga = vec![0.0; na];
                let mut gb = vec![0.0; nb];
                for (i, gi) in g.iter().enumerate() {
                    let av = if na == 1 { a[0] } else { a[i] };
                    let bv = if nb == 1 { b[0] } else { b[i] };
                    let (da, db) = binary_derivative(op, av, bv);
                    ga[if na == 1 { 0 } else { i }] += gi * da;
                    gb[if nb == 1 { 0 } else { i }] += gi * db;
                }
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(ElemOp::Add, Some(other))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(ElemOp::Sub, Some(other))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(ElemOp::Mul, Some(other))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(ElemOp::Div, Some(other))
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        self.add(&Tensor::scalar(c))
    }

    pub fn mul_scalar(&self, c: f64) -> Result<Tensor> {
        self.mul(&Tensor::scalar(c))
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.elementwise(ElemOp::Exp, None)
    }

    pub fn ln(&self) -> Result<Tensor> {
        self.elementwise(ElemOp::Ln, None)
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.elementwise(ElemOp::Neg, None)
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        self.elementwise(ElemOp::Sqrt, None)
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.elementwise(ElemOp::Sigmoid, None)
    }

    pub fn sin(&self) -> Result<Tensor> {
        self.elementwise(ElemOp::Sin, None)
    }

    pub fn cos(&self) -> Result<Tensor> {
        self.elementwise(ElemOp::Cos, None)
    }

    pub fn leaky_relu(&self) -> Result<Tensor> {
        self.elementwise(ElemOp::LeakyRelu, None)
    }

    pub fn square(&self) -> Result<Tensor> {
        self.mul(self)
    }

    /// Sum of all elements as a scalar tensor.
    pub fn sum(&self) -> Tensor {
        let n = self.numel();
        let total: f64 = self.data().iter().sum();
        Tensor::from_op(
            vec![total],
            Vec::new(),
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let total: f64 = self.data().iter().sum();
        let scale = 1.0 / n.max(1) as f64;
        Tensor::from_op(
            vec![total * scale],
            Vec::new(),
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0] * scale; n])]),
        )
    }

    /// Matrix product of `[M,K]` and `[K,N]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (&[m, k], &[k2, n]) = (self.shape(), other.shape()) else {
            return Err(Error::config(format!(
                "matmul needs two matrices, got {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        };
        if k != k2 {
            return Err(Error::config(format!(
                "matmul inner extents differ: {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let a = self.to_vec();
        let b = other.to_vec();
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = a[i * k + p];
                let brow = &b[p * n..(p + 1) * n];
                let crow = &mut c[i * n..(i + 1) * n];
                for (cv, bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
        Ok(Tensor::from_op(
            c,
            vec![m, n],
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                // dA = dC . B^T, dB = A^T . dC
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &b[p * n..(p + 1) * n];
                        ga[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        let av = a[i * k + p];
                        for (gbv, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *gbv += av * gv;
                        }
                    }
                }
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::config(format!(
                "cannot reshape {:?} into {:?}",
                self.shape(),
                shape
            )));
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            Box::new(|g| vec![Some(g.to_vec())]),
        ))
    }

    /// Appends a trailing axis of extent `k`, repeating every element.
    /// `[N] -> [N, k]`; this is the only broadcast beyond scalars.
    pub fn expand_last(&self, k: usize) -> Tensor {
        let x = self.data();
        let mut y = Vec::with_capacity(x.len() * k);
        for &v in x.iter() {
            y.extend(std::iter::repeat(v).take(k));
        }
        drop(x);
        let mut shape = self.shape().to_vec();
        shape.push(k);
        let n = self.numel();
        Tensor::from_op(
            y,
            shape,
            vec![self.clone()],
            Box::new(move |g| {
                let gx = (0..n).map(|i| g[i * k..(i + 1) * k].iter().sum()).collect();
                vec![Some(gx)]
            }),
        )
    }

    /// `[B,C,L] -> [B,C*n,L]`, output channel `o` reading input channel `o / n`.
    pub fn repeat_channels(&self, n: usize) -> Result<Tensor> {
        let &[b, c, l] = self.shape() else {
            return Err(Error::config(format!(
                "repeat_channels needs [B,C,L], got {:?}",
                self.shape()
            )));
        };
        if n == 1 {
            return Ok(self.clone());
        }
        let x = self.data();
        let mut y = Vec::with_capacity(b * c * n * l);
        for bi in 0..b {
            for ci in 0..c {
                let row = &x[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                for _ in 0..n {
                    y.extend_from_slice(row);
                }
            }
        }
        drop(x);
        Ok(Tensor::from_op(
            y,
            vec![b, c * n, l],
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; b * c * l];
                for bi in 0..b {
                    for ci in 0..c {
                        let dst = &mut gx[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                        for j in 0..n {
                            let o = (bi * c * n + ci * n + j) * l;
                            dst.iter_mut().zip(&g[o..o + l]).for_each(|(d, s)| *d += s);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Concatenates `[B,C_i,L]` tensors along the channel axis.
    pub fn concat_channels(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::config("concat_channels needs at least one tensor"))?;
        let &[b, _, l] = first.shape() else {
            return Err(Error::config(format!(
                "concat_channels needs [B,C,L], got {:?}",
                first.shape()
            )));
        };
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            match p.shape() {
                &[pb, pc, pl] if pb == b && pl == l => widths.push(pc),
                other => {
                    return Err(Error::config(format!(
                        "concat_channels: shape {other:?} incompatible with [{b}, _, {l}]"
                    )))
                }
            }
        }
        let total: usize = widths.iter().sum();
        let mut y = vec![0.0; b * total * l];
        let mut offset = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let x = p.data();
            for bi in 0..b {
                let src = &x[bi * w * l..(bi + 1) * w * l];
                let dst = (bi * total + offset) * l;
                y[dst..dst + w * l].copy_from_slice(src);
            }
            offset += w;
        }
        Ok(Tensor::from_op(
            y,
            vec![b, total, l],
            parts.to_vec(),
            Box::new(move |g| {
                let mut out = Vec::with_capacity(widths.len());
                let mut offset = 0;
                for &w in &widths {
                    let mut gp = vec![0.0; b * w * l];
                    for bi in 0..b {
                        let src = (bi * total + offset) * l;
                        gp[bi * w * l..(bi + 1) * w * l].copy_from_slice(&g[src..src + w * l]);
                    }
                    offset += w;
                    out.push(Some(gp));
                }
                out
            }),
        ))
    }

    /// `[B,C,L] -> [B,C,len]` keeping positions `start..start+len`.
    pub fn crop_time(&self, start: usize, len: usize) -> Result<Tensor> {
        let &[b, c, l] = self.shape() else {
            return Err(Error::config(format!("crop_time needs [B,C,L], got {:?}", self.shape())));
        };
        if start + len > l {
            return Err(Error::config(format!(
                "crop_time: window {start}..{} exceeds length {l}",
                start + len
            )));
        }
        let x = self.data();
        let mut y = Vec::with_capacity(b * c * len);
        for row in x.chunks_exact(l) {
            y.extend_from_slice(&row[start..start + len]);
        }
        drop(x);
        Ok(Tensor::from_op(
            y,
            vec![b, c, len],
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; b * c * l];
                for (r, grow) in g.chunks_exact(len).enumerate() {
                    gx[r * l + start..r * l + start + len].copy_from_slice(grow);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Rows `[start, start+len)` of the leading axis.
    pub fn narrow_batch(&self, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        let Some(&lead) = shape.first() else {
            return Err(Error::config("narrow_batch on a scalar"));
        };
        if start + len > lead {
            return Err(Error::config(format!(
                "narrow_batch: rows {start}..{} exceed {lead}",
                start + len
            )));
        }
        let row: usize = shape[1..].iter().product();
        let y = self.data()[start * row..(start + len) * row].to_vec();
        let mut out_shape = shape;
        out_shape[0] = len;
        let total = self.numel();
        Ok(Tensor::from_op(
            y,
            out_shape,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; total];
                gx[start * row..(start + len) * row].copy_from_slice(g);
                vec![Some(gx)]
            }),
        ))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::config("stack needs at least one tensor"))?;
        let inner = first.shape().to_vec();
        if parts.iter().any(|p| p.shape() != inner.as_slice()) {
            return Err(Error::config("stack: all tensors must share a shape"));
        }
        let n = first.numel();
        let mut y = Vec::with_capacity(n * parts.len());
        for p in parts {
            y.extend_from_slice(&p.data());
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&inner);
        let count = parts.len();
        Ok(Tensor::from_op(
            y,
            shape,
            parts.to_vec(),
            Box::new(move |g| (0..count).map(|i| Some(g[i * n..(i + 1) * n].to_vec())).collect()),
        ))
    }

    /// Fails with a numeric error if any value is NaN or infinite.
    pub fn ensure_finite(&self, label: &str) -> Result<()> {
        check_finite(label, &self.data())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec())
    }

    #[test]
    fn leaky_relu_branches() {
        let y = t(&[2.0, -1.0, 0.0]).leaky_relu().unwrap().to_vec();
        assert_eq!(y, vec![2.0, -0.01, 0.0]);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        assert_eq!(t(&[0.0]).sigmoid().unwrap().to_vec(), vec![0.5]);
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let err = t(&[1.0, 2.0]).add(&t(&[1.0, 2.0, 3.0])).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn nan_reports_op_and_index() {
        let err = t(&[1.0, -1.0]).sqrt().unwrap_err();
        match err {
            Error::Numeric(msg) => {
                assert!(msg.contains("Sqrt") && msg.contains("index 1"), "{msg}")
            }
            other => panic!("unexpected {other:?}"),
        }
        let zero = t(&[0.0]);
        assert!(matches!(zero.div(&zero), Err(Error::Numeric(_))));
    }

    #[test]
    fn scalar_broadcast_both_sides() {
        let a = t(&[1.0, 2.0, 3.0]);
        let s = Tensor::scalar(10.0);
        assert_eq!(a.sub(&s).unwrap().to_vec(), vec![-9.0, -8.0, -7.0]);
        assert_eq!(s.sub(&a).unwrap().to_vec(), vec![9.0, 8.0, 7.0]);
    }

    #[test]
    fn atan2_origin_gradient_is_zero() {
        let y = Tensor::param(vec![0.0], &[1]).unwrap();
        let x = Tensor::param(vec![0.0], &[1]).unwrap();
        let a = y.elementwise(ElemOp::Atan2, Some(&x)).unwrap();
        assert_eq!(a.to_vec(), vec![0.0]);
        a.sum().backward().unwrap();
        assert_eq!(y.grad().unwrap(), vec![0.0]);
        assert_eq!(x.grad().unwrap(), vec![0.0]);
    }

    #[test]
    fn matmul_identity_and_row_selection() {
        let eye = Tensor::new(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        let m = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        assert_eq!(eye.matmul(&m).unwrap().to_vec(), m.to_vec());
        let row = Tensor::new(vec![1.0, 0.0], &[1, 2]).unwrap();
        let col = Tensor::new(vec![7.5, -2.0], &[2, 1]).unwrap();
        assert_eq!(row.matmul(&col).unwrap().to_vec(), vec![7.5]);
        assert!(matches!(m.matmul(&row), Err(Error::Config(_))));
    }

    #[test]
    fn every_elementwise_kind_passes_grad_check() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let unary = [
            ElemOp::Exp,
            ElemOp::Ln,
            ElemOp::Neg,
            ElemOp::Sqrt,
            ElemOp::Sigmoid,
            ElemOp::Sin,
            ElemOp::Cos,
            ElemOp::LeakyRelu,
        ];
        let binary = [
            ElemOp::Add,
            ElemOp::Sub,
            ElemOp::Mul,
            ElemOp::Div,
            ElemOp::Atan2,
            ElemOp::Min,
            ElemOp::Max,
        ];
        for _ in 0..20 {
            // positive inputs keep ln/sqrt in their domain
            let av: Vec<f64> = (0..5).map(|_| rng.gen_range(0.2..2.0)).collect();
            let bv: Vec<f64> = (0..5).map(|_| rng.gen_range(0.2..2.0)).collect();
            for op in unary {
                let a = Tensor::param(av.clone(), &[5]).unwrap();
                let w = Tensor::from_vec((1..=5).map(f64::from).collect());
                let f = || a.elementwise(op, None)?.mul(&w).map(|t| t.sum());
                let err = grad_check(f, &[a.clone()], 1e-6).unwrap().max_rel_error;
                assert!(err < 1e-4, "{op:?}: {err}");
            }
            for op in binary {
                let a = Tensor::param(av.clone(), &[5]).unwrap();
                let b = Tensor::param(bv.clone(), &[5]).unwrap();
                let f = || a.elementwise(op, Some(&b)).map(|t| t.sum());
                let err = grad_check(f, &[a.clone(), b.clone()], 1e-6).unwrap().max_rel_error;
                assert!(err < 1e-4, "{op:?}: {err}");
            }
        }
    }

    #[test]
    fn shape_ops_route_gradients() {
        let x = Tensor::param((0..12).map(|v| v as f64 * 0.1).collect(), &[2, 2, 3]).unwrap();
        let w = Tensor::from_vec((0..36).map(|v| (v as f64).sin()).collect());
        let f = || -> Result<Tensor> {
            let r = x.repeat_channels(3)?;
            let c = Tensor::concat_channels(&[r.clone(), x.clone()])?;
            let cr = c.crop_time(1, 2)?.reshape(&[32])?;
            let k = cr.narrow_batch(4, 18)?;
            let e = k.expand_last(2).reshape(&[36])?;
            Ok(e.mul(&w)?.sum())
        };
        let err = grad_check(f, &[x.clone()], 1e-6).unwrap().max_rel_error;
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn stack_builds_leading_axis() {
        let a = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let b = Tensor::param(vec![3.0, 4.0], &[2]).unwrap();
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        s.mul(&Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap())
            .unwrap()
            .sum()
            .backward()
            .unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 2.0]);
        assert_eq!(b.grad().unwrap(), vec![3.0, 4.0]);
    }
}

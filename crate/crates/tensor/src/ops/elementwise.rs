use crate::error::{dim_err, Result, TensorError};
use crate::float::Float;
use crate::graph::{Accum, Graph, Op, Var};
use crate::tensor::{strides_of, Tensor};

/// Pointwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    /// Exact `x·Φ(x)` with the Gaussian CDF via `erf`.
    Gelu,
    Silu,
    Sigmoid,
    Relu,
    Softplus,
    Exp,
    Ln,
    Neg,
    Square,
}

/// The four activation kinds exposed as layer activations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Silu,
    Sigmoid,
    Relu,
}

impl From<Activation> for UnaryKind {
    fn from(a: Activation) -> Self {
        match a {
            Activation::Gelu => UnaryKind::Gelu,
            Activation::Silu => UnaryKind::Silu,
            Activation::Sigmoid => UnaryKind::Sigmoid,
            Activation::Relu => UnaryKind::Relu,
        }
    }
}

#[inline]
pub fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn softplus<T: Float>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn gaussian_cdf<T: Float>(x: T) -> T {
    T::c(0.5) * (T::one() + (x * T::c(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
pub fn unary_value<T: Float>(kind: UnaryKind, x: T) -> T {
    match kind {
        UnaryKind::Gelu => x * gaussian_cdf(x),
        UnaryKind::Silu => x * sigmoid(x),
        UnaryKind::Sigmoid => sigmoid(x),
        UnaryKind::Relu => x.max(T::zero()),
        UnaryKind::Softplus => softplus(x),
        UnaryKind::Exp => x.exp(),
        UnaryKind::Ln => x.ln(),
        UnaryKind::Neg => -x,
        UnaryKind::Square => x * x,
    }
}

#[inline]
fn unary_derivative<T: Float>(kind: UnaryKind, x: T, y: T) -> T {
    match kind {
        UnaryKind::Gelu => {
            let pdf = (T::c(-0.5) * x * x).exp() * T::c(1.0 / (2.0 * std::f64::consts::PI).sqrt());
            gaussian_cdf(x) + x * pdf
        }
        UnaryKind::Silu => {
            let s = sigmoid(x);
            s * (T::one() + x * (T::one() - s))
        }
        UnaryKind::Sigmoid => y * (T::one() - y),
        UnaryKind::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        UnaryKind::Softplus => sigmoid(x),
        UnaryKind::Exp => y,
        UnaryKind::Ln => T::one() / x,
        UnaryKind::Neg => -T::one(),
        UnaryKind::Square => T::c(2.0) * x,
    }
}

/// Maps each flat index of `out_shape` to the flat index of a same-rank
/// operand whose axes are either equal or 1.
fn broadcast_map(out_shape: &[usize], rhs_shape: &[usize]) -> Vec<usize> {
    let out_strides = strides_of(out_shape);
    let rhs_strides = strides_of(rhs_shape);
    let eff: Vec<usize> = rhs_shape.iter().zip(&rhs_strides).map(|(&d, &s)| if d == 1 { 0 } else { s }).collect();
    let n: usize = out_shape.iter().product();
    (0..n)
        .map(|flat| {
            let mut rem = flat;
            let mut off = 0;
            for ax in 0..out_shape.len() {
                let i = rem / out_strides[ax];
                rem %= out_strides[ax];
                off += i * eff[ax];
            }
            off
        })
        .collect()
}

enum Bcast {
    Same,
    Scalar,
    /// rhs equals the trailing block of lhs, repeated.
    Tile(usize),
    Map(Vec<usize>),
}

fn bcast_plan(lhs: &[usize], rhs: &[usize]) -> Result<Bcast> {
    if lhs == rhs {
        return Ok(Bcast::Same);
    }
    if rhs.iter().product::<usize>() == 1 {
        return Ok(Bcast::Scalar);
    }
    if rhs.len() > lhs.len() {
        return dim_err(format!("cannot broadcast {rhs:?} onto {lhs:?}"));
    }
    // Lower-rank operands are right-aligned.
    let mut padded = vec![1; lhs.len() - rhs.len()];
    padded.extend_from_slice(rhs);
    if lhs.iter().zip(&padded).any(|(&l, &r)| r != l && r != 1) {
        return dim_err(format!("cannot broadcast {rhs:?} onto {lhs:?}"));
    }
    let lead = padded.iter().take_while(|&&d| d == 1).count();
    if padded[lead..] == lhs[lead..] {
        return Ok(Bcast::Tile(padded[lead..].iter().product()));
    }
    Ok(Bcast::Map(broadcast_map(lhs, &padded)))
}

fn binary<T: Float>(lhs: &Tensor<T>, rhs: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    let a = lhs.data();
    let b = rhs.data();
    let data: Vec<T> = match bcast_plan(lhs.shape(), rhs.shape())? {
        Bcast::Same => a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect(),
        Bcast::Scalar => a.iter().map(|&x| f(x, b[0])).collect(),
        Bcast::Tile(n) => a.iter().enumerate().map(|(i, &x)| f(x, b[i % n])).collect(),
        Bcast::Map(m) => a.iter().zip(&m).map(|(&x, &j)| f(x, b[j])).collect(),
    };
    Tensor::new(lhs.shape(), data)
}

/// Sums `g` (shaped like the output) down to the rhs operand's shape.
fn reduce_to_rhs<T: Float>(g: &[T], out_shape: &[usize], rhs_shape: &[usize], weights: Option<&[T]>) -> Vec<T> {
    let n: usize = rhs_shape.iter().product();
    let mut d = vec![T::zero(); n];
    let w = |i: usize| weights.map_or(T::one(), |w| w[i]);
    match bcast_plan(out_shape, rhs_shape).expect("validated in forward") {
        Bcast::Same => {
            for (i, (o, &gi)) in d.iter_mut().zip(g).enumerate() {
                *o = gi * w(i);
            }
        }
        Bcast::Scalar => {
            d[0] = g.iter().enumerate().map(|(i, &gi)| gi * w(i)).sum();
        }
        Bcast::Tile(n) => {
            for (i, &gi) in g.iter().enumerate() {
                d[i % n] += gi * w(i);
            }
        }
        Bcast::Map(m) => {
            for (i, (&gi, &j)) in g.iter().zip(&m).enumerate() {
                d[j] += gi * w(i);
            }
        }
    }
    d
}

pub(crate) fn add_backward<T: Float>(gr: &Graph<T>, a: Var, b: Var, g: &[T], acc: &mut Accum<'_, T>) {
    acc.add_slice(a, g);
    if acc.wants(b) {
        let d = reduce_to_rhs(g, gr.shape(a), gr.shape(b), None);
        acc.add_slice(b, &d);
    }
}

pub(crate) fn sub_backward<T: Float>(gr: &Graph<T>, a: Var, b: Var, g: &[T], acc: &mut Accum<'_, T>) {
    acc.add_slice(a, g);
    if acc.wants(b) {
        let d = reduce_to_rhs(g, gr.shape(a), gr.shape(b), None);
        acc.add_with(b, |o| {
            for (oi, di) in o.iter_mut().zip(d) {
                *oi -= di;
            }
        });
    }
}

pub(crate) fn mul_backward<T: Float>(gr: &Graph<T>, a: Var, b: Var, g: &[T], acc: &mut Accum<'_, T>) {
    let av = gr.value(a);
    let bv = gr.value(b);
    if acc.wants(a) {
        // d/da = g * broadcast(b)
        let ga = binary(&Tensor::new(av.shape(), g.to_vec()).expect("shape"), bv, |x, y| x * y)
            .expect("validated in forward");
        acc.add_slice(a, ga.data());
    }
    if acc.wants(b) {
        let d = reduce_to_rhs(g, av.shape(), bv.shape(), Some(av.data()));
        acc.add_slice(b, &d);
    }
}

pub(crate) fn unary_backward<T: Float>(
    gr: &Graph<T>,
    x: Var,
    kind: UnaryKind,
    y: &Tensor<T>,
    g: &[T],
    acc: &mut Accum<'_, T>,
) {
    let xv = gr.value(x).data();
    let yv = y.data();
    acc.add_with(x, |d| {
        for i in 0..d.len() {
            d[i] += g[i] * unary_derivative(kind, xv[i], yv[i]);
        }
    });
}

impl<T: Float> Graph<T> {
    /// `a + b`, with `b` right-aligned and broadcast onto `a` along size-1
    /// or missing axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = binary(self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = binary(self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product, broadcasting `b` as in [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = binary(self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    /// `a·x + b` with constant scalars.
    pub fn affine(&mut self, x: Var, a: T, b: T) -> Var {
        let out = self.value(x).map(|v| a * v + b);
        self.push(out, Op::Affine(x, a), &[x])
    }

    pub fn unary(&mut self, x: Var, kind: UnaryKind) -> Var {
        let out = self.value(x).map(|v| unary_value(kind, v));
        self.push(out, Op::Unary(x, kind), &[x])
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Var {
        self.unary(x, kind.into())
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Gelu)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Silu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Relu)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Softplus)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Exp)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Ln)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Neg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Square)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let out = self.value(x).map(|v| v.max(lo).min(hi));
        self.push(out, Op::Clamp(x, lo, hi), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.sum() / T::c(v.numel() as f64);
        self.push(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    /// Replaces elements where `mask` is set by `fill`; replaced elements
    /// pass no gradient.
    pub fn masked_fill(&mut self, x: Var, mask: Vec<bool>, fill: &[T]) -> Result<Var> {
        let xv = self.value(x);
        if mask.len() != xv.numel() || fill.len() != xv.numel() {
            return Err(TensorError::Dimension(format!(
                "mask/fill lengths {}/{} vs {} elements",
                mask.len(),
                fill.len(),
                xv.numel()
            )));
        }
        let data = xv.data().iter().zip(&mask).zip(fill).map(|((&v, &m), &f)| if m { f } else { v }).collect();
        let out = Tensor::new(xv.shape(), data)?;
        Ok(self.push(out, Op::MaskedFill(x, mask), &[x]))
    }
}

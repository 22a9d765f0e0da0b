//! Reverse-mode automatic differentiation over scalar expression tapes.
//!
//! A [`Tape`] records every scalar operation as a node holding its value
//! and the local partial derivatives with respect to its operands. Nodes
//! are appended in evaluation order, so operands always precede their
//! consumers and a single reverse sweep accumulates adjoints.
//!
//! Model code is written once against the [`Real`] trait and runs either on
//! plain `f64` (fast evaluation) or on [`Var`] (evaluation plus gradient).

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

use crate::special;

/// Operation kind recorded for each tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Log1p,
    Sqrt,
    Tanh,
    Pow,
    Logistic,
    LnGamma,
    LogSumExp,
    Sum,
    Dot,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("non-finite value {value} produced at tape node {node} ({op:?})")]
    NonFinite { node: usize, op: Op, value: f64 },
}

#[derive(Clone, Copy)]
struct Node {
    op: Op,
    start: u32,
    end: u32,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    values: Vec<f64>,
    edges: Vec<(u32, f64)>,
    first_bad: Option<(usize, Op, f64)>,
}

/// Append-only expression tape. Single-threaded; build one per evaluation.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drop all nodes but keep the allocations.
    pub fn clear(&mut self) {
        let inner = self.inner.get_mut();
        inner.nodes.clear();
        inner.values.clear();
        inner.edges.clear();
        inner.first_bad = None;
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// New independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(Op::Leaf, value, std::iter::empty())
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    /// First node whose value was not finite, if any.
    pub fn check(&self) -> Result<(), AdError> {
        match self.inner.borrow().first_bad {
            Some((node, op, value)) => Err(AdError::NonFinite { node, op, value }),
            None => Ok(()),
        }
    }

    fn push<I>(&self, op: Op, value: f64, edges: I) -> Var<'_>
    where
        I: IntoIterator<Item = (u32, f64)>,
    {
        let mut inner = self.inner.borrow_mut();
        let index = inner.nodes.len();
        let start = inner.edges.len() as u32;
        inner.edges.extend(edges);
        let end = inner.edges.len() as u32;
        inner.nodes.push(Node { op, start, end });
        inner.values.push(value);
        if !value.is_finite() && inner.first_bad.is_none() {
            inner.first_bad = Some((index, op, value));
        }
        Var {
            tape: self,
            index: index as u32,
            value,
        }
    }

    /// ∂output/∂input_i by reverse accumulation. Inputs the output does not
    /// depend on get 0.
    pub fn gradient(&self, output: Var<'_>, inputs: &[Var<'_>]) -> Result<Vec<f64>, AdError> {
        assert!(std::ptr::eq(output.tape, self), "output belongs to another tape");
        self.check()?;
        let inner = self.inner.borrow();
        let mut adjoint = vec![0.0; output.index as usize + 1];
        adjoint[output.index as usize] = 1.0;
        for i in (0..=output.index as usize).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let node = inner.nodes[i];
            for &(arg, partial) in &inner.edges[node.start as usize..node.end as usize] {
                adjoint[arg as usize] += a * partial;
            }
        }
        Ok(inputs
            .iter()
            .map(|v| {
                assert!(std::ptr::eq(v.tape, self), "input belongs to another tape");
                adjoint.get(v.index as usize).copied().unwrap_or(0.0)
            })
            .collect())
    }

    /// Local partials recorded for a node, in operand order.
    pub fn partials(&self, v: Var<'_>) -> Vec<f64> {
        let inner = self.inner.borrow();
        let node = inner.nodes[v.index as usize];
        inner.edges[node.start as usize..node.end as usize]
            .iter()
            .map(|e| e.1)
            .collect()
    }

    pub fn op(&self, v: Var<'_>) -> Op {
        self.inner.borrow().nodes[v.index as usize].op
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: u32,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({})", self.index, self.value)
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn index(&self) -> usize {
        self.index as usize
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    #[inline]
    fn same_tape(self, other: Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes combined"
        );
    }

    fn unary(self, op: Op, value: f64, partial: f64) -> Var<'t> {
        self.tape.push(op, value, [(self.index, partial)])
    }

    fn binary(self, other: Var<'t>, op: Op, value: f64, da: f64, db: f64) -> Var<'t> {
        self.same_tape(other);
        self.tape
            .push(op, value, [(self.index, da), (other.index, db)])
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.value.exp();
        self.unary(Op::Exp, v, v)
    }

    pub fn ln(self) -> Var<'t> {
        let x = self.value;
        let v = if x >= 0.0 { x.ln() } else { f64::NAN };
        self.unary(Op::Log, v, 1.0 / x)
    }

    pub fn ln_1p(self) -> Var<'t> {
        let x = self.value;
        self.unary(Op::Log1p, x.ln_1p(), 1.0 / (1.0 + x))
    }

    pub fn sqrt(self) -> Var<'t> {
        let v = self.value.sqrt();
        self.unary(Op::Sqrt, v, 0.5 / v)
    }

    pub fn tanh(self) -> Var<'t> {
        let v = self.value.tanh();
        self.unary(Op::Tanh, v, 1.0 - v * v)
    }

    /// `self^c` for a constant exponent.
    pub fn powf(self, c: f64) -> Var<'t> {
        let x = self.value;
        self.unary(Op::Pow, x.powf(c), c * x.powf(c - 1.0))
    }

    /// `self^other` with both operands differentiable (`self > 0`).
    pub fn pow(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value, other.value);
        let v = a.powf(b);
        self.binary(other, Op::Pow, v, b * a.powf(b - 1.0), v * a.ln())
    }

    pub fn logistic(self) -> Var<'t> {
        let v = special::logistic(self.value);
        self.unary(Op::Logistic, v, v * (1.0 - v))
    }

    pub fn ln_gamma(self) -> Var<'t> {
        let x = self.value;
        self.unary(Op::LnGamma, special::ln_gamma(x), special::digamma(x))
    }

    /// `ln Σ exp(x_i)`; partials are the softmax weights. Panics on empty input.
    pub fn log_sum_exp(xs: &[Var<'t>]) -> Var<'t> {
        let first = xs.first().expect("log_sum_exp of empty slice");
        let max = xs.iter().map(|v| v.value).fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            let edges = xs.iter().map(|v| (v.index, f64::NAN));
            return first.tape.push(Op::LogSumExp, max, edges);
        }
        let total: f64 = xs.iter().map(|v| (v.value - max).exp()).sum();
        let value = max + total.ln();
        let edges = xs.iter().map(|v| {
            v.same_tape(*first);
            (v.index, (v.value - value).exp())
        });
        first.tape.push(Op::LogSumExp, value, edges)
    }

    /// n-ary sum. Panics on empty input.
    pub fn sum(xs: &[Var<'t>]) -> Var<'t> {
        let first = xs.first().expect("sum of empty slice");
        let value = xs.iter().map(|v| v.value).sum();
        let edges = xs.iter().map(|v| {
            v.same_tape(*first);
            (v.index, 1.0)
        });
        first.tape.push(Op::Sum, value, edges)
    }

    /// `Σ c_i x_i` as one node. Panics on empty input.
    pub fn dot_const(coefs: &[f64], xs: &[Var<'t>]) -> Var<'t> {
        assert_eq!(coefs.len(), xs.len(), "dot length");
        let first = xs.first().expect("dot of empty slice");
        let value = coefs.iter().zip(xs).map(|(c, v)| c * v.value).sum();
        let edges = coefs.iter().zip(xs).map(|(&c, v)| {
            v.same_tape(*first);
            (v.index, c)
        });
        first.tape.push(Op::Dot, value, edges)
    }

    /// `Σ a_i b_i` as one node. Panics on empty input.
    pub fn dot(a: &[Var<'t>], b: &[Var<'t>]) -> Var<'t> {
        assert_eq!(a.len(), b.len(), "dot length");
        let first = a.first().expect("dot of empty slice");
        let value = a.iter().zip(b).map(|(x, y)| x.value * y.value).sum();
        let edges = a.iter().zip(b).flat_map(|(x, y)| {
            x.same_tape(*first);
            y.same_tape(*first);
            [(x.index, y.value), (y.index, x.value)]
        });
        first.tape.push(Op::Dot, value, edges)
    }

    pub fn constant(&self, c: f64) -> Var<'t> {
        self.tape.var(c)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Add, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Sub, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Mul, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let inv = 1.0 / rhs.value;
        let v = self.value * inv;
        self.binary(rhs, Op::Div, v, inv, -v * inv)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg, -self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.unary(Op::Add, self.value + c, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self.unary(Op::Sub, self.value - c, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.unary(Op::Mul, self.value * c, c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Var<'t> {
        self.unary(Op::Div, self.value / c, 1.0 / c)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, v: Var<'t>) -> Var<'t> {
        v + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, v: Var<'t>) -> Var<'t> {
        v.unary(Op::Sub, self - v.value, -1.0)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, v: Var<'t>) -> Var<'t> {
        v * self
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, v: Var<'t>) -> Var<'t> {
        let val = self / v.value;
        v.unary(Op::Div, val, -val / v.value)
    }
}

/// Scalar arithmetic shared by `f64` and [`Var`].
pub trait Real:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(&self) -> f64;
    /// A constant living wherever `self` lives (same tape for `Var`).
    fn constant_like(&self, c: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn powf(self, c: f64) -> Self;
    fn pow(self, e: Self) -> Self;
    fn logistic(self) -> Self;
    fn ln_gamma(self) -> Self;
    fn log_sum_exp(xs: &[Self]) -> Self;
    fn sum(xs: &[Self]) -> Self;

    fn square(self) -> Self {
        self * self
    }

    /// `Σ c_i x_i`; `xs` must be non-empty.
    fn dot_const(coefs: &[f64], xs: &[Self]) -> Self {
        let terms: Vec<Self> = xs.iter().zip(coefs).map(|(&x, &c)| x * c).collect();
        Self::sum(&terms)
    }

    /// `Σ a_i b_i`; inputs must be non-empty.
    fn dot(a: &[Self], b: &[Self]) -> Self {
        let terms: Vec<Self> = a.iter().zip(b).map(|(&x, &y)| x * y).collect();
        Self::sum(&terms)
    }

    /// `ln(1 + exp(self))`
    fn softplus(self) -> Self {
        Self::log_sum_exp(&[self.constant_like(0.0), self])
    }

    /// `c - self`
    fn rsub(self, c: f64) -> Self {
        -(self - c)
    }

    /// `c / self`
    fn recip_scaled(self, c: f64) -> Self {
        self.constant_like(c) / self
    }
}

impl Real for f64 {
    fn value(&self) -> f64 {
        *self
    }
    fn constant_like(&self, c: f64) -> f64 {
        c
    }
    fn exp(self) -> f64 {
        f64::exp(self)
    }
    fn ln(self) -> f64 {
        f64::ln(self)
    }
    fn ln_1p(self) -> f64 {
        f64::ln_1p(self)
    }
    fn sqrt(self) -> f64 {
        f64::sqrt(self)
    }
    fn tanh(self) -> f64 {
        f64::tanh(self)
    }
    fn powf(self, c: f64) -> f64 {
        f64::powf(self, c)
    }
    fn pow(self, e: f64) -> f64 {
        f64::powf(self, e)
    }
    fn logistic(self) -> f64 {
        special::logistic(self)
    }
    fn ln_gamma(self) -> f64 {
        special::ln_gamma(self)
    }
    fn log_sum_exp(xs: &[f64]) -> f64 {
        special::log_sum_exp(xs)
    }
    fn sum(xs: &[f64]) -> f64 {
        xs.iter().sum()
    }
    fn dot_const(coefs: &[f64], xs: &[f64]) -> f64 {
        coefs.iter().zip(xs).map(|(c, x)| c * x).sum()
    }
    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
    fn softplus(self) -> f64 {
        special::softplus(self)
    }
    fn recip_scaled(self, c: f64) -> f64 {
        c / self
    }
}

impl<'t> Real for Var<'t> {
    fn value(&self) -> f64 {
        self.value
    }
    fn constant_like(&self, c: f64) -> Self {
        self.constant(c)
    }
    fn exp(self) -> Self {
        Var::exp(self)
    }
    fn ln(self) -> Self {
        Var::ln(self)
    }
    fn ln_1p(self) -> Self {
        Var::ln_1p(self)
    }
    fn sqrt(self) -> Self {
        Var::sqrt(self)
    }
    fn tanh(self) -> Self {
        Var::tanh(self)
    }
    fn powf(self, c: f64) -> Self {
        Var::powf(self, c)
    }
    fn pow(self, e: Self) -> Self {
        Var::pow(self, e)
    }
    fn logistic(self) -> Self {
        Var::logistic(self)
    }
    fn ln_gamma(self) -> Self {
        Var::ln_gamma(self)
    }
    fn log_sum_exp(xs: &[Self]) -> Self {
        Var::log_sum_exp(xs)
    }
    fn sum(xs: &[Self]) -> Self {
        Var::sum(xs)
    }
    fn dot_const(coefs: &[f64], xs: &[Self]) -> Self {
        Var::dot_const(coefs, xs)
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        Var::dot(a, b)
    }
    fn recip_scaled(self, c: f64) -> Self {
        c / self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grad1(f: impl for<'t> Fn(Var<'t>) -> Var<'t>, x: f64) -> (f64, f64) {
        let tape = Tape::new();
        let v = tape.var(x);
        let y = f(v);
        let g = tape.gradient(y, &[v]).unwrap();
        (y.value(), g[0])
    }

    fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6 * (x.abs() + 1.0);
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn primitive_values_and_partials() {
        let tape = Tape::new();
        let zero = tape.var(0.0);
        let e = zero.exp();
        assert_eq!(e.value(), 1.0);
        assert_eq!(tape.partials(e), vec![1.0]);

        let one = tape.var(1.0);
        let l = one.ln();
        assert_eq!(l.value(), 0.0);
        assert_eq!(tape.partials(l), vec![1.0]);

        let three = tape.var(3.0);
        let lg = three.ln_gamma();
        assert!((lg.value() - 2f64.ln()).abs() < 1e-12);
        assert_eq!(tape.op(lg), Op::LnGamma);
    }

    #[test]
    fn product_rule() {
        let tape = Tape::new();
        let a = tape.var(2.0);
        let b = tape.var(3.0);
        let g = tape.gradient(a * b, &[a, b]).unwrap();
        assert_eq!(g, vec![3.0, 2.0]);
    }

    #[test]
    fn identity_composition() {
        let (_, g) = grad1(|a| a.exp().ln(), 1.7);
        assert!((g - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bernoulli_logit_gradient_at_zero() {
        // log Bern(1 | logistic(b)) = ln logistic(b)
        let f = |b: f64| special::logistic(b).ln();
        let fd = central(f, 0.0);
        let (_, g) = grad1(|b| b.logistic().ln(), 0.0);
        assert!((fd - 0.5).abs() < 1e-9);
        assert!((g - 0.5).abs() < 1e-15);
    }

    #[test]
    fn unreachable_inputs_get_zero() {
        let tape = Tape::new();
        let a = tape.var(1.0);
        let b = tape.var(5.0);
        let y = a.exp();
        assert_eq!(tape.gradient(y, &[a, b]).unwrap()[1], 0.0);
    }

    #[test]
    fn domain_violation_identifies_node() {
        let tape = Tape::new();
        let a = tape.var(-1.0);
        let b = a * 2.0;
        let c = b.ln();
        let err = tape.gradient(c, &[a]).unwrap_err();
        match err {
            AdError::NonFinite { node, op, .. } => {
                assert_eq!(node, c.index());
                assert_eq!(op, Op::Log);
            }
        }
    }

    #[test]
    fn log_zero_is_flagged() {
        let tape = Tape::new();
        let a = tape.var(0.0);
        let _ = a.ln();
        assert!(tape.check().is_err());
    }

    #[test]
    fn clear_resets_tape() {
        let mut tape = Tape::new();
        {
            let a = tape.var(-1.0);
            let _ = a.sqrt();
        }
        assert!(tape.check().is_err());
        tape.clear();
        assert!(tape.is_empty());
        assert!(tape.check().is_ok());
    }

    #[test]
    #[should_panic(expected = "different tapes")]
    fn mixing_tapes_panics() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let _ = t1.var(1.0) + t2.var(1.0);
    }

    #[test]
    fn sum_of_independent_parts_concatenates_gradients() {
        let xs = [0.3, -1.2, 2.0];
        let tape = Tape::new();
        let vs = tape.vars(&xs);
        let parts = [vs[0].exp(), vs[1].tanh(), vs[2].ln()];
        let total = Var::sum(&parts);
        let g = tape.gradient(total, &vs).unwrap();
        for (i, part) in parts.iter().enumerate() {
            let gi = tape.gradient(*part, &vs).unwrap();
            assert_eq!(gi[i], g[i]);
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (b.abs().max(1.0))
    }

    #[test]
    fn dot_nodes_match_expanded_products() {
        let tape = Tape::new();
        let a = tape.vars(&[1.5, -2.0, 0.25]);
        let b = tape.vars(&[0.5, 3.0, -4.0]);
        let d = Var::dot(&a, &b);
        assert_eq!(d.value(), 0.75 - 6.0 - 1.0);
        let mut inputs = a.clone();
        inputs.extend(&b);
        let g = tape.gradient(d, &inputs).unwrap();
        assert_eq!(g, vec![0.5, 3.0, -4.0, 1.5, -2.0, 0.25]);

        let c = Var::dot_const(&[2.0, 0.0, -1.0], &a);
        assert_eq!(c.value(), 3.0 - 0.25);
        assert_eq!(tape.gradient(c, &a).unwrap(), vec![2.0, 0.0, -1.0]);
        assert_eq!(<f64 as Real>::dot(&[1.0, 2.0], &[3.0, 4.0]), 11.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn unary_primitives_match_finite_differences(x in 0.05f64..8.0, y in -6.0f64..6.0) {
            let checks: Vec<(f64, Box<dyn Fn(f64) -> f64>, Box<dyn for<'t> Fn(Var<'t>) -> Var<'t>>)> = vec![
                (y, Box::new(f64::exp), Box::new(|v| v.exp())),
                (x, Box::new(f64::ln), Box::new(|v| v.ln())),
                (x, Box::new(f64::ln_1p), Box::new(|v| v.ln_1p())),
                (x, Box::new(f64::sqrt), Box::new(|v| v.sqrt())),
                (y, Box::new(f64::tanh), Box::new(|v| v.tanh())),
                (y, Box::new(special::logistic), Box::new(|v| v.logistic())),
                (x, Box::new(special::ln_gamma), Box::new(|v| v.ln_gamma())),
                (x, Box::new(|a: f64| a.powf(1.7)), Box::new(|v| v.powf(1.7))),
                (y, Box::new(|a: f64| -a), Box::new(|v| -v)),
                (y, Box::new(|a: f64| 3.0 - a), Box::new(|v| 3.0 - v)),
                (x, Box::new(|a: f64| 2.0 / a), Box::new(|v| 2.0 / v)),
            ];
            for (at, f, fv) in &checks {
                let (val, g) = grad1(fv, *at);
                prop_assert!((val - f(*at)).abs() <= 1e-12 * f(*at).abs().max(1.0));
                let fd = central(f, *at);
                prop_assert!(rel_err(g, fd) < 1e-6, "at {} ad {} fd {}", at, g, fd);
            }
        }

        #[test]
        fn binary_primitives_match_finite_differences(a in 0.1f64..5.0, b in -3.0f64..3.0) {
            type F2 = Box<dyn Fn(f64, f64) -> f64>;
            type V2 = Box<dyn for<'t> Fn(Var<'t>, Var<'t>) -> Var<'t>>;
            let checks: Vec<(F2, V2)> = vec![
                (Box::new(|x, y| x + y), Box::new(|x, y| x + y)),
                (Box::new(|x, y| x - y), Box::new(|x, y| x - y)),
                (Box::new(|x, y| x * y), Box::new(|x, y| x * y)),
                (Box::new(|x, y| y / x), Box::new(|x, y| y / x)),
                (Box::new(|x: f64, y| x.powf(y)), Box::new(|x, y| x.pow(y))),
                (Box::new(|x, y| special::log_sum_exp(&[x, y, 0.5])),
                 Box::new(|x, y| { let c = x.constant(0.5); Var::log_sum_exp(&[x, y, c]) })),
            ];
            for (f, fv) in &checks {
                let tape = Tape::new();
                let (va, vb) = (tape.var(a), tape.var(b));
                let out = fv(va, vb);
                let g = tape.gradient(out, &[va, vb]).unwrap();
                let fda = central(|t| f(t, b), a);
                let fdb = central(|t| f(a, t), b);
                prop_assert!(rel_err(g[0], fda) < 1e-6);
                prop_assert!(rel_err(g[1], fdb) < 1e-6);
            }
        }

        #[test]
        fn log_sum_exp_is_translation_stable(xs in proptest::collection::vec(-50.0f64..50.0, 1..8), c in -700.0f64..700.0) {
            let tape = Tape::new();
            let vs = tape.vars(&xs);
            let shifted: Vec<_> = vs.iter().map(|&v| v + c).collect();
            let base = Var::log_sum_exp(&vs).value();
            let moved = Var::log_sum_exp(&shifted).value();
            prop_assert!((moved - (base + c)).abs() <= 1e-12, "{} vs {}", moved, base + c);
        }
    }
}

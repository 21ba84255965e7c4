//! Scalar reverse-mode differentiation over an append-only record.
//!
//! Every [`Var`] is a value plus an index into a [`Tape`]. The reverse sweep
//! comes in two flavours: [`Tape::gradient`] accumulates plain `f64`
//! adjoints, while [`Tape::gradient_as_nodes`] performs the same sweep but
//! writes every adjoint back onto the tape as new nodes, so the resulting
//! derivatives can be differentiated again (double backward).
//!
//! ```
//! use dhnn_core::autodiff::Tape;
//!
//! let tape = Tape::new();
//! let x = tape.input(2.0);
//! let y = x * x * x;
//! let dy = tape.gradient_as_nodes(y, &[x]).unwrap();
//! assert_eq!(dy[0].value(), 12.0);
//! let d2y = tape.gradient(dy[0], &[x]).unwrap();
//! assert_eq!(d2y[0], 12.0);
//! ```

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("variable belongs to a different computation record")]
    ForeignVariable,
    #[error("node {0} is not a registered input of the record")]
    NotAnInput(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Input,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Tanh,
    Sin,
    Cos,
    Square,
    Scale(f64),
    Shift(f64),
    /// n-ary sum; operands live in `Tape::operands[a..a + b]`.
    Sum,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    value: f64,
    a: usize,
    b: usize,
}

/// Append-only computation record.
///
/// Nodes are pushed in evaluation order, so every operand index is smaller
/// than the index of the node that uses it.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
    operands: RefCell<Vec<usize>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape")
            .field("id", &self.id)
            .field("nodes", &self.len())
            .finish()
    }
}

/// A differentiable scalar living on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
    value: f64,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} = {})", self.idx, self.value)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            operands: RefCell::new(Vec::new()),
        }
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: f64, a: usize, b: usize) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        nodes.push(Node { op, value, a, b });
        Var {
            tape: self,
            idx,
            value,
        }
    }

    /// Registers an independent variable.
    pub fn input(&self, value: f64) -> Var<'_> {
        self.push(Op::Input, value, 0, 0)
    }

    pub fn inputs(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.input(v)).collect()
    }

    /// A value that is never differentiated against.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(Op::Const, value, 0, 0)
    }

    /// Sum of any number of terms as a single node. Empty sums are zero.
    pub fn sum<'t>(&'t self, terms: &[Var<'t>]) -> Var<'t> {
        for t in terms {
            debug_assert_eq!(t.tape.id, self.id);
        }
        let value = terms.iter().fold(0.0, |acc, t| acc + t.value);
        let start = {
            let mut ops = self.operands.borrow_mut();
            let start = ops.len();
            ops.extend(terms.iter().map(|t| t.idx));
            start
        };
        self.push(Op::Sum, value, start, terms.len())
    }

    /// Dot product of two equally long slices, recorded as products plus one sum.
    pub fn dot<'t>(&'t self, a: &[Var<'t>], b: &[Var<'t>]) -> Var<'t> {
        assert_eq!(a.len(), b.len(), "dot: length mismatch");
        let terms: Vec<Var<'t>> = a.iter().zip(b).map(|(&x, &y)| x * y).collect();
        self.sum(&terms)
    }

    fn check_inputs(&self, output: &Var<'_>, inputs: &[Var<'_>]) -> Result<(), AutodiffError> {
        if output.tape.id != self.id {
            return Err(AutodiffError::ForeignVariable);
        }
        let nodes = self.nodes.borrow();
        for v in inputs {
            if v.tape.id != self.id {
                return Err(AutodiffError::ForeignVariable);
            }
            if nodes[v.idx].op != Op::Input {
                return Err(AutodiffError::NotAnInput(v.idx));
            }
        }
        Ok(())
    }

    /// Derivatives of `output` with respect to each of `inputs` as plain reals.
    ///
    /// Inputs that do not influence `output` get 0.
    pub fn gradient(&self, output: Var<'_>, inputs: &[Var<'_>]) -> Result<Vec<f64>, AutodiffError> {
        self.check_inputs(&output, inputs)?;
        let adj = self.sweep::<f64>(output.idx, &mut ValueCtx, 1.0);
        Ok(inputs
            .iter()
            .map(|v| adj.get(v.idx).copied().flatten().unwrap_or(0.0))
            .collect())
    }

    /// Same derivatives as [`Tape::gradient`], recorded as new nodes so they
    /// can be differentiated again.
    pub fn gradient_as_nodes<'t>(
        &'t self,
        output: Var<'t>,
        inputs: &[Var<'t>],
    ) -> Result<Vec<Var<'t>>, AutodiffError> {
        self.check_inputs(&output, inputs)?;
        let one = self.constant(1.0);
        let mut ctx = NodeCtx { tape: self, one };
        let adj = self.sweep::<Var<'t>>(output.idx, &mut ctx, one);
        Ok(inputs
            .iter()
            .map(|v| adj.get(v.idx).copied().flatten().unwrap_or_else(|| self.constant(0.0)))
            .collect())
    }

    /// Reverse sweep shared by both gradient flavours. Only nodes up to and
    /// including `root` are visited, so nodes appended during the sweep are
    /// never revisited.
    fn sweep<S: Adjoint>(&self, root: usize, ctx: &mut S::Ctx<'_>, seed: S) -> Vec<Option<S>> {
        let mut adj: Vec<Option<S>> = vec![None; root + 1];
        adj[root] = Some(seed);
        for idx in (0..=root).rev() {
            let Some(g) = adj[idx] else { continue };
            let node = self.nodes.borrow()[idx];
            match node.op {
                Op::Input | Op::Const => {}
                Op::Sum => {
                    let args: Vec<usize> =
                        self.operands.borrow()[node.a..node.a + node.b].to_vec();
                    for a in args {
                        accumulate(&mut adj[a], g, ctx);
                    }
                }
                op => {
                    let a = S::load(ctx, self, node.a);
                    let (pa, pb) = match op {
                        Op::Add => (Partial::One, Some(Partial::One)),
                        Op::Sub => (Partial::One, Some(Partial::MinusOne)),
                        Op::Mul => (Partial::Val(S::load(ctx, self, node.b)), Some(Partial::Val(a))),
                        Op::Div => {
                            let b = S::load(ctx, self, node.b);
                            let out = S::load(ctx, self, idx);
                            let one = S::one(ctx);
                            (Partial::Val(one / b), Some(Partial::Val(-(out / b))))
                        }
                        Op::Neg => (Partial::MinusOne, None),
                        Op::Tanh => {
                            let out = S::load(ctx, self, idx);
                            (Partial::Val(S::one(ctx) - out * out), None)
                        }
                        Op::Sin => (Partial::Val(a.cos_()), None),
                        Op::Cos => (Partial::Val(-a.sin_()), None),
                        Op::Square => (Partial::Val(a + a), None),
                        Op::Scale(c) => (Partial::Val(S::one(ctx).scale_(c)), None),
                        Op::Shift(_) => (Partial::One, None),
                        Op::Input | Op::Const | Op::Sum => unreachable!(),
                    };
                    let ga = pa.apply(g);
                    accumulate(&mut adj[node.a], ga, ctx);
                    if let Some(pb) = pb {
                        let gb = pb.apply(g);
                        accumulate(&mut adj[node.b], gb, ctx);
                    }
                }
            }
        }
        adj
    }
}

fn accumulate<S: Adjoint>(slot: &mut Option<S>, g: S, _ctx: &mut S::Ctx<'_>) {
    *slot = Some(match *slot {
        Some(prev) => prev + g,
        None => g,
    });
}

enum Partial<S> {
    One,
    MinusOne,
    Val(S),
}

impl<S: Adjoint> Partial<S> {
    // Multiplying by ±1 is exact in IEEE arithmetic, so skipping it keeps
    // both sweeps bit-identical.
    fn apply(self, g: S) -> S {
        match self {
            Partial::One => g,
            Partial::MinusOne => -g,
            Partial::Val(p) => g * p,
        }
    }
}

/// Arithmetic needed by the reverse sweep, implemented for `f64` and `Var`.
trait Adjoint:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    type Ctx<'c>;
    fn load(ctx: &Self::Ctx<'_>, tape: &Tape, idx: usize) -> Self;
    fn one(ctx: &Self::Ctx<'_>) -> Self;
    fn sin_(self) -> Self;
    fn cos_(self) -> Self;
    fn scale_(self, c: f64) -> Self;
}

struct ValueCtx;

struct NodeCtx<'t> {
    tape: &'t Tape,
    one: Var<'t>,
}

impl Adjoint for f64 {
    type Ctx<'c> = ValueCtx;
    fn load(_: &ValueCtx, tape: &Tape, idx: usize) -> f64 {
        tape.nodes.borrow()[idx].value
    }
    fn one(_: &ValueCtx) -> f64 {
        1.0
    }
    fn sin_(self) -> f64 {
        self.sin()
    }
    fn cos_(self) -> f64 {
        self.cos()
    }
    fn scale_(self, c: f64) -> f64 {
        self * c
    }
}

impl<'t> Adjoint for Var<'t> {
    type Ctx<'c> = NodeCtx<'t>;
    fn load(ctx: &NodeCtx<'t>, tape: &Tape, idx: usize) -> Var<'t> {
        let value = tape.nodes.borrow()[idx].value;
        Var {
            tape: ctx.tape,
            idx,
            value,
        }
    }
    fn one(ctx: &NodeCtx<'t>) -> Var<'t> {
        ctx.one
    }
    fn sin_(self) -> Var<'t> {
        self.sin()
    }
    fn cos_(self) -> Var<'t> {
        self.cos()
    }
    fn scale_(self, c: f64) -> Var<'t> {
        self.scale(c)
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.value
    }

    /// Position of this node in its record.
    pub fn index(&self) -> usize {
        self.idx
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn unary(self, op: Op, value: f64) -> Var<'t> {
        self.tape.push(op, value, self.idx, 0)
    }

    fn binary(self, other: Var<'t>, op: Op, value: f64) -> Var<'t> {
        debug_assert_eq!(self.tape.id, other.tape.id, "operands from different tapes");
        self.tape.push(op, value, self.idx, other.idx)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh, self.value.tanh())
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(Op::Sin, self.value.sin())
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(Op::Cos, self.value.cos())
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square, self.value * self.value)
    }

    /// Multiplication by a constant.
    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(c), self.value * c)
    }

    /// Addition of a constant.
    pub fn shift(self, c: f64) -> Var<'t> {
        self.unary(Op::Shift(c), self.value + c)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Add, self.value + rhs.value)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Sub, self.value - rhs.value)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Mul, self.value * rhs.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Div, self.value / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg, -self.value)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.shift(rhs)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.shift(-rhs)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.scale(rhs)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs.scale(self)
    }
}

/// Compares engine gradients of `f` at `point` against central differences
/// `(f(x+h) - f(x-h)) / 2h` and returns the worst relative discrepancy.
///
/// The relative error of a coordinate is `|g - fd| / max(|g|, |fd|, 1e-6)`,
/// so coordinates whose true derivative is (numerically) zero are judged on
/// an absolute scale of 1e-6.
pub fn finite_difference_check<F>(f: F, point: &[f64], step: f64) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    assert!(step > 0.0, "finite difference step must be positive");
    let engine = {
        let tape = Tape::new();
        let xs = tape.inputs(point);
        let out = f(&tape, &xs);
        tape.gradient(out, &xs).expect("inputs registered on the same tape")
    };
    let eval = |x: &[f64]| {
        let tape = Tape::new();
        let xs = tape.inputs(x);
        f(&tape, &xs).value()
    };
    let mut worst: f64 = 0.0;
    let mut shifted = point.to_vec();
    for (i, &g) in engine.iter().enumerate() {
        shifted[i] = point[i] + step;
        let hi = eval(&shifted);
        shifted[i] = point[i] - step;
        let lo = eval(&shifted);
        shifted[i] = point[i];
        let fd = (hi - lo) / (2.0 * step);
        worst = worst.max(relative_error(g, fd));
    }
    worst
}

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / a.abs().max(b.abs()).max(1e-6)
}

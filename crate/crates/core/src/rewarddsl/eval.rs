use super::{BinaryOp, CmpOp, Expr, Feature, FeatureVector, UnaryOp, DIV_EPSILON, EXP_ARG_MAX, VALUE_BOUND};

#[inline]
fn bound(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-VALUE_BOUND, VALUE_BOUND)
    }
}

#[inline]
fn guard(d: f64) -> f64 {
    if d.abs() < DIV_EPSILON {
        if d < 0.0 {
            -DIV_EPSILON
        } else {
            DIV_EPSILON
        }
    } else {
        d
    }
}

#[inline]
fn power(x: f64, p: f64) -> f64 {
    let base = if p < 0.0 { guard(x) } else { x };
    if p.fract() == 0.0 && p.abs() <= 64.0 {
        base.powi(p as i32)
    } else {
        base.abs().powf(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Push(f64),
    Load(Feature),
    Unary(UnaryOp),
    Binary(BinaryOp),
    Pow(f64),
    Clip(f64, f64),
    /// Pops otherwise, then, rhs, lhs.
    Select(CmpOp),
}

/// A reward compiled to a postfix program; the hot path during rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardProgram {
    ops: Vec<Op>,
    max_stack: usize,
}

impl RewardProgram {
    pub fn compile(expr: &Expr) -> Self {
        let mut ops = Vec::with_capacity(expr.node_count());
        emit(expr, &mut ops);
        let mut depth = 0usize;
        let mut max_stack = 0usize;
        for op in &ops {
            match op {
                Op::Push(_) | Op::Load(_) => depth += 1,
                Op::Binary(_) => depth -= 1,
                Op::Select(_) => depth -= 3,
                _ => {}
            }
            max_stack = max_stack.max(depth);
        }
        Self { ops, max_stack }
    }

    pub fn eval(&self, f: &FeatureVector) -> f64 {
        let mut stack: Vec<f64> = Vec::with_capacity(self.max_stack);
        for op in &self.ops {
            let v = match *op {
                Op::Push(c) => c,
                Op::Load(feat) => f.get(feat),
                Op::Unary(u) => {
                    let x = stack.pop().unwrap();
                    match u {
                        UnaryOp::Neg => -x,
                        UnaryOp::Abs => x.abs(),
                        UnaryOp::Exp => x.min(EXP_ARG_MAX).exp(),
                        UnaryOp::Tanh => x.tanh(),
                        UnaryOp::Sqrt => x.abs().sqrt(),
                    }
                }
                Op::Binary(b) => {
                    let y = stack.pop().unwrap();
                    let x = stack.pop().unwrap();
                    match b {
                        BinaryOp::Add => x + y,
                        BinaryOp::Sub => x - y,
                        BinaryOp::Mul => x * y,
                        BinaryOp::Div => x / guard(y),
                        BinaryOp::Min => x.min(y),
                        BinaryOp::Max => x.max(y),
                    }
                }
                Op::Pow(p) => power(stack.pop().unwrap(), p),
                Op::Clip(lo, hi) => stack.pop().unwrap().clamp(lo, hi),
                Op::Select(cmp) => {
                    let otherwise = stack.pop().unwrap();
                    let then = stack.pop().unwrap();
                    let rhs = stack.pop().unwrap();
                    let lhs = stack.pop().unwrap();
                    if cmp.holds(lhs, rhs) {
                        then
                    } else {
                        otherwise
                    }
                }
            };
            stack.push(bound(v));
        }
        stack.pop().unwrap_or(0.0)
    }
}

fn emit(e: &Expr, ops: &mut Vec<Op>) {
    match e {
        Expr::Const(c) => ops.push(Op::Push(*c)),
        Expr::Feature(f) => ops.push(Op::Load(*f)),
        Expr::Unary(u, a) => {
            emit(a, ops);
            ops.push(Op::Unary(*u));
        }
        Expr::Binary(b, x, y) => {
            emit(x, ops);
            emit(y, ops);
            ops.push(Op::Binary(*b));
        }
        Expr::Pow(a, p) => {
            emit(a, ops);
            ops.push(Op::Pow(*p));
        }
        Expr::Clip(a, lo, hi) => {
            emit(a, ops);
            ops.push(Op::Clip(*lo, *hi));
        }
        Expr::If { lhs, cmp, rhs, then, otherwise } => {
            emit(lhs, ops);
            emit(rhs, ops);
            emit(then, ops);
            emit(otherwise, ops);
            ops.push(Op::Select(*cmp));
        }
    }
}

/// Evaluates a reward expression on one feature vector.
pub fn evaluate(expr: &Expr, f: &FeatureVector) -> f64 {
    RewardProgram::compile(expr).eval(f)
}

//! Generators and a tree-walking reference interpreter shared by the property
//! and acceptance tests.
#![allow(dead_code)]

use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use stylecraft::rewarddsl::{BinaryOp, CmpOp, Expr, Feature, FeatureVector, UnaryOp};

/// Non-negative literals, including awkward ones for the printer.
pub fn literal() -> impl Strategy<Value = f64> {
    prop_oneof![
        3 => (0u32..100).prop_map(f64::from),
        3 => 0.0f64..100.0,
        1 => Just(0.0),
        1 => 1e-9f64..1e-3,
        1 => 1e3f64..1e9,
        1 => (0.0f64..1.0).prop_map(|x| x / 3.0),
    ]
}

/// Finite literal that may be negative; never negative zero.
fn signed_literal() -> impl Strategy<Value = f64> {
    (literal(), any::<bool>()).prop_map(|(v, neg)| if neg && v != 0.0 { -v } else { v })
}

fn exponent() -> impl Strategy<Value = f64> {
    prop_oneof![
        4 => (-4i32..=6).prop_map(f64::from),
        3 => -3.0f64..3.0,
        1 => Just(0.5),
        1 => 64.5f64..80.0,
        1 => (60i32..=70).prop_map(f64::from),
    ]
    .prop_map(|p| if p == 0.0 { 0.0 } else { p }) // folds -0.0, which prints as "-0"
}

fn feature() -> impl Strategy<Value = Feature> {
    proptest::sample::select(Feature::ALL.to_vec())
}

fn unary_op() -> impl Strategy<Value = UnaryOp> {
    proptest::sample::select(vec![UnaryOp::Neg, UnaryOp::Abs, UnaryOp::Exp, UnaryOp::Tanh, UnaryOp::Sqrt])
}

fn binary_op() -> impl Strategy<Value = BinaryOp> {
    proptest::sample::select(vec![
        BinaryOp::Add,
        BinaryOp::Sub,
        BinaryOp::Mul,
        BinaryOp::Div,
        BinaryOp::Min,
        BinaryOp::Max,
    ])
}

fn cmp_op() -> impl Strategy<Value = CmpOp> {
    proptest::sample::select(vec![CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge])
}

/// Well-formed reward trees of depth at most 7.
pub fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![literal().prop_map(Expr::Const), feature().prop_map(Expr::Feature)];
    leaf.prop_recursive(6, 48, 4, |inner| {
        prop_oneof![
            3 => (unary_op(), inner.clone()).prop_map(|(u, a)| Expr::Unary(u, Box::new(a))),
            5 => (binary_op(), inner.clone(), inner.clone())
                .prop_map(|(b, x, y)| Expr::Binary(b, Box::new(x), Box::new(y))),
            1 => (inner.clone(), exponent()).prop_map(|(a, p)| Expr::Pow(Box::new(a), p)),
            1 => (inner.clone(), signed_literal(), signed_literal()).prop_map(|(a, x, y)| {
                let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
                Expr::Clip(Box::new(a), lo, hi)
            }),
            1 => (inner.clone(), cmp_op(), inner.clone(), inner.clone(), inner)
                .prop_map(|(lhs, cmp, rhs, then, otherwise)| Expr::If {
                    lhs: Box::new(lhs),
                    cmp,
                    rhs: Box::new(rhs),
                    then: Box::new(then),
                    otherwise: Box::new(otherwise),
                }),
        ]
    })
}

fn feature_value() -> impl Strategy<Value = f64> {
    prop_oneof![
        4 => -50.0f64..50.0,
        1 => Just(0.0),
        1 => -1e-6f64..1e-6,
        1 => -1e6f64..1e6,
    ]
}

pub fn features() -> impl Strategy<Value = FeatureVector> {
    proptest::collection::vec(feature_value(), 9).prop_map(|v| {
        let mut f = FeatureVector::from_kinematics(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, false);
        for (feat, x) in Feature::ALL.iter().zip(v) {
            f.set(*feat, x);
        }
        f
    })
}

/// Draws `n` values from `strategy` with a fixed seed.
pub fn sample<S: Strategy>(strategy: &S, n: usize, seed: u8) -> Vec<S::Value> {
    let rng = TestRng::from_seed(RngAlgorithm::ChaCha, &[seed; 32]);
    let mut runner = TestRunner::new_with_rng(Config::default(), rng);
    (0..n).map(|_| strategy.new_tree(&mut runner).expect("strategy generates").current()).collect()
}

const BOUND: f64 = 1e12;
const EPS: f64 = 1e-6;

#[allow(clippy::manual_clamp)]
fn clamp_value(v: f64) -> f64 {
    if v.is_nan() {
        return 0.0;
    }
    if v > BOUND {
        BOUND
    } else if v < -BOUND {
        -BOUND
    } else {
        v
    }
}

fn safe_denominator(d: f64) -> f64 {
    match d {
        d if d.abs() >= EPS => d,
        d if d < 0.0 => -EPS,
        _ => EPS,
    }
}

/// Reference semantics, written as a direct recursion over the tree. Every
/// node's value is sanitized before its parent sees it.
pub fn reference_eval(e: &Expr, f: &FeatureVector) -> f64 {
    let raw = match e {
        Expr::Const(c) => *c,
        Expr::Feature(feat) => f.get(*feat),
        Expr::Unary(op, a) => {
            let x = reference_eval(a, f);
            match op {
                UnaryOp::Neg => -x,
                UnaryOp::Abs => x.abs(),
                UnaryOp::Exp => {
                    if x > 50.0 {
                        50f64.exp()
                    } else {
                        x.exp()
                    }
                }
                UnaryOp::Tanh => x.tanh(),
                UnaryOp::Sqrt => x.abs().sqrt(),
            }
        }
        Expr::Binary(op, a, b) => {
            let x = reference_eval(a, f);
            let y = reference_eval(b, f);
            match op {
                BinaryOp::Add => x + y,
                BinaryOp::Sub => x - y,
                BinaryOp::Mul => x * y,
                BinaryOp::Div => x / safe_denominator(y),
                BinaryOp::Min => {
                    if y < x {
                        y
                    } else {
                        x
                    }
                }
                BinaryOp::Max => {
                    if y > x {
                        y
                    } else {
                        x
                    }
                }
            }
        }
        Expr::Pow(a, p) => {
            let x = reference_eval(a, f);
            let base = if *p < 0.0 { safe_denominator(x) } else { x };
            let integral = p.trunc() == *p && p.abs() <= 64.0;
            if integral {
                base.powi(*p as i32)
            } else {
                base.abs().powf(*p)
            }
        }
        Expr::Clip(a, lo, hi) => {
            let x = reference_eval(a, f);
            if x < *lo {
                *lo
            } else if x > *hi {
                *hi
            } else {
                x
            }
        }
        Expr::If { lhs, cmp, rhs, then, otherwise } => {
            let (l, r) = (reference_eval(lhs, f), reference_eval(rhs, f));
            let t = reference_eval(then, f);
            let o = reference_eval(otherwise, f);
            let holds = match cmp {
                CmpOp::Lt => l < r,
                CmpOp::Le => l <= r,
                CmpOp::Gt => l > r,
                CmpOp::Ge => l >= r,
            };
            if holds {
                t
            } else {
                o
            }
        }
    };
    clamp_value(raw)
}

/// Equal, or within `tol` relative to the larger magnitude.
pub fn close_rel(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

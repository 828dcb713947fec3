use super::{BinaryOp, Expr, UnaryOp};

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_NEG: u8 = 3;
const PREC_ATOM: u8 = 4;

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Binary(BinaryOp::Add | BinaryOp::Sub, _, _) => PREC_ADD,
        Expr::Binary(BinaryOp::Mul | BinaryOp::Div, _, _) => PREC_MUL,
        Expr::Unary(UnaryOp::Neg, _) => PREC_NEG,
        // a negative literal prints with a leading minus
        Expr::Const(c) if *c < 0.0 => PREC_NEG,
        _ => PREC_ATOM,
    }
}

fn num(v: f64) -> String {
    // `Display` for f64 is shortest-round-trip and never uses exponents.
    format!("{v}")
}

/// Renders an expression in the concrete syntax; `parse` inverts it.
pub fn pretty_print(expr: &Expr) -> String {
    let mut out = String::new();
    write_expr(expr, &mut out);
    out
}

fn write_wrapped(e: &Expr, wrap: bool, out: &mut String) {
    if wrap {
        out.push('(');
        write_expr(e, out);
        out.push(')');
    } else {
        write_expr(e, out);
    }
}

fn write_expr(e: &Expr, out: &mut String) {
    match e {
        Expr::Const(c) => out.push_str(&num(*c)),
        Expr::Feature(f) => out.push_str(f.name()),
        Expr::Unary(UnaryOp::Neg, a) => {
            out.push('-');
            write_wrapped(a, prec(a) < PREC_NEG, out);
        }
        Expr::Unary(op, a) => {
            out.push_str(match op {
                UnaryOp::Abs => "abs(",
                UnaryOp::Exp => "exp(",
                UnaryOp::Tanh => "tanh(",
                UnaryOp::Sqrt => "sqrt(",
                UnaryOp::Neg => unreachable!(),
            });
            write_expr(a, out);
            out.push(')');
        }
        Expr::Binary(op @ (BinaryOp::Min | BinaryOp::Max), a, b) => {
            out.push_str(if *op == BinaryOp::Min { "min(" } else { "max(" });
            write_expr(a, out);
            out.push_str(", ");
            write_expr(b, out);
            out.push(')');
        }
        Expr::Binary(op, a, b) => {
            let p = prec(e);
            write_wrapped(a, prec(a) < p, out);
            out.push_str(match op {
                BinaryOp::Add => " + ",
                BinaryOp::Sub => " - ",
                BinaryOp::Mul => " * ",
                _ => " / ",
            });
            write_wrapped(b, prec(b) <= p, out);
        }
        Expr::Pow(a, p) => {
            out.push_str("pow(");
            write_expr(a, out);
            out.push_str(", ");
            out.push_str(&num(*p));
            out.push(')');
        }
        Expr::Clip(a, lo, hi) => {
            out.push_str("clip(");
            write_expr(a, out);
            out.push_str(&format!(", {}, {})", num(*lo), num(*hi)));
        }
        Expr::If { lhs, cmp, rhs, then, otherwise } => {
            out.push_str("if(");
            write_expr(lhs, out);
            out.push(' ');
            out.push_str(cmp.symbol());
            out.push(' ');
            write_expr(rhs, out);
            out.push_str(", ");
            write_expr(then, out);
            out.push_str(", ");
            write_expr(otherwise, out);
            out.push(')');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    #[test]
    fn negated_literal() {
        let e = Expr::Unary(UnaryOp::Neg, Box::new(Expr::Const(1.0)));
        assert_eq!(pretty_print(&e), "-1");
        assert_eq!(parse(&pretty_print(&e)).unwrap(), e);
    }

    #[test]
    fn minimal_parentheses() {
        for src in ["speed - (gap - thw)", "(speed + gap) * thw", "speed / (gap * thw)", "-(speed + 1)", "--speed"] {
            let e = parse(src).unwrap();
            assert_eq!(pretty_print(&e), src);
        }
    }

    #[test]
    fn nested_if_round_trips() {
        let src = "if(speed > 10, if(gap <= 5, -1, 1), clip(thw, -2, 3.5))";
        let e = parse(src).unwrap();
        let printed = pretty_print(&e);
        assert!(printed.starts_with("if("));
        assert_eq!(printed, src);
        assert_eq!(parse(&printed).unwrap(), e);
    }

    #[test]
    fn tiny_and_huge_literals_round_trip() {
        for v in [1e-7, 123456789.123, 1e12, 0.1 + 0.2] {
            let e = Expr::Const(v);
            assert_eq!(parse(&pretty_print(&e)).unwrap(), e);
        }
    }
}

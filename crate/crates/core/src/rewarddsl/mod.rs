//! Style rewards as a small, total expression language over per-step driving
//! features.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := NUMBER | IDENT | IDENT '(' args ')' | '(' expr ')' | '-' factor
//! cond   := expr ('<' | '<=' | '>' | '>=') expr
//! ```
//!
//! Functions: `abs(x)`, `exp(x)`, `tanh(x)`, `sqrt(x)` (of `|x|`), `min(a, b)`,
//! `max(a, b)`, `pow(x, NUM)`, `clip(x, NUM, NUM)`, `if(cond, a, b)`.
//! Every evaluation is finite: division guards tiny denominators, `exp`
//! saturates its argument and every node result is clamped to
//! `±VALUE_BOUND`.

mod eval;
mod parser;
mod print;
pub mod seeds;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::env::{features, reset, step, Action};
use crate::trajdata::Dataset;

pub use eval::{evaluate, RewardProgram};
pub use parser::{parse, parse_source, strip_comments, ParseDiagnostic};
pub use print::pretty_print;

/// Maximum AST depth accepted by the sandbox.
pub const MAX_DEPTH: usize = 24;
/// Maximum AST node count accepted by the sandbox.
pub const MAX_NODES: usize = 512;
/// Denominators smaller than this in magnitude are replaced by ±this.
pub const DIV_EPSILON: f64 = 1e-6;
/// Cap for time headway and time-to-collision features.
pub const FEATURE_CAP: f64 = 1e6;
/// Every intermediate value is clamped to this magnitude.
pub const VALUE_BOUND: f64 = 1e12;
/// `exp` arguments above this are saturated.
pub const EXP_ARG_MAX: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Speed,
    Accel,
    Jerk,
    Gap,
    RelSpeed,
    Thw,
    Ttc,
    LeadSpeed,
    Collided,
}

impl Feature {
    pub const ALL: [Feature; 9] = [
        Feature::Speed,
        Feature::Accel,
        Feature::Jerk,
        Feature::Gap,
        Feature::RelSpeed,
        Feature::Thw,
        Feature::Ttc,
        Feature::LeadSpeed,
        Feature::Collided,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Speed => "speed",
            Feature::Accel => "accel",
            Feature::Jerk => "jerk",
            Feature::Gap => "gap",
            Feature::RelSpeed => "rel_speed",
            Feature::Thw => "thw",
            Feature::Ttc => "ttc",
            Feature::LeadSpeed => "lead_speed",
            Feature::Collided => "collided",
        }
    }

    pub fn from_name(name: &str) -> Option<Feature> {
        Feature::ALL.into_iter().find(|f| f.name() == name)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-step driving features a reward can read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub speed: f64,
    pub accel: f64,
    pub jerk: f64,
    pub gap: f64,
    pub rel_speed: f64,
    pub thw: f64,
    pub ttc: f64,
    pub lead_speed: f64,
    pub collided: f64,
}

impl FeatureVector {
    /// Derives headway and time-to-collision from raw kinematics with the
    /// division guards applied.
    pub fn from_kinematics(
        speed: f64,
        accel: f64,
        jerk: f64,
        gap: f64,
        rel_speed: f64,
        lead_speed: f64,
        collided: bool,
    ) -> Self {
        let free = gap.max(0.0);
        let thw = (free / speed.max(DIV_EPSILON)).min(FEATURE_CAP);
        let ttc = (free / (-rel_speed).max(DIV_EPSILON)).min(FEATURE_CAP);
        Self {
            speed,
            accel,
            jerk,
            gap,
            rel_speed,
            thw,
            ttc,
            lead_speed,
            collided: if collided { 1.0 } else { 0.0 },
        }
    }

    pub fn get(&self, feature: Feature) -> f64 {
        match feature {
            Feature::Speed => self.speed,
            Feature::Accel => self.accel,
            Feature::Jerk => self.jerk,
            Feature::Gap => self.gap,
            Feature::RelSpeed => self.rel_speed,
            Feature::Thw => self.thw,
            Feature::Ttc => self.ttc,
            Feature::LeadSpeed => self.lead_speed,
            Feature::Collided => self.collided,
        }
    }

    pub fn set(&mut self, feature: Feature, value: f64) {
        match feature {
            Feature::Speed => self.speed = value,
            Feature::Accel => self.accel = value,
            Feature::Jerk => self.jerk = value,
            Feature::Gap => self.gap = value,
            Feature::RelSpeed => self.rel_speed = value,
            Feature::Thw => self.thw = value,
            Feature::Ttc => self.ttc = value,
            Feature::LeadSpeed => self.lead_speed = value,
            Feature::Collided => self.collided = value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnaryOp {
    Neg,
    Abs,
    Exp,
    Tanh,
    /// Square root of the absolute value.
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    /// Guarded division.
    Div,
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn holds(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }
}

/// Reward expression tree. Literals produced by the parser are non-negative;
/// negation is always an explicit [`UnaryOp::Neg`] node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Const(f64),
    Feature(Feature),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    /// Power with a literal exponent.
    Pow(Box<Expr>, f64),
    /// Clamp to literal bounds `lo <= hi`.
    Clip(Box<Expr>, f64, f64),
    If {
        lhs: Box<Expr>,
        cmp: CmpOp,
        rhs: Box<Expr>,
        then: Box<Expr>,
        otherwise: Box<Expr>,
    },
}

impl Expr {
    pub fn depth(&self) -> usize {
        1 + self.children().iter().map(|c| c.depth()).max().unwrap_or(0)
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().iter().map(|c| c.node_count()).sum::<usize>()
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Const(_) | Expr::Feature(_) => vec![],
            Expr::Unary(_, a) | Expr::Pow(a, _) | Expr::Clip(a, _, _) => vec![a],
            Expr::Binary(_, a, b) => vec![a, b],
            Expr::If { lhs, rhs, then, otherwise, .. } => vec![lhs, rhs, then, otherwise],
        }
    }

    /// Features referenced anywhere in the tree.
    pub fn features(&self) -> BTreeSet<Feature> {
        let mut out = BTreeSet::new();
        self.collect_features(&mut out);
        out
    }

    fn collect_features(&self, out: &mut BTreeSet<Feature>) {
        if let Expr::Feature(f) = self {
            out.insert(*f);
        }
        for c in self.children() {
            c.collect_features(out);
        }
    }

    /// Checks the sandbox bounds and literal well-formedness.
    pub fn check_bounds(&self) -> Result<(), String> {
        let depth = self.depth();
        if depth > MAX_DEPTH {
            return Err(format!("expression depth {depth} exceeds the limit of {MAX_DEPTH}"));
        }
        let nodes = self.node_count();
        if nodes > MAX_NODES {
            return Err(format!("expression has {nodes} nodes, the limit is {MAX_NODES}"));
        }
        self.check_literals()
    }

    fn check_literals(&self) -> Result<(), String> {
        let ok = |v: f64| v.is_finite() && v.abs() <= VALUE_BOUND;
        match self {
            Expr::Const(c) if !(ok(*c) && *c >= 0.0) => {
                return Err(format!("literal {c} must be finite, non-negative and at most {VALUE_BOUND:e}"))
            }
            Expr::Pow(_, p) if !ok(*p) => return Err(format!("pow exponent {p} is out of range")),
            Expr::Clip(_, lo, hi) if !(ok(*lo) && ok(*hi) && lo <= hi) => {
                return Err(format!("clip bounds [{lo}, {hi}] are invalid"))
            }
            _ => {}
        }
        self.children().into_iter().try_for_each(|c| c.check_literals())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&pretty_print(self))
    }
}

/// Outcome of screening a reward on recorded driving before training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub feature_set: Vec<Feature>,
    pub value_range: (f64, f64),
    pub finite: bool,
    pub samples: usize,
    /// (event id, step index) of the first non-finite value.
    pub offending: Option<(String, usize)>,
}

/// Evaluates `expr` on every recorded transition of `probe`, using the
/// recorded ego accelerations as actions.
pub fn validate_reward(expr: &Expr, probe: &Dataset) -> Result<ValidationReport, String> {
    if probe.is_empty() {
        return Err("probe dataset is empty".into());
    }
    let program = RewardProgram::compile(expr);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut samples = 0;
    for event in &probe.events {
        let accels = event.recorded_accels();
        let mut state = reset(event);
        for (k, &a) in accels.iter().enumerate() {
            let (next, _) = step(&state, Action { accel: a }, event, event.dt).map_err(|e| e.to_string())?;
            let f = features(&state, a, &next, event.dt);
            let v = program.eval(&f);
            if !v.is_finite() {
                return Ok(ValidationReport {
                    feature_set: expr.features().into_iter().collect(),
                    value_range: (lo, hi),
                    finite: false,
                    samples,
                    offending: Some((event.event_id.clone(), k)),
                });
            }
            lo = lo.min(v);
            hi = hi.max(v);
            samples += 1;
            // keep the replay on the recorded trace
            let rec = &event.frames[k + 1];
            state = crate::env::EnvState {
                gap: event.gap(k + 1),
                ego_v: rec.ego_v,
                lead_v: rec.lead_v,
                rel_v: rec.lead_v - rec.ego_v,
                prev_accel: a,
                t_index: k + 1,
                ego_x: rec.ego_x,
                lead_x: rec.lead_x,
            };
        }
    }
    if samples == 0 {
        return Err("probe dataset has no transitions".into());
    }
    Ok(ValidationReport {
        feature_set: expr.features().into_iter().collect(),
        value_range: (lo, hi),
        finite: true,
        samples,
        offending: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajdata::generate_synthetic;

    #[test]
    fn feature_guards() {
        let f = FeatureVector::from_kinematics(0.0, 0.0, 0.0, 20.0, 0.0, 0.0, false);
        assert_eq!(f.thw, FEATURE_CAP);
        assert_eq!(f.ttc, FEATURE_CAP);
        let f = FeatureVector::from_kinematics(10.0, 0.0, 0.0, 20.0, -5.0, 5.0, false);
        assert_eq!(f.thw, 2.0);
        assert_eq!(f.ttc, 4.0);
        let f = FeatureVector::from_kinematics(10.0, 0.0, 0.0, -1.0, -5.0, 5.0, true);
        assert_eq!((f.thw, f.ttc, f.collided), (0.0, 0.0, 1.0));
    }

    #[test]
    fn validate_sign_and_guarded_division() {
        let probe = generate_synthetic(2, 0.1, 6.0, 4).unwrap();
        let rep = validate_reward(&parse("-abs(jerk)").unwrap(), &probe).unwrap();
        assert!(rep.finite);
        assert!(rep.value_range.1 <= 0.0);
        assert_eq!(rep.feature_set, vec![Feature::Jerk]);
        assert_eq!(rep.samples, 2 * 59);

        let rep = validate_reward(&parse("1/0").unwrap(), &probe).unwrap();
        assert!(rep.finite);
        assert_eq!(rep.value_range, (1e6, 1e6));
    }

    #[test]
    fn undeclared_feature_never_reaches_validation() {
        assert!(parse("-abs(wobble)").is_err());
    }

    #[test]
    fn bounds_are_enforced() {
        let mut e = Expr::Feature(Feature::Speed);
        for _ in 0..MAX_DEPTH {
            e = Expr::Unary(UnaryOp::Abs, Box::new(e));
        }
        assert!(e.check_bounds().is_err());
        assert!(Expr::Const(-1.0).check_bounds().is_err());
        assert!(Expr::Clip(Box::new(Expr::Const(1.0)), 2.0, 1.0).check_bounds().is_err());
    }
}

//! The initial style corpus: eight reward programs shipped as text.
//!
//! Three are hand-designed (efficiency, safety and comfort weighted). Three are
//! "data-driven": they penalise deviation from a linear car-following law
//! whose coefficients are a least-squares fit of acceleration on
//! `[1, min(gap, 100), speed, rel_speed]` over synthetic IDM traces of an
//! aggressive, normal and conservative driver population. Two mix both kinds.
//! The fitted files are reproducible with [`render_fitted_sources`].

use serde::{Deserialize, Serialize};

use crate::idm::IdmParams;
use crate::trajdata::{generate, Dataset, DataError, Follower, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedKind {
    Human,
    DataDriven,
    Mixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedReward {
    pub id: &'static str,
    pub kind: SeedKind,
    pub source: &'static str,
}

pub fn seed_corpus() -> Vec<SeedReward> {
    use SeedKind::*;
    vec![
        SeedReward { id: "aggressive", kind: Human, source: include_str!("../../assets/rewards/aggressive.reward") },
        SeedReward { id: "conservative", kind: Human, source: include_str!("../../assets/rewards/conservative.reward") },
        SeedReward { id: "comfort", kind: Human, source: include_str!("../../assets/rewards/comfort.reward") },
        SeedReward { id: "dd_aggressive", kind: DataDriven, source: include_str!("../../assets/rewards/dd_aggressive.reward") },
        SeedReward { id: "dd_normal", kind: DataDriven, source: include_str!("../../assets/rewards/dd_normal.reward") },
        SeedReward { id: "dd_conservative", kind: DataDriven, source: include_str!("../../assets/rewards/dd_conservative.reward") },
        SeedReward { id: "mixed_eco", kind: Mixed, source: include_str!("../../assets/rewards/mixed_eco.reward") },
        SeedReward { id: "mixed_sporty", kind: Mixed, source: include_str!("../../assets/rewards/mixed_sporty.reward") },
    ]
}

pub fn seed(id: &str) -> Option<SeedReward> {
    seed_corpus().into_iter().find(|s| s.id == id)
}

/// IDM populations the data-driven seeds are fitted to.
pub fn style_preset(style: &str) -> Option<IdmParams> {
    let p = |v0, time_headway, a_max, b, s0| IdmParams { v0, time_headway, a_max, b, s0, delta: 4.0 };
    match style {
        "aggressive" => Some(p(34.0, 0.9, 2.0, 2.5, 1.5)),
        "normal" => Some(p(30.0, 1.4, 1.3, 1.8, 2.0)),
        "conservative" => Some(p(26.0, 2.2, 0.9, 1.3, 3.0)),
        _ => None,
    }
}

/// Gap beyond which the fitted law treats the road as free.
pub const LAW_GAP_CAP: f64 = 100.0;

/// Linear acceleration law `c0 + c1*min(gap, 100) + c2*speed + c3*rel_speed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowLaw(pub [f64; 4]);

impl FollowLaw {
    pub fn predict(&self, gap: f64, speed: f64, rel_speed: f64) -> f64 {
        let c = self.0;
        c[0] + c[1] * gap.min(LAW_GAP_CAP) + c[2] * speed + c[3] * rel_speed
    }

    /// DSL text of the law with coefficients rounded to 4 decimals.
    pub fn to_dsl(&self) -> String {
        let c = self.0.map(|v| (v * 1e4).round() / 1e4);
        let term = |v: f64, name: &str| {
            if v < 0.0 {
                format!(" - {}*{name}", -v)
            } else {
                format!(" + {v}*{name}")
            }
        };
        let head = if c[0] < 0.0 { format!("0 - {}", -c[0]) } else { format!("{}", c[0]) };
        format!(
            "{head}{}{}{}",
            term(c[1], "min(gap, 100)"),
            term(c[2], "speed"),
            term(c[3], "rel_speed")
        )
    }
}

/// Ordinary least squares of recorded ego acceleration on the law's regressors.
pub fn fit_follow_law(ds: &Dataset) -> Option<FollowLaw> {
    let mut xtx = [[0.0f64; 4]; 4];
    let mut xty = [0.0f64; 4];
    for e in &ds.events {
        for (k, a) in e.recorded_accels().into_iter().enumerate() {
            let f = &e.frames[k];
            let x = [1.0, e.gap(k).min(LAW_GAP_CAP), f.ego_v, f.lead_v - f.ego_v];
            for i in 0..4 {
                xty[i] += x[i] * a;
                for j in 0..4 {
                    xtx[i][j] += x[i] * x[j];
                }
            }
        }
    }
    solve4(xtx, xty).map(FollowLaw)
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let s: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Synthetic traces of one preset population, used for fitting.
pub fn preset_traces(style: &str) -> Result<Dataset, DataError> {
    let (params, seed) = match style {
        "aggressive" => (style_preset(style), 2101),
        "normal" => (style_preset(style), 2102),
        "conservative" => (style_preset(style), 2103),
        _ => (None, 0),
    };
    let params = params.ok_or_else(|| DataError::InvalidArgument(format!("unknown style preset `{style}`")))?;
    generate(&SyntheticSpec { n_events: 40, dt: 0.1, horizon: 60.0, seed, follower: Follower::Around(params) })
}

/// Regenerates the text of every fitted seed file, as (file stem, contents).
pub fn render_fitted_sources() -> Result<Vec<(String, String)>, DataError> {
    let fit = |style: &str| -> Result<FollowLaw, DataError> {
        fit_follow_law(&preset_traces(style)?)
            .ok_or_else(|| DataError::InvalidArgument("singular least-squares system".into()))
    };
    let aggressive = fit("aggressive")?;
    let normal = fit("normal")?;
    let conservative = fit("conservative")?;

    let dd = |style: &str, law: &FollowLaw, words: &str| {
        format!(
            "# style: dd_{style}\n\
             # data-driven: imitate the linear following law fitted by least squares\n\
             # to synthetic {style} IDM traces\n\
             # keywords: {words}\n\
             -pow(accel - clip({}, -5, 3), 2) - 20 * collided\n",
            law.to_dsl()
        )
    };
    Ok(vec![
        ("dd_aggressive".into(), dd("aggressive", &aggressive, "aggressive assertive quick short headway")),
        ("dd_normal".into(), dd("normal", &normal, "normal typical everyday average driver")),
        ("dd_conservative".into(), dd("conservative", &conservative, "conservative cautious careful long headway")),
        (
            "mixed_eco".into(),
            format!(
                "# style: mixed_eco\n\
                 # mixed: normal fitted following law plus an energy penalty on accel*speed\n\
                 # keywords: eco economical efficient fuel calm relaxed\n\
                 -0.5 * pow(accel - clip({}, -5, 3), 2) - 0.005 * abs(accel) * speed - 20 * collided\n",
                normal.to_dsl()
            ),
        ),
        (
            "mixed_sporty".into(),
            format!(
                "# style: mixed_sporty\n\
                 # mixed: aggressive fitted following law, a speed bonus and a jerk penalty\n\
                 # keywords: sporty dynamic brisk fast smooth confident\n\
                 -0.5 * pow(accel - clip({}, -5, 3), 2) + 0.03 * speed - 0.05 * abs(jerk) - 20 * collided\n",
                aggressive.to_dsl()
            ),
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewarddsl::{evaluate, parse, FeatureVector};

    #[test]
    fn corpus_has_eight_parseable_styles() {
        let corpus = seed_corpus();
        assert_eq!(corpus.len(), 8);
        for s in &corpus {
            parse(s.source).unwrap_or_else(|d| panic!("{}: {d}", s.id));
        }
        assert_eq!(corpus.iter().filter(|s| s.kind == SeedKind::Human).count(), 3);
        assert_eq!(corpus.iter().filter(|s| s.kind == SeedKind::DataDriven).count(), 3);
    }

    #[test]
    fn shipped_fitted_sources_match_a_fresh_fit() {
        for (stem, text) in render_fitted_sources().unwrap() {
            let shipped = seed(&stem).unwrap().source;
            assert_eq!(shipped, text, "asset {stem}.reward is stale");
        }
    }

    /// Rewrites the fitted asset files; run with `--ignored` after changing the generator.
    #[test]
    #[ignore]
    fn regenerate_fitted_assets() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/rewards");
        for (stem, text) in render_fitted_sources().unwrap() {
            std::fs::write(dir.join(format!("{stem}.reward")), text).unwrap();
        }
    }

    #[test]
    fn fitted_laws_order_by_style() {
        let law = |s| fit_follow_law(&preset_traces(s).unwrap()).unwrap();
        let (a, c) = (law("aggressive"), law("conservative"));
        // at equal speed the aggressive law accepts a shorter gap before braking
        let gap_at_zero = |l: &FollowLaw| -(l.0[0] + l.0[2] * 20.0) / l.0[1];
        assert!(l_positive(&a) && l_positive(&c));
        assert!(gap_at_zero(&a) < gap_at_zero(&c));
    }

    fn l_positive(l: &FollowLaw) -> bool {
        l.0[1] > 0.0 && l.0[2] < 0.0 && l.0[3] > 0.0
    }

    #[test]
    fn least_squares_recovers_exact_linear_data() {
        let truth = [0.3, 0.05, -0.1, 0.4];
        let (mut xtx, mut xty) = ([[0.0; 4]; 4], [0.0; 4]);
        for k in 0..50 {
            let x = [1.0, (k % 7) as f64 * 3.0, (k % 11) as f64, (k % 5) as f64 - 2.0];
            let y: f64 = x.iter().zip(truth).map(|(a, b)| a * b).sum();
            for i in 0..4 {
                xty[i] += x[i] * y;
                for j in 0..4 {
                    xtx[i][j] += x[i] * x[j];
                }
            }
        }
        let got = solve4(xtx, xty).unwrap();
        for (g, t) in got.iter().zip(truth) {
            assert!((g - t).abs() < 1e-9);
        }
    }

    fn base() -> FeatureVector {
        FeatureVector::from_kinematics(20.0, 0.5, 0.2, 30.0, -1.0, 19.0, false)
    }

    #[test]
    fn aggressive_is_increasing_in_speed() {
        let e = parse(seed("aggressive").unwrap().source).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=70 {
            let mut f = base();
            f.speed = k as f64 * 0.5;
            let v = evaluate(&e, &f);
            assert!(v > prev, "not increasing at speed {}", f.speed);
            prev = v;
        }
    }

    #[test]
    fn conservative_is_increasing_in_headway() {
        let e = parse(seed("conservative").unwrap().source).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=300 {
            let mut f = base();
            f.thw = k as f64 * 0.01;
            let v = evaluate(&e, &f);
            assert!(v > prev, "not increasing at thw {}", f.thw);
            prev = v;
        }
    }
}

mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stylecraft::env::{rollout_with, Termination, A_MAX, A_MIN};
use stylecraft::idm::{idm_accel, IdmParams};
use stylecraft::llm::{normalize as unit, trigram_embedding, TRIGRAM_DIM};
use stylecraft::rewarddsl::{parse, pretty_print, RewardProgram};
use stylecraft::statseval::{compute_report, normalize, summarize, time_headway, MetricName};
use stylecraft::styledb::{CommandEntry, Provenance, StyleDatabase, StyleRecord, Verdict};
use stylecraft::trajdata::{generate_synthetic, split_train_test, SplitConfig};

use common::{close_rel, expr, features, reference_eval};

proptest! {
    #[test]
    fn print_then_parse_is_identity(e in expr()) {
        let printed = pretty_print(&e);
        let back = parse(&printed).map_err(|d| TestCaseError::fail(format!("{printed}: {d}")))?;
        prop_assert_eq!(back, e);
    }

    #[test]
    fn compiled_program_matches_reference(e in expr(), f in features()) {
        let got = RewardProgram::compile(&e).eval(&f);
        let want = reference_eval(&e, &f);
        prop_assert!(got.is_finite());
        prop_assert!(close_rel(got, want, 1e-12), "{} gave {got}, reference {want}", pretty_print(&e));
    }

    #[test]
    fn parser_is_total_on_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let _ = parse(&String::from_utf8_lossy(&bytes));
    }

    #[test]
    fn parser_is_total_on_near_miss_text(s in "[a-z_0-9 ().,+*/<>=-]{0,48}") {
        if let Ok(e) = parse(&s) {
            prop_assert!(e.check_bounds().is_ok());
        }
    }

    #[test]
    fn embeddings_have_unit_norm(s in "\\PC{0,40}") {
        let v = trigram_embedding(&s);
        prop_assert_eq!(v.len(), TRIGRAM_DIM);
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn idm_never_exceeds_a_max(gap in 0.1f64..200.0, v in 0.0f64..45.0, rel in -20.0f64..20.0) {
        let p = IdmParams::default();
        prop_assert!(idm_accel(&p, gap, v, rel).unwrap() <= p.a_max + 1e-12);
    }

    #[test]
    fn headway_is_spacing_over_speed(gap in 0.0f64..100.0, v in 0.5f64..40.0) {
        let t = time_headway(gap, v);
        prop_assert!(t <= 20.0);
        if gap / v <= 20.0 {
            prop_assert!((t - gap / v).abs() <= 1e-9);
        }
    }

    #[test]
    fn normalization_is_exact_at_the_anchors_and_increasing(
        samples in proptest::collection::vec(-100.0f64..100.0, 10..200),
        x in -200.0f64..200.0,
        dx in 1e-6f64..50.0,
    ) {
        let s = summarize(MetricName::Speed, samples).unwrap();
        prop_assert!(s.p10 <= s.p50 && s.p50 <= s.p90);
        prop_assume!(s.p90 > s.p10);
        prop_assert_eq!(normalize(s.p10, &s).unwrap(), 0.0);
        prop_assert_eq!(normalize(s.p90, &s).unwrap(), 1.0);
        prop_assert!(normalize(x, &s).unwrap() < normalize(x + dx, &s).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn split_is_a_partition(n in 2usize..60, fraction in 0.01f64..0.99, seed in any::<u64>()) {
        let ds = generate_synthetic(n, 0.1, 5.0, seed % 1000).unwrap();
        let cfg = SplitConfig { test_fraction: fraction, rng_seed: seed };
        let (train, test) = split_train_test(&ds, &cfg).unwrap();
        let a: BTreeSet<&str> = train.ids().into_iter().collect();
        let b: BTreeSet<&str> = test.ids().into_iter().collect();
        prop_assert!(a.is_disjoint(&b));
        let all: BTreeSet<&str> = ds.ids().into_iter().collect();
        prop_assert_eq!(a.union(&b).copied().collect::<BTreeSet<_>>(), all);
        let expect = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
        prop_assert_eq!(test.len(), expect);
        let (_, again) = split_train_test(&ds, &cfg).unwrap();
        prop_assert_eq!(test.ids(), again.ids());
    }

    #[test]
    fn generated_events_are_kinematically_plausible(seed in 0u64..10_000) {
        let ds = generate_synthetic(4, 0.1, 15.0, seed).unwrap();
        for e in &ds.events {
            prop_assert_eq!(e.kinematic_violation(5.0), None, "event {}", e.event_id);
        }
    }

    #[test]
    fn rollouts_respect_kinematics(seed in 0u64..10_000, ctl_seed in any::<u64>()) {
        let ds = generate_synthetic(3, 0.1, 12.0, seed).unwrap();
        let reward = RewardProgram::compile(&parse("speed - abs(jerk)").unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(ctl_seed);
        for e in &ds.events {
            let mut ctl = |_: &stylecraft::env::EnvState| rng.random_range(-8.0..6.0);
            let r = rollout_with(&mut ctl, &reward, e).unwrap();
            prop_assert_eq!(r.actions.len(), r.states.len() - 1);
            prop_assert_eq!(r.rewards.len(), r.actions.len());
            for (i, w) in r.states.windows(2).enumerate() {
                let (s, n) = (w[0], w[1]);
                prop_assert!(n.ego_v >= 0.0);
                prop_assert!(n.gap.is_finite());
                prop_assert!((n.rel_v - (n.lead_v - n.ego_v)).abs() <= 1e-9);
                let lead_dx = n.lead_x - s.lead_x;
                let ego_dx = n.ego_x - s.ego_x;
                prop_assert!(((n.gap - s.gap) - (lead_dx - ego_dx)).abs() <= 1e-9);
                prop_assert!((A_MIN..=A_MAX).contains(&r.actions[i].accel));
                // a closed gap ends the episode on that very step
                if n.gap <= 0.0 {
                    prop_assert_eq!(i, r.actions.len() - 1);
                    prop_assert_eq!(r.terminated_by, Termination::Collision);
                }
            }
        }
    }

    #[test]
    fn report_ignores_rollout_order(seed in 0u64..10_000, rot in 1usize..5) {
        let ds = generate_synthetic(5, 0.1, 6.0, seed).unwrap();
        let reward = RewardProgram::compile(&parse("speed").unwrap());
        let mut ros: Vec<_> = ds
            .events
            .iter()
            .map(|e| rollout_with(&mut stylecraft::env::RecordedController::new(e), &reward, e).unwrap())
            .collect();
        let a = compute_report(&ros, "x", "t").unwrap();
        ros.rotate_left(rot);
        ros.swap(0, 1);
        prop_assert_eq!(compute_report(&ros, "x", "t").unwrap(), a);
    }

    #[test]
    fn constant_acceleration_has_zero_jerk(seed in 0u64..10_000, a in -1.0f64..1.0) {
        let ds = generate_synthetic(2, 0.1, 6.0, seed).unwrap();
        let reward = RewardProgram::compile(&parse("speed").unwrap());
        let ros: Vec<_> = ds.events.iter().map(|e| rollout_with(&mut |_: &_| a, &reward, e).unwrap()).collect();
        prop_assume!(ros.iter().any(|r| r.actions.len() >= 2));
        let jerk = compute_report(&ros, "x", "t").unwrap();
        let j = jerk.get(MetricName::Jerk).unwrap();
        prop_assert_eq!((j.p10, j.p90, j.mean), (0.0, 0.0, 0.0));
    }
}

fn record(id: &str, embedding: Vec<f64>, commands: Vec<CommandEntry>) -> StyleRecord {
    StyleRecord {
        id: id.into(),
        reward_source: "speed".into(),
        policy_ref: StyleRecord::policy_ref_for(id),
        stats: None,
        commands,
        embedding,
        provenance: Provenance::Generated,
        retired_by: None,
    }
}

const DIM: usize = 6;

fn small_vec() -> impl Strategy<Value = Vec<f64>> {
    // few distinct directions so ties are common
    proptest::collection::vec(prop_oneof![Just(0.0), Just(1.0), Just(-1.0), Just(0.5)], DIM)
        .prop_map(|v| if v.iter().all(|x| *x == 0.0) { vec![1.0; DIM] } else { v })
        .prop_map(unit)
}

#[derive(Debug, Clone)]
enum DbOp {
    Insert(Vec<f64>),
    Command(usize, Vec<f64>),
    Replace(usize, Vec<f64>, Verdict),
}

fn db_op() -> impl Strategy<Value = DbOp> {
    let verdict = proptest::sample::select(vec![Verdict::ChallengerBetter, Verdict::IncumbentBetter, Verdict::Tie]);
    prop_oneof![
        small_vec().prop_map(DbOp::Insert),
        (any::<usize>(), small_vec()).prop_map(|(i, v)| DbOp::Command(i, v)),
        (any::<usize>(), small_vec(), verdict).prop_map(|(i, v, d)| DbOp::Replace(i, v, d)),
    ]
}

proptest! {
    #[test]
    fn top_k_is_sorted_by_similarity_then_id(
        embs in proptest::collection::vec(small_vec(), 1..12),
        query in small_vec(),
        k in 1usize..15,
    ) {
        let mut db = StyleDatabase::new(DIM);
        for (i, e) in embs.iter().enumerate() {
            db.insert(record(&format!("r{:02}", (i * 7) % 13), e.clone(), vec![]), None).ok();
        }
        let got: Vec<(String, f64)> =
            db.top_k(&query, k).unwrap().into_iter().map(|(r, s)| (r.id.clone(), s)).collect();
        let mut want: Vec<(String, f64)> =
            db.active().map(|r| (r.id.clone(), stylecraft::styledb::cosine(&query, &r.embedding))).collect();
        want.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        want.truncate(k);
        prop_assert_eq!(&got, &want);
        prop_assert_eq!(got, db.top_k(&query, k).unwrap().into_iter().map(|(r, s)| (r.id.clone(), s)).collect::<Vec<_>>());
    }

    #[test]
    fn threshold_one_hits_only_identical_commands(
        stored in proptest::collection::vec(small_vec(), 1..6),
        query in small_vec(),
    ) {
        let mut db = StyleDatabase::new(DIM);
        let commands = stored
            .iter()
            .enumerate()
            .map(|(i, e)| CommandEntry { text: format!("c{i}"), timestamp: 0, embedding: e.clone() })
            .collect();
        db.insert(record("a", stored[0].clone(), commands), None).unwrap();
        let hit = db.fuzzy_lookup(&query, 1.0).unwrap().is_some();
        prop_assert_eq!(hit, stored.contains(&query));
    }

    #[test]
    fn mutations_never_shrink_the_database(ops in proptest::collection::vec(db_op(), 1..30)) {
        let mut db = StyleDatabase::new(DIM);
        let mut next = 0usize;
        let (mut size, mut version) = (0usize, 0u64);
        for op in ops {
            let ids: Vec<String> = db.active().map(|r| r.id.clone()).collect();
            let changed = match op {
                DbOp::Insert(e) => {
                    next += 1;
                    db.insert(record(&format!("n{next}"), e, vec![]), None).is_ok()
                }
                DbOp::Command(i, e) if !ids.is_empty() => db
                    .record_command(&ids[i % ids.len()], CommandEntry { text: "t".into(), timestamp: 1, embedding: e })
                    .is_ok(),
                DbOp::Replace(i, e, verdict) if !ids.is_empty() => {
                    next += 1;
                    let c = record(&format!("n{next}"), e, vec![]);
                    db.replace_if_better(&ids[i % ids.len()], c, None, verdict, false).unwrap();
                    verdict == Verdict::ChallengerBetter
                }
                _ => false,
            };
            prop_assert!(db.total_len() >= size);
            if changed {
                prop_assert!(db.version() > version);
            } else {
                prop_assert_eq!(db.version(), version);
            }
            size = db.total_len();
            version = db.version();
        }
    }
}

#[test]
fn distinct_seeds_give_distinct_datasets() {
    for s in 0..10u64 {
        let a = generate_synthetic(3, 0.1, 5.0, 2 * s).unwrap();
        let b = generate_synthetic(3, 0.1, 5.0, 2 * s + 1).unwrap();
        let differs = a.events.iter().zip(&b.events).any(|(x, y)| x.frames != y.frames);
        assert!(differs, "seeds {} and {} coincide", 2 * s, 2 * s + 1);
    }
}

use std::collections::BTreeSet;

use proptest::prelude::*;
use thinktank_core::analyzer::{
    canonical_key, normalize_reason, smooth_update, stance_to_support, AssessedStance, Stance,
    SupportVector,
};
use thinktank_core::domain::{partition_participants, ParticipantId, Side, SubgroupId};
use thinktank_core::forecast::{finalize, Pick, TOSSUP_BAND};
use thinktank_core::sentiment::{aggregate, region_of, scope_at, Scope, ScopeSchedule};

fn profile() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(0.0f64..1.0).prop_filter_map("nonzero", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-6).then(|| w.map(|x| x / s))
    })
}

fn mean(w: [f64; 4]) -> f64 {
    -2.0 * w[0] - w[1] + w[2] + 2.0 * w[3]
}

proptest! {
    #[test]
    fn partition_is_exhaustive_and_disjoint(n in 2usize..300, target in 2usize..=8, seed: u64) {
        let ids: Vec<ParticipantId> = (0..n).map(|i| format!("p{i}").into()).collect();
        let tanks = partition_participants(&ids, target, seed).unwrap();
        let mut seen = BTreeSet::new();
        for t in &tanks {
            for m in &t.member_ids {
                prop_assert!(seen.insert(m.clone()), "duplicate member");
            }
        }
        prop_assert_eq!(seen.len(), n);
        prop_assert_eq!(tanks.len(), n.div_ceil(target));
        let sizes: Vec<usize> = tanks.iter().map(|t| t.member_ids.len()).collect();
        let (lo, hi) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
        prop_assert!(hi <= target);
        prop_assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn partition_is_seed_deterministic(n in 2usize..60, seed: u64) {
        let ids: Vec<ParticipantId> = (0..n).map(|i| format!("p{i}").into()).collect();
        prop_assert_eq!(
            partition_participants(&ids, 5, seed).unwrap(),
            partition_participants(&ids, 5, seed).unwrap()
        );
    }

    #[test]
    fn canonical_key_ignores_surface_noise(reason in "[a-z]{1,8}( [a-z]{1,8}){0,4}") {
        let noisy = format!("  {}!! ", reason.to_uppercase().replace(' ', "   "));
        prop_assert_eq!(normalize_reason(&noisy), normalize_reason(&reason));
        prop_assert_eq!(canonical_key(Side::A, &[&noisy]), canonical_key(Side::A, &[&reason]));
        prop_assert_ne!(canonical_key(Side::A, &[&reason]), canonical_key(Side::B, &[&reason]));
    }

    #[test]
    fn canonical_key_sees_real_changes(a in "[a-z]{1,10}", b in "[a-z]{1,10}") {
        prop_assume!(a != b);
        prop_assert_ne!(canonical_key(Side::A, &[&a]), canonical_key(Side::A, &[&b]));
        prop_assert_ne!(
            canonical_key(Side::A, &[&a, &b]),
            canonical_key(Side::A, &[&format!("{a} {b}")])
        );
    }

    #[test]
    fn stance_support_is_normalized_and_monotone(c1 in 0.0f64..=1.0, c2 in 0.0f64..=1.0) {
        let (lo, hi) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
        let at = |c: f64, side: Stance| {
            stance_to_support(&AssessedStance {
                participant_id: "p".into(),
                side,
                conviction: c,
                reasons: vec![],
                as_of_seq: 1,
            })
        };
        for side in [Stance::A, Stance::B] {
            let (a, b) = (at(lo, side), at(hi, side));
            prop_assert!((a.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(a.weights().iter().all(|&x| x >= 0.0));
            let (ma, mb) = (a.weighted_mean(), b.weighted_mean());
            match side {
                Stance::A => prop_assert!(mb <= ma + 1e-12),
                _ => prop_assert!(mb >= ma - 1e-12),
            }
        }
        prop_assert_eq!(at(lo, Stance::Neutral).weights(), [0.25; 4]);
    }

    #[test]
    fn smoothing_stays_on_simplex(p in profile(), q in profile(), alpha in 0.01f64..=1.0) {
        let a = SupportVector::normalized(p).unwrap();
        let b = SupportVector::normalized(q).unwrap();
        let s = smooth_update(&a, &b, alpha);
        prop_assert!((s.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let expect = (1.0 - alpha) * a.weighted_mean() + alpha * b.weighted_mean();
        prop_assert!((s.weighted_mean() - expect).abs() < 1e-9);
    }

    #[test]
    fn weighted_mean_linear_bounded_mirrored(p in profile(), q in profile(), t in 0.0f64..=1.0) {
        let a = SupportVector::normalized(p).unwrap();
        let b = SupportVector::normalized(q).unwrap();
        prop_assert!((a.weighted_mean() - mean(p)).abs() < 1e-12);
        prop_assert!((-2.0..=2.0).contains(&a.weighted_mean()));
        prop_assert!((a.mirrored().weighted_mean() + a.weighted_mean()).abs() < 1e-12);
        let mix: [f64; 4] = std::array::from_fn(|i| t * p[i] + (1.0 - t) * q[i]);
        let m = SupportVector::normalized(mix).unwrap();
        let expect = t * a.weighted_mean() + (1.0 - t) * b.weighted_mean();
        prop_assert!((m.weighted_mean() - expect).abs() < 1e-9);
    }

    #[test]
    fn forecast_trichotomy(p in profile()) {
        let f = finalize(p, "q".into()).unwrap();
        let m = f.wcf;
        match f.pick {
            Pick::None => prop_assert!(m.abs() <= TOSSUP_BAND && f.is_tossup),
            Pick::A => prop_assert!(m < -TOSSUP_BAND && f.risk_points.is_some()),
            Pick::B => prop_assert!(m > TOSSUP_BAND && f.risk_points.is_some()),
        }
    }

    #[test]
    fn aggregate_mean_is_average_of_means(ps in prop::collection::vec(profile(), 1..20)) {
        let vs: Vec<SupportVector> = ps.iter().map(|&p| SupportVector::normalized(p).unwrap()).collect();
        let agg = aggregate(&vs, None).unwrap();
        let expect = vs.iter().map(SupportVector::weighted_mean).sum::<f64>() / vs.len() as f64;
        prop_assert!((agg.weighted_mean() - expect).abs() < 1e-9);
    }

    #[test]
    fn scope_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let s = ScopeSchedule::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(scope_at(lo, &s) <= scope_at(hi, &s));
        prop_assert_eq!(scope_at(0.0, &s), Scope::Local);
        prop_assert_eq!(scope_at(1.0, &s), Scope::Global);
    }

    #[test]
    fn region_is_symmetric(n in 1usize..20) {
        let all: Vec<SubgroupId> = (1..=n).map(|i| format!("g{i}").into()).collect();
        for g in &all {
            let r = region_of(g, &all);
            prop_assert!(r.contains(g));
            prop_assert!(r.len() <= 3);
            for h in &r {
                prop_assert!(region_of(h, &all).contains(g));
            }
        }
    }
}

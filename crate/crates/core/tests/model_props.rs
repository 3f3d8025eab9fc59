use capstop_core::model::{classify_case, t_zero};
use capstop_core::{
    Boundary, CapContinuity, CaseLabel, Level, MarketParams, TimeGrid, TwoLevelCap,
};
use proptest::prelude::*;

fn market() -> MarketParams {
    MarketParams::new(0.1, 0.1, 0.3, 1.0).unwrap()
}

proptest! {
    #[test]
    fn case_follows_levels(l1 in 1.05..2.0f64, l2 in 1.05..2.0f64, b in 1.05..2.5f64) {
        prop_assume!((l1 - l2).abs() > 1e-9);
        let cap = TwoLevelCap::new(l1, l2, 1.0, 2.0);
        let case = classify_case(&market(), &cap, Level::Finite(b)).unwrap();
        let want = if l1 > l2 {
            CaseLabel::CaseIII
        } else if l1 < b {
            CaseLabel::CaseI
        } else {
            CaseLabel::CaseII
        };
        prop_assert_eq!(case, want);
    }

    #[test]
    fn t_zero_inverts_discounting(l1 in 1.05..1.5f64, gap in 0.001..0.5f64, r in 0.01..0.2f64) {
        let p = MarketParams::new(r, 0.05, 0.3, 1.0).unwrap();
        let cap = TwoLevelCap::new(l1, l1 + gap, 3.0, 4.0);
        if let Some(t0) = t_zero(&p, &cap) {
            prop_assert!(t0 <= cap.t1);
            let lhs = (-r * (cap.t1 - t0)).exp() * (cap.l2 - 1.0);
            prop_assert!((lhs - (cap.l1 - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_echoes_nodes(n in 2usize..60, seed in 0.0..1.0f64) {
        let g = TimeGrid::new(0.0, 2.0, n).unwrap();
        let vals: Vec<Level> = (0..=n)
            .map(|i| Level::Finite(1.5 - 0.3 * (i as f64 / n as f64) + 0.01 * seed))
            .collect();
        let b = Boundary::new(g, vals.clone()).unwrap();
        for (i, v) in vals.iter().enumerate() {
            prop_assert_eq!(b.at(g.node(i)), *v);
        }
        prop_assert_eq!(g.node(n), 2.0);
    }
}

#[test]
fn knife_edge_is_case_two() {
    let cap = TwoLevelCap::new(1.3, 1.4, 1.0, 2.0);
    assert_eq!(
        classify_case(&market(), &cap, Level::Finite(1.3)).unwrap(),
        CaseLabel::CaseII
    );
    assert_eq!(
        classify_case(&market(), &cap, Level::Infinite).unwrap(),
        CaseLabel::CaseI
    );
}

#[test]
fn decreasing_right_continuous_is_unsupported() {
    let cap = TwoLevelCap::new(1.45, 1.3, 1.0, 2.0).with_continuity(CapContinuity::RightContinuous);
    assert!(classify_case(&market(), &cap, Level::Finite(1.5)).is_err());
}

#[test]
fn cap_level_at_switch() {
    let left = TwoLevelCap::new(1.45, 1.3, 1.0, 2.0);
    assert_eq!(left.level_at(1.0), 1.45);
    assert_eq!(left.level_at(1.0 + 1e-9), 1.3);
    let right = TwoLevelCap::new(1.3, 1.39, 3.0, 4.0);
    assert_eq!(right.level_at(3.0), 1.39);
    assert_eq!(right.level_at(3.0 - 1e-9), 1.3);
}

#[test]
fn t_zero_rising_cap() {
    let cap = TwoLevelCap::new(1.3, 1.39, 3.0, 4.0);
    let t0 = t_zero(&market(), &cap).unwrap();
    assert!((t0 - 0.3764).abs() < 1e-4, "{t0}");
}

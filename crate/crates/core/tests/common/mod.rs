#![allow(dead_code)]

use std::sync::OnceLock;

use capstop_core::twolevel::{self, SolverConfig, TwoLevelSolution};
use capstop_core::{CapContinuity, MarketParams, TwoLevelCap};

pub type Set = (MarketParams, TwoLevelCap);

/// L1 < min(L2, B(T1)), long horizon.
pub fn rising() -> Set {
    (
        MarketParams::new(0.1, 0.1, 0.3, 1.0).unwrap(),
        TwoLevelCap::new(1.3, 1.39, 3.0, 4.0),
    )
}

/// L1 < min(L2, B(T1)), short horizon and high volatility.
pub fn volatile() -> Set {
    (
        MarketParams::new(0.05, 0.05, 0.5, 1.0).unwrap(),
        TwoLevelCap::new(1.28, 1.3, 1.0, 2.0),
    )
}

/// B(T1) <= L1 < L2.
pub fn low_boundary() -> Set {
    (
        MarketParams::new(0.03, 0.05, 0.25, 1.0).unwrap(),
        TwoLevelCap::new(1.46, 1.5, 3.0, 4.0),
    )
}

/// L1 > L2, left-continuous.
pub fn falling() -> Set {
    (
        MarketParams::new(0.03, 0.05, 0.25, 1.0).unwrap(),
        TwoLevelCap::new(1.45, 1.3, 1.0, 2.0).with_continuity(CapContinuity::LeftContinuous),
    )
}

pub fn solve(set: Set) -> TwoLevelSolution {
    twolevel::solve(&set.0, &set.1, &SolverConfig::default()).unwrap()
}

macro_rules! cached {
    ($name:ident, $set:ident) => {
        pub fn $name() -> &'static TwoLevelSolution {
            static CELL: OnceLock<TwoLevelSolution> = OnceLock::new();
            CELL.get_or_init(|| solve($set()))
        }
    };
}

cached!(rising_solved, rising);
cached!(volatile_solved, volatile);
cached!(low_boundary_solved, low_boundary);
cached!(falling_solved, falling);

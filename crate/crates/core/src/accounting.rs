//! FLOP budgets by `C = 6·N·B·S`, with frozen parameters priced by a
//! rational cost factor.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// FLOP in one petaflop/s-day.
pub const PF_DAY: f64 = 8.64e19;

/// Price of a frozen parameter relative to a trainable one, as an exact
/// fraction in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrozenCost {
    num: u64,
    den: u64,
}

impl FrozenCost {
    /// Forward and input-gradient passes only: two thirds.
    pub const REAL: FrozenCost = FrozenCost { num: 2, den: 3 };
    /// Frozen parameters are free.
    pub const IDEAL: FrozenCost = FrozenCost { num: 0, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Self> {
        if den == 0 || num > den {
            return Err(Error::invalid(format!("frozen cost {num}/{den} is not in [0, 1]")));
        }
        let g = gcd(num, den);
        Ok(FrozenCost {
            num: num / g,
            den: den / g,
        })
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Which frozen-parameter price a compute axis uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostScenario {
    Real,
    Ideal,
}

impl CostScenario {
    pub fn factor(self) -> FrozenCost {
        match self {
            CostScenario::Real => FrozenCost::REAL,
            CostScenario::Ideal => FrozenCost::IDEAL,
        }
    }

    /// RunLog column holding this scenario's cumulative compute.
    pub fn column(self) -> &'static str {
        match self {
            CostScenario::Real => "flop_real",
            CostScenario::Ideal => "flop_ideal",
        }
    }
}

impl fmt::Display for CostScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CostScenario::Real => "real",
            CostScenario::Ideal => "ideal",
        })
    }
}

impl FromStr for CostScenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(CostScenario::Real),
            "ideal" => Ok(CostScenario::Ideal),
            _ => Err(Error::invalid(format!(
                "unknown cost scenario {s:?}, expected real or ideal"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BudgetInputs {
    /// Non-embedding trainable parameters.
    pub n_trainable: u64,
    pub n_frozen: u64,
    /// Tokens per update: sequences × context.
    pub batch_tokens: u64,
    pub steps: u64,
    pub frozen_cost: FrozenCost,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub flop: u128,
    pub pf_days: f64,
}

/// `6·N_t·B·S + 6·f·N_f·B·S`. The frozen term is exact whenever the
/// factor's denominator divides `6·num·N_f·B·S` (always, for 2/3 and 0);
/// otherwise it is rounded down.
pub fn compute_budget(inp: &BudgetInputs) -> Budget {
    let bs = inp.batch_tokens as u128 * inp.steps as u128;
    let trainable = 6 * inp.n_trainable as u128 * bs;
    let f = inp.frozen_cost;
    let frozen = 6 * f.num as u128 * inp.n_frozen as u128 * bs / f.den as u128;
    let flop = trainable + frozen;
    Budget {
        flop,
        pf_days: pf_days(flop as f64),
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn pf_days(flop: f64) -> f64 {
    flop / PF_DAY
}

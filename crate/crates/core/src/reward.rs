//! Counting accuracy plus acquisition savings.
//!
//! `R = -||v_ref - v_hat||_1 + lambda * (1 - |a|_1 / S)`

use serde::{Deserialize, Serialize};

use crate::counts::ClassCounts;
use crate::error::{Error, Result};
use crate::policy::ActionVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_acc: f64,
    pub r_cost: f64,
    pub total: f64,
}

pub fn reward(
    v_hat: &ClassCounts,
    v_ref: &ClassCounts,
    a: &ActionVector,
    lambda: f64,
) -> Result<RewardBreakdown> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if v_hat.len() != v_ref.len() {
        return Err(Error::Shape {
            what: "count vector",
            expected: v_ref.len(),
            got: v_hat.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Shape {
            what: "action vector",
            expected: 1,
            got: 0,
        });
    }
    let r_acc = -(v_ref.l1_distance(v_hat) as f64);
    let r_cost = lambda * (1.0 - a.acquired() as f64 / a.len() as f64);
    Ok(RewardBreakdown {
        r_acc,
        r_cost,
        total: r_acc + r_cost,
    })
}

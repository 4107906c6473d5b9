//! Rule-based state transitions shared by the engine and its tests.

use serde::{Deserialize, Serialize};

use crate::config::ExitConfig;
use crate::domain::{BuyerAction, BuyerState, DatasetListing};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    /// The agent chose `exit_market`.
    Voluntary,
    /// Analyses per completed purchase exceeded the configured ratio.
    AnalyzeBuyRatio,
    /// Too many consecutive `plan` actions.
    PlanStreak,
    /// Every owned listing went unsold for the configured number of steps.
    UnsoldListings,
}

/// Updates a buyer's counters for an applied action. Purchases are counted
/// when they complete, not here.
pub fn apply_buyer_counters(buyer: &mut BuyerState, action: &BuyerAction) {
    match action {
        BuyerAction::Plan { text } => {
            buyer.plan_text = text.clone();
            buyer.consecutive_plan_count += 1;
        }
        BuyerAction::Analyze => {
            buyer.analyze_count += 1;
            buyer.consecutive_plan_count = 0;
        }
        _ => buyer.consecutive_plan_count = 0,
    }
}

/// `analyze/buy > ratio` (with at least one purchase) or `plan streak > limit`.
pub fn buyer_forced_exit(analyze_count: u32, buy_count: u32, plan_streak: u32, cfg: &ExitConfig) -> Option<ExitReason> {
    if buy_count >= 1 && f64::from(analyze_count) > cfg.buyer_analyze_buy_ratio * f64::from(buy_count) {
        Some(ExitReason::AnalyzeBuyRatio)
    } else if plan_streak > cfg.buyer_plan_streak {
        Some(ExitReason::PlanStreak)
    } else {
        None
    }
}

/// True when the seller has active listings and all of them breached the
/// unsold threshold.
pub fn seller_forced_exit<'a>(listings: impl IntoIterator<Item = &'a DatasetListing>, cfg: &ExitConfig) -> bool {
    let mut any = false;
    for l in listings {
        if !l.active {
            continue;
        }
        any = true;
        if l.consecutive_unsold_steps < cfg.seller_unsold_steps {
            return false;
        }
    }
    any
}

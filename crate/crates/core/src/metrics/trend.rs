//! Time-resolved views: field trend matrix and smoothed action shares.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::source::TradeLog;
use crate::config::TrendWeighting;
use crate::engine::Role;

pub const OTHER_FIELD: &str = "other";

pub const SELLER_ACTIONS: [&str; 5] = ["update_data", "change_price", "provide_data", "do_nothing", "exit_market"];
pub const BUYER_ACTIONS: [&str; 6] = ["plan", "search", "buy", "analyze", "do_nothing", "exit_market"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendMatrix {
    pub weighting: TrendWeighting,
    pub fields: Vec<String>,
    /// `cells[field][step]`.
    pub cells: Vec<Vec<f64>>,
}

/// Per-step field shares. With volume weighting each step's shares are
/// scaled by its volume over the busiest step's volume, so
/// `cell = count / max_s total_s`.
///
/// Rows are every known field in name order, then [`OTHER_FIELD`] when some
/// purchased dataset has no known field.
pub fn trend_matrix(log: &TradeLog, weighting: TrendWeighting) -> TrendMatrix {
    let mut fields: BTreeSet<&str> = log.dataset_fields.values().map(String::as_str).collect();
    fields.remove(OTHER_FIELD);
    let mut fields: Vec<String> = fields.into_iter().map(str::to_string).collect();
    let index: BTreeMap<String, usize> = fields.iter().cloned().enumerate().map(|(i, f)| (f, i)).collect();

    let steps = log.steps as usize;
    let mut counts = vec![vec![0u64; steps]; fields.len()];
    let mut other = vec![0u64; steps];
    let mut unknown = 0usize;
    for t in &log.transactions {
        let step = t.step as usize;
        match log.dataset_fields.get(&t.dataset_id).and_then(|f| index.get(f)) {
            Some(&row) => counts[row][step] += 1,
            None => {
                unknown += 1;
                other[step] += 1;
            }
        }
    }
    if unknown > 0 {
        if !log.dataset_fields.is_empty() {
            log::warn!("{unknown} transactions have no known field; counted under \"{OTHER_FIELD}\"");
        }
        fields.push(OTHER_FIELD.to_string());
        counts.push(other);
    }

    let totals: Vec<u64> = (0..steps).map(|s| counts.iter().map(|row| row[s]).sum()).collect();
    let peak = totals.iter().copied().max().unwrap_or(0);
    let cells = counts
        .iter()
        .map(|row| {
            row.iter()
                .zip(&totals)
                .map(|(&c, &total)| {
                    if total == 0 {
                        return 0.0;
                    }
                    match weighting {
                        TrendWeighting::Volume => c as f64 / peak as f64,
                        TrendWeighting::Share => c as f64 / total as f64,
                    }
                })
                .collect()
        })
        .collect();
    TrendMatrix {
        weighting,
        fields,
        cells,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleShares {
    pub actions: Vec<String>,
    /// `shares[action][step]`; `None` where the role took no action.
    pub shares: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRatios {
    pub window: usize,
    pub seller: RoleShares,
    pub buyer: RoleShares,
}

pub fn action_ratio_series(log: &TradeLog, window: usize) -> ActionRatios {
    ActionRatios {
        window,
        seller: role_shares(log, Role::Seller, &SELLER_ACTIONS, window),
        buyer: role_shares(log, Role::Buyer, &BUYER_ACTIONS, window),
    }
}

fn role_shares(log: &TradeLog, role: Role, actions: &[&str], window: usize) -> RoleShares {
    let steps = log.steps as usize;
    let mut counts = vec![vec![0u64; steps]; actions.len()];
    let mut totals = vec![0u64; steps];
    for a in log.actions.iter().filter(|a| a.role == role) {
        if let Some(i) = actions.iter().position(|&n| n == a.action) {
            counts[i][a.step as usize] += 1;
            totals[a.step as usize] += 1;
        }
    }
    let half = window.max(1) / 2;
    let shares = counts
        .iter()
        .map(|row| {
            let raw: Vec<Option<f64>> = row
                .iter()
                .zip(&totals)
                .map(|(&c, &t)| (t > 0).then(|| c as f64 / t as f64))
                .collect();
            moving_average(&raw, half)
        })
        .collect();
    RoleShares {
        actions: actions.iter().map(|s| s.to_string()).collect(),
        shares,
    }
}

/// Centered moving average over `[t - half, t + half]`, skipping gaps and
/// positions outside the series. Gaps stay gaps.
pub fn moving_average(raw: &[Option<f64>], half: usize) -> Vec<Option<f64>> {
    (0..raw.len())
        .map(|t| {
            raw[t]?;
            let lo = t.saturating_sub(half);
            let hi = (t + half).min(raw.len() - 1);
            let (sum, n) = raw[lo..=hi]
                .iter()
                .flatten()
                .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
            Some(sum / n as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::source::{ActionRecord, TradeRecord};

    fn tx(step: u32, dataset: &str) -> TradeRecord {
        TradeRecord {
            step,
            buyer_id: "b0".into(),
            seller_id: "s0".into(),
            dataset_id: dataset.into(),
            version: 1,
            price: 1.0,
        }
    }

    fn with_fields(trades: Vec<TradeRecord>, fields: &[(&str, &str)]) -> TradeLog {
        let mut log = TradeLog::from_trades(trades);
        log.dataset_fields = fields.iter().map(|(d, f)| (d.to_string(), f.to_string())).collect();
        log
    }

    #[test]
    fn single_field_uniform_volume() {
        let log = with_fields(
            (0..4).flat_map(|s| [tx(s, "d0"), tx(s, "d0")]).collect(),
            &[("d0", "sports"), ("d1", "finance")],
        );
        let m = trend_matrix(&log, TrendWeighting::Volume);
        assert_eq!(m.fields, vec!["finance", "sports"]);
        assert_eq!(m.cells[1], vec![1.0; 4]);
        assert_eq!(m.cells[0], vec![0.0; 4]);
    }

    #[test]
    fn empty_step_and_peak_split() {
        let mut trades = vec![tx(0, "a"), tx(0, "a"), tx(0, "a"), tx(0, "b"), tx(2, "a"), tx(2, "b")];
        trades.sort_by_key(|t| t.step);
        let log = with_fields(trades, &[("a", "f1"), ("b", "f2")]);
        let m = trend_matrix(&log, TrendWeighting::Volume);
        assert_eq!(m.cells[0][0], 0.75);
        assert_eq!(m.cells[1][0], 0.25);
        assert_eq!((m.cells[0][1], m.cells[1][1]), (0.0, 0.0));
        assert_eq!((m.cells[0][2], m.cells[1][2]), (0.25, 0.25));
        let s = trend_matrix(&log, TrendWeighting::Share);
        assert_eq!((s.cells[0][2], s.cells[1][2]), (0.5, 0.5));
    }

    #[test]
    fn unknown_datasets_go_to_other() {
        let log = with_fields(vec![tx(0, "a"), tx(0, "zz")], &[("a", "f1")]);
        let m = trend_matrix(&log, TrendWeighting::Volume);
        assert_eq!(m.fields, vec!["f1", OTHER_FIELD]);
        assert_eq!(m.cells[1][0], 0.5);
    }

    #[test]
    fn peak_column_sums_to_one() {
        let trades: Vec<_> = (0..37u32).map(|i| tx(i % 5, ["a", "b", "c"][(i % 3) as usize])).collect();
        let mut trades = trades;
        trades.sort_by_key(|t| t.step);
        let log = with_fields(trades, &[("a", "x"), ("b", "y"), ("c", "z")]);
        let vols = log.step_volumes();
        let peak = vols.iter().enumerate().max_by_key(|(_, v)| **v).unwrap().0;
        let m = trend_matrix(&log, TrendWeighting::Volume);
        assert_eq!(m.cells.iter().map(|r| r[peak]).sum::<f64>(), 1.0);
    }

    fn act(step: u32, role: Role, action: &str) -> ActionRecord {
        ActionRecord {
            step,
            role,
            action: action.into(),
        }
    }

    #[test]
    fn sellers_idle_throughout() {
        let mut log = TradeLog {
            steps: 5,
            ..Default::default()
        };
        log.actions = (0..5).flat_map(|s| [act(s, Role::Seller, "do_nothing"), act(s, Role::Seller, "do_nothing")]).collect();
        let r = action_ratio_series(&log, 3);
        let idle = r.seller.actions.iter().position(|a| a == "do_nothing").unwrap();
        assert_eq!(r.seller.shares[idle], vec![Some(1.0); 5]);
        assert!(r.buyer.shares.iter().all(|row| row.iter().all(Option::is_none)));
    }

    #[test]
    fn single_step_matches_raw_shares() {
        let mut log = TradeLog {
            steps: 1,
            ..Default::default()
        };
        log.actions = vec![
            act(0, Role::Buyer, "plan"),
            act(0, Role::Buyer, "search"),
            act(0, Role::Buyer, "search"),
            act(0, Role::Buyer, "buy"),
        ];
        let r = action_ratio_series(&log, 3);
        let col: Vec<f64> = r.buyer.shares.iter().map(|row| row[0].unwrap()).collect();
        assert_eq!(col, vec![0.25, 0.5, 0.25, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn smoothing_uses_available_neighbours_and_keeps_gaps() {
        let raw = [Some(1.0), Some(0.0), None, Some(0.5), Some(1.0)];
        let ma = moving_average(&raw, 1);
        assert_eq!(ma, vec![Some(0.5), Some(0.5), None, Some(0.75), Some(0.75)]);
    }

    #[test]
    fn smoothed_shares_sum_to_one() {
        let mut log = TradeLog {
            steps: 8,
            ..Default::default()
        };
        for s in 0..8u32 {
            if s == 3 {
                continue;
            }
            for k in 0..=(s % 4) {
                log.actions.push(act(s, Role::Buyer, BUYER_ACTIONS[((s + k) % 6) as usize]));
            }
        }
        let r = action_ratio_series(&log, 3);
        for step in 0..8 {
            let col: Vec<Option<f64>> = r.buyer.shares.iter().map(|row| row[step]).collect();
            if step == 3 {
                assert!(col.iter().all(Option::is_none));
            } else {
                let sum: f64 = col.iter().map(|v| v.unwrap()).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }
}

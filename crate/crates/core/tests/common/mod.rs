//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use datamarket_core::config::ExitConfig;
use datamarket_core::domain::Money;
use datamarket_core::engine::{Event, ExitReason, Role};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TABLE: usize = 1_000_000;

/// Inverse-CDF samples of `P(X = x) ∝ x^-alpha` for `x ≥ 1`, from a
/// cumulative table of direct power sums with a continuous tail beyond it.
pub fn power_law_samples(alpha: f64, n: usize, seed: u64) -> Vec<u64> {
    let mut cum = Vec::with_capacity(TABLE);
    let mut acc = 0.0;
    for x in 1..=TABLE {
        acc += (x as f64).powf(-alpha);
        cum.push(acc);
    }
    let edge = TABLE as f64 + 0.5;
    let tail = edge.powf(1.0 - alpha) / (alpha - 1.0);
    let total = acc + tail;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            if u <= acc {
                cum.partition_point(|&c| c < u) as u64 + 1
            } else {
                let r = u - acc;
                let y = (edge.powf(1.0 - alpha) - r * (alpha - 1.0)).powf(1.0 / (1.0 - alpha));
                y.round().max(TABLE as f64 + 1.0) as u64
            }
        })
        .collect()
}

/// Discrete power-law MLE for fixed `x_min`, found by bisection on the
/// score `-ζ'(α, x_min)/ζ(α, x_min) = mean ln x`, with both sums taken
/// directly up to a cutoff plus integral tails.
pub fn reference_discrete_alpha(samples: &[u64], x_min: u64) -> f64 {
    let tail: Vec<f64> = samples.iter().filter(|&&x| x >= x_min).map(|&x| x as f64).collect();
    let mean_log = tail.iter().map(|x| x.ln()).sum::<f64>() / tail.len() as f64;
    let terms = 200_000u64;
    let score = |a: f64| {
        let (mut z, mut dz) = (0.0, 0.0);
        for k in (x_min..x_min + terms).rev() {
            let k = k as f64;
            let p = k.powf(-a);
            z += p;
            dz += k.ln() * p;
        }
        let e = (x_min + terms) as f64 - 0.5;
        let m = a - 1.0;
        z += e.powf(-m) / m;
        dz += e.powf(-m) * (e.ln() / m + 1.0 / (m * m));
        dz / z - mean_log
    };
    // The score decreases in α.
    let (mut lo, mut hi) = (1.01, 8.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if score(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Lag-1 autocorrelation by the textbook double pass.
pub fn brute_autocorr(x: &[f64]) -> f64 {
    let mut mean = 0.0;
    for v in x {
        mean += v;
    }
    mean /= x.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for t in 0..x.len() {
        den += (x[t] - mean) * (x[t] - mean);
        if t + 1 < x.len() {
            num += (x[t] - mean) * (x[t + 1] - mean);
        }
    }
    num / den
}

/// First step at which a buyer history breaches a forced-exit rule, where
/// `buys_before[t]` is the number of purchases completed before step `t`.
pub fn first_buyer_breach(actions: &[&str], buys_before: &[u32], cfg: &ExitConfig) -> Option<(usize, ExitReason)> {
    let mut analyze = 0u32;
    let mut streak = 0u32;
    for (t, a) in actions.iter().enumerate() {
        match *a {
            "plan" => streak += 1,
            "analyze" => {
                analyze += 1;
                streak = 0;
            }
            _ => streak = 0,
        }
        let buys = buys_before[t];
        if buys >= 1 && f64::from(analyze) > cfg.buyer_analyze_buy_ratio * f64::from(buys) {
            return Some((t, ExitReason::AnalyzeBuyRatio));
        }
        if streak > cfg.buyer_plan_streak {
            return Some((t, ExitReason::PlanStreak));
        }
    }
    None
}

/// Replays an event log and checks that every buyer force-exit happens at
/// exactly the first action where a rule is breached. Returns the number of
/// buyer histories checked.
pub fn check_buyer_exits(events: &[Event], cfg: &ExitConfig) -> Result<usize, String> {
    let mut actions: BTreeMap<String, Vec<(u32, String)>> = BTreeMap::new();
    let mut purchases: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    let mut exits: BTreeMap<String, (u32, ExitReason)> = BTreeMap::new();
    for e in events {
        match e {
            Event::BuyerAction { step, agent, action, .. } => {
                actions.entry(agent.to_string()).or_default().push((*step, action.name().to_string()));
            }
            Event::Transaction { step, agent, .. } => purchases.entry(agent.to_string()).or_default().push(*step),
            Event::Exit {
                step,
                role: Role::Buyer,
                agent,
                reason,
            } if exits.insert(agent.clone(), (*step, *reason)).is_some() => {
                return Err(format!("{agent} exited twice"));
            }
            _ => {}
        }
    }
    for (buyer, hist) in &actions {
        let names: Vec<&str> = hist.iter().map(|(_, a)| a.as_str()).collect();
        let bought = purchases.get(buyer).cloned().unwrap_or_default();
        let before: Vec<u32> = hist
            .iter()
            .map(|(s, _)| bought.iter().filter(|&&p| p < *s).count() as u32)
            .collect();
        let breach = first_buyer_breach(&names, &before, cfg);
        let voluntary = names.iter().position(|a| *a == "exit_market");
        let expected = match (breach, voluntary) {
            (Some((t, _)), Some(v)) if v < t => Some((hist[v].0, ExitReason::Voluntary, v)),
            (Some((t, r)), _) => Some((hist[t].0, r, t)),
            (None, Some(v)) => Some((hist[v].0, ExitReason::Voluntary, v)),
            (None, None) => None,
        };
        match (expected, exits.get(buyer)) {
            (None, None) => {}
            (Some((step, reason, idx)), Some(&(s, r))) => {
                if (step, reason) != (s, r) {
                    return Err(format!("{buyer}: expected exit {reason:?} at {step}, got {r:?} at {s}"));
                }
                if idx + 1 != hist.len() {
                    return Err(format!("{buyer}: acted after exiting at step {step}"));
                }
            }
            (Some((step, reason, _)), None) => {
                return Err(format!("{buyer}: missed {reason:?} exit at step {step}"));
            }
            (None, Some(&(s, r))) => return Err(format!("{buyer}: unexpected {r:?} exit at step {s}")),
        }
    }
    Ok(actions.len())
}

/// Replays an event log and checks that sellers are forced out exactly at
/// the first seller phase in which all their listings have gone unsold for
/// the threshold number of steps. Returns the number of (seller, step)
/// checks made.
pub fn check_seller_exits(events: &[Event], cfg: &ExitConfig) -> Result<usize, String> {
    let mut listings: BTreeMap<String, Vec<(String, u32)>> = BTreeMap::new();
    let mut sales: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    let mut entered: BTreeMap<String, u32> = BTreeMap::new();
    let mut forced: BTreeMap<String, u32> = BTreeMap::new();
    let mut gone: BTreeMap<String, u32> = BTreeMap::new();
    let mut last_step = 0;
    for e in events {
        last_step = last_step.max(e.step());
        match e {
            Event::SellerEntered { step, agent } => {
                entered.insert(agent.to_string(), *step);
            }
            Event::ListingCreated {
                step, agent, dataset_id, ..
            } => listings
                .entry(agent.to_string())
                .or_default()
                .push((dataset_id.to_string(), *step)),
            Event::Transaction { step, dataset_id, .. } => sales.entry(dataset_id.to_string()).or_default().push(*step),
            Event::Exit {
                step,
                role: Role::Seller,
                agent,
                reason,
            } => {
                gone.insert(agent.clone(), *step);
                if *reason == ExitReason::UnsoldListings {
                    forced.insert(agent.clone(), *step);
                }
            }
            _ => {}
        }
    }
    let mut checks = 0;
    for (seller, &from) in &entered {
        let until = gone.get(seller).copied().unwrap_or(last_step);
        let owned = listings.get(seller).cloned().unwrap_or_default();
        for t in from.max(1)..=until {
            // Unsold run lengths as seen at the start of step t's seller phase;
            // listings created during step t do not exist yet.
            let runs: Vec<u32> = owned
                .iter()
                .filter(|(_, created)| *created < t)
                .map(|(ds, created)| {
                    let last = sales.get(ds).and_then(|s| s.iter().filter(|&&x| x < t).max().copied());
                    let since = last.map_or(*created, |s| (s + 1).max(*created));
                    t - since
                })
                .collect();
            let breach = !runs.is_empty() && runs.iter().all(|&r| r >= cfg.seller_unsold_steps);
            checks += 1;
            match (breach, forced.get(seller)) {
                (true, Some(&s)) if s == t => break,
                (true, _) => return Err(format!("{seller}: expected forced exit at step {t}")),
                (false, Some(&s)) if s == t => return Err(format!("{seller}: forced out early at step {t}")),
                _ => {}
            }
        }
        if let Some(&s) = forced.get(seller) {
            if s > until {
                return Err(format!("{seller}: forced exit at {s} after leaving"));
            }
        }
    }
    Ok(checks)
}

/// Structural checks over one run's event log.
pub fn check_log_invariants(events: &[Event]) -> Result<(), String> {
    let mut buyer_in: BTreeMap<String, u32> = BTreeMap::new();
    let mut seller_in: BTreeMap<String, u32> = BTreeMap::new();
    let mut exited: BTreeMap<String, u32> = BTreeMap::new();
    let mut removed: BTreeMap<String, u32> = BTreeMap::new();
    let mut version: BTreeMap<String, u32> = BTreeMap::new();
    let mut budget: BTreeMap<String, Money> = BTreeMap::new();
    let mut acted: BTreeSet<(String, u32, Role)> = BTreeSet::new();
    for e in events {
        match e {
            Event::BuyerEntered { step, agent, budget: b, .. } => {
                buyer_in.insert(agent.to_string(), *step);
                budget.insert(agent.to_string(), *b);
            }
            Event::SellerEntered { step, agent } => {
                seller_in.insert(agent.to_string(), *step);
            }
            Event::ListingCreated { dataset_id, .. } => {
                if version.insert(dataset_id.to_string(), 1).is_some() {
                    return Err(format!("{dataset_id} created twice"));
                }
            }
            Event::ListingUpdated {
                dataset_id, version: v, ..
            } => {
                let cur = version.get_mut(&dataset_id.to_string()).ok_or("update of unknown listing")?;
                if *v != *cur + 1 {
                    return Err(format!("{dataset_id}: version jumped from {cur} to {v}"));
                }
                *cur = *v;
            }
            Event::ListingRemoved { step, dataset_id } => {
                removed.insert(dataset_id.to_string(), *step);
            }
            Event::SellerAction { step, agent, .. } => {
                let id = agent.to_string();
                if !seller_in.contains_key(&id) || exited.contains_key(&id) {
                    return Err(format!("inactive seller {id} acted at step {step}"));
                }
                if !acted.insert((id.clone(), *step, Role::Seller)) {
                    return Err(format!("{id} acted twice at step {step}"));
                }
            }
            Event::BuyerAction { step, agent, .. } => {
                let id = agent.to_string();
                if !buyer_in.contains_key(&id) || exited.contains_key(&id) {
                    return Err(format!("inactive buyer {id} acted at step {step}"));
                }
                if !acted.insert((id.clone(), *step, Role::Buyer)) {
                    return Err(format!("{id} acted twice at step {step}"));
                }
            }
            Event::Transaction {
                step,
                agent,
                dataset_id,
                version: v,
                price,
                ..
            } => {
                let ds = dataset_id.to_string();
                if removed.contains_key(&ds) {
                    return Err(format!("transaction on removed listing {ds} at step {step}"));
                }
                if version.get(&ds) != Some(v) {
                    return Err(format!("{ds}: sold version {v}, current {:?}", version.get(&ds)));
                }
                let b = budget.get_mut(&agent.to_string()).ok_or("unknown buyer")?;
                *b -= *price;
                if *b < Money::ZERO {
                    return Err(format!("{agent} budget negative at step {step}"));
                }
            }
            Event::Exit { step, agent, .. } => {
                exited.insert(agent.clone(), *step);
            }
            _ => {}
        }
    }
    Ok(())
}

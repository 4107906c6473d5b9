//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fmt::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use datamarket_core::config::{EntryConfig, ExitConfig};
use datamarket_core::domain::{
    BuyerAction, BuyerId, BuyerState, DatasetId, ListingSnapshot, Money, SellerId, UpdateFrequency,
};
use datamarket_core::engine::rules::{apply_buyer_counters, buyer_forced_exit};
use datamarket_core::engine::{Event, EventSink, FileSink, MemorySink, Simulation, TRANSACTIONS_FILE};
use datamarket_core::entry::entry_rate;
use datamarket_core::metrics::{autocorr_lag1, fit_power_law, FitOptions, MetricsReport, TradeLog};
use datamarket_core::policies::PolicySet;
use datamarket_core::vector_store::{EmbeddingVector, VectorStore};
use datamarket_core::SimConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RUN_TIME_LIMIT: Duration = Duration::from_secs(60);
const ENTRY_TOLERANCE: f64 = 1e-9;
/// 50 / (1 + e^3) to 40 significant digits.
const ENTRY_AT_ZERO: f64 = 2.371_293_658_878_339_043_942_407_588_587_610_069;
const ALPHA_BAND: (f64, f64) = (2.45, 2.55);
const REFERENCE_TOLERANCE: f64 = 0.01;
const FIT_TIME_LIMIT: Duration = Duration::from_secs(10);
const AUTOCORR_TOLERANCE: f64 = 1e-9;
const AUTOCORR_SERIES: usize = 1_000;
const EXIT_HISTORIES: usize = 10_000;
const STORES: usize = 1_000;
const SWEEP_SEEDS: std::ops::Range<u64> = 0..10;
const MEAN_OVER_MEDIAN_MIN: usize = 9;
const SCALE_FREE_BAND: (f64, f64) = (2.0, 3.0);
const SCALE_FREE_MIN: usize = 7;
const MIN_ENTRANTS: usize = 10_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_datamarket")
}

fn cli(args: &[&str]) -> Result<std::process::Output, String> {
    Command::new(bin()).args(args).output().map_err(|e| e.to_string())
}

fn seeded(seed: u64) -> SimConfig {
    SimConfig {
        seed,
        ..SimConfig::default()
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut times = Vec::new();
    let mut logs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let start = Instant::now();
        let res = cli(&["simulate", "--config", "default", "--policy", "mock", "--seed", "42", "--out", out.to_str().unwrap()]);
        times.push(start.elapsed());
        match res {
            Ok(o) if o.status.success() => {}
            Ok(o) => return outcome(false, format!("simulate failed: {}", String::from_utf8_lossy(&o.stderr))),
            Err(e) => return outcome(false, e),
        }
        logs.push(std::fs::read(out.join("events.jsonl")).unwrap());
    }
    let same = logs[0] == logs[1] && !logs[0].is_empty();
    let slowest = times.iter().max().unwrap();
    outcome(
        same && *slowest < RUN_TIME_LIMIT,
        format!("events.jsonl identical: {same}, {} bytes, slowest run {slowest:.2?}", logs[0].len()),
    )
}

fn entry_curve() -> Outcome {
    let cfg = EntryConfig::default();
    let at_peak = entry_rate(100.0, &cfg);
    let at_zero = entry_rate(0.0, &cfg);
    let ok = (at_peak - 25.0).abs() <= ENTRY_TOLERANCE && (at_zero - ENTRY_AT_ZERO).abs() <= ENTRY_TOLERANCE;
    outcome(ok, format!("entry_rate(100) = {at_peak}, entry_rate(0) = {at_zero:.15}"))
}

fn power_law() -> Outcome {
    let xs = common::power_law_samples(2.5, 50_000, 2024);
    let start = Instant::now();
    let fit = match fit_power_law(&xs, FitOptions::fixed(1)) {
        Ok(f) => f,
        Err(e) => return outcome(false, e.to_string()),
    };
    let elapsed = start.elapsed();
    let reference = common::reference_discrete_alpha(&xs, 1);
    let ok = (ALPHA_BAND.0..=ALPHA_BAND.1).contains(&fit.alpha)
        && (fit.alpha - reference).abs() <= REFERENCE_TOLERANCE
        && elapsed < FIT_TIME_LIMIT;
    outcome(
        ok,
        format!(
            "alpha {:.4} (reference {reference:.4}), ks {:.4}, fit time {elapsed:.2?}",
            fit.alpha, fit.ks_distance
        ),
    )
}

fn autocorrelation() -> Outcome {
    let hand_a = autocorr_lag1(&[1.0, 2.0, 3.0, 4.0, 5.0]);
    let hand_b = autocorr_lag1(&[2.0, 0.0, 2.0, 0.0, 2.0]);
    let hand_ok = hand_a == Ok(0.4) && hand_b == Ok(-0.8);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for i in 0..AUTOCORR_SERIES {
        let len = rng.random_range(3..=10_000);
        let x: Vec<f64> = if i % 2 == 0 {
            (0..len).map(|_| rng.random_range(0..200) as f64).collect()
        } else {
            (0..len).map(|_| rng.random::<f64>() * 1e3).collect()
        };
        if let Ok(r) = autocorr_lag1(&x) {
            worst = worst.max((r - common::brute_autocorr(&x)).abs());
            checked += 1;
        }
    }
    outcome(
        hand_ok && checked == AUTOCORR_SERIES && worst <= AUTOCORR_TOLERANCE,
        format!("hand cases {hand_a:?} {hand_b:?}, {checked} series, max deviation {worst:.2e}"),
    )
}

struct SweepRun {
    events: Vec<Event>,
    report: MetricsReport,
}

fn sweep() -> Result<Vec<SweepRun>, String> {
    SWEEP_SEEDS
        .map(|seed| {
            let cfg = seeded(seed);
            let mut sink = MemorySink::default();
            let mut sim = Simulation::new(cfg.clone(), PolicySet::mock(&cfg), &mut sink).map_err(|e| e.to_string())?;
            while !sim.is_finished() {
                sim.step(&mut sink).map_err(|e| e.to_string())?;
                let s = sim.state();
                if s.total_spend() != s.total_revenue() || s.total_spend() != s.total_transaction_value() {
                    return Err(format!(
                        "seed {seed} step {}: spend {} revenue {} prices {}",
                        s.step,
                        s.total_spend(),
                        s.total_revenue(),
                        s.total_transaction_value()
                    ));
                }
            }
            let report = MetricsReport::from_log(&TradeLog::from_events(&sink.events), &cfg.metrics)
                .map_err(|e| e.to_string())?;
            Ok(SweepRun {
                events: sink.events,
                report,
            })
        })
        .collect()
}

fn conservation(runs: &Result<Vec<SweepRun>, String>) -> Outcome {
    let runs = match runs {
        Ok(r) => r,
        Err(e) => return outcome(false, e.clone()),
    };
    for (seed, r) in SWEEP_SEEDS.zip(runs) {
        let degree_sum: u64 = r.report.degree.summary.histogram.iter().map(|(d, n)| d * n).sum();
        if degree_sum != 2 * r.report.transactions {
            return outcome(false, format!("seed {seed}: degree sum {degree_sum} vs {} transactions", r.report.transactions));
        }
    }
    let total: u64 = runs.iter().map(|r| r.report.transactions).sum();
    outcome(
        true,
        format!("{} runs, {total} transactions, spend = revenue = prices every step, handshake exact", runs.len()),
    )
}

fn exit_rules(runs: &Result<Vec<SweepRun>, String>) -> Outcome {
    let cfg = ExitConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let names = ["plan", "search", "buy", "analyze", "do_nothing"];
    let mut fired = 0;
    for h in 0..EXIT_HISTORIES {
        let len = rng.random_range(1..80);
        let plan_bias = if h % 3 == 0 { 0.7 } else { 0.25 };
        let history: Vec<&str> = (0..len)
            .map(|_| {
                if rng.random_bool(plan_bias) {
                    "plan"
                } else {
                    names[rng.random_range(1..names.len())]
                }
            })
            .collect();
        let mut buyer = blank_buyer();
        let mut pending = 0;
        let mut buys_before = Vec::with_capacity(len);
        let mut engine_exit = None;
        for (t, name) in history.iter().enumerate() {
            // Purchases requested last step complete before this step's action.
            buyer.buy_count += pending;
            pending = 0;
            buys_before.push(buyer.buy_count);
            let action = match *name {
                "plan" => BuyerAction::Plan { text: String::new() },
                "search" => BuyerAction::Search { query: String::new() },
                "buy" => BuyerAction::Buy {
                    dataset_id: DatasetId(0),
                },
                "analyze" => BuyerAction::Analyze,
                _ => BuyerAction::DoNothing,
            };
            apply_buyer_counters(&mut buyer, &action);
            if let Some(reason) = buyer_forced_exit(buyer.analyze_count, buyer.buy_count, buyer.consecutive_plan_count, &cfg) {
                engine_exit = Some((t, reason));
                break;
            }
            if *name == "buy" && rng.random_bool(0.6) {
                pending = 1;
            }
        }
        let truncated = engine_exit.map_or(history.len(), |(t, _)| t + 1);
        let oracle = common::first_buyer_breach(&history[..truncated], &buys_before, &cfg);
        if oracle != engine_exit {
            return outcome(false, format!("history {h}: rule fired at {engine_exit:?}, oracle {oracle:?}"));
        }
        fired += usize::from(engine_exit.is_some());
    }
    let (mut buyers, mut seller_checks) = (0, 0);
    match runs {
        Ok(runs) => {
            for (seed, r) in SWEEP_SEEDS.zip(runs) {
                match (common::check_buyer_exits(&r.events, &cfg), common::check_seller_exits(&r.events, &cfg)) {
                    (Ok(b), Ok(s)) => {
                        buyers += b;
                        seller_checks += s;
                    }
                    (Err(e), _) | (_, Err(e)) => return outcome(false, format!("seed {seed}: {e}")),
                }
            }
        }
        Err(e) => return outcome(false, e.clone()),
    }
    outcome(
        true,
        format!(
            "{EXIT_HISTORIES} rule histories ({fired} forced exits) match the oracle; event logs: {buyers} buyers, {seller_checks} seller-steps"
        ),
    )
}

fn blank_buyer() -> BuyerState {
    BuyerState {
        buyer_id: BuyerId(0),
        field: String::new(),
        goal: String::new(),
        trend_conditioned: false,
        initial_budget: Money::ZERO,
        budget: Money::ZERO,
        purchases: Vec::new(),
        plan_text: String::new(),
        last_search_results: Vec::new(),
        buy_count: 0,
        analyze_count: 0,
        consecutive_plan_count: 0,
        action_history: Vec::new(),
        active: true,
        entered_step: 0,
    }
}

fn snapshot(id: u32) -> ListingSnapshot {
    ListingSnapshot {
        dataset_id: DatasetId(id),
        seller_id: SellerId(0),
        data_name: format!("d{id}"),
        description: String::new(),
        columns: Vec::new(),
        tags: Vec::new(),
        price: Money::from_units(1),
        update_frequency: UpdateFrequency::Static,
        version: 1,
    }
}

fn search() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for s in 0..STORES {
        let dim = rng.random_range(2..12);
        let size = rng.random_range(1..=1_000);
        let random_vec = |rng: &mut ChaCha8Rng| loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-3..=3) as f64).collect();
            if v.iter().any(|x| *x != 0.0) {
                return v;
            }
        };
        let mut store = VectorStore::new();
        let mut entries = Vec::new();
        for _ in 0..size {
            let id = rng.random_range(0..5_000);
            let v = random_vec(&mut rng);
            store
                .upsert(DatasetId(id), EmbeddingVector::new(v.clone()).unwrap(), snapshot(id))
                .unwrap();
            entries.retain(|(i, _)| *i != id);
            entries.push((id, v));
        }
        let q = random_vec(&mut rng);
        let k = rng.random_range(1..=60);
        let hits = store.search(&EmbeddingVector::new(q.clone()).unwrap(), k).unwrap();
        let expected = exact_ranking(&q, &entries, k);
        if hits.len() != expected.len() {
            return outcome(false, format!("store {s}: {} hits, expected {}", hits.len(), expected.len()));
        }
        for (i, (hit, (id, sim))) in hits.iter().zip(&expected).enumerate() {
            let same_id = hit.listing.dataset_id == DatasetId(*id);
            if !same_id || (hit.similarity - sim).abs() > 1e-12 {
                return outcome(
                    false,
                    format!("store {s} rank {i}: got {} ({}), expected d{id} ({sim})", hit.listing.dataset_id, hit.similarity),
                );
            }
        }
    }
    outcome(true, format!("{STORES} stores up to 1000 entries match the brute-force ranking"))
}

/// Ranks integer vectors by cosine using exact integer comparisons, so
/// parallel vectors tie exactly and fall back to the id order.
fn exact_ranking(q: &[f64], entries: &[(u32, Vec<f64>)], k: usize) -> Vec<(u32, f64)> {
    let int = |v: &[f64]| v.iter().map(|x| *x as i128).collect::<Vec<_>>();
    let dot = |a: &[i128], b: &[i128]| a.iter().zip(b).map(|(x, y)| x * y).sum::<i128>();
    let qi = int(q);
    let qq = dot(&qi, &qi);
    let mut scored: Vec<(u32, i128, i128)> = entries
        .iter()
        .map(|(id, v)| {
            let vi = int(v);
            (*id, dot(&qi, &vi), dot(&vi, &vi))
        })
        .collect();
    // cos_a > cos_b  <=>  sign(d_a) d_a^2 n_b > sign(d_b) d_b^2 n_a
    scored.sort_by(|a, b| {
        let lhs = a.1.signum() * a.1 * a.1 * b.2;
        let rhs = b.1.signum() * b.1 * b.1 * a.2;
        rhs.cmp(&lhs).then(a.0.cmp(&b.0))
    });
    scored.truncate(k);
    scored
        .into_iter()
        .map(|(id, d, n)| (id, d as f64 / ((qq as f64).sqrt() * (n as f64).sqrt())))
        .collect()
}

fn long_tail(runs: &Result<Vec<SweepRun>, String>) -> Outcome {
    let runs = match runs {
        Ok(r) => r,
        Err(e) => return outcome(false, e.clone()),
    };
    let mut skewed = 0;
    let mut in_band = 0;
    let mut alphas = String::new();
    for r in runs {
        let d = &r.report.purchases_per_dataset;
        skewed += usize::from(d.summary.mean > d.summary.median);
        match &d.power_law.fit {
            Some(f) => {
                in_band += usize::from((SCALE_FREE_BAND.0..=SCALE_FREE_BAND.1).contains(&f.alpha));
                write!(alphas, " {:.2}", f.alpha).unwrap();
            }
            None => alphas.push_str(" -"),
        }
    }
    outcome(
        skewed >= MEAN_OVER_MEDIAN_MIN && in_band >= SCALE_FREE_MIN,
        format!(
            "mean > median in {skewed}/{n}, alpha in [2, 3] in {in_band}/{n} (need {SCALE_FREE_MIN}); alphas:{alphas}",
            n = runs.len()
        ),
    )
}

fn pipeline_invariance() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let day = 86_400i64;
    let t0 = 1_700_000_000i64;
    let mut rows: Vec<(u32, u32, u32, i64)> = (0..800)
        .map(|_| {
            (
                rng.random_range(0..45),
                rng.random_range(0..70),
                (rng.random::<f64>().powi(3) * 40.0) as u32,
                rng.random_range(0..day),
            )
        })
        .collect();
    rows[0].0 = 0;
    rows[0].3 = 0;
    rows.sort_by_key(|r| r.0);

    let engine_dir = root.join("engine");
    let mut sink = FileSink::create(&engine_dir).unwrap();
    let mut raw = String::from("order_id,transaction_hash,datatoken_address,payer_address,amount,price,timestamp\n");
    for (i, &(step, buyer, dataset, offset)) in rows.iter().enumerate() {
        sink.emit(&Event::Transaction {
            step,
            agent: BuyerId(buyer),
            seller_id: SellerId(dataset),
            dataset_id: DatasetId(dataset),
            version: 1,
            price: Money::from_units(5),
            quoted_price: Money::from_units(5),
        })
        .unwrap();
        let ts = t0 + i64::from(step) * day + offset;
        writeln!(raw, "ord{i},0x{i:x},0xtoken{dataset},0xpayer{buyer},1,5,{ts}").unwrap();
    }
    sink.flush().unwrap();
    let raw_path = root.join("orders.csv");
    std::fs::write(&raw_path, raw).unwrap();

    let p = |x: &Path| x.to_str().unwrap().to_string();
    let steps = [
        vec!["ingest".into(), p(&raw_path), "--format".into(), "csv".into(), "--bin-width".into(), "1d".into(), "--out".into(), p(&root.join("ingested"))],
        vec!["analyze".into(), p(&engine_dir.join(TRANSACTIONS_FILE)), "--out".into(), p(&root.join("m_engine"))],
        vec!["analyze".into(), p(&root.join("ingested").join(TRANSACTIONS_FILE)), "--out".into(), p(&root.join("m_raw"))],
    ];
    for args in &steps {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        match cli(&args) {
            Ok(o) if o.status.success() => {}
            Ok(o) => return outcome(false, format!("{} failed: {}", args[0], String::from_utf8_lossy(&o.stderr))),
            Err(e) => return outcome(false, e),
        }
    }
    let a = std::fs::read(root.join("m_engine/metrics.json")).unwrap();
    let b = std::fs::read(root.join("m_raw/metrics.json")).unwrap();
    outcome(a == b, format!("{} transactions; metrics.json identical: {}", rows.len(), a == b))
}

fn trend_probability() -> Outcome {
    let mut flips = Vec::new();
    let mut seed = 0;
    while flips.len() < MIN_ENTRANTS {
        let mut cfg = seeded(1_000 + seed);
        cfg.max_steps = 2;
        cfg.entry.max_entrants = 60_000.0;
        let mut sink = MemorySink::default();
        let mut sim = match Simulation::new(cfg.clone(), PolicySet::mock(&cfg), &mut sink) {
            Ok(s) => s,
            Err(e) => return outcome(false, e.to_string()),
        };
        if let Err(e) = sim.run(&mut sink) {
            return outcome(false, e.to_string());
        }
        flips.extend(sink.events.iter().filter_map(|e| match e {
            Event::BuyerEntered {
                step, trend_conditioned, ..
            } if *step >= 1 => Some(*trend_conditioned),
            _ => None,
        }));
        seed += 1;
    }
    let n = flips.len() as f64;
    let share = flips.iter().filter(|&&f| f).count() as f64 / n;
    let sigma = (0.25 / n).sqrt();
    let z = (share - 0.5) / sigma;
    outcome(z.abs() <= 3.0, format!("{} entrants over {seed} runs, share {share:.4}, z = {z:.2}", flips.len()))
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn main() {
    let runs = sweep();
    let criteria: Vec<Criterion> = vec![
        ("determinism and runtime", Box::new(determinism)),
        ("entry curve exactness", Box::new(entry_curve)),
        ("power-law fitter oracle", Box::new(power_law)),
        ("autocorrelation oracle", Box::new(autocorrelation)),
        ("conservation and handshake", Box::new(|| conservation(&runs))),
        ("exit rules", Box::new(|| exit_rules(&runs))),
        ("search correctness", Box::new(search)),
        ("qualitative long tail", Box::new(|| long_tail(&runs))),
        ("pipeline invariance", Box::new(pipeline_invariance)),
        ("trend probability", Box::new(trend_probability)),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} [{:>2}] {name}: {}", i + 1, o.detail);
        if !o.pass {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", criteria.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}

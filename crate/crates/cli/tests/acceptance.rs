//! Acceptance criteria. Each criterion prints one PASS or FAIL line; the
//! process exits nonzero if any criterion fails.

#[path = "../../core/tests/common/corpus.rs"]
mod corpus;
mod common;
#[path = "../../core/tests/common/oracle.rs"]
mod oracle;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use arena_core::agents::PromptLibrary;
use arena_core::arena::{Arena, CycleRecord, FundRequest};
use arena_core::events::{EventStore, FundState, WriteFault};
use arena_core::gateway::{BackendError, ChatRequest, FnBackend, Gateway, GatewayMode, MockBackend, ModelSpec, RetryPolicy};
use arena_core::market::{sample_dataset, Fact, MarketClock, MarketStore, ReplaySource};
use arena_core::metrics::{compute_metrics, NavSeries};
use arena_core::portfolio::{FundConfig, FundId};
use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_decimal::Decimal;

type Outcome = Result<String, String>;
type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap()
}

fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

// ---- shared arena fixtures -------------------------------------------------

const MODEL: &str = "m1";

fn dataset(days: usize) -> Vec<Fact> {
    sample_dataset(&common::spec(days), &MarketClock::default())
}

fn market(facts: Vec<Fact>) -> Arc<MarketStore> {
    let s = MarketStore::new(MarketClock::default());
    s.ingest_records("acceptance", facts).unwrap();
    Arc::new(s)
}

fn gateway(mode: GatewayMode, online_only: bool) -> Arc<Gateway> {
    let g = Gateway::with_limits(mode, 4, RetryPolicy { max_attempts: 1, base_delay: Duration::ZERO });
    if online_only {
        let refuse = FnBackend::online(|_: &ChatRequest| -> Result<String, BackendError> {
            Err(BackendError::Fatal("network disabled".into()))
        });
        g.register_backend("p", Arc::new(refuse)).unwrap();
    } else {
        g.register_backend("p", Arc::new(MockBackend)).unwrap();
    }
    g.register_model(ModelSpec::new(MODEL, "p", "mock-1"));
    Arc::new(g)
}

fn arena(dir: &Path, market: Arc<MarketStore>, gateway: Arc<Gateway>) -> Arena {
    Arena::open(dir, market, Arc::new(ReplaySource), gateway, Arc::new(PromptLibrary::builtin())).unwrap()
}

fn request() -> FundRequest {
    FundRequest {
        name: "acceptance".into(),
        model_spec: MODEL.into(),
        stock_pool: common::POOL.iter().map(|s| s.to_string()).collect(),
        initial_cash: Decimal::from(100_000),
        config: FundConfig::default(),
        fund_id: None,
        inception: None,
    }
}

fn log_bytes(dir: &Path, id: &FundId) -> Vec<u8> {
    std::fs::read(dir.join("funds").join(id.as_str()).join("events.jsonl")).unwrap()
}

fn json(r: &CycleRecord) -> String {
    serde_json::to_string(r).unwrap()
}

// ---- criteria ----------------------------------------------------------------

fn accounting_identity() -> Outcome {
    let started = Instant::now();
    let scenario = oracle::long_scenario(2024, 1000);
    let out = oracle::run(&scenario, "fund-acceptance");
    ensure!(out.decisions == 1000, "ran {} decisions", out.decisions);
    ensure!(scenario.tickers.len() == 5, "{} tickers", scenario.tickers.len());

    // Recheck every day independently of the oracle's own assertions.
    let last = scenario.days.last().unwrap();
    let held: Decimal = out
        .fund
        .positions
        .values()
        .map(|p| {
            let i = scenario.tickers.iter().position(|t| *t == p.ticker).unwrap();
            oracle::from_micro(last.closes[i]) * Decimal::from(p.quantity)
        })
        .sum();
    ensure!(out.navs.len() == scenario.days.len(), "nav count {}", out.navs.len());
    ensure!(
        *out.navs.last().unwrap() == out.fund.cash + held,
        "nav {} != cash {} + holdings {}",
        out.navs.last().unwrap(),
        out.fund.cash,
        held
    );
    let dir = tempdir();
    let folded = oracle::write_and_fold(&EventStore::open(dir.path()).unwrap(), &out);
    ensure!(folded.fund == out.fund, "folded fund differs from engine fund");
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("1000 decisions, {} fills, {} days, exact at every step, {elapsed:.2?}", out.fills.len(), out.navs.len()))
}

/// Future facts are either removed or rewritten.
fn censor(facts: &[Fact], after: chrono::DateTime<chrono::Utc>, delete: bool) -> Vec<Fact> {
    facts
        .iter()
        .filter_map(|f| {
            if f.available_at() <= after {
                return Some(f.clone());
            }
            if delete {
                return None;
            }
            match f.clone() {
                Fact::Bar(mut b) => {
                    b.open *= Decimal::TWO;
                    b.high *= Decimal::TWO;
                    b.low *= Decimal::TWO;
                    b.close *= Decimal::TWO;
                    b.volume = b.volume * 3 + 1;
                    Some(Fact::Bar(b))
                }
                Fact::News(mut n) => {
                    n.headline = format!("LEAKED {}", n.headline);
                    n.body = "future".into();
                    Some(Fact::News(n))
                }
                Fact::Fundamental(_) | Fact::Insider(_) => None,
            }
        })
        .collect()
}

fn no_lookahead(rt: &tokio::runtime::Runtime) -> Outcome {
    let facts = dataset(10);
    let clock = MarketClock::default();
    let original_dir = tempdir();
    let original = arena(original_dir.path(), market(facts.clone()), gateway(GatewayMode::Live, false));
    let id = original.create_fund(&request()).map_err(|e| e.to_string())?.fund.fund_id;
    let days = original.market().trading_days();
    ensure!(days.len() == 10, "{} trading days", days.len());
    let mut records = Vec::new();
    for d in &days {
        records.push(json(&rt.block_on(original.run_cycle(&id, *d, None)).map_err(|e| e.to_string())?));
    }
    let cassette = original_dir.path().join("cassette.jsonl");
    original.gateway().cassette_export(&cassette, None).map_err(|e| e.to_string())?;
    let full_log = log_bytes(original_dir.path(), &id);

    let mut checked = 0;
    for k in 0..days.len() {
        let as_of = clock.decision_point(days[k]);
        for delete in [true, false] {
            let variant = censor(&facts, as_of.instant, delete);
            let changed = facts.len() != variant.len() || facts != variant;
            ensure!(k == days.len() - 1 || changed, "day {k}: censoring changed nothing");
            let dir = tempdir();
            let gw = gateway(GatewayMode::Replay, true);
            gw.cassette_import(&cassette).map_err(|e| e.to_string())?;
            let a = arena(dir.path(), market(variant), gw);
            let id2 = a.create_fund(&request()).map_err(|e| e.to_string())?.fund.fund_id;
            ensure!(id2 == id, "fund id differs");
            for (i, d) in days[..=k].iter().enumerate() {
                let rec = rt
                    .block_on(a.run_cycle(&id2, *d, None))
                    .map_err(|e| format!("k={k} delete={delete} day {d}: {e}"))?;
                ensure!(json(&rec) == records[i], "k={k} delete={delete}: record for {d} differs");
            }
            let log = log_bytes(dir.path(), &id2);
            ensure!(full_log.starts_with(&log), "k={k} delete={delete}: log is not a prefix of the original");
            let cycles = String::from_utf8_lossy(&log).matches("\"CycleCompleted\"").count();
            ensure!(cycles == k + 1, "k={k}: {cycles} completed cycles in log");
            checked += 1;
        }
    }
    Ok(format!("{checked} censored replays byte-identical to the original 10-day run"))
}

fn replay_determinism(rt: &tokio::runtime::Runtime) -> Outcome {
    // Mock model through the binary, twice.
    let logs: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            let dir = common::data_dir(10);
            let id = cli_ok(dir.path(), &["fund", "create", "--name", "det", "--pool", &common::POOL.join(",")])?;
            cli_ok(dir.path(), &["replay", "--fund", id.trim(), "--from", "2025-01-02", "--to", "2025-01-15"])?;
            Ok(log_bytes(dir.path(), &FundId::new(id.trim())))
        })
        .collect::<Result<_, String>>()?;
    ensure!(logs[0] == logs[1], "mock replays differ");

    // Recorded cassette, replayed twice with the network disabled.
    let facts = dataset(10);
    let rec_dir = tempdir();
    let rec = arena(rec_dir.path(), market(facts.clone()), gateway(GatewayMode::Live, false));
    let id = rec.create_fund(&request()).map_err(|e| e.to_string())?.fund.fund_id;
    let days = rec.market().trading_days();
    let (from, to) = (days[0], days[9]);
    let recorded = rt.block_on(rec.run_replay(&id, from, to, false)).map_err(|e| e.to_string())?;
    ensure!(recorded.records.len() == 10, "recorded {} cycles", recorded.records.len());
    let cassette = rec_dir.path().join("cassette.jsonl");
    rec.gateway().cassette_export(&cassette, None).map_err(|e| e.to_string())?;
    let mut replayed = Vec::new();
    for _ in 0..2 {
        let dir = tempdir();
        let gw = gateway(GatewayMode::Replay, true);
        gw.cassette_import(&cassette).map_err(|e| e.to_string())?;
        let a = arena(dir.path(), market(facts.clone()), gw);
        a.create_fund(&request()).map_err(|e| e.to_string())?;
        let out = rt.block_on(a.run_replay(&id, from, to, false)).map_err(|e| e.to_string())?;
        ensure!(out.error.is_none(), "cassette replay failed: {:?}", out.error);
        let decisions: Vec<_> = out.records.iter().map(|r| serde_json::to_string(&r.decisions).unwrap()).collect();
        let expected: Vec<_> = recorded.records.iter().map(|r| serde_json::to_string(&r.decisions).unwrap()).collect();
        ensure!(decisions == expected, "cassette replay decided differently from the recording");
        replayed.push(log_bytes(dir.path(), &id));
    }
    ensure!(replayed[0] == replayed[1], "cassette replays differ");
    Ok(format!(
        "mock: 2 runs, {} bytes identical; cassette: 2 runs, {} bytes identical",
        logs[0].len(),
        replayed[0].len()
    ))
}

fn brute_drawdown(v: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..v.len() {
        for j in i..v.len() {
            let peak = v[..=i].iter().cloned().fold(f64::MIN, f64::max);
            if peak == v[i] {
                worst = worst.max((v[i] - v[j]) / v[i]);
            }
        }
    }
    worst
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= 1e-9,
        (None, None) => true,
        _ => false,
    }
}

fn series(values: &[Decimal]) -> NavSeries {
    let start = NaiveDate::from_ymd_opt(2025, 1, 1).unwrap();
    NavSeries::new(values.iter().enumerate().map(|(i, v)| (start + Days::new(i as u64), *v)).collect()).unwrap()
}

fn metrics_oracle() -> Outcome {
    const YEAR: f64 = 252.0;
    let rf = 0.02;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut with_sharpe = 0;
    for case in 0..100 {
        let n = rng.gen_range(1..=50);
        let mut cents: i64 = rng.gen_range(50_000..2_000_000);
        let navs: Vec<Decimal> = (0..n)
            .map(|_| {
                cents = (cents + rng.gen_range(-cents / 20..=cents / 20)).max(100);
                Decimal::new(cents, 2)
            })
            .collect();
        let m = compute_metrics::<f64>(&series(&navs), &[], rf);
        let v: Vec<f64> = navs.iter().map(|d| d.to_string().parse().unwrap()).collect();

        let dd = brute_drawdown(&v);
        ensure!(m.max_drawdown == Some(dd), "case {case}: drawdown {:?} != brute {dd}", m.max_drawdown);

        let rets: Vec<f64> = v.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
        let (vol, sharpe) = if rets.len() >= 2 {
            let mean = rets.iter().sum::<f64>() / rets.len() as f64;
            let var = rets.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (rets.len() as f64 - 1.0);
            let sd = var.sqrt();
            let sharpe = (sd > 0.0).then(|| (mean - rf / YEAR) / sd * YEAR.sqrt());
            (Some(sd * YEAR.sqrt()), sharpe)
        } else {
            (None, None)
        };
        ensure!(close(m.volatility, vol), "case {case}: volatility {:?} vs {vol:?}", m.volatility);
        ensure!(close(m.sharpe, sharpe), "case {case}: sharpe {:?} vs {sharpe:?}", m.sharpe);
        with_sharpe += sharpe.is_some() as usize;
    }
    let flat = compute_metrics::<f64>(&series(&[Decimal::new(100_000, 0); 20]), &[], rf);
    ensure!(flat.max_drawdown == Some(0.0), "constant drawdown {:?}", flat.max_drawdown);
    ensure!(flat.sharpe.is_none(), "constant sharpe {:?}", flat.sharpe);
    Ok(format!("100 series ({with_sharpe} with sharpe) match; constant series has drawdown 0 and no sharpe"))
}

fn protocol_robustness(rt: &tokio::runtime::Runtime) -> Outcome {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/malformed_outputs.jsonl");
    let cases = corpus::load(&path);
    ensure!(cases.len() >= 20, "only {} corpus cases", cases.len());
    let mut failures = Vec::new();
    let mut by_outcome = std::collections::BTreeMap::<String, usize>::new();
    for case in &cases {
        match catch_unwind(AssertUnwindSafe(|| rt.block_on(corpus::check(case)))) {
            Ok(v) if v.ok => *by_outcome.entry(case.expect.clone()).or_default() += 1,
            Ok(v) => failures.push(format!("{}: {}", v.id, v.detail)),
            Err(_) => failures.push(format!("{}: panicked", case.id)),
        }
    }
    ensure!(failures.is_empty(), "{}", failures.join("; "));
    Ok(format!("{} cases, no crashes: {by_outcome:?}", cases.len()))
}

fn cli(dir: &Path, args: &[&str]) -> std::process::Output {
    common::arena_cmd(dir, args)
}

fn cli_ok(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = cli(dir, args);
    if out.status.success() {
        Ok(common::stdout(&out))
    } else {
        Err(format!("arena {}: {}", args.join(" "), common::stderr(&out).trim()))
    }
}

fn cutoff_enforcement() -> Outcome {
    let dir = common::data_dir(10);
    let config = dir.path().join("run.json");
    let body = serde_json::json!({
        "model_spec": {
            "spec_id": "mock-recent",
            "provider": "mock",
            "model_name": "mock-1",
            "knowledge_cutoff": "2025-01-10"
        },
        "fund": {
            "name": "contaminated",
            "model_spec": "mock-recent",
            "stock_pool": common::POOL,
            "initial_cash": "100000"
        },
        "from": "2025-01-02",
        "to": "2025-01-15"
    });
    std::fs::write(&config, body.to_string()).unwrap();
    let cfg = config.to_str().unwrap();

    let refused = cli(dir.path(), &["replay", "--config", cfg]);
    ensure!(!refused.status.success(), "replay past the cutoff succeeded");
    let err = common::stderr(&refused);
    ensure!(err.contains("CUTOFF_VIOLATION"), "unexpected error: {err}");
    let (arena_ro, _) = arena_cli::cli::open(dir.path(), None).map_err(|e| e.to_string())?;
    let ids = arena_ro.fund_ids().map_err(|e| e.to_string())?;
    ensure!(ids.len() == 1, "{} funds", ids.len());
    ensure!(arena_ro.fund(&ids[0]).unwrap().nav.is_empty(), "refused replay ran cycles");
    drop(arena_ro);

    let text = cli_ok(dir.path(), &["replay", "--config", cfg, "--allow-contaminated"])?;
    ensure!(text.contains("COMPLETED 10 cycles"), "{text}");
    let log = String::from_utf8(log_bytes(dir.path(), &ids[0])).unwrap();
    let stamped = log.lines().find(|l| l.contains("\"RunControl\"") && l.contains("CONTAMINATED"));
    ensure!(stamped.is_some(), "no CONTAMINATED run-control event in the log");
    let (arena_ro, _) = arena_cli::cli::open(dir.path(), None).map_err(|e| e.to_string())?;
    ensure!(arena_ro.fund(&ids[0]).unwrap().contaminated, "fold does not report contamination");
    Ok("refused with CUTOFF_VIOLATION; --allow-contaminated completes and stamps CONTAMINATED".into())
}

fn end_to_end() -> Outcome {
    let started = Instant::now();
    let tmp = tempdir();
    let dir = tmp.path().join("data");
    cli_ok(&dir, &["init", "--days", "10"])?;
    let id = cli_ok(&dir, &["fund", "create", "--name", "e2e", "--pool", &common::POOL.join(",")])?;
    let id = id.trim();
    let text = cli_ok(&dir, &["replay", "--fund", id, "--from", "2025-01-02", "--to", "2025-01-15"])?;
    let board = cli_ok(&dir, &["leaderboard"])?;
    let elapsed = started.elapsed();

    ensure!(text.lines().count() == 11, "replay printed {} lines", text.lines().count());
    ensure!(board.lines().count() == 2 && board.contains(id), "leaderboard:\n{board}");
    let (a, _) = arena_cli::cli::open(&dir, None).map_err(|e| e.to_string())?;
    let fid = FundId::new(id);
    let records = a.cycle_records(&fid).map_err(|e| e.to_string())?;
    let state: FundState = a.fund(&fid).map_err(|e| e.to_string())?;
    ensure!(records.len() == 10, "{} cycle records", records.len());
    ensure!(state.nav.len() == 10, "nav series length {}", state.nav.len());
    ensure!(records.iter().all(|r| r.decisions.len() == 5), "a cycle did not decide all 5 tickers");
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("10 records, 10 NAV points, leaderboard rendered, {elapsed:.2?}"))
}

fn crash_safety(rt: &tokio::runtime::Runtime) -> Outcome {
    let facts = dataset(4);
    let setup = || -> Result<(tempfile::TempDir, FundId, Vec<NaiveDate>, FundState), String> {
        let dir = tempdir();
        let a = arena(dir.path(), market(facts.clone()), gateway(GatewayMode::Live, false));
        let id = a.create_fund(&request()).map_err(|e| e.to_string())?.fund.fund_id;
        let days = a.market().trading_days();
        rt.block_on(a.run_cycle(&id, days[0], None)).map_err(|e| e.to_string())?;
        let before = a.events().fold_fund(&id).map_err(|e| e.to_string())?;
        Ok((dir, id, days, before))
    };

    // Size of the second cycle's append, from an undisturbed run.
    let (dir, id, days, _) = setup()?;
    let size_before = log_bytes(dir.path(), &id).len();
    let a = arena(dir.path(), market(facts.clone()), gateway(GatewayMode::Live, false));
    rt.block_on(a.run_cycle(&id, days[1], None)).map_err(|e| e.to_string())?;
    let batch = log_bytes(dir.path(), &id).len() - size_before;
    drop(a);

    let mut cases = 0;
    for torn in [true, false] {
        for after_bytes in [0, 1, 57, batch / 3, batch / 2, batch - 1] {
            let (dir, id, days, before) = setup()?;
            let a = arena(dir.path(), market(facts.clone()), gateway(GatewayMode::Live, false));
            a.events().inject_fault(WriteFault { after_bytes, torn });
            let failed = rt.block_on(a.run_cycle(&id, days[1], None));
            ensure!(failed.is_err(), "torn={torn} after={after_bytes}: cycle survived a storage fault");
            drop(a);

            // Reopen as a restarted process would.
            let a = arena(dir.path(), market(facts.clone()), gateway(GatewayMode::Live, false));
            let after = a.events().fold_fund(&id).map_err(|e| format!("torn={torn} after={after_bytes}: {e}"))?;
            ensure!(
                after.fund == before.fund
                    && after.nav == before.nav
                    && after.fills == before.fills
                    && after.contaminated == before.contaminated,
                "torn={torn} after={after_bytes}: folded state differs from the pre-cycle state"
            );
            let rec = rt.block_on(a.run_cycle(&id, days[1], None)).map_err(|e| e.to_string())?;
            ensure!(a.fund(&id).unwrap().nav.len() == 2, "retried cycle did not mark");
            ensure!(rec.trading_date == days[1], "retried wrong date");
            cases += 1;
        }
    }

    // A crash after the whole append is durable keeps the cycle.
    let (dir, id, days, _) = setup()?;
    let a = arena(dir.path(), market(facts.clone()), gateway(GatewayMode::Live, false));
    a.events().inject_fault(WriteFault { after_bytes: batch, torn: true });
    let _ = rt.block_on(a.run_cycle(&id, days[1], None));
    drop(a);
    let a = arena(dir.path(), market(facts.clone()), gateway(GatewayMode::Live, false));
    let kept = a.fund(&id).map_err(|e| e.to_string())?;
    ensure!(kept.nav.len() == 2, "durable cycle was lost");
    Ok(format!("{cases} faults inside a {batch}-byte cycle append fold to the pre-cycle state and retry cleanly"))
}

fn main() {
    let rt = runtime();
    let criteria: Vec<(&str, Criterion)> = vec![
        ("accounting identity", Box::new(accounting_identity)),
        ("no lookahead", Box::new(|| no_lookahead(&rt))),
        ("replay determinism", Box::new(|| replay_determinism(&rt))),
        ("metrics oracle", Box::new(metrics_oracle)),
        ("protocol robustness", Box::new(|| protocol_robustness(&rt))),
        ("cutoff enforcement", Box::new(cutoff_enforcement)),
        ("end to end", Box::new(end_to_end)),
        ("crash safety", Box::new(|| crash_safety(&rt))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

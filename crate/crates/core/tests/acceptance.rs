//! Acceptance gate. One line per criterion; exits non-zero if any fails.
//!
//! Every reference value here is recomputed by a naive oracle in this file
//! rather than through library helpers.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::Instant;

use common::fuzz::{random_op, Run};
use common::{config, Harness};
use proctor_core::canonical;
use proctor_core::domain::{Lane, ModelId, Role, Stamp, StreamId, SuiteState, TestId};
use proctor_core::orchestrator::{replay_text, requests, Event, State};
use proctor_core::reservoir::{next_windows, verify_bundle, LiveEntry, Reservoir};
use proctor_core::scoring::{
    contributor_score, model_score, reviewer_score, test_weight, ModelScore, WeightedScore,
};
use proctor_core::sim::{run_scenario, Scenario, SimReport};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- oracles

fn oracle_weight(q: f64, rho: f64) -> f64 {
    let r = if rho / 100.0 < 2.0 { rho / 100.0 } else { 2.0 };
    let w = 0.7 * q + 0.3 * r;
    if w > 0.0 {
        w
    } else {
        0.0
    }
}

fn oracle_pearson(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    let vx = n * sxx - sx * sx;
    let vy = n * syy - sy * sy;
    if vx <= 1e-12 || vy <= 1e-12 {
        return 0.0;
    }
    (n * sxy - sx * sy) / (vx.sqrt() * vy.sqrt())
}

fn oracle_model_score(records: &[WeightedScore], registered_at: Stamp) -> Option<f64> {
    let reg = (registered_at.tick, registered_at.seq);
    let mut num = 0.0;
    let mut den = 0.0;
    for r in records {
        if let Some(p) = r.suite_published_at {
            if (p.tick, p.seq) < reg {
                continue;
            }
        }
        num += r.weight * r.score;
        den += r.weight;
    }
    if den > 0.0 {
        Some(num / den)
    } else {
        None
    }
}

fn oracle_retirement(
    live: &[(TestId, Stamp)],
    weights: &BTreeMap<TestId, Option<f64>>,
    eligible: &BTreeSet<TestId>,
) -> Option<TestId> {
    let mut best_zero: Option<(Stamp, TestId)> = None;
    let mut best: Option<(Stamp, TestId)> = None;
    for &(id, at) in live {
        if !eligible.contains(&id) {
            continue;
        }
        let Some(Some(w)) = weights.get(&id) else {
            continue;
        };
        if best.is_none_or(|(b, _)| at < b) {
            best = Some((at, id));
        }
        if *w == 0.0 && best_zero.is_none_or(|(b, _)| at < b) {
            best_zero = Some((at, id));
        }
    }
    best_zero.or(best).map(|(_, id)| id)
}

/// Spearman over untied values via rank differences.
fn oracle_spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|a, b| v[*a].partial_cmp(&v[*b]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (pos, i) in idx.into_iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    };
    let (rx, ry) = (rank(xs), rank(ys));
    let n = xs.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

// ---------------------------------------------------------------- fixtures

fn scenario(file: &str) -> Scenario {
    let path = format!("{}/../../scenarios/{file}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    Scenario::from_toml_str(&text).unwrap()
}

fn run(file: &str, seed: u64) -> SimReport {
    run_scenario(&scenario(file), seed).unwrap()
}

/// A protocol instance with reviewed suites and models of random ability.
fn random_state(seed: u64) -> Harness {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut h = Harness::new(config(rng.gen_range(3..8), 0.0), seed);
    let contributors: Vec<_> = (0..3).map(|_| h.participant(Role::Contributor, 200).0).collect();
    let reviewers = h.reviewers(4);
    for _ in 0..rng.gen_range(3..7) {
        h.model(rng.gen_range(0.05..0.95));
    }
    for _ in 0..rng.gen_range(4..10) {
        let c = contributors.choose(&mut rng).unwrap().clone();
        if !h.orch.state().participants[&requests::participant_id(&c)].is_active() {
            continue;
        }
        h.submit(&c, rng.gen_range(3..12));
        for r in &reviewers {
            if h.orch.state().participants[&requests::participant_id(r)].is_active() {
                h.review_all(std::slice::from_ref(r), rng.gen_range(-1..=2));
            }
        }
        h.orch.advance_days(rng.gen_range(0..2) + 1).unwrap();
    }
    h
}

fn model_order(st: &State) -> Vec<Vec<ModelId>> {
    st.build_leaderboards()
        .models
        .iter()
        .map(|b| b.entries.iter().map(|e| e.id).collect())
        .collect()
}

fn events(h: &Harness) -> Vec<Event> {
    h.orch
        .audit()
        .snapshot_from(0)
        .iter()
        .map(|r| canonical::from_bytes::<Event>(&r.payload).unwrap())
        .collect()
}

/// A state in which at least one suite was published, so a model
/// registered afterwards is exposed to it.
fn state_with_publication(seed: u64) -> Option<(Harness, TestId, ModelId)> {
    let mut h = Harness::new(config(1, 0.0), seed);
    let (alice, _) = h.participant(Role::Contributor, 200);
    let reviewers = h.reviewers(3);
    h.model(0.5);
    let first = h.submit(&alice, 6).id();
    h.review_all(&reviewers, 2);
    h.submit(&alice, 6);
    h.review_all(&reviewers, 1);
    if h.orch.state().suites[&first].state != SuiteState::Published {
        return None;
    }
    let (_, late) = h.model(0.5);
    Some((h, first, late))
}

// ---------------------------------------------------------------- criteria

fn c1_test_weight() -> Outcome {
    let n = 100;
    let q = |i: usize| -1.0 + 3.0 * i as f64 / (n - 1) as f64;
    let rho = |j: usize| 400.0 * j as f64 / (n - 1) as f64;
    let mut max_err: f64 = 0.0;
    let mut monotone_breaks = 0;
    for i in 0..n {
        for j in 0..n {
            let w = test_weight(q(i), rho(j));
            max_err = max_err.max((w - oracle_weight(q(i), rho(j))).abs());
            if i + 1 < n && test_weight(q(i + 1), rho(j)) < w {
                monotone_breaks += 1;
            }
            if j + 1 < n && test_weight(q(i), rho(j + 1)) < w {
                monotone_breaks += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut outside = 0;
    for _ in 0..10_000 {
        let w = test_weight(rng.gen_range(-1.0..=2.0), rng.gen_range(0.0..1000.0));
        if !(0.0..=2.0).contains(&w) {
            outside += 1;
        }
    }
    check(
        max_err <= 1e-12 && monotone_breaks == 0 && outside == 0,
        format!("max |err| {max_err:.1e} (tol 1e-12), {monotone_breaks} monotonicity breaks, {outside} outside [0,2]"),
    )
}

fn c2_reputation_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut e_contrib, mut e_review, mut e_model): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut unranked_mismatch = 0;
    for _ in 0..1000 {
        let qs: Vec<f64> = (0..rng.gen_range(0..50)).map(|_| rng.gen_range(-1.0..=2.0)).collect();
        let bonus: i64 = rng.gen_range(-100..=100);
        let naive = qs.iter().fold(0.0, |a, q| a + q) + bonus as f64;
        e_contrib = e_contrib.max((contributor_score(&qs, bonus) - naive).abs());

        let pairs: Vec<(f64, f64)> = (0..rng.gen_range(2..40))
            .map(|_| (rng.gen_range(-1..=2) as f64, rng.gen_range(-1.0..=2.0)))
            .collect();
        e_review = e_review.max((reviewer_score(&pairs).unwrap() - oracle_pearson(&pairs)).abs());

        let reg = Stamp::new(rng.gen_range(0..50), rng.gen_range(0..50));
        let records: Vec<WeightedScore> = (0..rng.gen_range(0..20))
            .map(|_| WeightedScore {
                weight: if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..2.0) },
                score: rng.gen_range(0.0..=1.0),
                suite_published_at: rng
                    .gen_bool(0.5)
                    .then(|| Stamp::new(rng.gen_range(0..50), rng.gen_range(0..50))),
            })
            .collect();
        match (model_score(&records, reg), oracle_model_score(&records, reg)) {
            (ModelScore::Ranked(a), Some(b)) => e_model = e_model.max((a - b).abs()),
            (ModelScore::Unranked, None) => {}
            _ => unranked_mismatch += 1,
        }
    }
    let conventions = [
        reviewer_score(&[(1.0, 0.0), (1.0, 1.0), (1.0, 2.0)]) == Ok(0.0),
        reviewer_score(&[(0.0, 1.0), (1.0, 1.0), (2.0, 1.0)]) == Ok(0.0),
        reviewer_score(&[(1.0, 1.0)]).is_err(),
        reviewer_score(&[]).is_err(),
        (reviewer_score(&[(-1.0, 0.0), (0.0, 0.5), (2.0, 1.5)]).unwrap() - 1.0).abs() < 1e-12,
        (reviewer_score(&[(2.0, 0.0), (1.0, 1.0), (0.0, 2.0)]).unwrap() + 1.0).abs() < 1e-12,
    ];
    let conv_ok = conventions.iter().filter(|c| **c).count();
    check(
        e_contrib <= 1e-9 && e_review <= 1e-9 && e_model <= 1e-9 && unranked_mismatch == 0 && conv_ok == conventions.len(),
        format!(
            "max |err| contributor {e_contrib:.1e}, reviewer {e_review:.1e}, model {e_model:.1e} (tol 1e-9); \
             {unranked_mismatch} unranked mismatches; {conv_ok}/{} degenerate conventions",
            conventions.len()
        ),
    )
}

fn c3_ranking_invariance() -> Outcome {
    let mut changed = Vec::new();
    let mut ranked_models = 0;
    for seed in 0..100 {
        let h = random_state(seed);
        let base = h.orch.state();
        let order = model_order(base);
        ranked_models += order.iter().map(Vec::len).sum::<usize>();
        for c in [0.01, 1.0, 100.0] {
            let mut st = base.clone();
            for s in st.suites.values_mut() {
                s.weight = s.weight.map(|w| w * c);
            }
            if model_order(&st) != order {
                changed.push((seed, c));
            }
        }
    }
    check(
        changed.is_empty(),
        format!("100 states, {ranked_models} board entries, ranking changed under scaling in {changed:?}"),
    )
}

fn c4_evaluate_once_and_temporal_fairness(runs: &[Run]) -> Outcome {
    let n = runs.len();
    let mut duplicates = 0;
    let mut records = 0;
    for r in runs {
        let t = r.log_violations();
        duplicates += t.duplicates;
        records += t.records;
    }

    // A repeated ScoreRecorded is rejected by the state machine.
    let mut accepted_duplicates = 0;
    let mut probed = 0;
    for r in runs {
        let st = r.h.orch.state();
        let Some(rec) = st.records.values().next() else { continue };
        probed += 1;
        let mut clone = st.clone();
        let stamp = Stamp::new(clone.now, clone.head.seq + 1);
        if clone.apply(stamp, &Event::ScoreRecorded { record: rec.clone() }).is_ok() {
            accepted_duplicates += 1;
        }
    }

    // Pure scorer: a record published before registration changes nothing.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut pure_breaks = 0;
    for _ in 0..1000 {
        let reg = Stamp::new(rng.gen_range(10..50), rng.gen_range(0..50));
        let mut records: Vec<WeightedScore> = (0..rng.gen_range(0..15))
            .map(|_| WeightedScore {
                weight: rng.gen_range(0.0..2.0),
                score: rng.gen_range(0.0..=1.0),
                suite_published_at: rng.gen_bool(0.5).then(|| Stamp::new(rng.gen_range(0..80), 0)),
            })
            .collect();
        let without = model_score(&records, reg);
        let stale = WeightedScore {
            weight: rng.gen_range(0.1..5.0),
            score: rng.gen_range(0.0..=1.0),
            suite_published_at: Some(Stamp::new(rng.gen_range(0..reg.tick), 0)),
        };
        records.insert(rng.gen_range(0..=records.len()), stale);
        if model_score(&records, reg) != without {
            pure_breaks += 1;
        }
    }

    // Live state: inject a record for the late model on the suite published
    // before it registered.
    let mut state_breaks = 0;
    let mut state_trials = 0;
    for seed in 0..20 {
        let Some((h, published, late)) = state_with_publication(seed) else { continue };
        let st = h.orch.state();
        let stream = st.suites[&published].stream;
        for aggregate in [0.0, 0.5, 1.0] {
            state_trials += 1;
            let mut injected = st.clone();
            let mut rec = st.records.values().find(|r| r.test_id == published).unwrap().clone();
            rec.model_id = late;
            rec.aggregate = aggregate;
            rec.item_scores = vec![aggregate; rec.item_scores.len()];
            injected.records.insert((late, published), rec);
            if injected.model_score_on(&late, &stream) != st.model_score_on(&late, &stream) {
                state_breaks += 1;
            }
        }
    }
    check(
        duplicates == 0 && accepted_duplicates == 0 && pure_breaks == 0 && state_breaks == 0 && state_trials > 0,
        format!(
            "{n} fuzz runs, {records} records, {duplicates} duplicates; {accepted_duplicates}/{probed} re-applied records accepted; \
             stale-record score changes: {pure_breaks}/1000 scorer, {state_breaks}/{state_trials} state"
        ),
    )
}

fn c5_reservoir(runs: &[Run], fuzz_capacity_breaks: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let stream = StreamId::named("s");
    let mut disagreements = 0;
    for _ in 0..10_000 {
        let capacity = rng.gen_range(1..12);
        let mut r = Reservoir::new(stream, capacity);
        let mut live = Vec::new();
        let mut weights = BTreeMap::new();
        let mut eligible = BTreeSet::new();
        let mut ticks: Vec<u64> = (0..200).collect();
        ticks.shuffle(&mut rng);
        for (i, tick) in ticks.into_iter().take(rng.gen_range(0..=capacity)).enumerate() {
            let id = TestId(rng.gen());
            let at = Stamp::new(tick, i as u64);
            r.live.push(LiveEntry { test_id: id, admitted_at: at, lane: Lane::Immediate });
            live.push((id, at));
            let w = match rng.gen_range(0..4) {
                0 => None,
                1 => Some(0.0),
                _ => Some(rng.gen_range(0.0..2.0)),
            };
            if rng.gen_bool(0.9) {
                weights.insert(id, w);
            }
            if rng.gen_bool(0.8) {
                eligible.insert(id);
            }
        }
        let expected = oracle_retirement(&live, &weights, &eligible);
        let got = r.retire_one(&weights, |id| eligible.contains(id)).ok();
        let moved = got.is_none_or(|id| r.retired_queue == vec![id] && !r.is_live(&id));
        if got != expected || !moved {
            disagreements += 1;
        }
    }

    let mut overfull = 0;
    for _ in 0..1000 {
        let capacity = rng.gen_range(1..6);
        let mut r = Reservoir::new(stream, capacity);
        let mut weights = BTreeMap::new();
        for step in 0..60u64 {
            if rng.gen_bool(0.7) {
                let id = TestId(rng.gen());
                let _ = r.admit(id, Stamp::new(step, 0), Lane::Immediate, &weights, |_| true);
                weights.insert(id, Some(rng.gen_range(0.0..1.0)));
            } else {
                let _ = r.retire_one(&weights, |_| true);
            }
            if r.live.len() > capacity {
                overfull += 1;
            }
        }
    }

    let (mut after, mut again, mut published) = (0, 0, 0);
    for r in runs {
        let t = r.log_violations();
        after += t.after_publication;
        again += t.unpublished_again;
        published += t.published;
    }
    check(
        disagreements == 0 && overfull == 0 && fuzz_capacity_breaks == 0 && after == 0 && again == 0 && published > 0,
        format!(
            "{disagreements}/10000 oracle disagreements; capacity exceeded {overfull} times (random ops) and \
             {fuzz_capacity_breaks} (fuzz); {published} published suites, {after} scored after publication, {again} left publication"
        ),
    )
}

fn c6_integrity() -> Outcome {
    let mut h = Harness::new(config(2, 0.0), 6);
    let (alice, _) = h.participant(Role::Contributor, 200);
    let reviewers = h.reviewers(4);
    h.model(0.8);
    h.model(0.3);
    let mut published = None;
    for _ in 0..4 {
        let id = h.submit(&alice, 8).id();
        published.get_or_insert(id);
        h.review_all(&reviewers, 2);
        h.orch.advance_days(1).unwrap();
    }
    let first = published.unwrap();
    let bundle = h.orch.bundle(&first).expect("first suite published").clone();
    let key = h.orch.server_key();
    let baseline_ok = verify_bundle(&bundle, Some(&key)).is_ok();

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let names: Vec<String> = bundle.files.keys().cloned().collect();
    let mut bundle_missed = 0;
    for _ in 0..1000 {
        let mut b = bundle.clone();
        let name = names.choose(&mut rng).unwrap();
        let bytes = b.files.get_mut(name).unwrap();
        let i = rng.gen_range(0..bytes.len());
        bytes[i] ^= 1 << rng.gen_range(0..8);
        if verify_bundle(&b, Some(&key)).is_ok() {
            bundle_missed += 1;
        }
    }

    let text = h.orch.audit_text().into_bytes();
    let report = replay_text(&text);
    let mut log_missed = 0;
    for _ in 0..1000 {
        let mut t = text.clone();
        let i = rng.gen_range(0..t.len());
        t[i] ^= 1 << rng.gen_range(0..8);
        if replay_text(&t).is_ok() {
            log_missed += 1;
        }
    }

    let logged: Vec<_> = events(&h)
        .into_iter()
        .filter_map(|e| match e {
            Event::LeaderboardsRebuilt { hash } => Some(hash),
            _ => None,
        })
        .collect();
    let (hashes_match, export_identical) = match &report {
        Ok(r) => (
            r.board_hashes.iter().map(|(_, h)| *h).collect::<Vec<_>>() == logged
                && r.final_board_hash() == h.orch.leaderboards().map(|e| e.hash()),
            r.state.last_export.as_ref().map(|e| e.to_text()) == h.orch.state().last_export.as_ref().map(|e| e.to_text()),
        ),
        Err(_) => (false, false),
    };
    check(
        baseline_ok && bundle_missed == 0 && log_missed == 0 && hashes_match && export_identical && !logged.is_empty(),
        format!(
            "undetected flips: bundle {bundle_missed}/1000, audit log {log_missed}/1000; \
             {} rebuild hashes reproduced: {hashes_match}; export text identical: {export_identical}",
            logged.len()
        ),
    )
}

fn c7_convergence() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in [1, 2, 3] {
        let r = run("contamination.toml", seed);
        let inflation = r.metric("preliminary_inflation").unwrap_or(f64::NAN);
        let gap = r.metric("max_twin_gap").unwrap_or(f64::NAN);
        let converged = r.models.iter().filter(|m| m.contaminated).all(|m| m.converged);
        ok &= inflation > 0.1 && gap < 0.05 && converged;
        lines.push(format!("seed {seed}: inflation {inflation:.3} gap {gap:.4} converged {converged}"));
    }
    check(ok, format!("{} (need inflation > 0.1, gap < 0.05)", lines.join("; ")))
}

fn c8_mechanism_properties() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in [1, 2, 3] {
        let honest = run("honest.toml", seed);
        let truth: Vec<f64> = honest.models.iter().map(|m| m.theta).collect();
        let got: Vec<f64> = honest.models.iter().map(|m| m.score.unwrap_or(f64::NEG_INFINITY)).collect();
        let fidelity = oracle_spearman(&truth, &got);

        let spam = run("spam_heavy.toml", seed);
        let base = honest.scores();
        let perturbed = spam.scores();
        let names: Vec<&String> = base.keys().filter(|n| perturbed.contains_key(*n)).collect();
        let a: Vec<f64> = names.iter().map(|n| base[*n]).collect();
        let b: Vec<f64> = names.iter().map(|n| perturbed[*n]).collect();
        let perturbation = if names.len() == base.len() && names.len() >= 2 { 1.0 - oracle_spearman(&a, &b) } else { f64::NAN };

        let inverted = run("inverted_reviewers.toml", seed);
        let separation = inverted.reviewers.separation.unwrap_or(f64::NAN);

        ok &= fidelity == 1.0 && perturbation < 0.05 && separation > 0.5;
        lines.push(format!(
            "seed {seed}: spearman {fidelity:.3}, spam perturbation {perturbation:.3}, separation {separation:.3}"
        ));
    }
    check(ok, format!("{} (need 1.0, < 0.05, > 0.5)", lines.join("; ")))
}

fn c9_cohorts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut schedule_errors = 0;
    for _ in 0..1000 {
        let origin = rng.gen_range(0..1_000_000u64);
        let tpd = rng.gen_range(1..100u64);
        let max = rng.gen_range(0..10u32);
        for (i, w) in next_windows(StreamId::named("s"), origin, max, tpd).iter().enumerate() {
            if w.index != i as u32 || w.closes_at != origin + (1u64 << i) * tpd {
                schedule_errors += 1;
            }
        }
    }

    let mut h = Harness::new(config(16, 1.0), 9);
    let (alice, _) = h.participant(Role::Contributor, 200);
    let models: Vec<_> = [0.2, 0.5, 0.8].iter().map(|t| h.model(*t)).collect();
    let mut windows_checked = 0;
    let mut mismatched = Vec::new();
    for round in 0..6 {
        for (creator, m) in &models {
            let enrolled = h.orch.state().streams[&h.stream]
                .windows
                .iter()
                .any(|w| w.registered.contains(m) && w.state == proctor_core::reservoir::WindowState::Open);
            if !enrolled {
                let sig = requests::cohort_join(creator, *m, h.stream);
                h.orch.join_cohort(*m, h.stream, sig).unwrap();
            }
        }
        for _ in 0..2 {
            h.submit(&alice, 4);
        }
        h.orch.advance_days(1 + round % 3).unwrap();
    }

    let st = h.orch.state();
    let tpd = st.config.ticks_per_day;
    for e in events(&h) {
        if let Event::WindowsScheduled { stream, origin, first_index } = e {
            for w in &st.streams[&stream].windows {
                if w.index >= first_index && w.index <= first_index + st.config.max_window_index {
                    let i = w.index - first_index;
                    if w.closes_at != origin + (1u64 << i) * tpd {
                        schedule_errors += 1;
                    }
                }
            }
        }
    }
    for w in &st.streams[&h.stream].windows {
        if w.test_set_hold.is_empty() {
            continue;
        }
        windows_checked += 1;
        for m in &w.registered {
            let scored: BTreeSet<TestId> =
                st.records.values().filter(|r| r.model_id == *m && r.cohort == Some(w.id)).map(|r| r.test_id).collect();
            let responded: BTreeSet<TestId> = w
                .test_set_hold
                .iter()
                .filter(|t| h.orch.sealed().responses.get(t).is_some_and(|r| r.contains_key(m)))
                .copied()
                .collect();
            if scored != w.test_set_hold || responded != w.test_set_hold {
                mismatched.push(w.index);
            }
        }
        if w.registered.len() < 3 {
            mismatched.push(w.index);
        }
    }
    check(
        schedule_errors == 0 && windows_checked > 0 && mismatched.is_empty(),
        format!(
            "{schedule_errors} close-time errors; {windows_checked} evaluated windows with 3 models, mismatched sets in {mismatched:?}"
        ),
    )
}

fn main() -> ExitCode {
    let fuzz_start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let mut capacity_breaks = 0;
    let runs: Vec<Run> = (0..200u64)
        .map(|seed| {
            let hold = [0.0, 0.5, 1.0][seed as usize % 3];
            let mut r = Run::new(rng.gen_range(1..5), hold, seed);
            for _ in 0..rng.gen_range(20..80) {
                r.step(&random_op(&mut rng));
                capacity_breaks += r.state_violations().len();
            }
            r
        })
        .collect();
    eprintln!("fuzz corpus: 200 runs in {:.1?}", fuzz_start.elapsed());

    let criteria: Vec<(&str, Criterion<'_>)> = vec![
        ("test weight formula", Box::new(c1_test_weight)),
        ("reputation and score oracles", Box::new(c2_reputation_oracles)),
        ("ranking invariance under weight scaling", Box::new(c3_ranking_invariance)),
        ("evaluate-once and temporal fairness", Box::new(|| c4_evaluate_once_and_temporal_fairness(&runs))),
        ("reservoir rules", Box::new(|| c5_reservoir(&runs, capacity_breaks))),
        ("integrity and replay", Box::new(c6_integrity)),
        ("contaminated model convergence", Box::new(c7_convergence)),
        ("mechanism properties", Box::new(c8_mechanism_properties)),
        ("cohort scheduler", Box::new(c9_cohorts)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {}. {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {}. {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

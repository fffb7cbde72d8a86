//! Acceptance suite: one PASS/FAIL line per criterion with its runtime.
//!
//! Exits non-zero when a criterion fails, unless it is listed in
//! `KNOWN_RED` (a documented, deliberately unmet target). A known-red
//! criterion that starts passing also fails the run, so the list cannot go
//! stale.

use std::time::{Duration, Instant};

use copilot_sim::closed_loop::{run_closed_loop, LoopConfig};
use copilot_sim::control::{solve_qp, QpProblem};
use copilot_sim::harness::{
    run_ablation, run_plan, weather_pairs, AblationConfig, AblationReport, BackendKind, ExperimentPlan, HarnessContext,
    InstructionSpec,
};
use copilot_sim::memory::{embed, MemoryStore, NewEntry, Retrieved};
use copilot_sim::metrics::{
    collision_steps, command_alignment, driving_score, equal_param_weights, relative_reduction, scenario_alignment,
    takeover_rate, time_to_collision, MetricKey, ScoreMap, ScoringConfig, SystemKind, TakeoverFilter, TakeoverRecord,
    Ttc,
};
use copilot_sim::policy::{default_baseline, ActionMatrix, ParamSet, PolicyOrigin, RangeTable, Style};
use copilot_sim::policygen::{DirectnessLevel, Weather};
use copilot_sim::sim::{build_scenario, kmh, LogMeta, ScenarioConfig, ScenarioKind};
use copilot_sim::ParamRanges;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria expected to fail; the analysis is kept with the project notes.
const KNOWN_RED: &[&str] = &["mpc-closed-loop"];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 9] = [
        ("command-alignment-anchors", Duration::from_secs(1), command_alignment_anchors),
        ("driving-score-weighted-sum", Duration::from_secs(1), driving_score_sum),
        ("takeover-identities", Duration::from_secs(1), takeover_identities),
        ("qp-oracle", Duration::from_secs(30), qp_oracle),
        ("mpc-closed-loop", Duration::from_secs(10), mpc_closed_loop),
        ("retrieval-oracle", Duration::from_secs(20), retrieval_oracle),
        ("personalization", Duration::from_secs(10), personalization),
        ("conservatism", Duration::from_secs(10), conservatism),
        ("determinism", Duration::from_secs(30), determinism),
    ];
    let mut unexpected = 0;
    let mut passed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let in_budget = elapsed <= budget;
        let pass = result.pass && in_budget;
        let known = KNOWN_RED.contains(&name);
        let mut detail = result.detail;
        if !in_budget {
            detail.push_str(&format!("; over budget {:.1}s", budget.as_secs_f64()));
        }
        if known {
            detail.push_str(if pass { "; listed as known-red but passed" } else { "; known-red" });
        }
        println!("{} {name:<28} {:>8.3}s  {detail}", if pass { "PASS" } else { "FAIL" }, elapsed.as_secs_f64());
        passed += pass as usize;
        if pass == known {
            unexpected += 1;
        }
    }
    println!("{passed}/9 criteria pass; {unexpected} unexpected result(s)");
    if unexpected > 0 {
        std::process::exit(1);
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Breakpoints on a 1/64 grid so the midpoint anchors are exactly
/// representable and any error belongs to the scoring, not the input.
fn random_ranges(r: &mut impl Rng) -> ParamRanges {
    let step = |r: &mut dyn rand::RngCore, lo: i32, hi: i32| f64::from(r.random_range(lo..hi)) / 64.0;
    let min = step(r, -640, 640);
    let lower = min + step(r, 1, 320);
    let upper = lower + step(r, 1, 320);
    let max = upper + step(r, 1, 320);
    ParamRanges { min, lower, upper, max }
}

fn policy_at(p: ParamSet<f64>) -> ActionMatrix {
    ActionMatrix::from_params("probe", PolicyOrigin::Baseline, &p)
}

/// At the five anchors of every parameter, for 1,000 random range tables.
fn command_alignment_anchors() -> Outcome {
    let mut r = rng(1);
    let weights = equal_param_weights();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let table = ParamSet::from_fn(|_| random_ranges(&mut r));
        let anchors: [(fn(&ParamRanges) -> f64, f64); 5] = [
            (|g| g.min, 0.0),
            (|g| 0.5 * (g.min + g.lower), 50.0),
            (|g| g.lower, 100.0),
            (|g| 0.5 * (g.upper + g.max), 50.0),
            (|g| g.max, 0.0),
        ];
        for (at, expected) in anchors {
            let p = policy_at(table.map(|_, g| at(g)));
            let got = command_alignment(&p, &table, &weights).expect("valid weights");
            worst = worst.max((got - expected).abs());
        }
    }
    outcome(worst <= 1e-12, format!("max |error| {worst:.1e} over 5,000 anchor evaluations"))
}

fn driving_score_sum() -> Outcome {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let raw: Vec<f64> = MetricKey::ALL.iter().map(|_| r.random_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights: ScoreMap = MetricKey::ALL.iter().zip(&raw).map(|(k, w)| (*k, w / total)).collect();
        let scores: ScoreMap = MetricKey::ALL.iter().map(|k| (*k, r.random_range(0.0..=100.0))).collect();
        let expected: f64 = weights.iter().map(|(k, w)| w * scores[k]).sum();
        let got = driving_score(&scores, &weights).expect("weights sum to 1");
        worst = worst.max((got - expected).abs());
    }
    let mut heavy = ScoreMap::new();
    heavy.insert(MetricKey::Ttc, 0.6);
    heavy.insert(MetricKey::Ax, 0.5);
    let mut negative = ScoreMap::new();
    negative.insert(MetricKey::Ttc, 1.2);
    negative.insert(MetricKey::Ax, -0.2);
    let scores: ScoreMap = MetricKey::ALL.iter().map(|k| (*k, 50.0)).collect();
    let rejected = driving_score(&scores, &heavy).is_err() && driving_score(&scores, &negative).is_err();
    outcome(
        worst <= 1e-12 && rejected,
        format!("max |error| {worst:.1e} over 10,000 vectors; bad weight sums rejected: {rejected}"),
    )
}

fn records(n: usize, taken: usize, level: DirectnessLevel, system: SystemKind) -> Vec<TakeoverRecord> {
    (0..n)
        .map(|i| TakeoverRecord {
            session: format!("s{i}"),
            instruction: "x".into(),
            directness: level,
            system,
            scenario: None,
            taken_over: i < taken,
        })
        .collect()
}

fn takeover_identities() -> Outcome {
    let all = TakeoverFilter::default();
    let ours = takeover_rate(&records(36, 2, DirectnessLevel::L1, SystemKind::Ours), &all).unwrap();
    let base = takeover_rate(&records(36, 7, DirectnessLevel::L1, SystemKind::Baseline), &all).unwrap();
    let mut l3 = records(36, 3, DirectnessLevel::L3, SystemKind::Ours);
    l3.extend(records(36, 13, DirectnessLevel::L3, SystemKind::Baseline));
    let by = |system| TakeoverFilter { directness: Some(DirectnessLevel::L3), system: Some(system), ..Default::default() };
    let l3_ours = takeover_rate(&l3, &by(SystemKind::Ours)).unwrap();
    let l3_base = takeover_rate(&l3, &by(SystemKind::Baseline)).unwrap();
    let reduction = relative_reduction(l3_base, l3_ours).unwrap();
    let ok = (ours - 5.56).abs() <= 0.01
        && (base - 19.44).abs() <= 0.01
        && (l3_ours - 8.33).abs() <= 0.01
        && (l3_base - 36.11).abs() <= 0.01
        && (reduction - 76.9).abs() <= 0.1;
    outcome(ok, format!("{ours:.2}% vs {base:.2}%; L3 {l3_ours:.2}% vs {l3_base:.2}% → {reduction:.2}% reduction"))
}

/// Box-constrained QP with SPD Hessian `MᵀM + I`, M uniform in [-1, 1].
fn random_qp(n: usize, r: &mut impl Rng) -> QpProblem {
    let m = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
    let h = m.transpose() * &m + DMatrix::identity(n, n);
    let g = DVector::from_fn(n, |_, _| r.random_range(-3.0..3.0));
    let lower = DVector::from_fn(n, |_, _| r.random_range(-1.5..0.0));
    let upper = DVector::from_fn(n, |i, _| lower[i] + r.random_range(0.2..2.0));
    QpProblem::new(h, g, lower, upper).expect("valid problem")
}

/// Minimizer over the lattice `h·ℤⁿ` intersected with the box (bounds
/// included as lattice points): exact line minimization per coordinate,
/// then a full ±1-step neighbourhood scan, repeated until nothing improves.
fn grid_oracle(p: &QpProblem, h: f64) -> DVector<f64> {
    let n = p.dim();
    let snap = |v: f64, i: usize| ((v / h).round() * h).clamp(p.lower[i], p.upper[i]);
    let mut x = DVector::from_fn(n, |i, _| snap(0.5 * (p.lower[i] + p.upper[i]), i));
    let mut f = p.objective(&x);
    loop {
        // Coordinate sweeps.
        loop {
            let mut moved = false;
            for i in 0..n {
                let rest: f64 = (0..n).filter(|&j| j != i).map(|j| p.h[(i, j)] * x[j]).sum();
                let star = -(p.g[i] + rest) / p.h[(i, i)];
                let down = ((star / h).floor() * h).clamp(p.lower[i], p.upper[i]);
                let up = ((star / h).ceil() * h).clamp(p.lower[i], p.upper[i]);
                for c in [down, up, p.lower[i], p.upper[i]] {
                    let old = x[i];
                    x[i] = c;
                    let fc = p.objective(&x);
                    if fc < f - 1e-15 {
                        f = fc;
                        moved = true;
                    } else {
                        x[i] = old;
                    }
                }
            }
            if !moved {
                break;
            }
        }
        // Neighbourhood scan over all 3ⁿ lattice moves.
        let mut best = (f, None);
        let mut step = vec![-1i32; n];
        loop {
            let cand = DVector::from_fn(n, |i, _| (x[i] + step[i] as f64 * h).clamp(p.lower[i], p.upper[i]));
            let fc = p.objective(&cand);
            if fc < best.0 - 1e-15 {
                best = (fc, Some(cand));
            }
            let mut i = 0;
            while i < n && step[i] == 1 {
                step[i] = -1;
                i += 1;
            }
            if i == n {
                break;
            }
            step[i] += 1;
        }
        match best {
            (fb, Some(xb)) => {
                f = fb;
                x = xb;
            }
            (_, None) => return x,
        }
    }
}

fn qp_oracle() -> Outcome {
    let mut r = rng(4);
    let (mut worst_dx, mut worst_kkt, mut active) = (0.0f64, 0.0f64, 0usize);
    for k in 0..500 {
        let n = 1 + k % 8;
        let p = random_qp(n, &mut r);
        let sol = solve_qp(&p).expect("solvable");
        let oracle = grid_oracle(&p, 1e-3);
        worst_dx = worst_dx.max((&sol.x - &oracle).amax());
        worst_kkt = worst_kkt.max(p.kkt_residual(&sol.x));
        active += (0..n).filter(|&i| sol.x[i] == p.lower[i] || sol.x[i] == p.upper[i]).count();
    }
    outcome(
        worst_dx <= 2e-3 && worst_kkt < 1e-8,
        format!("500 problems n=1..8, {active} active bounds; max |x - grid| {worst_dx:.1e}, max KKT {worst_kkt:.1e}"),
    )
}

fn mpc_closed_loop() -> Outcome {
    let cfg = ScoringConfig::default();
    let run = |kind| {
        let start = Instant::now();
        let spec = build_scenario(kind, &ScenarioConfig::default()).unwrap();
        let log = run_closed_loop(&spec, &default_baseline(), &LoopConfig::default(), LogMeta::new(kind, 0, "acc")).unwrap();
        (log, start.elapsed())
    };
    let (turn, t_turn) = run(ScenarioKind::LeftTurn);
    let lat = turn.samples.iter().filter(|s| s.t >= 1.0).map(|s| s.lateral_error.abs()).fold(0.0, f64::max);
    let (acc, t_acc) = run(ScenarioKind::Acceleration);
    let target = kmh(50.0);
    let steady = acc.samples.iter().filter(|s| s.t >= 12.0).map(|s| (s.v - target).abs()).fold(0.0, f64::max);
    let collisions = collision_steps(&acc, &cfg);
    let ttc = time_to_collision(&acc, &cfg);
    let ttc_ok = match ttc {
        Ttc::Unbounded => true,
        Ttc::Seconds(s) => s > cfg.ttc_threshold,
        Ttc::NotApplicable => false,
    };
    let fast = t_turn.as_secs_f64() < 5.0 && t_acc.as_secs_f64() < 5.0;
    let ttc_text = match ttc {
        Ttc::Seconds(s) => format!("{s:.2}s"),
        other => format!("{other:?}"),
    };
    outcome(
        lat < 0.3 && steady <= 0.1 && collisions == 0 && ttc_ok && fast,
        format!(
            "left-turn max lateral error {lat:.3} m ({:.2}s); acceleration worst |v - 50 km/h| after 12 s {steady:.3} m/s, \
             {collisions} collisions, min TTC {ttc_text} ({:.2}s)",
            t_turn.as_secs_f64(),
            t_acc.as_secs_f64()
        ),
    )
}

const WORDS: &[&str] = &[
    "go", "faster", "slow", "down", "keep", "gap", "turn", "smoothly", "late", "meeting", "comfortable", "relaxed", "speed",
    "up", "brake", "gently", "lane", "change", "rain", "night",
];

fn sentence(r: &mut impl Rng) -> String {
    if r.random_range(0..40) == 0 {
        return "?!".into(); // no tokens: degenerate query
    }
    let n = r.random_range(1..5);
    (0..n).map(|_| WORDS[r.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

/// Sorted scan written independently of the store: cosine of fresh
/// embeddings, similarity descending, newer first on ties; a query without
/// tokens ranks purely by recency.
fn brute_force(entries: &[(u64, Vec<f64>, f64)], query: &str, k: usize) -> Vec<(u64, f64)> {
    let q = embed(query);
    let qn = q.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut scored: Vec<(u64, f64)> = entries
        .iter()
        .map(|(seq, e, en)| {
            let en = *en;
            let dot: f64 = q.values.iter().zip(e).map(|(a, b)| a * b).sum();
            let sim = if qn == 0.0 || en == 0.0 { 0.0 } else { dot / (qn * en) };
            (*seq, sim)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.0.cmp(&a.0)));
    scored.truncate(k);
    scored
}

fn retrieval_oracle() -> Outcome {
    let mut r = rng(6);
    let mut mismatches = 0;
    let mut checks = 0;
    let mut ties = 0;
    for n in [10, 100, 10_000] {
        let mut store = MemoryStore::in_memory("oracle");
        let mut entries = Vec::with_capacity(n);
        for i in 0..n {
            let text = sentence(&mut r);
            let text = if text == "?!" { "go".to_string() } else { text };
            let seq = store
                .insert(NewEntry {
                    instruction: text.clone(),
                    scene: "weather: sunny".into(),
                    policy: default_baseline(),
                    feedback: None,
                    created_at: chrono::DateTime::UNIX_EPOCH + chrono::Duration::seconds(i as i64),
                })
                .unwrap();
            let e = embed(&text).values;
            let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            entries.push((seq, e, norm));
        }
        for _ in 0..200 {
            let q = sentence(&mut r);
            for k in [1, 3, 10] {
                let got: Vec<(u64, f64)> = store.retrieve(&q, k).iter().map(|x: &Retrieved| (x.entry.seq, x.similarity)).collect();
                let want = brute_force(&entries, &q, k);
                ties += want.windows(2).filter(|w| w[0].1 == w[1].1).count();
                checks += 1;
                if got != want {
                    mismatches += 1;
                }
            }
        }
    }
    outcome(mismatches == 0, format!("{checks} queries over stores of 10/100/10,000; {ties} tied neighbours; {mismatches} mismatches"))
}

fn policy_of(report: &AblationReport, config: AblationConfig) -> Vec<Vec<ActionMatrix>> {
    report
        .cells
        .iter()
        .filter(|c| c.config == config)
        .map(|c| c.trips.iter().map(|t| t.policy().expect("trip succeeded").clone()).collect())
        .collect()
}

fn personalization() -> Outcome {
    let plan = ExperimentPlan {
        scenarios: vec![ScenarioKind::Acceleration],
        instructions: vec![
            InstructionSpec::new("drive normally", Style::Moderate),
            InstructionSpec::new("I just want to enjoy the ride", Style::Moderate),
        ],
        weathers: vec![Weather::Sunny],
        backends: vec![BackendKind::Rule],
        seed: 1,
        ..ExperimentPlan::default()
    };
    let report = run_ablation(&plan, &HarnessContext::default()).expect("ablation runs");
    let preferred = RangeTable::default().profile(plan.persona.preferred_style).ranges;
    let align = |p: &ActionMatrix| command_alignment(p, &preferred, &equal_param_weights()).unwrap();
    let with = policy_of(&report, AblationConfig::WithMemory);
    let without = policy_of(&report, AblationConfig::WithoutMemory);
    let toward = with.iter().all(|trips| trips[1] != trips[0] && align(&trips[1]) > align(&trips[0]));
    let frozen = without.iter().all(|trips| trips.windows(2).all(|w| w[0].params() == w[1].params()));
    let (a_with, a_without) = (
        report.row(AblationConfig::WithMemory).mean_command_alignment.unwrap(),
        report.row(AblationConfig::WithoutMemory).mean_command_alignment.unwrap(),
    );
    outcome(
        toward && frozen && a_with > a_without,
        format!(
            "memory on: trip 2 moves toward preference in all {} sequences: {toward}; memory off identical: {frozen}; \
             alignment {a_with:.2} vs {a_without:.2}",
            with.len()
        ),
    )
}

fn conservatism() -> Outcome {
    let plan = ExperimentPlan::default();
    let out = run_plan(&plan, &HarnessContext::default()).expect("plan runs");
    let pairs = weather_pairs(&out.report.cells);
    let alignment = scenario_alignment(&pairs).unwrap_or(0.0);
    let kp_ok = pairs.iter().all(|(adverse, sunny)| adverse.pid.kp <= sunny.pid.kp);
    let expected = plan.scenarios.len() * plan.instructions.len() * 4;
    outcome(
        pairs.len() == expected && alignment == 100.0 && kp_ok && out.report.failed() == 0,
        format!("{} adverse/sunny pairs, scenario alignment {alignment:.1}%, kp(adverse) ≤ kp(sunny): {kp_ok}", pairs.len()),
    )
}

fn determinism() -> Outcome {
    let plan = ExperimentPlan::default();
    let ctx = HarnessContext::default();
    let a = run_plan(&plan, &ctx).expect("plan runs").report;
    let b = run_plan(&plan, &ctx).expect("plan runs").report;
    let (ja, jb) = (a.canonical_json(), b.canonical_json());
    outcome(ja == jb, format!("{} cells, {} bytes, identical: {}", a.cells.len(), ja.len(), ja == jb))
}

//! Acceptance gate. Each test prints one line:
//! `criterion N <name>: PASS|FAIL <detail>`.
//!
//! Run with `cargo test --test acceptance -- --nocapture --test-threads 1`.

use std::collections::BTreeMap;
use std::time::Instant;

use oam_collab::channel::{Channel, ChannelModel, ChannelParams};
use oam_collab::cli::{dispatch, parse_config};
use oam_collab::codec::{decode, encode, Constellation, Message, CARRIER_IDS};
use oam_collab::exec::Execution;
use oam_collab::invariants::{eval_invariant, invariance_scan, lookup, random_family_samples, registry};
use oam_collab::opexpr::{parse, PauliString};
use oam_collab::protocol::{
    bases_of_index, collaboration_test, estimate_expectation, run_protocol, simulate_state, BornTable, ProtocolOptions, Tally,
    DEFAULT_ROUNDS,
};
use oam_collab::qcore::{density_of, make_state, outcomes_of_index, pauli_matrix, Axis, Complex, Matrix2, Party};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const GOLDEN: &str = include_str!("golden/operators.json");

/// Entrywise tolerance against the stored golden operators.
const GOLDEN_TOL: f64 = 1e-12;
/// Relative deviation bound for exact invariance.
const INVARIANCE_TOL: f64 = 1e-10;
/// Bound on the weak-turbulence exponent.
const MIN_EXPONENT: f64 = 2.0;
/// Numerical slack of the corrected log-log fit at the default weak grid.
const EXPONENT_FIT_TOL: f64 = 1e-4;
const CHI_SQUARE_SIGNIFICANCE: f64 = 0.001;
const STDERR_SLOPE: f64 = -0.5;
const STDERR_SLOPE_TOL: f64 = 0.05;
const END_TO_END_SECONDS: f64 = 60.0;
const MAX_RANDOMIZED_MATCH_RATE: f64 = 0.05;
const COLLAB_SEEDS: u64 = 100;

/// Independent dense-oracle result: these are 0/0 on every family state.
const ORACLE_DEGENERATE_ON_FAMILY: [&str; 2] = ["I2", "I4"];

fn verdict(n: u32, name: &str, pass: bool, detail: &str) {
    println!("criterion {n} {name}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} {name} failed: {detail}");
}

fn survival(a2: f64) -> ChannelParams {
    ChannelParams::from_survival_probability(a2).unwrap()
}

fn quiet() -> ProtocolOptions {
    ProtocolOptions {
        timing: false,
        ..ProtocolOptions::default()
    }
}

fn golden_matrix(entries: &serde_json::Value) -> [[Complex; 8]; 8] {
    let mut m = [[Complex::new(0.0, 0.0); 8]; 8];
    for e in entries.as_array().unwrap() {
        let e = e.as_array().unwrap();
        let r = e[0].as_u64().unwrap() as usize;
        let c = e[1].as_u64().unwrap() as usize;
        m[r][c] = Complex::new(e[2].as_f64().unwrap(), e[3].as_f64().unwrap());
    }
    m
}

fn basis_projector(ket: usize, bra: usize, scale: f64) -> Matrix2 {
    let mut m = Matrix2::zeros();
    m[(ket, bra)] = Complex::new(scale, 0.0);
    m
}

#[test]
fn criterion_1_golden_operators() {
    let golden: serde_json::Value = serde_json::from_str(GOLDEN).unwrap();
    let mut worst = 0.0f64;
    let mut parsed = 0;
    let mut problems = Vec::new();
    for spec in registry() {
        for (part, text) in [("numerator", &spec.numerator_text), ("denominator", &spec.denominator_text)] {
            let expr = match parse(text) {
                Ok(e) => e,
                Err(e) => {
                    problems.push(format!("{} {part}: {e}", spec.id));
                    continue;
                }
            };
            parsed += 1;
            let op = expr.eval();
            let want = golden_matrix(&golden[&spec.id][part]);
            for (r, row) in want.iter().enumerate() {
                for (c, w) in row.iter().enumerate() {
                    worst = worst.max((op.matrix()[(r, c)] - w).norm());
                }
            }
        }
    }
    let as_written = ["I1", "I2", "I3", "I4", "I5", "I6", "I7", "I8"];
    if golden.as_object().unwrap().len() != registry().len() {
        problems.push("golden file and registry differ in size".into());
    }

    // Hermitian parts.
    for id in ["I1", "I2", "I3", "I4"] {
        let spec = lookup(id).unwrap();
        if !spec.numerator_operator().is_hermitian() || !spec.denominator_operator().is_hermitian() {
            problems.push(format!("{id} not Hermitian"));
        }
    }

    // Single-photon ladders with sy = [[0, i], [-i, 0]]: sx ± i sy = 2|∓l><±l|, 1 ± sz = 2|±l><±l|.
    let i = Complex::new(0.0, 1.0);
    let (sx, sy, sz) = (pauli_matrix(Axis::X), pauli_matrix(Axis::Y), pauli_matrix(Axis::Z));
    let id2 = Matrix2::identity();
    let ladders = [
        ("sx+i*sy", sx + sy * i, basis_projector(1, 0, 2.0)),
        ("sx-i*sy", sx - sy * i, basis_projector(0, 1, 2.0)),
        ("id+sz", id2 + sz, basis_projector(0, 0, 2.0)),
        ("id-sz", id2 - sz, basis_projector(1, 1, 2.0)),
    ];
    for (name, got, want) in &ladders {
        if (got - want).iter().any(|z| z.norm() > GOLDEN_TOL) {
            problems.push(format!("{name} is not the expected 2-level pattern"));
        }
    }
    // Three-photon ladder parts are single transitions 8|ket><bra|.
    let transitions = [
        ("I5", (5, 3), (6, 3)),
        ("I6", (5, 3), (0, 3)),
        ("I7", (5, 3), (7, 3)),
        ("I8", (6, 3), (5, 6)),
    ];
    for (id, num_at, den_at) in transitions {
        let spec = lookup(id).unwrap();
        for (op, at) in [(spec.numerator_operator(), num_at), (spec.denominator_operator(), den_at)] {
            for r in 0..8 {
                for c in 0..8 {
                    let want = if (r, c) == at { 8.0 } else { 0.0 };
                    if (op.matrix()[(r, c)] - Complex::new(want, 0.0)).norm() > GOLDEN_TOL {
                        problems.push(format!("{id}: entry ({r},{c})"));
                    }
                }
            }
        }
    }

    let pass = worst < GOLDEN_TOL && problems.is_empty() && parsed == 2 * registry().len();
    let detail = format!(
        "{parsed} expressions parsed ({} as written), max entry error {worst:.1e} (tol {GOLDEN_TOL:e}); problems: {problems:?}",
        2 * as_written.len()
    );
    verdict(1, "golden operators", pass, &detail);
}

#[test]
fn criterion_2_exact_invariance_collective() {
    let samples = random_family_samples(100, 20_240_601);
    let grid: Vec<ChannelParams> = [0.5, 0.7, 0.9, 0.99].into_iter().map(survival).collect();
    let report = invariance_scan(&samples, &[ChannelModel::Collective], &grid, Execution::default());

    let mut failing = BTreeMap::new();
    let mut summary = Vec::new();
    for id in report.non_degenerate_ids() {
        let dev = report.max_deviation(&id, ChannelModel::Collective).unwrap();
        summary.push(format!("{id}={dev:.1e}"));
        if dev >= INVARIANCE_TOL {
            failing.insert(id, dev);
        }
    }
    let degenerate: Vec<String> = report
        .degenerate_inputs
        .iter()
        .filter(|(_, &count)| count == samples.len())
        .map(|(id, _)| id.clone())
        .collect();
    let degeneracy_matches = degenerate == ORACLE_DEGENERATE_ON_FAMILY;

    let pass = failing.is_empty() && degeneracy_matches;
    let detail = format!(
        "max deviations [{}] (tol {INVARIANCE_TOL:e}); degenerate on family {degenerate:?} (oracle {ORACLE_DEGENERATE_ON_FAMILY:?}); above tolerance: {failing:?}",
        summary.join(", ")
    );
    verdict(2, "exact invariance (collective)", pass, &detail);
}

#[test]
fn criterion_3_weak_turbulence_limit() {
    let samples = random_family_samples(100, 20_240_602);
    let grid: Vec<ChannelParams> = oam_collab::invariants::DEFAULT_WEAK_CROSSTALK
        .iter()
        .map(|&b| ChannelParams::from_crosstalk(b).unwrap())
        .collect();
    let report = invariance_scan(&samples, &[ChannelModel::Independent], &grid, Execution::default());

    let mut pass = !report.exponents.is_empty();
    let mut parts = Vec::new();
    for fit in &report.exponents {
        match fit.exponent {
            Some(p) => {
                parts.push(format!("{}={p:.6}", fit.id));
                pass &= p >= MIN_EXPONENT - EXPONENT_FIT_TOL;
            }
            None => {
                parts.push(format!("{}=none", fit.id));
                pass = false;
            }
        }
    }
    // Deviation must also shrink monotonically towards b = 0.
    for id in report.non_degenerate_ids() {
        let devs: Vec<f64> = report.rows.iter().filter(|r| r.id == id).map(|r| r.deviation).collect();
        pass &= devs.windows(2).all(|w| w[0] < w[1]);
    }
    let detail = format!(
        "exponents [{}] (bound >= {MIN_EXPONENT}, fit tol {EXPONENT_FIT_TOL:e})",
        parts.join(", ")
    );
    verdict(3, "weak-turbulence limit (independent)", pass, &detail);
}

#[test]
fn criterion_4_sampling_fidelity() {
    let coeffs = encode(&Message::from_byte(0x5a), &Constellation::default()).unwrap();
    let rho = Channel::new(ChannelModel::Collective, survival(0.9)).apply(&density_of(&make_state(&coeffs)));
    let table = BornTable::new(&rho);

    // Chi-square over the 216 (bases, outcome) cells at n = 1e5.
    let n = 100_000usize;
    let tally = Tally::from_records(&simulate_state(&rho, n, 4_041, Execution::default()));
    let mut chi2 = 0.0;
    let mut cells = 0usize;
    let mut pooled_obs = 0.0;
    let mut pooled_exp = 0.0;
    let mut impossible_hits = 0u64;
    for b in 0..27 {
        let bases = bases_of_index(b);
        for (k, &p) in table.probabilities(bases).iter().enumerate() {
            let observed = tally.count(bases, outcomes_of_index(k)) as f64;
            let expected = n as f64 * p / 27.0;
            if p < 1e-15 {
                impossible_hits += observed as u64;
            } else if expected < 5.0 {
                pooled_obs += observed;
                pooled_exp += expected;
            } else {
                chi2 += (observed - expected).powi(2) / expected;
                cells += 1;
            }
        }
    }
    if pooled_exp > 0.0 {
        chi2 += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
        cells += 1;
    }
    let df = (cells - 1) as f64;
    let p_value = 1.0 - ChiSquared::new(df).unwrap().cdf(chi2);

    // Standard-error scaling for a one-body and a three-body estimate.
    let ns = [1_000usize, 10_000, 100_000, 1_000_000];
    let one_body = PauliString([oam_collab::qcore::Pauli::Z, oam_collab::qcore::Pauli::I, oam_collab::qcore::Pauli::I]);
    let den = oam_collab::opexpr::pauli_decompose(lookup("I5").unwrap().denominator_operator());
    let mut one_body_pts = Vec::new();
    let mut ladder_pts = Vec::new();
    for &m in &ns {
        let t = Tally::from_records(&simulate_state(&rho, m, 7_000 + m as u64, Execution::default()));
        one_body_pts.push((m as f64, t.estimate(&one_body).unwrap().stderr));
        ladder_pts.push((m as f64, estimate_expectation(&t, &den).unwrap().1));
    }
    let slope_one = oam_collab::invariants::log_log_slope(&one_body_pts).unwrap();
    let slope_ladder = oam_collab::invariants::log_log_slope(&ladder_pts).unwrap();
    let slope_ok = |s: f64| (s - STDERR_SLOPE).abs() <= STDERR_SLOPE_TOL;

    let pass = p_value > CHI_SQUARE_SIGNIFICANCE && impossible_hits == 0 && slope_ok(slope_one) && slope_ok(slope_ladder);
    let detail = format!(
        "chi2={chi2:.1} df={df} p={p_value:.3} (> {CHI_SQUARE_SIGNIFICANCE}), impossible-cell hits {impossible_hits}; \
         stderr slopes z,id,id={slope_one:.4} I5-den={slope_ladder:.4} (target {STDERR_SLOPE} ± {STDERR_SLOPE_TOL})"
    );
    verdict(4, "sampling fidelity", pass, &detail);
}

#[test]
fn criterion_5_codec() {
    let c = Constellation::default();
    let channels = [
        Channel::identity(ChannelModel::Collective),
        Channel::new(ChannelModel::Collective, survival(0.9)),
    ];
    let mut exact_ok = 0;
    for msg in Message::all_bytes() {
        let ok = channels.iter().all(|ch| {
            let rho = ch.apply(&density_of(&make_state(&encode(&msg, &c).unwrap())));
            let vals: BTreeMap<String, Complex> = CARRIER_IDS
                .iter()
                .map(|id| (id.to_string(), eval_invariant(lookup(id).unwrap(), &rho).value.unwrap()))
                .collect();
            decode(&vals, &c).ok() == Some(msg)
        });
        exact_ok += usize::from(ok);
    }

    let start = Instant::now();
    let report = run_protocol(
        &Message::from_byte(0x5a),
        &Channel::new(ChannelModel::Collective, survival(0.9)),
        DEFAULT_ROUNDS,
        20_240_605,
        &quiet(),
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();

    let pass = exact_ok == 256 && report.success && report.decoded.as_deref() == Some("5a") && secs < END_TO_END_SECONDS;
    let detail = format!(
        "exact round trips {exact_ok}/256; end-to-end n={DEFAULT_ROUNDS} decoded {:?} in {secs:.2}s (limit {END_TO_END_SECONDS}s)",
        report.decoded
    );
    verdict(5, "codec", pass, &detail);
}

#[test]
fn criterion_6_collaboration() {
    let ch = Channel::new(ChannelModel::Collective, survival(0.9));
    let msg = Message::from_byte(0x5a);
    let opts = quiet();
    let mut pass = true;
    let mut parts = Vec::new();
    let mut control_hits = 0u64;
    let mut control_runs = 0u64;
    for party in [Party::A, Party::B, Party::C] {
        let mut hits = 0u64;
        let mut identity_strings = 0usize;
        let mut identity_consistent = 0usize;
        let mut lost = 0usize;
        let mut lost_near_zero = 0usize;
        for seed in 0..COLLAB_SEEDS {
            let r = collaboration_test(&msg, &ch, DEFAULT_ROUNDS, seed, Some(party), &opts).unwrap();
            hits += u64::from(r.decode_success);
            control_hits += u64::from(r.control.success);
            control_runs += 1;
            for s in &r.strings {
                if s.identity_at_withheld {
                    identity_strings += 1;
                    // Unaffected by the coin flips: the estimates coincide.
                    identity_consistent += usize::from(s.consistent_with_control && s.control == s.randomized);
                } else {
                    lost += 1;
                    lost_near_zero += usize::from(s.consistent_with_zero);
                }
            }
        }
        let rate = hits as f64 / COLLAB_SEEDS as f64;
        let near_zero = lost_near_zero as f64 / lost.max(1) as f64;
        pass &= rate <= MAX_RANDOMIZED_MATCH_RATE && identity_consistent == identity_strings && near_zero >= 0.99;
        parts.push(format!(
            "{party:?}: match {rate:.2}, identity-slot strings {identity_consistent}/{identity_strings} unchanged, \
             lost strings near zero {near_zero:.3}"
        ));
    }
    let control_rate = control_hits as f64 / control_runs as f64;
    pass &= control_rate == 1.0;
    let detail = format!(
        "{} seeds per party, control {control_rate:.2}; {} (limit {MAX_RANDOMIZED_MATCH_RATE})",
        COLLAB_SEEDS,
        parts.join("; ")
    );
    verdict(6, "collaboration", pass, &detail);
}

fn cli_bytes(args: &str) -> (i32, Vec<u8>) {
    let argv: Vec<String> = std::iter::once("oam-collab".to_string())
        .chain(args.split_whitespace().map(String::from))
        .collect();
    let cfg = parse_config(argv, None).unwrap();
    let mut buf = Vec::new();
    let code = dispatch(&cfg, &mut buf).unwrap();
    (code, buf)
}

#[test]
fn criterion_7_determinism() {
    let commands = [
        "eval --msg c3 --model independent --a2 0.8",
        "scan --samples 20 --seed 5",
        "simulate --rounds 50000 --seed 9",
        "roundtrip --msg 5a1f --seed 11",
        "collab --withhold B --rounds 50000 --seed 13 --trials 3",
    ];
    let mut mismatched = Vec::new();
    for cmd in commands {
        let base = format!("{cmd} --no-timing");
        let (code1, one) = cli_bytes(&format!("{base} --threads 1"));
        let (code4, four) = cli_bytes(&format!("{base} --threads 4"));
        let (code_again, again) = cli_bytes(&format!("{base} --threads 4"));
        if one != four || four != again || code1 != code4 || code4 != code_again || one.is_empty() {
            mismatched.push(cmd.split_whitespace().next().unwrap());
        }
    }
    let pass = mismatched.is_empty();
    let detail = format!(
        "{} commands at 1 and 4 workers, repeated; mismatches: {mismatched:?}",
        commands.len()
    );
    verdict(7, "determinism", pass, &detail);
}

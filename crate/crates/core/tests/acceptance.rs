// SPDX-License-Identifier: Apache-2.0
// End-to-end acceptance run: one PASS/FAIL line per criterion.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use rayon::prelude::*;

use buck_trojan::cli::{self, SweepSpec};
use buck_trojan::metrics::{
    duty_for_target, loss_budget_c_sw, measure, measure_scenario, ripple_analytic, ripple_match_supply,
    OutcomeClass,
};
use buck_trojan::parity::{advance_gate, gate_node_derivative, GateNodeModel};
use buck_trojan::scenario::{
    parse_scenario, MitigationConfig, Scenario, TrojanConfig, TrojanGate, TrojanTarget,
};
use buck_trojan::sim::{simulate, GateLevels, TraceSet};
use buck_trojan::trojan::{apply_trojan, corrupt, corrupt_net};
use buck_trojan::{classify, SteadyStateMetrics};

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.cfg"))
}

fn load(name: &str) -> Scenario {
    cli::load_scenario(&scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {}", e.message()))
}

struct Run {
    scenario: Scenario,
    traces: TraceSet,
    metrics: SteadyStateMetrics,
    class: OutcomeClass,
}

fn run(s: Scenario) -> Run {
    let traces = simulate(&s).expect("simulation");
    let metrics = measure_scenario(&traces, &s).expect("measurement");
    let class = classify(&metrics, s.pwm.vref, s.converter.vsup).class;
    Run {
        scenario: s,
        traces,
        metrics,
        class,
    }
}

fn window_mean(r: &Run, t0: f64, t1: f64) -> f64 {
    measure(&r.traces, (t0, t1), &r.scenario).expect("window").v_avg
}

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: u32, title: &str, ok: bool, detail: String) {
        if !ok {
            self.failures += 1;
        }
        println!("{} {id} {title}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn baseline_for_target() -> Scenario {
    let mut s = Scenario::baseline();
    s.label = Some("baseline".into());
    s.pwm.duty = duty_for_target(1.0, &s).expect("reachable");
    s
}

fn with_c_par(mut s: Scenario, c_par: f64) -> Scenario {
    s.mitigation.c_par = c_par;
    s
}

/// Self-convergence ratio of the steady-state output waveform under dt
/// halving, plus the largest window-mean spread across the three runs.
fn convergence() -> (f64, f64) {
    let runs: Vec<TraceSet> = [2e-9, 1e-9, 0.5e-9]
        .par_iter()
        .map(|&dt| {
            let mut s = Scenario::baseline();
            s.sim.t_end = 200e-6;
            s.sim.record_start = 150e-6;
            s.sim.dt = dt;
            simulate(&s).expect("simulation")
        })
        .collect();
    // Compare on the 2 ns grid; run j holds that grid at stride 2^j.
    let (a, b) = ((150e-6 / 2e-9) as usize, (200e-6 / 2e-9) as usize);
    let rms = |j: usize| {
        let (lo, hi) = (&runs[j], &runs[j + 1]);
        (a..b)
            .map(|k| (lo.v_out[k << j] - hi.v_out[k << (j + 1)]).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let (coarse, fine) = (rms(0), rms(1));
    let means: Vec<f64> = runs
        .iter()
        .map(|t| {
            let mut s = Scenario::baseline();
            s.sim.dt = t.dt;
            measure(t, (150e-6, 200e-6), &s).expect("window").v_avg
        })
        .collect();
    let spread = means.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
        - means.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    (coarse / fine, spread)
}

fn main() -> ExitCode {
    let mut rep = Report { failures: 0 };

    let named = [
        "trojan_pmos",
        "table1_nmos_low",
        "table1_nmos_high",
        "table1_pmos_low",
        "table1_pmos_high",
        "mitigated_500pF",
        "bypass",
        "ripple_match",
    ];
    let mut jobs: Vec<(String, Scenario)> = named.iter().map(|n| (n.to_string(), load(n))).collect();
    jobs.push(("baseline".into(), baseline_for_target()));
    jobs.push(("unmitigated".into(), with_c_par(load("mitigated_500pF"), 0.0)));
    jobs.push(("mitigated_clean".into(), {
        let mut s = with_c_par(Scenario::baseline(), 500e-12);
        s.label = Some("mitigated_clean".into());
        s
    }));
    jobs.push(("dormant".into(), {
        let mut s = load("trojan_pmos");
        s.trojan.t_trigger = 2.0 * s.sim.t_end;
        s
    }));
    for (i, d) in [0.2, 0.4, 0.6, 0.8].into_iter().enumerate() {
        let mut s = Scenario::baseline();
        s.pwm.duty = d;
        jobs.push((format!("duty{i}"), s));
    }
    let runs: Vec<(String, Run)> = jobs.into_par_iter().map(|(n, s)| (n, run(s))).collect();
    let get = |name: &str| &runs.iter().find(|(n, _)| n == name).expect("run").1;

    // 1. Baseline regulation.
    let base = get("baseline");
    let v = base.metrics.v_avg;
    rep.line(
        1,
        "baseline regulation",
        (v - 1.0).abs() <= 0.02,
        format!(
            "mean v_out {v:.5} V over the last 100 us (duty {:.5}), limit 1.00 V ± 2 %",
            base.scenario.pwm.duty
        ),
    );

    // 2. Efficiency and its loss-budget calibration.
    let eff = 100.0 * base.metrics.efficiency;
    let budget = loss_budget_c_sw(&Scenario::baseline(), 0.933).expect("budget");
    let c_sw = Scenario::baseline().converter.c_sw;
    let budget_ok = (budget - c_sw).abs() <= 0.02 * c_sw;
    rep.line(
        2,
        "efficiency",
        (eff - 93.3).abs() <= 0.5 && budget_ok,
        format!(
            "{eff:.3} % (limit 93.3 ± 0.5 pp); loss-budget c_sw {:.1} pF vs configured {:.1} pF",
            1e12 * budget,
            1e12 * c_sw
        ),
    );

    // 3. Ripple against the oracle, and the ripple-match operating point.
    let oracle = ripple_analytic(&base.scenario);
    let rel = (base.metrics.ripple_pp - oracle).abs() / oracle;
    let rm = get("ripple_match");
    let (vsup_search, duty_search) = ripple_match_supply(&Scenario::baseline(), 23.8e-3).expect("search");
    let frozen_ok = (rm.scenario.converter.vsup - vsup_search).abs() <= 0.01
        && (rm.scenario.pwm.duty - duty_for_target(1.0, &rm.scenario).expect("duty")).abs() <= 0.001
        && (rm.scenario.pwm.duty - duty_search).abs() <= 0.01;
    let note = std::fs::read_to_string(scenario_path("ripple_match"))
        .map(|t| t.contains("inconsistent"))
        .unwrap_or(false);
    let rm_rel = (rm.metrics.ripple_pp - 23.8e-3).abs() / 23.8e-3;
    rep.line(
        3,
        "ripple",
        rel <= 0.15 && rm_rel <= 0.15 && frozen_ok && note,
        format!(
            "baseline {:.3} mVpp vs oracle {:.3} mVpp ({:.1} %); ripple-match {:.3} mVpp at {:.2} V / duty {:.3} \
             ({:.1} % from 23.8, search {:.4} V / {:.4}), note {}",
            1e3 * base.metrics.ripple_pp,
            1e3 * oracle,
            100.0 * rel,
            1e3 * rm.metrics.ripple_pp,
            rm.scenario.converter.vsup,
            rm.scenario.pwm.duty,
            100.0 * rm_rel,
            vsup_search,
            duty_search,
            if note { "present" } else { "missing" }
        ),
    );

    // 4. PMOS lock shifts the operating point toward the rail.
    let tp = get("trojan_pmos");
    let pre = window_mean(tp, 400e-6, 500e-6);
    let post = tp.metrics.v_avg;
    rep.line(
        4,
        "PMOS lock overvolt",
        (pre - 1.0).abs() <= 0.02 && (1.15..=1.20).contains(&post) && tp.class == OutcomeClass::Overvolt,
        format!(
            "pre-trigger {pre:.4} V, post-trigger {post:.4} V (limit [1.15, 1.20]), class {}",
            tp.class
        ),
    );

    // 5. Lock matrix.
    let rows = [
        ("table1_nmos_low", OutcomeClass::SevereOvervolt),
        ("table1_nmos_high", OutcomeClass::Disabled),
        ("table1_pmos_low", OutcomeClass::Overvolt),
        ("table1_pmos_high", OutcomeClass::Disabled),
    ];
    let got: Vec<String> = rows.iter().map(|(n, _)| get(n).class.to_string()).collect();
    rep.line(
        5,
        "lock matrix",
        rows.iter().all(|(n, want)| get(n).class == *want),
        format!("NMOS low/high, PMOS low/high -> {}", got.join(", ")),
    );

    // 6. Parity capacitor thwarts the lock.
    let mit = get("mitigated_500pF");
    let unmit = get("unmitigated");
    rep.line(
        6,
        "mitigation efficacy",
        (mit.metrics.v_avg - 1.0).abs() <= 0.05
            && mit.class == OutcomeClass::Nominal
            && unmit.class == OutcomeClass::Overvolt,
        format!(
            "500 pF: {:.4} V {}; 0 pF: {:.4} V {}",
            mit.metrics.v_avg, mit.class, unmit.metrics.v_avg, unmit.class
        ),
    );

    // 7. Sizing sweep.
    let dir = tempfile::tempdir().expect("tempdir");
    let spec =
        SweepSpec::parse("mitigation.parity_cap_pf", "10,50,100,250,500,1000", dir.path()).expect("spec");
    let sweep = cli::run_sweep(&load("trojan_pmos"), &spec);
    let ok: Vec<bool> = sweep
        .iter()
        .map(|(_, r)| r.as_ref().map(|s| s.outcome == "Nominal").unwrap_or(false))
        .collect();
    let monotone = ok.windows(2).all(|w| w[1] || !w[0]);
    let outcomes: Vec<String> = spec
        .values
        .iter()
        .zip(&sweep)
        .map(|(v, (_, r))| {
            format!(
                "{v} pF {}",
                r.as_ref().map(|s| s.outcome.as_str()).unwrap_or("Error")
            )
        })
        .collect();
    rep.line(
        7,
        "mitigation sizing sweep",
        monotone && !ok[0] && ok[4] && ok[5],
        outcomes.join(", "),
    );

    // 8. Trojan placed after the capacitor.
    let by = get("bypass");
    rep.line(
        8,
        "bypass",
        by.class == OutcomeClass::Overvolt && by.scenario.mitigation.c_par == 500e-12,
        format!(
            "downstream lock with 500 pF: {:.4} V {}",
            by.metrics.v_avg, by.class
        ),
    );

    // 9. Property suites.
    let mut notes = Vec::new();
    let mut all = true;

    let worst = runs
        .iter()
        .map(|(_, r)| r.traces.energy.imbalance())
        .fold(0.0, f64::max);
    all &= worst <= 0.01;
    notes.push(format!("energy imbalance max {worst:.2e}"));

    let (ratio, spread) = convergence();
    all &= (3.5..=4.5).contains(&ratio) && spread <= 1e-9;
    notes.push(format!(
        "convergence ratio {ratio:.3}, window-mean spread {spread:.1e} V"
    ));

    let duties: Vec<f64> = (0..4).map(|i| get(&format!("duty{i}")).metrics.v_avg).collect();
    let increasing = duties.windows(2).all(|w| w[1] > w[0]);
    all &= increasing;
    notes.push(format!("duty monotone {increasing}"));

    let repeat = run(base.scenario.clone());
    let csv = |t: &TraceSet| {
        let mut buf = Vec::new();
        t.write_csv(&mut buf).expect("csv");
        buf
    };
    let deterministic = csv(&repeat.traces) == csv(&base.traces) && repeat.metrics == base.metrics;
    all &= deterministic;
    notes.push(format!("deterministic {deterministic}"));

    let mut truth = true;
    for gate in [TrojanGate::Or, TrojanGate::Nor] {
        for a in [false, true] {
            for b in [false, true] {
                truth &= corrupt(a, b, gate) == ((a || b) == (gate == TrojanGate::Or));
            }
            truth &= corrupt_net(a, false, gate) == a;
            truth &= corrupt_net(a, true, gate) == (gate == TrojanGate::Or);
        }
    }
    for target in [TrojanTarget::Pmos, TrojanTarget::Nmos] {
        let cfg = TrojanConfig {
            target,
            gate: TrojanGate::Nor,
            t_trigger: 1.0,
            t_release: f64::INFINITY,
        };
        for (p, n) in [(false, false), (true, false), (false, true), (true, true)] {
            let d = GateLevels { pmos: p, nmos: n };
            truth &= apply_trojan(d, 0.5, &cfg) == d;
        }
    }
    let dormant = get("dormant");
    let clean = {
        let mut s = dormant.scenario.clone();
        s.trojan.target = TrojanTarget::None;
        run(s)
    };
    let transparent = dormant.traces.v_out == clean.traces.v_out && dormant.traces.i_l == clean.traces.i_l;
    all &= truth && transparent;
    notes.push(format!("truth table {truth}, dormant transparent {transparent}"));

    let m = GateNodeModel::new(
        &MitigationConfig {
            c_par: 500e-12,
            ..MitigationConfig::default()
        },
        1.2,
    );
    let equilibrium = [0.0, 0.6, 1.2]
        .iter()
        .all(|&v| gate_node_derivative(v, 0.0, v, &m) == 0.0 && advance_gate(v, v, 0.0, 1e-9, &m) == v);
    let mc = get("mitigated_clean");
    let duty_dev = (mc.metrics.duty_effective - mc.scenario.pwm.duty).abs() / mc.scenario.pwm.duty;
    all &= equilibrium && duty_dev < 0.01;
    notes.push(format!(
        "parity equilibrium {equilibrium}, mitigated duty error {:.3} %",
        100.0 * duty_dev
    ));

    rep.line(9, "property suites", all, notes.join("; "));

    // The parser must accept every shipped scenario verbatim.
    for n in named {
        let text = std::fs::read_to_string(scenario_path(n)).expect("read");
        parse_scenario(&text).expect("parse");
    }

    if rep.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

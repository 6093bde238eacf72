// SPDX-License-Identifier: Apache-2.0
//! Steady-state measurements over a window of a run, first-order analytic
//! oracles for the buck stage, and outcome classification.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::scenario::{Control, Scenario, TrojanTarget};
use crate::sim::TraceSet;

/// Outcomes a run is sorted into, in the order the rules are tried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum OutcomeClass {
    Disabled,
    SevereOvervolt,
    Overvolt,
    Nominal,
    Degraded,
}

impl fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OutcomeClass::Nominal => "Nominal",
            OutcomeClass::Overvolt => "Overvolt",
            OutcomeClass::SevereOvervolt => "SevereOvervolt",
            OutcomeClass::Disabled => "Disabled",
            OutcomeClass::Degraded => "Degraded",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub class: OutcomeClass,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyStateMetrics {
    pub v_avg: f64,
    pub ripple_pp: f64,
    pub efficiency: f64,
    pub i_l_avg: f64,
    pub v_out_max: f64,
    pub v_out_min: f64,
    pub v_sw_min: f64,
    pub v_sw_max: f64,
    pub duty_effective: f64,
    pub shoot_through_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("measurement window spans {periods:.2} switching periods, need at least 20")]
    WindowTooShort { periods: f64 },
    #[error("target {v_target} V unreachable: needs duty {required:.4}")]
    Unreachable { v_target: f64, required: f64 },
}

/// Minimum number of switching periods a measurement window must span.
pub const MIN_WINDOW_PERIODS: f64 = 20.0;

/// Measure the samples with `window.0 <= t < window.1`.
pub fn measure(
    traces: &TraceSet,
    window: (f64, f64),
    s: &Scenario,
) -> Result<SteadyStateMetrics, MetricsError> {
    let dt = traces.dt;
    let start = ((window.0 / dt).round() as usize).min(traces.len());
    let end = ((window.1 / dt).round() as usize).min(traces.len());
    let n = end.saturating_sub(start);
    let periods = n as f64 * dt * s.pwm.freq;
    if periods < MIN_WINDOW_PERIODS * (1.0 - 1e-9) {
        return Err(MetricsError::WindowTooShort { periods });
    }
    let cp = &s.converter;
    let range = start..end;
    let mean = |col: &[f64]| col[range.clone()].iter().sum::<f64>() / n as f64;
    let max = |col: &[f64]| {
        col[range.clone()]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let min = |col: &[f64]| col[range.clone()].iter().copied().fold(f64::INFINITY, f64::min);

    let v_out = &traces.v_out[range.clone()];
    let p_out = v_out.iter().map(|v| v * (v / cp.r_load + cp.i_load)).sum::<f64>() / n as f64;
    let p_in = cp.vsup * mean(&traces.i_supply) + cp.c_sw * cp.vsup * cp.vsup * s.pwm.freq;
    let efficiency = if p_in > 0.0 && p_out > 0.0 {
        p_out / p_in
    } else {
        0.0
    };

    let mut pmos_count = 0usize;
    let mut shoot_through = 0.0;
    for k in range.clone() {
        if traces.pmos_on[k] {
            pmos_count += 1;
            if traces.nmos_on[k] {
                let i_mid = match traces.i_l.get(k + 1) {
                    Some(next) => 0.5 * (traces.i_l[k] + next),
                    None => traces.i_l[k],
                };
                let i_cross = (traces.i_supply[k] - i_mid).max(0.0);
                shoot_through += cp.vsup * i_cross * dt;
            }
        }
    }

    let v_out_max = max(&traces.v_out);
    let v_out_min = min(&traces.v_out);
    Ok(SteadyStateMetrics {
        v_avg: mean(&traces.v_out),
        ripple_pp: v_out_max - v_out_min,
        efficiency,
        i_l_avg: mean(&traces.i_l),
        v_out_max,
        v_out_min,
        v_sw_min: min(&traces.v_sw),
        v_sw_max: max(&traces.v_sw),
        duty_effective: pmos_count as f64 / n as f64,
        shoot_through_energy: shoot_through,
    })
}

/// Measurement window configured in the scenario.
pub fn measure_scenario(traces: &TraceSet, s: &Scenario) -> Result<SteadyStateMetrics, MetricsError> {
    measure(traces, (s.sim.record_start, s.sim.t_end), s)
}

pub fn classify(m: &SteadyStateMetrics, v_target: f64, vsup: f64) -> Outcome {
    let pct = |v: f64| 100.0 * (v / v_target - 1.0);
    let sw_peak = m.v_sw_min.abs().max(m.v_sw_max);
    let (class, explanation) = if m.v_avg < 0.3 * v_target {
        (
            OutcomeClass::Disabled,
            format!(
                "mean output {:.4} V is below 30% of the {:.4} V target; the power block no longer delivers",
                m.v_avg, v_target
            ),
        )
    } else if sw_peak >= 2.0 * vsup {
        (
            OutcomeClass::SevereOvervolt,
            format!(
                "switch node swings to {:.1} V, beyond twice the {:.3} V rail",
                if m.v_sw_min.abs() > m.v_sw_max {
                    m.v_sw_min
                } else {
                    m.v_sw_max
                },
                vsup
            ),
        )
    } else if m.v_out_max >= 1.5 * v_target {
        (
            OutcomeClass::SevereOvervolt,
            format!(
                "output peaks at {:.4} V, {:+.1}% over target",
                m.v_out_max,
                pct(m.v_out_max)
            ),
        )
    } else if m.v_avg >= 1.08 * v_target {
        (
            OutcomeClass::Overvolt,
            format!(
                "mean output {:.4} V is {:+.1}% over the {:.4} V target",
                m.v_avg,
                pct(m.v_avg),
                v_target
            ),
        )
    } else if (m.v_avg - v_target).abs() <= 0.05 * v_target && m.ripple_pp <= 0.05 * v_target {
        (
            OutcomeClass::Nominal,
            format!(
                "mean output {:.4} V ({:+.2}%), ripple {:.2} mVpp",
                m.v_avg,
                pct(m.v_avg),
                1e3 * m.ripple_pp
            ),
        )
    } else {
        (
            OutcomeClass::Degraded,
            format!(
                "mean output {:.4} V ({:+.1}%), ripple {:.2} mVpp outside regulation limits",
                m.v_avg,
                pct(m.v_avg),
                1e3 * m.ripple_pp
            ),
        )
    };
    Outcome { class, explanation }
}

/// Peak-to-peak inductor current ripple in continuous conduction.
pub fn inductor_ripple(v_out: f64, duty: f64, l: f64, freq: f64) -> f64 {
    v_out * (1.0 - duty) / (l * freq)
}

/// First-order output ripple: capacitive term plus ESR term.
pub fn ripple_first_order(v_out: f64, duty: f64, l: f64, c: f64, esr_c: f64, freq: f64) -> f64 {
    let di = inductor_ripple(v_out, duty, l, freq);
    di / (8.0 * c * freq) + di * esr_c
}

/// Output voltage the first-order loss model predicts for the scenario's duty.
pub fn predicted_output(s: &Scenario) -> f64 {
    let cp = &s.converter;
    let d = s.pwm.duty;
    let r_series = cp.esr_l + d * cp.ron_p + (1.0 - d) * cp.ron_n;
    (d * cp.vsup - cp.i_load * r_series) / (1.0 + r_series / cp.r_load)
}

pub fn ripple_analytic(s: &Scenario) -> f64 {
    let cp = &s.converter;
    ripple_first_order(
        predicted_output(s),
        s.pwm.duty,
        cp.l,
        cp.c_out,
        cp.esr_c,
        s.pwm.freq,
    )
}

/// Loss-compensated duty for a target output, refined by three fixed-point
/// passes over the duty-weighted switch resistance.
pub fn duty_for_target(v_target: f64, s: &Scenario) -> Result<f64, MetricsError> {
    let cp = &s.converter;
    let i_total = v_target / cp.r_load + cp.i_load;
    let mut d = v_target / cp.vsup;
    for _ in 0..3 {
        let ron_avg = d * cp.ron_p + (1.0 - d) * cp.ron_n;
        d = (v_target + i_total * (cp.esr_l + ron_avg)) / cp.vsup;
    }
    if !(0.0..=1.0).contains(&d) {
        return Err(MetricsError::Unreachable {
            v_target,
            required: d,
        });
    }
    Ok(d)
}

/// Switching-loss capacitance that brings the first-order loss budget to the
/// given efficiency at the scenario's target voltage.
pub fn loss_budget_c_sw(s: &Scenario, efficiency: f64) -> Result<f64, MetricsError> {
    let cp = &s.converter;
    let v = s.pwm.vref;
    let d = duty_for_target(v, s)?;
    let i = v / cp.r_load + cp.i_load;
    let di = inductor_ripple(v, d, cp.l, s.pwm.freq);
    let ripple_sq = di * di / 12.0;
    let conduction = (i * i + ripple_sq) * (cp.esr_l + d * cp.ron_p + (1.0 - d) * cp.ron_n)
        + ripple_sq * cp.esr_c
        + cp.vsup * cp.vsup / cp.roff;
    let p_out = v * i;
    Ok((p_out / efficiency - p_out - conduction) / (cp.vsup * cp.vsup * s.pwm.freq))
}

/// Supply voltage (and matching duty) at which the first-order ripple equals
/// `ripple_target` while regulating `vref`.
pub fn ripple_match_supply(s: &Scenario, ripple_target: f64) -> Result<(f64, f64), MetricsError> {
    let v = s.pwm.vref;
    let ripple_at = |vsup: f64| -> Result<(f64, f64), MetricsError> {
        let mut t = s.clone();
        t.converter.vsup = vsup;
        t.pwm.duty = duty_for_target(v, &t)?;
        Ok((ripple_analytic(&t), t.pwm.duty))
    };
    let (mut lo, mut hi) = (v * 1.05, v * 20.0);
    let (lo_ripple, _) = ripple_at(lo)?;
    let (hi_ripple, _) = ripple_at(hi)?;
    if ripple_target < lo_ripple || ripple_target > hi_ripple {
        return Err(MetricsError::Unreachable {
            v_target: v,
            required: f64::NAN,
        });
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if ripple_at(mid)?.0 < ripple_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (_, duty) = ripple_at(hi)?;
    Ok((hi, duty))
}

/// Contents of `<label>.summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub label: String,
    pub v_avg_v: f64,
    pub ripple_mvpp: f64,
    pub efficiency_pct: f64,
    pub i_l_avg_ma: f64,
    pub v_sw_min_v: f64,
    pub v_sw_max_v: f64,
    pub duty_effective: f64,
    pub outcome: String,
    pub explanation: String,
}

impl Summary {
    pub fn new(label: &str, m: &SteadyStateMetrics, outcome: &Outcome) -> Self {
        Self {
            label: label.to_string(),
            v_avg_v: m.v_avg,
            ripple_mvpp: 1e3 * m.ripple_pp,
            efficiency_pct: 100.0 * m.efficiency,
            i_l_avg_ma: 1e3 * m.i_l_avg,
            v_sw_min_v: m.v_sw_min,
            v_sw_max_v: m.v_sw_max,
            duty_effective: m.duty_effective,
            outcome: outcome.class.to_string(),
            explanation: outcome.explanation.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

/// Relative tolerance of the ripple oracle.
pub const RIPPLE_TOLERANCE: f64 = 0.15;
/// Relative tolerance between achieved and predicted mean output.
pub const OUTPUT_TOLERANCE: f64 = 0.02;
/// Allowed energy imbalance as a fraction of input energy.
pub const ENERGY_TOLERANCE: f64 = 0.01;

/// Compare a finished run against the analytic oracles.
pub fn oracle_checks(s: &Scenario, traces: &TraceSet, m: &SteadyStateMetrics) -> Vec<CheckResult> {
    let clean = s.trojan.target == TrojanTarget::None;
    let open_loop = s.pwm.control == Control::OpenLoop;
    let verdict = |ok: bool| if ok { CheckStatus::Pass } else { CheckStatus::Fail };
    let mut out = Vec::new();

    if clean && open_loop {
        let oracle = ripple_analytic(s);
        let rel = (m.ripple_pp - oracle).abs() / oracle;
        out.push(CheckResult {
            name: "ripple",
            status: verdict(rel <= RIPPLE_TOLERANCE),
            detail: format!(
                "simulated {:.3} mVpp vs first-order {:.3} mVpp ({:.1}% off, limit {:.0}%)",
                1e3 * m.ripple_pp,
                1e3 * oracle,
                100.0 * rel,
                100.0 * RIPPLE_TOLERANCE
            ),
        });
    } else {
        out.push(CheckResult {
            name: "ripple",
            status: CheckStatus::NotApplicable,
            detail: "not applicable: needs open loop without a trojan".into(),
        });
    }

    if clean {
        let (expected, what) = if open_loop {
            (predicted_output(s), "loss-compensated prediction")
        } else {
            (s.pwm.vref, "vref")
        };
        let rel = (m.v_avg - expected).abs() / expected;
        let duty_note = match duty_for_target(s.pwm.vref, s) {
            Ok(d) => format!("duty for vref {:.4}, commanded {:.4}", d, s.pwm.duty),
            Err(e) => e.to_string(),
        };
        out.push(CheckResult {
            name: "duty-target",
            status: verdict(rel <= OUTPUT_TOLERANCE),
            detail: format!(
                "mean output {:.5} V vs {what} {:.5} V ({:.2}% off); {duty_note}",
                m.v_avg,
                expected,
                100.0 * rel
            ),
        });
    } else {
        out.push(CheckResult {
            name: "duty-target",
            status: CheckStatus::NotApplicable,
            detail: "not applicable: trojan present".into(),
        });
    }

    let imbalance = traces.energy.imbalance();
    out.push(CheckResult {
        name: "energy-balance",
        status: verdict(imbalance <= ENERGY_TOLERANCE),
        detail: format!(
            "imbalance {:.3e} of input energy over {:.1} us (limit {:.0}%)",
            imbalance,
            1e6 * traces.energy.duration,
            100.0 * ENERGY_TOLERANCE
        ),
    });
    out
}

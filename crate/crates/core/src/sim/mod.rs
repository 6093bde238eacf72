// SPDX-License-Identifier: Apache-2.0
//! Fixed-step transient simulation of the converter with its gate drive.
//!
//! Each step:
//! 1. raw PWM commands from the snapped edge grid (duty updated once per
//!    period under PI control),
//! 2. driver-chain transport delay,
//! 3. trojan corruption of the targeted gate net,
//! 4. gate resolution: logic levels directly, or the parity-capacitor gate
//!    node followed by a threshold comparator when mitigation is enabled,
//! 5. the driver interlock, which never lets both switches conduct,
//! 6. one trapezoidal step of the power stage.

mod circuit;
mod pwm;
mod trace;

use std::collections::VecDeque;

use thiserror::Error;

use crate::parity::{advance_gate, root_waveform, Comparator, GateNodeModel, RootEdge};
use crate::scenario::{validate_scenario, Control, Scenario, TrojanTarget, Violation};
use crate::trojan::apply_with_trigger;

pub use circuit::{
    derivatives, output_voltage, step_trapezoidal, switch_conductances, switch_node_voltage, CircuitState,
    Conduction, Derivative, GateLevels, PowerStage,
};
pub use pwm::{pwm_levels, EdgeGrid, PeriodEdges};
pub use trace::{sig9, EnergyLedger, TraceSet, CSV_HEADER};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("numerical divergence at t = {t:e} s (i_l = {:e} A, v_c = {:e} V)", .state.i_l, .state.v_c)]
    Diverged { t: f64, state: CircuitState },
    #[error("singular implicit step matrix")]
    SingularStep,
}

/// Grid index of a time, used for every snapped edge.
fn to_step(t: f64, dt: f64) -> u64 {
    if t.is_infinite() {
        u64::MAX
    } else {
        (t / dt).round() as u64
    }
}

struct GateNodes {
    model: GateNodeModel,
    comp_p: Comparator,
    comp_n: Comparator,
    root_p: RootEdge,
    root_n: RootEdge,
}

impl GateNodes {
    fn root_delta(edge: RootEdge, t0: f64, dt: f64, vsup: f64, t_slew: f64) -> f64 {
        root_waveform(t0 + dt, edge, vsup, t_slew).0 - root_waveform(t0, edge, vsup, t_slew).0
    }
}

/// Run one scenario from the zero state to `t_end`.
pub fn simulate(s: &Scenario) -> Result<TraceSet, SimError> {
    let violations = validate_scenario(s);
    if !violations.is_empty() {
        return Err(SimError::Invalid(violations));
    }
    let cp = &s.converter;
    let vsup = cp.vsup;
    let dt = s.sim.dt;
    let last = to_step(s.sim.t_end, dt);
    let record_from = to_step(s.sim.record_start, dt);

    let stage = PowerStage::new(cp, dt)?;
    let grid = EdgeGrid::new(&s.pwm, dt);
    let delay = to_step(s.pwm.driver_delay, dt) as usize;
    let idle = GateLevels::from_commands(false, false);
    let mut delay_line: VecDeque<GateLevels> = VecDeque::with_capacity(delay + 1);
    delay_line.extend(std::iter::repeat_n(idle, delay));

    let armed = s.trojan.target != TrojanTarget::None;
    let downstream = s.mitigation.trojan_downstream_of_cap;
    let trig_from = to_step(s.trojan.t_trigger, dt);
    let trig_until = to_step(s.trojan.t_release, dt);

    let mut gates = s.mitigation.enabled().then(|| GateNodes {
        model: GateNodeModel::new(&s.mitigation, vsup),
        comp_p: Comparator { high: true },
        comp_n: Comparator { high: false },
        root_p: RootEdge {
            high: true,
            at: f64::NEG_INFINITY,
        },
        root_n: RootEdge {
            high: false,
            at: f64::NEG_INFINITY,
        },
    });

    let mut x = CircuitState {
        v_gate_p: vsup,
        ..CircuitState::zero()
    };
    let mut duty = s.pwm.duty;
    let mut period = 0u64;
    let mut edges = grid.period(period, duty);
    let mut v_sum = 0.0;
    let mut v_count = 0usize;
    let mut prev = Conduction {
        pmos: false,
        nmos: false,
    };

    let stored = |x: &CircuitState| 0.5 * cp.l * x.i_l * x.i_l + 0.5 * cp.c_out * x.v_c * x.v_c;
    let mut traces = TraceSet::with_capacity(dt, last as usize + 1);

    for n in 0..=last {
        let t = n as f64 * dt;
        while n >= edges.next_start {
            if s.pwm.control == Control::PerCyclePi && v_count > 0 {
                let err = s.pwm.vref - v_sum / v_count as f64;
                x.duty_state += err;
                duty = (duty + s.pwm.kp * err + s.pwm.ki * x.duty_state).clamp(0.0, 1.0);
            }
            v_sum = 0.0;
            v_count = 0;
            period += 1;
            edges = grid.period(period, duty);
        }

        let cmd = edges.commands(n);
        delay_line.push_back(GateLevels::from_commands(cmd.0, cmd.1));
        let nominal = delay_line.pop_front().expect("delay line never empty");
        // The lock gate sits at the FET gate net, after the driver chain.
        let trig = armed && n >= trig_from && n < trig_until;
        let corrupted = apply_with_trigger(nominal, trig, &s.trojan);

        let mut next_gates = None;
        let mut cond = match gates.as_mut() {
            None => corrupted.conduction(),
            Some(g) => {
                let logic = if downstream { nominal } else { corrupted };
                // The root is the undelayed PWM, in gate polarity.
                let (root_p, root_n) = (!cmd.0, cmd.1);
                if root_p != g.root_p.high {
                    g.root_p = RootEdge { high: root_p, at: t };
                }
                if root_n != g.root_n.high {
                    g.root_n = RootEdge { high: root_n, at: t };
                }
                let m = &g.model;
                let dp = GateNodes::root_delta(g.root_p, t, dt, vsup, m.t_slew);
                let dn = GateNodes::root_delta(g.root_n, t, dt, vsup, m.t_slew);
                let level = |b: bool| if b { vsup } else { 0.0 };
                let vp = advance_gate(x.v_gate_p, level(logic.pmos), dp, dt, m);
                let vn = advance_gate(x.v_gate_n, level(logic.nmos), dn, dt, m);
                next_gates = Some((vp, vn));
                // Conduction over this step follows the gate at its end.
                let mut sensed = GateLevels {
                    pmos: g.comp_p.update(vp, m.threshold),
                    nmos: g.comp_n.update(vn, m.threshold),
                };
                if downstream {
                    sensed = apply_with_trigger(sensed, trig, &s.trojan);
                }
                sensed.conduction()
            }
        };

        if s.pwm.interlock && cond.pmos && cond.nmos {
            // A triggered trojan sits after the interlock, so its net wins;
            // otherwise the switch already conducting keeps the bridge.
            let keep_pmos = match (trig, s.trojan.target) {
                (true, TrojanTarget::Pmos) => true,
                (true, TrojanTarget::Nmos) => false,
                _ => !(prev.nmos && !prev.pmos),
            };
            if keep_pmos {
                cond.nmos = false;
            } else {
                cond.pmos = false;
            }
        }

        if gates.is_none() {
            x.v_gate_p = if cond.pmos { 0.0 } else { vsup };
            x.v_gate_n = if cond.nmos { vsup } else { 0.0 };
        }

        let (gp, gn) = switch_conductances(cond, cp);
        let v_sw = switch_node_voltage(x.i_l, gp, gn, vsup);
        let v_out = output_voltage(x.v_c, x.i_l, cp);
        traces.t.push(t);
        traces.v_out.push(v_out);
        traces.v_sw.push(v_sw);
        traces.i_l.push(x.i_l);
        traces.v_c.push(x.v_c);
        traces.v_gate_p.push(x.v_gate_p);
        traces.v_gate_n.push(x.v_gate_n);
        traces.trig.push(trig);
        traces.pmos_on.push(cond.pmos);
        traces.nmos_on.push(cond.nmos);

        if n == last {
            traces.i_supply.push(gp * (vsup - v_sw));
            break;
        }

        let mut next = stage.step(&x, cond);
        // Supply current averaged over the step, consistent with the update.
        let v_sw_mid = switch_node_voltage(0.5 * (x.i_l + next.i_l), gp, gn, vsup);
        traces.i_supply.push(gp * (vsup - v_sw_mid));
        if let Some((vp, vn)) = next_gates {
            next.v_gate_p = vp;
            next.v_gate_n = vn;
        }
        if !next.is_finite() {
            return Err(SimError::Diverged {
                t: t + dt,
                state: next,
            });
        }

        if n >= record_from {
            if n == record_from {
                traces.energy.stored_start = stored(&x);
            }
            account_step(&mut traces.energy, &x, &next, cond, s);
        }

        v_sum += v_out;
        v_count += 1;
        x = next;
        prev = cond;
    }
    traces.energy.stored_end = stored(&x);
    traces.energy.duration = last.saturating_sub(record_from) as f64 * dt;
    Ok(traces)
}

/// Energy moved during one step, from the midpoint state.
fn account_step(
    ledger: &mut EnergyLedger,
    x0: &CircuitState,
    x1: &CircuitState,
    sw: Conduction,
    s: &Scenario,
) {
    let cp = &s.converter;
    let dt = s.sim.dt;
    let i = 0.5 * (x0.i_l + x1.i_l);
    let v_c = 0.5 * (x0.v_c + x1.v_c);
    let (gp, gn) = switch_conductances(sw, cp);
    let v_sw = switch_node_voltage(i, gp, gn, cp.vsup);
    let v_out = output_voltage(v_c, i, cp);
    let i_c = i - v_out / cp.r_load - cp.i_load;
    let v_p = cp.vsup - v_sw;
    ledger.input += dt * cp.vsup * gp * v_p;
    ledger.output += dt * v_out * (v_out / cp.r_load + cp.i_load);
    ledger.switches += dt * (gp * v_p * v_p + gn * v_sw * v_sw);
    ledger.esr_l += dt * i * i * cp.esr_l;
    ledger.esr_c += dt * i_c * i_c * cp.esr_c;
}

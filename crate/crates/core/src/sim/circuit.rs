// SPDX-License-Identifier: Apache-2.0
//! Power-stage equations of the synchronous buck converter and the implicit
//! trapezoidal step used between switching edges.
//!
//! Switches are resistors (`ron` when conducting, `roff` otherwise), so for a
//! fixed pair of switch states the stage is a linear two-state system in the
//! inductor current and the capacitor voltage.

use crate::scenario::{ConverterParams, Scenario};

use super::SimError;

/// Continuous state of the converter at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircuitState {
    pub i_l: f64,
    /// Voltage on the ideal capacitor behind `esr_c`.
    pub v_c: f64,
    pub v_gate_p: f64,
    pub v_gate_n: f64,
    /// Integral term of the per-cycle PI controller.
    pub duty_state: f64,
}

impl CircuitState {
    pub fn zero() -> Self {
        Self {
            i_l: 0.0,
            v_c: 0.0,
            v_gate_p: 0.0,
            v_gate_n: 0.0,
            duty_state: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.i_l.is_finite()
            && self.v_c.is_finite()
            && self.v_gate_p.is_finite()
            && self.v_gate_n.is_finite()
            && self.duty_state.is_finite()
    }
}

/// Logic level on each FET gate net; `true` is the supply rail.
///
/// The PMOS is active-low: it conducts while its gate is low.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateLevels {
    pub pmos: bool,
    pub nmos: bool,
}

impl GateLevels {
    /// Gate levels that realise the given conduction commands.
    pub fn from_commands(pmos_conduct: bool, nmos_conduct: bool) -> Self {
        Self {
            pmos: !pmos_conduct,
            nmos: nmos_conduct,
        }
    }

    pub fn conduction(self) -> Conduction {
        Conduction {
            pmos: !self.pmos,
            nmos: self.nmos,
        }
    }
}

/// Which switches conduct during a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Conduction {
    pub pmos: bool,
    pub nmos: bool,
}

impl Conduction {
    fn index(self) -> usize {
        usize::from(self.pmos) | (usize::from(self.nmos) << 1)
    }
}

/// Voltage of the node joining the two switches and the inductor.
pub fn switch_node_voltage(i_l: f64, gp: f64, gn: f64, vsup: f64) -> f64 {
    (gp * vsup - i_l) / (gp + gn)
}

/// Output node voltage given the capacitor voltage and inductor current.
pub fn output_voltage(v_c: f64, i_l: f64, cp: &ConverterParams) -> f64 {
    (v_c + cp.esr_c * (i_l - cp.i_load)) / (1.0 + cp.esr_c / cp.r_load)
}

pub fn switch_conductances(sw: Conduction, cp: &ConverterParams) -> (f64, f64) {
    let gp = if sw.pmos { 1.0 / cp.ron_p } else { 1.0 / cp.roff };
    let gn = if sw.nmos { 1.0 / cp.ron_n } else { 1.0 / cp.roff };
    (gp, gn)
}

/// Time derivative of the power-stage state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivative {
    pub di_l: f64,
    pub dv_c: f64,
}

pub fn derivatives(x: &CircuitState, sw: Conduction, s: &Scenario, t: f64) -> Result<Derivative, SimError> {
    let cp = &s.converter;
    let (gp, gn) = switch_conductances(sw, cp);
    let v_sw = switch_node_voltage(x.i_l, gp, gn, cp.vsup);
    let v_out = output_voltage(x.v_c, x.i_l, cp);
    let d = Derivative {
        di_l: (v_sw - x.i_l * cp.esr_l - v_out) / cp.l,
        dv_c: (x.i_l - v_out / cp.r_load - cp.i_load) / cp.c_out,
    };
    if d.di_l.is_finite() && d.dv_c.is_finite() {
        Ok(d)
    } else {
        Err(SimError::Diverged { t, state: *x })
    }
}

/// `x' = A x + u` for one switch configuration.
#[derive(Debug, Clone, Copy)]
struct LinearSystem {
    a: [[f64; 2]; 2],
    u: [f64; 2],
}

impl LinearSystem {
    fn assemble(sw: Conduction, cp: &ConverterParams) -> Self {
        let (gp, gn) = switch_conductances(sw, cp);
        let g = gp + gn;
        let k = 1.0 / (1.0 + cp.esr_c / cp.r_load);
        let b = k * cp.esr_c;
        let c0 = b * cp.i_load;
        Self {
            a: [
                [-(1.0 / g + cp.esr_l + b) / cp.l, -k / cp.l],
                [(1.0 - b / cp.r_load) / cp.c_out, -k / (cp.r_load * cp.c_out)],
            ],
            u: [
                (gp * cp.vsup / g + c0) / cp.l,
                (c0 / cp.r_load - cp.i_load) / cp.c_out,
            ],
        }
    }

    /// Trapezoidal update in increment form, `x' = x + h M⁻¹ (A x + u)` with
    /// `M = I - hA/2`. Equivalent to the affine map but keeps the fixed point
    /// free of roundoff amplified by `1 / (1 - |λ|)`.
    fn trapezoidal(&self, h: f64) -> Option<AffineStep> {
        let a = &self.a;
        let m = [
            [1.0 - 0.5 * h * a[0][0], -0.5 * h * a[0][1]],
            [-0.5 * h * a[1][0], 1.0 - 0.5 * h * a[1][1]],
        ];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let n = [
            [h * m[1][1] / det, -h * m[0][1] / det],
            [-h * m[1][0] / det, h * m[0][0] / det],
        ];
        Some(AffineStep {
            a: self.a,
            u: self.u,
            n,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct AffineStep {
    a: [[f64; 2]; 2],
    u: [f64; 2],
    n: [[f64; 2]; 2],
}

impl AffineStep {
    fn apply(&self, i_l: f64, v_c: f64) -> (f64, f64) {
        let f0 = self.a[0][0] * i_l + self.a[0][1] * v_c + self.u[0];
        let f1 = self.a[1][0] * i_l + self.a[1][1] * v_c + self.u[1];
        (
            i_l + self.n[0][0] * f0 + self.n[0][1] * f1,
            v_c + self.n[1][0] * f0 + self.n[1][1] * f1,
        )
    }
}

/// Trapezoidal steppers for all four switch configurations at a fixed `dt`.
#[derive(Debug, Clone)]
pub struct PowerStage {
    steps: [AffineStep; 4],
}

impl PowerStage {
    pub fn new(cp: &ConverterParams, dt: f64) -> Result<Self, SimError> {
        let mut steps = [AffineStep {
            a: [[0.0; 2]; 2],
            u: [0.0; 2],
            n: [[0.0; 2]; 2],
        }; 4];
        for (idx, slot) in steps.iter_mut().enumerate() {
            let sw = Conduction {
                pmos: idx & 1 != 0,
                nmos: idx & 2 != 0,
            };
            *slot = LinearSystem::assemble(sw, cp)
                .trapezoidal(dt)
                .ok_or(SimError::SingularStep)?;
        }
        Ok(Self { steps })
    }

    /// Advance the inductor current and capacitor voltage by one step.
    pub fn step(&self, x: &CircuitState, sw: Conduction) -> CircuitState {
        let (i_l, v_c) = self.steps[sw.index()].apply(x.i_l, x.v_c);
        CircuitState { i_l, v_c, ..*x }
    }
}

/// One trapezoidal step of the power stage with the switches held fixed.
pub fn step_trapezoidal(
    x: &CircuitState,
    sw: Conduction,
    dt: f64,
    s: &Scenario,
) -> Result<CircuitState, SimError> {
    if dt == 0.0 {
        return Ok(*x);
    }
    let step = LinearSystem::assemble(sw, &s.converter)
        .trapezoidal(dt)
        .ok_or(SimError::SingularStep)?;
    let (i_l, v_c) = step.apply(x.i_l, x.v_c);
    Ok(CircuitState { i_l, v_c, ..*x })
}

// SPDX-License-Identifier: Apache-2.0
//! Parity-capacitor countermeasure.
//!
//! A capacitor `c_par` ties the PWM generation root to the FET gate net. The
//! logic driver (and any inserted trojan gate) feeds the same net through its
//! output resistance `r_drv`; `c_gate` loads the net to ground. The node
//! obeys
//!
//! ```text
//! (c_par + c_gate) dv_g/dt = c_par dv_root/dt + (v_logic - v_g) / r_drv
//! ```
//!
//! so root edges couple straight onto the gate while a locked driver only
//! pulls the gate back with time constant `r_drv (c_par + c_gate)`.

use thiserror::Error;

use crate::scenario::MitigationConfig;

/// Total comparator hysteresis on the gate net.
pub const HYSTERESIS: f64 = 0.010;

/// Required swing beyond the threshold, as a fraction of the rail.
pub const SIZING_MARGIN: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateNodeModel {
    pub c_par: f64,
    pub r_drv: f64,
    pub c_gate: f64,
    pub t_slew: f64,
    pub threshold: f64,
}

impl GateNodeModel {
    pub fn new(m: &MitigationConfig, vsup: f64) -> Self {
        Self {
            c_par: m.c_par,
            r_drv: m.r_drv,
            c_gate: m.c_gate,
            t_slew: m.t_slew,
            threshold: vsup / 2.0,
        }
    }

    pub fn is_valid(&self, vsup: f64) -> bool {
        self.c_par > 0.0
            && self.r_drv > 0.0
            && self.c_gate > 0.0
            && self.t_slew > 0.0
            && self.threshold > 0.0
            && self.threshold < vsup
    }

    /// Fraction of a root step that appears on the gate.
    pub fn divider(&self) -> f64 {
        self.c_par / (self.c_par + self.c_gate)
    }

    pub fn time_constant(&self) -> f64 {
        self.r_drv * (self.c_par + self.c_gate)
    }
}

/// Most recent transition of the PWM root.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootEdge {
    /// Level the root is moving to (or resting at).
    pub high: bool,
    /// Start of the transition; `-inf` for a root that has never switched.
    pub at: f64,
}

/// Root voltage and its slope at time `t`: a trapezoid between 0 and `vsup`
/// with linear edges lasting `t_slew`.
pub fn root_waveform(t: f64, edge: RootEdge, vsup: f64, t_slew: f64) -> (f64, f64) {
    let target = if edge.high { vsup } else { 0.0 };
    let since = t - edge.at;
    if since < 0.0 || since >= t_slew {
        return (target, 0.0);
    }
    let slope = if edge.high { vsup / t_slew } else { -vsup / t_slew };
    (vsup - target + slope * since, slope)
}

pub fn gate_node_derivative(v_g: f64, v_root_slope: f64, v_logic: f64, m: &GateNodeModel) -> f64 {
    (m.c_par * v_root_slope + (v_logic - v_g) / m.r_drv) / (m.c_par + m.c_gate)
}

/// Trapezoidal step of the gate node. The root term is integrated exactly
/// through its increment, so edges shorter than `dt` still couple fully.
pub fn advance_gate(v_g: f64, v_logic: f64, root_delta: f64, dt: f64, m: &GateNodeModel) -> f64 {
    let c = m.c_par + m.c_gate;
    let g = 0.5 * dt / m.r_drv;
    (c * v_g + m.c_par * root_delta + g * (2.0 * v_logic - v_g)) / (c + g)
}

/// Threshold comparator with hysteresis that decides the gate's logic level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Comparator {
    pub high: bool,
}

impl Comparator {
    pub fn update(&mut self, v: f64, threshold: f64) -> bool {
        if self.high && v < threshold - HYSTERESIS / 2.0 {
            self.high = false;
        } else if !self.high && v > threshold + HYSTERESIS / 2.0 {
            self.high = true;
        }
        self.high
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParityError {
    #[error("no parity capacitance up to 1 µF restores switching (swing at 1 µF: {achievable:.4} V, need {required:.4} V)")]
    NoSolution { achievable: f64, required: f64 },
}

const C_MAX: f64 = 1e-6;
const C_TOL: f64 = 1e-12;

/// Swing left on a gate net whose driver is locked at the opposite rail, at
/// the end of a drive phase of length `t_phase`.
pub fn coupled_swing(c_par: f64, m: &GateNodeModel, vsup: f64, t_phase: f64) -> f64 {
    let c = c_par + m.c_gate;
    vsup * (c_par / c) * (-t_phase / (m.r_drv * c)).exp()
}

/// Smallest parity capacitance (within 1 pF) for which a locked gate still
/// crosses the threshold, with 10 % of the rail to spare, at the end of the
/// longest drive phase. `m.c_par` is ignored.
pub fn min_parity_cap(m: &GateNodeModel, vsup: f64, freq: f64, duty: f64) -> Result<f64, ParityError> {
    let t_phase = duty.max(1.0 - duty) / freq;
    let required = m.threshold.max(vsup - m.threshold) + SIZING_MARGIN * vsup;
    let swing = |c: f64| coupled_swing(c, m, vsup, t_phase);

    let achievable = swing(C_MAX);
    if achievable < required {
        return Err(ParityError::NoSolution { achievable, required });
    }
    let (mut lo, mut hi) = (m.c_gate, C_MAX);
    if swing(lo) >= required {
        return Ok(lo);
    }
    while hi - lo > C_TOL {
        let mid = 0.5 * (lo + hi);
        if swing(mid) >= required {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Delay from a root edge to the gate crossing the threshold, for a
/// trojan-free mitigated net.
pub fn phase_shift_estimate(m: &GateNodeModel, vsup: f64) -> f64 {
    m.t_slew * m.threshold / (vsup * m.divider())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(c_par: f64) -> GateNodeModel {
        GateNodeModel::new(
            &MitigationConfig {
                c_par,
                ..MitigationConfig::default()
            },
            1.2,
        )
    }

    #[test]
    fn root_waveform_examples() {
        let rising = RootEdge { high: true, at: 0.0 };
        assert_eq!(root_waveform(400e-9, rising, 1.2, 1e-9), (1.2, 0.0));
        let (v, slope) = root_waveform(0.5e-9, rising, 1.2, 1e-9);
        assert!((v - 0.6).abs() < 1e-12);
        assert!((slope - 1.2e9).abs() < 1.0);
        let falling = RootEdge { high: false, at: 0.0 };
        let (v, slope) = root_waveform(0.25e-9, falling, 1.2, 1e-9);
        assert!((v - 0.9).abs() < 1e-12);
        assert!((slope + 1.2e9).abs() < 1.0);
        let never = RootEdge {
            high: false,
            at: f64::NEG_INFINITY,
        };
        assert_eq!(root_waveform(0.0, never, 1.2, 1e-9), (0.0, 0.0));
    }

    #[test]
    fn parity_equilibrium() {
        let m = model(500e-12);
        for v in [0.0, 0.6, 1.2] {
            assert_eq!(gate_node_derivative(v, 0.0, v, &m), 0.0);
            assert_eq!(advance_gate(v, v, 0.0, 1e-9, &m), v);
        }
    }

    #[test]
    fn edge_coupling_is_capacitive_divider() {
        let m = model(500e-12);
        assert!((m.divider() - 0.990).abs() < 5e-4);
        // A fast root step with the driver held at ground.
        let v = advance_gate(0.0, 0.0, 1.2, 1e-15, &m);
        assert!((v - 1.2 * m.divider()).abs() < 1e-6, "{v}");
    }

    #[test]
    fn locked_driver_relaxes_slowly() {
        let m = model(500e-12);
        let tau = m.time_constant();
        assert!((tau - 5.05e-6).abs() < 1e-12);
        assert!(tau > 10.0 * 0.5e-6);
        // Integrating half a period from 1.2 V toward a locked-low driver.
        let mut v = 1.2;
        for _ in 0..500 {
            v = advance_gate(v, 0.0, 0.0, 1e-9, &m);
        }
        let exact = 1.2 * (-0.5e-6 / tau).exp();
        assert!((v - exact).abs() < 1e-9);
        assert!(v > m.threshold);
    }

    #[test]
    fn derivative_matches_step_for_small_dt() {
        let m = model(500e-12);
        let dt = 1e-13;
        let slope = 1.2e9;
        let d = gate_node_derivative(0.3, slope, 1.2, &m);
        let v = advance_gate(0.3, 1.2, slope * dt, dt, &m);
        assert!(((v - 0.3) / dt - d).abs() / d.abs() < 1e-6);
    }

    #[test]
    fn comparator_hysteresis() {
        let mut c = Comparator { high: false };
        assert!(!c.update(0.603, 0.6));
        assert!(c.update(0.606, 0.6));
        assert!(c.update(0.597, 0.6));
        assert!(!c.update(0.594, 0.6));
    }

    #[test]
    fn min_cap_at_one_megahertz() {
        let m = model(0.0);
        let c = min_parity_cap(&m, 1.2, 1e6, 0.848).unwrap();
        assert!(c > 100e-12 && c < 500e-12, "{c}");
        let required = 0.6 + 0.12;
        assert!(coupled_swing(500e-12, &m, 1.2, 0.848e-6) >= required);
        assert!(coupled_swing(c, &m, 1.2, 0.848e-6) >= required);
        assert!(coupled_swing(c - 1e-12, &m, 1.2, 0.848e-6) < required);
    }

    #[test]
    fn min_cap_shrinks_with_frequency() {
        let m = model(0.0);
        let slow = min_parity_cap(&m, 1.2, 1e6, 0.848).unwrap();
        let fast = min_parity_cap(&m, 1.2, 10e6, 0.848).unwrap();
        assert!(fast < slow);
    }

    #[test]
    fn min_cap_divider_limit() {
        let m = GateNodeModel {
            r_drv: 1e30,
            ..model(0.0)
        };
        let margin = 0.72;
        let limit = m.c_gate * margin / (1.2 - margin);
        let c = min_parity_cap(&m, 1.2, 1e6, 0.848).unwrap();
        assert!((c - limit).abs() <= 1e-12, "{c} vs {limit}");
    }

    #[test]
    fn min_cap_unreachable() {
        let m = GateNodeModel {
            r_drv: 1.0,
            ..model(0.0)
        };
        assert!(matches!(
            min_parity_cap(&m, 1.2, 1e3, 0.5),
            Err(ParityError::NoSolution { .. })
        ));
    }

    #[test]
    fn phase_shift_examples() {
        let m = model(500e-12);
        let d = phase_shift_estimate(&m, 1.2);
        assert!((d - 0.505e-9).abs() < 0.001e-9, "{d}");
        let unity = GateNodeModel { c_gate: 1e-30, ..m };
        assert!((phase_shift_estimate(&unity, 1.2) - 0.5e-9).abs() < 1e-15);
    }
}

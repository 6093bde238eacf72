// SPDX-License-Identifier: Apache-2.0
//! PWM command generation.
//!
//! Commands are conduction requests (`true` = the switch should conduct),
//! not gate voltages. The PMOS owns the first `duty` of each period; the
//! NMOS owns the remainder less one deadtime at each edge.

use crate::scenario::PwmParams;

/// Conduction commands `(pmos, nmos)` at time `t` for a given duty.
pub fn pwm_levels(t: f64, p: &PwmParams, duty: f64) -> (bool, bool) {
    let phase = (t * p.freq).rem_euclid(1.0);
    let dead = p.deadtime * p.freq;
    let pmos = phase < duty;
    let nmos = phase >= duty + dead && phase < 1.0 - dead;
    (pmos, nmos)
}

/// Edge positions of one switching period on the integration grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodEdges {
    pub start: u64,
    pub pmos_off: u64,
    pub nmos_on: u64,
    pub nmos_off: u64,
    pub next_start: u64,
}

impl PeriodEdges {
    pub fn commands(&self, step: u64) -> (bool, bool) {
        let pmos = step < self.pmos_off;
        let nmos = step >= self.nmos_on && step < self.nmos_off;
        (pmos, nmos)
    }
}

/// Snaps the commanded edges of period `k` onto a grid of spacing `dt`.
#[derive(Debug, Clone)]
pub struct EdgeGrid {
    steps_per_period: f64,
    dead_steps: u64,
}

impl EdgeGrid {
    pub fn new(p: &PwmParams, dt: f64) -> Self {
        Self {
            steps_per_period: p.period() / dt,
            dead_steps: (p.deadtime / dt).round() as u64,
        }
    }

    pub fn period(&self, k: u64, duty: f64) -> PeriodEdges {
        let start = (k as f64 * self.steps_per_period).round() as u64;
        let next_start = ((k + 1) as f64 * self.steps_per_period).round() as u64;
        let pmos_off = ((k as f64 + duty) * self.steps_per_period)
            .round()
            .clamp(start as f64, next_start as f64) as u64;
        let nmos_on = (pmos_off + self.dead_steps).min(next_start);
        let nmos_off = next_start.saturating_sub(self.dead_steps).max(nmos_on);
        PeriodEdges {
            start,
            pmos_off,
            nmos_on,
            nmos_off,
            next_start,
        }
    }
}

// SPDX-License-Identifier: Apache-2.0
//! Sampled waveforms of a run and their CSV form.

use std::io::{self, Write};

pub const CSV_HEADER: &str = "t_s,v_out,v_sw,i_l,v_c,v_gate_p,v_gate_n,trig,i_supply";

/// Energy flows accumulated over the measurement window, evaluated at each
/// step's midpoint state so they balance the trapezoidal update exactly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyLedger {
    pub duration: f64,
    pub input: f64,
    pub output: f64,
    pub switches: f64,
    pub esr_l: f64,
    pub esr_c: f64,
    pub stored_start: f64,
    pub stored_end: f64,
}

impl EnergyLedger {
    pub fn dissipated(&self) -> f64 {
        self.switches + self.esr_l + self.esr_c
    }

    /// `|E_in - E_out - E_diss - ΔE_stored| / E_in`.
    pub fn imbalance(&self) -> f64 {
        let residual = self.input - self.output - self.dissipated() - (self.stored_end - self.stored_start);
        if self.input.abs() > 0.0 {
            (residual / self.input).abs()
        } else {
            residual.abs()
        }
    }
}

/// Uniformly sampled observables. Sample `k` is taken at `k * dt`; the
/// switch-dependent columns use the switch states of the step that starts
/// at that sample, and `i_supply` is the mean supply current over that step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceSet {
    pub dt: f64,
    pub t: Vec<f64>,
    pub v_out: Vec<f64>,
    pub v_sw: Vec<f64>,
    pub i_l: Vec<f64>,
    pub v_c: Vec<f64>,
    pub v_gate_p: Vec<f64>,
    pub v_gate_n: Vec<f64>,
    pub trig: Vec<bool>,
    pub i_supply: Vec<f64>,
    pub pmos_on: Vec<bool>,
    pub nmos_on: Vec<bool>,
    pub energy: EnergyLedger,
}

impl TraceSet {
    pub fn with_capacity(dt: f64, n: usize) -> Self {
        Self {
            dt,
            t: Vec::with_capacity(n),
            v_out: Vec::with_capacity(n),
            v_sw: Vec::with_capacity(n),
            i_l: Vec::with_capacity(n),
            v_c: Vec::with_capacity(n),
            v_gate_p: Vec::with_capacity(n),
            v_gate_n: Vec::with_capacity(n),
            trig: Vec::with_capacity(n),
            i_supply: Vec::with_capacity(n),
            pmos_on: Vec::with_capacity(n),
            nmos_on: Vec::with_capacity(n),
            energy: EnergyLedger::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        let mut line = String::with_capacity(160);
        for k in 0..self.len() {
            line.clear();
            for (idx, v) in [
                self.t[k],
                self.v_out[k],
                self.v_sw[k],
                self.i_l[k],
                self.v_c[k],
                self.v_gate_p[k],
                self.v_gate_n[k],
            ]
            .into_iter()
            .enumerate()
            {
                if idx > 0 {
                    line.push(',');
                }
                line.push_str(&sig9(v));
            }
            line.push_str(if self.trig[k] { ",1," } else { ",0," });
            line.push_str(&sig9(self.i_supply[k]));
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        w.flush()
    }
}

/// Plain decimal with nine significant digits. Magnitudes below 1e-30 print
/// as `0`.
pub fn sig9(v: f64) -> String {
    if v == 0.0 || v.abs() < 1e-30 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let decimals = |x: f64| (8 - x.abs().log10().floor() as i32).max(0) as usize;
    let mut prec = decimals(v);
    let mut s = format!("{v:.prec$}");
    // Rounding may carry into a new leading digit (9.9999999996 -> 10.0000000).
    let rounded: f64 = s.parse().unwrap_or(v);
    if decimals(rounded) < prec {
        prec = decimals(rounded);
        s = format!("{v:.prec$}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(1.0), "1.00000000");
        assert_eq!(sig9(-4999.4), "-4999.40000");
        assert_eq!(sig9(1e-9), "0.00000000100000000");
        assert_eq!(sig9(0.0123456789123), "0.0123456789");
        assert_eq!(sig9(123456789012.0), "123456789012");
        assert_eq!(sig9(9.9999999996), "10.0000000");
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(1e-40), "0");
    }

    #[test]
    fn csv_layout() {
        let mut t = TraceSet::with_capacity(1e-9, 2);
        for k in 0..2 {
            t.t.push(k as f64 * 1e-9);
            t.v_out.push(1.0);
            t.v_sw.push(1.19);
            t.i_l.push(0.01);
            t.v_c.push(0.99);
            t.v_gate_p.push(0.0);
            t.v_gate_n.push(0.0);
            t.trig.push(k == 1);
            t.i_supply.push(0.01);
            t.pmos_on.push(true);
            t.nmos_on.push(false);
        }
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(
            lines[2],
            "0.00000000100000000,1.00000000,1.19000000,0.0100000000,0.990000000,0,0,1,0.0100000000"
        );
        assert_eq!(lines.len(), 3);
    }
}

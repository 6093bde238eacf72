// SPDX-License-Identifier: Apache-2.0
//! Scenario description: converter, PWM drive, trojan, mitigation and solver
//! settings, plus the line-oriented text format they are stored in.
//!
//! ```text
//! label = pmos_lock
//! [trojan]
//! target = pmos      # none | pmos | nmos
//! gate = nor
//! t_trigger_us = 500
//! ```
//!
//! Every key carries a fixed unit suffix. Keys that are absent keep the
//! baseline defaults; unknown keys and sections are rejected.

use std::fmt::{self, Write as _};

use thiserror::Error;

/// Power-stage component values, SI units.
#[derive(Debug, Clone, PartialEq)]
pub struct ConverterParams {
    pub vsup: f64,
    pub l: f64,
    pub esr_l: f64,
    pub c_out: f64,
    pub esr_c: f64,
    pub r_load: f64,
    pub i_load: f64,
    pub ron_p: f64,
    pub ron_n: f64,
    pub roff: f64,
    /// Lumped capacitance charged once per cycle by the drive chain and FET
    /// gates. Accounts for switching loss in the efficiency figure.
    pub c_sw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    OpenLoop,
    PerCyclePi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PwmParams {
    pub freq: f64,
    /// Fraction of each period the high-side PMOS is commanded to conduct.
    pub duty: f64,
    pub deadtime: f64,
    pub driver_delay: f64,
    pub control: Control,
    pub vref: f64,
    pub kp: f64,
    pub ki: f64,
    /// Break-before-make interlock between the two gate drivers.
    pub interlock: bool,
}

impl PwmParams {
    pub fn period(&self) -> f64 {
        1.0 / self.freq
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrojanTarget {
    None,
    Pmos,
    Nmos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrojanGate {
    Or,
    Nor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrojanConfig {
    pub target: TrojanTarget,
    pub gate: TrojanGate,
    pub t_trigger: f64,
    /// `f64::INFINITY` keeps the trojan triggered until the end of the run.
    pub t_release: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MitigationConfig {
    /// Parity capacitor between the PWM root and the gate net; zero disables it.
    pub c_par: f64,
    pub r_drv: f64,
    pub c_gate: f64,
    pub t_slew: f64,
    /// Place the trojan gate on the FET side of the parity capacitor.
    pub trojan_downstream_of_cap: bool,
}

impl MitigationConfig {
    pub fn enabled(&self) -> bool {
        self.c_par > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub t_end: f64,
    pub dt: f64,
    pub record_start: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub label: Option<String>,
    pub converter: ConverterParams,
    pub pwm: PwmParams,
    pub trojan: TrojanConfig,
    pub mitigation: MitigationConfig,
    pub sim: SimParams,
}

impl Default for ConverterParams {
    fn default() -> Self {
        Self {
            vsup: 1.2,
            l: 55.5e-6,
            esr_l: 0.777,
            c_out: 40e-9,
            esr_c: 0.358,
            r_load: 100.0,
            i_load: 0.0,
            ron_p: 1.0,
            ron_n: 1.0,
            roff: 1e6,
            // Calibrated so the baseline run reports 93.3 % efficiency.
            c_sw: 373.2e-12,
        }
    }
}

impl Default for PwmParams {
    fn default() -> Self {
        Self {
            freq: 1e6,
            duty: 0.848,
            deadtime: 0.0,
            driver_delay: 2e-9,
            control: Control::OpenLoop,
            vref: 1.0,
            kp: 0.02,
            ki: 0.0005,
            interlock: true,
        }
    }
}

impl Default for TrojanConfig {
    fn default() -> Self {
        Self {
            target: TrojanTarget::None,
            gate: TrojanGate::Or,
            t_trigger: 500e-6,
            t_release: f64::INFINITY,
        }
    }
}

impl Default for MitigationConfig {
    fn default() -> Self {
        Self {
            c_par: 0.0,
            r_drv: 10e3,
            c_gate: 5e-12,
            t_slew: 1e-9,
            trojan_downstream_of_cap: false,
        }
    }
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            t_end: 1000e-6,
            dt: 1e-9,
            record_start: 900e-6,
        }
    }
}

impl Default for Scenario {
    fn default() -> Self {
        Self::baseline()
    }
}

impl Scenario {
    /// Baseline operating point: 1.2 V in, 1.0 V / 10 mA out at 1 MHz.
    pub fn baseline() -> Self {
        Self {
            label: None,
            converter: ConverterParams::default(),
            pwm: PwmParams::default(),
            trojan: TrojanConfig::default(),
            mitigation: MitigationConfig::default(),
            sim: SimParams::default(),
        }
    }

    pub fn label_or<'a>(&'a self, fallback: &'a str) -> &'a str {
        self.label.as_deref().unwrap_or(fallback)
    }

    /// Set one key from its textual value, exactly as the parser would.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), KeyError> {
        if section.is_empty() {
            return match key {
                "label" => {
                    self.label = Some(value.to_string());
                    Ok(())
                }
                _ => Err(KeyError::Unknown),
            };
        }
        if let Some(def) = numeric_key(section, key) {
            let v = parse_number(value, def.allow_inf).ok_or(KeyError::Mismatch {
                expected: if def.allow_inf {
                    "a number or `inf`"
                } else {
                    "a finite number"
                },
            })?;
            *numeric_field_mut(self, section, key).expect("numeric key table out of sync") =
                def.unit.to_si(v);
            return Ok(());
        }
        match (section, key) {
            ("pwm", "control") => {
                self.pwm.control = match value {
                    "open_loop" => Control::OpenLoop,
                    "pi" => Control::PerCyclePi,
                    _ => {
                        return Err(KeyError::Mismatch {
                            expected: "open_loop | pi",
                        })
                    }
                }
            }
            ("pwm", "interlock") => self.pwm.interlock = parse_bool(value)?,
            ("trojan", "target") => {
                self.trojan.target = match value {
                    "none" => TrojanTarget::None,
                    "pmos" => TrojanTarget::Pmos,
                    "nmos" => TrojanTarget::Nmos,
                    _ => {
                        return Err(KeyError::Mismatch {
                            expected: "none | pmos | nmos",
                        })
                    }
                }
            }
            ("trojan", "gate") => {
                self.trojan.gate = match value {
                    "or" => TrojanGate::Or,
                    "nor" => TrojanGate::Nor,
                    _ => return Err(KeyError::Mismatch { expected: "or | nor" }),
                }
            }
            ("mitigation", "trojan_downstream_of_cap") => {
                self.mitigation.trojan_downstream_of_cap = parse_bool(value)?
            }
            _ => return Err(KeyError::Unknown),
        }
        Ok(())
    }

    /// Numeric value of a key, in the key's file unit.
    pub fn get_numeric(&self, section: &str, key: &str) -> Option<f64> {
        let def = numeric_key(section, key)?;
        numeric_field(self, section, key).map(|v| def.unit.from_si(v))
    }

    /// Render in the text format; `parse_scenario(&s.render())` reproduces `s`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if let Some(label) = &self.label {
            let _ = writeln!(out, "label = {label}");
        }
        for section in SECTIONS {
            let _ = writeln!(out, "\n[{section}]");
            for def in NUMERIC_KEYS.iter().filter(|d| d.section == *section) {
                let si = numeric_field(self, def.section, def.key).unwrap();
                let _ = writeln!(out, "{} = {}", def.key, render_number(si, def.unit));
            }
            match *section {
                "pwm" => {
                    let control = match self.pwm.control {
                        Control::OpenLoop => "open_loop",
                        Control::PerCyclePi => "pi",
                    };
                    let _ = writeln!(out, "control = {control}");
                    let _ = writeln!(out, "interlock = {}", self.pwm.interlock);
                }
                "trojan" => {
                    let target = match self.trojan.target {
                        TrojanTarget::None => "none",
                        TrojanTarget::Pmos => "pmos",
                        TrojanTarget::Nmos => "nmos",
                    };
                    let gate = match self.trojan.gate {
                        TrojanGate::Or => "or",
                        TrojanGate::Nor => "nor",
                    };
                    let _ = writeln!(out, "target = {target}");
                    let _ = writeln!(out, "gate = {gate}");
                }
                "mitigation" => {
                    let _ = writeln!(
                        out,
                        "trojan_downstream_of_cap = {}",
                        self.mitigation.trojan_downstream_of_cap
                    );
                }
                _ => {}
            }
        }
        out
    }
}

pub const SECTIONS: &[&str] = &["sim", "converter", "pwm", "trojan", "mitigation"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    One,
    Milli,
    Micro,
    Nano,
    Pico,
    Kilo,
    Mega,
}

impl Unit {
    // Division by an exact power of ten rounds once; multiplying by 1e-6 would
    // round twice.
    pub fn to_si(self, v: f64) -> f64 {
        match self {
            Unit::One => v,
            Unit::Milli => v / 1e3,
            Unit::Micro => v / 1e6,
            Unit::Nano => v / 1e9,
            Unit::Pico => v / 1e12,
            Unit::Kilo => v * 1e3,
            Unit::Mega => v * 1e6,
        }
    }

    pub fn from_si(self, v: f64) -> f64 {
        match self {
            Unit::One => v,
            Unit::Milli => v * 1e3,
            Unit::Micro => v * 1e6,
            Unit::Nano => v * 1e9,
            Unit::Pico => v * 1e12,
            Unit::Kilo => v / 1e3,
            Unit::Mega => v / 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NumericKey {
    pub section: &'static str,
    pub key: &'static str,
    pub unit: Unit,
    pub allow_inf: bool,
}

macro_rules! numeric_keys {
    ($( $section:literal $key:literal $unit:ident $inf:literal => $($field:ident).+ ;)*) => {
        pub const NUMERIC_KEYS: &[NumericKey] = &[
            $( NumericKey { section: $section, key: $key, unit: Unit::$unit, allow_inf: $inf }, )*
        ];

        fn numeric_field_mut<'a>(s: &'a mut Scenario, section: &str, key: &str) -> Option<&'a mut f64> {
            match (section, key) {
                $( ($section, $key) => Some(&mut s.$($field).+), )*
                _ => None,
            }
        }

        fn numeric_field(s: &Scenario, section: &str, key: &str) -> Option<f64> {
            match (section, key) {
                $( ($section, $key) => Some(s.$($field).+), )*
                _ => None,
            }
        }
    };
}

numeric_keys! {
    "sim" "t_end_us" Micro false => sim.t_end;
    "sim" "dt_ns" Nano false => sim.dt;
    "sim" "record_start_us" Micro false => sim.record_start;
    "converter" "vsup_v" One false => converter.vsup;
    "converter" "l_uh" Micro false => converter.l;
    "converter" "esr_l_ohm" One false => converter.esr_l;
    "converter" "c_out_nf" Nano false => converter.c_out;
    "converter" "esr_c_ohm" One false => converter.esr_c;
    "converter" "r_load_ohm" One false => converter.r_load;
    "converter" "i_load_ma" Milli false => converter.i_load;
    "converter" "ron_p_ohm" One false => converter.ron_p;
    "converter" "ron_n_ohm" One false => converter.ron_n;
    "converter" "roff_mohm" Mega false => converter.roff;
    "converter" "c_sw_pf" Pico false => converter.c_sw;
    "pwm" "f_khz" Kilo false => pwm.freq;
    "pwm" "duty" One false => pwm.duty;
    "pwm" "deadtime_ns" Nano false => pwm.deadtime;
    "pwm" "driver_delay_ns" Nano false => pwm.driver_delay;
    "pwm" "vref_v" One false => pwm.vref;
    "pwm" "kp" One false => pwm.kp;
    "pwm" "ki" One false => pwm.ki;
    "trojan" "t_trigger_us" Micro false => trojan.t_trigger;
    "trojan" "t_release_us" Micro true => trojan.t_release;
    "mitigation" "parity_cap_pf" Pico false => mitigation.c_par;
    "mitigation" "r_drv_kohm" Kilo false => mitigation.r_drv;
    "mitigation" "c_gate_pf" Pico false => mitigation.c_gate;
    "mitigation" "slew_ns" Nano false => mitigation.t_slew;
}

pub fn numeric_key(section: &str, key: &str) -> Option<NumericKey> {
    NUMERIC_KEYS
        .iter()
        .find(|d| d.section == section && d.key == key)
        .copied()
}

fn parse_number(value: &str, allow_inf: bool) -> Option<f64> {
    if value == "inf" {
        return allow_inf.then_some(f64::INFINITY);
    }
    // Reject the spellings Rust accepts but the format does not ("NaN", "infinity").
    if !value
        .bytes()
        .all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E'))
    {
        return None;
    }
    value.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_bool(value: &str) -> Result<bool, KeyError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(KeyError::Mismatch {
            expected: "true | false",
        }),
    }
}

/// Shortest decimal in file units that converts back to exactly `si`.
fn render_number(si: f64, unit: Unit) -> String {
    if si.is_infinite() {
        return "inf".to_string();
    }
    let v = unit.from_si(si);
    let mut candidate = v;
    for _ in 0..8 {
        if unit.to_si(candidate) == si {
            return format!("{candidate}");
        }
        candidate = next_toward(candidate, if unit.to_si(candidate) < si { 1.0 } else { -1.0 });
    }
    format!("{v}")
}

fn next_toward(x: f64, dir: f64) -> f64 {
    if x == 0.0 {
        return f64::from_bits(1).copysign(dir);
    }
    let bits = x.to_bits();
    if (x > 0.0) == (dir > 0.0) {
        f64::from_bits(bits + 1)
    } else {
        f64::from_bits(bits - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeyError {
    Unknown,
    Mismatch { expected: &'static str },
}

/// One broken invariant: the offending field and the rule it breaks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown section [{section}] at line {line}")]
    UnknownSection { section: String, line: usize },
    #[error("unknown key `{key}` in {} at line {line}", section_name(.section))]
    UnknownKey {
        section: String,
        key: String,
        line: usize,
    },
    #[error("type mismatch for `{key}` at line {line}: expected {expected}, found `{found}`")]
    TypeMismatch {
        key: String,
        line: usize,
        expected: &'static str,
        found: String,
    },
    #[error("invariant violation: {}", join_rules(.0))]
    Invalid(Vec<Violation>),
}

fn section_name(section: &str) -> String {
    if section.is_empty() {
        "top level".to_string()
    } else {
        format!("[{section}]")
    }
}

fn join_rules(v: &[Violation]) -> String {
    v.iter().map(|v| v.rule.as_str()).collect::<Vec<_>>().join("; ")
}

/// Parse a scenario document, fill defaults, and validate the result.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut scenario = Scenario::baseline();
    let mut section = String::new();
    let mut seen: Vec<(String, String)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let indent = content.len() - content.trim_start().len();
        let line = content.trim();
        if line.is_empty() {
            continue;
        }
        let column = raw[..indent].chars().count() + 1;

        if let Some(rest) = line.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                return Err(ScenarioError::Syntax {
                    line: line_no,
                    column: column + line.chars().count(),
                    message: "expected `]` to close the section header".into(),
                });
            };
            let name = name.trim();
            if !SECTIONS.contains(&name) {
                return Err(ScenarioError::UnknownSection {
                    section: name.to_string(),
                    line: line_no,
                });
            }
            section = name.to_string();
            continue;
        }

        let Some(eq) = line.find('=') else {
            return Err(ScenarioError::Syntax {
                line: line_no,
                column,
                message: "expected `key = value` or `[section]`".into(),
            });
        };
        let key = line[..eq].trim();
        let value = line[eq + 1..].trim();
        if key.is_empty() {
            return Err(ScenarioError::Syntax {
                line: line_no,
                column,
                message: "missing key before `=`".into(),
            });
        }
        if value.is_empty() {
            return Err(ScenarioError::Syntax {
                line: line_no,
                column: column + line[..=eq].chars().count(),
                message: format!("missing value for `{key}`"),
            });
        }
        if seen.iter().any(|(s, k)| *s == section && k == key) {
            return Err(ScenarioError::Syntax {
                line: line_no,
                column,
                message: format!("duplicate key `{key}`"),
            });
        }
        seen.push((section.clone(), key.to_string()));

        scenario.set(&section, key, value).map_err(|e| match e {
            KeyError::Unknown => ScenarioError::UnknownKey {
                section: section.clone(),
                key: key.to_string(),
                line: line_no,
            },
            KeyError::Mismatch { expected } => ScenarioError::TypeMismatch {
                key: key.to_string(),
                line: line_no,
                expected,
                found: value.to_string(),
            },
        })?;
    }

    let violations = validate_scenario(&scenario);
    if violations.is_empty() {
        Ok(scenario)
    } else {
        Err(ScenarioError::Invalid(violations))
    }
}

/// Check every invariant; an empty list means the scenario can be simulated.
// Negated comparisons are deliberate: NaN must fail every check.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn validate_scenario(s: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut fail = |field: &'static str, rule: &str| {
        out.push(Violation {
            field,
            rule: rule.to_string(),
        })
    };

    if let Some(label) = &s.label {
        if label.is_empty() || label.trim() != label || label.contains(['#', '\n', '\r', '/', '\\']) {
            fail(
                "label",
                "label must be non-empty trimmed text without '#', '/', '\\' or line breaks",
            );
        }
    }

    let c = &s.converter;
    let positive = [
        ("converter.vsup_v", c.vsup, "vsup must be positive"),
        ("converter.l_uh", c.l, "inductance must be positive"),
        (
            "converter.c_out_nf",
            c.c_out,
            "output capacitance must be positive",
        ),
        (
            "converter.r_load_ohm",
            c.r_load,
            "load resistance must be positive",
        ),
        ("converter.ron_p_ohm", c.ron_p, "ron_p must be positive"),
        ("converter.ron_n_ohm", c.ron_n, "ron_n must be positive"),
        ("converter.roff_mohm", c.roff, "roff must be positive"),
    ];
    for (field, v, rule) in positive {
        if !(v > 0.0 && v.is_finite()) {
            fail(field, rule);
        }
    }
    let non_negative = [
        ("converter.esr_l_ohm", c.esr_l, "esr_l must be non-negative"),
        ("converter.esr_c_ohm", c.esr_c, "esr_c must be non-negative"),
        ("converter.i_load_ma", c.i_load, "i_load must be non-negative"),
        ("converter.c_sw_pf", c.c_sw, "c_sw must be non-negative"),
    ];
    for (field, v, rule) in non_negative {
        if !(v >= 0.0 && v.is_finite()) {
            fail(field, rule);
        }
    }
    if c.roff < 1000.0 * c.ron_p.max(c.ron_n) {
        fail("converter.roff_mohm", "roff/ron ratio below 1000");
    }

    let p = &s.pwm;
    let period_ok = p.freq > 0.0 && p.freq.is_finite();
    if !period_ok {
        fail("pwm.f_khz", "freq must be positive");
    }
    if !(0.0..=1.0).contains(&p.duty) {
        fail("pwm.duty", "duty ∈ [0,1]");
    }
    if !(p.deadtime >= 0.0) {
        fail("pwm.deadtime_ns", "deadtime must be non-negative");
    }
    if !(p.driver_delay >= 0.0) {
        fail("pwm.driver_delay_ns", "driver_delay must be non-negative");
    }
    if !(p.vref > 0.0) {
        fail("pwm.vref_v", "vref must be positive");
    }
    if period_ok {
        let period = p.period();
        if p.deadtime >= period / 4.0 {
            fail("pwm.deadtime_ns", "deadtime exceeds quarter period");
        }
        // Only a duty strictly inside (0,1) has two edges per period.
        if p.duty > 0.0 && p.duty < 1.0 {
            let guard = p.deadtime + 2.0 * p.driver_delay;
            if guard >= p.duty * period || guard >= (1.0 - p.duty) * period {
                fail(
                    "pwm.deadtime_ns",
                    "deadtime plus driver delays exceed a switching phase",
                );
            }
        }
    }

    let t = &s.trojan;
    if !(t.t_trigger >= 0.0 && t.t_trigger.is_finite()) {
        fail("trojan.t_trigger_us", "t_trigger must be non-negative");
    }
    if t.target != TrojanTarget::None && !(t.t_release > t.t_trigger) {
        fail("trojan.t_release_us", "t_release must follow t_trigger");
    }

    let m = &s.mitigation;
    if !(m.c_par >= 0.0) {
        fail(
            "mitigation.parity_cap_pf",
            "parity capacitance must be non-negative",
        );
    }
    if m.c_par > 0.0 {
        if !(m.r_drv > 0.0) {
            fail(
                "mitigation.r_drv_kohm",
                "r_drv must be positive when mitigation is enabled",
            );
        }
        if !(m.c_gate > 0.0) {
            fail(
                "mitigation.c_gate_pf",
                "c_gate must be positive when mitigation is enabled",
            );
        }
        if !(m.t_slew > 0.0) {
            fail(
                "mitigation.slew_ns",
                "slew must be positive when mitigation is enabled",
            );
        }
        if period_ok && m.t_slew >= p.period() / 4.0 {
            fail("mitigation.slew_ns", "slew exceeds quarter period");
        }
    }

    let sim = &s.sim;
    if !(sim.dt > 0.0) {
        fail("sim.dt_ns", "dt must be positive");
    }
    if !(sim.t_end > 0.0 && sim.t_end.is_finite()) {
        fail("sim.t_end_us", "t_end must be positive");
    }
    if !(sim.record_start >= 0.0 && sim.record_start < sim.t_end) {
        fail("sim.record_start_us", "record_start must precede t_end");
    }
    if period_ok {
        let period = p.period();
        if sim.dt > period / 200.0 {
            fail("sim.dt_ns", "dt exceeds 1/200 of the switching period");
        }
        if (sim.t_end - sim.record_start) < 20.0 * period * (1.0 - 1e-9) {
            fail(
                "sim.record_start_us",
                "measurement window shorter than 20 switching periods",
            );
        }
    }
    out
}

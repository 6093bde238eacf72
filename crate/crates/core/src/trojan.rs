// SPDX-License-Identifier: Apache-2.0
//! The PWM-locking trojan: one OR/NOR gate spliced into a FET gate net,
//! with its second input driven by a time-windowed trigger.
//!
//! A NOR gate inverts while idle, so its PWM input is fed the inverted net.
//! Untriggered, both gate types are transparent; triggered, OR holds the net
//! at the rail and NOR holds it at ground.

use crate::scenario::{TrojanConfig, TrojanGate, TrojanTarget};
use crate::sim::GateLevels;

/// Size of the modelled trigger structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footprint {
    pub gates: u32,
    pub transistors: u32,
}

pub const FOOTPRINT: Footprint = Footprint {
    gates: 2,
    transistors: 7,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerSchedule {
    pub t_trigger: f64,
    pub t_release: f64,
}

impl From<&TrojanConfig> for TriggerSchedule {
    fn from(cfg: &TrojanConfig) -> Self {
        Self {
            t_trigger: cfg.t_trigger,
            t_release: cfg.t_release,
        }
    }
}

pub fn trigger_active(t: f64, sched: &TriggerSchedule) -> bool {
    sched.t_trigger <= t && t < sched.t_release
}

/// Output of the inserted gate.
pub fn corrupt(pwm: bool, trig: bool, gate: TrojanGate) -> bool {
    match gate {
        TrojanGate::Or => pwm || trig,
        TrojanGate::Nor => !(pwm || trig),
    }
}

/// The targeted net after the inserted gate, NOR feed inverted.
pub fn corrupt_net(level: bool, trig: bool, gate: TrojanGate) -> bool {
    match gate {
        TrojanGate::Or => corrupt(level, trig, gate),
        TrojanGate::Nor => corrupt(!level, trig, gate),
    }
}

/// Apply the trojan to the gate nets for an already-resolved trigger value.
pub fn apply_with_trigger(drive: GateLevels, trig: bool, cfg: &TrojanConfig) -> GateLevels {
    match cfg.target {
        TrojanTarget::None => drive,
        TrojanTarget::Pmos => GateLevels {
            pmos: corrupt_net(drive.pmos, trig, cfg.gate),
            ..drive
        },
        TrojanTarget::Nmos => GateLevels {
            nmos: corrupt_net(drive.nmos, trig, cfg.gate),
            ..drive
        },
    }
}

pub fn apply_trojan(drive: GateLevels, t: f64, cfg: &TrojanConfig) -> GateLevels {
    let trig = trigger_active(t, &TriggerSchedule::from(cfg));
    apply_with_trigger(drive, trig, cfg)
}

/// Level the targeted net is held at while triggered, if any.
pub fn locked_level(cfg: &TrojanConfig) -> Option<bool> {
    match cfg.target {
        TrojanTarget::None => None,
        _ => Some(cfg.gate == TrojanGate::Or),
    }
}

/// Table-style description of the lock, e.g. "PMOS gate locked low".
pub fn describe(cfg: &TrojanConfig) -> String {
    let net = match cfg.target {
        TrojanTarget::None => return "no trojan".to_string(),
        TrojanTarget::Pmos => "PMOS",
        TrojanTarget::Nmos => "NMOS",
    };
    let level = if locked_level(cfg) == Some(true) {
        "high"
    } else {
        "low"
    };
    format!("{net} gate locked {level}")
}

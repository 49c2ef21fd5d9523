use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::angular_momentum::{mixing_angle, LevelScheme};
use crate::error::{Error, Result};

/// Parameters of the write/read sequence and the detection chain. Durations
/// are in ns, probabilities and efficiencies are dimensionless.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    /// Mixing angle of the atom–photon state, radians.
    pub eta: f64,
    /// Pair-creation probability per write pulse.
    pub excitation_prob: f64,
    /// Spin-wave to idler conversion efficiency at zero storage time.
    pub retrieval_eff: f64,
    pub det_eff_s: f64,
    pub det_eff_i: f64,
    /// Accidental-click probability per D1 gate.
    pub bg_prob_s: f64,
    /// Accidental-click probability per D2 gate.
    pub bg_prob_i: f64,
    /// Write-to-read delay (pulse center to pulse center).
    pub delta_t_ns: f64,
    /// Decay constant of the polarization visibility during storage.
    pub memory_tau_ns: f64,
    /// Decay constant of the retrieval efficiency during storage.
    pub retrieval_tau_ns: f64,
    /// Polarization visibility at zero storage time.
    pub visibility: f64,
    pub cycle_ns: f64,
    pub dark_ns: f64,
    pub write_len_ns: f64,
    pub read_len_ns: f64,
    pub gate_d1_ns: f64,
    pub gate_d2_ns: f64,
    pub tia_resolution_ns: f64,
}

/// Config keys in serialization order.
pub const CONFIG_KEYS: [&str; 18] = [
    "eta",
    "excitation_prob",
    "retrieval_eff",
    "det_eff_s",
    "det_eff_i",
    "bg_prob_s",
    "bg_prob_i",
    "delta_t_ns",
    "memory_tau_ns",
    "retrieval_tau_ns",
    "visibility",
    "cycle_ns",
    "dark_ns",
    "write_len_ns",
    "read_len_ns",
    "gate_d1_ns",
    "gate_d2_ns",
    "tia_resolution_ns",
];

impl Default for ExperimentConfig {
    /// 85Rb sequence timing with efficiencies calibrated to
    /// `R_si/R_i ≈ R_si/R_s ≈ 0.02` and a coincidence-fringe visibility near
    /// 90% at the default 200 ns storage time (0.89 at θi = 67.5°).
    fn default() -> Self {
        ExperimentConfig {
            eta: mixing_angle(&LevelScheme::rubidium85_d1()).expect("85Rb scheme is valid"),
            excitation_prob: 0.1,
            retrieval_eff: 0.5,
            det_eff_s: 0.0214,
            det_eff_i: 0.0452,
            bg_prob_s: 2.0e-4,
            bg_prob_i: 2.0e-4,
            delta_t_ns: 200.0,
            memory_tau_ns: 3700.0,
            retrieval_tau_ns: 3700.0,
            visibility: 1.0,
            cycle_ns: 1500.0,
            dark_ns: 640.0,
            write_len_ns: 130.0,
            read_len_ns: 120.0,
            gate_d1_ns: 140.0,
            gate_d2_ns: 130.0,
            tia_resolution_ns: 2.0,
        }
    }
}

/// Pulse and gate positions within one cycle, ns from the cycle start.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Timing {
    pub write_center_ns: f64,
    pub read_center_ns: f64,
    pub d1_gate: (f64, f64),
    pub d2_gate: (f64, f64),
}

impl ExperimentConfig {
    fn field(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "eta" => &mut self.eta,
            "excitation_prob" => &mut self.excitation_prob,
            "retrieval_eff" => &mut self.retrieval_eff,
            "det_eff_s" => &mut self.det_eff_s,
            "det_eff_i" => &mut self.det_eff_i,
            "bg_prob_s" => &mut self.bg_prob_s,
            "bg_prob_i" => &mut self.bg_prob_i,
            "delta_t_ns" => &mut self.delta_t_ns,
            "memory_tau_ns" => &mut self.memory_tau_ns,
            "retrieval_tau_ns" => &mut self.retrieval_tau_ns,
            "visibility" => &mut self.visibility,
            "cycle_ns" => &mut self.cycle_ns,
            "dark_ns" => &mut self.dark_ns,
            "write_len_ns" => &mut self.write_len_ns,
            "read_len_ns" => &mut self.read_len_ns,
            "gate_d1_ns" => &mut self.gate_d1_ns,
            "gate_d2_ns" => &mut self.gate_d2_ns,
            "tia_resolution_ns" => &mut self.tia_resolution_ns,
            _ => return None,
        })
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.clone().field(key).map(|v| *v)
    }

    /// Sets one key from its text value. `line` is used for error reporting.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let slot = self
            .field(key)
            .ok_or_else(|| Error::parse(line, format!("unknown config key {key:?}")))?;
        *slot = value
            .trim()
            .parse()
            .map_err(|_| Error::parse(line, format!("{key}: not a number: {value:?}")))?;
        Ok(())
    }

    pub fn key_values(&self) -> Vec<(&'static str, f64)> {
        CONFIG_KEYS
            .iter()
            .map(|&k| (k, self.get(k).expect("known key")))
            .collect()
    }

    /// Parses `key = value` lines; `#` starts a comment. Missing keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| {
                Error::parse(line, format!("expected key = value, got {content:?}"))
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::parse(line, format!("duplicate key {key:?}")));
            }
            config.set(key, value, line)?;
        }
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::parse(&text).map_err(|e| e.in_file(path))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.key_values() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Write pulse centered in the D1 gate, which opens at the cycle start;
    /// read pulse `delta_t_ns` later, centered in the D2 gate.
    pub fn timing(&self) -> Timing {
        let write_center_ns = self.gate_d1_ns / 2.0;
        let read_center_ns = write_center_ns + self.delta_t_ns;
        Timing {
            write_center_ns,
            read_center_ns,
            d1_gate: (
                write_center_ns - self.gate_d1_ns / 2.0,
                write_center_ns + self.gate_d1_ns / 2.0,
            ),
            d2_gate: (
                read_center_ns - self.gate_d2_ns / 2.0,
                read_center_ns + self.gate_d2_ns / 2.0,
            ),
        }
    }

    /// Retrieval efficiency after the configured storage time.
    pub fn retrieval_at_delay(&self) -> f64 {
        self.retrieval_eff * (-self.delta_t_ns / self.retrieval_tau_ns).exp()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&self.eta) {
            return bad(format!("eta = {} outside [0, pi/2]", self.eta));
        }
        for key in [
            "excitation_prob",
            "retrieval_eff",
            "det_eff_s",
            "det_eff_i",
            "bg_prob_s",
            "bg_prob_i",
            "visibility",
        ] {
            let v = self.get(key).expect("known key");
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{key} = {v} outside [0, 1]"));
            }
        }
        for key in [
            "memory_tau_ns",
            "retrieval_tau_ns",
            "cycle_ns",
            "dark_ns",
            "write_len_ns",
            "read_len_ns",
            "gate_d1_ns",
            "gate_d2_ns",
            "tia_resolution_ns",
        ] {
            let v = self.get(key).expect("known key");
            if !(v > 0.0) {
                return bad(format!("{key} = {v} must be positive"));
            }
        }
        if !(self.delta_t_ns >= 0.0 && self.delta_t_ns.is_finite()) {
            return bad(format!(
                "delta_t_ns = {} must be finite and non-negative",
                self.delta_t_ns
            ));
        }
        if !self.cycle_ns.is_finite() || self.dark_ns > self.cycle_ns {
            return bad(format!(
                "dark period {} exceeds cycle {}",
                self.dark_ns, self.cycle_ns
            ));
        }
        let t = self.timing();
        if t.d2_gate.1 > self.cycle_ns {
            return bad(format!(
                "D2 gate closes at {} ns, after the {} ns cycle ends",
                t.d2_gate.1, self.cycle_ns
            ));
        }
        if t.read_center_ns + self.read_len_ns / 2.0 > self.dark_ns {
            log::warn!(
                "read pulse ends at {} ns, after the {} ns dark period",
                t.read_center_ns + self.read_len_ns / 2.0,
                self.dark_ns
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_timed() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let t = c.timing();
        assert_eq!(t.d1_gate, (0.0, 140.0));
        assert_eq!(t.d2_gate, (205.0, 335.0));
        assert!(t.d2_gate.1 < c.dark_ns);
    }

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::default();
        c.memory_tau_ns = f64::INFINITY;
        c.eta = 0.1 + 0.2;
        let back = ExperimentConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = ExperimentConfig::parse("# comment\neta = 0.5\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = ExperimentConfig::parse("eta = 0.5\n\ndet_eff_s = abc").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        let err = ExperimentConfig::parse("eta 0.5").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = ExperimentConfig::parse("eta=0.5\neta=0.6").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = ExperimentConfig::parse("excitation_prob = 0.3  # per pulse\n").unwrap();
        assert_eq!(c.excitation_prob, 0.3);
        assert_eq!(c.cycle_ns, 1500.0);
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut c = ExperimentConfig::default();
        c.det_eff_i = 1.2;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.tia_resolution_ns = 0.0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.delta_t_ns = 7000.0;
        assert!(c.validate().is_err(), "gate beyond the cycle");
        c.cycle_ns = 8000.0;
        c.dark_ns = 7500.0;
        c.validate().unwrap();
    }
}

//! Gating and start/stop coincidence counting of event logs, and the derived
//! quantities: E and S with uncertainties, g_si, detection efficiencies,
//! fringe and decay fits.

mod eventlog;
mod fit;

use serde::Serialize;

pub use eventlog::{
    format_event_log, parse_event_log, parse_event_log_str, read_event_log, save_event_log,
    write_event_log, LOG_VERSION,
};
pub use fit::{
    fit_exponential, fit_fringe, fit_fringe_counts, levenberg_marquardt, DecayFit, DecayPoint,
    FringeFit, FringePoint, LmOptions, LmSolution,
};

use crate::error::{Error, Result};
use crate::predictor::{
    chsh_S, correlation_E, reduce_angle, ChshAngles, ChshResult, Correlation, CountQuartet,
};
use crate::simulator::{
    AnalyzerSetting, Channel, DetectionEvent, EventLog, ExperimentConfig, LogHeader,
};

/// D1 and D2 acceptance windows, ns from the cycle start.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GateConfig {
    pub d1_center_ns: f64,
    pub d1_width_ns: f64,
    pub d2_center_ns: f64,
    pub d2_width_ns: f64,
}

impl GateConfig {
    /// Gates centered on the write and read pulses of `config`.
    pub fn from_config(config: &ExperimentConfig) -> Self {
        let t = config.timing();
        GateConfig {
            d1_center_ns: t.write_center_ns,
            d1_width_ns: config.gate_d1_ns,
            d2_center_ns: t.read_center_ns,
            d2_width_ns: config.gate_d2_ns,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d1_width_ns > 0.0 && self.d2_width_ns > 0.0) {
            return Err(Error::invalid(format!(
                "gate widths must be positive, got {} and {}",
                self.d1_width_ns, self.d2_width_ns
            )));
        }
        if !(self.d1_center_ns.is_finite() && self.d2_center_ns.is_finite()) {
            return Err(Error::invalid("gate centers must be finite"));
        }
        Ok(())
    }

    fn contains(&self, channel: Channel, t_ns: u64) -> bool {
        let (c, w) = match channel {
            Channel::D1 => (self.d1_center_ns, self.d1_width_ns),
            Channel::D2 => (self.d2_center_ns, self.d2_width_ns),
        };
        (t_ns as f64 - c).abs() <= w / 2.0
    }
}

/// Singles and start/stop coincidences for one setting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SettingCounts {
    pub n_trials: u64,
    /// Trials with a D1 click inside the D1 gate.
    pub n_s: u64,
    /// Trials with a D2 click inside the D2 gate.
    pub n_i: u64,
    /// Trials with both.
    pub n_si: u64,
}

impl SettingCounts {
    pub fn merge(&self, other: &SettingCounts) -> SettingCounts {
        SettingCounts {
            n_trials: self.n_trials + other.n_trials,
            n_s: self.n_s + other.n_s,
            n_i: self.n_i + other.n_i,
            n_si: self.n_si + other.n_si,
        }
    }
}

/// Counts indexed by setting id.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoincidenceTable {
    pub settings: Vec<AnalyzerSetting>,
    pub counts: Vec<SettingCounts>,
}

impl CoincidenceTable {
    pub fn total(&self) -> SettingCounts {
        self.counts
            .iter()
            .fold(SettingCounts::default(), |a, c| a.merge(c))
    }

    /// Adds the counts of a table over the same settings.
    pub fn merge(&mut self, other: &CoincidenceTable) -> Result<()> {
        if self.settings != other.settings {
            return Err(Error::invalid("tables cover different settings"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a = a.merge(b);
        }
        Ok(())
    }
}

/// Streaming start/stop counter. Events of one trial must arrive together;
/// within a trial their order does not matter.
pub struct CoincidenceCounter {
    gates: GateConfig,
    table: CoincidenceTable,
    current: Option<(u64, u32)>,
    start: bool,
    stop: bool,
}

impl CoincidenceCounter {
    pub fn new(header: &LogHeader, gates: GateConfig) -> Result<Self> {
        gates.validate()?;
        let counts = (0..header.settings.len())
            .map(|_| SettingCounts {
                n_trials: header.trials_per_setting,
                ..SettingCounts::default()
            })
            .collect();
        Ok(CoincidenceCounter {
            gates,
            table: CoincidenceTable {
                settings: header.settings.clone(),
                counts,
            },
            current: None,
            start: false,
            stop: false,
        })
    }

    fn close_trial(&mut self) {
        if let Some((_, sid)) = self.current.take() {
            let c = &mut self.table.counts[sid as usize];
            c.n_s += self.start as u64;
            c.n_i += self.stop as u64;
            c.n_si += (self.start && self.stop) as u64;
        }
        self.start = false;
        self.stop = false;
    }

    pub fn push(&mut self, e: &DetectionEvent) -> Result<()> {
        if (e.setting_id as usize) >= self.table.counts.len() {
            return Err(Error::invalid(format!(
                "event refers to unknown setting {}",
                e.setting_id
            )));
        }
        if self.current.map(|(t, _)| t) != Some(e.trial) {
            self.close_trial();
            self.current = Some((e.trial, e.setting_id));
        }
        if self.gates.contains(e.channel, e.t_ns) {
            match e.channel {
                Channel::D1 => self.start = true,
                Channel::D2 => self.stop = true,
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> CoincidenceTable {
        self.close_trial();
        self.table
    }
}

/// Per-setting singles and start/stop pairs. Each trial contributes at most
/// one start (first in-gate D1 click), one stop and one pair.
pub fn gate_and_count(log: &EventLog, gates: &GateConfig) -> Result<CoincidenceTable> {
    let mut counter = CoincidenceCounter::new(&log.header, *gates)?;
    for e in &log.events {
        counter.push(e)?;
    }
    Ok(counter.finish())
}

/// A g_si estimate with its delta-method uncertainty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GSi {
    pub g_si: f64,
    pub sigma: f64,
}

/// `g_si = (N_si/n) / ((N_s/n)(N_i/n))`, with
/// `σ/g = sqrt(1/N_si + 1/N_s + 1/N_i)` from independent Poisson counts.
pub fn compute_g_si(c: &SettingCounts) -> Result<GSi> {
    if c.n_s == 0 || c.n_i == 0 || c.n_trials == 0 {
        return Err(Error::Numerical(format!(
            "g_si undefined: N_s = {}, N_i = {}, trials = {}",
            c.n_s, c.n_i, c.n_trials
        )));
    }
    let n = c.n_trials as f64;
    let (s, i, si) = (c.n_s as f64, c.n_i as f64, c.n_si as f64);
    let g = si * n / (s * i);
    // With no coincidences, quote the g_si step of a single count.
    let sigma = if c.n_si == 0 {
        n / (s * i)
    } else {
        g * (1.0 / si + 1.0 / s + 1.0 / i).sqrt()
    };
    Ok(GSi { g_si: g, sigma })
}

/// `(α_s, α_i) = (N_si/N_i, N_si/N_s)`.
pub fn detection_efficiency(c: &SettingCounts) -> Result<(f64, f64)> {
    if c.n_s == 0 || c.n_i == 0 {
        return Err(Error::Numerical(format!(
            "efficiency undefined: N_s = {}, N_i = {}",
            c.n_s, c.n_i
        )));
    }
    let si = c.n_si as f64;
    Ok((si / c.n_i as f64, si / c.n_s as f64))
}

/// Angles match when equal modulo 180° to within this many radians.
const ANGLE_MATCH: f64 = 1e-9;

fn same_polarizer(a: f64, b: f64) -> bool {
    let d = reduce_angle(a - b);
    d < ANGLE_MATCH || std::f64::consts::PI - d < ANGLE_MATCH
}

/// Coincidences summed over every setting at `(theta_s, theta_i)`, or `None`
/// if the log has no such setting.
fn coincidences_at(table: &CoincidenceTable, theta_s: f64, theta_i: f64) -> Option<f64> {
    let mut found = false;
    let mut total = 0u64;
    for (s, c) in table.settings.iter().zip(&table.counts) {
        if let Some(m) = s.measurement() {
            if same_polarizer(m.theta_s, theta_s) && same_polarizer(m.theta_i, theta_i) {
                found = true;
                total += c.n_si;
            }
        }
    }
    found.then_some(total as f64)
}

/// Builds the four count quartets of the CHSH angle set from a table and
/// combines them into E values and S.
pub fn chsh_from_table(table: &CoincidenceTable, angles: &ChshAngles) -> Result<ChshResult> {
    let mut missing = Vec::new();
    let mut quartets = Vec::with_capacity(4);
    for setting in angles.settings() {
        let mut q = [0.0; 4];
        for (slot, m) in q.iter_mut().zip(setting.quartet()) {
            match coincidences_at(table, m.theta_s, m.theta_i) {
                Some(n) => *slot = n,
                None => missing.push(format!(
                    "({}°, {}°)",
                    round_degrees(m.theta_s),
                    round_degrees(m.theta_i)
                )),
            }
        }
        quartets.push(q);
    }
    if !missing.is_empty() {
        missing.dedup();
        return Err(Error::MissingSettings(missing));
    }
    let mut e = [Correlation::new(0.0, 0.0); 4];
    for (slot, q) in e.iter_mut().zip(quartets) {
        *slot = correlation_E(&CountQuartet::new(q[0], q[1], q[2], q[3])?)?;
    }
    Ok(chsh_S(e, *angles))
}

fn round_degrees(theta: f64) -> f64 {
    (theta.to_degrees() * 1e6).round() / 1e6
}

pub fn chsh_from_log(
    log: &EventLog,
    gates: &GateConfig,
    angles: &ChshAngles,
) -> Result<ChshResult> {
    chsh_from_table(&gate_and_count(log, gates)?, angles)
}

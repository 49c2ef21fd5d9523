//! Monte Carlo generation of time-tagged D1/D2 clicks for the write/read
//! sequence: probabilistic pair creation, polarizer projection, detector
//! efficiency, accidental clicks, gating and memory decoherence.

mod config;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_pcg::Pcg64Mcg;
use rayon::prelude::*;
use serde::Serialize;

pub use config::{ExperimentConfig, Timing, CONFIG_KEYS};

use crate::error::{Error, Result};
use crate::predictor::{ChshAngles, MeasurementSetting};
use crate::quantum_state::{add_white_noise, ideal_state, Polarizer};

/// Trials simulated per parallel work unit.
const CHUNK: u64 = 1 << 16;

/// One side of the analyzer: no polarizer, or a linear polarizer at an angle
/// in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Analyzer {
    Open,
    Degrees(f64),
}

impl Analyzer {
    pub fn polarizer(self) -> Polarizer {
        match self {
            Analyzer::Open => Polarizer::Open,
            Analyzer::Degrees(d) => Polarizer::Linear(d.to_radians()),
        }
    }

    pub fn radians(self) -> Option<f64> {
        match self {
            Analyzer::Open => None,
            Analyzer::Degrees(d) => Some(d.to_radians()),
        }
    }
}

impl fmt::Display for Analyzer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Analyzer::Open => write!(f, "open"),
            Analyzer::Degrees(d) => write!(f, "{d}"),
        }
    }
}

impl FromStr for Analyzer {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("open") {
            return Ok(Analyzer::Open);
        }
        match s.parse::<f64>() {
            Ok(d) if d.is_finite() => Ok(Analyzer::Degrees(d)),
            _ => Err(format!(
                "expected an angle in degrees or \"open\", got {s:?}"
            )),
        }
    }
}

/// Signal (D1 arm) and idler (D2 arm) analyzers used for a block of trials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AnalyzerSetting {
    pub signal: Analyzer,
    pub idler: Analyzer,
}

impl AnalyzerSetting {
    pub fn degrees(theta_s: f64, theta_i: f64) -> Self {
        AnalyzerSetting {
            signal: Analyzer::Degrees(theta_s),
            idler: Analyzer::Degrees(theta_i),
        }
    }

    pub fn open() -> Self {
        AnalyzerSetting {
            signal: Analyzer::Open,
            idler: Analyzer::Open,
        }
    }

    /// `None` unless both polarizers are in place.
    pub fn measurement(&self) -> Option<MeasurementSetting> {
        Some(MeasurementSetting::new(
            self.signal.radians()?,
            self.idler.radians()?,
        ))
    }
}

impl From<MeasurementSetting> for AnalyzerSetting {
    fn from(m: MeasurementSetting) -> Self {
        AnalyzerSetting::degrees(m.theta_s.to_degrees(), m.theta_i.to_degrees())
    }
}

/// The 16 settings needed for CHSH: every signal angle in
/// `{θs, θs⊥, θs′, θs′⊥}` against every idler angle in `{θi, θi⊥, θi′, θi′⊥}`,
/// all in degrees.
pub fn chsh_settings(
    theta_s: f64,
    theta_s_prime: f64,
    theta_i: f64,
    theta_i_prime: f64,
) -> Vec<AnalyzerSetting> {
    let signal = [theta_s, theta_s + 90.0, theta_s_prime, theta_s_prime + 90.0];
    let idler = [theta_i, theta_i + 90.0, theta_i_prime, theta_i_prime + 90.0];
    signal
        .iter()
        .flat_map(|&s| idler.iter().map(move |&i| AnalyzerSetting::degrees(s, i)))
        .collect()
}

/// [`chsh_settings`] for an angle set given in radians.
pub fn chsh_settings_for(angles: &ChshAngles) -> Vec<AnalyzerSetting> {
    chsh_settings(
        angles.theta_s.to_degrees(),
        angles.theta_s_prime.to_degrees(),
        angles.theta_i.to_degrees(),
        angles.theta_i_prime.to_degrees(),
    )
}

/// Reads a settings table: one `<theta_s> <theta_i>` pair per line, angles in
/// degrees or `open`; `#` starts a comment.
pub fn parse_settings(text: &str) -> Result<Vec<AnalyzerSetting>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tok: Vec<&str> = content.split_whitespace().collect();
        let [s, i] = tok[..] else {
            return Err(Error::parse(
                line,
                format!("expected `<theta_s> <theta_i>`, got {content:?}"),
            ));
        };
        out.push(AnalyzerSetting {
            signal: s.parse().map_err(|m| Error::parse(line, m))?,
            idler: i.parse().map_err(|m| Error::parse(line, m))?,
        });
    }
    if out.is_empty() {
        return Err(Error::parse(
            text.lines().count().max(1),
            "no settings listed",
        ));
    }
    Ok(out)
}

pub fn load_settings(path: impl AsRef<std::path::Path>) -> Result<Vec<AnalyzerSetting>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    parse_settings(&text).map_err(|e| e.in_file(path))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Channel {
    D1,
    D2,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::D1 => "D1",
            Channel::D2 => "D2",
        })
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "D1" => Ok(Channel::D1),
            "D2" => Ok(Channel::D2),
            _ => Err(format!("unknown channel {s:?}")),
        }
    }
}

/// A detector click. `t_ns` is measured from the start of the trial's cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DetectionEvent {
    pub trial: u64,
    pub channel: Channel,
    pub t_ns: u64,
    pub setting_id: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogHeader {
    pub config: ExperimentConfig,
    pub settings: Vec<AnalyzerSetting>,
    pub seed: u64,
    /// Trial `k` of setting `s` has index `s · trials_per_setting + k`.
    pub trials_per_setting: u64,
}

impl LogHeader {
    pub fn n_trials(&self) -> u64 {
        self.trials_per_setting * self.settings.len() as u64
    }

    pub fn setting_of(&self, trial: u64) -> Option<u32> {
        if self.trials_per_setting == 0 || trial >= self.n_trials() {
            return None;
        }
        Some((trial / self.trials_per_setting) as u32)
    }
}

/// Events sorted by `(trial, t_ns, channel)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EventLog {
    pub header: LogHeader,
    pub events: Vec<DetectionEvent>,
}

/// Ground-truth counts kept by the generator, per setting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SettingTally {
    pub trials: u64,
    /// Trials with a pair created.
    pub pairs: u64,
    /// Trials with at least one D1 click.
    pub signal: u64,
    /// Trials with at least one D2 click.
    pub idler: u64,
    /// Trials with clicks on both detectors.
    pub coincidences: u64,
}

impl SettingTally {
    fn add(&mut self, other: &SettingTally) {
        self.trials += other.trials;
        self.pairs += other.pairs;
        self.signal += other.signal;
        self.idler += other.idler;
        self.coincidences += other.coincidences;
    }
}

/// `v0 · exp(-Δt/τ)`.
pub fn decoherence_visibility(delta_t_ns: f64, tau_ns: f64, v0: f64) -> Result<f64> {
    if !(tau_ns > 0.0) {
        return Err(Error::invalid(format!(
            "decay constant {tau_ns} must be positive"
        )));
    }
    if !(0.0..=1.0).contains(&v0) {
        return Err(Error::invalid(format!("visibility {v0} outside [0, 1]")));
    }
    if !(delta_t_ns >= 0.0) {
        return Err(Error::invalid(format!(
            "storage time {delta_t_ns} must be non-negative"
        )));
    }
    Ok(v0 * (-delta_t_ns / tau_ns).exp())
}

/// Per-trial probabilities of the stochastic model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClickProbabilities {
    /// At least one D1 click.
    pub signal: f64,
    /// At least one D2 click.
    pub idler: f64,
    /// Clicks on both.
    pub coincidence: f64,
}

impl ClickProbabilities {
    pub fn g_si(&self) -> Result<f64> {
        let denom = self.signal * self.idler;
        if !(denom > 0.0) {
            return Err(Error::Numerical(
                "g_si undefined: a singles probability is zero".into(),
            ));
        }
        Ok(self.coincidence / denom)
    }
}

/// Born-rule pass probabilities of the pair state for one setting.
#[derive(Clone, Copy, Debug)]
struct Projection {
    signal: f64,
    idler: f64,
    both: f64,
}

impl Projection {
    fn new(config: &ExperimentConfig, setting: &AnalyzerSetting) -> Result<Self> {
        let v = decoherence_visibility(config.delta_t_ns, config.memory_tau_ns, config.visibility)?;
        let state = add_white_noise(&ideal_state(config.eta)?, v)?;
        let (s, i) = (setting.signal.polarizer(), setting.idler.polarizer());
        Ok(Projection {
            signal: state.pass_probability(s, Polarizer::Open),
            idler: state.pass_probability(Polarizer::Open, i),
            both: state.pass_probability(s, i),
        })
    }
}

/// Exact per-trial click probabilities for `setting`.
pub fn click_probabilities(
    config: &ExperimentConfig,
    setting: &AnalyzerSetting,
) -> Result<ClickProbabilities> {
    config.validate()?;
    let p = Projection::new(config, setting)?;
    let eps = config.excitation_prob;
    let r = config.retrieval_at_delay();
    let a = eps * config.det_eff_s * p.signal;
    let b = eps * r * config.det_eff_i * p.idler;
    let ab = eps * config.det_eff_s * r * config.det_eff_i * p.both;
    let (bs, bi) = (config.bg_prob_s, config.bg_prob_i);
    let signal = 1.0 - (1.0 - a) * (1.0 - bs);
    let idler = 1.0 - (1.0 - b) * (1.0 - bi);
    let neither = (1.0 - bs) * (1.0 - bi) * (1.0 - a - b + ab);
    Ok(ClickProbabilities {
        signal,
        idler,
        coincidence: (signal + idler - 1.0 + neither).max(0.0),
    })
}

/// `g_si = P_si / (P_s P_i)` without polarizers, at storage time `delta_t_ns`.
pub fn expected_g_si(config: &ExperimentConfig, delta_t_ns: f64) -> Result<f64> {
    let mut c = config.clone();
    c.delta_t_ns = delta_t_ns;
    click_probabilities(&c, &AnalyzerSetting::open())?.g_si()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for one trial, keyed on `(seed, trial)`.
fn trial_rng(seed: u64, trial: u64) -> Pcg64Mcg {
    let hi = splitmix64(seed ^ 0x6A09_E667_F3BC_C909) as u128;
    let lo = splitmix64(trial.wrapping_add(0xBB67_AE85_84CA_A73B)) as u128;
    Pcg64Mcg::new((hi << 64) | lo)
}

/// Quantized timestamp grid of one gate: `res · k` for `k ∈ [lo, hi]`.
#[derive(Clone, Copy, Debug)]
struct Grid {
    res: u64,
    lo: u64,
    hi: u64,
}

impl Grid {
    fn new(gate: (f64, f64), res: u64, cycle_ns: f64) -> Result<Self> {
        let r = res as f64;
        let lo = (gate.0.max(0.0) / r).ceil() as u64;
        let mut hi = (gate.1 / r).floor() as u64;
        if hi as f64 * r >= cycle_ns {
            hi = hi.saturating_sub(1);
        }
        if lo > hi {
            return Err(Error::invalid(format!(
                "gate [{}, {}] ns contains no multiple of the {res} ns resolution",
                gate.0, gate.1
            )));
        }
        Ok(Grid { res, lo, hi })
    }

    fn sample(&self, rng: &mut Pcg64Mcg) -> u64 {
        self.res * rng.random_range(self.lo..=self.hi)
    }
}

/// Per-setting sampling constants.
#[derive(Clone, Copy, Debug)]
struct SettingModel {
    eps: f64,
    pass_s: f64,
    /// Idler pass probability given the signal passed / was blocked.
    pass_i_after_pass: f64,
    pass_i_after_block: f64,
    eff_s: f64,
    eff_i: f64,
    bg_s: f64,
    bg_i: f64,
}

impl SettingModel {
    fn new(config: &ExperimentConfig, setting: &AnalyzerSetting) -> Result<Self> {
        let p = Projection::new(config, setting)?;
        let after_pass = if p.signal > 0.0 {
            p.both / p.signal
        } else {
            0.0
        };
        let after_block = if p.signal < 1.0 {
            (p.idler - p.both) / (1.0 - p.signal)
        } else {
            0.0
        };
        Ok(SettingModel {
            eps: config.excitation_prob,
            pass_s: p.signal,
            pass_i_after_pass: after_pass.clamp(0.0, 1.0),
            pass_i_after_block: after_block.clamp(0.0, 1.0),
            eff_s: config.det_eff_s,
            eff_i: config.retrieval_at_delay() * config.det_eff_i,
            bg_s: config.bg_prob_s,
            bg_i: config.bg_prob_i,
        })
    }
}

/// Outcome of one trial: up to two clicks per detector.
#[derive(Clone, Copy, Debug, Default)]
struct TrialClicks {
    pair: bool,
    signal_pair: bool,
    signal_bg: bool,
    idler_pair: bool,
    idler_bg: bool,
}

fn sample_trial(m: &SettingModel, rng: &mut Pcg64Mcg) -> TrialClicks {
    let mut out = TrialClicks::default();
    if rng.random::<f64>() < m.eps {
        out.pair = true;
        let passed = rng.random::<f64>() < m.pass_s;
        out.signal_pair = passed && rng.random::<f64>() < m.eff_s;
        let pass_i = if passed {
            m.pass_i_after_pass
        } else {
            m.pass_i_after_block
        };
        out.idler_pair = rng.random::<f64>() < pass_i && rng.random::<f64>() < m.eff_i;
    }
    out.signal_bg = m.bg_s > 0.0 && rng.random::<f64>() < m.bg_s;
    out.idler_bg = m.bg_i > 0.0 && rng.random::<f64>() < m.bg_i;
    out
}

struct Prepared {
    models: Vec<SettingModel>,
    d1: Grid,
    d2: Grid,
}

fn prepare(config: &ExperimentConfig, settings: &[AnalyzerSetting]) -> Result<Prepared> {
    config.validate()?;
    if settings.is_empty() {
        return Err(Error::invalid("no analyzer settings given"));
    }
    if u32::try_from(settings.len()).is_err() {
        return Err(Error::invalid("too many analyzer settings"));
    }
    let res = config.tia_resolution_ns;
    if res.fract() != 0.0 || res < 1.0 {
        return Err(Error::invalid(format!(
            "tia_resolution_ns = {res} must be a whole number of ns"
        )));
    }
    let timing = config.timing();
    Ok(Prepared {
        models: settings
            .iter()
            .map(|s| SettingModel::new(config, s))
            .collect::<Result<_>>()?,
        d1: Grid::new(timing.d1_gate, res as u64, config.cycle_ns)?,
        d2: Grid::new(timing.d2_gate, res as u64, config.cycle_ns)?,
    })
}

fn check_trial_count(settings: usize, n: u64) -> Result<()> {
    n.checked_mul(settings as u64)
        .map(|_| ())
        .ok_or_else(|| Error::invalid(format!("{n} trials per setting overflows the trial index")))
}

/// Runs trials `[start, end)` of one setting, appending events.
fn run_range(
    prep: &Prepared,
    seed: u64,
    setting_id: u32,
    start: u64,
    end: u64,
    events: Option<&mut Vec<DetectionEvent>>,
) -> SettingTally {
    let m = &prep.models[setting_id as usize];
    let mut tally = SettingTally::default();
    let mut events = events;
    for trial in start..end {
        let mut rng = trial_rng(seed, trial);
        let c = sample_trial(m, &mut rng);
        let s = c.signal_pair || c.signal_bg;
        let i = c.idler_pair || c.idler_bg;
        tally.trials += 1;
        tally.pairs += c.pair as u64;
        tally.signal += s as u64;
        tally.idler += i as u64;
        tally.coincidences += (s && i) as u64;
        let Some(out) = events.as_deref_mut() else {
            continue;
        };
        if !(s || i) {
            continue;
        }
        let mut buf = [(0u64, Channel::D1); 4];
        let mut k = 0;
        for (fired, channel, grid) in [
            (c.signal_pair, Channel::D1, &prep.d1),
            (c.signal_bg, Channel::D1, &prep.d1),
            (c.idler_pair, Channel::D2, &prep.d2),
            (c.idler_bg, Channel::D2, &prep.d2),
        ] {
            if fired {
                buf[k] = (grid.sample(&mut rng), channel);
                k += 1;
            }
        }
        buf[..k].sort_unstable();
        out.extend(buf[..k].iter().map(|&(t_ns, channel)| DetectionEvent {
            trial,
            channel,
            t_ns,
            setting_id,
        }));
    }
    tally
}

/// Work units in trial order: `(setting_id, start, end)`.
fn chunks(n_settings: usize, n: u64) -> Vec<(u32, u64, u64)> {
    let mut out = Vec::new();
    for sid in 0..n_settings as u64 {
        let mut start = sid * n;
        let end = (sid + 1) * n;
        while start < end {
            let stop = (start + CHUNK).min(end);
            out.push((sid as u32, start, stop));
            start = stop;
        }
    }
    out
}

/// Simulates `n_trials_per_setting` trials for each setting, in setting order.
/// The result depends only on the arguments, not on thread scheduling.
pub fn run_trials(
    config: &ExperimentConfig,
    settings: &[AnalyzerSetting],
    n_trials_per_setting: u64,
    seed: u64,
) -> Result<EventLog> {
    Ok(run_trials_with_tally(config, settings, n_trials_per_setting, seed)?.0)
}

/// [`run_trials`] plus the generator's own per-setting counts.
pub fn run_trials_with_tally(
    config: &ExperimentConfig,
    settings: &[AnalyzerSetting],
    n_trials_per_setting: u64,
    seed: u64,
) -> Result<(EventLog, Vec<SettingTally>)> {
    let prep = prepare(config, settings)?;
    check_trial_count(settings.len(), n_trials_per_setting)?;
    let parts: Vec<(u32, Vec<DetectionEvent>, SettingTally)> =
        chunks(settings.len(), n_trials_per_setting)
            .into_par_iter()
            .map(|(sid, start, end)| {
                let mut ev = Vec::new();
                let t = run_range(&prep, seed, sid, start, end, Some(&mut ev));
                (sid, ev, t)
            })
            .collect();
    let mut tallies = vec![SettingTally::default(); settings.len()];
    let mut events = Vec::with_capacity(parts.iter().map(|p| p.1.len()).sum());
    for (sid, ev, t) in parts {
        tallies[sid as usize].add(&t);
        events.extend(ev);
    }
    let header = LogHeader {
        config: config.clone(),
        settings: settings.to_vec(),
        seed,
        trials_per_setting: n_trials_per_setting,
    };
    Ok((EventLog { header, events }, tallies))
}

/// The per-setting counts of [`run_trials`] without materializing events.
pub fn tally_trials(
    config: &ExperimentConfig,
    settings: &[AnalyzerSetting],
    n_trials_per_setting: u64,
    seed: u64,
) -> Result<Vec<SettingTally>> {
    let prep = prepare(config, settings)?;
    check_trial_count(settings.len(), n_trials_per_setting)?;
    let parts: Vec<(u32, SettingTally)> = chunks(settings.len(), n_trials_per_setting)
        .into_par_iter()
        .map(|(sid, start, end)| (sid, run_range(&prep, seed, sid, start, end, None)))
        .collect();
    let mut tallies = vec![SettingTally::default(); settings.len()];
    for (sid, t) in parts {
        tallies[sid as usize].add(&t);
    }
    Ok(tallies)
}

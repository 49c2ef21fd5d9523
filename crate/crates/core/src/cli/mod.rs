//! The `dlcz` command line: predictions, simulation and analysis with text,
//! CSV or JSON output.

mod output;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use output::{short, Format, Report, Table, Value};

use crate::analysis::{
    chsh_from_log, compute_g_si, detection_efficiency, fit_exponential, fit_fringe,
    fit_fringe_counts, gate_and_count, parse_event_log, save_event_log, DecayPoint, FringePoint,
    GateConfig,
};
use crate::angular_momentum::{branching_table, mixing_angle, HalfInt, LevelScheme};
use crate::error::{Error, Result};
use crate::predictor::{
    coincidence_rate, correlation_E, predict_ideal_S, ChshAngles, CountQuartet, FringeModel,
    MeasurementSetting,
};
use crate::quantum_state::{check_collective_operators, log_log_slope, MAX_EXPLICIT_ATOMS};
use crate::simulator::{
    chsh_settings, load_settings, run_trials_with_tally, AnalyzerSetting, ExperimentConfig,
    LogHeader,
};

const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "dlcz",
    version,
    about = "Entanglement of a photon with a collective atomic excitation: predictions, Monte Carlo event logs and their analysis"
)]
pub struct Cli {
    /// Output format for results.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Random seed for commands that sample (default 1).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write results to this file instead of standard output. For
    /// `simulate` this is the event log path.
    #[arg(long, short = 'o', global = true)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct SchemeArgs {
    /// Total angular momentum of the initial ground level.
    #[arg(long = "Fa", default_value = "3")]
    pub fa: HalfInt,
    /// Total angular momentum of the final ground level.
    #[arg(long = "Fb", default_value = "2")]
    pub fb: HalfInt,
    /// Total angular momentum of the excited level.
    #[arg(long = "Fc", default_value = "3")]
    pub fc: HalfInt,
}

impl SchemeArgs {
    fn scheme(&self) -> Result<LevelScheme> {
        LevelScheme::new(self.fa, self.fb, self.fc)
    }
}

#[derive(Debug, Args)]
pub struct EtaArgs {
    /// Mixing angle in radians (default: the 85Rb value).
    #[arg(long, allow_negative_numbers = true, conflicts_with = "eta_pi4")]
    pub eta: Option<f64>,
    /// Mixing angle as a multiple of π/4.
    #[arg(long = "eta-pi4", allow_negative_numbers = true)]
    pub eta_pi4: Option<f64>,
}

impl EtaArgs {
    fn resolve(&self) -> Result<f64> {
        match (self.eta, self.eta_pi4) {
            (Some(e), _) => Ok(e),
            (None, Some(x)) => Ok(x * std::f64::consts::FRAC_PI_4),
            (None, None) => mixing_angle(&LevelScheme::rubidium85_d1()),
        }
    }
}

fn parse_angles(s: &str) -> std::result::Result<[f64; 4], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad angle {t:?}"))
        })
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [a, b, c, d] if v.iter().all(|x| x.is_finite()) => Ok([a, b, c, d]),
        _ => Err(format!(
            "expected four finite angles `θs,θs',θi,θi'` in degrees, got {s:?}"
        )),
    }
}

const CANONICAL_ANGLES: &str = "-22.5,22.5,0,-45";

#[derive(Debug, Args)]
pub struct AnglesArg {
    /// CHSH angles `θs,θs',θi,θi'` in degrees.
    #[arg(long, value_parser = parse_angles, allow_hyphen_values = true, default_value = CANONICAL_ANGLES)]
    pub angles: [f64; 4],
}

impl AnglesArg {
    fn chsh(&self) -> ChshAngles {
        let [a, b, c, d] = self.angles;
        ChshAngles::from_degrees(a, b, c, d)
    }
}

/// Gate overrides; unset values come from the log header's config.
#[derive(Debug, Args)]
pub struct GateArgs {
    #[arg(long)]
    pub d1_center: Option<f64>,
    #[arg(long)]
    pub d1_width: Option<f64>,
    #[arg(long)]
    pub d2_center: Option<f64>,
    #[arg(long)]
    pub d2_width: Option<f64>,
}

impl GateArgs {
    fn gates(&self, header: &LogHeader) -> GateConfig {
        let g = GateConfig::from_config(&header.config);
        GateConfig {
            d1_center_ns: self.d1_center.unwrap_or(g.d1_center_ns),
            d1_width_ns: self.d1_width.unwrap_or(g.d1_width_ns),
            d2_center_ns: self.d2_center.unwrap_or(g.d2_center_ns),
            d2_width_ns: self.d2_width.unwrap_or(g.d2_width_ns),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mixing angle and transition amplitudes X_m(α) of a level scheme.
    Eta(SchemeArgs),
    /// Coincidence fringe C(θs) at fixed θi.
    PredictFringe {
        #[command(flatten)]
        eta: EtaArgs,
        /// Idler polarizer angle, degrees.
        #[arg(long, default_value_t = 67.5, allow_negative_numbers = true)]
        theta_i: f64,
        #[arg(long, default_value_t = 1.0)]
        amplitude: f64,
        #[arg(long, default_value_t = 0.0)]
        background: f64,
        /// Samples per 180° period of θs.
        #[arg(long, default_value_t = 64)]
        points: usize,
    },
    /// Ideal correlation functions and S for a mixing angle.
    PredictChsh {
        #[command(flatten)]
        eta: EtaArgs,
        #[command(flatten)]
        angles: AnglesArg,
    },
    /// Monte Carlo event log. Needs `--output` for the log file; prints
    /// per-setting singles and coincidences.
    Simulate {
        /// Config file of `key = value` lines; missing keys keep defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Config override `key=value`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Settings file, one `<theta_s> <theta_i>` line per setting (degrees
        /// or `open`).
        #[arg(long, conflicts_with = "chsh", required_unless_present = "chsh")]
        settings: Option<PathBuf>,
        /// Use the 16 settings of the CHSH angle set given by `--angles`.
        #[arg(long)]
        chsh: bool,
        #[command(flatten)]
        angles: AnglesArg,
        /// Trials per setting.
        #[arg(long, short = 'n', default_value_t = 100_000)]
        trials: u64,
    },
    /// E(θs,θi) and S ± σ_S from an event log.
    AnalyzeChsh {
        log: PathBuf,
        #[command(flatten)]
        angles: AnglesArg,
        #[command(flatten)]
        gates: GateArgs,
    },
    /// Per-setting singles, coincidences, g_si and α_s,i of event logs.
    /// The CSV output (columns delta_t_ns, g_si, sigma) feeds `fit-decay`.
    AnalyzeGsi {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[command(flatten)]
        gates: GateArgs,
    },
    /// Fit a fringe from CSV columns theta_s_deg, counts and optional sigma.
    /// Without sigma the counts are fitted as Poisson with model weights.
    FitFringe {
        points: PathBuf,
        #[command(flatten)]
        eta: EtaArgs,
        /// Idler polarizer angle, degrees.
        #[arg(long, allow_negative_numbers = true)]
        theta_i: f64,
    },
    /// Fit floor + A·exp(-Δt/τ) to CSV columns delta_t_ns, g_si, sigma.
    FitDecay { points: PathBuf },
    /// Vacuum norms, cross term and commutator deviation of the collective
    /// operators for 1..=N atoms, with the fitted scaling exponent.
    CheckOps {
        /// Largest atom number (1 to 12).
        #[arg(long, short = 'N', default_value_t = 12)]
        atoms: usize,
        #[command(flatten)]
        scheme: SchemeArgs,
    },
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command and writes its report.
pub fn execute(cli: &Cli) -> Result<()> {
    let report = run(cli)?;
    let text = report.render(cli.format);
    let to_file = match cli.command {
        Command::Simulate { .. } => None,
        _ => cli.output.as_deref(),
    };
    match to_file {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::from(e).in_file(path)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

/// Runs a parsed command, returning its report without printing it.
pub fn run(cli: &Cli) -> Result<Report> {
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    match &cli.command {
        Command::Eta(s) => cmd_eta(&s.scheme()?),
        Command::PredictFringe {
            eta,
            theta_i,
            amplitude,
            background,
            points,
        } => cmd_predict_fringe(eta.resolve()?, *theta_i, *amplitude, *background, *points),
        Command::PredictChsh { eta, angles } => cmd_predict_chsh(eta.resolve()?, angles),
        Command::Simulate {
            config,
            set,
            settings,
            chsh,
            angles,
            trials,
        } => {
            let out = cli
                .output
                .as_deref()
                .ok_or_else(|| Error::invalid("simulate needs --output for the event log"))?;
            let config = load_config(config.as_deref(), set)?;
            let settings = match (settings, chsh) {
                (Some(path), _) => load_settings(path)?,
                (None, true) => {
                    let [a, b, c, d] = angles.angles;
                    chsh_settings(a, b, c, d)
                }
                (None, false) => return Err(Error::invalid("give --settings or --chsh")),
            };
            cmd_simulate(&config, &settings, *trials, seed, out)
        }
        Command::AnalyzeChsh { log, angles, gates } => cmd_analyze_chsh(log, angles, gates),
        Command::AnalyzeGsi { logs, gates } => cmd_analyze_gsi(logs, gates),
        Command::FitFringe {
            points,
            eta,
            theta_i,
        } => cmd_fit_fringe(points, eta.resolve()?, *theta_i),
        Command::FitDecay { points } => cmd_fit_decay(points),
        Command::CheckOps { atoms, scheme } => cmd_check_ops(*atoms, &scheme.scheme()?, seed),
    }
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut config = match path {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    for (k, kv) in overrides.iter().enumerate() {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("--set expects key=value, got {kv:?}")))?;
        config
            .set(key.trim(), value, k + 1)
            .map_err(|e| Error::invalid(format!("--set {kv}: {e}")))?;
    }
    config.validate()?;
    Ok(config)
}

pub fn cmd_eta(scheme: &LevelScheme) -> Result<Report> {
    let table = branching_table(scheme);
    let cos2 = table.cos2_eta()?;
    let eta = mixing_angle(scheme)?;
    let summary = Table::record(
        "mixing_angle",
        vec![
            ("Fa", scheme.f_a().to_string().into()),
            ("Fb", scheme.f_b().to_string().into()),
            ("Fc", scheme.f_c().to_string().into()),
            ("eta_rad", eta.into()),
            ("eta_over_pi_4", (eta / std::f64::consts::FRAC_PI_4).into()),
            ("cos2_eta", (eta.cos().powi(2)).into()),
            ("cos2_eta_exact", cos2.to_string().into()),
        ],
    );
    let mut amps = Table::new("amplitudes", &["m", "alpha", "X", "X2_exact"]);
    for (m, alpha, x) in table.iter() {
        let exact = table.exact(m, alpha).expect("entry exists");
        amps.push(vec![
            m.to_string().into(),
            Value::Int(alpha.value() as i64),
            x.into(),
            exact.square.to_string().into(),
        ]);
    }
    Ok(Report::new(vec![summary, amps]))
}

pub fn cmd_predict_fringe(
    eta: f64,
    theta_i_deg: f64,
    amplitude: f64,
    background: f64,
    points: usize,
) -> Result<Report> {
    if points == 0 {
        return Err(Error::invalid("need at least one sample point"));
    }
    let model = FringeModel::new(eta, amplitude, background)?;
    let mut t = Table::new("fringe", &["theta_s_deg", "theta_i_deg", "C"]);
    for k in 0..points {
        let ts = 180.0 * k as f64 / points as f64;
        let c = coincidence_rate(&model, &MeasurementSetting::from_degrees(ts, theta_i_deg));
        t.push(vec![ts.into(), theta_i_deg.into(), c.into()]);
    }
    Ok(Report::new(vec![t]))
}

fn chsh_labels(angles: &AnglesArg) -> [(f64, f64); 4] {
    let [s, sp, i, ip] = angles.angles;
    [(s, i), (sp, i), (s, ip), (sp, ip)]
}

pub fn cmd_predict_chsh(eta: f64, angles: &AnglesArg) -> Result<Report> {
    let chsh = angles.chsh();
    let s = predict_ideal_S(eta, &chsh)?;
    let model = FringeModel::new(eta, 1.0, 0.0)?;
    let mut t = Table::new("correlations", &["theta_s_deg", "theta_i_deg", "E"]);
    for ((ds, di), setting) in chsh_labels(angles).into_iter().zip(chsh.settings()) {
        let e = correlation_E(&CountQuartet::predicted(&model, &setting))?;
        t.push(vec![ds.into(), di.into(), e.value.into()]);
    }
    let summary = Table::record("chsh", vec![("eta_rad", eta.into()), ("S", s.into())]);
    Ok(Report::new(vec![t, summary]))
}

pub fn cmd_simulate(
    config: &ExperimentConfig,
    settings: &[AnalyzerSetting],
    trials: u64,
    seed: u64,
    out: &Path,
) -> Result<Report> {
    let (log, tallies) = run_trials_with_tally(config, settings, trials, seed)?;
    save_event_log(&log, out)?;
    let mut t = Table::new(
        "summary",
        &[
            "setting",
            "theta_s_deg",
            "theta_i_deg",
            "trials",
            "signal",
            "idler",
            "coincidences",
        ],
    );
    for (id, (s, c)) in settings.iter().zip(&tallies).enumerate() {
        t.push(vec![
            id.into(),
            s.signal.to_string().into(),
            s.idler.to_string().into(),
            c.trials.into(),
            c.signal.into(),
            c.idler.into(),
            c.coincidences.into(),
        ]);
    }
    let info = Table::record(
        "log",
        vec![
            ("path", out.display().to_string().into()),
            ("seed", seed.into()),
            ("events", log.events.len().into()),
        ],
    );
    Ok(Report::new(vec![info, t]))
}

pub fn cmd_analyze_chsh(path: &Path, angles: &AnglesArg, gates: &GateArgs) -> Result<Report> {
    let log = parse_event_log(path)?;
    let gates = gates.gates(&log.header);
    let r = chsh_from_log(&log, &gates, &angles.chsh())?;
    let mut t = Table::new(
        "correlations",
        &["theta_s_deg", "theta_i_deg", "E", "sigma_E"],
    );
    let mut text = String::from("  θs        θi       E(θs,θi)\n");
    for ((ds, di), e) in chsh_labels(angles).into_iter().zip(r.e_values) {
        t.push(vec![ds.into(), di.into(), e.value.into(), e.sigma.into()]);
        let _ = writeln!(
            text,
            "{:>7}°  {:>7}°   {:>6.3} ± {:.3}",
            short(ds),
            short(di),
            e.value,
            e.sigma
        );
    }
    let _ = writeln!(text, "  S = {:.3} ± {:.3}", r.s, r.sigma_s);
    let summary = Table::record(
        "chsh",
        vec![
            ("S", r.s.into()),
            ("sigma_S", r.sigma_s.into()),
            ("violation_sigmas", r.violation_sigmas().into()),
        ],
    );
    Ok(Report {
        tables: vec![t, summary],
        text: Some(text),
    })
}

pub fn cmd_analyze_gsi(paths: &[PathBuf], gates: &GateArgs) -> Result<Report> {
    let mut t = Table::new(
        "g_si",
        &[
            "log",
            "setting",
            "theta_s_deg",
            "theta_i_deg",
            "delta_t_ns",
            "trials",
            "n_s",
            "n_i",
            "n_si",
            "g_si",
            "sigma",
            "alpha_s",
            "alpha_i",
        ],
    );
    for path in paths {
        let log = parse_event_log(path)?;
        let table = gate_and_count(&log, &gates.gates(&log.header))?;
        for (id, (s, c)) in table.settings.iter().zip(&table.counts).enumerate() {
            let g = compute_g_si(c).map_err(|e| e.in_file(path))?;
            let (a_s, a_i) = detection_efficiency(c).map_err(|e| e.in_file(path))?;
            t.push(vec![
                path.display().to_string().into(),
                id.into(),
                s.signal.to_string().into(),
                s.idler.to_string().into(),
                log.header.config.delta_t_ns.into(),
                c.n_trials.into(),
                c.n_s.into(),
                c.n_i.into(),
                c.n_si.into(),
                g.g_si.into(),
                g.sigma.into(),
                a_s.into(),
                a_i.into(),
            ]);
        }
    }
    Ok(Report::new(vec![t]))
}

/// Reads named columns from a CSV file with a header row; `#` lines are
/// skipped. Missing optional columns give `None`.
fn read_columns(
    path: &Path,
    required: &[&str],
    optional: &[&str],
) -> Result<Vec<Vec<Option<f64>>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::from(e).in_file(path))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(1, e.to_string()).in_file(path))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = Vec::new();
    for name in required {
        idx.push(Some(find(name).ok_or_else(|| {
            Error::parse(1, format!("missing column {name:?}")).in_file(path)
        })?));
    }
    idx.extend(optional.iter().map(|n| find(n)));
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(line, e.to_string()).in_file(path)
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let mut row = Vec::with_capacity(idx.len());
        for col in &idx {
            row.push(match col {
                None => None,
                Some(j) => {
                    let cell = rec.get(*j).unwrap_or("");
                    if cell.is_empty() {
                        None
                    } else {
                        Some(cell.parse::<f64>().map_err(|_| {
                            Error::parse(line, format!("not a number: {cell:?}")).in_file(path)
                        })?)
                    }
                }
            });
        }
        if row[..required.len()].iter().any(Option::is_none) {
            return Err(Error::parse(line, "empty required field").in_file(path));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn cmd_fit_fringe(path: &Path, eta: f64, theta_i_deg: f64) -> Result<Report> {
    let rows = read_columns(path, &["theta_s_deg", "counts"], &["sigma"])?;
    let points: Vec<FringePoint> = rows
        .iter()
        .map(|r| {
            let counts = r[1].expect("required");
            FringePoint {
                theta_s: r[0].expect("required").to_radians(),
                counts,
                sigma: r[2].unwrap_or_else(|| counts.max(1.0).sqrt()),
            }
        })
        .collect();
    // Without a sigma column the counts are taken as Poisson.
    let fit = if rows.iter().all(|r| r[2].is_none()) {
        let (theta, counts): (Vec<f64>, Vec<f64>) =
            points.iter().map(|p| (p.theta_s, p.counts)).unzip();
        fit_fringe_counts(&theta, &counts, eta, theta_i_deg.to_radians())?
    } else {
        fit_fringe(&points, eta, theta_i_deg.to_radians())?
    };
    let summary = Table::record(
        "fringe_fit",
        vec![
            ("amplitude", fit.amplitude.into()),
            ("background", fit.background.into()),
            ("phase_offset_deg", fit.phase_offset.to_degrees().into()),
            ("visibility", fit.visibility.into()),
            ("chi2", fit.chi2.into()),
            ("points", points.len().into()),
        ],
    );
    let mut res = Table::new("residuals", &["theta_s_deg", "counts", "residual"]);
    for (p, r) in points.iter().zip(&fit.residuals) {
        res.push(vec![
            p.theta_s.to_degrees().into(),
            p.counts.into(),
            (*r).into(),
        ]);
    }
    Ok(Report::new(vec![summary, res]))
}

pub fn cmd_fit_decay(path: &Path) -> Result<Report> {
    let rows = read_columns(path, &["delta_t_ns", "g_si", "sigma"], &[])?;
    let points: Vec<DecayPoint> = rows
        .iter()
        .map(|r| DecayPoint {
            delta_t_ns: r[0].expect("required"),
            g_si: r[1].expect("required"),
            sigma: r[2].expect("required"),
        })
        .collect();
    let fit = fit_exponential(&points)?;
    Ok(Report::new(vec![Table::record(
        "decay_fit",
        vec![
            ("tau_ns", fit.tau_ns.into()),
            ("sigma_tau_ns", fit.sigma_tau.into()),
            ("amplitude", fit.amplitude.into()),
            ("floor", fit.floor.into()),
            ("chi2", fit.chi2.into()),
            ("points", points.len().into()),
        ],
    )]))
}

pub fn cmd_check_ops(max_atoms: usize, scheme: &LevelScheme, seed: u64) -> Result<Report> {
    if max_atoms == 0 || max_atoms > MAX_EXPLICIT_ATOMS {
        return Err(Error::invalid(format!(
            "atom number {max_atoms} outside 1..={MAX_EXPLICIT_ATOMS}"
        )));
    }
    let mut t = Table::new(
        "operators",
        &[
            "N",
            "norm_minus",
            "norm_plus",
            "cross",
            "deviation_minus",
            "deviation_plus",
        ],
    );
    let mut rows = Vec::new();
    for n in 1..=max_atoms {
        let c = check_collective_operators(scheme, n, seed)?;
        t.push(vec![
            n.into(),
            c.norm_minus.into(),
            c.norm_plus.into(),
            c.cross.into(),
            c.deviation_minus.into(),
            c.deviation_plus.into(),
        ]);
        rows.push(c);
    }
    let mut tables = vec![t];
    // Fit the large-N tail when there is one.
    let from = if max_atoms >= 5 { 4 } else { 1 };
    let tail: Vec<_> = rows.iter().filter(|c| c.n_atoms >= from).collect();
    if tail.len() >= 2 {
        let slope = |f: fn(&crate::quantum_state::OperatorCheck) -> f64| {
            log_log_slope(
                &tail
                    .iter()
                    .map(|c| (c.n_atoms as f64, f(c)))
                    .collect::<Vec<_>>(),
            )
        };
        tables.push(Table::record(
            "scaling",
            vec![
                ("N_min", from.into()),
                ("N_max", max_atoms.into()),
                ("exponent_minus", slope(|c| c.deviation_minus)?.into()),
                ("exponent_plus", slope(|c| c.deviation_plus)?.into()),
            ],
        ));
    }
    Ok(Report::new(tables))
}

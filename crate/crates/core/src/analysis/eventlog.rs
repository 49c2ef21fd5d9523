use std::collections::HashSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::simulator::{
    Analyzer, AnalyzerSetting, Channel, DetectionEvent, EventLog, ExperimentConfig, LogHeader,
    CONFIG_KEYS,
};

pub const LOG_VERSION: u32 = 1;

/// Writes the text form: `#` header lines, then one
/// `<trial> <D1|D2> <t_ns> <setting_id>` line per event.
pub fn write_event_log<W: Write>(log: &EventLog, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    let h = &log.header;
    writeln!(w, "# version={LOG_VERSION}")?;
    for (k, v) in h.config.key_values() {
        writeln!(w, "# {k}={v}")?;
    }
    writeln!(w, "# seed={}", h.seed)?;
    writeln!(w, "# trials_per_setting={}", h.trials_per_setting)?;
    for (id, s) in h.settings.iter().enumerate() {
        writeln!(w, "# setting {id} {} {}", s.signal, s.idler)?;
    }
    for e in &log.events {
        writeln!(w, "{} {} {} {}", e.trial, e.channel, e.t_ns, e.setting_id)?;
    }
    w.flush()?;
    Ok(())
}

pub fn format_event_log(log: &EventLog) -> String {
    let mut buf = Vec::new();
    write_event_log(log, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("log text is ASCII")
}

pub fn save_event_log(log: &EventLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::from(e).in_file(path))?;
    write_event_log(log, file).map_err(|e| e.in_file(path))
}

pub fn parse_event_log(path: impl AsRef<Path>) -> Result<EventLog> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::from(e).in_file(path))?;
    read_event_log(BufReader::new(file)).map_err(|e| e.in_file(path))
}

pub fn parse_event_log_str(text: &str) -> Result<EventLog> {
    read_event_log(text.as_bytes())
}

#[derive(Default)]
struct HeaderBuilder {
    config: ExperimentConfig,
    keys: HashSet<String>,
    seed: Option<u64>,
    trials_per_setting: Option<u64>,
    settings: Vec<AnalyzerSetting>,
}

impl HeaderBuilder {
    fn line(&mut self, content: &str, line: usize) -> Result<()> {
        if let Some(rest) = content.strip_prefix("setting ") {
            let tok: Vec<&str> = rest.split_whitespace().collect();
            let [id, s, i] = tok[..] else {
                return Err(Error::parse(
                    line,
                    "expected `setting <id> <theta_s> <theta_i>`",
                ));
            };
            let id: usize = id
                .parse()
                .map_err(|_| Error::parse(line, format!("bad setting id {id:?}")))?;
            if id != self.settings.len() {
                return Err(Error::parse(
                    line,
                    format!(
                        "setting id {id} out of sequence, expected {}",
                        self.settings.len()
                    ),
                ));
            }
            let signal: Analyzer = s.parse().map_err(|m| Error::parse(line, m))?;
            let idler: Analyzer = i.parse().map_err(|m| Error::parse(line, m))?;
            self.settings.push(AnalyzerSetting { signal, idler });
            return Ok(());
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::parse(line, format!("unrecognized header line {content:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        if !self.keys.insert(key.to_string()) {
            return Err(Error::parse(line, format!("duplicate header key {key:?}")));
        }
        let int = |v: &str| {
            v.parse::<u64>()
                .map_err(|_| Error::parse(line, format!("{key}: not an unsigned integer: {v:?}")))
        };
        match key {
            "version" => return Err(Error::parse(line, "version must be the first line")),
            "seed" => self.seed = Some(int(value)?),
            "trials_per_setting" => self.trials_per_setting = Some(int(value)?),
            _ => self.config.set(key, value, line)?,
        }
        Ok(())
    }

    fn finish(self) -> Result<LogHeader> {
        let missing: Vec<&str> = CONFIG_KEYS
            .iter()
            .copied()
            .chain(["seed", "trials_per_setting"])
            .filter(|k| !self.keys.contains(*k))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Format(format!(
                "header lacks {}",
                missing.join(", ")
            )));
        }
        if self.settings.is_empty() {
            return Err(Error::Format("header lists no settings".into()));
        }
        self.config
            .validate()
            .map_err(|e| Error::Format(format!("header config rejected: {e}")))?;
        let res = self.config.tia_resolution_ns;
        if res.fract() != 0.0 || res < 1.0 {
            return Err(Error::Format(format!(
                "tia_resolution_ns = {res} is not a whole number of ns"
            )));
        }
        let header = LogHeader {
            config: self.config,
            settings: self.settings,
            seed: self.seed.expect("checked"),
            trials_per_setting: self.trials_per_setting.expect("checked"),
        };
        if header
            .trials_per_setting
            .checked_mul(header.settings.len() as u64)
            .is_none()
        {
            return Err(Error::Format("trial count overflows".into()));
        }
        Ok(header)
    }
}

fn parse_event(content: &str, header: &LogHeader, line: usize) -> Result<DetectionEvent> {
    let tok: Vec<&str> = content.split(' ').collect();
    let [trial, channel, t_ns, setting_id] = tok[..] else {
        return Err(Error::parse(
            line,
            format!("expected `<trial> <D1|D2> <t_ns> <setting_id>`, got {content:?}"),
        ));
    };
    let num = |what: &str, v: &str| {
        v.parse::<u64>()
            .map_err(|_| Error::parse(line, format!("{what}: not an unsigned integer: {v:?}")))
    };
    let trial = num("trial", trial)?;
    let channel: Channel = channel.parse().map_err(|m| Error::parse(line, m))?;
    let t_ns = num("t_ns", t_ns)?;
    let setting_id = num("setting_id", setting_id)?;
    let expected = header.setting_of(trial).ok_or_else(|| {
        Error::parse(
            line,
            format!(
                "trial {trial} beyond the {} trials in the header",
                header.n_trials()
            ),
        )
    })?;
    if setting_id != expected as u64 {
        return Err(Error::parse(
            line,
            format!("trial {trial} belongs to setting {expected}, not {setting_id}"),
        ));
    }
    let res = header.config.tia_resolution_ns as u64;
    if t_ns % res != 0 {
        return Err(Error::parse(
            line,
            format!("t_ns {t_ns} not a multiple of the {res} ns resolution"),
        ));
    }
    if t_ns as f64 >= header.config.cycle_ns {
        return Err(Error::parse(
            line,
            format!(
                "t_ns {t_ns} outside the {} ns cycle",
                header.config.cycle_ns
            ),
        ));
    }
    Ok(DetectionEvent {
        trial,
        channel,
        t_ns,
        setting_id: expected,
    })
}

/// Reads a whole log. Any malformed, out-of-range or out-of-order line makes
/// the read fail with its line number.
pub fn read_event_log<R: BufRead>(reader: R) -> Result<EventLog> {
    let mut builder = HeaderBuilder::default();
    let mut header: Option<LogHeader> = None;
    let mut events = Vec::new();
    let mut last: Option<(u64, u64, Channel)> = None;
    let mut n_lines = 0;
    for (idx, text) in reader.lines().enumerate() {
        let line = idx + 1;
        n_lines = line;
        let text = text.map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => Error::parse(line, "not valid UTF-8"),
            _ => Error::Io(e),
        })?;
        let text = text.strip_suffix('\r').unwrap_or(&text);
        if line == 1 {
            let version = text
                .strip_prefix('#')
                .and_then(|r| r.trim().strip_prefix("version="))
                .ok_or_else(|| Error::Format("first line must be `# version=1`".into()))?;
            match version.trim().parse::<u32>() {
                Ok(LOG_VERSION) => continue,
                _ => {
                    return Err(Error::Format(format!(
                        "version {version:?} not supported (expected {LOG_VERSION})"
                    )))
                }
            }
        }
        if let Some(content) = text.strip_prefix('#') {
            if header.is_some() {
                return Err(Error::parse(line, "header line after the first event"));
            }
            builder.line(content.trim(), line)?;
            continue;
        }
        if text.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            header = Some(std::mem::take(&mut builder).finish()?);
        }
        let h = header.as_ref().expect("set above");
        let event = parse_event(text, h, line)?;
        let key = (event.trial, event.t_ns, event.channel);
        if last.is_some_and(|prev| key < prev) {
            return Err(Error::parse(
                line,
                "events not sorted by (trial, t_ns, channel)",
            ));
        }
        last = Some(key);
        events.push(event);
    }
    if n_lines == 0 {
        return Err(Error::Format("empty file".into()));
    }
    let header = match header {
        Some(h) => h,
        None => builder.finish()?,
    };
    Ok(EventLog { header, events })
}

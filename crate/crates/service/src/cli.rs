//! Command-line front end.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, NaiveDate, NaiveTime, Utc};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use fraudlens_core::engine::{Engine, VerifyError, VerifyOptions, Verdict};
use fraudlens_core::entity::{EntityKind, RawEntity};
use fraudlens_core::eval::{run_eval, run_eval_live, EvalReport};
use fraudlens_core::footprint::{AuditReport, ClientHints};
use fraudlens_core::reports::{ReportError, ReportSubmission};
use fraudlens_core::store::{AggregateStats, RecordLog, StoreError};
use serde::Serialize;

use crate::app::{AppState, BuildError};
use crate::config::ServiceConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fraudlens", version, about = "Verify links, addresses, numbers and businesses; audit your connection")]
pub struct Cli {
    /// Service configuration file (also read from FRAUDLENS_CONFIG).
    #[arg(long, global = true, env = "FRAUDLENS_CONFIG")]
    pub config: Option<PathBuf>,
    /// Print structured JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a URL, domain, email address, phone number or business name.
    Verify {
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        locale: Option<String>,
        value: String,
    },
    /// Audit a connection described by a file of request headers.
    Audit {
        /// `Name: value` lines, or a JSON object of header names to values.
        #[arg(long)]
        headers: PathBuf,
        /// JSON client hints.
        #[arg(long)]
        hints: Option<PathBuf>,
    },
    /// File a community report.
    Report {
        #[arg(long)]
        kind: Option<String>,
        #[arg(long = "desc")]
        description: String,
        /// Reporter identity (hashed before storage).
        #[arg(long, default_value = "cli")]
        reporter: String,
        value: String,
    },
    /// Run the HTTP service.
    Serve,
    /// Compute detection metrics for a labeled corpus.
    Eval {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, required_unless_present = "live", conflicts_with = "live")]
        scores: Option<PathBuf>,
        /// Score the labeled entities with the configured providers.
        #[arg(long)]
        live: bool,
        /// Decision threshold; defaults to the scoring configuration's.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Aggregate connection statistics over a time window.
    Stats {
        /// RFC 3339 timestamp or YYYY-MM-DD (start of day).
        #[arg(long)]
        from: String,
        /// RFC 3339 timestamp or YYYY-MM-DD (end of day).
        #[arg(long)]
        to: String,
    },
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn user(message: impl std::fmt::Display) -> Self {
        Failure { code: EXIT_USER, message: message.to_string() }
    }
    fn internal(message: impl std::fmt::Display) -> Self {
        Failure { code: EXIT_INTERNAL, message: message.to_string() }
    }
}

impl From<BuildError> for Failure {
    fn from(e: BuildError) -> Self {
        match e {
            BuildError::Store(_) => Failure::internal(e),
            _ => Failure::user(e),
        }
    }
}

type Outcome = Result<(), Failure>;

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USER,
            };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_INTERNAL;
        }
    };
    match runtime.block_on(dispatch(cli, out)) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ServiceConfig, Failure> {
    let mut config = match path {
        Some(p) => ServiceConfig::load(p).map_err(Failure::user)?,
        None => ServiceConfig::default(),
    };
    config.apply_env(|k| std::env::var(k).ok()).map_err(Failure::user)?;
    Ok(config)
}

fn emit<T: Serialize>(out: &mut dyn Write, json: bool, value: &T, human: impl FnOnce(&T) -> String) -> Outcome {
    let text = if json {
        serde_json::to_string_pretty(value).map_err(Failure::internal)?
    } else {
        human(value)
    };
    writeln!(out, "{}", text.trim_end()).map_err(Failure::internal)
}

async fn dispatch(cli: Cli, out: &mut dyn Write) -> Outcome {
    let config = load_config(cli.config.as_deref())?;
    let json = cli.json;
    match cli.command {
        Command::Verify { kind, locale, value } => {
            let state = AppState::from_config(&config)?;
            let locale = locale.unwrap_or_else(|| config.default_locale.clone());
            let verdict = verify(&state.engine, state.clock.now(), kind.as_deref(), Some(locale), &value).await?;
            emit(out, json, &verdict, render_verdict)
        }
        Command::Audit { headers, hints } => {
            let state = AppState::from_config(&config)?;
            let mut headers = read_headers(&headers)?;
            if !headers.keys().any(|k| k.eq_ignore_ascii_case("accept-language")) {
                headers.insert("accept-language".into(), config.default_locale.clone());
            }
            let hints = match hints {
                Some(path) => Some(read_json::<ClientHints>(&path)?),
                None => None,
            };
            let report = state.auditor.audit_request(&headers, hints.as_ref(), None).await.map_err(Failure::user)?;
            let ua = headers.iter().find(|(k, _)| k.eq_ignore_ascii_case("user-agent")).map_or("", |(_, v)| v.as_str());
            if let Err(e) = state.log.log_interaction(report.visitor_record(&state.hasher, ua, state.clock.now())) {
                tracing::warn!(%e, "audit not logged");
            }
            emit(out, json, &report, render_audit)
        }
        Command::Report { kind, description, reporter, value } => {
            let state = AppState::from_config(&config)?;
            let kind = kind.as_deref().map(EntityKind::from_str).transpose().map_err(Failure::user)?;
            let submission =
                ReportSubmission { kind, value, description, reporter_key: reporter, reporter_country: None, at: state.clock.now() };
            let accepted = state.reports.submit(submission).map_err(|e| match e {
                ReportError::Store(_) => Failure::internal(e),
                other => Failure::user(other),
            })?;
            emit(out, json, &accepted, |a| {
                format!(
                    "report {} accepted for {} {} ({} report(s), weight {:.3})",
                    a.report_id,
                    a.entity_kind.as_str(),
                    a.entity_canonical,
                    a.aggregate.total_reports,
                    a.aggregate.decayed_weight
                )
            })
        }
        Command::Serve => {
            let state = Arc::new(AppState::from_config(&config)?);
            crate::app::serve(&config, state).await.map_err(|e| Failure::internal(format!("cannot serve on {}:{}: {e}", config.bind, config.port)))
        }
        Command::Eval { labels, scores, live, threshold } => {
            let report = if live {
                let state = AppState::from_config(&config)?;
                let threshold = threshold.unwrap_or(state.engine.config().threshold);
                run_eval_live(&labels, &state.engine, threshold).await
            } else {
                let threshold = match threshold {
                    Some(t) => t,
                    None => AppState::from_config(&config)?.engine.config().threshold,
                };
                run_eval(&labels, scores.as_deref().expect("clap requires --scores without --live"), threshold)
            }
            .map_err(Failure::user)?;
            emit(out, json, &report, render_eval)
        }
        Command::Stats { from, to } => {
            let from = parse_instant(&from, false)?;
            let to = parse_instant(&to, true)?;
            let path = config.store_path.as_ref().ok_or_else(|| Failure::user("no store_path configured"))?;
            if !path.exists() {
                return Err(Failure::user(format!("no interaction store at {}", path.display())));
            }
            let log = RecordLog::open(path).map_err(Failure::internal)?;
            let stats = log.aggregate_stats(from, to).map_err(|e| match e {
                StoreError::InvalidWindow => Failure::user(e),
                other => Failure::internal(other),
            })?;
            emit(out, json, &stats, render_stats)
        }
    }
}

async fn verify(engine: &Engine, now: DateTime<Utc>, kind: Option<&str>, locale: Option<String>, value: &str) -> Result<Verdict, Failure> {
    let kind = kind.map(EntityKind::from_str).transpose().map_err(Failure::user)?;
    let raw = RawEntity::at(value, now).map_err(Failure::user)?;
    engine.verify_with(&raw, &VerifyOptions { kind, locale, ..Default::default() }).await.map_err(|e| match e {
        VerifyError::Entity(_) => Failure::user(e),
        other => Failure::internal(other),
    })
}

fn parse_instant(text: &str, end_of_day: bool) -> Result<DateTime<Utc>, Failure> {
    if let Ok(t) = DateTime::parse_from_rfc3339(text) {
        return Ok(t.with_timezone(&Utc));
    }
    let date = NaiveDate::parse_from_str(text, "%Y-%m-%d").map_err(|_| Failure::user(format!("not a timestamp or date: {text}")))?;
    let time = if end_of_day { NaiveTime::from_hms_milli_opt(23, 59, 59, 999) } else { NaiveTime::from_hms_opt(0, 0, 0) };
    Ok(date.and_time(time.expect("valid time")).and_utc())
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::user(format!("cannot read {}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Failure::user(format!("{}: {e}", path.display())))
}

/// Header file: a JSON object, or `Name: value` lines (`#` comments allowed).
pub fn parse_headers(text: &str) -> Result<BTreeMap<String, String>, String> {
    if text.trim_start().starts_with('{') {
        return serde_json::from_str(text).map_err(|e| e.to_string());
    }
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, value) = line.split_once(':').ok_or_else(|| format!("line {}: expected `Name: value`", i + 1))?;
        map.insert(name.trim().to_ascii_lowercase(), value.trim().to_string());
    }
    Ok(map)
}

fn read_headers(path: &Path) -> Result<BTreeMap<String, String>, Failure> {
    parse_headers(&read_text(path)?).map_err(|e| Failure::user(format!("{}: {e}", path.display())))
}

fn render_verdict(v: &Verdict) -> String {
    let mut s = format!(
        "{:?}: {} `{}` scored {}/100 (raw {:.4}, threshold {})\n{}\n",
        v.label,
        v.entity.kind.as_str(),
        v.entity.canonical,
        v.display_score,
        v.score,
        v.threshold,
        v.explanation
    );
    if !v.degraded.is_empty() {
        let slots: Vec<&str> = v.degraded.iter().map(|d| d.as_str()).collect();
        s.push_str(&format!("partial data: {}\n", slots.join(", ")));
    }
    s
}

fn render_audit(r: &AuditReport) -> String {
    let mut s = String::new();
    for i in &r.indicators {
        let mark = if i.triggered { "!" } else { " " };
        s.push_str(&format!("{mark} {:<20} {}\n", i.indicator.as_str(), i.detail));
        if let Some(rec) = &i.recommendation {
            s.push_str(&format!("    {rec}\n"));
        }
    }
    if let Some(w) = &r.abuse_warning {
        s.push_str(&format!("{w}\n"));
    }
    for n in &r.notices {
        s.push_str(&format!("{n}\n"));
    }
    s
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn render_eval(r: &EvalReport) -> String {
    let mut s = format!("n={} threshold={}\n{:<9} {:>4} {:>4} {:>4} {:>4} {:>7} {:>7} {:>7} {:>7}\n", r.n, r.threshold, "kind", "tp", "fp", "tn", "fn", "P", "R", "F1", "AUC");
    let mut row = |name: &str, m: &fraudlens_core::MetricsReport| {
        s.push_str(&format!(
            "{:<9} {:>4} {:>4} {:>4} {:>4} {:>7} {:>7} {:>7} {:>7}\n",
            name,
            m.tp,
            m.fp,
            m.tn,
            m.fn_,
            fmt_opt(m.precision),
            fmt_opt(m.recall),
            fmt_opt(m.f1),
            fmt_opt(m.auc)
        ));
    };
    for (kind, m) in &r.per_kind {
        if let Some(m) = m {
            row(kind.as_str(), m);
        }
    }
    row("overall", &r.overall);
    if let Some(k) = r.overall.kappa {
        s.push_str(&format!("kappa {k:.4}\n"));
    }
    s
}

fn render_stats(st: &AggregateStats) -> String {
    format!(
        "records            {}\nvpn                {:.4}\ndns leak among vpn {}\ndatacenter         {:.4}\nabuse nonzero      {:.4}\n",
        st.total,
        st.vpn_rate,
        fmt_opt(st.dns_leak_rate_among_vpn),
        st.datacenter_rate,
        st.abuse_nonzero_rate
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_file_formats() {
        let h = parse_headers("# probe\nX-Forwarded-For: 198.51.100.7\nUser-Agent: curl/8\n").unwrap();
        assert_eq!(h["x-forwarded-for"], "198.51.100.7");
        let j = parse_headers("{\"Remote-Addr\": \"192.0.2.1\"}").unwrap();
        assert_eq!(j["Remote-Addr"], "192.0.2.1");
        assert!(parse_headers("no colon").is_err());
    }

    #[test]
    fn instants() {
        assert_eq!(parse_instant("2025-06-01", false).unwrap().to_rfc3339(), "2025-06-01T00:00:00+00:00");
        assert_eq!(parse_instant("2025-06-01", true).unwrap().timestamp_subsec_millis(), 999);
        assert!(parse_instant("2025-06-01T10:00:00+01:00", false).is_ok());
        assert!(parse_instant("yesterday", false).is_err());
    }
}

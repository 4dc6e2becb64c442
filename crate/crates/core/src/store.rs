//! Append-only interaction log: one JSON record per line, shared by visitor
//! records and community reports.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::entity::EntityKind;
use crate::providers::ConnectionType;
use crate::reports::ThreatReport;
use crate::useragent::DeviceType;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store unavailable: {0}")]
    Unavailable(#[from] std::io::Error),
    #[error("store line {line} is corrupt: {message}")]
    Corrupt { line: usize, message: String },
    #[error("invalid window: from is after to")]
    InvalidWindow,
}

/// Salted SHA-256 used for every identifying value written to the log.
#[derive(Debug, Clone)]
pub struct Hasher {
    salt: String,
}

impl Hasher {
    pub fn new(salt: impl Into<String>) -> Self {
        Hasher { salt: salt.into() }
    }

    pub fn hash(&self, value: &str) -> String {
        let mut h = Sha256::new();
        h.update(self.salt.as_bytes());
        h.update([0u8]);
        h.update(value.as_bytes());
        hex::encode(h.finalize())
    }
}

/// One interaction, 32 attributes. Geo fields are nullable; the client IP
/// and the queried value are stored only as salted hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisitorRecord {
    pub ip_hash: Option<String>,
    pub country: Option<String>,
    pub city: Option<String>,
    pub region: Option<String>,
    pub timezone: Option<String>,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    pub isp: Option<String>,
    pub asn: Option<u32>,
    pub connection_type: ConnectionType,
    pub device_type: DeviceType,
    pub device_vendor: String,
    pub browser: String,
    pub browser_version: String,
    pub os: String,
    pub os_version: String,
    pub user_agent: String,
    pub cookies_enabled: Option<bool>,
    pub javascript_enabled: Option<bool>,
    pub touch_capable: bool,
    pub ipv4_present: bool,
    pub ipv6_present: bool,
    pub vpn_flag: bool,
    pub tor_flag: bool,
    pub hosting_flag: bool,
    pub dns_leak_flag: bool,
    pub abuse_score: f64,
    pub query_kind: Option<EntityKind>,
    pub query_canonical_hash: Option<String>,
    pub verdict_score: Option<f64>,
    pub session_id: Option<String>,
    pub recorded_at: DateTime<Utc>,
}

pub const VISITOR_FIELD_COUNT: usize = 32;

impl VisitorRecord {
    /// A record with every optional attribute absent and device fields unknown.
    pub fn blank(recorded_at: DateTime<Utc>) -> Self {
        VisitorRecord {
            ip_hash: None,
            country: None,
            city: None,
            region: None,
            timezone: None,
            lat: None,
            lon: None,
            isp: None,
            asn: None,
            connection_type: ConnectionType::Unknown,
            device_type: DeviceType::Unknown,
            device_vendor: "unknown".into(),
            browser: "unknown".into(),
            browser_version: "unknown".into(),
            os: "unknown".into(),
            os_version: "unknown".into(),
            user_agent: String::new(),
            cookies_enabled: None,
            javascript_enabled: None,
            touch_capable: false,
            ipv4_present: false,
            ipv6_present: false,
            vpn_flag: false,
            tor_flag: false,
            hosting_flag: false,
            dns_leak_flag: false,
            abuse_score: 0.0,
            query_kind: None,
            query_canonical_hash: None,
            verdict_score: None,
            session_id: None,
            recorded_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "record", rename_all = "snake_case")]
pub enum LogEntry {
    Visit(VisitorRecord),
    Report(ThreatReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredEntry {
    pub id: u64,
    #[serde(flatten)]
    pub entry: LogEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub total: u64,
    pub vpn_rate: f64,
    pub dns_leak_rate_among_vpn: Option<f64>,
    pub datacenter_rate: f64,
    pub abuse_nonzero_rate: f64,
}

type Sink = Box<dyn Write + Send>;

pub struct RecordLog {
    path: Option<PathBuf>,
    sink: Mutex<Option<Sink>>,
    entries: RwLock<Vec<StoredEntry>>,
}

impl std::fmt::Debug for RecordLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RecordLog").field("path", &self.path).field("len", &self.len()).finish()
    }
}

impl RecordLog {
    pub fn in_memory() -> Self {
        RecordLog { path: None, sink: Mutex::new(None), entries: RwLock::new(Vec::new()) }
    }

    /// Log backed by an arbitrary writer; appends fail when the writer does.
    pub fn with_writer(writer: impl Write + Send + 'static) -> Self {
        RecordLog { path: None, sink: Mutex::new(Some(Box::new(writer))), entries: RwLock::new(Vec::new()) }
    }

    /// Open (or create) the log file and index its existing records.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut entries = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: StoredEntry = serde_json::from_str(&line)
                    .map_err(|e| StoreError::Corrupt { line: idx + 1, message: e.to_string() })?;
                entries.push(entry);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(RecordLog { path: Some(path), sink: Mutex::new(Some(Box::new(file))), entries: RwLock::new(entries) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("log index lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Append one entry. Ids are strictly increasing; the index is updated
    /// only after the write succeeds.
    pub fn append(&self, entry: LogEntry) -> Result<u64, StoreError> {
        let mut sink = self.sink.lock().expect("log writer lock");
        let id = self.entries.read().expect("log index lock").last().map_or(1, |e| e.id + 1);
        let stored = StoredEntry { id, entry };
        if let Some(w) = sink.as_mut() {
            let mut line = serde_json::to_string(&stored).expect("log entry serializes");
            line.push('\n');
            w.write_all(line.as_bytes())?;
            w.flush()?;
        }
        self.entries.write().expect("log index lock").push(stored);
        Ok(id)
    }

    pub fn log_interaction(&self, record: VisitorRecord) -> Result<u64, StoreError> {
        self.append(LogEntry::Visit(record))
    }

    pub fn entries(&self) -> Vec<StoredEntry> {
        self.entries.read().expect("log index lock").clone()
    }

    pub fn visits(&self) -> Vec<(u64, VisitorRecord)> {
        self.entries
            .read()
            .expect("log index lock")
            .iter()
            .filter_map(|e| match &e.entry {
                LogEntry::Visit(v) => Some((e.id, v.clone())),
                LogEntry::Report(_) => None,
            })
            .collect()
    }

    pub fn reports(&self) -> Vec<ThreatReport> {
        self.entries
            .read()
            .expect("log index lock")
            .iter()
            .filter_map(|e| match &e.entry {
                LogEntry::Report(r) => Some(r.clone()),
                LogEntry::Visit(_) => None,
            })
            .collect()
    }

    /// Every record as JSON lines, in id order.
    pub fn export(&self) -> String {
        let entries = self.entries.read().expect("log index lock");
        let mut out = String::new();
        for e in entries.iter() {
            out.push_str(&serde_json::to_string(e).expect("log entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn aggregate_stats(&self, from: DateTime<Utc>, to: DateTime<Utc>) -> Result<AggregateStats, StoreError> {
        if from > to {
            return Err(StoreError::InvalidWindow);
        }
        let entries = self.entries.read().expect("log index lock");
        let window = entries.iter().filter_map(|e| match &e.entry {
            LogEntry::Visit(v) if v.recorded_at >= from && v.recorded_at <= to => Some(v),
            _ => None,
        });
        Ok(aggregate(window))
    }
}

pub fn aggregate<'a>(records: impl IntoIterator<Item = &'a VisitorRecord>) -> AggregateStats {
    let (mut total, mut vpn, mut leak, mut dc, mut abuse) = (0u64, 0u64, 0u64, 0u64, 0u64);
    for r in records {
        total += 1;
        if r.vpn_flag {
            vpn += 1;
            if r.dns_leak_flag {
                leak += 1;
            }
        }
        dc += u64::from(r.hosting_flag);
        abuse += u64::from(r.abuse_score > 0.0);
    }
    let rate = |n: u64| if total == 0 { 0.0 } else { n as f64 / total as f64 };
    AggregateStats {
        total,
        vpn_rate: rate(vpn),
        dns_leak_rate_among_vpn: (vpn > 0).then(|| leak as f64 / vpn as f64),
        datacenter_rate: rate(dc),
        abuse_nonzero_rate: rate(abuse),
    }
}

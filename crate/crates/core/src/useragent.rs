//! Table-driven user-agent parsing.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

const UNKNOWN: &str = "unknown";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceType {
    Mobile,
    Desktop,
    Tablet,
    Bot,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub device_type: DeviceType,
    pub vendor: String,
    pub browser: String,
    pub browser_version: String,
    pub os: String,
    pub os_version: String,
    pub touch_capable: bool,
}

impl Default for DeviceRecord {
    fn default() -> Self {
        DeviceRecord {
            device_type: DeviceType::Unknown,
            vendor: UNKNOWN.into(),
            browser: UNKNOWN.into(),
            browser_version: UNKNOWN.into(),
            os: UNKNOWN.into(),
            os_version: UNKNOWN.into(),
            touch_capable: false,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedRule {
    pattern: String,
    name: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceRule {
    pattern: String,
    #[serde(default)]
    exclude: Option<String>,
    device_type: DeviceType,
    #[serde(default)]
    vendor: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTable {
    bot: Vec<NamedRule>,
    browser: Vec<NamedRule>,
    os: Vec<NamedRule>,
    device: Vec<DeviceRule>,
}

struct Compiled {
    bots: Vec<(Regex, String)>,
    browsers: Vec<(Regex, String)>,
    oses: Vec<(Regex, String)>,
    devices: Vec<(Regex, Option<Regex>, DeviceType, Option<String>)>,
}

fn compile(rules: Vec<NamedRule>) -> Vec<(Regex, String)> {
    rules.into_iter().map(|r| (Regex::new(&r.pattern).expect("valid UA pattern"), r.name)).collect()
}

static TABLE: LazyLock<Compiled> = LazyLock::new(|| {
    let raw: RawTable = toml::from_str(include_str!("../data/ua_patterns.toml")).expect("UA table parses");
    Compiled {
        bots: compile(raw.bot),
        browsers: compile(raw.browser),
        oses: compile(raw.os),
        devices: raw
            .device
            .into_iter()
            .map(|d| {
                let exclude = d.exclude.map(|e| Regex::new(&e).expect("valid UA exclude"));
                (Regex::new(&d.pattern).expect("valid UA pattern"), exclude, d.device_type, d.vendor)
            })
            .collect(),
    }
});

pub fn pattern_count() -> usize {
    let t = &*TABLE;
    t.bots.len() + t.browsers.len() + t.oses.len() + t.devices.len()
}

fn first_named(rules: &[(Regex, String)], ua: &str) -> Option<(String, String)> {
    rules.iter().find_map(|(re, name)| {
        re.captures(ua).map(|c| {
            let version = c.get(1).map(|m| m.as_str().replace('_', ".")).unwrap_or_else(|| UNKNOWN.into());
            (name.clone(), version)
        })
    })
}

pub fn parse_user_agent(ua: &str) -> DeviceRecord {
    let ua = ua.trim();
    let mut out = DeviceRecord::default();
    if ua.is_empty() {
        return out;
    }
    let table = &*TABLE;
    if let Some((browser, version)) = first_named(&table.browsers, ua) {
        out.browser = browser;
        out.browser_version = version;
    }
    if let Some((os, version)) = first_named(&table.oses, ua) {
        out.os = os;
        out.os_version = version;
    }
    if let Some((name, _)) = first_named(&table.bots, ua) {
        out.device_type = DeviceType::Bot;
        out.vendor = name;
        return out;
    }
    let device = table.devices.iter().find(|(re, exclude, _, _)| {
        re.is_match(ua) && !exclude.as_ref().is_some_and(|x| x.is_match(ua))
    });
    if let Some((_, _, device_type, vendor)) = device {
        out.device_type = *device_type;
        if let Some(v) = vendor {
            out.vendor = v.clone();
        }
    }
    out.touch_capable = matches!(out.device_type, DeviceType::Mobile | DeviceType::Tablet);
    out
}

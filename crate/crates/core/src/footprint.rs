//! Connection footprint audit: resolves the visitor's address, gathers
//! network, location and device attributes and evaluates twelve exposure
//! and security indicators.

use std::collections::BTreeMap;
use std::fmt;
use std::net::IpAddr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalogs;
use crate::providers::{
    AbuseRecord, AnonymizationRecord, ConnectionType, GeoRecord, Payload, ProviderKind, ProviderOutcome,
    ProviderStatus, Providers,
};
use crate::store::{Hasher, VisitorRecord};
use crate::useragent::{parse_user_agent, DeviceRecord, DeviceType};

pub const ABUSE_WARNING_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("request carries no usable source address")]
    MissingSourceAddress,
}

impl AuditError {
    pub fn code(&self) -> &'static str {
        "MissingSourceAddress"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Indicator {
    PublicIp,
    Geolocation,
    IspAsName,
    ConnectionType,
    VpnProxy,
    TorExit,
    HostingDatacenter,
    DnsLeak,
    BrowserUserAgent,
    DeviceType,
    TouchCapability,
    HardwareVendor,
}

impl Indicator {
    pub const ALL: [Indicator; 12] = [
        Indicator::PublicIp,
        Indicator::Geolocation,
        Indicator::IspAsName,
        Indicator::ConnectionType,
        Indicator::VpnProxy,
        Indicator::TorExit,
        Indicator::HostingDatacenter,
        Indicator::DnsLeak,
        Indicator::BrowserUserAgent,
        Indicator::DeviceType,
        Indicator::TouchCapability,
        Indicator::HardwareVendor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Indicator::PublicIp => "public_ip",
            Indicator::Geolocation => "geolocation",
            Indicator::IspAsName => "isp_as_name",
            Indicator::ConnectionType => "connection_type",
            Indicator::VpnProxy => "vpn_proxy",
            Indicator::TorExit => "tor_exit",
            Indicator::HostingDatacenter => "hosting_datacenter",
            Indicator::DnsLeak => "dns_leak",
            Indicator::BrowserUserAgent => "browser_user_agent",
            Indicator::DeviceType => "device_type",
            Indicator::TouchCapability => "touch_capability",
            Indicator::HardwareVendor => "hardware_vendor",
        }
    }

    pub fn label_key(self) -> String {
        format!("indicator.{}", self.as_str())
    }

    pub fn recommendation_key(self) -> String {
        format!("rec.indicator.{}", self.as_str())
    }
}

impl fmt::Display for Indicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientHints {
    #[serde(default)]
    pub declared_timezone: Option<String>,
    #[serde(default)]
    pub cookies: Option<bool>,
    #[serde(default)]
    pub javascript: Option<bool>,
    /// ASN of the resolver observed by a client-side echo probe.
    #[serde(default)]
    pub resolver_asn: Option<u32>,
    /// Whether the client also reached an IPv4 / IPv6 probe.
    #[serde(default)]
    pub ipv4: Option<bool>,
    #[serde(default)]
    pub ipv6: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetProfile {
    pub ip: String,
    pub asn: Option<u32>,
    pub isp_name: Option<String>,
    pub connection_type: ConnectionType,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeoProfile {
    pub country: Option<String>,
    pub city: Option<String>,
    pub region: Option<String>,
    pub timezone: Option<String>,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
}

/// One slot per indicator plus the normalized abuse score.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SecurityVector {
    pub public_ip: bool,
    pub geolocation: bool,
    pub isp_as_name: bool,
    pub connection_type: bool,
    pub vpn_proxy: bool,
    pub tor_exit: bool,
    pub hosting_datacenter: bool,
    pub dns_leak: bool,
    pub browser_user_agent: bool,
    pub device_type: bool,
    pub touch_capability: bool,
    pub hardware_vendor: bool,
    pub abuse_score: f64,
}

impl SecurityVector {
    pub fn get(&self, indicator: Indicator) -> bool {
        match indicator {
            Indicator::PublicIp => self.public_ip,
            Indicator::Geolocation => self.geolocation,
            Indicator::IspAsName => self.isp_as_name,
            Indicator::ConnectionType => self.connection_type,
            Indicator::VpnProxy => self.vpn_proxy,
            Indicator::TorExit => self.tor_exit,
            Indicator::HostingDatacenter => self.hosting_datacenter,
            Indicator::DnsLeak => self.dns_leak,
            Indicator::BrowserUserAgent => self.browser_user_agent,
            Indicator::DeviceType => self.device_type,
            Indicator::TouchCapability => self.touch_capability,
            Indicator::HardwareVendor => self.hardware_vendor,
        }
    }

    fn set(&mut self, indicator: Indicator, value: bool) {
        let slot = match indicator {
            Indicator::PublicIp => &mut self.public_ip,
            Indicator::Geolocation => &mut self.geolocation,
            Indicator::IspAsName => &mut self.isp_as_name,
            Indicator::ConnectionType => &mut self.connection_type,
            Indicator::VpnProxy => &mut self.vpn_proxy,
            Indicator::TorExit => &mut self.tor_exit,
            Indicator::HostingDatacenter => &mut self.hosting_datacenter,
            Indicator::DnsLeak => &mut self.dns_leak,
            Indicator::BrowserUserAgent => &mut self.browser_user_agent,
            Indicator::DeviceType => &mut self.device_type,
            Indicator::TouchCapability => &mut self.touch_capability,
            Indicator::HardwareVendor => &mut self.hardware_vendor,
        };
        *slot = value;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionProfile {
    pub net: NetProfile,
    pub geo: GeoProfile,
    pub dev: DeviceRecord,
    pub sec: SecurityVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorResult {
    pub indicator: Indicator,
    pub label: String,
    pub triggered: bool,
    pub detail: String,
    pub recommendation_key: Option<String>,
    pub recommendation: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditFlags {
    pub cookies: Option<bool>,
    pub javascript: Option<bool>,
    pub ipv4: bool,
    pub ipv6: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub profile: ConnectionProfile,
    pub indicators: Vec<IndicatorResult>,
    pub tz_declared: Option<String>,
    pub tz_mismatch: bool,
    pub flags: AuditFlags,
    pub abuse_score: f64,
    pub abuse_warning: Option<String>,
    pub notices: Vec<String>,
    pub locale: String,
    pub degraded: Vec<ProviderKind>,
}

impl AuditReport {
    pub fn triggered(&self, indicator: Indicator) -> bool {
        self.indicators.iter().any(|r| r.indicator == indicator && r.triggered)
    }

    /// The 32-attribute log record for this visit.
    pub fn visitor_record(&self, hasher: &Hasher, user_agent: &str, recorded_at: DateTime<Utc>) -> VisitorRecord {
        let p = &self.profile;
        let mut r = VisitorRecord::blank(recorded_at);
        r.ip_hash = Some(hasher.hash(&p.net.ip));
        r.country = p.geo.country.clone();
        r.city = p.geo.city.clone();
        r.region = p.geo.region.clone();
        r.timezone = p.geo.timezone.clone();
        r.lat = p.geo.lat;
        r.lon = p.geo.lon;
        r.isp = p.net.isp_name.clone();
        r.asn = p.net.asn;
        r.connection_type = p.net.connection_type;
        r.device_type = p.dev.device_type;
        r.device_vendor = p.dev.vendor.clone();
        r.browser = p.dev.browser.clone();
        r.browser_version = p.dev.browser_version.clone();
        r.os = p.dev.os.clone();
        r.os_version = p.dev.os_version.clone();
        r.user_agent = user_agent.to_string();
        r.cookies_enabled = self.flags.cookies;
        r.javascript_enabled = self.flags.javascript;
        r.touch_capable = p.dev.touch_capable;
        r.ipv4_present = self.flags.ipv4;
        r.ipv6_present = self.flags.ipv6;
        r.vpn_flag = p.sec.vpn_proxy;
        r.tor_flag = p.sec.tor_exit;
        r.hosting_flag = p.sec.hosting_datacenter;
        r.dns_leak_flag = p.sec.dns_leak;
        r.abuse_score = self.abuse_score;
        r
    }
}

pub fn detect_dns_leak(egress_asn: u32, resolver_asn: Option<u32>, anonymized: bool) -> bool {
    anonymized && resolver_asn.is_some_and(|r| r != egress_asn)
}

fn canonical_timezone(tz: &str) -> String {
    const ALIASES: [(&str, &str); 12] = [
        ("utc", "etc/utc"),
        ("gmt", "etc/utc"),
        ("etc/gmt", "etc/utc"),
        ("etc/universal", "etc/utc"),
        ("zulu", "etc/utc"),
        ("asia/calcutta", "asia/kolkata"),
        ("asia/saigon", "asia/ho_chi_minh"),
        ("europe/kiev", "europe/kyiv"),
        ("africa/asmera", "africa/asmara"),
        ("america/buenos_aires", "america/argentina/buenos_aires"),
        ("us/eastern", "america/new_york"),
        ("us/pacific", "america/los_angeles"),
    ];
    let lower = tz.trim().to_ascii_lowercase();
    ALIASES.iter().find(|(alias, _)| *alias == lower).map_or(lower, |(_, c)| c.to_string())
}

/// True when a declared timezone is present and names a different zone.
pub fn crosscheck_timezone(inferred: &str, declared: Option<&str>) -> bool {
    declared.is_some_and(|d| canonical_timezone(d) != canonical_timezone(inferred))
}

fn header<'a>(headers: &'a BTreeMap<String, String>, name: &str) -> Option<&'a str> {
    headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.trim()).filter(|v| !v.is_empty())
}

fn parse_ip(text: &str) -> Option<IpAddr> {
    let t = text.trim().trim_matches('"');
    if let Ok(ip) = t.parse() {
        return Some(ip);
    }
    // "[v6]:port" or "v4:port"
    if let Some(rest) = t.strip_prefix('[') {
        return rest.split(']').next()?.parse().ok();
    }
    t.rsplit_once(':').and_then(|(host, _)| host.parse().ok())
}

/// Client address: the entry `trusted_hops` from the right of
/// X-Forwarded-For, else X-Real-IP, else Remote-Addr, else the socket peer.
pub fn resolve_client_ip(
    headers: &BTreeMap<String, String>,
    peer: Option<IpAddr>,
    trusted_hops: usize,
) -> Result<IpAddr, AuditError> {
    if trusted_hops > 0 {
        if let Some(xff) = header(headers, "x-forwarded-for") {
            let hops: Vec<&str> = xff.split(',').map(str::trim).filter(|h| !h.is_empty()).collect();
            if hops.len() >= trusted_hops {
                if let Some(ip) = parse_ip(hops[hops.len() - trusted_hops]) {
                    return Ok(ip);
                }
            }
        }
        if let Some(ip) = header(headers, "x-real-ip").and_then(parse_ip) {
            return Ok(ip);
        }
    }
    header(headers, "remote-addr").and_then(parse_ip).or(peer).ok_or(AuditError::MissingSourceAddress)
}

fn locale_from(headers: &BTreeMap<String, String>) -> String {
    header(headers, "accept-language")
        .and_then(|v| v.split([',', ';']).next())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| crate::catalog::DEFAULT_LOCALE.to_string())
}

#[derive(Debug, Clone)]
pub struct Auditor {
    providers: Arc<Providers>,
    catalogs: Arc<Catalogs>,
    trusted_hops: usize,
    deadline_ms: u64,
}

impl Auditor {
    pub fn new(providers: Arc<Providers>, catalogs: Arc<Catalogs>) -> Self {
        let deadline_ms = providers.default_deadline_ms();
        Auditor { providers, catalogs, trusted_hops: 1, deadline_ms }
    }

    pub fn with_trusted_hops(mut self, hops: usize) -> Self {
        self.trusted_hops = hops;
        self
    }

    pub fn with_deadline(mut self, deadline_ms: u64) -> Self {
        self.deadline_ms = deadline_ms;
        self
    }

    pub async fn audit_request(
        &self,
        headers: &BTreeMap<String, String>,
        hints: Option<&ClientHints>,
        peer: Option<IpAddr>,
    ) -> Result<AuditReport, AuditError> {
        let ip = resolve_client_ip(headers, peer, self.trusted_hops)?;
        let key = ip.to_string();
        let (geo, anon, abuse) = tokio::join!(
            self.call(ProviderKind::GeoAsn, &key),
            self.call(ProviderKind::AnonymizationCheck, &key),
            self.call(ProviderKind::AbuseScore, &key),
        );
        let mut degraded = Vec::new();
        let mut take = |o: Option<ProviderOutcome>, kind: ProviderKind| match o {
            Some(ProviderOutcome { status: ProviderStatus::Ok, payload: Some(p), .. }) => Some(p),
            _ => {
                degraded.push(kind);
                None
            }
        };
        let geo = match take(geo, ProviderKind::GeoAsn) {
            Some(Payload::GeoAsn(g)) => g,
            _ => GeoRecord::default(),
        };
        let anon = match take(anon, ProviderKind::AnonymizationCheck) {
            Some(Payload::AnonymizationCheck(a)) => a,
            _ => AnonymizationRecord::default(),
        };
        let abuse = match take(abuse, ProviderKind::AbuseScore) {
            Some(Payload::AbuseScore(a)) => a,
            _ => AbuseRecord { score: 0.0 },
        };
        let hints = hints.cloned().unwrap_or_default();
        let dev = parse_user_agent(header(headers, "user-agent").unwrap_or_default());
        let locale = locale_from(headers);
        Ok(self.evaluate(ip, geo, anon, abuse, dev, &hints, &locale, degraded))
    }

    async fn call(&self, provider: ProviderKind, key: &str) -> Option<ProviderOutcome> {
        self.providers.call_with_deadline(provider, key, self.deadline_ms).await.ok()
    }

    #[allow(clippy::too_many_arguments)]
    fn evaluate(
        &self,
        ip: IpAddr,
        geo: GeoRecord,
        anon: AnonymizationRecord,
        abuse: AbuseRecord,
        dev: DeviceRecord,
        hints: &ClientHints,
        locale: &str,
        degraded: Vec<ProviderKind>,
    ) -> AuditReport {
        let anonymized = anon.vpn || anon.proxy || anon.tor;
        let resolver_asn = anon.resolver_asn.or(hints.resolver_asn);
        let dns_leak = geo.asn.is_some_and(|egress| detect_dns_leak(egress, resolver_asn, anonymized));
        let hosting = anon.hosting || geo.connection_type == ConnectionType::Datacenter;
        let geo_disclosed = geo.country.is_some() || geo.city.is_some() || geo.lat.is_some();

        let net = NetProfile { ip: ip.to_string(), asn: geo.asn, isp_name: geo.isp.clone(), connection_type: geo.connection_type };
        let geo_profile = GeoProfile {
            country: geo.country.clone(),
            city: geo.city.clone(),
            region: geo.region.clone(),
            timezone: geo.timezone.clone(),
            lat: geo.lat,
            lon: geo.lon,
        };
        let yes_no = |b: bool| if b { "yes" } else { "no" }.to_string();
        let or_unknown = |s: Option<&str>| s.unwrap_or("unknown").to_string();

        let mut sec = SecurityVector { abuse_score: abuse.score, ..Default::default() };
        let mut indicators = Vec::with_capacity(Indicator::ALL.len());
        for indicator in Indicator::ALL {
            let (triggered, detail) = match indicator {
                Indicator::PublicIp => (true, net.ip.clone()),
                Indicator::Geolocation => {
                    let place: Vec<&str> = [geo.city.as_deref(), geo.region.as_deref(), geo.country.as_deref()]
                        .into_iter()
                        .flatten()
                        .collect();
                    (geo_disclosed, if place.is_empty() { "unknown".into() } else { place.join(", ") })
                }
                Indicator::IspAsName => {
                    let detail = match (geo.asn, geo.isp.as_deref()) {
                        (Some(a), Some(i)) => format!("AS{a} {i}"),
                        (Some(a), None) => format!("AS{a}"),
                        (None, i) => or_unknown(i),
                    };
                    (geo.asn.is_some() || geo.isp.is_some(), detail)
                }
                Indicator::ConnectionType => {
                    let name = serde_json::to_value(geo.connection_type).ok().and_then(|v| v.as_str().map(String::from));
                    (geo.connection_type != ConnectionType::Unknown, name.unwrap_or_default())
                }
                Indicator::VpnProxy => {
                    let via: Vec<&str> = [(anon.vpn, "vpn"), (anon.proxy, "proxy"), (anon.tor, "tor")]
                        .into_iter()
                        .filter_map(|(on, name)| on.then_some(name))
                        .collect();
                    (anonymized, if via.is_empty() { "none".into() } else { via.join(", ") })
                }
                Indicator::TorExit => (anon.tor, yes_no(anon.tor)),
                Indicator::HostingDatacenter => (hosting, yes_no(hosting)),
                Indicator::DnsLeak => {
                    let detail = match (resolver_asn, geo.asn) {
                        (Some(r), Some(e)) => format!("resolver AS{r}, egress AS{e}"),
                        _ => "not measured".into(),
                    };
                    (dns_leak, detail)
                }
                Indicator::BrowserUserAgent => {
                    let known = dev.browser != "unknown";
                    (known, format!("{} {} on {} {}", dev.browser, dev.browser_version, dev.os, dev.os_version))
                }
                Indicator::DeviceType => {
                    let name = serde_json::to_value(dev.device_type).ok().and_then(|v| v.as_str().map(String::from));
                    (dev.device_type != DeviceType::Unknown, name.unwrap_or_default())
                }
                Indicator::TouchCapability => (dev.touch_capable, yes_no(dev.touch_capable)),
                Indicator::HardwareVendor => (dev.vendor != "unknown", dev.vendor.clone()),
            };
            sec.set(indicator, triggered);
            let recommendation_key = triggered.then(|| indicator.recommendation_key());
            indicators.push(IndicatorResult {
                indicator,
                label: self.catalogs.text(locale, &indicator.label_key()),
                triggered,
                detail,
                recommendation: recommendation_key.as_deref().map(|k| self.catalogs.text(locale, k)),
                recommendation_key,
            });
        }

        let tz_declared = hints.declared_timezone.clone();
        let tz_mismatch = geo.timezone.as_deref().is_some_and(|inferred| crosscheck_timezone(inferred, tz_declared.as_deref()));
        let abuse_warning = (abuse.score >= ABUSE_WARNING_THRESHOLD).then(|| self.catalogs.text(locale, "audit.abuse_warning"));
        let mut notices = Vec::new();
        if tz_mismatch {
            notices.push(self.catalogs.text(locale, "audit.tz_mismatch"));
        }
        if geo.lat.is_some() {
            notices.push(self.catalogs.text(locale, "audit.location_precision"));
        }
        let flags = AuditFlags {
            cookies: hints.cookies,
            javascript: hints.javascript,
            ipv4: ip.is_ipv4() || hints.ipv4 == Some(true),
            ipv6: ip.is_ipv6() || hints.ipv6 == Some(true),
        };
        let (locale, _) = self.catalogs.resolve_locale(locale);
        AuditReport {
            profile: ConnectionProfile { net, geo: geo_profile, dev, sec },
            indicators,
            tz_declared,
            tz_mismatch,
            flags,
            abuse_score: abuse.score,
            abuse_warning,
            notices,
            locale,
            degraded,
        }
    }
}

//! Domain-gated security assistant with a pluggable remote backend and a
//! deterministic rule-based fallback.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, LazyLock, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalogs, DEFAULT_LOCALE};
use crate::engine::Verdict;
use crate::entity::EntityKind;
use crate::footprint::{AuditReport, Indicator};
use crate::scoring::Label;

pub const REMOTE_DEADLINE_MS: u64 = 3000;
pub const MAX_RECOMMENDATIONS: usize = 5;
pub const SYSTEM_PROMPT: &str = include_str!("../data/assistant_system_prompt.txt");

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SessionContext {
    pub last_verdict: Option<Verdict>,
    pub last_audit: Option<AuditReport>,
    pub locale: String,
}

impl SessionContext {
    pub fn new(locale: impl Into<String>) -> Self {
        SessionContext { locale: locale.into(), ..Default::default() }
    }

    fn locale(&self) -> &str {
        if self.locale.is_empty() {
            DEFAULT_LOCALE
        } else {
            &self.locale
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendKind {
    RuleBased,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub user_text: String,
    pub reply_text: String,
    pub in_scope: bool,
    pub backend: BackendKind,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecommendationSource {
    Audit,
    Verdict,
    General,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub priority: u32,
    pub text_key: String,
    pub text: String,
    pub source: RecommendationSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend returned an empty reply")]
    Empty,
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn complete(&self, system_prompt: &str, user_text: &str, context: &SessionContext) -> Result<String, BackendError>;
}

/// Backend with a fixed reply and delay; counts how often it is called.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    pub reply: Option<String>,
    pub delay_ms: u64,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(reply: Option<String>, delay_ms: u64) -> Self {
        ScriptedBackend { reply, delay_ms, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl ChatBackend for ScriptedBackend {
    async fn complete(&self, _: &str, _: &str, _: &SessionContext) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        tokio::time::sleep(Duration::from_millis(self.delay_ms)).await;
        self.reply.clone().ok_or_else(|| BackendError::Unavailable("scripted failure".into()))
    }
}

struct Lexicon {
    words: Vec<String>,
    stems: Vec<String>,
    phrases: Vec<String>,
}

static LEXICON: LazyLock<Lexicon> = LazyLock::new(|| {
    let mut lex = Lexicon { words: Vec::new(), stems: Vec::new(), phrases: Vec::new() };
    for line in include_str!("../data/assistant_lexicon.txt").lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let term = line.to_lowercase();
        if let Some(stem) = term.strip_suffix('*') {
            lex.stems.push(stem.to_string());
        } else if term.contains(' ') {
            lex.phrases.push(term);
        } else {
            lex.words.push(term);
        }
    }
    lex
});

/// References to the last verdict and to the visitor's own connection.
const VERDICT_REFERENCES: [&str; 14] = [
    "this link", "this url", "this site", "this website", "this number", "this email", "this business",
    "this verdict", "this result", "ce lien", "ce site", "ce numéro", "ce résultat", "cette adresse",
];
const AUDIT_REFERENCES: [&str; 6] = ["my connection", "my ip", "my footprint", "ma connexion", "mon ip", "mon empreinte"];

fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

fn phrase_text(tokens: &[String]) -> String {
    format!(" {} ", tokens.join(" "))
}

fn has_phrase(padded: &str, phrase: &str) -> bool {
    padded.contains(&format!(" {phrase} "))
}

fn lexicon_hit(toks: &[String]) -> bool {
    let lex = &*LEXICON;
    let padded = phrase_text(toks);
    toks.iter().any(|t| lex.words.iter().any(|w| w == t) || lex.stems.iter().any(|s| t.starts_with(s.as_str())))
        || lex.phrases.iter().any(|p| has_phrase(&padded, &tokens(p).join(" ")))
}

fn references(toks: &[String], refs: &[&str]) -> bool {
    let padded = phrase_text(toks);
    refs.iter().any(|r| has_phrase(&padded, &tokens(r).join(" ")))
}

/// In scope when the text hits the security lexicon, or refers to an artifact
/// present in the session.
pub fn domain_gate(user_text: &str, context: &SessionContext) -> bool {
    let toks = tokens(user_text);
    lexicon_hit(&toks)
        || (context.last_verdict.is_some() && references(&toks, &VERDICT_REFERENCES))
        || (context.last_audit.is_some() && references(&toks, &AUDIT_REFERENCES))
}

fn kind_text(catalogs: &Catalogs, locale: &str, kind: EntityKind) -> String {
    catalogs.text(locale, &format!("kind.{}", kind.as_str()))
}

/// Prioritized advice grounded in the session's audit and verdict.
pub fn recommend(catalogs: &Catalogs, context: &SessionContext) -> Vec<Recommendation> {
    let locale = context.locale();
    let mut picks: Vec<(String, Vec<(&str, String)>, RecommendationSource)> = Vec::new();
    if let Some(audit) = &context.last_audit {
        let rules = [(Indicator::DnsLeak, "rec.dns_leak"), (Indicator::HostingDatacenter, "rec.datacenter_proxy"), (Indicator::TorExit, "rec.tor")];
        for (indicator, key) in rules {
            if audit.triggered(indicator) {
                picks.push((key.into(), vec![], RecommendationSource::Audit));
            }
        }
    }
    if let Some(v) = &context.last_verdict {
        let kind = kind_text(catalogs, locale, v.entity.kind);
        if v.label == Label::Malicious {
            picks.push(("rec.do_not_engage".into(), vec![("kind", kind.clone())], RecommendationSource::Verdict));
            if v.entity.kind == EntityKind::Phone {
                picks.push(("rec.report_phone".into(), vec![], RecommendationSource::Verdict));
            } else {
                picks.push(("rec.report_entity".into(), vec![("kind", kind)], RecommendationSource::Verdict));
            }
        } else if !v.degraded.is_empty() {
            picks.push(("rec.partial_data".into(), vec![], RecommendationSource::Verdict));
        }
    }
    if picks.is_empty() {
        for key in ["rec.general.verify_links", "rec.general.mobile_money", "rec.general.passwords", "rec.general.two_factor", "rec.general.updates"] {
            picks.push((key.into(), vec![], RecommendationSource::General));
        }
    }
    picks
        .into_iter()
        .take(MAX_RECOMMENDATIONS)
        .enumerate()
        .map(|(i, (key, args, source))| {
            let args: Vec<(&str, &str)> = args.iter().map(|(k, v)| (*k, v.as_str())).collect();
            Recommendation { priority: i as u32 + 1, text: catalogs.render(locale, &key, &args).text, text_key: key, source }
        })
        .collect()
}

const VERDICT_INTENT: [&str; 12] =
    ["verdict", "result", "résultat", "mean", "means", "signifie", "score", "safe", "sûr", "dangerous", "dangereux", "trust"];
const ADVICE_INTENT: [&str; 8] = ["recommend", "advice", "conseil", "conseils", "should", "faire", "protect", "protéger"];
const TOPICS: [(&[&str], &str); 10] = [
    (&["sent money", "already paid", "envoyé de l'argent", "j'ai payé", "j'ai envoyé"], "assistant.topic.sent_money"),
    (&["sim swap", "sim"], "assistant.topic.sim_swap"),
    (&["mobile money", "momo", "airtel money"], "assistant.topic.mobile_money"),
    (&["phishing", "hameçonnage", "phish"], "assistant.topic.phishing"),
    (&["dns", "leak", "fuite"], "assistant.topic.dns_leak"),
    (&["vpn", "proxy"], "assistant.topic.vpn"),
    (&["password", "passwords", "mot de passe", "otp", "pin", "2fa"], "assistant.topic.password"),
    (&["hacked", "piraté", "pirate", "hack"], "assistant.topic.hacked"),
    (&["malware", "virus", "ransomware", "app", "application"], "assistant.topic.malware"),
    (&["link", "lien", "url"], "assistant.topic.link"),
];

/// Deterministic replies from the message catalog.
#[derive(Debug, Clone)]
pub struct RuleBased {
    catalogs: Arc<Catalogs>,
}

impl RuleBased {
    pub fn new(catalogs: Arc<Catalogs>) -> Self {
        RuleBased { catalogs }
    }

    pub fn reply(&self, user_text: &str, context: &SessionContext) -> String {
        let locale = context.locale();
        let c = &*self.catalogs;
        let toks = tokens(user_text);
        let padded = phrase_text(&toks);
        let any = |words: &[&str]| words.iter().any(|w| has_phrase(&padded, &tokens(w).join(" ")));

        if any(&VERDICT_INTENT) || references(&toks, &VERDICT_REFERENCES) {
            return match &context.last_verdict {
                Some(v) => self.verdict_reply(v, locale),
                None => c.text(locale, "assistant.verdict.none"),
            };
        }
        if any(&ADVICE_INTENT) || references(&toks, &AUDIT_REFERENCES) {
            let items: Vec<String> = recommend(c, context).into_iter().map(|r| r.text).collect();
            return c.render(locale, "assistant.recommendations", &[("items", &items.join(" "))]).text;
        }
        for (words, key) in TOPICS {
            if any(words) {
                return c.text(locale, key);
            }
        }
        c.text(locale, "assistant.fallback")
    }

    fn verdict_reply(&self, v: &Verdict, locale: &str) -> String {
        let c = &*self.catalogs;
        let kind = kind_text(c, locale, v.entity.kind);
        let score = v.display_score.to_string();
        match v.label {
            Label::Malicious => {
                let feature = v
                    .dominant_features
                    .first()
                    .map(|f| c.text(locale, &format!("feature.{}", f.feature.as_str())))
                    .unwrap_or_default();
                c.render(locale, "assistant.verdict.malicious", &[("kind", &kind), ("feature", &feature)]).text
            }
            Label::Legitimate => c.render(locale, "assistant.verdict.legitimate", &[("kind", &kind), ("score", &score)]).text,
        }
    }
}

pub struct Assistant {
    remote: Option<Arc<dyn ChatBackend>>,
    rules: RuleBased,
    catalogs: Arc<Catalogs>,
    deadline_ms: u64,
}

impl std::fmt::Debug for Assistant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Assistant").field("remote", &self.remote.is_some()).field("deadline_ms", &self.deadline_ms).finish()
    }
}

impl Assistant {
    pub fn new(catalogs: Arc<Catalogs>) -> Self {
        Assistant { remote: None, rules: RuleBased::new(catalogs.clone()), catalogs, deadline_ms: REMOTE_DEADLINE_MS }
    }

    pub fn with_remote(mut self, backend: Arc<dyn ChatBackend>) -> Self {
        self.remote = Some(backend);
        self
    }

    pub fn with_deadline(mut self, deadline_ms: u64) -> Self {
        self.deadline_ms = deadline_ms;
        self
    }

    pub async fn chat(&self, user_text: &str, context: &SessionContext) -> ChatTurn {
        let start = Instant::now();
        let turn = |reply_text: String, in_scope: bool, backend: BackendKind| ChatTurn {
            user_text: user_text.to_string(),
            reply_text,
            in_scope,
            backend,
            elapsed_ms: start.elapsed().as_millis() as u64,
        };
        if !domain_gate(user_text, context) {
            return turn(self.catalogs.text(context.locale(), "assistant.redirect"), false, BackendKind::RuleBased);
        }
        if let Some(remote) = &self.remote {
            let call = remote.complete(SYSTEM_PROMPT, user_text, context);
            match tokio::time::timeout(Duration::from_millis(self.deadline_ms), call).await {
                Ok(Ok(reply)) if !reply.trim().is_empty() => return turn(reply, true, BackendKind::Remote),
                Ok(Ok(_)) => tracing::warn!(err = %BackendError::Empty, "remote assistant fell back"),
                Ok(Err(err)) => tracing::warn!(%err, "remote assistant fell back"),
                Err(_) => tracing::warn!(deadline_ms = self.deadline_ms, "remote assistant timed out"),
            }
        }
        turn(self.rules.reply(user_text, context), true, BackendKind::RuleBased)
    }

    pub fn recommend(&self, context: &SessionContext) -> Vec<Recommendation> {
        recommend(&self.catalogs, context)
    }
}

/// In-memory sessions; contexts are dropped when a session ends.
#[derive(Debug, Default)]
pub struct SessionStore {
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<SessionContext>>>>,
}

impl SessionStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// The session's context, created with `locale` on first use. Callers
    /// hold the returned lock for the whole turn, so turns run serially.
    pub fn get_or_create(&self, session_id: &str, locale: &str) -> Arc<tokio::sync::Mutex<SessionContext>> {
        self.sessions
            .lock()
            .expect("session map lock")
            .entry(session_id.to_string())
            .or_insert_with(|| Arc::new(tokio::sync::Mutex::new(SessionContext::new(locale))))
            .clone()
    }

    pub fn end(&self, session_id: &str) -> bool {
        self.sessions.lock().expect("session map lock").remove(session_id).is_some()
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().expect("session map lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Engine;
    use crate::entity::RawEntity;
    use crate::footprint::{Auditor, ClientHints};
    use crate::providers::{FixtureSet, Providers};
    use crate::scoring::ScoringConfig;
    use std::collections::BTreeMap;

    const FIXTURES: &str = r#"
{"provider":"whois","key":"phish.example","response":{"registered_on":"2025-05-20"}}
{"provider":"ssl_check","key":"phish.example","response":{"not_before":"2025-05-30","trusted_ca":false}}
{"provider":"host_info","key":"phish.example","response":{"asn":64512,"country":"NL","asn_risk":0.8}}
{"provider":"reputation","key":"phish.example","response":{"dnsbl_hits":3,"abuse_index":0.9}}
{"provider":"phone_registry","key":"+242000000001","response":{"fraud_reports":5}}
{"provider":"geo_asn","key":"185.220.101.9","response":{"country":"DE","connection_type":"datacenter","asn":64512}}
{"provider":"anonymization_check","key":"185.220.101.9","response":{"vpn":true,"resolver_asn":64513}}
{"provider":"abuse_score","key":"185.220.101.9","response":{"score":0.0}}
"#;

    fn providers() -> Arc<Providers> {
        Arc::new(Providers::from_fixtures(FixtureSet::parse(FIXTURES).unwrap()))
    }

    async fn verdict(text: &str) -> Verdict {
        let now = chrono::DateTime::parse_from_rfc3339("2025-06-01T12:00:00Z").unwrap().with_timezone(&chrono::Utc);
        let engine = Engine::new(providers(), Arc::new(ScoringConfig::default()));
        engine.verify(&RawEntity::at(text, now).unwrap(), None).await.unwrap()
    }

    async fn leaky_audit() -> AuditReport {
        let auditor = Auditor::new(providers(), Arc::new(Catalogs::bundled()));
        let headers: BTreeMap<String, String> = [("remote-addr".to_string(), "185.220.101.9".to_string())].into();
        auditor.audit_request(&headers, Some(&ClientHints::default()), None).await.unwrap()
    }

    fn catalogs() -> Arc<Catalogs> {
        Arc::new(Catalogs::bundled())
    }

    pub const OFF_TOPIC: [&str; 5] =
        ["Write me a poem", "Tell me a joke", "Who won the match yesterday?", "Quelle heure est-il ?", "Recipe for saka-saka"];

    #[tokio::test]
    async fn gate_examples() {
        let empty = SessionContext::new("en");
        assert!(domain_gate("What is phishing?", &empty));
        assert!(!domain_gate("Write me a poem", &empty));
        assert!(!domain_gate("Is this link safe?", &empty));
        let ctx = SessionContext { last_verdict: Some(verdict("http://phish.example/x").await), ..SessionContext::new("en") };
        assert!(domain_gate("Is this link safe?", &ctx));
        assert!(domain_gate("C'est quoi l'hameçonnage ?", &empty));
        assert!(domain_gate("J'ai perdu mon mot de passe", &empty));
        for text in OFF_TOPIC {
            assert!(!domain_gate(text, &empty), "{text}");
        }
    }

    #[tokio::test]
    async fn off_topic_never_reaches_remote() {
        let remote = Arc::new(ScriptedBackend::new(Some("remote".into()), 0));
        let a = Assistant::new(catalogs()).with_remote(remote.clone());
        let t = a.chat("Write me a poem", &SessionContext::new("en")).await;
        assert!(!t.in_scope);
        assert_eq!(t.backend, BackendKind::RuleBased);
        assert_eq!(t.reply_text, catalogs().text("en", "assistant.redirect"));
        assert_eq!(remote.calls(), 0);
        let t = a.chat("What is phishing?", &SessionContext::new("en")).await;
        assert_eq!((t.backend, t.reply_text.as_str()), (BackendKind::Remote, "remote"));
        assert_eq!(remote.calls(), 1);
    }

    #[tokio::test]
    async fn failing_remote_falls_back() {
        let remote = Arc::new(ScriptedBackend::new(None, 0));
        let a = Assistant::new(catalogs()).with_remote(remote);
        let t = a.chat("What is phishing?", &SessionContext::new("en")).await;
        assert_eq!(t.backend, BackendKind::RuleBased);
        assert_eq!(t.reply_text, catalogs().text("en", "assistant.topic.phishing"));
    }

    #[tokio::test]
    async fn slow_remote_times_out_near_deadline() {
        let a = Assistant::new(catalogs()).with_remote(Arc::new(ScriptedBackend::new(Some("late".into()), 5000)));
        let t = a.chat("How do I stop a sim swap?", &SessionContext::new("en")).await;
        assert_eq!(t.backend, BackendKind::RuleBased);
        assert!((3000..=3100).contains(&t.elapsed_ms), "{}", t.elapsed_ms);
    }

    #[tokio::test]
    async fn verdict_question_names_top_feature() {
        let v = verdict("http://phish.example/x").await;
        let top = catalogs().text("en", &format!("feature.{}", v.dominant_features[0].feature.as_str()));
        let ctx = SessionContext { last_verdict: Some(v), ..SessionContext::new("en") };
        let t = Assistant::new(catalogs()).chat("what does this verdict mean", &ctx).await;
        assert!(t.in_scope);
        assert!(t.reply_text.contains(&top), "{}", t.reply_text);
    }

    #[tokio::test]
    async fn recommendation_rules() {
        let c = catalogs();
        let general = recommend(&c, &SessionContext::new("en"));
        assert_eq!(general.len(), MAX_RECOMMENDATIONS);
        assert!(general.iter().all(|r| r.source == RecommendationSource::General));

        let ctx = SessionContext { last_audit: Some(leaky_audit().await), ..SessionContext::new("en") };
        let recs = recommend(&c, &ctx);
        assert_eq!((recs[0].priority, recs[0].text_key.as_str(), recs[0].source), (1, "rec.dns_leak", RecommendationSource::Audit));
        assert_eq!(recs[1].text_key, "rec.datacenter_proxy");

        let phone = SessionContext { last_verdict: Some(verdict("+242000000001").await), ..SessionContext::new("fr") };
        assert_eq!(phone.last_verdict.as_ref().unwrap().label, Label::Malicious);
        let recs = recommend(&c, &phone);
        assert!(recs.iter().any(|r| r.text_key == "rec.report_phone"));
        assert!(recs.iter().all(|r| r.source == RecommendationSource::Verdict));
        assert!(recs[0].text.contains("ce numéro"));
    }

    #[tokio::test]
    async fn recommendation_invariants_on_full_context() {
        let ctx = SessionContext {
            last_audit: Some(leaky_audit().await),
            last_verdict: Some(verdict("http://phish.example/x").await),
            locale: "en".into(),
        };
        let recs = recommend(&catalogs(), &ctx);
        assert!(recs.len() <= MAX_RECOMMENDATIONS);
        let mut priorities: Vec<u32> = recs.iter().map(|r| r.priority).collect();
        priorities.dedup();
        assert_eq!(priorities.len(), recs.len());
        let audit = ctx.last_audit.as_ref().unwrap();
        for r in recs.iter().filter(|r| r.source == RecommendationSource::Audit) {
            let indicator = match r.text_key.as_str() {
                "rec.dns_leak" => Indicator::DnsLeak,
                "rec.datacenter_proxy" => Indicator::HostingDatacenter,
                _ => Indicator::TorExit,
            };
            assert!(audit.triggered(indicator));
        }
    }

    #[tokio::test]
    async fn rule_based_topics_in_french() {
        let a = Assistant::new(catalogs());
        let t = a.chat("Qu'est-ce que le hameçonnage ?", &SessionContext::new("fr")).await;
        assert_eq!(t.reply_text, catalogs().text("fr", "assistant.topic.phishing"));
        let t = a.chat("J'ai envoyé de l'argent à un escroc", &SessionContext::new("fr")).await;
        assert_eq!(t.reply_text, catalogs().text("fr", "assistant.topic.sent_money"));
    }

    #[test]
    fn sessions_are_discarded() {
        let s = SessionStore::new();
        let a = s.get_or_create("abc", "en");
        let b = s.get_or_create("abc", "fr");
        assert!(Arc::ptr_eq(&a, &b));
        assert!(s.end("abc"));
        assert!(s.is_empty());
        assert!(!s.end("abc"));
    }
}

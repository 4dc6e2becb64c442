//! Per-locale message catalogs (key → template).

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use thiserror::Error;

pub const DEFAULT_LOCALE: &str = "en";

const BUNDLED: [(&str, &str); 2] = [
    ("en", include_str!("../data/messages/en.toml")),
    ("fr", include_str!("../data/messages/fr.toml")),
];

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog {locale} does not parse: {message}")]
    Parse { locale: String, message: String },
    #[error("catalog {locale} is missing the default key {key}")]
    MissingKey { locale: String, key: String },
}

/// Text resolved from a catalog, with a flag set when the requested locale
/// was unknown and the default locale answered instead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub text: String,
    pub locale: String,
    pub fell_back: bool,
}

#[derive(Debug, Clone)]
pub struct Catalogs {
    locales: HashMap<String, BTreeMap<String, String>>,
}

impl Catalogs {
    pub fn bundled() -> Self {
        let mut locales = HashMap::new();
        for (locale, text) in BUNDLED {
            let table = parse_catalog(locale, text).expect("bundled catalog parses");
            locales.insert(locale.to_string(), table);
        }
        Catalogs { locales }
    }

    /// Bundled catalogs plus every `<locale>.toml` in `dir`. A file for an
    /// existing locale overrides individual keys.
    pub fn with_dir(dir: impl AsRef<Path>) -> Result<Self, CatalogError> {
        let mut catalogs = Self::bundled();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("toml") {
                continue;
            }
            let Some(locale) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let table = parse_catalog(locale, &std::fs::read_to_string(&path)?)?;
            catalogs.locales.entry(locale.to_string()).or_default().extend(table);
        }
        catalogs.check_complete()?;
        Ok(catalogs)
    }

    fn check_complete(&self) -> Result<(), CatalogError> {
        let default = &self.locales[DEFAULT_LOCALE];
        for (locale, table) in &self.locales {
            if let Some(key) = default.keys().find(|k| !table.contains_key(*k)) {
                return Err(CatalogError::MissingKey { locale: locale.clone(), key: key.clone() });
            }
        }
        Ok(())
    }

    pub fn has_locale(&self, locale: &str) -> bool {
        self.locales.contains_key(locale)
    }

    pub fn locales(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.locales.keys().map(String::as_str).collect();
        out.sort_unstable();
        out
    }

    pub fn keys(&self, locale: &str) -> Vec<&str> {
        self.locales.get(locale).map(|t| t.keys().map(String::as_str).collect()).unwrap_or_default()
    }

    /// Resolve the locale actually used for `requested`. Accepts region
    /// suffixes such as `fr-CG`.
    pub fn resolve_locale(&self, requested: &str) -> (String, bool) {
        let lower = requested.trim().to_ascii_lowercase();
        if self.has_locale(&lower) {
            return (lower, false);
        }
        let base = lower.split(['-', '_']).next().unwrap_or_default();
        if self.has_locale(base) {
            return (base.to_string(), false);
        }
        (DEFAULT_LOCALE.to_string(), true)
    }

    pub fn render(&self, locale: &str, key: &str, args: &[(&str, &str)]) -> Rendered {
        let (used, fell_back) = self.resolve_locale(locale);
        let template = self
            .locales
            .get(&used)
            .and_then(|t| t.get(key))
            .or_else(|| self.locales.get(DEFAULT_LOCALE).and_then(|t| t.get(key)))
            .map(String::as_str)
            .unwrap_or(key);
        Rendered { text: fill(template, args), locale: used, fell_back }
    }

    pub fn text(&self, locale: &str, key: &str) -> String {
        self.render(locale, key, &[]).text
    }
}

impl Default for Catalogs {
    fn default() -> Self {
        Self::bundled()
    }
}

fn parse_catalog(locale: &str, text: &str) -> Result<BTreeMap<String, String>, CatalogError> {
    toml::from_str(text).map_err(|e| CatalogError::Parse { locale: locale.to_string(), message: e.to_string() })
}

fn fill(template: &str, args: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in args {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_locales_share_keys() {
        let c = Catalogs::bundled();
        assert_eq!(c.locales(), vec!["en", "fr"]);
        assert_eq!(c.keys("en"), c.keys("fr"));
        assert!(c.check_complete().is_ok());
    }

    #[test]
    fn renders_placeholders() {
        let c = Catalogs::bundled();
        let r = c.render("en", "verdict.malicious", &[("score", "87"), ("kind", "this link")]);
        assert_eq!(r.text, "High risk (87/100): treat this link as dangerous.");
        assert!(!r.fell_back);
    }

    #[test]
    fn unknown_locale_falls_back_with_flag() {
        let c = Catalogs::bundled();
        let r = c.render("sw", "feature.dnsbl_hits", &[]);
        assert!(r.fell_back);
        assert_eq!(r.locale, "en");
        assert_eq!(r.text, c.text("en", "feature.dnsbl_hits"));
        let regional = c.render("fr-CG", "feature.dnsbl_hits", &[]);
        assert!(!regional.fell_back);
        assert_eq!(regional.locale, "fr");
    }

    #[test]
    fn unknown_key_renders_the_key() {
        assert_eq!(Catalogs::bundled().text("en", "no.such.key"), "no.such.key");
    }

    #[test]
    fn extra_directory_adds_locale() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::new();
        for key in Catalogs::bundled().keys("en") {
            body.push_str(&format!("\"{key}\" = \"x\"\n"));
        }
        std::fs::write(dir.path().join("ln.toml"), body).unwrap();
        let c = Catalogs::with_dir(dir.path()).unwrap();
        assert!(c.has_locale("ln"));

        std::fs::write(dir.path().join("pt.toml"), "\"verdict.malicious\" = \"x\"\n").unwrap();
        assert!(matches!(Catalogs::with_dir(dir.path()), Err(CatalogError::MissingKey { .. })));
    }
}

//! Plain-text template sets for the mock text provider.
//!
//! ```text
//! # comment
//! [prompt role_play park]
//! Imagine you are a 100-year-old tree in this park. ...
//! [prompt role_play park]
//! A second variant for the same key.
//! ```
//!
//! A block header is `[role kind type]`; `*` matches anything. The body runs
//! until the next header, lines joined by single spaces. Placeholders use
//! `{name}` and are filled from the request vars.

use std::collections::{BTreeMap, BTreeSet};

use regex::Regex;
use thiserror::Error;

use super::{ProviderError, TextRole};

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("line {line}: malformed header {text:?}")]
    Header { line: usize, text: String },
    #[error("line {line}: unknown role {role:?}")]
    Role { line: usize, role: String },
    #[error("line {line}: text before the first header")]
    Orphan { line: usize },
    #[error("template [{key}] has an empty body")]
    Empty { key: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    role: TextRole,
    kind: String,
    type_tag: String,
}

#[derive(Debug, Clone, Default)]
pub struct TemplateSet {
    entries: BTreeMap<Key, Vec<String>>,
    roles: BTreeSet<TextRole>,
}

/// A template resolved for one request.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved<'a> {
    pub variants: &'a [String],
    /// True when no template matched the exact type tag.
    pub generic: bool,
    pub key: String,
}

const BUILTIN: &str = include_str!("../../assets/templates.txt");

impl TemplateSet {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("built-in template set parses")
    }

    pub fn parse(src: &str) -> Result<Self, TemplateError> {
        let mut set = TemplateSet::default();
        let mut current: Option<(Key, Vec<String>)> = None;
        let flush = |cur: Option<(Key, Vec<String>)>, set: &mut TemplateSet| {
            if let Some((key, lines)) = cur {
                let body = lines.join(" ");
                if body.trim().is_empty() {
                    return Err(TemplateError::Empty {
                        key: format!("{} {} {}", key.role, key.kind, key.type_tag),
                    });
                }
                set.roles.insert(key.role);
                set.entries.entry(key).or_default().push(body);
            }
            Ok(())
        };
        for (i, raw) in src.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') {
                let inner = line
                    .strip_prefix('[')
                    .and_then(|l| l.strip_suffix(']'))
                    .ok_or_else(|| TemplateError::Header {
                        line: i + 1,
                        text: line.to_string(),
                    })?;
                let parts: Vec<&str> = inner.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(TemplateError::Header {
                        line: i + 1,
                        text: line.to_string(),
                    });
                }
                let role = TextRole::parse(parts[0]).ok_or_else(|| TemplateError::Role {
                    line: i + 1,
                    role: parts[0].to_string(),
                })?;
                flush(current.take(), &mut set)?;
                current = Some((
                    Key {
                        role,
                        kind: parts[1].to_string(),
                        type_tag: parts[2].to_lowercase(),
                    },
                    Vec::new(),
                ));
            } else {
                match current.as_mut() {
                    Some((_, lines)) => lines.push(line.to_string()),
                    None => return Err(TemplateError::Orphan { line: i + 1 }),
                }
            }
        }
        flush(current.take(), &mut set)?;
        Ok(set)
    }

    pub fn has_role(&self, role: TextRole) -> bool {
        self.roles.contains(&role)
    }

    /// Variant count for an exact key, for tests and tooling.
    pub fn variant_count(&self, role: TextRole, kind: &str, type_tag: &str) -> usize {
        self.entries
            .get(&Key {
                role,
                kind: kind.to_string(),
                type_tag: type_tag.to_string(),
            })
            .map_or(0, Vec::len)
    }

    /// Lookup order: exact, then (kind, *), then (*, type), then (*, *).
    pub fn resolve(
        &self,
        role: TextRole,
        kind: &str,
        type_tag: &str,
    ) -> Result<Resolved<'_>, ProviderError> {
        if !self.has_role(role) {
            return Err(ProviderError::UnknownRole(role));
        }
        let type_tag = type_tag.to_lowercase();
        let order = [
            (kind, type_tag.as_str()),
            (kind, "*"),
            ("*", type_tag.as_str()),
            ("*", "*"),
        ];
        for (k, t) in order {
            let key = Key {
                role,
                kind: k.to_string(),
                type_tag: t.to_string(),
            };
            if let Some(v) = self.entries.get(&key) {
                return Ok(Resolved {
                    variants: v,
                    generic: t == "*" && type_tag != "*",
                    key: format!("{role} {k} {t}"),
                });
            }
        }
        Err(ProviderError::TemplateMissing {
            role,
            kind: kind.to_string(),
            type_tag,
        })
    }
}

/// Replaces `{name}` placeholders; an unknown name is an error.
pub fn render(template: &str, vars: &BTreeMap<String, String>) -> Result<String, ProviderError> {
    let re = placeholder_re();
    let mut out = String::with_capacity(template.len());
    let mut last = 0;
    for cap in re.captures_iter(template) {
        let m = cap.get(0).unwrap();
        let name = &cap[1];
        let value = vars
            .get(name)
            .ok_or_else(|| ProviderError::MissingVar(name.to_string()))?;
        out.push_str(&template[last..m.start()]);
        out.push_str(value);
        last = m.end();
    }
    out.push_str(&template[last..]);
    Ok(tidy(&out))
}

fn placeholder_re() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").unwrap())
}

/// Collapses whitespace left behind by empty placeholders.
fn tidy(s: &str) -> String {
    let joined = s.split_whitespace().collect::<Vec<_>>().join(" ");
    joined.replace(" .", ".").replace(" ,", ",")
}

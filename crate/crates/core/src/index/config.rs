use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::dei::{Dei, DeiEntry};
use super::IndexError;

/// Which components of an index are kept when identifying an RPC.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct InstantiationConfig {
    pub include_payload: bool,
    pub include_callstack: bool,
    pub include_count: bool,
    pub include_path: bool,
}

const LABELS: &[(&str, InstantiationConfig)] = &[
    ("full", InstantiationConfig::FULL),
    ("no-count", InstantiationConfig::FULL.with_count(false)),
    ("no-stack", InstantiationConfig::FULL.with_callstack(false)),
    ("no-count-stack", InstantiationConfig::FULL.with_count(false).with_callstack(false)),
    ("no-path-count-stack", InstantiationConfig::FULL.with_count(false).with_callstack(false).with_path(false)),
    ("3milebeach", InstantiationConfig::FULL.with_payload(false).with_callstack(false)),
    ("filibuster", InstantiationConfig::FULL.with_payload(false)),
];

impl InstantiationConfig {
    pub const FULL: InstantiationConfig =
        InstantiationConfig { include_payload: true, include_callstack: true, include_count: true, include_path: true };

    pub const fn with_payload(mut self, on: bool) -> Self {
        self.include_payload = on;
        self
    }

    pub const fn with_callstack(mut self, on: bool) -> Self {
        self.include_callstack = on;
        self
    }

    pub const fn with_count(mut self, on: bool) -> Self {
        self.include_count = on;
        self
    }

    pub const fn with_path(mut self, on: bool) -> Self {
        self.include_path = on;
        self
    }

    pub fn is_full(&self) -> bool {
        *self == Self::FULL
    }

    pub fn labels() -> impl Iterator<Item = &'static str> {
        LABELS.iter().map(|(l, _)| *l)
    }

    pub fn label(&self) -> Option<&'static str> {
        LABELS.iter().find(|(_, c)| c == self).map(|(l, _)| *l)
    }

    /// Copy of `dei` with the disabled components masked: payloads and
    /// stacks become empty, counts become 1, and without paths only the
    /// last entry survives. Recorded counts are kept as they are; counting
    /// under the coarser key happens at assignment time in the simulator.
    pub fn project(&self, dei: &Dei) -> Dei {
        project(dei, *self)
    }
}

pub fn project(dei: &Dei, config: InstantiationConfig) -> Dei {
    let entries = dei.entries();
    let kept = if config.include_path || entries.is_empty() { entries } else { &entries[entries.len() - 1..] };
    Dei::from_entries(
        kept.iter()
            .map(|e| DeiEntry {
                invocation: e.invocation.masked(config.include_payload, config.include_callstack),
                count: if config.include_count { e.count } else { std::num::NonZeroU32::MIN },
            })
            .collect(),
    )
}

impl fmt::Display for InstantiationConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.label() {
            Some(l) => f.write_str(l),
            None => write!(
                f,
                "payload={},callstack={},count={},path={}",
                self.include_payload, self.include_callstack, self.include_count, self.include_path
            ),
        }
    }
}

impl FromStr for InstantiationConfig {
    type Err = IndexError;

    /// Accepts a label or a comma list like `payload=false,count=false`.
    fn from_str(s: &str) -> Result<Self, IndexError> {
        if let Some((_, c)) = LABELS.iter().find(|(l, _)| *l == s) {
            return Ok(*c);
        }
        let mut c = Self::FULL;
        for part in s.split(',') {
            let (k, v) = part.split_once('=').ok_or_else(|| IndexError::UnknownConfig(s.to_string()))?;
            let v: bool = v.parse().map_err(|_| IndexError::UnknownConfig(s.to_string()))?;
            match k.trim() {
                "payload" => c.include_payload = v,
                "callstack" | "stack" => c.include_callstack = v,
                "count" => c.include_count = v,
                "path" => c.include_path = v,
                _ => return Err(IndexError::UnknownConfig(s.to_string())),
            }
        }
        Ok(c)
    }
}

impl Serialize for InstantiationConfig {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for InstantiationConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

//! Compact header encoding: `[` entry (`::` entry)* `]` with
//! entry = `sig:<hex>,pay:<hex>,stk:<hex>|<count>`.
//!
//! Payloads and stacks travel as digests only, so the encoded size is
//! bounded by the index length, not by argument sizes.

use std::collections::BTreeMap;

use super::dei::{Dei, DeiEntry};
use super::digest::Digest;
use super::invocation::InvocationSignature;
use super::IndexError;

pub const INDEX_HEADER: &str = "x-dexi-index";
pub const PRELIMINARY_HEADER: &str = "x-dexi-preliminary";

pub fn encode(dei: &Dei) -> String {
    let mut out = String::from("[");
    for (i, e) in dei.entries().iter().enumerate() {
        if i > 0 {
            out.push_str("::");
        }
        let inv = &e.invocation;
        out.push_str(&format!("sig:{},pay:{},stk:{}|{}", inv.signature, inv.payload, inv.callstack, e.count));
    }
    out.push(']');
    out
}

pub fn decode(text: &str) -> Result<Dei, IndexError> {
    let bad = |why: &str| IndexError::Decode { input: truncate(text), reason: why.to_string() };
    let inner = text.strip_prefix('[').and_then(|t| t.strip_suffix(']')).ok_or_else(|| bad("missing brackets"))?;
    if inner.is_empty() {
        return Ok(Dei::root());
    }
    let mut entries = Vec::new();
    for part in inner.split("::") {
        let (ids, count) = part.split_once('|').ok_or_else(|| bad("entry without count"))?;
        let count: u32 = count.parse().map_err(|_| bad("count is not an integer"))?;
        if count == 0 {
            return Err(bad("count must be positive"));
        }
        let mut fields = ids.split(',');
        let mut take = |tag: &str| -> Result<Digest, IndexError> {
            let f = fields.next().ok_or_else(|| bad("missing field"))?;
            let hex = f.strip_prefix(tag).ok_or_else(|| bad("unexpected field tag"))?;
            Digest::from_hex(hex).ok_or_else(|| bad("malformed digest"))
        };
        let sig = take("sig:")?;
        let pay = take("pay:")?;
        let stk = take("stk:")?;
        if fields.next().is_some() {
            return Err(bad("trailing field"));
        }
        entries.push(DeiEntry::new(InvocationSignature::from_digests(sig, pay, stk), count)?);
    }
    Ok(Dei::from_entries(entries))
}

fn truncate(s: &str) -> String {
    s.chars().take(80).collect()
}

/// String-keyed RPC metadata, as carried by request headers.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Metadata(pub BTreeMap<String, String>);

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }
}

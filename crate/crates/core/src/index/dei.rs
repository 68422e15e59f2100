use std::fmt;
use std::num::NonZeroU32;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::invocation::InvocationSignature;
use super::{wire, IndexError};

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DeiEntry {
    pub invocation: InvocationSignature,
    pub count: NonZeroU32,
}

impl DeiEntry {
    pub fn new(invocation: InvocationSignature, count: u32) -> Result<Self, IndexError> {
        let count = NonZeroU32::new(count).ok_or(IndexError::ZeroCount)?;
        Ok(DeiEntry { invocation, count })
    }
}

impl fmt::Debug for DeiEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for DeiEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.invocation, self.count)
    }
}

/// Distributed execution index: the chain of invocations (each with its
/// occurrence count) from the entry point down to one RPC. The empty
/// index identifies the entry point itself.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DistributedExecutionIndex {
    entries: Vec<DeiEntry>,
}

pub type Dei = DistributedExecutionIndex;

impl DistributedExecutionIndex {
    pub fn root() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<DeiEntry>) -> Self {
        DistributedExecutionIndex { entries }
    }

    pub fn entries(&self) -> &[DeiEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [DeiEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<&DeiEntry> {
        self.entries.last()
    }

    /// Index of the enclosing invocation; `None` for the entry point.
    pub fn parent(&self) -> Option<Self> {
        if self.entries.is_empty() {
            return None;
        }
        Some(DistributedExecutionIndex { entries: self.entries[..self.entries.len() - 1].to_vec() })
    }

    pub fn prefix(&self, len: usize) -> Self {
        DistributedExecutionIndex { entries: self.entries[..len.min(self.entries.len())].to_vec() }
    }

    pub fn extend(&self, invocation: InvocationSignature, count: u32) -> Result<Self, IndexError> {
        let mut entries = self.entries.clone();
        entries.push(DeiEntry::new(invocation, count)?);
        Ok(DistributedExecutionIndex { entries })
    }

    pub fn is_prefix_of(&self, full: &Self) -> bool {
        self.entries.len() <= full.entries.len() && full.entries[..self.entries.len()] == self.entries[..]
    }

    pub fn is_strict_prefix_of(&self, full: &Self) -> bool {
        self.entries.len() < full.entries.len() && self.is_prefix_of(full)
    }

    /// Replaces `from` (a prefix of `self`) with `to`.
    pub fn replace_prefix(&self, from: &Self, to: &Self) -> Option<Self> {
        if !from.is_prefix_of(self) {
            return None;
        }
        let mut entries = to.entries.clone();
        entries.extend_from_slice(&self.entries[from.entries.len()..]);
        Some(DistributedExecutionIndex { entries })
    }

    pub fn encode(&self) -> String {
        wire::encode(self)
    }
}

pub fn extend(dei: &Dei, invocation: InvocationSignature, count: u32) -> Result<Dei, IndexError> {
    dei.extend(invocation, count)
}

pub fn is_prefix(candidate: &Dei, full: &Dei) -> bool {
    candidate.is_prefix_of(full)
}

impl fmt::Debug for DistributedExecutionIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// `[B.echo(Hello)^3,10|1 :: C.echo(Hello)^29|1]`
impl fmt::Display for DistributedExecutionIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, e) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(" :: ")?;
            }
            write!(f, "{e}")?;
        }
        f.write_str("]")
    }
}

impl Serialize for DistributedExecutionIndex {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.encode())
    }
}

impl<'de> Deserialize<'de> for DistributedExecutionIndex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        wire::decode(&s).map_err(serde::de::Error::custom)
    }
}

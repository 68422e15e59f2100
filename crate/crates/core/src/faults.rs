//! Fault specifications, fault plans and per-signature fault catalogs.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::index::{canonical_bytes, Dei, Signature};

/// A fault raised at the caller's call site. Without `response` the call
/// fails with an error named `name`; with it, the call returns that value
/// instead (an error-code style response).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FaultSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<Value>,
}

impl FaultSpec {
    pub fn error(name: impl Into<String>) -> Self {
        FaultSpec { name: name.into(), response: None }
    }

    pub fn connection_error() -> Self {
        Self::error("connection-error")
    }

    pub fn outcome(&self) -> Outcome {
        match &self.response {
            Some(v) => Outcome::Response(v.clone()),
            None => Outcome::Error(self.name.clone()),
        }
    }

    fn cmp_key(&self) -> (&str, Option<Vec<u8>>) {
        (&self.name, self.response.as_ref().map(canonical_bytes))
    }
}

impl PartialEq for FaultSpec {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_key() == other.cmp_key()
    }
}

impl Eq for FaultSpec {}

impl Hash for FaultSpec {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.cmp_key().hash(state)
    }
}

impl PartialOrd for FaultSpec {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FaultSpec {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cmp_key().cmp(&other.cmp_key())
    }
}

/// What a caller observes from one RPC, or what the entry request returned.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Response(Value),
    Error(String),
}

impl Outcome {
    pub fn is_error(&self) -> bool {
        matches!(self, Outcome::Error(_))
    }

    fn cmp_key(&self) -> (u8, Vec<u8>) {
        match self {
            Outcome::Response(v) => (0, canonical_bytes(v)),
            Outcome::Error(e) => (1, e.as_bytes().to_vec()),
        }
    }
}

impl PartialEq for Outcome {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_key() == other.cmp_key()
    }
}

impl Eq for Outcome {}

impl Hash for Outcome {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.cmp_key().hash(state)
    }
}

impl PartialOrd for Outcome {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Outcome {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cmp_key().cmp(&other.cmp_key())
    }
}

/// Faults to inject in one execution, keyed by identifier under the active
/// instantiation config.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FaultPlan {
    injections: BTreeMap<Dei, FaultSpec>,
}

impl FaultPlan {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.injections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.injections.is_empty()
    }

    pub fn get(&self, key: &Dei) -> Option<&FaultSpec> {
        self.injections.get(key)
    }

    pub fn contains(&self, key: &Dei) -> bool {
        self.injections.contains_key(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Dei, &FaultSpec)> {
        self.injections.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &Dei> {
        self.injections.keys()
    }

    pub fn with(&self, key: Dei, fault: FaultSpec) -> Self {
        let mut p = self.clone();
        p.injections.insert(key, fault);
        p
    }

    pub fn without(&self, key: &Dei) -> Self {
        let mut p = self.clone();
        p.injections.remove(key);
        p
    }

    pub fn insert(&mut self, key: Dei, fault: FaultSpec) {
        self.injections.insert(key, fault);
    }
}

impl FromIterator<(Dei, FaultSpec)> for FaultPlan {
    fn from_iter<I: IntoIterator<Item = (Dei, FaultSpec)>>(iter: I) -> Self {
        FaultPlan { injections: iter.into_iter().collect() }
    }
}

#[derive(Serialize, Deserialize)]
struct PlanItem {
    dei: Dei,
    #[serde(default, skip_deserializing)]
    display: String,
    fault: FaultSpec,
}

impl Serialize for FaultPlan {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let items: Vec<PlanItem> = self
            .injections
            .iter()
            .map(|(d, f)| PlanItem { dei: d.clone(), display: d.to_string(), fault: f.clone() })
            .collect();
        items.serialize(s)
    }
}

impl<'de> Deserialize<'de> for FaultPlan {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let items = Vec::<PlanItem>::deserialize(d)?;
        Ok(items.into_iter().map(|i| (i.dei, i.fault)).collect())
    }
}

/// Applicable faults per RPC signature.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultCatalog {
    entries: BTreeMap<String, Vec<FaultSpec>>,
}

impl FaultCatalog {
    fn key(sig: &Signature) -> String {
        sig.qualified_name()
    }

    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, sig: &Signature, faults: Vec<FaultSpec>) {
        self.entries.insert(Self::key(sig), faults);
    }

    /// Sets faults by `service.method` name.
    pub fn insert_named(&mut self, name: &str, faults: Vec<FaultSpec>) {
        self.entries.insert(name.to_string(), faults);
    }

    pub fn faults_for(&self, sig: &Signature) -> &[FaultSpec] {
        self.entries.get(&Self::key(sig)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn fault_outcomes() {
        assert_eq!(FaultSpec::connection_error().outcome(), Outcome::Error("connection-error".into()));
        let shaped = FaultSpec { name: "unavailable".into(), response: Some(json!({"status": 503})) };
        assert_eq!(shaped.outcome(), Outcome::Response(json!({"status": 503.0})));
    }

    #[test]
    fn plan_identity_ignores_insertion_order() {
        use crate::index::{CallStackDigest, InvocationPayload, InvocationSignature};
        let inv = |m: &str| {
            let sig = Signature::new("B", m, vec![]).unwrap();
            InvocationSignature::new(sig, InvocationPayload::empty(), CallStackDigest::empty()).unwrap()
        };
        let a = Dei::root().extend(inv("a"), 1).unwrap();
        let b = Dei::root().extend(inv("b"), 1).unwrap();
        let f = FaultSpec::connection_error();
        let p1 = FaultPlan::empty().with(a.clone(), f.clone()).with(b.clone(), f.clone());
        let p2 = FaultPlan::empty().with(b, f.clone()).with(a, f);
        assert_eq!(p1, p2);
        let text = serde_json::to_string(&p1).unwrap();
        let back: FaultPlan = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p1);
    }
}

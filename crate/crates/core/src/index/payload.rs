use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::digest::{Digest, DigestWriter};

/// One named argument. `value` is kept in canonical form so that equal
/// logical values always serialize to the same bytes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Argument {
    pub name: String,
    pub value: Value,
}

/// Ordered argument list of one invocation.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationPayload {
    pub arguments: Vec<Argument>,
}

impl InvocationPayload {
    pub fn empty() -> Self {
        InvocationPayload::default()
    }

    pub fn new<I, S>(args: I) -> Self
    where
        I: IntoIterator<Item = (S, Value)>,
        S: Into<String>,
    {
        InvocationPayload {
            arguments: args
                .into_iter()
                .map(|(name, v)| Argument { name: name.into(), value: canonicalize(&v) })
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.arguments.is_empty()
    }

    pub fn digest(&self) -> Digest {
        let mut w = DigestWriter::new("payload");
        w.field(&(self.arguments.len() as u64).to_le_bytes());
        for a in &self.arguments {
            w.field(a.name.as_bytes()).field(&canonical_bytes(&a.value));
        }
        w.finish()
    }
}

impl fmt::Display for InvocationPayload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.arguments.is_empty() {
            return f.write_str("null");
        }
        for (i, a) in self.arguments.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            match &a.value {
                Value::String(s) => f.write_str(s)?,
                v => write!(f, "{v}")?,
            }
        }
        Ok(())
    }
}

/// Normalizes numbers: integral floats become integers, so `1` and `1.0`
/// are the same argument.
pub fn canonicalize(v: &Value) -> Value {
    match v {
        Value::Number(n) => {
            if n.is_f64() {
                let f = n.as_f64().unwrap_or(0.0);
                if f.fract() == 0.0 && f.abs() < 9.0e15 {
                    return Value::from(f as i64);
                }
            }
            Value::Number(n.clone())
        }
        Value::Array(xs) => Value::Array(xs.iter().map(canonicalize).collect()),
        Value::Object(m) => Value::Object(m.iter().map(|(k, v)| (k.clone(), canonicalize(v))).collect()),
        other => other.clone(),
    }
}

/// Canonical byte form: compact JSON with object keys sorted.
pub fn canonical_bytes(v: &Value) -> Vec<u8> {
    let mut out = Vec::new();
    write_canonical(&canonicalize(v), &mut out);
    out
}

fn write_canonical(v: &Value, out: &mut Vec<u8>) {
    match v {
        Value::Array(xs) => {
            out.push(b'[');
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_canonical(x, out);
            }
            out.push(b']');
        }
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            out.push(b'{');
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                out.extend(serde_json::to_vec(k).expect("string serializes"));
                out.push(b':');
                write_canonical(&m[*k], out);
            }
            out.push(b'}');
        }
        scalar => out.extend(serde_json::to_vec(scalar).expect("scalar serializes")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn integral_floats_match_integers() {
        assert_eq!(canonical_bytes(&json!(1.0)), canonical_bytes(&json!(1)));
        assert_ne!(canonical_bytes(&json!(1.5)), canonical_bytes(&json!(1)));
    }

    #[test]
    fn key_order_is_irrelevant() {
        let a: Value = serde_json::from_str(r#"{"b":1,"a":[2,{"d":0,"c":1}]}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"a":[2,{"c":1,"d":0}],"b":1}"#).unwrap();
        assert_eq!(canonical_bytes(&a), canonical_bytes(&b));
        assert_eq!(canonical_bytes(&a), br#"{"a":[2,{"c":1,"d":0}],"b":1}"#.to_vec());
    }

    #[test]
    fn digest_tracks_names_and_values() {
        let p = InvocationPayload::new([("s", json!("Hello"))]);
        assert_eq!(p.digest(), InvocationPayload::new([("s", json!("Hello"))]).digest());
        assert_ne!(p.digest(), InvocationPayload::new([("s", json!("World"))]).digest());
        assert_ne!(p.digest(), InvocationPayload::new([("t", json!("Hello"))]).digest());
        assert_ne!(p.digest(), InvocationPayload::empty().digest());
    }
}

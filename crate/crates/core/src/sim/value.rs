use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde_json::Value;

use super::engine::{FutureCell, StreamHandle};

/// Interpreter value. Futures and streams are handles and can't leave the
/// service that created them.
#[derive(Clone)]
pub enum Val {
    Json(Value),
    List(Vec<Val>),
    Map(BTreeMap<String, Val>),
    Future(Arc<FutureCell>),
    Stream(Arc<StreamHandle>),
}

impl Val {
    pub fn null() -> Val {
        Val::Json(Value::Null)
    }

    pub fn to_json(&self) -> Option<Value> {
        Some(match self {
            Val::Json(v) => v.clone(),
            Val::List(xs) => Value::Array(xs.iter().map(Val::to_json).collect::<Option<_>>()?),
            Val::Map(m) => {
                Value::Object(m.iter().map(|(k, v)| Some((k.clone(), v.to_json()?))).collect::<Option<_>>()?)
            }
            Val::Future(_) | Val::Stream(_) => return None,
        })
    }

    pub fn items(&self) -> Option<Vec<Val>> {
        match self {
            Val::List(xs) => Some(xs.clone()),
            Val::Json(Value::Array(xs)) => Some(xs.iter().cloned().map(Val::Json).collect()),
            _ => None,
        }
    }

    pub fn truthy(&self) -> bool {
        match self {
            Val::Json(Value::Null) | Val::Json(Value::Bool(false)) => false,
            Val::Json(Value::String(s)) => !s.is_empty(),
            Val::Json(Value::Number(n)) => n.as_f64() != Some(0.0),
            Val::Json(Value::Array(xs)) => !xs.is_empty(),
            Val::List(xs) => !xs.is_empty(),
            _ => true,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Val::Json(Value::Number(n)) => n.as_i64().or_else(|| n.as_f64().map(|f| f as i64)),
            _ => None,
        }
    }
}

impl From<Value> for Val {
    fn from(v: Value) -> Self {
        Val::Json(v)
    }
}

/// Strings print bare; everything else prints as JSON.
impl fmt::Display for Val {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Val::Json(Value::String(s)) => f.write_str(s),
            Val::Future(_) => f.write_str("<future>"),
            Val::Stream(_) => f.write_str("<stream>"),
            other => match other.to_json() {
                Some(v) => write!(f, "{v}"),
                None => f.write_str("<handle>"),
            },
        }
    }
}

//! Declarative service programs.
//!
//! Statements and expressions are externally tagged JSON objects, e.g.
//! `{"call": {"service": "B", "method": "echo", "args": {"s": {"var": "s"}}, "line": 10, "bind": "r"}}`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::SimError;
use crate::index::{Param, Signature};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppSpec {
    pub services: Vec<ServiceProgram>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceProgram {
    pub name: String,
    /// File name used in synthetic frame locations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub endpoints: BTreeMap<String, Function>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub helpers: BTreeMap<String, Function>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Function {
    #[serde(default)]
    pub params: Vec<Param>,
    pub body: Vec<Stmt>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallStmt {
    pub service: String,
    pub method: String,
    #[serde(default)]
    pub args: BTreeMap<String, Expr>,
    pub line: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bind: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HelperStmt {
    pub name: String,
    #[serde(default)]
    pub args: BTreeMap<String, Expr>,
    pub line: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bind: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SendStmt {
    pub stream: Expr,
    #[serde(default)]
    pub args: BTreeMap<String, Expr>,
    pub line: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bind: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Stmt {
    Let {
        var: String,
        value: Expr,
    },
    Call(CallStmt),
    Helper(HelperStmt),
    For {
        var: String,
        #[serde(rename = "in")]
        iter: Expr,
        body: Vec<Stmt>,
    },
    While {
        cond: Expr,
        body: Vec<Stmt>,
    },
    Break,
    If {
        cond: Expr,
        then: Vec<Stmt>,
        #[serde(default, rename = "else")]
        otherwise: Vec<Stmt>,
    },
    Try {
        body: Vec<Stmt>,
        catch: Vec<Stmt>,
        #[serde(default)]
        bind_error: Option<String>,
    },
    Spawn {
        bind: String,
        body: Vec<Stmt>,
    },
    AwaitAll {
        futures: Expr,
        #[serde(default)]
        bind: Option<String>,
    },
    Append {
        list: String,
        value: Expr,
    },
    SetIndex {
        list: String,
        index: Expr,
        value: Expr,
    },
    OpenStream {
        service: String,
        method: String,
        line: u32,
        bind: String,
    },
    Send(SendStmt),
    CloseStream {
        stream: Expr,
    },
    Return(Expr),
    Fail {
        error: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Expr {
    Lit(Value),
    Var(String),
    List(Vec<Expr>),
    Map(BTreeMap<String, Expr>),
    /// String concatenation of the operands' display forms.
    Concat(Vec<Expr>),
    Join {
        list: Box<Expr>,
        sep: String,
    },
    Get {
        from: Box<Expr>,
        key: Box<Expr>,
    },
    Len(Box<Expr>),
    /// `[0, n)`
    Range(Box<Expr>),
    Eq(Vec<Expr>),
    Not(Box<Expr>),
    Add(Vec<Expr>),
}

/// A validated application: services by name and endpoint signatures.
#[derive(Clone, Debug)]
pub struct App {
    spec: AppSpec,
    services: HashMap<String, usize>,
}

impl App {
    pub fn new(spec: AppSpec) -> Result<App, SimError> {
        let mut services = HashMap::new();
        for (i, s) in spec.services.iter().enumerate() {
            if s.name.is_empty() {
                return Err(SimError::InvalidProgram("service with empty name".into()));
            }
            if services.insert(s.name.clone(), i).is_some() {
                return Err(SimError::InvalidProgram(format!("duplicate service `{}`", s.name)));
            }
        }
        let app = App { spec, services };
        app.validate()?;
        Ok(app)
    }

    pub fn from_json(text: &str) -> Result<App, SimError> {
        let spec: AppSpec = serde_json::from_str(text).map_err(|e| SimError::InvalidProgram(e.to_string()))?;
        App::new(spec)
    }

    pub fn spec(&self) -> &AppSpec {
        &self.spec
    }

    pub fn service(&self, name: &str) -> Option<&ServiceProgram> {
        self.services.get(name).map(|&i| &self.spec.services[i])
    }

    pub fn services(&self) -> impl Iterator<Item = &ServiceProgram> {
        self.spec.services.iter()
    }

    pub fn endpoint(&self, service: &str, method: &str) -> Result<&Function, SimError> {
        self.service(service)
            .and_then(|s| s.endpoints.get(method))
            .ok_or_else(|| SimError::UnknownEndpoint(format!("{service}.{method}")))
    }

    pub fn signature(&self, service: &str, method: &str) -> Result<Signature, SimError> {
        let f = self.endpoint(service, method)?;
        Signature::new(service, method, f.params.clone()).map_err(|e| SimError::InvalidProgram(e.to_string()))
    }

    pub fn signatures(&self) -> Vec<Signature> {
        let mut out = Vec::new();
        for s in &self.spec.services {
            for m in s.endpoints.keys() {
                if let Ok(sig) = self.signature(&s.name, m) {
                    out.push(sig);
                }
            }
        }
        out
    }

    pub fn source_file(&self, service: &str) -> String {
        self.service(service).and_then(|s| s.source.clone()).unwrap_or_else(|| format!("{service}.svc"))
    }

    /// Number of static statements that issue RPCs (calls and stream sends).
    pub fn rpc_sites(&self) -> usize {
        fn count(body: &[Stmt]) -> usize {
            body.iter()
                .map(|s| match s {
                    Stmt::Call(_) | Stmt::Send(_) => 1,
                    Stmt::For { body, .. } | Stmt::While { body, .. } | Stmt::Spawn { body, .. } => count(body),
                    Stmt::If { then, otherwise, .. } => count(then) + count(otherwise),
                    Stmt::Try { body, catch, .. } => count(body) + count(catch),
                    _ => 0,
                })
                .sum()
        }
        self.spec
            .services
            .iter()
            .flat_map(|s| s.endpoints.values().chain(s.helpers.values()))
            .map(|f| count(&f.body))
            .sum()
    }

    fn validate(&self) -> Result<(), SimError> {
        for s in &self.spec.services {
            for (name, f) in s.endpoints.iter().chain(s.helpers.iter()) {
                let ctx = format!("{}.{}", s.name, name);
                let mut seen = BTreeSet::new();
                for p in &f.params {
                    if p.name.is_empty() || p.type_name.is_empty() || !seen.insert(&p.name) {
                        return Err(SimError::InvalidProgram(format!("{ctx}: bad parameter list")));
                    }
                }
                if name.is_empty() {
                    return Err(SimError::InvalidProgram(format!("{}: empty function name", s.name)));
                }
                self.validate_body(s, &ctx, &f.body, false)?;
            }
        }
        Ok(())
    }

    fn check_args(
        &self,
        ctx: &str,
        target: &str,
        params: &[Param],
        args: &BTreeMap<String, Expr>,
    ) -> Result<(), SimError> {
        let want: BTreeSet<&str> = params.iter().map(|p| p.name.as_str()).collect();
        let got: BTreeSet<&str> = args.keys().map(String::as_str).collect();
        if want != got {
            return Err(SimError::InvalidProgram(format!(
                "{ctx}: arguments {got:?} do not match parameters {want:?} of {target}"
            )));
        }
        Ok(())
    }

    fn validate_body(&self, svc: &ServiceProgram, ctx: &str, body: &[Stmt], in_loop: bool) -> Result<(), SimError> {
        let bad_line = |line: u32| -> Result<(), SimError> {
            if line == 0 {
                return Err(SimError::InvalidProgram(format!("{ctx}: line numbers start at 1")));
            }
            Ok(())
        };
        for st in body {
            match st {
                Stmt::Call(c) => {
                    bad_line(c.line)?;
                    let f = self.endpoint(&c.service, &c.method).map_err(|_| {
                        SimError::InvalidProgram(format!("{ctx}: call to unknown endpoint {}.{}", c.service, c.method))
                    })?;
                    self.check_args(ctx, &format!("{}.{}", c.service, c.method), &f.params, &c.args)?;
                }
                Stmt::Helper(h) => {
                    bad_line(h.line)?;
                    let f = svc
                        .helpers
                        .get(&h.name)
                        .ok_or_else(|| SimError::InvalidProgram(format!("{ctx}: unknown helper `{}`", h.name)))?;
                    self.check_args(ctx, &h.name, &f.params, &h.args)?;
                }
                Stmt::OpenStream { service, method, line, .. } => {
                    bad_line(*line)?;
                    self.endpoint(service, method).map_err(|_| {
                        SimError::InvalidProgram(format!("{ctx}: stream to unknown endpoint {service}.{method}"))
                    })?;
                }
                Stmt::Send(s) => bad_line(s.line)?,
                Stmt::Break if !in_loop => {
                    return Err(SimError::InvalidProgram(format!("{ctx}: break outside of a loop")));
                }
                Stmt::For { body, .. } | Stmt::While { body, .. } => self.validate_body(svc, ctx, body, true)?,
                Stmt::Spawn { body, .. } => self.validate_body(svc, ctx, body, false)?,
                Stmt::If { then, otherwise, .. } => {
                    self.validate_body(svc, ctx, then, in_loop)?;
                    self.validate_body(svc, ctx, otherwise, in_loop)?;
                }
                Stmt::Try { body, catch, .. } => {
                    self.validate_body(svc, ctx, body, in_loop)?;
                    self.validate_body(svc, ctx, catch, in_loop)?;
                }
                _ => {}
            }
        }
        Ok(())
    }
}

use std::fmt;

use serde::{Deserialize, Serialize};

use super::digest::{Digest, DigestWriter};
use super::IndexError;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    #[serde(rename = "type")]
    pub type_name: String,
}

impl Param {
    pub fn new(name: impl Into<String>, type_name: impl Into<String>) -> Self {
        Param { name: name.into(), type_name: type_name.into() }
    }
}

/// Static identity of an RPC method: the target module, the method, and
/// its ordered parameter list.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Signature {
    pub module_name: String,
    pub method_name: String,
    pub parameters: Vec<Param>,
}

impl Signature {
    pub fn new(
        module_name: impl Into<String>,
        method_name: impl Into<String>,
        parameters: Vec<Param>,
    ) -> Result<Self, IndexError> {
        let sig = Signature { module_name: module_name.into(), method_name: method_name.into(), parameters };
        sig.validate()?;
        Ok(sig)
    }

    pub fn validate(&self) -> Result<(), IndexError> {
        if self.module_name.is_empty() {
            return Err(IndexError::MalformedSignature("empty module name".into()));
        }
        if self.method_name.is_empty() {
            return Err(IndexError::MalformedSignature(format!("empty method name in module {}", self.module_name)));
        }
        for p in &self.parameters {
            if p.name.is_empty() || p.type_name.is_empty() {
                return Err(IndexError::MalformedSignature(format!(
                    "parameter with empty name or type in {}.{}",
                    self.module_name, self.method_name
                )));
            }
        }
        Ok(())
    }

    /// `service.method`, without parameters.
    pub fn qualified_name(&self) -> String {
        format!("{}.{}", self.module_name, self.method_name)
    }

    pub fn digest(&self) -> Digest {
        let mut w = DigestWriter::new("signature");
        w.field(self.module_name.as_bytes()).field(self.method_name.as_bytes());
        w.field(&(self.parameters.len() as u64).to_le_bytes());
        for p in &self.parameters {
            w.field(p.name.as_bytes()).field(p.type_name.as_bytes());
        }
        w.finish()
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}(", self.module_name, self.method_name)?;
        for (i, p) in self.parameters.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}: {}", p.name, p.type_name)?;
        }
        f.write_str(")")
    }
}

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use super::digest::Digest;
use super::payload::InvocationPayload;
use super::signature::Signature;
use super::stack::CallStackDigest;
use super::IndexError;

/// Full values behind an invocation signature. Kept for reporting only;
/// identity is carried by the digests.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InvocationDetail {
    pub signature: Signature,
    pub payload: InvocationPayload,
    pub callstack: CallStackDigest,
}

/// Identity of one dynamic invocation: signature, payload and call stack.
///
/// Equality and hashing are component-wise over the three digests. A value
/// decoded from the wire has no `detail` but compares equal to the
/// original.
#[derive(Clone)]
pub struct InvocationSignature {
    pub signature: Digest,
    pub payload: Digest,
    pub callstack: Digest,
    detail: Option<Arc<InvocationDetail>>,
}

impl InvocationSignature {
    pub fn new(
        signature: Signature,
        payload: InvocationPayload,
        callstack: CallStackDigest,
    ) -> Result<Self, IndexError> {
        signature.validate()?;
        if payload.arguments.len() != signature.parameters.len() {
            return Err(IndexError::ArityMismatch {
                signature: signature.to_string(),
                expected: signature.parameters.len(),
                got: payload.arguments.len(),
            });
        }
        for (p, a) in signature.parameters.iter().zip(&payload.arguments) {
            if p.name != a.name {
                return Err(IndexError::ArgumentOrder {
                    signature: signature.to_string(),
                    expected: p.name.clone(),
                    got: a.name.clone(),
                });
            }
        }
        Ok(Self::unchecked(signature, payload, callstack))
    }

    /// Builds a signature without checking the payload against the
    /// parameter list. Used for masked and preliminary signatures, whose
    /// payload is empty by construction.
    pub fn unchecked(signature: Signature, payload: InvocationPayload, callstack: CallStackDigest) -> Self {
        InvocationSignature {
            signature: signature.digest(),
            payload: payload.digest(),
            callstack: callstack.digest,
            detail: Some(Arc::new(InvocationDetail { signature, payload, callstack })),
        }
    }

    pub fn from_digests(signature: Digest, payload: Digest, callstack: Digest) -> Self {
        InvocationSignature { signature, payload, callstack, detail: None }
    }

    pub fn detail(&self) -> Option<&InvocationDetail> {
        self.detail.as_deref()
    }

    pub fn detail_arc(&self) -> Option<Arc<InvocationDetail>> {
        self.detail.clone()
    }

    /// Attaches full values whose digests match. Returns false (and leaves
    /// `self` untouched) on a mismatch.
    pub fn attach(&mut self, detail: Arc<InvocationDetail>) -> bool {
        let ok = detail.signature.digest() == self.signature
            && detail.payload.digest() == self.payload
            && detail.callstack.digest == self.callstack;
        if ok {
            self.detail = Some(detail);
        }
        ok
    }

    pub fn key(&self) -> (Digest, Digest, Digest) {
        (self.signature, self.payload, self.callstack)
    }

    /// Replaces the payload and/or call stack with their empty values.
    pub fn masked(&self, keep_payload: bool, keep_callstack: bool) -> Self {
        if keep_payload && keep_callstack {
            return self.clone();
        }
        let payload = if keep_payload { self.payload } else { InvocationPayload::empty().digest() };
        let callstack = if keep_callstack { self.callstack } else { CallStackDigest::empty().digest };
        let detail = self.detail.as_ref().map(|d| {
            Arc::new(InvocationDetail {
                signature: d.signature.clone(),
                payload: if keep_payload { d.payload.clone() } else { InvocationPayload::empty() },
                callstack: if keep_callstack { d.callstack.clone() } else { CallStackDigest::empty() },
            })
        });
        InvocationSignature { signature: self.signature, payload, callstack, detail }
    }
}

impl PartialEq for InvocationSignature {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for InvocationSignature {}

impl Hash for InvocationSignature {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key().hash(state)
    }
}

impl PartialOrd for InvocationSignature {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for InvocationSignature {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl fmt::Debug for InvocationSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// `B.echo(Hello)^3,10` when values are known, digests otherwise.
impl fmt::Display for InvocationSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.detail {
            Some(d) => {
                write!(f, "{}.{}({})^{}", d.signature.module_name, d.signature.method_name, d.payload, d.callstack)
            }
            None => write!(f, "<{}/{}/{}>", self.signature, self.payload, self.callstack),
        }
    }
}

//! Invocation identity: signatures, payloads, call stacks, and the
//! distributed execution index built from them.

mod config;
mod counter;
mod dei;
mod digest;
mod invocation;
mod payload;
mod signature;
mod stack;
pub mod wire;

pub use config::{project, InstantiationConfig};
pub use counter::CounterState;
pub use dei::{extend, is_prefix, Dei, DeiEntry, DistributedExecutionIndex};
pub use digest::Digest;
pub use invocation::{InvocationDetail, InvocationSignature};
pub use payload::{canonical_bytes, canonicalize, Argument, InvocationPayload};
pub use signature::{Param, Signature};
pub use stack::{CallStackDigest, DenyList, Frame};
pub use wire::{decode, encode, Metadata, INDEX_HEADER, PRELIMINARY_HEADER};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IndexError {
    #[error("malformed signature: {0}")]
    MalformedSignature(String),
    #[error("{signature} takes {expected} arguments, got {got}")]
    ArityMismatch { signature: String, expected: usize, got: usize },
    #[error("{signature}: expected argument `{expected}`, got `{got}`")]
    ArgumentOrder { signature: String, expected: String, got: String },
    #[error("invocation count must be at least 1")]
    ZeroCount,
    #[error("cannot decode index `{input}`: {reason}")]
    Decode { input: String, reason: String },
    #[error("unknown instantiation config `{0}`")]
    UnknownConfig(String),
}

/// Convenience constructor mirroring the component order of the identity.
pub fn make_invocation_signature(
    signature: Signature,
    payload: InvocationPayload,
    callstack: CallStackDigest,
) -> Result<InvocationSignature, IndexError> {
    InvocationSignature::new(signature, payload, callstack)
}

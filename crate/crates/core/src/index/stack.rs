use std::fmt;

use serde::{Deserialize, Serialize};

use super::digest::{Digest, DigestWriter};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Frame {
    pub source_location: String,
    pub symbol: String,
}

impl Frame {
    pub fn new(source_location: impl Into<String>, symbol: impl Into<String>) -> Self {
        Frame { source_location: source_location.into(), symbol: symbol.into() }
    }

    /// Line number parsed from a `file:line` location.
    pub fn line(&self) -> Option<u32> {
        self.source_location.rsplit_once(':').and_then(|(_, l)| l.parse().ok())
    }
}

/// Symbol prefixes of frames that belong to the runtime rather than the
/// application. Those frames differ between schedules and must not leak
/// into identifiers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenyList {
    pub patterns: Vec<String>,
}

impl Default for DenyList {
    fn default() -> Self {
        DenyList {
            patterns: [
                "std::",
                "core::",
                "alloc::",
                "dexi::runtime::",
                "java.lang.",
                "java.util.concurrent.",
                "jdk.internal.",
                "kotlinx.coroutines.",
                "io.grpc.",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }
}

impl DenyList {
    pub fn none() -> Self {
        DenyList { patterns: Vec::new() }
    }

    pub fn denies(&self, frame: &Frame) -> bool {
        self.patterns.iter().any(|p| frame.symbol.starts_with(p.as_str()))
    }
}

/// Application frames (outermost first) leading to an invocation, plus
/// their digest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallStackDigest {
    pub frames: Vec<Frame>,
    pub digest: Digest,
}

impl CallStackDigest {
    pub fn capture(frames: &[Frame], deny: &DenyList) -> Self {
        let kept: Vec<Frame> = frames.iter().filter(|f| !deny.denies(f)).cloned().collect();
        Self::from_frames(kept)
    }

    pub fn empty() -> Self {
        Self::from_frames(Vec::new())
    }

    fn from_frames(frames: Vec<Frame>) -> Self {
        let mut w = DigestWriter::new("callstack");
        w.field(&(frames.len() as u64).to_le_bytes());
        for f in &frames {
            w.field(f.source_location.as_bytes()).field(f.symbol.as_bytes());
        }
        let digest = w.finish();
        CallStackDigest { frames, digest }
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn lines(&self) -> Vec<u32> {
        self.frames.iter().filter_map(Frame::line).collect()
    }
}

impl fmt::Display for CallStackDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lines: Vec<String> = self.lines().iter().map(|l| l.to_string()).collect();
        f.write_str(&lines.join(","))
    }
}

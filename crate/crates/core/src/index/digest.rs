use std::fmt;

use sha2::{Digest as _, Sha256};

/// 64-bit content digest, rendered as 16 lowercase hex digits on the wire.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub u64);

impl Digest {
    pub fn to_hex(self) -> String {
        format!("{:016x}", self.0)
    }

    pub fn from_hex(s: &str) -> Option<Digest> {
        if s.len() != 16 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
            return None;
        }
        u64::from_str_radix(s, 16).ok().map(Digest)
    }
}

impl serde::Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> serde::Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom(format!("malformed digest `{s}`")))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Accumulates length-prefixed fields so that field boundaries can't be
/// shifted to produce the same byte stream.
pub(crate) struct DigestWriter {
    hasher: Sha256,
}

impl DigestWriter {
    pub(crate) fn new(domain: &str) -> Self {
        let mut w = DigestWriter { hasher: Sha256::new() };
        w.field(domain.as_bytes());
        w
    }

    pub(crate) fn field(&mut self, bytes: &[u8]) -> &mut Self {
        self.hasher.update((bytes.len() as u64).to_le_bytes());
        self.hasher.update(bytes);
        self
    }

    pub(crate) fn finish(self) -> Digest {
        let out = self.hasher.finalize();
        let mut b = [0u8; 8];
        b.copy_from_slice(&out[..8]);
        Digest(u64::from_be_bytes(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_round_trip() {
        for v in [0u64, 1, 0xdead_beef, u64::MAX] {
            assert_eq!(Digest::from_hex(&Digest(v).to_hex()), Some(Digest(v)));
        }
        assert_eq!(Digest::from_hex("abc"), None);
        assert_eq!(Digest::from_hex("zzzzzzzzzzzzzzzz"), None);
    }

    #[test]
    fn framing_separates_fields() {
        let mut a = DigestWriter::new("t");
        a.field(b"ab").field(b"c");
        let mut b = DigestWriter::new("t");
        b.field(b"a").field(b"bc");
        assert_ne!(a.finish(), b.finish());
    }
}

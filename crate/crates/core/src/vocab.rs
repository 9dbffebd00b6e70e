//! Action and word vocabularies.
//!
//! Class `j` has id `j` for `0 <= j < C`; the protocol tokens follow:
//! `SOS = C`, `EOS = C + 1`, `PAD = C + 2`. Ground-truth sequences only ever
//! hold class ids and may contain immediate repeats.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};

pub type TokenId = usize;

pub const SOS_NAME: &str = "<sos>";
pub const EOS_NAME: &str = "<eos>";
pub const PAD_NAME: &str = "<pad>";

/// Ordered, duplicate-free list of token names plus the three reserved
/// protocol tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    index: BTreeMap<String, TokenId>,
}

/// Vocabulary over the `C` action classes.
pub type ActionVocabulary = Vocabulary;
/// Vocabulary over caption words.
pub type WordVocabulary = Vocabulary;

impl Vocabulary {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(invalid!("a vocabulary needs at least one entry"));
        }
        let mut index = BTreeMap::new();
        for (id, name) in names.iter().enumerate() {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(invalid!("vocabulary entry {id} ({name:?}) is empty or contains whitespace"));
            }
            if [SOS_NAME, EOS_NAME, PAD_NAME].contains(&name.as_str()) {
                return Err(invalid!("`{name}` is a reserved token"));
            }
            if index.insert(name.clone(), id).is_some() {
                return Err(invalid!("duplicate vocabulary entry `{name}`"));
            }
        }
        Ok(Self { names, index })
    }

    /// Number of regular entries `C`.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// `C + 3`: regular entries plus SOS, EOS and PAD.
    pub fn output_dim(&self) -> usize {
        self.names.len() + 3
    }

    pub fn sos(&self) -> TokenId {
        self.names.len()
    }

    pub fn eos(&self) -> TokenId {
        self.names.len() + 1
    }

    pub fn pad(&self) -> TokenId {
        self.names.len() + 2
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Result<TokenId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownToken(name.to_string()))
    }

    /// Name of any id, reserved tokens included.
    pub fn name(&self, id: TokenId) -> Result<&str> {
        let c = self.names.len();
        match id {
            _ if id < c => Ok(&self.names[id]),
            _ if id == c => Ok(SOS_NAME),
            _ if id == c + 1 => Ok(EOS_NAME),
            _ if id == c + 2 => Ok(PAD_NAME),
            _ => Err(invalid!("token id {id} out of range for vocabulary of {c}")),
        }
    }

    pub fn encode<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<TokenId>> {
        names.iter().map(|n| self.id(n.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<&str>> {
        ids.iter().map(|&id| self.name(id)).collect()
    }

    /// Checks that a ground-truth sequence only holds regular ids.
    pub fn check_sequence(&self, ids: &[TokenId]) -> Result<()> {
        match ids.iter().find(|&&id| id >= self.names.len()) {
            Some(id) => Err(invalid!(
                "token id {id} is not a regular entry of a vocabulary of {}",
                self.names.len()
            )),
            None => Ok(()),
        }
    }

    /// Stable 64-bit FNV-1a fingerprint of the ordered names.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for name in &self.names {
            for b in name.bytes().chain(core::iter::once(b'\n')) {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::{prop_assert_eq, proptest};

    fn actions() -> Vocabulary {
        Vocabulary::new(["walk", "sit", "open", "close"]).unwrap()
    }

    #[test]
    fn id_scheme() {
        let v = actions();
        assert_eq!(v.encode::<&str>(&[]).unwrap(), Vec::<usize>::new());
        assert_eq!(v.encode(&["walk"]).unwrap(), vec![0]);
        assert_eq!((v.sos(), v.eos(), v.pad()), (4, 5, 6));
        assert_eq!(v.name(5).unwrap(), EOS_NAME);
        assert!(v.name(7).is_err());
    }

    #[test]
    fn unknown_token_names_the_offender() {
        let err = actions().encode(&["walk", "fly"]).unwrap_err();
        assert_eq!(err, Error::UnknownToken("fly".into()));
    }

    #[test]
    fn construction_errors() {
        assert!(Vocabulary::new(Vec::<String>::new()).is_err());
        assert!(Vocabulary::new(["a", "a"]).is_err());
        assert!(Vocabulary::new(["a", "<eos>"]).is_err());
        assert!(Vocabulary::new(["a b"]).is_err());
    }

    #[test]
    fn check_sequence_rejects_protocol_tokens() {
        let v = actions();
        assert!(v.check_sequence(&[0, 3, 0]).is_ok());
        assert!(v.check_sequence(&[0, v.eos()]).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(ids in proptest::collection::vec(0usize..4, 0..30)) {
            let v = actions();
            let names = v.decode(&ids).unwrap();
            prop_assert_eq!(v.encode(&names).unwrap(), ids);
        }
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{MddError, Result};

/// Marker for a deleted phone in perceived (annotated) sequences.
pub const DELETION_MARKER: &str = "*del*";

const RESERVED: [&str; 4] = ["<blank>", "<sos>", "<eos>", DELETION_MARKER];

/// Canonical phone inventory plus the reserved recognizer symbols.
///
/// Index layout: `0` = blank, `1..=N` = phones, `N + 1` = eos, `N + 2` = sos.
/// The attention decoder scores `N + 1` outputs (phones and eos) and embeds
/// `N + 1` inputs (sos and phones); see [`PhoneVocab::output_index`] and
/// [`PhoneVocab::embed_index`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhoneVocab {
    symbols: Vec<String>,
}

impl PhoneVocab {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.is_empty() {
            return Err(MddError::Config("phone inventory is empty".into()));
        }
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(MddError::Config(format!("invalid phone symbol {s:?}")));
            }
            if RESERVED.contains(&s.as_str()) {
                return Err(MddError::Config(format!("{s} is a reserved symbol")));
            }
            if symbols[..i].contains(s) {
                return Err(MddError::Config(format!("duplicate phone symbol {s}")));
            }
        }
        Ok(PhoneVocab { symbols })
    }

    /// The 39-phone CMU dictionary inventory.
    pub fn cmu39() -> Self {
        PhoneVocab::new([
            "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH",
            "IH", "IY", "JH", "K", "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH",
            "UH", "UW", "V", "W", "Y", "Z", "ZH",
        ])
        .expect("static inventory is valid")
    }

    pub fn num_phones(&self) -> usize {
        self.symbols.len()
    }

    pub fn blank(&self) -> usize {
        0
    }

    pub fn eos(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn sos(&self) -> usize {
        self.symbols.len() + 2
    }

    pub fn is_phone(&self, id: usize) -> bool {
        (1..=self.symbols.len()).contains(&id)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol).map(|i| i + 1)
    }

    pub fn symbol(&self, id: usize) -> &str {
        match id {
            0 => "<blank>",
            i if self.is_phone(i) => &self.symbols[i - 1],
            i if i == self.eos() => "<eos>",
            i if i == self.sos() => "<sos>",
            _ => "<unk>",
        }
    }

    pub fn encode<S: AsRef<str>>(&self, phones: &[S]) -> Result<Vec<usize>> {
        phones
            .iter()
            .map(|p| {
                self.id(p.as_ref())
                    .ok_or_else(|| MddError::Input(format!("unknown phone {:?}", p.as_ref())))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.symbol(i).to_string()).collect()
    }

    /// Size of the attention decoder output layer (`N` phones + eos).
    pub fn output_size(&self) -> usize {
        self.symbols.len() + 1
    }

    /// Decoder output slot for a phone or eos.
    pub fn output_index(&self, id: usize) -> Option<usize> {
        if self.is_phone(id) {
            Some(id - 1)
        } else if id == self.eos() {
            Some(self.symbols.len())
        } else {
            None
        }
    }

    /// Inverse of [`PhoneVocab::output_index`].
    pub fn output_symbol(&self, slot: usize) -> usize {
        if slot == self.symbols.len() {
            self.eos()
        } else {
            slot + 1
        }
    }

    /// Decoder embedding row for sos or a phone.
    pub fn embed_index(&self, id: usize) -> Option<usize> {
        if id == self.sos() {
            Some(0)
        } else if self.is_phone(id) {
            Some(id)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_layout() {
        let v = PhoneVocab::new(["a", "b"]).unwrap();
        assert_eq!((v.blank(), v.eos(), v.sos()), (0, 3, 4));
        assert_eq!(v.encode(&["b", "a"]).unwrap(), vec![2, 1]);
        assert_eq!(v.output_index(v.eos()), Some(2));
        assert_eq!(v.output_symbol(2), v.eos());
        assert_eq!(v.embed_index(v.sos()), Some(0));
        assert_eq!(v.embed_index(0), None);
    }

    #[test]
    fn rejects_duplicates_and_reserved() {
        assert!(PhoneVocab::new(["a", "a"]).is_err());
        assert!(PhoneVocab::new(["<eos>"]).is_err());
        assert!(PhoneVocab::new(Vec::<String>::new()).is_err());
        assert_eq!(PhoneVocab::cmu39().num_phones(), 39);
    }
}

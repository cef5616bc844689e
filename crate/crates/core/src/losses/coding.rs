use crate::error::{Error, Result};

/// Maps characters to class indices. Index 0 is the CTC blank and doubles as
/// the attention EOS and start symbol; characters take `1..=len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelCoding {
    alphabet: Vec<char>,
    max_len: usize,
}

impl LabelCoding {
    pub const BLANK: usize = 0;
    pub const EOS: usize = 0;

    pub fn new(alphabet: &str, max_len: usize) -> Result<Self> {
        let chars: Vec<char> = alphabet.chars().collect();
        if chars.is_empty() {
            return Err(Error::Config("alphabet is empty".into()));
        }
        for (i, c) in chars.iter().enumerate() {
            if chars[..i].contains(c) {
                return Err(Error::Config(format!("alphabet repeats `{c}`")));
            }
            if c.is_whitespace() || c.is_control() {
                return Err(Error::Config(format!(
                    "alphabet contains whitespace or control {c:?}"
                )));
            }
        }
        Ok(Self {
            alphabet: chars,
            max_len,
        })
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    /// Characters plus the blank/EOS index.
    pub fn classes(&self) -> usize {
        self.alphabet.len() + 1
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let out: Vec<usize> = text
            .chars()
            .map(|c| {
                self.alphabet
                    .iter()
                    .position(|&a| a == c)
                    .map(|i| i + 1)
                    .ok_or_else(|| Error::Label(text.into(), format!("`{c}` not in alphabet")))
            })
            .collect::<Result<_>>()?;
        if out.len() > self.max_len {
            return Err(Error::Label(
                text.into(),
                format!("length {} exceeds {}", out.len(), self.max_len),
            ));
        }
        Ok(out)
    }

    /// Encoded label followed by EOS.
    pub fn encode_with_eos(&self, text: &str) -> Result<Vec<usize>> {
        let mut v = self.encode(text)?;
        v.push(Self::EOS);
        Ok(v)
    }

    /// Inverse of [`encode`](Self::encode); blank and out-of-range indices
    /// are dropped.
    pub fn decode(&self, indices: &[usize]) -> String {
        indices
            .iter()
            .filter(|&&i| i != Self::BLANK)
            .filter_map(|&i| self.alphabet.get(i - 1))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let c = LabelCoding::new("abcdefghij", 26).unwrap();
        assert_eq!(c.classes(), 11);
        let e = c.encode("jab").unwrap();
        assert_eq!(e, vec![10, 1, 2]);
        assert_eq!(c.decode(&e), "jab");
        assert_eq!(c.encode_with_eos("a").unwrap(), vec![1, 0]);
    }

    #[test]
    fn rejects_unknown_and_long_labels() {
        let c = LabelCoding::new("abc", 2).unwrap();
        assert!(c.encode("abd").is_err());
        assert!(c.encode("abc").is_err());
        assert!(LabelCoding::new("aa", 2).is_err());
        assert!(LabelCoding::new("", 2).is_err());
    }
}

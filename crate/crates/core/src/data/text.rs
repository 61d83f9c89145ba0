use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PAD: usize = 0;
pub const UNKNOWN: usize = 1;
pub const SEQUENCE_LEN: usize = 128;
pub const MAX_WORDS: usize = 10_000;

/// Lowercased alphanumeric runs; HTML line breaks count as whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.replace("<br />", " ")
        .replace("<br/>", " ")
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Word ids: 0 is padding, 1 is unknown, then the most frequent training
/// words from 2 on, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    /// Words in id order starting at id 2.
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_words: usize) -> Self {
        let mut freq: HashMap<String, usize> = HashMap::new();
        for t in texts {
            for w in tokenize(t) {
                *freq.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_words);
        Self::from_words(ranked.into_iter().map(|(w, _)| w).collect())
    }

    pub fn from_words(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i + 2)).collect();
        Self { words, index }
    }

    /// Ids in use, including padding and unknown.
    pub fn size(&self) -> usize {
        self.words.len() + 2
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNKNOWN)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        id.checked_sub(2).and_then(|i| self.words.get(i)).map(String::as_str)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.words).expect("strings serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let words: Vec<String> = serde_json::from_str(s).map_err(|e| Error::Input(format!("vocab: {e}")))?;
        Ok(Self::from_words(words))
    }
}

/// Token ids `[batch × len]`, padded or truncated at the end.
pub fn tokenize_pad_len<S: AsRef<str>>(texts: &[S], vocab: &Vocab, len: usize) -> Result<Tensor> {
    let mut out = Vec::with_capacity(texts.len() * len);
    for t in texts {
        let ids: Vec<usize> = tokenize(t.as_ref()).iter().map(|w| vocab.id(w)).take(len).collect();
        out.extend(ids.iter().map(|&i| i as f32));
        out.extend(std::iter::repeat_n(PAD as f32, len - ids.len()));
    }
    Tensor::new(vec![texts.len(), len], out)
}

pub fn tokenize_pad<S: AsRef<str>>(texts: &[S], vocab: &Vocab) -> Result<Tensor> {
    tokenize_pad_len(texts, vocab, SEQUENCE_LEN)
}

/// Reviews under `dir/neg` (label 0) and `dir/pos` (label 1), one UTF-8
/// document per file, in file-name order.
pub fn load_sentiment_dir(dir: &Path) -> Result<(Vec<String>, Vec<f32>)> {
    let mut texts = Vec::new();
    let mut labels = Vec::new();
    for (label, sub) in [(0.0, "neg"), (1.0, "pos")] {
        let d = dir.join(sub);
        let mut files: Vec<_> = fs::read_dir(&d)
            .map_err(|e| Error::io(d.display().to_string(), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort_by_key(|p| {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            (stem.parse::<u64>().unwrap_or(u64::MAX), stem)
        });
        for f in files {
            texts.push(fs::read_to_string(&f).map_err(|e| Error::io(f.display().to_string(), e))?);
            labels.push(label);
        }
    }
    if texts.is_empty() {
        return Err(Error::Input(format!("no documents under {}", dir.display())));
    }
    Ok((texts, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(tokenize("Great movie!<br />Loved it, 10/10."), ["great", "movie", "loved", "it", "10", "10"]);
    }

    #[test]
    fn empty_text_is_all_padding() {
        let v = Vocab::from_words(vec![]);
        let t = tokenize_pad(&[""], &v).unwrap();
        assert_eq!(t.dims(), &[1, 128]);
        assert!(t.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hand_tokenized() {
        let v = Vocab::from_words(vec!["good".into(), "bad".into()]);
        let t = tokenize_pad(&["good good bad"], &v).unwrap();
        assert_eq!(&t.data()[..4], &[2.0, 2.0, 3.0, 0.0]);
        assert!(t.data()[3..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn long_text_keeps_head() {
        let words: Vec<String> = (0..130).map(|i| format!("w{i}")).collect();
        let v = Vocab::from_words(words.clone());
        let t = tokenize_pad(&[words.join(" ")], &v).unwrap();
        let want: Vec<f32> = (0..128).map(|i| (i + 2) as f32).collect();
        assert_eq!(t.data(), &want[..]);
    }

    #[test]
    fn vocab_order_and_limit() {
        let v = Vocab::build(["b a c a b a", "d"], 3);
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("b"), 3);
        assert_eq!(v.id("c"), 4);
        assert_eq!(v.id("d"), UNKNOWN);
        assert_eq!(v.size(), 5);
        assert_eq!(Vocab::from_json(&v.to_json()).unwrap(), v);
        assert_eq!(Vocab::build(["b a c a b a", "d"], 3), v);
    }

    #[test]
    fn sentiment_dir_labels() {
        let dir = tempfile::tempdir().unwrap();
        for (sub, name, body) in [("pos", "2.txt", "fine"), ("pos", "10.txt", "great"), ("neg", "1.txt", "awful")] {
            fs::create_dir_all(dir.path().join(sub)).unwrap();
            fs::write(dir.path().join(sub).join(name), body).unwrap();
        }
        let (texts, labels) = load_sentiment_dir(dir.path()).unwrap();
        assert_eq!(texts, ["awful", "fine", "great"]);
        assert_eq!(labels, [0.0, 1.0, 1.0]);
    }
}

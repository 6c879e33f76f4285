//! Dataset ingestion, vocabularies and padded batches.
//!
//! Dataset files are JSON lines, one sample per line:
//!
//! ```text
//! {"tokens": ["the", "soup", "was", "cold"], "aspect_span": [1, 2], "label": "negative",
//!  "postags": ["DET", "NOUN", "AUX", "ADJ"], "adjacency": [[...], ...], "id": "r14-17"}
//! ```
//!
//! `postags`, `adjacency` (dense `L x L`, non-negative) and `id` are optional.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// Sentiment class. Indices are fixed: positive 0, negative 1, neutral 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Negative, Polarity::Neutral];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown label {s:?}; allowed labels: positive, negative, neutral")))
    }
}

/// One sentence-aspect pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub tokens: Vec<String>,
    /// Half-open `[start, end)` token range of the aspect term.
    pub aspect_span: [usize; 2],
    pub label: Polarity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub postags: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjacency: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

/// Same layout as [`Sample`] but with the label kept as free text so that
/// unknown labels get a precise error.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSample {
    tokens: Vec<String>,
    aspect_span: [usize; 2],
    label: String,
    #[serde(default)]
    postags: Option<Vec<String>>,
    #[serde(default)]
    adjacency: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    id: Option<String>,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(Error::Data("sentence has no tokens".into()));
        }
        let [start, end] = self.aspect_span;
        if start >= end || end > n {
            return Err(Error::InvalidSpan { start, end, len: n });
        }
        if let Some(tags) = &self.postags {
            if tags.len() != n {
                return Err(Error::Data(format!("{} postags for {n} tokens", tags.len())));
            }
        }
        if let Some(adj) = &self.adjacency {
            if adj.len() != n || adj.iter().any(|r| r.len() != n) {
                return Err(Error::Data(format!("adjacency must be {n}x{n}")));
            }
            if adj.iter().flatten().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::Data("adjacency entries must be finite and >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Reads a JSON-lines dataset. Blank lines are skipped.
pub fn load_dataset(path: &Path) -> Result<Vec<Sample>> {
    let reader = BufReader::new(File::open(path)?);
    let display = path.display().to_string();
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: display.clone(),
            line: i + 1,
            msg,
        };
        let raw: RawSample = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let label = raw.label.parse::<Polarity>().map_err(|e| parse_err(e.to_string()))?;
        let sample = Sample {
            tokens: raw.tokens,
            aspect_span: raw.aspect_span,
            label,
            postags: raw.postags,
            adjacency: raw.adjacency,
            id: raw.id,
        };
        sample.validate().map_err(|e| parse_err(e.to_string()))?;
        samples.push(sample);
    }
    if samples.is_empty() {
        log::warn!("{display}: dataset is empty");
    } else {
        let h = label_histogram(&samples);
        log::info!(
            "{display}: {} samples (positive {}, negative {}, neutral {})",
            samples.len(),
            h[0],
            h[1],
            h[2]
        );
    }
    Ok(samples)
}

pub fn save_dataset(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Counts per class in index order.
pub fn label_histogram(samples: &[Sample]) -> [usize; 3] {
    let mut h = [0; 3];
    for s in samples {
        h[s.label.index()] += 1;
    }
    h
}

// ------------------------------------------------------------------ CoNLL-U

#[derive(Clone, Debug, PartialEq)]
pub struct ConlluToken {
    pub form: String,
    pub upos: String,
    /// 1-based head index; 0 is the root.
    pub head: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConlluSentence {
    pub tokens: Vec<ConlluToken>,
}

/// Parses CoNLL-U text. Comment lines, multiword ranges (`1-2`) and empty
/// nodes (`1.1`) are skipped; only ID, FORM, UPOS and HEAD are read.
pub fn parse_conllu(text: &str) -> Result<Vec<ConlluSentence>> {
    let mut sentences = Vec::new();
    let mut cur = ConlluSentence::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            if !cur.tokens.is_empty() {
                sentences.push(std::mem::take(&mut cur));
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let err = |msg: String| Error::Parse {
            path: "<conllu>".into(),
            line: i + 1,
            msg,
        };
        if cols.len() != 10 {
            return Err(err(format!("expected 10 tab-separated columns, got {}", cols.len())));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0].parse().map_err(|_| err(format!("bad ID {:?}", cols[0])))?;
        if id != cur.tokens.len() + 1 {
            return Err(err(format!("token ID {id} out of sequence")));
        }
        let head: usize = cols[6].parse().map_err(|_| err(format!("bad HEAD {:?}", cols[6])))?;
        cur.tokens.push(ConlluToken {
            form: cols[1].to_string(),
            upos: cols[3].to_string(),
            head,
        });
    }
    if !cur.tokens.is_empty() {
        sentences.push(cur);
    }
    Ok(sentences)
}

/// Symmetric 0/1 adjacency with an edge between each token and its head.
/// The root contributes no edge; self-loops are added later.
pub fn conllu_adjacency(sentence: &ConlluSentence) -> Result<Vec<Vec<f64>>> {
    let n = sentence.tokens.len();
    let mut adj = vec![vec![0.0; n]; n];
    for (i, tok) in sentence.tokens.iter().enumerate() {
        if tok.head > n {
            return Err(Error::Data(format!(
                "token {} has head {} but the sentence has {n} tokens",
                i + 1,
                tok.head
            )));
        }
        if tok.head == 0 {
            continue;
        }
        let h = tok.head - 1;
        adj[i][h] = 1.0;
        adj[h][i] = 1.0;
    }
    Ok(adj)
}

/// Fills missing adjacency and POS tags from parallel CoNLL-U sentences.
pub fn attach_conllu(samples: &mut [Sample], sentences: &[ConlluSentence]) -> Result<()> {
    if samples.len() != sentences.len() {
        return Err(Error::Data(format!(
            "{} samples but {} CoNLL-U sentences",
            samples.len(),
            sentences.len()
        )));
    }
    for (k, (s, c)) in samples.iter_mut().zip(sentences).enumerate() {
        if c.tokens.len() != s.tokens.len() {
            return Err(Error::Data(format!(
                "sample {k}: {} tokens vs {} in CoNLL-U",
                s.tokens.len(),
                c.tokens.len()
            )));
        }
        if s.adjacency.is_none() {
            s.adjacency = Some(conllu_adjacency(c)?);
        }
        if s.postags.is_none() {
            s.postags = Some(c.tokens.iter().map(|t| t.upos.clone()).collect());
        }
    }
    Ok(())
}

// --------------------------------------------------------------- vocabulary

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Token ↔ id map; 0 is padding, 1 is unknown.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        if tokens.len() < 2 {
            return Err(Error::Data("vocabulary must contain PAD and UNK".into()));
        }
        Ok(Self { tokens, index })
    }

    /// Ids by descending frequency, ties alphabetical.
    pub fn build<'a>(items: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in items {
            *counts.entry(t).or_default() += 1;
        }
        let mut ordered: Vec<(&str, usize)> = counts.into_iter().collect();
        ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = ["<pad>", "<unk>"]
            .into_iter()
            .map(String::from)
            .chain(ordered.into_iter().filter(|(t, _)| *t != "<pad>" && *t != "<unk>").map(|(t, _)| t.to_string()))
            .collect();
        Self::from_tokens(tokens).expect("unique by construction")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Word vocabulary over every sentence.
pub fn build_vocab(samples: &[Sample]) -> Vocab {
    Vocab::build(samples.iter().flat_map(|s| s.tokens.iter().map(String::as_str)))
}

/// POS vocabulary; samples without tags contribute nothing and map to UNK.
pub fn build_postag_vocab(samples: &[Sample]) -> Vocab {
    Vocab::build(samples.iter().filter_map(|s| s.postags.as_ref()).flatten().map(String::as_str))
}

// ------------------------------------------------------------------ batches

/// A sample mapped to ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub id: String,
    pub token_ids: Vec<usize>,
    pub postag_ids: Vec<usize>,
    pub aspect_span: [usize; 2],
    /// Raw (unnormalized) adjacency, `None` when the sample had none.
    pub adjacency: Option<Vec<f64>>,
    pub label: usize,
}

impl Encoded {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

pub fn encode(samples: &[Sample], words: &Vocab, tags: &Vocab) -> Vec<Encoded> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| Encoded {
            id: s.id.clone().unwrap_or_else(|| format!("#{i}")),
            token_ids: s.tokens.iter().map(|t| words.id(t)).collect(),
            postag_ids: match &s.postags {
                Some(tags_) => tags_.iter().map(|t| tags.id(t)).collect(),
                None => vec![UNK; s.len()],
            },
            aspect_span: s.aspect_span,
            adjacency: s.adjacency.as_ref().map(|a| a.concat()),
            label: s.label.index(),
        })
        .collect()
}

/// Padded mini-batch. Pad positions have token id 0, `pad_mask` false and
/// zero adjacency rows/columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    pub max_len: usize,
    pub lengths: Vec<usize>,
    /// `B x L_max`
    pub token_ids: Vec<Vec<usize>>,
    pub postag_ids: Vec<Vec<usize>>,
    /// 1-based positions, 0 on padding.
    pub position_ids: Vec<Vec<usize>>,
    pub pad_mask: Vec<Vec<bool>>,
    pub aspect_mask: Vec<Vec<bool>>,
    /// `B` dense `L_max x L_max` matrices.
    pub adjacency: Vec<Tensor<f64>>,
    /// Whether each sample supplied its own adjacency.
    pub has_adjacency: Vec<bool>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn from_samples(samples: &[&Encoded]) -> Self {
        let max_len = samples.iter().map(|s| s.len()).max().unwrap_or(1).max(1);
        let mut b = Batch {
            ids: Vec::new(),
            max_len,
            lengths: Vec::new(),
            token_ids: Vec::new(),
            postag_ids: Vec::new(),
            position_ids: Vec::new(),
            pad_mask: Vec::new(),
            aspect_mask: Vec::new(),
            adjacency: Vec::new(),
            has_adjacency: Vec::new(),
            labels: Vec::new(),
        };
        for s in samples {
            let n = s.len();
            let pad = |v: &[usize]| {
                let mut out = v.to_vec();
                out.resize(max_len, PAD);
                out
            };
            b.ids.push(s.id.clone());
            b.lengths.push(n);
            b.token_ids.push(pad(&s.token_ids));
            b.postag_ids.push(pad(&s.postag_ids));
            b.position_ids.push((0..max_len).map(|t| if t < n { t + 1 } else { 0 }).collect());
            b.pad_mask.push((0..max_len).map(|t| t < n).collect());
            b.aspect_mask
                .push((0..max_len).map(|t| t >= s.aspect_span[0] && t < s.aspect_span[1]).collect());
            let mut adj = vec![0.0; max_len * max_len];
            if let Some(raw) = &s.adjacency {
                for i in 0..n {
                    adj[i * max_len..i * max_len + n].copy_from_slice(&raw[i * n..(i + 1) * n]);
                }
            }
            b.adjacency.push(Tensor::new(vec![max_len, max_len], adj).expect("square"));
            b.has_adjacency.push(s.adjacency.is_some());
            b.labels.push(s.label);
        }
        b
    }
}

/// Splits samples into batches, shuffling with `rng` when given.
pub fn make_batches<R: Rng + ?Sized>(samples: &[Encoded], batch_size: usize, rng: Option<&mut R>) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    if let Some(rng) = rng {
        order.shuffle(rng);
    }
    Ok(order
        .chunks(batch_size)
        .map(|chunk| {
            let refs: Vec<&Encoded> = chunk.iter().map(|&i| &samples[i]).collect();
            Batch::from_samples(&refs)
        })
        .collect())
}

/// Plain-text word vectors: `token v1 … v_dim` per line. Returns
/// `(token, vector)` pairs for tokens present in `vocab`.
pub fn load_word_vectors(path: &Path, vocab: &Vocab, dim: usize) -> Result<Vec<(usize, Vec<f64>)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut found = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let id = vocab.id(token);
        if id == UNK && token != "<unk>" {
            continue;
        }
        let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        let values = values.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if values.len() != dim {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("expected {dim} values, got {}", values.len()),
            });
        }
        found.push((id, values));
    }
    Ok(found)
}

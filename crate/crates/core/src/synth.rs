//! Synthetic aspect/opinion dataset with a controllable distance between
//! the aspect and the word that carries its polarity.
//!
//! Each sentence holds one aspect token `asp*`, one opinion token
//! (`pos*`, `neg*` or `neu*`) placed `d` tokens before it, neutral filler
//! `w*` tokens, and optionally a distractor opinion of a different class
//! placed after the aspect. The generated adjacency links consecutive tokens
//! except that the true opinion is detached from its left neighbour and
//! attached to the aspect instead.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Polarity, Sample};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Number of distinct filler words.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub d_min: usize,
    pub d_max: usize,
    pub distractor_prob: f64,
    /// Opinion words per class.
    pub opinion_words: usize,
    pub aspect_words: usize,
    pub n: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            vocab_size: 50,
            min_len: 10,
            max_len: 24,
            d_min: 8,
            d_max: 15,
            distractor_prob: 0.5,
            opinion_words: 4,
            aspect_words: 4,
            n: 300,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.d_min == 0 || self.d_min > self.d_max {
            return bad(format!("need 1 <= d_min <= d_max, got [{}, {}]", self.d_min, self.d_max));
        }
        if self.d_max >= self.max_len {
            return bad(format!("d_max {} must be < max_len {}", self.d_max, self.max_len));
        }
        if self.min_len > self.max_len || self.min_len == 0 {
            return bad(format!("need 1 <= min_len <= max_len, got {}..{}", self.min_len, self.max_len));
        }
        if self.vocab_size == 0 || self.opinion_words == 0 || self.aspect_words == 0 {
            return bad("vocab_size, opinion_words and aspect_words must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.distractor_prob) {
            return bad(format!("distractor_prob {} outside [0, 1]", self.distractor_prob));
        }
        Ok(())
    }
}

fn opinion_prefix(p: Polarity) -> &'static str {
    match p {
        Polarity::Positive => "pos",
        Polarity::Negative => "neg",
        Polarity::Neutral => "neu",
    }
}

/// Class of an opinion token, `None` for any other token.
pub fn opinion_class(token: &str) -> Option<Polarity> {
    Polarity::ALL.into_iter().find(|&p| {
        token
            .strip_prefix(opinion_prefix(p))
            .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
    })
}

/// Recovers the label of a generated sentence: the class of the opinion
/// token preceding the aspect.
pub fn derive_label(sample: &Sample) -> Option<Polarity> {
    sample.tokens[..sample.aspect_span[0]].iter().rev().find_map(|t| opinion_class(t))
}

/// Distance between the aspect and the planted opinion.
pub fn planted_distance(sample: &Sample) -> Option<usize> {
    let a = sample.aspect_span[0];
    sample.tokens[..a]
        .iter()
        .rposition(|t| opinion_class(t).is_some())
        .map(|o| a - o)
}

const FILLER_TAGS: [&str; 4] = ["DET", "VERB", "NOUN", "ADP"];

pub fn synth_longrange_generate(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut labels: Vec<Polarity> = (0..cfg.n).map(|i| Polarity::ALL[i % 3]).collect();
    labels.shuffle(&mut rng);
    let mut out = Vec::with_capacity(cfg.n);
    for (i, &label) in labels.iter().enumerate() {
        let d = rng.gen_range(cfg.d_min..=cfg.d_max);
        let want_distractor = rng.gen_bool(cfg.distractor_prob);
        let base = d + 1;
        let need = if want_distractor { base + 2 } else { base };
        let lo = cfg.min_len.max(base);
        let len = rng.gen_range(lo..=cfg.max_len).max(need.min(cfg.max_len));
        let distractor = want_distractor && len >= base + 2;
        let tail = if distractor { 2 } else { 0 };
        let o = rng.gen_range(0..=len - 1 - d - tail);
        let a = o + d;

        let mut tokens = Vec::with_capacity(len);
        let mut tags = Vec::with_capacity(len);
        for _ in 0..len {
            let k = rng.gen_range(0..cfg.vocab_size);
            tokens.push(format!("w{k}"));
            tags.push(FILLER_TAGS[k % FILLER_TAGS.len()].to_string());
        }
        tokens[a] = format!("asp{}", rng.gen_range(0..cfg.aspect_words));
        tags[a] = "NOUN".into();
        tokens[o] = format!("{}{}", opinion_prefix(label), rng.gen_range(0..cfg.opinion_words));
        tags[o] = "ADJ".into();
        if distractor {
            let pos = rng.gen_range(a + 2..len);
            let others: Vec<Polarity> = Polarity::ALL.into_iter().filter(|&p| p != label).collect();
            let cls = *others.choose(&mut rng).expect("two other classes");
            tokens[pos] = format!("{}{}", opinion_prefix(cls), rng.gen_range(0..cfg.opinion_words));
            tags[pos] = "ADJ".into();
        }

        let mut adj = vec![vec![0.0; len]; len];
        let mut link = |x: usize, y: usize| {
            adj[x][y] = 1.0;
            adj[y][x] = 1.0;
        };
        for t in 1..len {
            if t != o {
                link(t - 1, t);
            }
        }
        link(o, a);

        out.push(Sample {
            tokens,
            aspect_span: [a, a + 1],
            label,
            postags: Some(tags),
            adjacency: Some(adj),
            id: Some(format!("synth-{}-{i}", cfg.seed)),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::label_histogram;

    fn cfg(d_min: usize, d_max: usize, n: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            d_min,
            d_max,
            n,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn short_range_control_is_adjacent() {
        for s in synth_longrange_generate(&cfg(1, 1, 60, 2)).unwrap() {
            assert_eq!(planted_distance(&s), Some(1));
            let a = s.aspect_span[0];
            assert!(opinion_class(&s.tokens[a - 1]).is_some());
        }
    }

    #[test]
    fn labels_balanced() {
        for seed in 0..5 {
            let h = label_histogram(&synth_longrange_generate(&cfg(8, 15, 300, seed)).unwrap());
            assert!(h.iter().all(|&c| (99..=101).contains(&c)), "{h:?}");
        }
    }

    #[test]
    fn label_is_function_of_planted_opinion() {
        let data = synth_longrange_generate(&cfg(8, 15, 500, 9)).unwrap();
        assert!(data.iter().all(|s| derive_label(s) == Some(s.label)));
        let with_distractor = data
            .iter()
            .filter(|s| s.tokens[s.aspect_span[1]..].iter().any(|t| opinion_class(t).is_some()))
            .count();
        assert!(with_distractor > 150, "{with_distractor}");
        for s in &data {
            s.validate().unwrap();
            for t in &s.tokens[s.aspect_span[1]..] {
                if let Some(c) = opinion_class(t) {
                    assert_ne!(c, s.label);
                }
            }
        }
    }

    #[test]
    fn adjacency_links_aspect_to_true_opinion_only() {
        for s in synth_longrange_generate(&cfg(8, 15, 200, 4)).unwrap() {
            let adj = s.adjacency.as_ref().unwrap();
            let a = s.aspect_span[0];
            let o = a - planted_distance(&s).unwrap();
            assert_eq!(adj[a][o], 1.0);
            assert_eq!(adj[o][a], 1.0);
            for (j, t) in s.tokens.iter().enumerate() {
                if j != o && opinion_class(t).is_some() {
                    assert_eq!(adj[a][j], 0.0);
                }
            }
        }
    }

    #[test]
    fn distance_histogram_is_uniform() {
        let data = synth_longrange_generate(&cfg(8, 15, 3000, 1)).unwrap();
        let mut counts = [0usize; 8];
        for s in &data {
            counts[planted_distance(s).unwrap() - 8] += 1;
        }
        let expected = 3000.0 / 8.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 7 degrees of freedom, 99.9% quantile
        assert!(chi2 < 24.32, "chi2 {chi2} counts {counts:?}");
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_longrange_generate(&cfg(8, 15, 50, 3)).unwrap();
        let b = synth_longrange_generate(&cfg(8, 15, 50, 3)).unwrap();
        let c = synth_longrange_generate(&cfg(8, 15, 50, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn infeasible_configs_rejected() {
        assert!(synth_longrange_generate(&cfg(8, 30, 10, 0)).is_err());
        assert!(synth_longrange_generate(&cfg(5, 3, 10, 0)).is_err());
        assert!(synth_longrange_generate(&cfg(0, 3, 10, 0)).is_err());
    }
}

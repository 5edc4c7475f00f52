//! Response parsing and vote aggregation.
//!
//! A response is first checked for a *uniform* answer: the trimmed text equals
//! `true` or `false`, ignoring case. Otherwise two extraction patterns are
//! scanned:
//!
//! ```text
//! Answer: (True|False)
//! The (requirement|statement) ("?.+?"?\s)?is (true|false)
//! ```
//!
//! Both are matched case-insensitively by default. When anything matches, the
//! last match in document order decides the prediction. Text matched by
//! neither pattern is unparsable and counts as incorrect.

use std::sync::LazyLock;

use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

pub const ANSWER_PATTERN: &str = r"Answer: (True|False)";
pub const ELABORATION_PATTERN: &str = r#"The (requirement|statement) ("?.+?"?\s)?is (true|false)"#;

static ANSWER_CI: LazyLock<Regex> = LazyLock::new(|| Regex::new(&format!("(?i){ANSWER_PATTERN}")).unwrap());
static ELABORATION_CI: LazyLock<Regex> = LazyLock::new(|| Regex::new(&format!("(?i){ELABORATION_PATTERN}")).unwrap());
static ANSWER_CS: LazyLock<Regex> = LazyLock::new(|| Regex::new(ANSWER_PATTERN).unwrap());
static ELABORATION_CS: LazyLock<Regex> = LazyLock::new(|| Regex::new(ELABORATION_PATTERN).unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Prediction {
    True,
    False,
    Unparsable,
}

impl Prediction {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Prediction::True
        } else {
            Prediction::False
        }
    }

    pub fn as_bool(self) -> Option<bool> {
        match self {
            Prediction::True => Some(true),
            Prediction::False => Some(false),
            Prediction::Unparsable => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Extraction {
    Uniform,
    AnswerRegex,
    ElaborationRegex,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Verdict {
    pub prediction: Prediction,
    pub extraction: Extraction,
    /// Matches of both patterns; zero for uniform responses.
    pub match_count: usize,
}

impl Verdict {
    pub fn unparsable() -> Self {
        Verdict { prediction: Prediction::Unparsable, extraction: Extraction::None, match_count: 0 }
    }

    pub fn is_uniform(&self) -> bool {
        self.extraction == Extraction::Uniform
    }
}

/// Which match decides when both patterns fire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LastMatchScope {
    /// Last match over both patterns in document order.
    #[default]
    AcrossPatterns,
    /// Last answer-pattern match if any, else last elaboration match.
    AnswerFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOptions {
    pub case_insensitive: bool,
    pub last_match: LastMatchScope,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { case_insensitive: true, last_match: LastMatchScope::AcrossPatterns }
    }
}

pub fn parse_response(text: &str) -> Verdict {
    parse_response_with(text, &ParseOptions::default())
}

pub fn parse_response_with(text: &str, opts: &ParseOptions) -> Verdict {
    let trimmed = text.trim();
    if trimmed.eq_ignore_ascii_case("true") {
        return Verdict { prediction: Prediction::True, extraction: Extraction::Uniform, match_count: 0 };
    }
    if trimmed.eq_ignore_ascii_case("false") {
        return Verdict { prediction: Prediction::False, extraction: Extraction::Uniform, match_count: 0 };
    }

    let (answer_re, elaboration_re) =
        if opts.case_insensitive { (&*ANSWER_CI, &*ELABORATION_CI) } else { (&*ANSWER_CS, &*ELABORATION_CS) };

    // (start offset, extraction, value)
    let mut hits: Vec<(usize, Extraction, bool)> = Vec::new();
    for caps in answer_re.captures_iter(text) {
        let m = caps.get(0).unwrap();
        hits.push((m.start(), Extraction::AnswerRegex, caps[1].eq_ignore_ascii_case("true")));
    }
    for caps in elaboration_re.captures_iter(text) {
        let m = caps.get(0).unwrap();
        hits.push((m.start(), Extraction::ElaborationRegex, caps[3].eq_ignore_ascii_case("true")));
    }
    let match_count = hits.len();
    hits.sort_by_key(|h| h.0);

    let chosen = match opts.last_match {
        LastMatchScope::AcrossPatterns => hits.last(),
        LastMatchScope::AnswerFirst => {
            hits.iter().rev().find(|h| h.1 == Extraction::AnswerRegex).or_else(|| hits.last())
        }
    };
    match chosen {
        Some(&(_, extraction, value)) => Verdict { prediction: Prediction::from_bool(value), extraction, match_count },
        None => Verdict::unparsable(),
    }
}

/// Non-uniform response counts by number of pattern matches: 0, 1, 2, 3, 4+.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchBuckets {
    pub zero: usize,
    pub one: usize,
    pub two: usize,
    pub three: usize,
    pub four_plus: usize,
}

impl MatchBuckets {
    pub const LABELS: [&'static str; 5] = ["0", "1", "2", "3", "4+"];

    pub fn as_array(&self) -> [usize; 5] {
        [self.zero, self.one, self.two, self.three, self.four_plus]
    }

    pub fn total(&self) -> usize {
        self.as_array().iter().sum()
    }
}

pub fn count_buckets<'a>(verdicts: impl IntoIterator<Item = &'a Verdict>) -> MatchBuckets {
    let mut b = MatchBuckets::default();
    for v in verdicts.into_iter().filter(|v| !v.is_uniform()) {
        match v.match_count {
            0 => b.zero += 1,
            1 => b.one += 1,
            2 => b.two += 1,
            3 => b.three += 1,
            _ => b.four_plus += 1,
        }
    }
    b
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("majority vote over an empty list")]
pub struct EmptyVote;

/// More frequent prediction; an exact tie is broken by one draw from `rng`.
pub fn majority_vote<R: Rng + ?Sized>(predictions: &[bool], rng: &mut R) -> Result<bool, EmptyVote> {
    if predictions.is_empty() {
        return Err(EmptyVote);
    }
    let yes = predictions.iter().filter(|&&p| p).count();
    let no = predictions.len() - yes;
    Ok(match yes.cmp(&no) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => rng.gen_bool(0.5),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Consistency {
    Consistent,
    Inconsistent,
    Undetermined,
}

/// A normative answer and the answer to its inversion must disagree.
pub fn consistency_check(normative: &Verdict, inverted: &Verdict) -> Consistency {
    match (normative.prediction.as_bool(), inverted.prediction.as_bool()) {
        (Some(a), Some(b)) if a != b => Consistency::Consistent,
        (Some(_), Some(_)) => Consistency::Inconsistent,
        _ => Consistency::Undetermined,
    }
}

//! Answer-template normalization and top-k template coverage.
//!
//! Answers are lowercased, whitespace-collapsed and stripped of terminal
//! punctuation; entity mentions are then replaced by bracketed placeholders
//! such as `[COLOR]`. The share of answers falling into the `k` most frequent
//! templates measures how repetitive a QA corpus is.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOP_K: usize = 15;

const TERMINAL_PUNCTUATION: &[char] = &['.', '!', '?', ',', ';', ':'];
const EDGE_PUNCTUATION: &[char] = &['.', '!', '?', ',', ';', ':', '"', '\'', '(', ')'];

const COLOR_WORDS: &[&str] = &[
    "red", "orange", "yellow", "green", "blue", "purple", "pink", "brown", "black", "white",
    "gray", "grey", "silver", "gold", "golden", "beige", "tan", "navy", "teal", "cyan",
    "magenta", "maroon", "violet", "cream", "light blue", "dark blue", "light gray",
    "dark gray", "light grey", "dark grey", "light brown", "dark brown", "light green",
    "dark green", "navy blue",
];

const NUMBER_WORDS: &[&str] = &[
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
    "nineteen", "twenty",
];

const NUMBER_PATTERN: &str = r"[0-9]+(?:\.[0-9]+)?";

#[derive(Debug, Clone)]
pub enum Matcher {
    /// Phrases of one or more lowercase words, tried longest first.
    Words(Vec<Vec<String>>),
    /// Regular expression that must match a whole token.
    Pattern(Regex),
}

#[derive(Debug, Clone)]
pub struct TemplateRule {
    category: String,
    placeholder: String,
    matcher: Matcher,
}

impl TemplateRule {
    pub fn words<S: AsRef<str>>(category: &str, words: &[S]) -> Result<Self> {
        let mut phrases: Vec<Vec<String>> = words
            .iter()
            .map(|w| {
                w.as_ref()
                    .split_whitespace()
                    .map(str::to_lowercase)
                    .collect::<Vec<_>>()
            })
            .filter(|p| !p.is_empty())
            .collect();
        // longest first; stable so equal lengths keep list order
        phrases.sort_by_key(|p| std::cmp::Reverse(p.len()));
        Self::build(category, Matcher::Words(phrases))
    }

    pub fn pattern(category: &str, pattern: &str) -> Result<Self> {
        let re = Regex::new(&format!("^(?:{pattern})$"))
            .map_err(|e| Error::InvalidConfig(format!("bad pattern for {category}: {e}")))?;
        Self::build(category, Matcher::Pattern(re))
    }

    fn build(category: &str, matcher: Matcher) -> Result<Self> {
        let valid = !category.is_empty()
            && category
                .chars()
                .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_' || c == '-');
        if !valid {
            return Err(Error::InvalidConfig(format!(
                "category `{category}` must be uppercase ASCII"
            )));
        }
        Ok(Self {
            category: category.to_string(),
            placeholder: format!("[{category}]"),
            matcher,
        })
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn placeholder(&self) -> &str {
        &self.placeholder
    }
}

/// Ordered rule list; order is part of the rule set's identity.
#[derive(Debug, Clone)]
pub struct TemplateRules {
    rules: Vec<TemplateRule>,
}

#[derive(Debug, Deserialize)]
struct RulesFile {
    #[serde(default)]
    rules: Vec<RuleEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleEntry {
    category: String,
    #[serde(default)]
    words: Option<Vec<String>>,
    #[serde(default)]
    pattern: Option<String>,
}

impl TemplateRules {
    pub fn new(rules: Vec<TemplateRule>) -> Self {
        Self { rules }
    }

    pub fn empty() -> Self {
        Self { rules: Vec::new() }
    }

    /// `[COLOR]` words, then `[NUMBER]` words and numerals. Object names are
    /// left as they are.
    pub fn default_rules() -> Self {
        Self::new(vec![
            TemplateRule::words("COLOR", COLOR_WORDS).expect("static rule"),
            TemplateRule::words("NUMBER", NUMBER_WORDS).expect("static rule"),
            TemplateRule::pattern("NUMBER", NUMBER_PATTERN).expect("static rule"),
        ])
    }

    /// Parses a TOML rules file:
    ///
    /// ```toml
    /// [[rules]]
    /// category = "COLOR"
    /// words = ["red", "light blue"]
    ///
    /// [[rules]]
    /// category = "NUMBER"
    /// pattern = "[0-9]+"
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: RulesFile =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("rules file: {e}")))?;
        let rules = file
            .rules
            .into_iter()
            .map(|entry| match (entry.words, entry.pattern) {
                (Some(words), None) => TemplateRule::words(&entry.category, &words),
                (None, Some(pattern)) => TemplateRule::pattern(&entry.category, &pattern),
                _ => Err(Error::InvalidConfig(format!(
                    "rule `{}` needs exactly one of `words` or `pattern`",
                    entry.category
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(rules))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn rules(&self) -> &[TemplateRule] {
        &self.rules
    }
}

fn is_placeholder(token: &str) -> bool {
    token.len() > 2
        && token.starts_with('[')
        && token.ends_with(']')
        && token[1..token.len() - 1]
            .chars()
            .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_' || c == '-')
}

/// Splits a token into leading punctuation, core and trailing punctuation.
fn split_edges(token: &str) -> (&str, &str, &str) {
    let core_start = token.len() - token.trim_start_matches(EDGE_PUNCTUATION).len();
    let rest = &token[core_start..];
    let core = rest.trim_end_matches(EDGE_PUNCTUATION);
    (&token[..core_start], core, &rest[core.len()..])
}

fn apply_rule(tokens: Vec<String>, rule: &TemplateRule) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        let (_, core, _) = split_edges(&tokens[i]);
        if is_placeholder(core) || core.is_empty() {
            out.push(tokens[i].clone());
            i += 1;
            continue;
        }
        let matched = match &rule.matcher {
            Matcher::Pattern(re) => re.is_match(core).then_some(1),
            Matcher::Words(phrases) => phrases.iter().find_map(|phrase| {
                let n = phrase.len();
                if i + n > tokens.len() {
                    return None;
                }
                let hit = phrase.iter().enumerate().all(|(o, word)| {
                    let (lead, core, trail) = split_edges(&tokens[i + o]);
                    // inner punctuation would break the phrase
                    let inner_ok = (o == 0 || lead.is_empty()) && (o + 1 == n || trail.is_empty());
                    inner_ok && core == word
                });
                hit.then_some(n)
            }),
        };
        match matched {
            Some(n) => {
                let (lead, _, _) = split_edges(&tokens[i]);
                let (_, _, trail) = split_edges(&tokens[i + n - 1]);
                out.push(format!("{lead}{}{trail}", rule.placeholder));
                i += n;
            }
            None => {
                out.push(tokens[i].clone());
                i += 1;
            }
        }
    }
    out
}

/// Maps an answer to its template.
pub fn normalize_answer(answer: &str, rules: &TemplateRules) -> String {
    let lowered: Vec<String> = answer
        .split_whitespace()
        .map(|t| {
            if is_placeholder(split_edges(t).1) {
                t.to_string()
            } else {
                t.to_lowercase()
            }
        })
        .collect();
    let joined = lowered.join(" ");
    let stripped = joined.trim_end_matches(|c: char| TERMINAL_PUNCTUATION.contains(&c) || c.is_whitespace());
    let mut tokens: Vec<String> = stripped.split_whitespace().map(str::to_string).collect();
    for rule in &rules.rules {
        tokens = apply_rule(tokens, rule);
    }
    tokens.join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TemplateCount {
    pub template: String,
    pub count: usize,
}

/// Template frequencies (descending count, then template text) and the
/// top-k coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateReport {
    pub frequencies: Vec<TemplateCount>,
    pub top_k: usize,
    pub coverage: f64,
    pub corpus_size: usize,
}

/// Machine-readable summary of a [`TemplateReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub k: usize,
    pub coverage: f64,
    pub size: usize,
    pub distinct_templates: usize,
}

impl TemplateReport {
    pub fn record(&self) -> CoverageRecord {
        CoverageRecord {
            k: self.top_k,
            coverage: self.coverage,
            size: self.corpus_size,
            distinct_templates: self.frequencies.len(),
        }
    }

    pub fn top(&self) -> &[TemplateCount] {
        &self.frequencies[..self.top_k.min(self.frequencies.len())]
    }

    /// Human-readable table of the top-k templates.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>4}  {:>8}  {:>7}  template", "rank", "count", "share");
        for (rank, entry) in self.top().iter().enumerate() {
            let share = entry.count as f64 / self.corpus_size as f64 * 100.0;
            let _ = writeln!(
                s,
                "{:>4}  {:>8}  {:>6.2}%  {}",
                rank + 1,
                entry.count,
                share,
                entry.template
            );
        }
        let _ = writeln!(
            s,
            "top-{} coverage: {:.4} ({} answers, {} distinct templates)",
            self.top_k,
            self.coverage,
            self.corpus_size,
            self.frequencies.len()
        );
        s
    }
}

pub fn top_k_coverage<S: AsRef<str>>(
    corpus: &[S],
    rules: &TemplateRules,
    k: usize,
) -> Result<TemplateReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for answer in corpus {
        *counts.entry(normalize_answer(answer.as_ref(), rules)).or_default() += 1;
    }
    let mut frequencies: Vec<TemplateCount> = counts
        .into_iter()
        .map(|(template, count)| TemplateCount { template, count })
        .collect();
    frequencies.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.template.cmp(&b.template)));
    let covered: usize = frequencies.iter().take(k).map(|t| t.count).sum();
    Ok(TemplateReport {
        coverage: covered as f64 / corpus.len() as f64,
        frequencies,
        top_k: k,
        corpus_size: corpus.len(),
    })
}

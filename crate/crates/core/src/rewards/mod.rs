//! Answer-quality rewards in `[0, 1]`.
//!
//! Open-ended answers are scored by a blend of lemmatized token F1 and
//! normalized edit similarity; multiple-choice answers by whether the chosen
//! option matches the gold option.

mod edit;
mod lemma;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use edit::{edit_similarity, levenshtein, normalize};
pub use lemma::{lemma, lemmatize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    #[default]
    OpenEnded,
    MultipleChoice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub w_f1: f64,
    pub w_edit: f64,
    pub mode: RewardMode,
    /// Compute edit similarity on lemmatized text instead of the lowercased
    /// raw strings.
    pub edit_on_lemmas: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            w_f1: 0.1,
            w_edit: 0.9,
            mode: RewardMode::OpenEnded,
            edit_on_lemmas: false,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.w_f1 < 0.0 || self.w_edit < 0.0 {
            return Err("reward weights must be non-negative".into());
        }
        if self.mode == RewardMode::OpenEnded && (self.w_f1 + self.w_edit - 1.0).abs() > 1e-12 {
            return Err(format!(
                "open-ended reward weights must sum to 1, got {} + {}",
                self.w_f1, self.w_edit
            ));
        }
        Ok(())
    }
}

/// Multiset F1 over lemmatized tokens. Both sides empty scores 1; exactly one
/// side empty scores 0.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    f1_of_tokens(&lemmatize(pred), &lemmatize(gold))
}

pub fn f1_of_tokens<T: AsRef<str>>(pred: &[T], gold: &[T]) -> f64 {
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t.as_ref()).or_default() += 1;
    }
    let mut common = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_ref()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// `w_f1 · token_f1 + w_edit · edit_similarity`.
pub fn f1_lev_reward(pred: &str, gold: &str, config: &RewardConfig) -> f64 {
    let f1 = token_f1(pred, gold);
    let edit = if config.edit_on_lemmas {
        edit_similarity(&lemmatize(pred).join(" "), &lemmatize(gold).join(" "))
    } else {
        edit_similarity(pred, gold)
    };
    config.w_f1 * f1 + config.w_edit * edit
}

const LETTERS: [char; 5] = ['A', 'B', 'C', 'D', 'E'];

fn letter_index(c: char) -> Option<usize> {
    LETTERS.iter().position(|&l| l == c)
}

/// First uppercase `A`–`E` that stands alone (no adjacent letter or digit).
pub fn first_option_letter(text: &str) -> Option<usize> {
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        let Some(idx) = letter_index(c) else { continue };
        let before = i.checked_sub(1).map(|j| chars[j]);
        let after = chars.get(i + 1).copied();
        let isolated = |n: Option<char>| n.is_none_or(|ch| !ch.is_alphanumeric());
        if isolated(before) && isolated(after) {
            return Some(idx);
        }
    }
    None
}

/// Option index chosen by a free-form prediction.
///
/// The first standalone option letter wins when it names an existing option;
/// otherwise the option with the highest edit similarity to the prediction
/// (ties to the lower index). Blank predictions choose nothing.
pub fn extract_choice(pred: &str, options: &[String]) -> Option<usize> {
    if pred.trim().is_empty() || options.is_empty() {
        return None;
    }
    if let Some(i) = first_option_letter(pred).filter(|&i| i < options.len()) {
        return Some(i);
    }
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (i, o) in options.iter().enumerate() {
        let s = edit_similarity(pred, o);
        if s > best_sim {
            best = i;
            best_sim = s;
        }
    }
    Some(best)
}

/// Resolves the gold option, given as option text or as a bare letter.
fn gold_index(gold: &str, options: &[String]) -> Option<usize> {
    if let Some(i) = options.iter().position(|o| o == gold) {
        return Some(i);
    }
    let g = gold.trim();
    let mut chars = g.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => letter_index(c).filter(|&i| i < options.len()),
        _ => None,
    }
}

/// 1 when the prediction selects the gold option, else 0.
pub fn mcq_reward(pred: &str, gold: &str, options: &[String]) -> f64 {
    match (extract_choice(pred, options), gold_index(gold, options)) {
        (Some(p), Some(g)) if p == g => 1.0,
        _ => 0.0,
    }
}

/// Reward for one answer under `config.mode`.
pub fn score(pred: &str, gold: &str, options: Option<&[String]>, config: &RewardConfig) -> f64 {
    match (config.mode, options) {
        (RewardMode::MultipleChoice, Some(opts)) => mcq_reward(pred, gold, opts),
        (RewardMode::MultipleChoice, None) => {
            f64::from(u8::from(normalize(pred) == normalize(gold)))
        }
        (RewardMode::OpenEnded, _) => f1_lev_reward(pred, gold, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn token_f1_examples() {
        assert_eq!(token_f1("dog", "dog"), 1.0);
        assert!((token_f1("a dog running", "dog") - 0.5).abs() < 1e-15);
        assert_eq!(token_f1("cat", "dog"), 0.0);
        assert_eq!(token_f1("", ""), 1.0);
        assert_eq!(token_f1("", "dog"), 0.0);
        assert_eq!(token_f1("dogs", "dog"), 1.0);
        assert_eq!(token_f1("red ball", "ball red"), 1.0);
    }

    #[test]
    fn blended_reward_examples() {
        let cfg = RewardConfig::default();
        assert_eq!(f1_lev_reward("a dog", "a dog", &cfg), 1.0);
        let r = f1_lev_reward("a dog running", "dog", &cfg);
        let expect = 0.1 * 0.5 + 0.9 * (1.0 - 10.0 / 13.0);
        assert!((r - expect).abs() < 1e-12);
        assert!((r - 0.25769).abs() < 1e-5);
        assert_eq!(f1_lev_reward("abc", "xyz", &cfg), 0.0);
    }

    #[test]
    fn weights_validation() {
        assert!(RewardConfig::default().validate().is_ok());
        let bad = RewardConfig {
            w_f1: 0.5,
            ..RewardConfig::default()
        };
        assert!(bad.validate().is_err());
        let neg = RewardConfig {
            w_f1: -0.1,
            w_edit: 1.1,
            ..RewardConfig::default()
        };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn mcq_letter_extraction() {
        let o = opts(&["a red car", "a blue bike", "a green bus", "a cat"]);
        assert_eq!(mcq_reward("B", "B", &o), 1.0);
        assert_eq!(mcq_reward("The answer is (C).", "C", &o), 1.0);
        assert_eq!(mcq_reward("The answer is (C).", "a green bus", &o), 1.0);
        assert_eq!(mcq_reward("D", "C", &o), 0.0);
        assert_eq!(mcq_reward("", "C", &o), 0.0);
        // "E" names no option here, so similarity decides
        assert_eq!(extract_choice("E", &o), Some(0));
        // letters glued to words are not standalone
        assert_eq!(first_option_letter("Bike"), None);
        assert_eq!(first_option_letter("option-D!"), Some(3));
    }

    #[test]
    fn mcq_similarity_fallback_rule_table() {
        let o = opts(&["an apple", "a yellow fruit", "a banana split", "grapes"]);
        // (prediction, chosen option index by the documented rule)
        let table: &[(&str, usize)] = &[
            ("banana", 2),
            ("yellow fruit", 1),
            ("apple", 0),
            ("grape", 3),
            ("it is a yellow fruit", 1),
        ];
        for (pred, idx) in table {
            assert_eq!(extract_choice(pred, &o), Some(*idx), "{pred}");
        }
        assert_eq!(mcq_reward("banana", "a yellow fruit", &o), 0.0);
        assert_eq!(mcq_reward("yellow fruit", "a yellow fruit", &o), 1.0);
    }

    #[test]
    fn mode_dispatch() {
        let mc = RewardConfig {
            mode: RewardMode::MultipleChoice,
            ..RewardConfig::default()
        };
        let o = opts(&["x", "y"]);
        assert_eq!(score("B", "y", Some(&o), &mc), 1.0);
        assert_eq!(score("yes", "Yes", None, &mc), 1.0);
        assert_eq!(score("dog", "dog", None, &RewardConfig::default()), 1.0);
    }
}

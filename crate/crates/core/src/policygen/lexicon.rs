use std::fmt;

use serde::{Deserialize, Serialize};

use super::PolicyGenError;
use crate::memory::tokenize;
use crate::policy::Style;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleLexicon {
    pub aggressive: Vec<String>,
    pub conservative: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectnessLexicon {
    pub explicit: Vec<String>,
    pub driving: Vec<String>,
    pub affect: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackLexicon {
    pub accept: Vec<String>,
    pub more_aggressive: Vec<String>,
    pub more_conservative: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub style: StyleLexicon,
    pub directness: DirectnessLexicon,
    pub feedback: FeedbackLexicon,
}

const DEFAULT_LEXICON: &str = include_str!("../../data/lexicon.toml");

impl Default for Lexicon {
    fn default() -> Self {
        Self::from_toml(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }
}

/// Token sequence with boundary-safe phrase lookup.
struct Tokens(String);

impl Tokens {
    fn new(text: &str) -> Self {
        Self(format!(" {} ", tokenize(text).join(" ")))
    }

    fn count(&self, phrases: &[String]) -> usize {
        phrases
            .iter()
            .filter(|p| {
                let toks = tokenize(p);
                !toks.is_empty() && self.0.contains(&format!(" {} ", toks.join(" ")))
            })
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DirectnessLevel {
    L1,
    L2,
    L3,
}

impl fmt::Display for DirectnessLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::L1 => "L1",
            Self::L2 => "L2",
            Self::L3 => "L3",
        })
    }
}

impl std::str::FromStr for DirectnessLevel {
    type Err = PolicyGenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "L1" => Ok(Self::L1),
            "L2" => Ok(Self::L2),
            "L3" => Ok(Self::L3),
            _ => Err(PolicyGenError::InvalidField {
                field: "directness",
                value: s.to_string(),
            }),
        }
    }
}

/// How a piece of feedback asks the next policy to move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackSignal {
    Accept,
    MoreAggressive,
    MoreConservative,
    Neutral,
}

impl Lexicon {
    pub fn from_toml(text: &str) -> Result<Self, PolicyGenError> {
        toml::from_str(text).map_err(|e| PolicyGenError::Config(e.to_string()))
    }

    /// Explicit actuator command → L1; otherwise affect words without any
    /// driving verb → L3; everything else → L2.
    pub fn classify_directness(&self, instruction: &str) -> DirectnessLevel {
        let t = Tokens::new(instruction);
        let d = &self.directness;
        if t.count(&d.explicit) > 0 {
            DirectnessLevel::L1
        } else if t.count(&d.driving) == 0 && t.count(&d.affect) > 0 {
            DirectnessLevel::L3
        } else {
            DirectnessLevel::L2
        }
    }

    /// Majority of matched style phrases; ties and no matches → Moderate.
    pub fn target_style(&self, instruction: &str) -> Style {
        let t = Tokens::new(instruction);
        let agg = t.count(&self.style.aggressive);
        let cons = t.count(&self.style.conservative);
        match agg.cmp(&cons) {
            std::cmp::Ordering::Greater => Style::Aggressive,
            std::cmp::Ordering::Less => Style::Conservative,
            std::cmp::Ordering::Equal => Style::Moderate,
        }
    }

    /// Directional requests win over plain approval.
    pub fn classify_feedback(&self, feedback: &str) -> FeedbackSignal {
        let t = Tokens::new(feedback);
        let f = &self.feedback;
        let agg = t.count(&f.more_aggressive);
        let cons = t.count(&f.more_conservative);
        if agg > cons {
            FeedbackSignal::MoreAggressive
        } else if cons > agg {
            FeedbackSignal::MoreConservative
        } else if t.count(&f.accept) > 0 {
            FeedbackSignal::Accept
        } else {
            FeedbackSignal::Neutral
        }
    }
}

pub fn classify_directness(instruction: &str) -> DirectnessLevel {
    Lexicon::default().classify_directness(instruction)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directness_examples() {
        assert_eq!(classify_directness("go faster"), DirectnessLevel::L1);
        assert_eq!(classify_directness("I feel uncomfortable"), DirectnessLevel::L3);
        assert_eq!(classify_directness("keep a larger gap when it's busy"), DirectnessLevel::L2);
        assert_eq!(classify_directness("Please SLOW DOWN!"), DirectnessLevel::L1);
        assert_eq!(classify_directness("hmm"), DirectnessLevel::L2);
    }

    #[test]
    fn whole_token_matching() {
        let lx = Lexicon::default();
        // "comfortable" must not match inside "uncomfortable".
        assert_eq!(lx.classify_feedback("that was uncomfortable"), FeedbackSignal::MoreConservative);
        assert_eq!(lx.classify_feedback("that was comfortable"), FeedbackSignal::Accept);
        assert_eq!(lx.classify_feedback("I prefer keeping larger acceleration"), FeedbackSignal::MoreAggressive);
        assert_eq!(lx.classify_feedback("the sky is blue"), FeedbackSignal::Neutral);
    }

    #[test]
    fn styles() {
        let lx = Lexicon::default();
        assert_eq!(lx.target_style("drive more aggressively"), Style::Aggressive);
        assert_eq!(lx.target_style("go faster"), Style::Aggressive);
        assert_eq!(lx.target_style("I feel uncomfortable"), Style::Conservative);
        assert_eq!(lx.target_style("drive normally"), Style::Moderate);
    }
}

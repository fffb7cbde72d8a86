use sha2::{Digest, Sha256};

use super::{FeedbackSignal, Generated, Lexicon, PolicyGenError, PolicyGenerator, PromptBundle};
use crate::policy::{validate, ActionMatrix, ParamName, ParamSet, PolicyOrigin, RangeTable, Style};

/// Where inside a style band the offline generator starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StyleTarget {
    Midpoint(Style),
    /// Deeper into the conservative band than its midpoint; used when
    /// adverse conditions ask for one step beyond `Conservative`.
    Cautious,
}

/// Deterministic, offline stand-in for a language model: keyword lexicon →
/// style, adverse weather → one step more conservative, and remembered
/// feedback on a similar instruction → a partial step toward the
/// passenger's preference.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleBackend {
    pub table: RangeTable,
    pub lexicon: Lexicon,
    /// Fraction of the way from the style point to the remembered target.
    pub nudge: f64,
    /// Minimum instruction similarity for a memory to count as "similar".
    pub similarity_threshold: f64,
    /// Position inside the conservative band for the cautious point
    /// (mirrored for parameters where higher is more conservative).
    pub cautious_fraction: f64,
}

impl Default for RuleBackend {
    fn default() -> Self {
        Self::new(RangeTable::default(), Lexicon::default())
    }
}

impl RuleBackend {
    pub fn new(table: RangeTable, lexicon: Lexicon) -> Self {
        Self {
            table,
            lexicon,
            nudge: 0.2,
            similarity_threshold: 0.5,
            cautious_fraction: 0.25,
        }
    }

    pub fn style_target(&self, bundle: &PromptBundle) -> StyleTarget {
        let style = self.lexicon.target_style(&bundle.instruction);
        if !bundle.scene.weather.is_adverse() {
            return StyleTarget::Midpoint(style);
        }
        style.more_conservative().map_or(StyleTarget::Cautious, StyleTarget::Midpoint)
    }

    pub fn target_params(&self, target: StyleTarget) -> ParamSet<f64> {
        match target {
            StyleTarget::Midpoint(s) => self.table.profile(s).midpoints(),
            StyleTarget::Cautious => {
                let bands = self.table.bands(Style::Conservative);
                ParamSet::from_fn(|p| {
                    let b = bands.get(p);
                    let f = if p.higher_is_conservative() {
                        1.0 - self.cautious_fraction
                    } else {
                        self.cautious_fraction
                    };
                    b.lower + f * (b.upper - b.lower)
                })
            }
        }
    }

    /// The remembered preference to move toward, from the most similar
    /// history entry with directional or approving feedback.
    pub fn feedback_target(&self, bundle: &PromptBundle) -> Option<ParamSet<f64>> {
        bundle
            .history
            .iter()
            .filter(|r| r.similarity >= self.similarity_threshold)
            .find_map(|r| {
                let signal = self.lexicon.classify_feedback(r.entry.feedback.as_deref()?);
                match signal {
                    FeedbackSignal::Accept => Some(r.entry.policy.params()),
                    FeedbackSignal::MoreAggressive => Some(self.table.profile(Style::Aggressive).midpoints()),
                    FeedbackSignal::MoreConservative => Some(self.table.profile(Style::Conservative).midpoints()),
                    FeedbackSignal::Neutral => None,
                }
            })
    }

    pub fn generate_rule_based(&self, bundle: &PromptBundle, seed: u64) -> ActionMatrix {
        let base = self.target_params(self.style_target(bundle));
        let params = match self.feedback_target(bundle) {
            Some(t) => base.map(|p, &b| b + self.nudge * (t.get(p) - b)),
            None => base,
        };
        let params = params.map(|p, &v| {
            let b = self.table.envelope.get(p);
            v.clamp(b.min, b.max)
        });

        let mut h = Sha256::new();
        h.update(bundle.system.render().as_bytes());
        h.update(bundle.user_content().as_bytes());
        h.update(seed.to_le_bytes());
        for p in ParamName::ALL {
            h.update(params.get(p).to_le_bytes());
        }
        let id = format!("rule-{}", &hex::encode(h.finalize())[..12]);
        ActionMatrix::from_params(id, PolicyOrigin::RuleBackend, &params)
    }
}

impl PolicyGenerator for RuleBackend {
    fn generate(&self, bundle: &PromptBundle, seed: u64) -> Result<Generated, PolicyGenError> {
        let policy = self.generate_rule_based(bundle, seed);
        validate(&policy, &self.table.envelope)?;
        Ok(Generated {
            policy,
            latency: None,
            attempts: 1,
        })
    }

    fn origin(&self) -> PolicyOrigin {
        PolicyOrigin::RuleBackend
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{MemoryStore, NewEntry};
    use crate::policy::default_baseline;
    use crate::policygen::{build_system_message, Road, SceneDescriptor, Traffic, Weather, DEFAULT_PROMPT_BUDGET};
    use proptest::prelude::*;

    fn bundle(instruction: &str, weather: Weather, store: Option<&MemoryStore>) -> PromptBundle {
        let history = store.map(|s| s.retrieve(instruction, 3)).unwrap_or_default();
        PromptBundle::new(
            build_system_message("u", &RangeTable::default()),
            instruction,
            SceneDescriptor::new(weather, Traffic::Free, Road::Straight),
            history,
            DEFAULT_PROMPT_BUDGET,
        )
        .unwrap()
    }

    fn mids(style: Style) -> ParamSet<f64> {
        RangeTable::default().profile(style).midpoints()
    }

    #[test]
    fn aggressive_sunny_and_snow() {
        let rb = RuleBackend::default();
        let p = rb.generate_rule_based(&bundle("drive more aggressively", Weather::Sunny, None), 0);
        assert_eq!(p.params(), mids(Style::Aggressive));
        let p = rb.generate_rule_based(&bundle("drive more aggressively", Weather::Snow, None), 0);
        assert_eq!(p.params(), mids(Style::Moderate));
    }

    #[test]
    fn cautious_point_beyond_conservative() {
        let rb = RuleBackend::default();
        let sunny = rb.generate_rule_based(&bundle("I feel uncomfortable", Weather::Sunny, None), 0);
        let night = rb.generate_rule_based(&bundle("I feel uncomfortable", Weather::Night, None), 0);
        assert_eq!(sunny.params(), mids(Style::Conservative));
        assert!(night.pid.kp < sunny.pid.kp);
        assert!(night.mpc.w_s > sunny.mpc.w_s);
        // 25% into [0.3, 0.6) and 75% into [1.5, 4).
        assert!((night.pid.kp - 0.375).abs() < 1e-12);
        assert!((night.mpc.w_s - 3.375).abs() < 1e-12);
    }

    #[test]
    fn accepted_memory_nudge() {
        let mut store = MemoryStore::in_memory("u");
        let mut remembered = default_baseline();
        remembered.pid.kp = 1.4;
        store
            .insert(NewEntry {
                instruction: "go faster".into(),
                scene: "weather=sunny; traffic=free; road=straight".into(),
                policy: remembered,
                feedback: Some("great, keep it".into()),
                created_at: chrono::DateTime::from_timestamp(0, 0).unwrap(),
            })
            .unwrap();
        let rb = RuleBackend::default();
        let p = rb.generate_rule_based(&bundle("go faster", Weather::Sunny, Some(&store)), 0);
        let mid = mids(Style::Aggressive).kp;
        assert!((p.pid.kp - (mid + 0.2 * (1.4 - mid))).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_valid() {
        let rb = RuleBackend::default();
        let b = bundle("go faster", Weather::Rain, None);
        assert_eq!(rb.generate_rule_based(&b, 7), rb.generate_rule_based(&b, 7));
        assert!(rb.generate(&b, 7).is_ok());
    }

    proptest! {
        #[test]
        fn adverse_never_less_conservative(
            words in proptest::collection::vec(prop_oneof![
                Just("go"), Just("faster"), Just("slow"), Just("down"), Just("gently"), Just("I"),
                Just("feel"), Just("uncomfortable"), Just("aggressively"), Just("late"), Just("drive"),
            ], 1..6),
            adverse in prop_oneof![Just(Weather::Rain), Just(Weather::Fog), Just(Weather::Snow), Just(Weather::Night)],
        ) {
            let text = words.join(" ");
            let rb = RuleBackend::default();
            let s = rb.generate_rule_based(&bundle(&text, Weather::Sunny, None), 0);
            let a = rb.generate_rule_based(&bundle(&text, adverse, None), 0);
            prop_assert!(a.pid.kp < s.pid.kp);
            prop_assert!(a.mpc.w_s > s.mpc.w_s);
        }
    }
}

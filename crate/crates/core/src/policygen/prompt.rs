use serde::{Deserialize, Serialize};

use super::{PolicyGenError, SceneDescriptor};
use crate::memory::{render_context, Retrieved};
use crate::policy::RangeTable;

pub const DEFAULT_PROMPT_BUDGET: usize = 8_000;

const OBJECTIVE: &str = "Translate the passenger's instruction, the scene and the interaction history into \
the six-parameter action matrix: PID gains (kp, ki, kd) for speed tracking and MPC weights \
(w_l, w_h, w_s) for path tracking.";

const PRINCIPLES: &str = "\
- Larger kp, ki, kd give stronger, quicker speed corrections; smaller values are gentler.
- Larger w_l and w_h track the lane more tightly; larger w_s makes steering smoother and more conservative.
- Choose the band of the style the instruction asks for and stay inside the global min/max.
- In rain, fog, snow or at night choose a more conservative policy than in clear weather.
- When the history holds feedback on a similar instruction, move toward what the passenger preferred.";

const FORMAT: &str = "Reply with exactly one JSON object and nothing that could be mistaken for another: \
{\"pid\":{\"kp\":<number>,\"ki\":<number>,\"kd\":<number>},\"mpc\":{\"w_l\":<number>,\"w_h\":<number>,\"w_s\":<number>}}";

/// Role, objective and the tuning rules, including the full range table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemMessage {
    pub user_identity: String,
    pub objective: String,
    pub tuning_principles: String,
}

impl SystemMessage {
    pub fn render(&self) -> String {
        format!(
            "You are the motion-control assistant of an automated vehicle, serving user {}.\n\
             Objective: {}\n\
             Parameter ranges by driving style (bands are [lower, upper)):\n{}\n\
             Output format: {}\n",
            serde_json::to_string(&self.user_identity).expect("string serialization cannot fail"),
            self.objective,
            self.tuning_principles,
            FORMAT
        )
    }
}

pub fn build_system_message(user: &str, table: &RangeTable) -> SystemMessage {
    SystemMessage {
        user_identity: user.to_string(),
        objective: OBJECTIVE.to_string(),
        tuning_principles: format!("{}{PRINCIPLES}", table.render()),
    }
}

/// Everything a generator sees for one request. History is kept as
/// structured entries so offline backends can use it directly; it is
/// rendered only for the text prompt.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptBundle {
    pub system: SystemMessage,
    pub instruction: String,
    pub scene: SceneDescriptor,
    pub history: Vec<Retrieved>,
}

impl PromptBundle {
    /// Builds the bundle, dropping the oldest history entries until the
    /// rendered prompt fits `budget` characters.
    pub fn new(
        system: SystemMessage,
        instruction: impl Into<String>,
        scene: SceneDescriptor,
        mut history: Vec<Retrieved>,
        budget: usize,
    ) -> Result<Self, PolicyGenError> {
        let instruction = instruction.into();
        if instruction.trim().is_empty() {
            return Err(PolicyGenError::InvalidField {
                field: "instruction",
                value: instruction,
            });
        }
        loop {
            let bundle = Self {
                system: system.clone(),
                instruction: instruction.clone(),
                scene: scene.clone(),
                history: history.clone(),
            };
            let len = bundle.rendered_len();
            if len <= budget {
                return Ok(bundle);
            }
            let Some(oldest) = history.iter().enumerate().min_by_key(|(_, r)| r.entry.seq).map(|(i, _)| i) else {
                return Err(PolicyGenError::PromptTooLong { len, budget });
            };
            history.remove(oldest);
        }
    }

    pub fn scene_text(&self) -> String {
        self.scene.render()
    }

    pub fn history_text(&self) -> String {
        if self.history.is_empty() {
            "(none)\n".to_string()
        } else {
            render_context(&self.history)
        }
    }

    /// The user turn: instruction, scene and history.
    pub fn user_content(&self) -> String {
        format!(
            "Instruction: {}\nScene: {}\nHistory:\n{}",
            serde_json::to_string(&self.instruction).expect("string serialization cannot fail"),
            self.scene_text(),
            self.history_text()
        )
    }

    pub fn rendered_len(&self) -> usize {
        self.system.render().chars().count() + self.user_content().chars().count()
    }
}

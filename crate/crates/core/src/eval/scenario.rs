use std::collections::BTreeMap;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::gateway::{MockScript, PriceTable};
use crate::platform::{DesktopFrame, SimulatedDesktopScript};
use crate::session::SessionConfig;

pub const DEFAULT_MAX_ADAPTIVE_ROUNDS: u32 = 3;

fn default_max_adaptive() -> u32 {
    DEFAULT_MAX_ADAPTIVE_ROUNDS
}

/// What the simulated user does after one guidance turn: walk the step
/// cursor forward to `navigate_to_step`, then move the desktop to
/// `advance_to_frame`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Followthrough {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub navigate_to_step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advance_to_frame: Option<usize>,
}

/// Declarative success check. Every listed frame mark must hold on the
/// final desktop frame, and the regex, if any, must match the last
/// guidance text. At least one condition is required.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuccessPredicate {
    #[serde(default)]
    pub frame_marks: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance_regex: Option<String>,
}

impl SuccessPredicate {
    pub fn evaluate(&self, frame: &DesktopFrame, last_guidance: Option<&str>) -> Result<bool, EvalError> {
        let marks_ok = self
            .frame_marks
            .iter()
            .all(|(k, v)| frame.marks.get(k) == Some(v));
        let text_ok = match &self.guidance_regex {
            None => true,
            Some(re) => {
                let re = Regex::new(re).map_err(|e| EvalError::Scenario(format!("guidance_regex: {e}")))?;
                last_guidance.is_some_and(|t| re.is_match(t))
            }
        };
        Ok(marks_ok && text_ok)
    }
}

/// A replayable task: verbatim task description, optional follow-up
/// questions, scripted desktop and model, and documentation to index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskScenario {
    pub name: String,
    pub app: String,
    /// Sent verbatim as the first question.
    pub task_description: String,
    /// Further questions asked in order after the first answer, for tasks
    /// that unfold over a short dialogue.
    #[serde(default)]
    pub follow_up_questions: Vec<String>,
    pub desktop: SimulatedDesktopScript,
    pub model: MockScript,
    /// Markdown documents (with `software:` header) to index for retrieval.
    #[serde(default)]
    pub docs: Vec<String>,
    /// One entry per guidance turn, in order: questions first, then
    /// adaptive rounds. Missing entries mean the user does nothing.
    #[serde(default)]
    pub followthrough: Vec<Followthrough>,
    pub success: SuccessPredicate,
    #[serde(default = "default_max_adaptive")]
    pub max_adaptive_rounds: u32,
    #[serde(default)]
    pub session: SessionConfig,
    /// Prices used for the cost columns; zero when omitted.
    #[serde(default)]
    pub price_table: PriceTable,
}

impl TaskScenario {
    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let s: Self = serde_json::from_str(text).map_err(|e| EvalError::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            EvalError::Scenario(m) => EvalError::Scenario(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::Scenario(format!("{}: {m}", self.name)));
        if self.name.trim().is_empty() {
            return Err(EvalError::Scenario("scenario name is empty".into()));
        }
        if self.task_description.trim().is_empty() {
            return bad("task_description is empty".into());
        }
        if let Err(e) = self.desktop.validate() {
            return bad(e);
        }
        if self.success.frame_marks.is_empty() && self.success.guidance_regex.is_none() {
            return bad("success predicate has no conditions".into());
        }
        if let Some(re) = &self.success.guidance_regex {
            if let Err(e) = Regex::new(re) {
                return bad(format!("guidance_regex: {e}"));
            }
        }
        let frames = self.desktop.frames.len();
        for (i, f) in self.followthrough.iter().enumerate() {
            if let Some(t) = f.advance_to_frame {
                if t >= frames {
                    return bad(format!("followthrough {i}: frame {t} out of range ({frames} frames)"));
                }
            }
            if f.navigate_to_step == Some(0) {
                return bad(format!("followthrough {i}: steps are 1-based"));
            }
        }
        Ok(())
    }
}

/// Loads every `*.json` scenario in `dir`, sorted by file name.
pub fn load_suite(dir: &Path) -> Result<Vec<TaskScenario>, EvalError> {
    let rd = std::fs::read_dir(dir).map_err(|e| EvalError::Io(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<_> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(EvalError::Scenario(format!("no scenarios in {}", dir.display())));
    }
    paths.iter().map(|p| TaskScenario::from_file(p)).collect()
}

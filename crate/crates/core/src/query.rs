use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    MultipleChoice,
    Math,
    Code,
    FreeForm,
}

impl TaskKind {
    pub fn format_hint(self) -> &'static str {
        match self {
            TaskKind::MultipleChoice => "one of the answer choices: A, B, C, D (etc)",
            TaskKind::Math => "a mathematical expression or number",
            TaskKind::Code => "the completed Python function code",
            TaskKind::FreeForm => "a concise final answer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "multiple_choice" | "mc" | "mcq" => Some(TaskKind::MultipleChoice),
            "math" => Some(TaskKind::Math),
            "code" => Some(TaskKind::Code),
            "free_form" | "free" | "freeform" => Some(TaskKind::FreeForm),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub question: String,
    pub answer_format_hint: String,
    pub task_kind: TaskKind,
}

impl Query {
    pub fn new(question: impl Into<String>, task_kind: TaskKind) -> Self {
        Self {
            question: question.into(),
            answer_format_hint: task_kind.format_hint().to_string(),
            task_kind,
        }
    }
}

/// JSON-format instruction appended to every generation prompt.
pub(crate) fn json_answer_instruction(hint: &str) -> String {
    format!(
        "Provide brief reasoning (2-3 key sentences), then output your final answer in JSON format:\n\
         {{\"reasoning\": \"<brief reasoning>\", \"answer\": \"<{hint}>\", \"confidence_level\": \"<a float between 0.0 and 1.0>\"}}\n\
         Please strictly output in JSON format."
    )
}

/// Prompt for a node's first, unassisted answer.
pub fn build_initial_prompt(query: &Query) -> Vec<crate::backend::ChatMessage> {
    vec![crate::backend::ChatMessage::user(format!(
        "{}\n\n{}",
        query.question,
        json_answer_instruction(&query.answer_format_hint)
    ))]
}

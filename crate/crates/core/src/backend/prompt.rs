//! Versioned prompt templates and their rendering into chat message
//! sequences. Images are attached by reference; bytes are only read when a
//! request is put on the wire.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ImageSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Retrieval,
    Display,
    Interaction,
    Consistency,
    Unified,
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TemplateId::Retrieval => "retrieval",
            TemplateId::Display => "display",
            TemplateId::Interaction => "interaction",
            TemplateId::Consistency => "consistency",
            TemplateId::Unified => "unified",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub version: &'static str,
    pub system: &'static str,
    pub user: &'static str,
    /// Placeholders that must be present and non-empty.
    pub required_context: &'static [&'static str],
    /// Placeholders that render as empty text when absent.
    pub optional_context: &'static [&'static str],
    /// Shape of the expected JSON answer, as shown to the model.
    pub output_schema: &'static str,
}

const RETRIEVAL: PromptTemplate = PromptTemplate {
    id: TemplateId::Retrieval,
    version: "v1",
    system: include_str!("../../assets/prompts/retrieval.v1.system.txt"),
    user: include_str!("../../assets/prompts/retrieval.v1.user.txt"),
    required_context: &["current_kp", "step", "side"],
    optional_context: &["observation_text"],
    output_schema: r#"{"matched": bool, "reason": string}"#,
};

const DISPLAY: PromptTemplate = PromptTemplate {
    id: TemplateId::Display,
    version: "v1",
    system: include_str!("../../assets/prompts/display.v1.system.txt"),
    user: include_str!("../../assets/prompts/display.v1.user.txt"),
    required_context: &[],
    optional_context: &["observation_text"],
    output_schema: r#"{"has_defect": bool, "defects": [{"type": "None|DD.ContentRendering|DD.ElementLayout", "evidence": [string], "location_hint": string, "reason": string}]}"#,
};

const INTERACTION: PromptTemplate = PromptTemplate {
    id: TemplateId::Interaction,
    version: "v1",
    system: include_str!("../../assets/prompts/interaction.v1.system.txt"),
    user: include_str!("../../assets/prompts/interaction.v1.user.txt"),
    required_context: &["task", "history", "step", "action", "hit"],
    optional_context: &[
        "precondition",
        "trigger",
        "evidence",
        "thought",
        "target",
        "pre_state",
        "post_state",
    ],
    output_schema: r#"{"has_defect": bool, "defect": {"type": "None|ID.OperationNoResponse|ID.NavigationLogicError|ID.UnexpectedTaskResult", "step": int, "reason": string, "effect": string}}"#,
};

// Compares one agent claim with one verified finding.
const CONSISTENCY: PromptTemplate = PromptTemplate {
    id: TemplateId::Consistency,
    version: "v1",
    system: include_str!("../../assets/prompts/consistency.v1.system.txt"),
    user: include_str!("../../assets/prompts/consistency.v1.user.txt"),
    required_context: &[
        "claim_step",
        "claim_description",
        "defect_step",
        "defect_type",
    ],
    optional_context: &["claim_type", "defect_reason", "defect_evidence"],
    output_schema: r#"{"consistent": bool, "reason": string}"#,
};

// Display and interaction rule sections merged into one verifier.
const UNIFIED: PromptTemplate = PromptTemplate {
    id: TemplateId::Unified,
    version: "v1",
    system: include_str!("../../assets/prompts/unified.v1.system.txt"),
    user: include_str!("../../assets/prompts/unified.v1.user.txt"),
    required_context: INTERACTION.required_context,
    optional_context: INTERACTION.optional_context,
    output_schema: r#"{"has_defect": bool, "defect": {"type": "None|DD.*|ID.*", "step": int, "evidence": [string], "reason": string, "effect": string}}"#,
};

impl PromptTemplate {
    pub fn get(id: TemplateId) -> &'static PromptTemplate {
        match id {
            TemplateId::Retrieval => &RETRIEVAL,
            TemplateId::Display => &DISPLAY,
            TemplateId::Interaction => &INTERACTION,
            TemplateId::Consistency => &CONSISTENCY,
            TemplateId::Unified => &UNIFIED,
        }
    }

    pub fn all() -> [&'static PromptTemplate; 5] {
        [&RETRIEVAL, &DISPLAY, &INTERACTION, &CONSISTENCY, &UNIFIED]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    Image { image: ImageSource },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<ContentPart>,
}

impl Message {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Message {
            role,
            parts: vec![ContentPart::Text { text: text.into() }],
        }
    }

    /// Concatenated text parts.
    pub fn joined_text(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text { text } => Some(text.as_str()),
                ContentPart::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("template `{template}` requires placeholder `{name}`")]
    MissingPlaceholder { template: TemplateId, name: String },
    #[error("template `{template}` has no placeholder `{name}`")]
    UnknownPlaceholder { template: TemplateId, name: String },
}

/// Placeholder values plus labelled image attachments, in attachment order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptContext {
    values: BTreeMap<String, String>,
    images: Vec<(String, ImageSource)>,
}

impl PromptContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: impl Into<String>) -> Self {
        self.values.insert(name.to_string(), value.into());
        self
    }

    pub fn with_image(mut self, label: &str, image: Option<ImageSource>) -> Self {
        if let Some(image) = image {
            self.images.push((label.to_string(), image));
        }
        self
    }

    pub fn images(&self) -> &[(String, ImageSource)] {
        &self.images
    }
}

fn substitute(
    template: &PromptTemplate,
    body: &str,
    values: &BTreeMap<String, String>,
) -> Result<String, PromptError> {
    let mut out = String::with_capacity(body.len());
    let mut rest = body;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let Some(close) = after.find("}}") else {
            out.push_str(&rest[open..]);
            rest = "";
            break;
        };
        let name = &after[..close];
        let known = template.required_context.contains(&name)
            || template.optional_context.contains(&name);
        if !known {
            return Err(PromptError::UnknownPlaceholder {
                template: template.id,
                name: name.to_string(),
            });
        }
        out.push_str(values.get(name).map(String::as_str).unwrap_or(""));
        rest = &after[close + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Renders a template into a system turn and a user turn. The output is a
/// pure function of the inputs.
pub fn render_prompt(id: TemplateId, context: &PromptContext) -> Result<Vec<Message>, PromptError> {
    let template = PromptTemplate::get(id);
    for name in template.required_context {
        if context.values.get(*name).is_none_or(|v| v.trim().is_empty()) {
            return Err(PromptError::MissingPlaceholder {
                template: id,
                name: (*name).to_string(),
            });
        }
    }
    for name in context.values.keys() {
        if !template.required_context.contains(&name.as_str())
            && !template.optional_context.contains(&name.as_str())
        {
            return Err(PromptError::UnknownPlaceholder {
                template: id,
                name: name.clone(),
            });
        }
    }
    let system = substitute(template, template.system, &context.values)?;
    let user = substitute(template, template.user, &context.values)?;

    let mut parts = vec![ContentPart::Text { text: user }];
    for (label, image) in &context.images {
        parts.push(ContentPart::Text {
            text: format!("[{label} screenshot]"),
        });
        parts.push(ContentPart::Image {
            image: image.clone(),
        });
    }
    Ok(vec![
        Message::text(Role::System, system),
        Message {
            role: Role::User,
            parts,
        },
    ])
}

//! Typed JSON answers for each judge capability, with the semantic checks
//! that serde alone cannot express.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::model::{DefectClass, FaultMode};
use crate::retriever::MatchResult;

/// A value the model must produce as strict JSON.
pub trait StructuredOutput: DeserializeOwned + Serialize + Send {
    /// Rejects well-typed but inconsistent answers, e.g. a positive finding
    /// without a defect type.
    fn check(&self) -> Result<(), String>;
}

/// `"None"` (or an empty string) maps to no fault mode.
pub mod fault_label {
    use super::FaultMode;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<FaultMode>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(v.map(FaultMode::as_str).unwrap_or("None"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<FaultMode>, D::Error> {
        let raw = Option::<String>::deserialize(d)?;
        match raw.as_deref().map(str::trim) {
            None | Some("") | Some("None") => Ok(None),
            Some(s) => s.parse().map(Some).map_err(serde::de::Error::custom),
        }
    }
}

impl StructuredOutput for MatchResult {
    fn check(&self) -> Result<(), String> {
        if self.reason.trim().is_empty() {
            return Err("`reason` must be a non-empty string".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayDefect {
    #[serde(rename = "type", with = "fault_label")]
    pub kind: Option<FaultMode>,
    #[serde(default)]
    pub evidence: Vec<String>,
    #[serde(default)]
    pub location_hint: String,
    #[serde(default)]
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayFinding {
    pub has_defect: bool,
    #[serde(default)]
    pub defects: Vec<DisplayDefect>,
}

impl DisplayFinding {
    pub fn clean() -> Self {
        DisplayFinding {
            has_defect: false,
            defects: Vec::new(),
        }
    }

    /// Defects carrying a display fault mode.
    pub fn typed(&self) -> impl Iterator<Item = (FaultMode, &DisplayDefect)> {
        self.defects.iter().filter_map(|d| d.kind.map(|k| (k, d)))
    }
}

impl StructuredOutput for DisplayFinding {
    fn check(&self) -> Result<(), String> {
        for d in &self.defects {
            if let Some(k) = d.kind {
                if k.defect_class() != DefectClass::Display {
                    return Err(format!("`{k}` is not a display defect type"));
                }
            }
        }
        if self.has_defect && self.typed().next().is_none() {
            return Err("has_defect=true requires at least one typed entry in `defects`".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionDefect {
    #[serde(rename = "type", with = "fault_label", default)]
    pub kind: Option<FaultMode>,
    #[serde(default)]
    pub step: i64,
    #[serde(default)]
    pub reason: String,
    #[serde(default)]
    pub effect: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionFinding {
    pub has_defect: bool,
    #[serde(default)]
    pub defect: InteractionDefect,
}

impl StructuredOutput for InteractionFinding {
    fn check(&self) -> Result<(), String> {
        match (self.has_defect, self.defect.kind) {
            (true, None) => Err("has_defect=true requires a defect `type`".into()),
            (_, Some(k)) if k.defect_class() != DefectClass::Interaction => {
                Err(format!("`{k}` is not an interaction defect type"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnifiedDefect {
    #[serde(rename = "type", with = "fault_label", default)]
    pub kind: Option<FaultMode>,
    #[serde(default)]
    pub step: i64,
    #[serde(default)]
    pub evidence: Vec<String>,
    #[serde(default)]
    pub reason: String,
    #[serde(default)]
    pub effect: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnifiedFinding {
    pub has_defect: bool,
    #[serde(default)]
    pub defect: UnifiedDefect,
}

impl StructuredOutput for UnifiedFinding {
    fn check(&self) -> Result<(), String> {
        if self.has_defect && self.defect.kind.is_none() {
            return Err("has_defect=true requires a defect `type`".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyAnswer {
    pub consistent: bool,
    #[serde(default)]
    pub reason: String,
}

impl StructuredOutput for ConsistencyAnswer {
    fn check(&self) -> Result<(), String> {
        Ok(())
    }
}

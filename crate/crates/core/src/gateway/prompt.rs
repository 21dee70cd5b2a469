use std::collections::HashMap;
use std::path::Path;
use std::{fs, io};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("template references {{{0}}} but no value was supplied")]
    MissingPlaceholder(String),
}

/// Substitutes `{name}` placeholders. `{{` and `}}` produce literal braces;
/// a `{` that does not open an identifier placeholder is copied through.
/// Substituted values are not rescanned.
pub fn render_prompt<K, V>(template: &str, vars: &HashMap<K, V>) -> Result<String, PromptError>
where
    K: std::borrow::Borrow<str> + std::hash::Hash + Eq,
    V: AsRef<str>,
{
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if tail.starts_with("{{") || tail.starts_with("}}") {
            out.push_str(&tail[..1]);
            rest = &tail[2..];
            continue;
        }
        if tail.starts_with('{') {
            if let Some(end) = tail.find('}') {
                let name = &tail[1..end];
                if is_identifier(name) {
                    let value = vars
                        .get(name)
                        .ok_or_else(|| PromptError::MissingPlaceholder(name.to_string()))?;
                    out.push_str(value.as_ref());
                    rest = &tail[end + 1..];
                    continue;
                }
            }
        }
        out.push_str(&tail[..1]);
        rest = &tail[1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Annotation, logic-check and re-annotation prompt templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    /// Placeholders: `{camera_order}`, `{history_count}`, `{command}`,
    /// `{velocity}`, `{acceleration}`.
    pub annotator: String,
    /// Placeholder: `{cot}`.
    pub logic_check: String,
    /// Placeholders: `{feedback}`, `{task}`.
    pub reannotate: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            annotator: include_str!("../../templates/annotator.txt").to_string(),
            logic_check: include_str!("../../templates/logic_check.txt").to_string(),
            reannotate: include_str!("../../templates/reannotate.txt").to_string(),
        }
    }
}

impl PromptTemplates {
    /// Loads any of the three templates that have a path; the rest keep
    /// their built-in text.
    pub fn load(
        annotator: Option<&Path>,
        logic_check: Option<&Path>,
        reannotate: Option<&Path>,
    ) -> io::Result<Self> {
        let mut t = Self::default();
        if let Some(p) = annotator {
            t.annotator = fs::read_to_string(p)?;
        }
        if let Some(p) = logic_check {
            t.logic_check = fs::read_to_string(p)?;
        }
        if let Some(p) = reannotate {
            t.reannotate = fs::read_to_string(p)?;
        }
        Ok(t)
    }
}

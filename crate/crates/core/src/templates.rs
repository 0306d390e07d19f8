//! Prompt and critique templates.
//!
//! Templates are plain text files with `{{name}}` placeholders. The built-in
//! set is compiled into the crate; a templates directory may override any
//! subset of the files listed in [`TEMPLATE_FILES`].

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// File names recognised in a templates directory.
pub const TEMPLATE_FILES: [&str; 12] = [
    "plan.txt",
    "revise.txt",
    "slotfill.txt",
    "slotfill_retry.txt",
    "jsonrag.txt",
    "response.txt",
    "critique_general.txt",
    "critique_assisted_ordering.txt",
    "critique_assisted_missing_step.txt",
    "critique_assisted_added_step.txt",
    "critique_assisted_added_multiple_steps.txt",
    "critique_explicit.txt",
];

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("templates directory {0} does not exist")]
    MissingDir(PathBuf),
    #[error("failed to read template {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub plan: String,
    pub revise: String,
    pub slotfill: String,
    pub slotfill_retry: String,
    pub jsonrag: String,
    pub response: String,
    pub critique_general: String,
    pub critique_assisted_ordering: String,
    pub critique_assisted_missing_step: String,
    pub critique_assisted_added_step: String,
    pub critique_assisted_added_multiple_steps: String,
    pub critique_explicit: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Templates {
    pub fn builtin() -> Self {
        Self {
            plan: clean(include_str!("../templates/plan.txt")),
            revise: clean(include_str!("../templates/revise.txt")),
            slotfill: clean(include_str!("../templates/slotfill.txt")),
            slotfill_retry: clean(include_str!("../templates/slotfill_retry.txt")),
            jsonrag: clean(include_str!("../templates/jsonrag.txt")),
            response: clean(include_str!("../templates/response.txt")),
            critique_general: clean(include_str!("../templates/critique_general.txt")),
            critique_assisted_ordering: clean(include_str!("../templates/critique_assisted_ordering.txt")),
            critique_assisted_missing_step: clean(include_str!("../templates/critique_assisted_missing_step.txt")),
            critique_assisted_added_step: clean(include_str!("../templates/critique_assisted_added_step.txt")),
            critique_assisted_added_multiple_steps: clean(include_str!(
                "../templates/critique_assisted_added_multiple_steps.txt"
            )),
            critique_explicit: clean(include_str!("../templates/critique_explicit.txt")),
        }
    }

    /// Loads templates from `dir`. Files absent from the directory keep their
    /// built-in content.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        if !dir.is_dir() {
            return Err(TemplateError::MissingDir(dir.to_path_buf()));
        }
        let mut templates = Self::builtin();
        for name in TEMPLATE_FILES {
            let path = dir.join(name);
            match fs::read_to_string(&path) {
                Ok(text) => *templates.slot_mut(name) = clean(&text),
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(source) => return Err(TemplateError::Io { path, source }),
            }
        }
        Ok(templates)
    }

    fn slot_mut(&mut self, file: &str) -> &mut String {
        match file {
            "plan.txt" => &mut self.plan,
            "revise.txt" => &mut self.revise,
            "slotfill.txt" => &mut self.slotfill,
            "slotfill_retry.txt" => &mut self.slotfill_retry,
            "jsonrag.txt" => &mut self.jsonrag,
            "response.txt" => &mut self.response,
            "critique_general.txt" => &mut self.critique_general,
            "critique_assisted_ordering.txt" => &mut self.critique_assisted_ordering,
            "critique_assisted_missing_step.txt" => &mut self.critique_assisted_missing_step,
            "critique_assisted_added_step.txt" => &mut self.critique_assisted_added_step,
            "critique_assisted_added_multiple_steps.txt" => &mut self.critique_assisted_added_multiple_steps,
            "critique_explicit.txt" => &mut self.critique_explicit,
            other => unreachable!("unknown template file {other}"),
        }
    }
}

fn clean(text: &str) -> String {
    text.trim_end().to_string()
}

/// Substitutes `{{name}}` placeholders in a single left-to-right pass.
/// Substituted values are never re-scanned; unknown placeholders are kept.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let name = after[..end].trim();
                match vars.iter().find(|(k, _)| *k == name) {
                    Some((_, value)) => out.push_str(value),
                    None => out.push_str(&rest[start..start + 2 + end + 2]),
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

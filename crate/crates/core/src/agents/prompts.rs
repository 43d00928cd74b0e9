//! Versioned prompt templates, `prompts/<role>.v<N>.txt`.
//!
//! A template is plain text with `{{name}}` placeholders. The part before a
//! line containing only `---` is the system message, the rest is the user
//! message.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("no template for role {0}")]
    MissingRole(String),
    #[error("template {id}: placeholder {{{{{name}}}}} has no value")]
    MissingValue { id: String, name: String },
    #[error("template {0}: no '---' separator between system and user parts")]
    NoSeparator(String),
    #[error("template io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    /// `<role>.v<N>`, recorded with every call made from this template.
    pub id: String,
    system: String,
    user: String,
}

fn render(id: &str, text: &str, vars: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else {
            out.push_str(&rest[start..]);
            return Ok(out);
        };
        let name = after[..end].trim();
        let value = vars
            .get(name)
            .ok_or_else(|| TemplateError::MissingValue { id: id.to_string(), name: name.to_string() })?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

impl PromptTemplate {
    pub fn parse(id: impl Into<String>, text: &str) -> Result<Self, TemplateError> {
        let id = id.into();
        let mut system = Vec::new();
        let mut user = Vec::new();
        let mut seen = false;
        for line in text.lines() {
            if !seen && line.trim() == "---" {
                seen = true;
                continue;
            }
            if seen {
                user.push(line);
            } else {
                system.push(line);
            }
        }
        if !seen {
            return Err(TemplateError::NoSeparator(id));
        }
        Ok(Self { id, system: system.join("\n"), user: user.join("\n") })
    }

    /// Render `(system, user)`.
    pub fn render(&self, vars: &BTreeMap<&str, String>) -> Result<(String, String), TemplateError> {
        Ok((render(&self.id, &self.system, vars)?, render(&self.id, &self.user, vars)?))
    }
}

const BUILTIN: [(&str, &str); 6] = [
    ("planner.v1", include_str!("../../prompts/planner.v1.txt")),
    ("analyst_technical.v1", include_str!("../../prompts/analyst_technical.v1.txt")),
    ("analyst_fundamental.v1", include_str!("../../prompts/analyst_fundamental.v1.txt")),
    ("analyst_insider.v1", include_str!("../../prompts/analyst_insider.v1.txt")),
    ("analyst_media.v1", include_str!("../../prompts/analyst_media.v1.txt")),
    ("manager.v1", include_str!("../../prompts/manager.v1.txt")),
];

/// Templates by role; for each role the highest version wins.
#[derive(Debug, Clone)]
pub struct PromptLibrary {
    by_role: BTreeMap<String, (u32, PromptTemplate)>,
}

fn split_id(id: &str) -> Option<(&str, u32)> {
    let (role, ver) = id.rsplit_once(".v")?;
    Some((role, ver.parse().ok()?))
}

impl PromptLibrary {
    pub fn builtin() -> Self {
        let mut lib = Self { by_role: BTreeMap::new() };
        for (id, text) in BUILTIN {
            lib.add(PromptTemplate::parse(id, text).expect("builtin template"));
        }
        lib
    }

    /// Builtins overlaid with every `*.v<N>.txt` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut lib = Self::builtin();
        if !dir.exists() {
            return Ok(lib);
        }
        let entries = fs::read_dir(dir).map_err(|e| TemplateError::Io(e.to_string()))?;
        for entry in entries {
            let path = entry.map_err(|e| TemplateError::Io(e.to_string()))?.path();
            let Some(id) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix(".txt")) else {
                continue;
            };
            if split_id(id).is_none() {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|e| TemplateError::Io(e.to_string()))?;
            lib.add(PromptTemplate::parse(id, &text)?);
        }
        Ok(lib)
    }

    pub fn add(&mut self, template: PromptTemplate) {
        let Some((role, version)) = split_id(&template.id) else { return };
        let role = role.to_string();
        let replace = self.by_role.get(&role).is_none_or(|(v, _)| version >= *v);
        if replace {
            self.by_role.insert(role, (version, template));
        }
    }

    pub fn get(&self, role: &str) -> Result<&PromptTemplate, TemplateError> {
        self.by_role.get(role).map(|(_, t)| t).ok_or_else(|| TemplateError::MissingRole(role.to_string()))
    }

    /// Write the builtin templates into `dir`.
    pub fn write_builtin(dir: &Path) -> Result<(), TemplateError> {
        fs::create_dir_all(dir).map_err(|e| TemplateError::Io(e.to_string()))?;
        for (id, text) in BUILTIN {
            fs::write(dir.join(format!("{id}.txt")), text).map_err(|e| TemplateError::Io(e.to_string()))?;
        }
        Ok(())
    }
}

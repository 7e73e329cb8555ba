//! Minimal `{{placeholder}}` text templates used for judge prompts and
//! feedback rendering. Templates are plain files so deployments can override
//! the shipped defaults.

use std::fs;
use std::io;
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    body: String,
}

impl Template {
    pub fn new(body: impl Into<String>) -> Self {
        Template { body: body.into() }
    }

    pub fn from_file(path: impl AsRef<Path>) -> io::Result<Self> {
        Ok(Template::new(fs::read_to_string(path)?))
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Replaces each `{{key}}` with its value. Unknown placeholders are left
    /// in place so missing substitutions are visible rather than silent.
    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = self.body.clone();
        for (key, value) in vars {
            out = out.replace(&format!("{{{{{key}}}}}"), value);
        }
        out
    }
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::Stage;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("cannot read prompt template {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("prompt template {name}: {detail}")]
    Malformed { name: String, detail: String },
    #[error("no prompt template for stage {0}")]
    MissingStage(Stage),
    #[error("prompt template for {stage} uses `{{{{{var}}}}}` but no value was supplied")]
    MissingVariable { stage: Stage, var: String },
}

/// One stage's system prompt, with `{{name}}` slots filled at call time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub stage: Stage,
    pub version: String,
    pub body: String,
}

const BUNDLED: [(Stage, &str); 5] = [
    (Stage::Framework, include_str!("../../prompts/framework.txt")),
    (Stage::Summarize, include_str!("../../prompts/summarize.txt")),
    (Stage::Episode, include_str!("../../prompts/episode.txt")),
    (Stage::Ending, include_str!("../../prompts/ending.txt")),
    (Stage::Feedback, include_str!("../../prompts/feedback.txt")),
];

impl PromptTemplate {
    /// Parses a template file: `key: value` header lines, a `---` line,
    /// then the body.
    pub fn parse(name: &str, text: &str) -> Result<Self, PromptError> {
        let malformed = |detail: &str| PromptError::Malformed {
            name: name.to_string(),
            detail: detail.to_string(),
        };
        let (header, body) = text.split_once("\n---\n").ok_or_else(|| malformed("no `---` line"))?;
        let mut fields = BTreeMap::new();
        for line in header.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once(':').ok_or_else(|| malformed("header line without `:`"))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let stage_name = fields.get("stage").ok_or_else(|| malformed("missing `stage`"))?;
        let stage = Stage::ALL
            .into_iter()
            .find(|s| s.as_str() == stage_name)
            .ok_or_else(|| malformed("unknown stage"))?;
        let version = fields.get("version").ok_or_else(|| malformed("missing `version`"))?.clone();
        Ok(PromptTemplate { stage, version, body: body.trim().to_string() })
    }

    pub fn render(&self, vars: &BTreeMap<&str, String>) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.body.len());
        let mut rest = self.body.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let Some(end) = after.find("}}") else {
                out.push_str(&rest[start..]);
                return Ok(out);
            };
            let var = after[..end].trim();
            let value = vars.get(var).ok_or_else(|| PromptError::MissingVariable {
                stage: self.stage,
                var: var.to_string(),
            })?;
            out.push_str(value);
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

/// The set of templates in use, one per text stage.
#[derive(Debug, Clone)]
pub struct PromptLibrary {
    templates: BTreeMap<&'static str, PromptTemplate>,
}

impl PromptLibrary {
    /// The templates that ship with the crate.
    pub fn bundled() -> Self {
        let mut templates = BTreeMap::new();
        for (stage, text) in BUNDLED {
            let t = PromptTemplate::parse(stage.as_str(), text).expect("bundled prompts parse");
            templates.insert(stage.as_str(), t);
        }
        PromptLibrary { templates }
    }

    /// Loads `<stage>.txt` for every text stage from `dir`. Stages without a
    /// file keep the bundled template.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut lib = Self::bundled();
        for (stage, _) in BUNDLED {
            let path = dir.join(format!("{}.txt", stage.as_str()));
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path)
                .map_err(|source| PromptError::Io { path: path.clone(), source })?;
            let t = PromptTemplate::parse(&path.display().to_string(), &text)?;
            if t.stage != stage {
                return Err(PromptError::Malformed {
                    name: path.display().to_string(),
                    detail: format!("declares stage {} but is named for {}", t.stage, stage),
                });
            }
            lib.templates.insert(stage.as_str(), t);
        }
        Ok(lib)
    }

    pub fn get(&self, stage: Stage) -> Result<&PromptTemplate, PromptError> {
        self.templates.get(stage.as_str()).ok_or(PromptError::MissingStage(stage))
    }

    pub fn versions(&self) -> BTreeMap<String, String> {
        self.templates.iter().map(|(k, t)| (k.to_string(), t.version.clone())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_templates_parse() {
        let lib = PromptLibrary::bundled();
        for stage in [Stage::Framework, Stage::Summarize, Stage::Episode, Stage::Ending, Stage::Feedback] {
            assert_eq!(lib.get(stage).unwrap().stage, stage);
        }
        assert!(lib.get(Stage::PageImage).is_err());
    }

    #[test]
    fn render_fills_slots() {
        let t = PromptTemplate::parse("t", "stage: feedback\nversion: 1\n---\nhi {{ name }}, {{n}}").unwrap();
        let mut vars = BTreeMap::new();
        vars.insert("name", "小明".to_string());
        assert!(matches!(t.render(&vars), Err(PromptError::MissingVariable { .. })));
        vars.insert("n", "3".to_string());
        assert_eq!(t.render(&vars).unwrap(), "hi 小明, 3");
    }

    #[test]
    fn directory_overrides_bundled() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("feedback.txt"), "stage: feedback\nversion: 9\n---\nbody").unwrap();
        let lib = PromptLibrary::load_dir(dir.path()).unwrap();
        assert_eq!(lib.get(Stage::Feedback).unwrap().version, "9");
        assert_ne!(lib.get(Stage::Episode).unwrap().version, "9");

        std::fs::write(dir.path().join("episode.txt"), "stage: ending\nversion: 1\n---\nx").unwrap();
        assert!(PromptLibrary::load_dir(dir.path()).is_err());
    }
}

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Categorical,
    Continuous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnDef {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        ColumnDef {
            name: name.into(),
            kind,
        }
    }
}

/// Column layout of a tabular dataset, with the sensitive attribute and the
/// (optional) downstream target singled out.
///
/// Stored on disk as TOML:
///
/// ```toml
/// sensitive = "gender"
/// target = "income"
/// task = "classification"
/// positive_label = ">50K"   # optional
///
/// [[columns]]
/// name = "age"
/// kind = "continuous"
/// ```
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub sensitive: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    pub task: Task,
    /// Target value treated as the positive class; defaults to the last
    /// value in sorted order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_label: Option<String>,
    pub columns: Vec<ColumnDef>,
}

impl DatasetSchema {
    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::Schema("no columns".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column {}", c.name)));
            }
        }
        let sensitive = self
            .column(&self.sensitive)
            .ok_or_else(|| Error::Schema(format!("sensitive column {} not declared", self.sensitive)))?;
        if sensitive.kind != ColumnKind::Categorical {
            return Err(Error::Schema(format!(
                "sensitive column {} must be categorical",
                self.sensitive
            )));
        }
        if let Some(t) = &self.target {
            if t == &self.sensitive {
                return Err(Error::Schema("target and sensitive column coincide".into()));
            }
            let col = self
                .column(t)
                .ok_or_else(|| Error::Schema(format!("target column {t} not declared")))?;
            let want = match self.task {
                Task::Classification => ColumnKind::Categorical,
                Task::Regression => ColumnKind::Continuous,
            };
            if col.kind != want {
                return Err(Error::Schema(format!(
                    "target {t} must be {want:?} for {:?}",
                    self.task
                )));
            }
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn sensitive_index(&self) -> usize {
        self.index_of(&self.sensitive).expect("validated schema")
    }

    pub fn target_index(&self) -> Option<usize> {
        self.target.as_deref().and_then(|t| self.index_of(t))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let schema: DatasetSchema =
            toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = r#"
sensitive = "gender"
target = "income"
task = "classification"

[[columns]]
name = "age"
kind = "continuous"

[[columns]]
name = "gender"
kind = "categorical"

[[columns]]
name = "income"
kind = "categorical"
"#;

    #[test]
    fn parses_and_round_trips() {
        let schema = DatasetSchema::from_toml_str(TEXT).unwrap();
        assert_eq!(schema.columns.len(), 3);
        assert_eq!(schema.sensitive_index(), 1);
        let again = DatasetSchema::from_toml_str(&schema.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, schema);
    }

    #[test]
    fn continuous_sensitive_is_rejected() {
        let text = TEXT.replace(
            "name = \"gender\"\nkind = \"categorical\"",
            "name = \"gender\"\nkind = \"continuous\"",
        );
        assert!(DatasetSchema::from_toml_str(&text).is_err());
    }

    #[test]
    fn target_equal_to_sensitive_is_rejected() {
        let text = TEXT.replace("target = \"income\"", "target = \"gender\"");
        assert!(DatasetSchema::from_toml_str(&text).is_err());
    }
}

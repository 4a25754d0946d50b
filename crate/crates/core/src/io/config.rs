//! Run configuration.
//!
//! The file is TOML:
//!
//! ```toml
//! images = ["cells.png"]          # required, PNG or binary PGM
//! range = 6                        # window breadth, default 6
//! shares = [1, 1, 1]               # optional; must match the stages
//! defaults = [0, 0, 0]             # optional grid indices, default all zero
//! output = "runs/cells"            # default "runs"
//! mode = "batch"                   # "batch" (default) or "serve"
//! selections = "script.txt"        # optional batch selection script
//! pause_timeout_secs = 120         # optional; serve mode only
//! feasible_fill = false            # optional window extension
//! code_scheme = "flat"             # "flat" (default) or "nested"
//!
//! [veni]
//! stage = "gaussian_blur"
//! params = [{ name = "sigma", min = 0.5, step = 0.5, count = 8 }]
//!
//! [vidi]
//! stage = "surface_grid"           # params omitted: the stage's default grid
//!
//! [vici]
//! stage = "fixed_threshold"
//! ```
//!
//! Omitted phases run the `identity` stage. Relative paths resolve
//! against the directory holding the file.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodeScheme, ParamSchema, Phase, PhaseShares, Settings};
use crate::pipeline::{PipelineStages, Stage, StageKind};

pub const DEFAULT_RANGE: u64 = 6;
pub const DEFAULT_OUTPUT: &str = "runs";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Batch,
    Serve,
}

/// One phase's stage as written in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageEntry {
    pub stage: String,
    #[serde(default)]
    pub params: Option<Vec<ParamSchema>>,
}

/// The configuration as written, before validation. Also the request
/// body the service accepts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub images: Vec<PathBuf>,
    #[serde(default)]
    pub veni: Option<StageEntry>,
    #[serde(default)]
    pub vidi: Option<StageEntry>,
    #[serde(default)]
    pub vici: Option<StageEntry>,
    #[serde(default)]
    pub shares: Option<[usize; 3]>,
    #[serde(default)]
    pub range: Option<u64>,
    #[serde(default)]
    pub defaults: Option<Vec<u64>>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub selections: Option<PathBuf>,
    #[serde(default)]
    pub pause_timeout_secs: Option<f64>,
    #[serde(default)]
    pub feasible_fill: Option<bool>,
    #[serde(default)]
    pub code_scheme: Option<CodeScheme>,
}

/// A validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub images: Vec<PathBuf>,
    pub stages: PipelineStages,
    pub shares: PhaseShares,
    pub range: u64,
    pub defaults: Settings,
    pub output_root: PathBuf,
    pub mode: Mode,
    pub selections: Option<PathBuf>,
    pub pause_timeout: Option<Duration>,
    pub feasible_fill: bool,
    pub scheme: CodeScheme,
}

impl RunConfig {
    pub fn schemas(&self) -> Vec<ParamSchema> {
        self.stages.schemas()
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_owned()
    } else {
        base.join(path)
    }
}

impl ConfigDocument {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Checks every documented constraint and reports all violations at once.
    pub fn validate(&self, base: &Path) -> Result<RunConfig, ConfigError> {
        let mut problems = Vec::new();

        if self.images.is_empty() {
            problems.push("`images` must list at least one file".to_owned());
        }

        let mut stage_for = |phase: Phase, entry: &Option<StageEntry>| -> Stage {
            let Some(entry) = entry else {
                return Stage::new(StageKind::Identity);
            };
            match StageKind::from_id(&entry.stage) {
                Some(kind) => Stage::with_params(
                    kind,
                    entry
                        .params
                        .clone()
                        .unwrap_or_else(|| kind.default_params()),
                ),
                None => {
                    problems.push(format!("{phase}: unknown stage `{}`", entry.stage));
                    Stage::new(StageKind::Identity)
                }
            }
        };
        let stages = PipelineStages {
            veni: stage_for(Phase::Veni, &self.veni),
            vidi: stage_for(Phase::Vidi, &self.vidi),
            vici: stage_for(Phase::Vici, &self.vici),
        };
        problems.extend(stages.problems());

        let schemas = stages.schemas();
        let n = schemas.len();
        let implied = stages.shares();
        let shares = match self.shares {
            Some([a, b, c]) => {
                let declared = PhaseShares::new(a, b, c);
                if declared.total() != n {
                    problems.push(format!(
                        "shares {declared} sum to {}, but {n} parameters are declared",
                        declared.total()
                    ));
                } else if declared != implied {
                    problems.push(format!(
                        "shares {declared} do not match the stages' parameter counts {implied}"
                    ));
                }
                declared
            }
            None => implied,
        };

        let range = self.range.unwrap_or(DEFAULT_RANGE);
        if range == 0 {
            problems.push("`range` must be a positive integer".to_owned());
        }

        let defaults = Settings::new(self.defaults.clone().unwrap_or_else(|| vec![0; n]));
        if defaults.len() != n {
            problems.push(format!(
                "`defaults` holds {} indices, {n} parameters are declared",
                defaults.len()
            ));
        } else {
            for (i, (&index, schema)) in defaults.indices().iter().zip(&schemas).enumerate() {
                if !schema.contains(index) {
                    problems.push(format!(
                        "default index {index} for parameter {i} (`{}`) is outside its grid of {}",
                        schema.name, schema.count
                    ));
                }
            }
        }

        let pause_timeout = match self.pause_timeout_secs {
            Some(secs) if !(secs.is_finite() && secs > 0.0) => {
                problems.push(format!(
                    "`pause_timeout_secs` must be a positive number, got {secs}"
                ));
                None
            }
            Some(secs) => Some(Duration::from_secs_f64(secs)),
            None => None,
        };

        let scheme = self.code_scheme.unwrap_or_default();
        if problems.is_empty() {
            if let Err(e) = scheme.encode(&defaults, &shares) {
                problems.push(format!("default settings cannot be encoded: {e}"));
            }
        }
        if !problems.is_empty() {
            return Err(ConfigError::Invalid(problems));
        }

        Ok(RunConfig {
            images: self.images.iter().map(|p| resolve(base, p)).collect(),
            stages,
            shares,
            range,
            defaults,
            output_root: resolve(
                base,
                self.output.as_deref().unwrap_or(Path::new(DEFAULT_OUTPUT)),
            ),
            mode: self.mode.unwrap_or_default(),
            selections: self.selections.as_ref().map(|p| resolve(base, p)),
            pause_timeout,
            feasible_fill: self.feasible_fill.unwrap_or(false),
            scheme,
        })
    }
}

/// Reads and validates a TOML run configuration.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_owned(),
        source,
    })?;
    let doc = ConfigDocument::from_toml(&text).map_err(|message| ConfigError::Parse {
        path: path.to_owned(),
        message,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    doc.validate(base)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn validate(text: &str) -> Result<RunConfig, ConfigError> {
        ConfigDocument::from_toml(text)
            .map_err(|message| ConfigError::Parse {
                path: "inline".into(),
                message,
            })?
            .validate(Path::new("/data"))
    }

    fn problems(text: &str) -> Vec<String> {
        match validate(text) {
            Err(ConfigError::Invalid(p)) => p,
            other => panic!("expected validation failure, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = validate("images = [\"a.png\"]").unwrap();
        assert_eq!(cfg.images, vec![PathBuf::from("/data/a.png")]);
        assert_eq!(cfg.range, DEFAULT_RANGE);
        assert_eq!(cfg.shares, PhaseShares::new(0, 0, 0));
        assert_eq!(cfg.defaults, Settings::new(vec![]));
        assert_eq!(cfg.output_root, PathBuf::from("/data/runs"));
        assert_eq!(cfg.mode, Mode::Batch);
        assert!(!cfg.feasible_fill);
        assert_eq!(cfg.scheme, CodeScheme::Flat);
        assert_eq!(cfg.stages, PipelineStages::identity());
    }

    #[test]
    fn full_config() {
        let cfg = validate(
            r#"
images = ["/abs/x.pgm", "y.png"]
range = 4
shares = [1, 1, 1]
defaults = [2, 0, 5]
output = "out"
mode = "serve"
pause_timeout_secs = 2.5
feasible_fill = true
code_scheme = "nested"

[veni]
stage = "gaussian_blur"
params = [{ name = "sigma", min = 1.0, step = 1.0, count = 4 }]

[vidi]
stage = "plot_profile"

[vici]
stage = "fixed_threshold"
"#,
        )
        .unwrap();
        assert_eq!(cfg.images[0], PathBuf::from("/abs/x.pgm"));
        assert_eq!(cfg.stages.veni.params[0].count, 4);
        assert_eq!(cfg.stages.vidi.kind, StageKind::PlotProfile);
        assert_eq!(cfg.defaults, Settings::new(vec![2, 0, 5]));
        assert_eq!(cfg.pause_timeout, Some(Duration::from_millis(2500)));
        assert_eq!(cfg.mode, Mode::Serve);
        assert!(cfg.feasible_fill);
        assert_eq!(cfg.scheme, CodeScheme::Nested);
    }

    #[test]
    fn nested_defaults_must_be_encodable() {
        let p = problems(
            r#"
images = ["a.png"]
code_scheme = "nested"
defaults = [7, 0, 0]
[veni]
stage = "gaussian_blur"
[vidi]
stage = "surface_grid"
[vici]
stage = "fixed_threshold"
"#,
        );
        assert!(p[0].contains("cannot be encoded"), "{p:?}");
    }

    #[test]
    fn share_sum_mismatch() {
        let p = problems(
            r#"
images = ["a.png"]
shares = [1, 1, 1]
[veni]
stage = "gaussian_blur"
[vidi]
stage = "surface_grid"
[vici]
stage = "fixed_threshold"
params = [{ name = "t", min = 0, step = 16, count = 16 }, { name = "t", min = 0, step = 16, count = 16 }]
"#,
        );
        assert!(p.iter().any(|m| m.contains("sum to 3")), "{p:?}");
    }

    #[test]
    fn zero_step_is_rejected() {
        let p = problems(
            r#"
images = ["a.png"]
[veni]
stage = "gaussian_blur"
params = [{ name = "sigma", min = 1.0, step = 0.0, count = 4 }]
"#,
        );
        assert!(p.iter().any(|m| m.contains("step")), "{p:?}");
    }

    #[test]
    fn all_violations_reported_together() {
        let p = problems(
            r#"
images = []
range = 0
defaults = [9]
pause_timeout_secs = -1
[veni]
stage = "blur"
[vici]
stage = "gaussian_blur"
"#,
        );
        assert_eq!(p.len(), 6, "{p:?}");
    }

    #[test]
    fn parse_error_names_line() {
        match validate("images = [\"a.png\"]\nrange = \"six\"\n") {
            Err(ConfigError::Parse { message, .. }) => {
                assert!(message.contains("line 2"), "{message}")
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        match validate("images = [\"a.png\"]\ncolour = 1\n") {
            Err(ConfigError::Parse { message, .. }) => assert!(message.contains("colour")),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}

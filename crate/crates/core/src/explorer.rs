//! The steering loop.
//!
//! A [`Session`] holds the current settings and the evaluated window of
//! codes around their encoding. [`Session::apply_selection`] either
//! terminates with the current settings or moves to a feasible candidate
//! and evaluates the window around it. Sessions are immutable values;
//! every transition returns a new one, so a published state is always
//! fully evaluated.

use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::codec::{
    parse_code, CodeScheme, CodecError, Decoded, Infeasibility, Natural, ParamSchema, PhaseShares,
    Settings,
};
use crate::io::{self, IoError, RunConfig};
use crate::pipeline::{run_pipeline, ImageBuffer, PhaseOutputs, PipelineStages};

#[derive(Debug, Error)]
pub enum ExplorerError {
    #[error("invalid session configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
}

/// Why a selection was refused. The session is left unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SelectionError {
    #[error("code {code} is not in the current window")]
    NotInWindow { code: String },
    #[error("code {code} is infeasible: {reason}")]
    Infeasible { code: String, reason: Infeasibility },
    #[error("code {code} failed to render: {message}")]
    Failed { code: String, message: String },
    #[error("session is terminated")]
    Terminated,
}

/// Everything a session needs besides its evolving state.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub stages: PipelineStages,
    pub range: u64,
    pub defaults: Settings,
    pub images: Vec<ImageBuffer>,
    /// Run directory root; nothing is written when absent.
    pub output_root: Option<PathBuf>,
    /// Scan past infeasible codes until the window holds `range + 1`
    /// feasible candidates. Off by default.
    pub feasible_fill: bool,
    pub scheme: CodeScheme,
}

impl SessionConfig {
    pub fn new(
        stages: PipelineStages,
        range: u64,
        defaults: Settings,
        images: Vec<ImageBuffer>,
    ) -> Self {
        Self {
            stages,
            range,
            defaults,
            images,
            output_root: None,
            feasible_fill: false,
            scheme: CodeScheme::default(),
        }
    }

    pub fn shares(&self) -> PhaseShares {
        self.stages.shares()
    }

    pub fn schemas(&self) -> Vec<ParamSchema> {
        self.stages.schemas()
    }

    fn problems(&self) -> Vec<String> {
        let mut problems = self.stages.problems();
        if self.images.is_empty() {
            problems.push("at least one input image is required".to_owned());
        }
        if self.range == 0 {
            problems.push("range must be a positive integer".to_owned());
        }
        let schemas = self.schemas();
        if self.defaults.len() != schemas.len() {
            problems.push(format!(
                "default settings hold {} indices, the stages declare {} parameters",
                self.defaults.len(),
                schemas.len()
            ));
        } else {
            for (i, (&index, schema)) in self.defaults.indices().iter().zip(&schemas).enumerate() {
                if !schema.contains(index) {
                    problems.push(format!(
                        "default index {index} of parameter {i} (`{}`) is outside its grid of {}",
                        schema.name, schema.count
                    ));
                }
            }
            if problems.is_empty() {
                if let Err(e) = self.scheme.encode(&self.defaults, &self.shares()) {
                    problems.push(format!("default settings cannot be encoded: {e}"));
                }
            }
        }
        problems
    }
}

/// Decode status of one code in the window.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CandidateStatus {
    Feasible {
        settings: Settings,
    },
    Infeasible {
        reason: Infeasibility,
    },
    /// Decodes fine but a stage rejected it on at least one image.
    Failed {
        settings: Settings,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub code: Natural,
    pub status: CandidateStatus,
    /// One entry per input image; present iff the status is `Feasible`.
    pub outputs: Option<Arc<Vec<PhaseOutputs>>>,
    pub dir: Option<PathBuf>,
}

impl Candidate {
    pub fn settings(&self) -> Option<&Settings> {
        match &self.status {
            CandidateStatus::Feasible { settings } | CandidateStatus::Failed { settings, .. } => {
                Some(settings)
            }
            CandidateStatus::Infeasible { .. } => None,
        }
    }

    pub fn is_selectable(&self) -> bool {
        matches!(self.status, CandidateStatus::Feasible { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HistoryEntry {
    pub iteration: u64,
    #[serde(serialize_with = "serialize_code")]
    pub code: Natural,
}

fn serialize_code<S: serde::Serializer>(code: &Natural, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(code)
}

/// Codes `max(0, code - range/2) ..= code + range/2`.
pub fn enumerate_window(code: &Natural, range: u64) -> Vec<Natural> {
    let half = Natural::from(range / 2);
    let lower = if *code >= half {
        code - &half
    } else {
        Natural::from(0u32)
    };
    let upper = code + &half;
    let mut codes = Vec::new();
    let mut c = lower;
    while c <= upper {
        codes.push(c.clone());
        c += 1u32;
    }
    codes
}

/// Feasible-only window: scan upward from the usual lower bound until
/// `range + 1` feasible codes are found or the scan budget
/// `max(10 * range * largest grid, range + 1)` is spent.
pub fn enumerate_feasible(
    code: &Natural,
    range: u64,
    scheme: CodeScheme,
    shares: &PhaseShares,
    schemas: &[ParamSchema],
) -> Vec<Natural> {
    let largest = schemas.iter().map(|s| s.count).max().unwrap_or(1);
    let budget = range
        .saturating_mul(10)
        .saturating_mul(largest)
        .max(range + 1);
    let half = Natural::from(range / 2);
    let mut c = if *code >= half {
        code - &half
    } else {
        Natural::from(0u32)
    };
    let mut codes = Vec::new();
    for _ in 0..budget {
        if codes.len() as u64 > range {
            break;
        }
        if scheme.decode(&c, shares, schemas).is_feasible() {
            codes.push(c.clone());
        }
        c += 1u32;
    }
    codes
}

/// One state of the steering loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    config: Arc<SessionConfig>,
    iteration: u64,
    settings: Settings,
    code: Natural,
    window: Vec<Candidate>,
    history: Vec<HistoryEntry>,
}

/// Result of a selection.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Continue(Session),
    Terminated(Termination),
}

/// Final outcome of a session.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Termination {
    pub iteration: u64,
    #[serde(serialize_with = "serialize_code")]
    pub code: Natural,
    pub settings: Settings,
    pub values: Vec<f64>,
    pub history: Vec<HistoryEntry>,
}

/// Loads the configured images and starts a session at iteration 0.
pub fn init_session(config: &RunConfig) -> Result<Session, ExplorerError> {
    let images = config
        .images
        .iter()
        .map(|p| io::load_image(p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut session_config = SessionConfig::new(
        config.stages.clone(),
        config.range,
        config.defaults.clone(),
        images,
    );
    session_config.output_root = Some(config.output_root.clone());
    session_config.feasible_fill = config.feasible_fill;
    session_config.scheme = config.scheme;
    Session::new(session_config)
}

impl Session {
    /// Validates the configuration; the window is not evaluated yet.
    pub fn new(config: SessionConfig) -> Result<Self, ExplorerError> {
        let problems = config.problems();
        if !problems.is_empty() {
            return Err(ExplorerError::Validation(problems));
        }
        let code = config.scheme.encode(&config.defaults, &config.shares())?;
        Ok(Self {
            settings: config.defaults.clone(),
            config: Arc::new(config),
            iteration: 0,
            code,
            window: Vec::new(),
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    pub fn values(&self) -> Vec<f64> {
        self.settings.values(&self.config.schemas())
    }

    pub fn shares(&self) -> PhaseShares {
        self.config.shares()
    }

    pub fn range(&self) -> u64 {
        self.config.range
    }

    /// Code of the current settings.
    pub fn code(&self) -> &Natural {
        &self.code
    }

    pub fn window(&self) -> &[Candidate] {
        &self.window
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn candidate(&self, code: &Natural) -> Option<&Candidate> {
        self.window.iter().find(|c| &c.code == code)
    }

    /// Directory of the current iteration, when persisting.
    pub fn iteration_dir(&self) -> Option<PathBuf> {
        self.config
            .output_root
            .as_ref()
            .map(|root| io::rundir::iteration_dir(root, self.iteration))
    }

    /// Encodes the current settings, decodes every code in the window
    /// and runs the pipeline for each feasible one. Candidates are
    /// evaluated in parallel and persisted to private directories.
    pub fn evaluate_window(&self) -> Result<Session, ExplorerError> {
        let shares = self.shares();
        let schemas = self.config.schemas();
        let scheme = self.config.scheme;
        let code = scheme.encode(&self.settings, &shares)?;
        let codes = if self.config.feasible_fill {
            enumerate_feasible(&code, self.config.range, scheme, &shares, &schemas)
        } else {
            enumerate_window(&code, self.config.range)
        };
        let iteration_dir = self.iteration_dir();
        let window = codes
            .into_par_iter()
            .enumerate()
            .map(|(ordinal, c)| {
                self.evaluate_candidate(c, &shares, &schemas, iteration_dir.as_ref(), ordinal)
            })
            .collect::<Result<Vec<_>, IoError>>()?;
        if let Some(dir) = &iteration_dir {
            io::rundir::write_window_index(dir, self.iteration, &window)?;
        }
        Ok(Session {
            config: Arc::clone(&self.config),
            iteration: self.iteration,
            settings: self.settings.clone(),
            code,
            window,
            history: self.history.clone(),
        })
    }

    fn evaluate_candidate(
        &self,
        code: Natural,
        shares: &PhaseShares,
        schemas: &[ParamSchema],
        iteration_dir: Option<&PathBuf>,
        ordinal: usize,
    ) -> Result<Candidate, IoError> {
        let settings = match self.config.scheme.decode(&code, shares, schemas) {
            Decoded::Infeasible(reason) => {
                return Ok(Candidate {
                    code,
                    status: CandidateStatus::Infeasible { reason },
                    outputs: None,
                    dir: None,
                })
            }
            Decoded::Feasible(settings) => settings,
        };
        let outputs: Result<Vec<PhaseOutputs>, _> = self
            .config
            .images
            .iter()
            .map(|img| run_pipeline(img, &settings, &self.config.stages))
            .collect();
        let mut candidate = match outputs {
            Ok(outputs) => Candidate {
                code,
                status: CandidateStatus::Feasible { settings },
                outputs: Some(Arc::new(outputs)),
                dir: None,
            },
            Err(e) => Candidate {
                code,
                status: CandidateStatus::Failed {
                    settings,
                    message: e.to_string(),
                },
                outputs: None,
                dir: None,
            },
        };
        if let (Some(dir), true) = (iteration_dir, candidate.is_selectable()) {
            let cand_dir = io::rundir::candidate_dir(dir, &candidate.code);
            io::save_outputs(
                &candidate,
                self.config.scheme,
                &self.config.stages,
                schemas,
                self.iteration,
                ordinal,
                &cand_dir,
            )?;
            candidate.dir = Some(cand_dir);
        }
        Ok(candidate)
    }

    /// Checks that `code` names a selectable candidate of this window.
    pub fn check_selection(&self, code: &Natural) -> Result<&Candidate, SelectionError> {
        let candidate = self
            .candidate(code)
            .ok_or_else(|| SelectionError::NotInWindow {
                code: code.to_string(),
            })?;
        match &candidate.status {
            CandidateStatus::Feasible { .. } => Ok(candidate),
            CandidateStatus::Infeasible { reason } => Err(SelectionError::Infeasible {
                code: code.to_string(),
                reason: reason.clone(),
            }),
            CandidateStatus::Failed { message, .. } => Err(SelectionError::Failed {
                code: code.to_string(),
                message: message.clone(),
            }),
        }
    }

    /// `None` terminates with the current settings; a code moves the
    /// session to that candidate and evaluates the next window.
    pub fn apply_selection(&self, selection: Option<&Natural>) -> Result<Step, ExplorerError> {
        let Some(code) = selection else {
            return Ok(Step::Terminated(self.terminate()));
        };
        let candidate = self.check_selection(code)?;
        let settings = candidate
            .settings()
            .cloned()
            .expect("selectable candidates carry settings");
        let mut history = self.history.clone();
        history.push(HistoryEntry {
            iteration: self.iteration,
            code: code.clone(),
        });
        let next = Session {
            config: Arc::clone(&self.config),
            iteration: self.iteration + 1,
            code: code.clone(),
            settings,
            window: Vec::new(),
            history,
        };
        Ok(Step::Continue(next.evaluate_window()?))
    }

    /// Ends the session with the current settings.
    pub fn terminate(&self) -> Termination {
        Termination {
            iteration: self.iteration,
            code: self.code.clone(),
            settings: self.settings.clone(),
            values: self.values(),
            history: self.history.clone(),
        }
    }

    /// Selections that replay this session's history from iteration 0.
    pub fn replay_script(&self) -> Vec<Option<Natural>> {
        self.history.iter().map(|h| Some(h.code.clone())).collect()
    }

    pub fn summary(&self) -> SessionSummary {
        let schemas = self.config.schemas();
        SessionSummary {
            iteration: self.iteration,
            code: self.code.to_string(),
            scheme: self.config.scheme,
            shares: self.shares(),
            settings: self.settings.clone(),
            values: self.values(),
            window: self
                .window
                .iter()
                .map(|c| CandidateSummary {
                    code: c.code.to_string(),
                    center: c.code == self.code,
                    values: c.settings().map(|s| s.values(&schemas)),
                    status: c.status.clone(),
                })
                .collect(),
            history: self.history.clone(),
        }
    }
}

/// Serializable view of a session.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSummary {
    pub iteration: u64,
    pub code: String,
    pub scheme: CodeScheme,
    pub shares: PhaseShares,
    pub settings: Settings,
    pub values: Vec<f64>,
    pub window: Vec<CandidateSummary>,
    pub history: Vec<HistoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateSummary {
    pub code: String,
    pub center: bool,
    #[serde(flatten)]
    pub status: CandidateStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

/// Every state a headless run went through.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Session>,
    pub termination: Option<Termination>,
}

impl Trajectory {
    pub fn last(&self) -> &Session {
        self.states
            .last()
            .expect("a trajectory has at least one state")
    }

    pub fn settings(&self) -> Vec<Settings> {
        self.states.iter().map(|s| s.settings().clone()).collect()
    }
}

#[derive(Debug, Error)]
#[error("selection {step}: {source}")]
pub struct BatchError {
    pub step: usize,
    #[source]
    pub source: ExplorerError,
}

/// Replays the loop headlessly, feeding `selections` in order.
///
/// Stops at the first `None`; if the script runs out first the final
/// state stays active and `termination` is `None`.
pub fn run_batch(
    config: SessionConfig,
    selections: &[Option<Natural>],
) -> Result<Trajectory, BatchError> {
    let start = Session::new(config)
        .and_then(|s| s.evaluate_window())
        .map_err(|source| BatchError { step: 0, source })?;
    let mut states = vec![start];
    for (step, selection) in selections.iter().enumerate() {
        let current = states.last().expect("non-empty");
        match current
            .apply_selection(selection.as_ref())
            .map_err(|source| BatchError { step, source })?
        {
            Step::Continue(next) => states.push(next),
            Step::Terminated(end) => {
                return Ok(Trajectory {
                    states,
                    termination: Some(end),
                })
            }
        }
    }
    Ok(Trajectory {
        states,
        termination: None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("selection script line {line}: expected a decimal code or NONE, found `{text}`")]
pub struct ScriptError {
    pub line: usize,
    pub text: String,
}

/// Parses a selection script: one decimal code or `NONE` per line.
/// Blank lines and `#` comments are skipped.
pub fn parse_selections(text: &str) -> Result<Vec<Option<Natural>>, ScriptError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line == "NONE" {
            out.push(None);
            continue;
        }
        let code = parse_code(line).ok_or_else(|| ScriptError {
            line: i + 1,
            text: line.to_owned(),
        })?;
        out.push(Some(code));
    }
    Ok(out)
}

/// Writes a selection script that [`parse_selections`] reads back.
pub fn format_selections(selections: &[Option<Natural>]) -> String {
    selections
        .iter()
        .map(|s| match s {
            Some(code) => format!("{code}\n"),
            None => "NONE\n".to_owned(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{Stage, StageKind};

    fn nat(v: u64) -> Natural {
        Natural::from(v)
    }

    fn codes(v: &[u64]) -> Vec<Natural> {
        v.iter().map(|&c| nat(c)).collect()
    }

    fn small_config() -> SessionConfig {
        let stages = PipelineStages {
            veni: Stage::with_params(
                StageKind::GaussianBlur,
                vec![ParamSchema::new("sigma", 0.5, 0.5, 4)],
            ),
            vidi: Stage::new(StageKind::Identity),
            vici: Stage::with_params(
                StageKind::FixedThreshold,
                vec![ParamSchema::new("t", 32.0, 32.0, 6)],
            ),
        };
        let img = ImageBuffer::from_fn(12, 10, |x, y| (x * 20 + y * 3) as u8);
        SessionConfig::new(stages, 8, Settings::new(vec![0, 0]), vec![img])
    }

    #[test]
    fn window_examples() {
        assert_eq!(enumerate_window(&nat(10), 4), codes(&[8, 9, 10, 11, 12]));
        assert_eq!(enumerate_window(&nat(1), 6), codes(&[0, 1, 2, 3, 4]));
        assert_eq!(enumerate_window(&nat(0), 0), codes(&[0]));
        assert_eq!(enumerate_window(&nat(10), 5), codes(&[8, 9, 10, 11, 12]));
    }

    #[test]
    fn init_validates() {
        let mut cfg = small_config();
        cfg.defaults = Settings::new(vec![0, 9]);
        match Session::new(cfg) {
            Err(ExplorerError::Validation(p)) => assert_eq!(p.len(), 1, "{p:?}"),
            other => panic!("expected validation error, got {other:?}"),
        }
        let mut cfg = small_config();
        cfg.images.clear();
        cfg.range = 0;
        match Session::new(cfg) {
            Err(ExplorerError::Validation(p)) => assert_eq!(p.len(), 2, "{p:?}"),
            other => panic!("expected validation error, got {other:?}"),
        }
        let s = Session::new(small_config()).unwrap();
        assert_eq!(s.iteration(), 0);
        assert!(s.history().is_empty());
    }

    #[test]
    fn center_candidate_reproduces_settings() {
        let s = Session::new(small_config())
            .unwrap()
            .evaluate_window()
            .unwrap();
        let center = s.candidate(s.code()).unwrap();
        assert_eq!(center.settings(), Some(s.settings()));
        assert!(center.outputs.is_some());
    }

    #[test]
    fn selection_gate() {
        let s = Session::new(small_config())
            .unwrap()
            .evaluate_window()
            .unwrap();
        let outside = nat(1000);
        assert!(matches!(
            s.apply_selection(Some(&outside)),
            Err(ExplorerError::Selection(SelectionError::NotInWindow { .. }))
        ));
        let infeasible = s
            .window()
            .iter()
            .find(|c| matches!(c.status, CandidateStatus::Infeasible { .. }))
            .expect("window has an infeasible code");
        assert!(matches!(
            s.apply_selection(Some(&infeasible.code)),
            Err(ExplorerError::Selection(SelectionError::Infeasible { .. }))
        ));
    }

    #[test]
    fn center_selection_is_fixed_point() {
        let s = Session::new(small_config())
            .unwrap()
            .evaluate_window()
            .unwrap();
        let Step::Continue(next) = s.apply_selection(Some(&s.code().clone())).unwrap() else {
            panic!("expected continuation");
        };
        assert_eq!(next.iteration(), 1);
        assert_eq!(next.settings(), s.settings());
        assert_eq!(next.history().len(), 1);
    }

    #[test]
    fn none_terminates_with_current_settings() {
        let s = Session::new(small_config())
            .unwrap()
            .evaluate_window()
            .unwrap();
        let Step::Terminated(end) = s.apply_selection(None).unwrap() else {
            panic!("expected termination");
        };
        assert_eq!(&end.settings, s.settings());
        assert_eq!(end.values, vec![0.5, 32.0]);
    }

    #[test]
    fn feasible_fill_returns_only_feasible_codes() {
        let cfg = small_config();
        let shares = cfg.shares();
        let schemas = cfg.schemas();
        for scheme in [CodeScheme::Flat, CodeScheme::Nested] {
            let center = scheme.encode(&cfg.defaults, &shares).unwrap();
            let window = enumerate_feasible(&center, 8, scheme, &shares, &schemas);
            assert_eq!(window.len(), 9);
            assert!(window.contains(&center));
            for c in &window {
                assert!(scheme.decode(c, &shares, &schemas).is_feasible());
            }
        }
    }

    #[test]
    fn script_parsing() {
        let script = "3\n\n# comment\n12 # trailing\nNONE\n";
        assert_eq!(
            parse_selections(script).unwrap(),
            vec![Some(nat(3)), Some(nat(12)), None]
        );
        assert_eq!(
            parse_selections(&format_selections(&[Some(nat(5)), None])).unwrap(),
            vec![Some(nat(5)), None]
        );
        assert_eq!(
            parse_selections("4\nnone\n").unwrap_err(),
            ScriptError {
                line: 2,
                text: "none".into()
            }
        );
    }
}

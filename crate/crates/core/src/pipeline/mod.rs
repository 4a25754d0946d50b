//! Three-phase stage framework.
//!
//! A pipeline is one stage per phase: Veni (filtering), Vidi
//! (visualization) and Vici (segmentation). Any phase may be the
//! `identity` stage. A single image is threaded through all three; Vidi
//! stages pass their input through unchanged and attach their renderings
//! as auxiliary output.

pub mod filters;
pub mod image;
pub mod render;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{ParamSchema, Phase, PhaseShares, Settings};

pub use self::filters::SurfaceGrid;
pub use self::image::ImageBuffer;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StageError {
    #[error("parameter `{name}` = {value} {reason}")]
    Parameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("image is {width}x{height}, needs at least {min}x{min}")]
    TooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
    #[error("image has a single intensity; no two classes to separate")]
    Degenerate,
    #[error("row {row} is outside an image of height {height}")]
    RowOutOfRange { row: i64, height: usize },
    #[error("image dimensions must be positive")]
    EmptyImage,
    #[error("expected {expected} samples, found {found}")]
    SampleCount { expected: usize, found: usize },
    #[error("stage `{stage}` takes {expected} parameters, got {found}")]
    Arity {
        stage: &'static str,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{phase} stage `{stage}` failed: {source}")]
pub struct PipelineError {
    pub phase: Phase,
    pub stage: &'static str,
    #[source]
    pub source: StageError,
}

/// Data a stage produces beside its primary image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Auxiliary {
    Profile { row: usize, series: Vec<f64> },
    Surface(SurfaceGrid),
    Threshold { value: u8 },
}

impl Auxiliary {
    /// CSV rendering: `index,value` for profiles, one grid row per line
    /// for surfaces, a single `threshold,<t>` line otherwise.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self {
            Auxiliary::Profile { series, .. } => {
                out.push_str("x,value\n");
                for (x, v) in series.iter().enumerate() {
                    out.push_str(&format!("{x},{v}\n"));
                }
            }
            Auxiliary::Surface(grid) => {
                for row in grid.values.chunks(grid.cols) {
                    let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                    out.push_str(&line.join(","));
                    out.push('\n');
                }
            }
            Auxiliary::Threshold { value } => out.push_str(&format!("threshold,{value}\n")),
        }
        out
    }
}

/// What one phase emits.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOutput {
    /// The image handed to the next phase.
    pub image: ImageBuffer,
    pub auxiliary: Option<Auxiliary>,
    /// Visual rendering of the auxiliary data, if the stage draws one.
    pub rendering: Option<ImageBuffer>,
}

impl PhaseOutput {
    pub fn image_only(image: ImageBuffer) -> Self {
        Self {
            image,
            auxiliary: None,
            rendering: None,
        }
    }
}

/// Outputs of the three phases, in order.
pub type PhaseOutputs = [PhaseOutput; 3];

/// Phase a stage belongs to; `Identity` fits any phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StagePhase {
    Veni,
    Vidi,
    Vici,
    Identity,
}

impl StagePhase {
    pub fn fits(self, phase: Phase) -> bool {
        matches!(
            (self, phase),
            (StagePhase::Identity, _)
                | (StagePhase::Veni, Phase::Veni)
                | (StagePhase::Vidi, Phase::Vidi)
                | (StagePhase::Vici, Phase::Vici)
        )
    }
}

/// Every registered stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageKind {
    Identity,
    GaussianBlur,
    SobelEdges,
    PlotProfile,
    SurfaceGrid,
    OtsuThreshold,
    FixedThreshold,
}

/// How a parameter's grid values must look for a stage to accept them.
#[derive(Debug, Clone, Copy)]
struct ParamRule {
    name: &'static str,
    integer: bool,
    lower: f64,
    lower_inclusive: bool,
    upper: Option<f64>,
}

impl StageKind {
    pub const ALL: [StageKind; 7] = [
        StageKind::Identity,
        StageKind::GaussianBlur,
        StageKind::SobelEdges,
        StageKind::PlotProfile,
        StageKind::SurfaceGrid,
        StageKind::OtsuThreshold,
        StageKind::FixedThreshold,
    ];

    pub fn id(self) -> &'static str {
        match self {
            StageKind::Identity => "identity",
            StageKind::GaussianBlur => "gaussian_blur",
            StageKind::SobelEdges => "sobel_edges",
            StageKind::PlotProfile => "plot_profile",
            StageKind::SurfaceGrid => "surface_grid",
            StageKind::OtsuThreshold => "otsu_threshold",
            StageKind::FixedThreshold => "fixed_threshold",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.id() == id)
    }

    pub fn phase(self) -> StagePhase {
        match self {
            StageKind::Identity => StagePhase::Identity,
            StageKind::GaussianBlur | StageKind::SobelEdges => StagePhase::Veni,
            StageKind::PlotProfile | StageKind::SurfaceGrid => StagePhase::Vidi,
            StageKind::OtsuThreshold | StageKind::FixedThreshold => StagePhase::Vici,
        }
    }

    fn rules(self) -> &'static [ParamRule] {
        const SIGMA: ParamRule = ParamRule {
            name: "sigma",
            integer: false,
            lower: 0.0,
            lower_inclusive: false,
            upper: Some(filters::MAX_SIGMA),
        };
        const ROW: ParamRule = ParamRule {
            name: "row",
            integer: true,
            lower: 0.0,
            lower_inclusive: true,
            upper: None,
        };
        const DOWNSAMPLE: ParamRule = ParamRule {
            name: "downsample",
            integer: true,
            lower: 1.0,
            lower_inclusive: true,
            upper: None,
        };
        const THRESHOLD: ParamRule = ParamRule {
            name: "t",
            integer: true,
            lower: 0.0,
            lower_inclusive: true,
            upper: Some(255.0),
        };
        match self {
            StageKind::GaussianBlur => &[SIGMA],
            StageKind::PlotProfile => &[ROW],
            StageKind::SurfaceGrid => &[DOWNSAMPLE],
            StageKind::FixedThreshold => &[THRESHOLD],
            StageKind::Identity | StageKind::SobelEdges | StageKind::OtsuThreshold => &[],
        }
    }

    /// Parameter names in encoding order.
    pub fn param_names(self) -> Vec<&'static str> {
        self.rules().iter().map(|r| r.name).collect()
    }

    /// Grid used when a configuration does not declare one.
    pub fn default_params(self) -> Vec<ParamSchema> {
        match self {
            StageKind::GaussianBlur => vec![ParamSchema::new("sigma", 0.5, 0.5, 8)],
            StageKind::PlotProfile => vec![ParamSchema::new("row", 0.0, 8.0, 16)],
            StageKind::SurfaceGrid => vec![ParamSchema::new("downsample", 1.0, 1.0, 8)],
            StageKind::FixedThreshold => vec![ParamSchema::new("t", 0.0, 16.0, 16)],
            StageKind::Identity | StageKind::SobelEdges | StageKind::OtsuThreshold => Vec::new(),
        }
    }

    /// Problems with using `params` as this stage's grids.
    pub fn check_params(self, params: &[ParamSchema]) -> Vec<String> {
        let rules = self.rules();
        if params.len() != rules.len() {
            return vec![format!(
                "stage `{}` takes {} parameter(s) ({}), {} declared",
                self.id(),
                rules.len(),
                self.param_names().join(", "),
                params.len()
            )];
        }
        let mut problems = Vec::new();
        for (rule, schema) in rules.iter().zip(params) {
            if schema.name != rule.name {
                problems.push(format!(
                    "stage `{}` expects parameter `{}`, found `{}`",
                    self.id(),
                    rule.name,
                    schema.name
                ));
            }
            let schema_problems = schema.problems();
            if !schema_problems.is_empty() {
                problems.extend(schema_problems);
                continue;
            }
            if rule.integer && (schema.min.fract() != 0.0 || schema.step.fract() != 0.0) {
                problems.push(format!(
                    "parameter `{}` of `{}` takes integer values; min and step must be integers",
                    schema.name,
                    self.id()
                ));
            }
            // grids are increasing, so the endpoints bound every value
            let (first, last) = (schema.value(0), schema.value(schema.count - 1));
            let low_ok = if rule.lower_inclusive {
                first >= rule.lower
            } else {
                first > rule.lower
            };
            if !low_ok {
                problems.push(format!(
                    "parameter `{}` of `{}` starts at {first}, below its lower bound {}",
                    schema.name,
                    self.id(),
                    rule.lower
                ));
            }
            if let Some(upper) = rule.upper {
                if last > upper {
                    problems.push(format!(
                        "parameter `{}` of `{}` reaches {last}, above its upper bound {upper}",
                        schema.name,
                        self.id()
                    ));
                }
            }
        }
        problems
    }

    /// Runs the stage with concrete parameter values.
    pub fn apply(self, img: &ImageBuffer, values: &[f64]) -> Result<PhaseOutput, StageError> {
        let expected = self.rules().len();
        if values.len() != expected {
            return Err(StageError::Arity {
                stage: self.id(),
                expected,
                found: values.len(),
            });
        }
        let integer = |v: f64, name: &'static str| {
            if v.fract() == 0.0 && v.is_finite() {
                Ok(v as i64)
            } else {
                Err(StageError::Parameter {
                    name,
                    value: v,
                    reason: "must be an integer",
                })
            }
        };
        Ok(match self {
            StageKind::Identity => PhaseOutput::image_only(img.clone()),
            StageKind::GaussianBlur => {
                PhaseOutput::image_only(filters::gaussian_blur(img, values[0])?)
            }
            StageKind::SobelEdges => PhaseOutput::image_only(filters::sobel_edges(img)?),
            StageKind::PlotProfile => {
                let row = integer(values[0], "row")?;
                let series = filters::plot_profile(img, row)?;
                PhaseOutput {
                    image: img.clone(),
                    rendering: Some(render::profile_chart(&series)),
                    auxiliary: Some(Auxiliary::Profile {
                        row: row as usize,
                        series,
                    }),
                }
            }
            StageKind::SurfaceGrid => {
                let grid = filters::surface_grid(img, integer(values[0], "downsample")?)?;
                PhaseOutput {
                    image: img.clone(),
                    rendering: Some(render::surface_shading(&grid, img.width(), img.height())),
                    auxiliary: Some(Auxiliary::Surface(grid)),
                }
            }
            StageKind::OtsuThreshold => {
                let (t, binary) = filters::otsu_threshold(img)?;
                PhaseOutput {
                    image: binary,
                    auxiliary: Some(Auxiliary::Threshold { value: t }),
                    rendering: None,
                }
            }
            StageKind::FixedThreshold => {
                let t = integer(values[0], "t")?;
                PhaseOutput::image_only(filters::fixed_threshold(img, t)?)
            }
        })
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// A registry entry: stage id, its phase and its parameter grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDescriptor {
    pub id: String,
    pub phase: StagePhase,
    pub params: Vec<ParamSchema>,
}

/// All stages with their default grids.
pub fn registry() -> Vec<StageDescriptor> {
    StageKind::ALL
        .into_iter()
        .map(|kind| StageDescriptor {
            id: kind.id().to_owned(),
            phase: kind.phase(),
            params: kind.default_params(),
        })
        .collect()
}

/// A stage bound to the grids it is explored over.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub kind: StageKind,
    pub params: Vec<ParamSchema>,
}

impl Stage {
    pub fn new(kind: StageKind) -> Self {
        Self {
            kind,
            params: kind.default_params(),
        }
    }

    pub fn with_params(kind: StageKind, params: Vec<ParamSchema>) -> Self {
        Self { kind, params }
    }

    pub fn descriptor(&self) -> StageDescriptor {
        StageDescriptor {
            id: self.kind.id().to_owned(),
            phase: self.kind.phase(),
            params: self.params.clone(),
        }
    }
}

/// One stage per phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineStages {
    pub veni: Stage,
    pub vidi: Stage,
    pub vici: Stage,
}

impl PipelineStages {
    pub fn identity() -> Self {
        Self {
            veni: Stage::new(StageKind::Identity),
            vidi: Stage::new(StageKind::Identity),
            vici: Stage::new(StageKind::Identity),
        }
    }

    pub fn get(&self, phase: Phase) -> &Stage {
        match phase {
            Phase::Veni => &self.veni,
            Phase::Vidi => &self.vidi,
            Phase::Vici => &self.vici,
        }
    }

    /// Shares implied by each stage's parameter count.
    pub fn shares(&self) -> PhaseShares {
        PhaseShares::new(
            self.veni.params.len(),
            self.vidi.params.len(),
            self.vici.params.len(),
        )
    }

    /// Parameter grids in encoding order.
    pub fn schemas(&self) -> Vec<ParamSchema> {
        Phase::ALL
            .into_iter()
            .flat_map(|p| self.get(p).params.iter().cloned())
            .collect()
    }

    /// Every problem with this stage assignment.
    pub fn problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for phase in Phase::ALL {
            let stage = self.get(phase);
            if !stage.kind.phase().fits(phase) {
                problems.push(format!(
                    "stage `{}` is a {:?} stage and cannot run as {phase}",
                    stage.kind,
                    stage.kind.phase()
                ));
            }
            problems.extend(stage.kind.check_params(&stage.params));
        }
        problems
    }
}

/// Runs Veni, Vidi and Vici in order, each on the previous phase's image.
///
/// `settings` must be shaped by `stages.shares()`.
pub fn run_pipeline(
    img: &ImageBuffer,
    settings: &Settings,
    stages: &PipelineStages,
) -> Result<PhaseOutputs, PipelineError> {
    let shares = stages.shares();
    assert_eq!(
        settings.len(),
        shares.total(),
        "settings do not match the stage parameters"
    );
    let run = |phase: Phase, input: &ImageBuffer| {
        let stage = stages.get(phase);
        let values = Settings::new(settings.phase(&shares, phase).to_vec()).values(&stage.params);
        stage
            .kind
            .apply(input, &values)
            .map_err(|source| PipelineError {
                phase,
                stage: stage.kind.id(),
                source,
            })
    };
    let veni = run(Phase::Veni, img)?;
    let vidi = run(Phase::Vidi, &veni.image)?;
    let vici = run(Phase::Vici, &vidi.image)?;
    Ok([veni, vidi, vici])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> ImageBuffer {
        ImageBuffer::from_fn(16, 12, |x, y| (x * 12 + y * 5) as u8)
    }

    #[test]
    fn identity_pipeline_is_identity() {
        let img = ramp();
        let out = run_pipeline(&img, &Settings::new(vec![]), &PipelineStages::identity()).unwrap();
        for phase in &out {
            assert_eq!(phase.image, img);
        }
    }

    #[test]
    fn registry_lists_every_stage() {
        let reg = registry();
        assert_eq!(reg.len(), StageKind::ALL.len());
        let blur = reg.iter().find(|d| d.id == "gaussian_blur").unwrap();
        assert_eq!(blur.phase, StagePhase::Veni);
        assert_eq!(blur.params[0].name, "sigma");
        for kind in StageKind::ALL {
            assert!(
                kind.check_params(&kind.default_params()).is_empty(),
                "{kind}"
            );
            assert_eq!(StageKind::from_id(kind.id()), Some(kind));
        }
    }

    #[test]
    fn phases_chain_images() {
        let stages = PipelineStages {
            veni: Stage::new(StageKind::GaussianBlur),
            vidi: Stage::new(StageKind::SurfaceGrid),
            vici: Stage::new(StageKind::FixedThreshold),
        };
        let img = ramp();
        let settings = Settings::new(vec![1, 2, 4]);
        let out = run_pipeline(&img, &settings, &stages).unwrap();
        let blurred = filters::gaussian_blur(&img, 1.0).unwrap();
        assert_eq!(out[0].image, blurred);
        assert_eq!(out[1].image, blurred);
        match &out[1].auxiliary {
            Some(Auxiliary::Surface(grid)) => assert_eq!(grid.block, 3),
            other => panic!("unexpected auxiliary {other:?}"),
        }
        assert_eq!(out[2].image, filters::binarize(&blurred, 64));
    }

    #[test]
    fn stage_failure_names_phase() {
        let stages = PipelineStages {
            veni: Stage::new(StageKind::Identity),
            vidi: Stage::new(StageKind::Identity),
            vici: Stage::new(StageKind::OtsuThreshold),
        };
        let err = run_pipeline(
            &ImageBuffer::filled(4, 4, 3),
            &Settings::new(vec![]),
            &stages,
        )
        .unwrap_err();
        assert_eq!(err.phase, Phase::Vici);
        assert_eq!(err.source, StageError::Degenerate);
    }

    #[test]
    fn misplaced_stage_is_reported() {
        let stages = PipelineStages {
            veni: Stage::new(StageKind::OtsuThreshold),
            vidi: Stage::new(StageKind::Identity),
            vici: Stage::new(StageKind::Identity),
        };
        assert_eq!(stages.problems().len(), 1);
    }

    #[test]
    fn param_rules() {
        let bad_sigma = vec![ParamSchema::new("sigma", 0.0, 1.0, 3)];
        assert_eq!(StageKind::GaussianBlur.check_params(&bad_sigma).len(), 1);
        let too_high = vec![ParamSchema::new("sigma", 1.0, 4.0, 8)];
        assert_eq!(StageKind::GaussianBlur.check_params(&too_high).len(), 1);
        let fractional = vec![ParamSchema::new("t", 0.0, 0.5, 4)];
        assert_eq!(StageKind::FixedThreshold.check_params(&fractional).len(), 1);
        let renamed = vec![ParamSchema::new("thr", 0.0, 1.0, 4)];
        assert_eq!(StageKind::FixedThreshold.check_params(&renamed).len(), 1);
        assert_eq!(StageKind::SobelEdges.check_params(&renamed).len(), 1);
    }

    #[test]
    fn aux_csv() {
        let aux = Auxiliary::Threshold { value: 7 };
        assert_eq!(aux.to_csv(), "threshold,7\n");
        let aux = Auxiliary::Profile {
            row: 0,
            series: vec![1.0, 2.5],
        };
        assert_eq!(aux.to_csv(), "x,value\n0,1\n1,2.5\n");
    }
}

//! Run directory layout:
//!
//! ```text
//! <root>/iter_<k>/window.toml
//! <root>/iter_<k>/cand_<code>/veni.png
//! <root>/iter_<k>/cand_<code>/vidi.png
//! <root>/iter_<k>/cand_<code>/vidi_render.png   (when Vidi draws one)
//! <root>/iter_<k>/cand_<code>/<phase>_aux.csv    (when a phase has auxiliary data)
//! <root>/iter_<k>/cand_<code>/vici.png
//! <root>/iter_<k>/cand_<code>/manifest.toml
//! ```
//!
//! With several input images, image `i > 0` gets the same files under
//! `cand_<code>/image_<i>/`. Nothing written depends on wall-clock time,
//! so identical runs produce identical trees.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::save_png;
use super::IoError;
use crate::codec::{parse_code, CodeScheme, Natural, ParamSchema, Phase, Settings};
use crate::explorer::{Candidate, CandidateStatus};
use crate::pipeline::{PhaseOutputs, PipelineStages};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const WINDOW_FILE: &str = "window.toml";

pub fn iteration_dir(root: &Path, iteration: u64) -> PathBuf {
    root.join(format!("iter_{iteration}"))
}

pub fn candidate_dir(iteration_dir: &Path, code: &Natural) -> PathBuf {
    iteration_dir.join(format!("cand_{code}"))
}

/// Per-candidate record. `iteration` and `ordinal` (position in the
/// window) serve as its logical timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub code: String,
    pub scheme: String,
    pub iteration: u64,
    pub ordinal: usize,
    pub shares: String,
    pub settings: Vec<u64>,
    pub values: Vec<f64>,
    pub params: Vec<String>,
    pub veni_stage: String,
    pub vidi_stage: String,
    pub vici_stage: String,
    pub images: usize,
}

impl Manifest {
    pub fn code(&self) -> Option<Natural> {
        parse_code(&self.code)
    }

    pub fn settings(&self) -> Settings {
        Settings::new(self.settings.clone())
    }
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| IoError::from_io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| IoError::from_io(path, e))
}

fn save_phase_files(outputs: &PhaseOutputs, dir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|e| IoError::from_io(dir, e))?;
    for (phase, output) in Phase::ALL.into_iter().zip(outputs) {
        save_png(&output.image, &dir.join(format!("{phase}.png")))?;
        if let Some(rendering) = &output.rendering {
            save_png(rendering, &dir.join(format!("{phase}_render.png")))?;
        }
        if let Some(aux) = &output.auxiliary {
            let path = dir.join(format!("{phase}_aux.csv"));
            fs::write(&path, aux.to_csv()).map_err(|e| IoError::from_io(&path, e))?;
        }
    }
    Ok(())
}

/// Persists a feasible candidate's outputs and manifest into `dir`.
/// Returns the manifest path.
pub fn save_outputs(
    candidate: &Candidate,
    scheme: CodeScheme,
    stages: &PipelineStages,
    schemas: &[ParamSchema],
    iteration: u64,
    ordinal: usize,
    dir: &Path,
) -> Result<PathBuf, IoError> {
    let (CandidateStatus::Feasible { settings }, Some(outputs)) =
        (&candidate.status, &candidate.outputs)
    else {
        return Err(IoError::Manifest {
            path: dir.to_owned(),
            detail: format!("candidate {} has no outputs to save", candidate.code),
        });
    };
    for (i, image_outputs) in outputs.iter().enumerate() {
        let target = if i == 0 {
            dir.to_owned()
        } else {
            dir.join(format!("image_{i}"))
        };
        save_phase_files(image_outputs, &target)?;
    }
    let manifest = Manifest {
        code: candidate.code.to_string(),
        scheme: scheme.to_string(),
        iteration,
        ordinal,
        shares: stages.shares().to_string(),
        settings: settings.indices().to_vec(),
        values: settings.values(schemas),
        params: schemas.iter().map(|s| s.name.clone()).collect(),
        veni_stage: stages.veni.kind.id().to_owned(),
        vidi_stage: stages.vidi.kind.id().to_owned(),
        vici_stage: stages.vici.kind.id().to_owned(),
        images: outputs.len(),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = toml::to_string(&manifest).map_err(|e| IoError::Manifest {
        path: path.clone(),
        detail: e.to_string(),
    })?;
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<Manifest, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::from_io(path, e))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| IoError::Manifest {
        path: path.to_owned(),
        detail: e.to_string(),
    })?;
    if manifest.code().is_none() {
        return Err(IoError::Manifest {
            path: path.to_owned(),
            detail: format!("code `{}` is not a decimal natural", manifest.code),
        });
    }
    Ok(manifest)
}

#[derive(Serialize)]
struct WindowIndex<'a> {
    iteration: u64,
    candidates: Vec<WindowEntry<'a>>,
}

#[derive(Serialize)]
struct WindowEntry<'a> {
    code: String,
    #[serde(flatten)]
    status: &'a CandidateStatus,
}

/// Lists every code of the window with its status, infeasible ones included.
pub fn write_window_index(dir: &Path, iteration: u64, window: &[Candidate]) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|e| IoError::from_io(dir, e))?;
    let index = WindowIndex {
        iteration,
        candidates: window
            .iter()
            .map(|c| WindowEntry {
                code: c.code.to_string(),
                status: &c.status,
            })
            .collect(),
    };
    let path = dir.join(WINDOW_FILE);
    let text = toml::to_string(&index).map_err(|e| IoError::Manifest {
        path: path.clone(),
        detail: e.to_string(),
    })?;
    write_atomic(&path, text.as_bytes())
}

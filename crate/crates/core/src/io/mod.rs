//! Image files, run directories and run configuration.

pub mod config;
pub mod image;
pub mod rundir;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use self::config::{parse_config, ConfigError, Mode, RunConfig};
pub use self::image::{load_image, save_png};
pub use self::rundir::{read_manifest, save_outputs, Manifest};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: no such file", path.display())]
    NotFound { path: PathBuf },
    #[error("{}: not a PNG or binary PGM file", path.display())]
    UnsupportedFormat { path: PathBuf },
    #[error("{}: corrupt image: {detail}", path.display())]
    Corrupt { path: PathBuf, detail: String },
    #[error("{}: {detail}", path.display())]
    Manifest { path: PathBuf, detail: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IoError {
    pub fn from_io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            IoError::NotFound {
                path: path.to_owned(),
            }
        } else {
            IoError::Io {
                path: path.to_owned(),
                source,
            }
        }
    }
}

//! Library behind the `lesion` binary: manifests, configuration, the
//! synthetic fixture generator and one function per subcommand.

pub mod commands;
pub mod config;
pub mod fixture;
pub mod manifest;

use std::fmt;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

/// Failure classified for the process exit code: 1 for bad input, 2 for
/// internal faults.
#[derive(Debug)]
pub enum CliError {
    Input(anyhow::Error),
    Internal(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Internal(_) => 2,
        }
    }

    pub fn input(msg: impl fmt::Display) -> Self {
        CliError::Input(anyhow::anyhow!("{msg}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, e) = match self {
            CliError::Input(e) => ("input error", e),
            CliError::Internal(e) => ("internal error", e),
        };
        write!(f, "{kind}: {e:#}")
    }
}

/// Errors raised by the core library are input-driven by construction;
/// anything else is treated as internal.
impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        if e.chain().any(|c| c.is::<lesion_core::Error>()) {
            CliError::Input(e)
        } else {
            CliError::Internal(e)
        }
    }
}

impl From<lesion_core::Error> for CliError {
    fn from(e: lesion_core::Error) -> Self {
        CliError::Input(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

const LOCK_NAME: &str = ".lesion.lock";

/// Advisory lock on an output directory, released on drop.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::Input(anyhow::anyhow!("creating {}: {e}", dir.display())))?;
        let path = dir.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::input(format!(
                "output directory {} is in use by another invocation (delete {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(CliError::Internal(e.into())),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let a = OutputLock::acquire(dir.path()).unwrap();
        assert_eq!(OutputLock::acquire(dir.path()).err().map(|e| e.exit_code()), Some(1));
        drop(a);
        assert!(OutputLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn core_errors_are_input_errors() {
        let e: CliError = anyhow::Error::from(lesion_core::Error::EmptyMask)
            .context("while sampling")
            .into();
        assert_eq!(e.exit_code(), 1);
        let e: CliError = anyhow::anyhow!("unexpected").into();
        assert_eq!(e.exit_code(), 2);
    }
}

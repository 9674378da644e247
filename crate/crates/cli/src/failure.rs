use std::fmt;
use std::path::Path;

/// A command failure and the process exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Unreadable, malformed or inconsistent input; exit 1.
    Input(String),
    /// The model could not be fitted or evaluated; exit 2.
    Model(String),
}

impl Failure {
    /// Prefixes the message with the file it concerns.
    pub fn at(self, path: &Path) -> Failure {
        match self {
            Failure::Input(m) => Failure::Input(format!("{}: {m}", path.display())),
            Failure::Model(m) => Failure::Model(format!("{}: {m}", path.display())),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Model(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(m) => write!(f, "input error: {m}"),
            Failure::Model(m) => write!(f, "model error: {m}"),
        }
    }
}

pub type CmdResult<T> = Result<T, Failure>;

/// Tags a library error with the stage it came from.
pub trait Stage<T> {
    fn input(self) -> CmdResult<T>;
    fn model(self) -> CmdResult<T>;
    fn input_at(self, path: &Path) -> CmdResult<T>;
}

impl<T, E: fmt::Display> Stage<T> for Result<T, E> {
    fn input(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Input(e.to_string()))
    }

    fn model(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Model(e.to_string()))
    }

    fn input_at(self, path: &Path) -> CmdResult<T> {
        self.map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
    }
}

pub fn write_file(path: &Path, contents: &str) -> CmdResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).input_at(dir)?;
    }
    std::fs::write(path, contents).input_at(path)
}

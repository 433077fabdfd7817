use std::fmt;

pub const CONFIG: i32 = 2;
pub const DATA: i32 = 3;
pub const DIVERGED: i32 = 4;
pub const EQUIVALENCE: i32 = 5;
pub const MALFORMED_MODEL: i32 = 6;
pub const OTHER: i32 = 1;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(CONFIG, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(DATA, message)
    }

    /// Default mapping; callers override where the context is known.
    pub fn from_core(e: bika::Error) -> Self {
        use bika::Error::*;
        let code = match &e {
            Config(_) | Unsupported(_) | ShapeMismatch { .. } | DimensionOverflow(_) => CONFIG,
            Dataset(_) | EmptyDataset | WrongMagic { .. } | Truncated { .. } => DATA,
            Diverged { .. } => DIVERGED,
            NonFinite { .. } => EQUIVALENCE,
            Malformed { .. } | Version(_) | Model(_) => MALFORMED_MODEL,
            _ => OTHER,
        };
        Self::new(code, e.to_string())
    }

    pub fn with_code(self, code: i32) -> Self {
        Self { code, ..self }
    }
}

impl From<bika::Error> for CliError {
    fn from(e: bika::Error) -> Self {
        Self::from_core(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

use std::fmt;

/// Exit code for invalid requests, arguments or input files.
pub const EXIT_VALIDATION: u8 = 2;
/// Exit code for data on which the requested test is undefined.
pub const EXIT_DEGENERATE: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub message: String,
    pub code: u8,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { message: message.into(), code: EXIT_VALIDATION }
    }

    pub fn io(e: impl fmt::Display) -> Self {
        Self::usage(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<rare_indep::Error> for CliError {
    fn from(e: rare_indep::Error) -> Self {
        let code = if e.is_degenerate_data() { EXIT_DEGENERATE } else { EXIT_VALIDATION };
        Self { message: e.to_string(), code }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::io(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::io(e)
    }
}

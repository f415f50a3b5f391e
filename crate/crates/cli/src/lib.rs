//! Helpers shared by the `tilesel` and `worldgen` binaries.

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use tilesel::world::GenConfig;
use tilesel::Error;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

/// 2 for bad input, 3 for anything that failed while running.
pub fn exit_code(err: &Error) -> ExitCode {
    if err.is_config() {
        ExitCode::from(EXIT_CONFIG)
    } else {
        ExitCode::from(EXIT_RUNTIME)
    }
}

pub fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
}

/// Sizes the global rayon pool. Call once, before any parallel work.
pub fn set_threads(threads: Option<usize>) -> Result<(), Error> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Generation settings from a JSON file, or the full-scale defaults.
pub fn load_gen_config(path: Option<&Path>) -> Result<GenConfig, Error> {
    let Some(path) = path else {
        return Ok(GenConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: GenConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("generation config {}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Error messages already embed their causes.
pub fn report(err: &Error) {
    eprintln!("error: {err}");
}

//! Command-line workflow and experiment sweeps on top of `spoil-core`.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod files;

/// Process exit status for an error: 1 invalid input, 2 numerical failure, 3 I/O failure.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use spoil_core::Error;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Numerical(_) | Error::NoConvergence { .. } | Error::Diverged { .. } => 2,
                Error::Io(_) => 3,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

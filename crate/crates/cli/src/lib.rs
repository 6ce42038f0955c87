//! Command-line driver: one subcommand per pipeline stage, sharing a TOML
//! configuration file.

pub mod commands;
pub mod config;
pub mod desk;

/// One-line JSON description of a failure, for stderr.
pub fn error_line(err: &anyhow::Error) -> String {
    let message = err.chain().map(|e| e.to_string()).collect::<Vec<_>>().join(": ").replace(['\n', '\r'], " ");
    serde_json::json!({ "status": "error", "kind": error_kind(err), "message": message }).to_string()
}

/// Variant name of the innermost library error, if any.
fn error_kind(err: &anyhow::Error) -> String {
    let debug = err
        .chain()
        .find_map(|e| {
            e.downcast_ref::<dapt_core::Error>()
                .map(|e| format!("{e:?}"))
                .or_else(|| e.downcast_ref::<dapt_model::ModelError>().map(|e| format!("{e:?}")))
        })
        .unwrap_or_else(|| "Error".into());
    debug.chars().take_while(|c| c.is_ascii_alphanumeric()).collect()
}

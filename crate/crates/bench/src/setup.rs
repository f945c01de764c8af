//! Turns command-line backend and executor specs into live handles.

use std::path::Path;

use thiserror::Error;
use toc_core::execution::{Executor, SandboxPool, ScriptTable, ScriptedExecutor, WorkerCommand};
use toc_core::gateway::{Gateway, ModelPool, ModelSpec, RemoteBackend, RetryPolicy, ScriptedBackend, Transcript};

#[derive(Debug, Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn config<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> ConfigError + '_ {
    move |e| ConfigError(format!("{context}: {e}"))
}

fn split_spec<'a>(spec: &'a str, what: &str) -> Result<(&'a str, &'a str), ConfigError> {
    spec.split_once(':')
        .ok_or_else(|| ConfigError(format!("{what} `{spec}` must look like KIND:VALUE")))
}

pub fn load_models(path: &Path) -> Result<ModelPool, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(config(&path.display().to_string()))?;
    serde_json::from_str(&text).map_err(config(&path.display().to_string()))
}

/// `scripted:TRANSCRIPT` or `remote:MODELS`. With a scripted backend the
/// model pool comes from `models` or defaults to one scripted model.
pub fn build_backend(spec: &str, models: Option<&Path>) -> Result<(Gateway, ModelPool), ConfigError> {
    let (kind, value) = split_spec(spec, "backend")?;
    match kind {
        "scripted" => {
            let transcript = Transcript::load(Path::new(value)).map_err(config(value))?;
            let pool = match models {
                Some(p) => load_models(p)?,
                None => ModelPool::new(vec![ModelSpec::scripted("scripted")]).map_err(config("models"))?,
            };
            Ok((Gateway::from_backend(ScriptedBackend::new(transcript)), pool))
        }
        "remote" => {
            let pool = load_models(Path::new(value))?;
            let backend = RemoteBackend::new(&pool, RetryPolicy::default()).map_err(config(value))?;
            Ok((Gateway::from_backend(backend), pool))
        }
        other => Err(ConfigError(format!("unknown backend kind `{other}` (scripted|remote)"))),
    }
}

/// `scripted:TABLE` or `sandbox:COMMAND LINE`.
pub fn build_executor(spec: &str) -> Result<Box<dyn Executor>, ConfigError> {
    let (kind, value) = split_spec(spec, "executor")?;
    match kind {
        "scripted" => {
            let table = ScriptTable::load(Path::new(value)).map_err(config(value))?;
            Ok(Box::new(ScriptedExecutor::new(table)))
        }
        "sandbox" => {
            let command = WorkerCommand::parse(value).map_err(config("sandbox command"))?;
            Ok(Box::new(SandboxPool::new(command)))
        }
        other => Err(ConfigError(format!("unknown executor kind `{other}` (scripted|sandbox)"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn malformed_specs_are_config_errors() {
        assert!(build_backend("nonsense", None).is_err());
        assert!(build_backend("carrier-pigeon:x", None).is_err());
        assert!(build_backend("scripted:/nonexistent/transcript.json", None).is_err());
        assert!(build_executor("sandbox:").is_err());
        assert!(build_executor("scripted:/nonexistent.json").is_err());
    }

    #[test]
    fn scripted_backend_defaults_to_one_model() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        std::fs::write(&path, Transcript::new().to_json()).unwrap();
        let (_, pool) = build_backend(&format!("scripted:{}", path.display()), None).unwrap();
        assert_eq!(pool.models().len(), 1);
    }
}

use std::path::PathBuf;

use richtx::regionfuse::{GenerationConfig, GuidanceSpec};
use serde_json::Value;

pub const DATA_DIR_ENV: &str = "RICHTX_DATA_DIR";
pub const WORKERS_ENV: &str = "RICHTX_WORKERS";

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Job artifacts live under `<data_dir>/jobs/<job_id>/`, uploaded
    /// images under `<data_dir>/images/`.
    pub data_dir: PathBuf,
    pub workers: usize,
    /// Jobs allowed to wait for a worker before submissions are refused.
    pub queue_capacity: usize,
    /// Settings a job request's `config` is layered over.
    pub defaults: GenerationConfig,
}

impl GatewayConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        GatewayConfig {
            data_dir: data_dir.into(),
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            queue_capacity: 256,
            defaults: GenerationConfig::default(),
        }
    }

    /// Reads `RICHTX_DATA_DIR` (default `./richtx-data`) and
    /// `RICHTX_WORKERS` (default: available parallelism).
    pub fn from_env() -> Result<Self, String> {
        let dir = std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("richtx-data"), PathBuf::from);
        let mut cfg = Self::new(dir);
        if let Ok(w) = std::env::var(WORKERS_ENV) {
            cfg.workers = match w.trim().parse::<usize>() {
                Ok(n) if n > 0 => n,
                _ => return Err(format!("{WORKERS_ENV} must be a positive integer, got {w:?}")),
            };
        }
        Ok(cfg)
    }

    /// Defaults suited to the toy backend, whose targets assume no
    /// classifier-free guidance.
    pub fn toy_defaults(mut self) -> Self {
        self.defaults.guidance = GuidanceSpec {
            cfg_scale: 1.0,
            ..self.defaults.guidance
        };
        self
    }
}

/// Overlays `patch` onto `base`, recursing into objects; any other value in
/// `patch` replaces the one in `base`.
pub fn merge_json(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, p) => *slot = p.clone(),
    }
}

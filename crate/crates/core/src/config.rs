//! Engine hyperparameters loaded from JSON with full defaulting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean-field update order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UpdateSchedule {
    /// Every pixel updated from the previous iterate.
    #[default]
    Parallel,
    /// Raster order, in place.
    Sequential,
}

/// Hyperparameters of the refinement pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Bandwidth of the pairwise Gaussian kernel, in feature units.
    pub sigma: f64,
    /// Weight of the pairwise term.
    pub lambda_f: f64,
    /// Weight of the structural-violation term in the uncertainty map.
    pub lambda_a: f64,
    /// Sharpness of the fusion softmax.
    pub beta: f64,
    /// Convergence threshold on the max per-pixel L1 change of `Q`.
    pub epsilon: f64,
    pub max_iters: usize,
    pub update_schedule: UpdateSchedule,
    /// Chebyshev radius of the pairwise window; 0 means fully connected.
    pub kernel_radius: usize,
    /// Number of stochastic probability maps for predictive entropy.
    pub mc_passes: usize,
    /// Standard deviation of the logit noise used to synthesize stochastic maps.
    pub noise_scale: f64,
    /// Label compatibility matrix; Potts when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compatibility: Option<Vec<Vec<f64>>>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            lambda_f: 0.5,
            lambda_a: 0.3,
            beta: 1.0,
            epsilon: 1e-4,
            max_iters: 20,
            update_schedule: UpdateSchedule::Parallel,
            kernel_radius: 5,
            mc_passes: 8,
            noise_scale: 0.5,
            compatibility: None,
        }
    }
}

impl EngineConfig {
    /// Checks every field constraint, naming the first violated field.
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("sigma", self.sigma),
            ("lambda_f", self.lambda_f),
            ("lambda_a", self.lambda_a),
            ("beta", self.beta),
            ("epsilon", self.epsilon),
            ("noise_scale", self.noise_scale),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::config(name, format!("must be finite, got {v}")));
            }
        }
        if self.sigma <= 0.0 {
            return Err(Error::config("sigma", format!("must be > 0, got {}", self.sigma)));
        }
        if self.beta <= 0.0 {
            return Err(Error::config("beta", format!("must be > 0, got {}", self.beta)));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::config(
                "epsilon",
                format!("must be > 0, got {}", self.epsilon),
            ));
        }
        if self.lambda_f < 0.0 {
            return Err(Error::config(
                "lambda_f",
                format!("must be >= 0, got {}", self.lambda_f),
            ));
        }
        if self.lambda_a < 0.0 {
            return Err(Error::config(
                "lambda_a",
                format!("must be >= 0, got {}", self.lambda_a),
            ));
        }
        if self.noise_scale < 0.0 {
            return Err(Error::config(
                "noise_scale",
                format!("must be >= 0, got {}", self.noise_scale),
            ));
        }
        if self.max_iters < 1 {
            return Err(Error::config("max_iters", "must be >= 1"));
        }
        if self.mc_passes < 1 {
            return Err(Error::config("mc_passes", "must be >= 1"));
        }
        if let Some(mu) = &self.compatibility {
            let k = mu.len();
            for (a, row) in mu.iter().enumerate() {
                if row.len() != k {
                    return Err(Error::config("compatibility", "matrix must be square"));
                }
                for (b, &v) in row.iter().enumerate() {
                    if !v.is_finite() || v < 0.0 {
                        return Err(Error::config(
                            "compatibility",
                            format!("entry [{a}][{b}] = {v} must be finite and >= 0"),
                        ));
                    }
                    if a == b && v != 0.0 {
                        return Err(Error::config(
                            "compatibility",
                            format!("diagonal entry [{a}][{a}] must be 0"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Parses and validates a JSON document; absent fields take defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: EngineConfig = serde_json::from_str(text).map_err(|e| {
            let field = unknown_field(&e.to_string()).unwrap_or_else(|| "<document>".into());
            Error::config(&field, e.to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical JSON form; reloading it yields an equal config.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn unknown_field(msg: &str) -> Option<String> {
    let rest = msg.strip_prefix("unknown field `")?;
    Some(rest.split('`').next()?.to_string())
}

/// Loads an [`EngineConfig`] from a JSON file.
pub fn load_config(path: impl AsRef<Path>) -> Result<EngineConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    EngineConfig::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_reported_defaults() {
        let c = EngineConfig::from_json("{}").unwrap();
        assert_eq!(c.lambda_f, 0.5);
        assert_eq!(c.beta, 1.0);
        assert_eq!(c.lambda_a, 0.3);
        assert_eq!(c.sigma, 1.0);
        assert_eq!(c.epsilon, 1e-4);
        assert_eq!(c.max_iters, 20);
        assert_eq!(c.update_schedule, UpdateSchedule::Parallel);
        assert_eq!(c.kernel_radius, 5);
        assert_eq!(c.mc_passes, 8);
        assert_eq!(c.noise_scale, 0.5);
        assert!(c.compatibility.is_none());
    }

    #[test]
    fn negative_beta_names_field() {
        match EngineConfig::from_json(r#"{"beta": -1}"#) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "beta"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn overrides_merge_with_defaults() {
        let c = EngineConfig::from_json(r#"{"epsilon": 1e-6, "max_iters": 50}"#).unwrap();
        assert_eq!(c.epsilon, 1e-6);
        assert_eq!(c.max_iters, 50);
        assert_eq!(
            EngineConfig {
                epsilon: 1e-6,
                max_iters: 50,
                ..Default::default()
            },
            c
        );
    }

    #[test]
    fn rejects_unknown_and_invalid_fields() {
        match EngineConfig::from_json(r#"{"lamda_f": 1}"#) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "lamda_f"),
            other => panic!("expected config error, got {other:?}"),
        }
        for doc in [
            r#"{"sigma": 0}"#,
            r#"{"epsilon": 0}"#,
            r#"{"max_iters": 0}"#,
            r#"{"mc_passes": 0}"#,
            r#"{"noise_scale": -0.1}"#,
            r#"{"compatibility": [[0, 1], [1, 1]]}"#,
            r#"{"update_schedule": "random"}"#,
        ] {
            assert!(EngineConfig::from_json(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn sequential_schedule_parses() {
        let c = EngineConfig::from_json(r#"{"update_schedule": "sequential"}"#).unwrap();
        assert_eq!(c.update_schedule, UpdateSchedule::Sequential);
    }
}

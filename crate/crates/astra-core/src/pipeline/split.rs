//! Validation/test splitting with no overlap in tools or servers between
//! the two sides: whole servers are assigned to one side or the other.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::TaskSample;

use super::PipelineError;

/// Which servers landed on which side; written as `split.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub val_fraction: f64,
    pub validation_servers: Vec<String>,
    pub test_servers: Vec<String>,
}

impl SplitManifest {
    pub fn side_of(&self, server_id: &str) -> Option<&'static str> {
        if self.validation_servers.iter().any(|s| s == server_id) {
            Some("validation")
        } else if self.test_servers.iter().any(|s| s == server_id) {
            Some("test")
        } else {
            None
        }
    }

    pub fn write(&self, path: &std::path::Path) -> Result<(), PipelineError> {
        std::fs::write(
            path,
            serde_json::to_string_pretty(self).expect("manifest serializes"),
        )?;
        Ok(())
    }

    pub fn read(path: &std::path::Path) -> Result<Self, PipelineError> {
        let body = std::fs::read_to_string(path)?;
        serde_json::from_str(&body).map_err(|e| PipelineError::DatasetFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Partitions servers (not samples) by seeded shuffle, assigning whole
/// servers to the validation side until it holds roughly `val_fraction` of
/// the samples. Both sides end up non-empty.
pub fn split_dataset(
    samples: &[TaskSample],
    seed: u64,
    val_fraction: f64,
) -> Result<(Vec<TaskSample>, Vec<TaskSample>, SplitManifest), PipelineError> {
    if !(0.0 < val_fraction && val_fraction < 1.0) {
        return Err(PipelineError::CorpusSchemaError(format!(
            "val_fraction {val_fraction} outside (0, 1)"
        )));
    }
    let mut servers: Vec<String> = Vec::new();
    let mut counts: std::collections::BTreeMap<String, usize> = Default::default();
    for sample in samples {
        let server = sample
            .server_id()
            .ok_or_else(|| PipelineError::CorpusSchemaError("task without tools".into()))?
            .to_string();
        if !counts.contains_key(&server) {
            servers.push(server.clone());
        }
        *counts.entry(server).or_insert(0) += 1;
    }
    if counts.len() < 2 {
        return Err(PipelineError::SplitImpossible);
    }

    servers.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    servers.shuffle(&mut rng);

    let target = val_fraction * samples.len() as f64;
    let mut validation_servers: Vec<String> = Vec::new();
    let mut val_count = 0_usize;
    let mut test_servers: Vec<String> = Vec::new();
    for server in servers {
        // Keep at least one server for the test side.
        if (val_count as f64) < target && validation_servers.len() + 1 < counts.len() {
            val_count += counts[&server];
            validation_servers.push(server);
        } else {
            test_servers.push(server);
        }
    }
    validation_servers.sort();
    test_servers.sort();

    let manifest = SplitManifest {
        seed,
        val_fraction,
        validation_servers,
        test_servers,
    };
    let validation: Vec<TaskSample> = samples
        .iter()
        .filter(|s| manifest.side_of(s.server_id().unwrap()) == Some("validation"))
        .cloned()
        .collect();
    let test: Vec<TaskSample> = samples
        .iter()
        .filter(|s| manifest.side_of(s.server_id().unwrap()) == Some("test"))
        .cloned()
        .collect();
    Ok((validation, test, manifest))
}

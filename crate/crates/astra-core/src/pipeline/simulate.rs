//! Match simulation: every (task, required tool) pair becomes a correct
//! request; incorrect requests are split into wrong matches (same server,
//! outside the required set) and null matches (a different server picked
//! uniformly), at the configured ratio.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::{DatasetConfig, MatchLabel, MatchRequest, TaskSample, ToolRegistry};

use super::PipelineError;

/// Cumulative quota: emit round(cum_target) - emitted so far, keeping the
/// running total within half a sample of the exact ratio at every step.
struct Quota {
    per_task: f64,
    cum_target: f64,
    emitted: u64,
}

impl Quota {
    fn new(ratio: f64) -> Self {
        Self {
            per_task: ratio,
            cum_target: 0.0,
            emitted: 0,
        }
    }

    fn due(&mut self, n_tools: u8) -> usize {
        self.cum_target += self.per_task * n_tools as f64;
        let due = (self.cum_target.round() as i64 - self.emitted as i64).max(0) as usize;
        self.emitted += due as u64;
        due
    }
}

/// Simulates correct/wrong/null match requests over generated tasks.
///
/// Tasks whose server exposes fewer than 2N tools are skipped entirely
/// (with a warning). Every emitted request re-validates its label
/// invariant by construction.
pub fn simulate_matches(
    samples: &[TaskSample],
    cfg: &DatasetConfig,
    registry: &ToolRegistry,
) -> Result<Vec<MatchRequest>, PipelineError> {
    cfg.validate()?;
    if registry.server_count() < 2 {
        return Err(PipelineError::NullSamplingImpossible);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut wrong_quota = Quota::new(cfg.wrong_ratio);
    let mut null_quota = Quota::new(cfg.null_ratio);
    let mut requests = Vec::new();

    for task in samples {
        let server_id = task
            .server_id()
            .ok_or_else(|| PipelineError::CorpusSchemaError("task without tools".into()))?;
        let server_tools = registry.tools_of(server_id).ok_or_else(|| {
            PipelineError::CorpusSchemaError(format!("task server {server_id:?} not in registry"))
        })?;
        if server_tools.len() < 2 * task.n_tools as usize {
            tracing::warn!(
                sample = %task.sample_id,
                server = %server_id,
                have = server_tools.len(),
                need = 2 * task.n_tools as usize,
                "server too small for wrong-match sampling; task skipped"
            );
            continue;
        }

        for tool in &task.required_tools {
            requests.push(MatchRequest::new(
                task.clone(),
                tool.clone(),
                MatchLabel::Correct,
            )?);
        }

        // Wrong matches: same server, no overlap with the correct tools.
        let wrong_due = wrong_quota.due(task.n_tools);
        let mut candidates: Vec<_> = server_tools
            .iter()
            .filter(|t| !task.requires_scope(&t.scope))
            .cloned()
            .collect();
        candidates.shuffle(&mut rng);
        for tool in candidates.into_iter().take(wrong_due) {
            requests.push(MatchRequest::new(task.clone(), tool, MatchLabel::Wrong)?);
        }

        // Null matches: uniform tool from a uniformly chosen other server.
        let null_due = null_quota.due(task.n_tools);
        let other_servers: Vec<&str> = registry.server_ids().filter(|s| *s != server_id).collect();
        for _ in 0..null_due {
            let server = other_servers[rng.random_range(0..other_servers.len())];
            let tools = registry.tools_of(server).expect("registry server");
            let tool = tools[rng.random_range(0..tools.len())].clone();
            requests.push(MatchRequest::new(task.clone(), tool, MatchLabel::Null)?);
        }
    }
    Ok(requests)
}

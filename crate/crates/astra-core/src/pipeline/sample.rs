//! Tool-set sampling: seeded shuffle-and-chunk with top-up, covering every
//! tool of a server at least once.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::{McpServerManifest, ToolDescriptor};

use super::PipelineError;

/// Partitions the manifest's tools into ceil(T/N) sets of size N.
///
/// Tools are shuffled (seeded) and chunked; a short final chunk is topped
/// up with tools resampled uniformly from the earlier chunks, never
/// duplicating a tool within a set. Every tool appears in at least one set.
pub fn sample_tool_sets(
    manifest: &McpServerManifest,
    n_tools: u8,
    seed: u64,
) -> Result<Vec<Vec<ToolDescriptor>>, PipelineError> {
    let n = n_tools as usize;
    let total = manifest.tools.len();
    if n == 0 || total < n {
        return Err(PipelineError::InsufficientTools {
            have: total,
            need: n.max(1),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = manifest.tools.clone();
    shuffled.shuffle(&mut rng);

    let mut sets: Vec<Vec<ToolDescriptor>> = shuffled.chunks(n).map(|c| c.to_vec()).collect();
    if let Some(last) = sets.last_mut() {
        if last.len() < n {
            let missing = n - last.len();
            // Uniform resample from tools already placed in earlier chunks;
            // those cannot collide with the remainder tools in `last`.
            let pool_len = total - last.len();
            let mut indices: Vec<usize> = (0..pool_len).collect();
            indices.shuffle(&mut rng);
            for idx in indices.into_iter().take(missing) {
                last.push(shuffled[idx].clone());
            }
        }
    }
    Ok(sets)
}

//! Scene-stratified train / val / test partitioning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::annotations::ImageRecord;
use crate::error::{Error, Result};

/// Integer sizes proportional to `ratios` summing to `n` (largest remainder,
/// ties to the earlier split).
pub fn apportion(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| r * n as f64);
    let mut sizes = exact.map(|e| e.floor() as usize);
    let mut rest = n - sizes.iter().sum::<usize>();
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    for &k in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        sizes[k] += 1;
        rest -= 1;
    }
    sizes
}

/// Splits `records` into disjoint `(train, val, test)` sets.
///
/// Records are grouped by scene (in label order), shuffled within each group
/// with `seed`, and dealt out by smooth weighted round robin against the
/// global target sizes. Every scene therefore lands in each split in
/// proportion to the global ratios, up to rounding.
pub fn split_dataset(
    records: &[ImageRecord],
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Vec<ImageRecord>, Vec<ImageRecord>, Vec<ImageRecord>)> {
    if ratios.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(Error::config("split.ratios", format!("ratios must be positive, got {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config("split.ratios", format!("ratios must sum to 1, got {sum}")));
    }
    let n = records.len();
    let targets = apportion(n, ratios);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ordered: Vec<&ImageRecord> = Vec::with_capacity(n);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.sort_by_key(|&i| (records[i].scene, records[i].image.clone()));
    for group in indices.chunk_by(|&a, &b| records[a].scene == records[b].scene) {
        let mut group = group.to_vec();
        group.shuffle(&mut rng);
        ordered.extend(group.iter().map(|&i| &records[i]));
    }

    let mut parts: [Vec<ImageRecord>; 3] = Default::default();
    let mut current = [0i64; 3];
    for rec in ordered {
        for k in 0..3 {
            current[k] += targets[k] as i64;
        }
        let k = (0..3).max_by_key(|&k| (current[k], std::cmp::Reverse(k))).unwrap();
        current[k] -= n as i64;
        parts[k].push(rec.clone());
    }
    let [train, val, test] = parts;
    Ok((train, val, test))
}

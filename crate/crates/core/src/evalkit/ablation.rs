//! Module on/off matrices evaluated against the all-off baseline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationFlags {
    pub sgie: bool,
    pub pld: bool,
    pub msdrf: bool,
}

impl AblationFlags {
    pub const BASELINE: AblationFlags = AblationFlags {
        sgie: false,
        pld: false,
        msdrf: false,
    };

    pub fn new(sgie: bool, pld: bool, msdrf: bool) -> Self {
        Self { sgie, pld, msdrf }
    }

    pub fn is_baseline(&self) -> bool {
        *self == Self::BASELINE
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub flags: AblationFlags,
    pub map_50_95: f64,
    pub delta: f64,
}

/// All eight combinations: baseline, singles, pairs, then everything.
pub fn full_matrix() -> Vec<AblationFlags> {
    let mut m: Vec<AblationFlags> = (0..8u8)
        .map(|b| AblationFlags::new(b & 1 != 0, b & 2 != 0, b & 4 != 0))
        .collect();
    m.sort_by_key(|f| (f.sgie as u8 + f.pld as u8 + f.msdrf as u8, !f.sgie, !f.pld, !f.msdrf));
    m
}

/// Scores every row with `evaluate` (train + evaluate one model) and reports
/// deltas against the baseline row. Rows are evaluated in matrix order.
pub fn run_ablation(
    matrix: &[AblationFlags],
    mut evaluate: impl FnMut(AblationFlags) -> Result<f64>,
) -> Result<Vec<AblationRow>> {
    if matrix.is_empty() {
        return Err(Error::invalid("ablation matrix is empty"));
    }
    if !matrix.iter().any(AblationFlags::is_baseline) {
        return Err(Error::invalid("ablation matrix must include the all-off baseline"));
    }
    let scores = matrix.iter().map(|&f| evaluate(f)).collect::<Result<Vec<f64>>>()?;
    let baseline = matrix
        .iter()
        .zip(&scores)
        .find(|(f, _)| f.is_baseline())
        .map(|(_, &s)| s)
        .expect("baseline checked above");
    Ok(matrix
        .iter()
        .zip(scores)
        .map(|(&flags, map_50_95)| AblationRow {
            flags,
            map_50_95,
            delta: map_50_95 - baseline,
        })
        .collect())
}

/// Columns `sgie,pld,msdrf,map_50_95,delta`; flags as 1/0, values with six decimals.
pub fn write_ablation_csv(path: impl AsRef<Path>, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sgie", "pld", "msdrf", "map_50_95", "delta"])?;
    for r in rows {
        let f = |b: bool| if b { "1" } else { "0" }.to_string();
        w.write_record([
            f(r.flags.sgie),
            f(r.flags.pld),
            f(r.flags.msdrf),
            format!("{:.6}", r.map_50_95),
            format!("{:.6}", r.delta),
        ])?;
    }
    w.flush()?;
    Ok(())
}

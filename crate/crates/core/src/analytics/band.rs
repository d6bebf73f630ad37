//! Point-wise empirical quantile bands over progress curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::value::nearest_rank;

use super::ProgressCurve;

pub const DEFAULT_LEVELS: [f64; 3] = [0.1, 0.5, 0.9];
pub const DEFAULT_MIN_SUPPORT: usize = 20;

/// Quantile values at one turn index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub turn_index: usize,
    /// Number of curves long enough to reach this index.
    pub support: usize,
    /// One value per band level, ascending with the level.
    pub values: Vec<f64>,
}

/// Connected point-wise empirical quantiles: at each turn index the
/// nearest-rank quantiles of all curve values present there. Indices with
/// fewer than `min_support` contributing dialogs are excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBand {
    pub levels: Vec<f64>,
    pub min_support: usize,
    pub rows: Vec<BandRow>,
}

impl QuantileBand {
    pub fn level_index(&self, level: f64) -> Option<usize> {
        self.levels.iter().position(|&l| (l - level).abs() < 1e-9)
    }

    pub fn row(&self, turn_index: usize) -> Option<&BandRow> {
        self.rows.iter().find(|r| r.turn_index == turn_index)
    }

    /// Band value at a turn index, or None past the supported range.
    pub fn value_at(&self, turn_index: usize, level_idx: usize) -> Option<f64> {
        self.row(turn_index).map(|r| r.values[level_idx])
    }
}

/// Build the band from per-dialog curves. Dialogs shorter than an index
/// contribute nothing there.
pub fn quantile_band(
    curves: &[ProgressCurve],
    levels: &[f64],
    min_support: usize,
) -> Result<QuantileBand> {
    if curves.is_empty() {
        return Err(Error::invalid("cannot build a quantile band from zero curves"));
    }
    if levels.is_empty() {
        return Err(Error::invalid("at least one quantile level is required"));
    }
    for w in levels.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::invalid("quantile levels must be strictly increasing"));
        }
    }
    if levels[0] <= 0.0 || *levels.last().unwrap() > 1.0 {
        return Err(Error::invalid("quantile levels must lie in (0, 1]"));
    }

    let max_turns = curves.iter().map(|c| c.values.len()).max().unwrap_or(0);
    let mut rows = Vec::new();
    for t in 0..max_turns {
        let mut present: Vec<f64> = curves
            .iter()
            .filter_map(|c| c.values.get(t).copied())
            .collect();
        if present.len() < min_support.max(1) {
            continue;
        }
        present.sort_by(f64::total_cmp);
        rows.push(BandRow {
            turn_index: t,
            support: present.len(),
            values: levels.iter().map(|&q| nearest_rank(&present, q)).collect(),
        });
    }
    Ok(QuantileBand { levels: levels.to_vec(), min_support, rows })
}

/// CSV export: `turn_index, support, p10, p50, p90` (columns follow the
/// band's levels).
pub fn band_to_csv(band: &QuantileBand) -> String {
    let mut out = String::from("turn_index,support");
    for level in &band.levels {
        out.push_str(&format!(",p{}", (level * 100.0).round() as u32));
    }
    out.push('\n');
    for row in &band.rows {
        out.push_str(&format!("{},{}", row.turn_index, row.support));
        for v in &row.values {
            // Shortest round-trip float formatting keeps the file exact.
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Parse a band back from its CSV form.
pub fn band_from_csv(csv: &str) -> Result<QuantileBand> {
    let mut lines = csv.lines();
    let header = lines.next().ok_or_else(|| Error::invalid("empty band CSV"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "turn_index" || cols[1] != "support" {
        return Err(Error::invalid("band CSV header must start with turn_index,support"));
    }
    let mut levels = Vec::new();
    for col in &cols[2..] {
        let pct: f64 = col
            .strip_prefix('p')
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::invalid(format!("bad band CSV level column '{col}'")))?;
        levels.push(pct / 100.0);
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::invalid(format!("band CSV row {} has {} fields", i + 2, fields.len())));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::invalid(format!("bad number '{s}' in band CSV")))
        };
        rows.push(BandRow {
            turn_index: parse(fields[0])? as usize,
            support: parse(fields[1])? as usize,
            values: fields[2..].iter().map(|s| parse(s)).collect::<Result<_>>()?,
        });
    }
    Ok(QuantileBand { levels, min_support: 0, rows })
}

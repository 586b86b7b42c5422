//! Capacity-trajectory ingestion and the hide-the-tail split protocol.
//!
//! The ingestion boundary is a plain CSV with header `cell_id,cycle,capacity_ah`
//! (UTF-8, LF line endings, no quoting). A scenario names a target cell,
//! per-cell training lengths, and the training-side downsampling; building it
//! yields the training set plus each cell's held-out full-resolution tail.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::mcgp::{CellObservations, McgpError, TrainingSet};

pub const CSV_HEADER: &str = "cell_id,cycle,capacity_ah";

#[derive(Debug)]
pub enum DataError {
    Io(std::io::Error),
    /// Malformed content; `line` is 1-based.
    ParseError { line: usize, message: String },
    DuplicateCycle { line: usize, cell: String, cycle: u32 },
    NonPositiveCapacity { line: usize, value: f64 },
    UnknownCell { cell: String },
    TrainCountExceedsData { cell: String, requested: usize, available: usize },
    InvalidScenario(String),
    InvalidSeries(String),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "io error: {e}"),
            Self::ParseError { line, message } => write!(f, "line {line}: {message}"),
            Self::DuplicateCycle { line, cell, cycle } => {
                write!(f, "line {line}: duplicate cycle {cycle} for cell {cell}")
            }
            Self::NonPositiveCapacity { line, value } => {
                write!(f, "line {line}: capacity must be positive, got {value}")
            }
            Self::UnknownCell { cell } => write!(f, "cell {cell:?} not present in the data"),
            Self::TrainCountExceedsData { cell, requested, available } => write!(
                f,
                "cell {cell}: scenario asks for {requested} training cycles but only {available} exist"
            ),
            Self::InvalidScenario(msg) => write!(f, "invalid scenario: {msg}"),
            Self::InvalidSeries(msg) => write!(f, "invalid series: {msg}"),
        }
    }
}

impl std::error::Error for DataError {}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

/// One cell's capacity trajectory: strictly increasing cycle numbers and
/// positive capacities in Ah.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacitySeries {
    pub cell_id: String,
    pub cycles: Vec<u32>,
    pub capacities: Vec<f64>,
}

impl CapacitySeries {
    pub fn new(cell_id: String, cycles: Vec<u32>, capacities: Vec<f64>) -> Result<Self, DataError> {
        if cycles.len() != capacities.len() {
            return Err(DataError::InvalidSeries(format!(
                "cell {cell_id}: {} cycles vs {} capacities",
                cycles.len(),
                capacities.len()
            )));
        }
        if cycles.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DataError::InvalidSeries(format!(
                "cell {cell_id}: cycles must be strictly increasing"
            )));
        }
        if capacities.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(DataError::InvalidSeries(format!(
                "cell {cell_id}: capacities must be positive and finite"
            )));
        }
        Ok(Self {
            cell_id,
            cycles,
            capacities,
        })
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }
}

/// Loads every cell's series from a capacity CSV; series come back sorted by
/// cell id, each sorted by cycle. Duplicate (cell, cycle) rows are rejected.
pub fn load_csv(path: &Path) -> Result<Vec<CapacitySeries>, DataError> {
    parse_csv(&std::fs::read_to_string(path)?)
}

/// [`load_csv`] on in-memory text.
pub fn parse_csv(text: &str) -> Result<Vec<CapacitySeries>, DataError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(DataError::ParseError {
                line: 1,
                message: format!("expected header {CSV_HEADER:?}, got {header:?}"),
            })
        }
        None => {
            return Err(DataError::ParseError {
                line: 1,
                message: "empty file (missing header)".into(),
            })
        }
    }

    // cell -> cycle -> (line, capacity); BTreeMaps keep the output ordering
    // deterministic (cells sorted by id, cycles ascending).
    let mut cells: BTreeMap<String, BTreeMap<u32, f64>> = BTreeMap::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.contains('\r') {
            return Err(DataError::ParseError {
                line,
                message: "CRLF line ending; the schema requires LF".into(),
            });
        }
        if raw.is_empty() {
            return Err(DataError::ParseError {
                line,
                message: "empty line".into(),
            });
        }
        let mut fields = raw.split(',');
        let (Some(cell_id), Some(cycle_str), Some(cap_str), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(DataError::ParseError {
                line,
                message: format!("expected 3 comma-separated fields, got {raw:?}"),
            });
        };
        if cell_id.is_empty() {
            return Err(DataError::ParseError {
                line,
                message: "empty cell_id".into(),
            });
        }
        let cycle: u32 = cycle_str.parse().map_err(|_| DataError::ParseError {
            line,
            message: format!("cycle must be a positive integer, got {cycle_str:?}"),
        })?;
        if cycle == 0 {
            return Err(DataError::ParseError {
                line,
                message: "cycle must be >= 1".into(),
            });
        }
        let capacity: f64 = cap_str.parse().map_err(|_| DataError::ParseError {
            line,
            message: format!("capacity must be a decimal number, got {cap_str:?}"),
        })?;
        if !(capacity.is_finite() && capacity > 0.0) {
            return Err(DataError::NonPositiveCapacity {
                line,
                value: capacity,
            });
        }
        let per_cell = cells.entry(cell_id.to_string()).or_default();
        if per_cell.insert(cycle, capacity).is_some() {
            return Err(DataError::DuplicateCycle {
                line,
                cell: cell_id.to_string(),
                cycle,
            });
        }
    }

    cells
        .into_iter()
        .map(|(cell_id, rows)| {
            let (cycles, capacities) = rows.into_iter().unzip();
            CapacitySeries::new(cell_id, cycles, capacities)
        })
        .collect()
}

/// Writes series back in the ingestion schema. Capacities are rendered with
/// the shortest decimal that round-trips, so load -> save -> load is lossless.
pub fn save_csv(series: &[CapacitySeries], path: &Path) -> Result<(), DataError> {
    std::fs::write(path, render_csv(series))?;
    Ok(())
}

/// [`save_csv`] to a string.
pub fn render_csv(series: &[CapacitySeries]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in series {
        for (t, y) in s.cycles.iter().zip(&s.capacities) {
            out.push_str(&format!("{},{},{}\n", s.cell_id, t, y));
        }
    }
    out
}

/// Keeps the observations whose index `k` satisfies `k % stride == phase`,
/// preserving order.
pub fn downsample(s: &CapacitySeries, stride: usize, phase: usize) -> CapacitySeries {
    assert!(stride >= 1, "stride must be at least 1");
    assert!(phase < stride, "phase must be < stride");
    let keep = |k: usize| k % stride == phase;
    CapacitySeries {
        cell_id: s.cell_id.clone(),
        cycles: s
            .cycles
            .iter()
            .enumerate()
            .filter(|(k, _)| keep(*k))
            .map(|(_, v)| *v)
            .collect(),
        capacities: s
            .capacities
            .iter()
            .enumerate()
            .filter(|(k, _)| keep(*k))
            .map(|(_, v)| *v)
            .collect(),
    }
}

/// A hide-the-tail forecasting split: per cell, train on the first
/// `train_cycles_per_cell` observations (downsampled), hold out the rest at
/// full resolution. Cells absent from the map are excluded entirely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub target_cell: String,
    pub train_cycles_per_cell: BTreeMap<String, usize>,
    pub downsample_stride: usize,
    pub downsample_phase: usize,
}

impl Scenario {
    /// The three built-in splits over the NASA PCoE cells: the target cell is
    /// trained on its first 100 cycles and the other two on all 168, with
    /// every-third-point training downsampling.
    pub fn builtin(name: &str) -> Option<Scenario> {
        let target = match name {
            "a" => "B0005",
            "b" => "B0006",
            "c" => "B0007",
            _ => return None,
        };
        let mut train = BTreeMap::new();
        for cell in ["B0005", "B0006", "B0007"] {
            train.insert(cell.to_string(), if cell == target { 100 } else { 168 });
        }
        Some(Scenario {
            name: name.to_string(),
            target_cell: target.to_string(),
            train_cycles_per_cell: train,
            downsample_stride: 3,
            downsample_phase: 0,
        })
    }

    /// Reads a scenario from a TOML file with the same field names.
    pub fn load(path: &Path) -> Result<Scenario, DataError> {
        let text = std::fs::read_to_string(path)?;
        let sc: Scenario =
            toml::from_str(&text).map_err(|e| DataError::InvalidScenario(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.downsample_stride < 1 {
            return Err(DataError::InvalidScenario("stride must be >= 1".into()));
        }
        if self.downsample_phase >= self.downsample_stride {
            return Err(DataError::InvalidScenario(format!(
                "phase {} must be < stride {}",
                self.downsample_phase, self.downsample_stride
            )));
        }
        if !self.train_cycles_per_cell.contains_key(&self.target_cell) {
            return Err(DataError::InvalidScenario(format!(
                "target cell {} missing from train_cycles_per_cell",
                self.target_cell
            )));
        }
        Ok(())
    }
}

/// Builds a scenario's training set and held-out map. Training side: truncate
/// each cell to its first `n` observations, then downsample. Held-out side:
/// everything after the truncation boundary, at full resolution (empty for
/// cells trained on their whole series).
pub fn build_scenario(
    series: &[CapacitySeries],
    sc: &Scenario,
) -> Result<(TrainingSet, BTreeMap<String, CapacitySeries>), McgpError> {
    sc.validate().map_err(box_data_error)?;
    let mut cells = Vec::new();
    let mut held_out = BTreeMap::new();
    for (cell, &n_train) in &sc.train_cycles_per_cell {
        let Some(s) = series.iter().find(|s| &s.cell_id == cell) else {
            return Err(box_data_error(DataError::UnknownCell { cell: cell.clone() }));
        };
        if n_train > s.len() {
            return Err(box_data_error(DataError::TrainCountExceedsData {
                cell: cell.clone(),
                requested: n_train,
                available: s.len(),
            }));
        }
        let head = CapacitySeries {
            cell_id: s.cell_id.clone(),
            cycles: s.cycles[..n_train].to_vec(),
            capacities: s.capacities[..n_train].to_vec(),
        };
        let train = downsample(&head, sc.downsample_stride, sc.downsample_phase);
        cells.push(CellObservations {
            id: train.cell_id.clone(),
            cycles: train.cycles.iter().map(|&c| f64::from(c)).collect(),
            capacities: train.capacities.clone(),
        });
        held_out.insert(
            cell.clone(),
            CapacitySeries {
                cell_id: s.cell_id.clone(),
                cycles: s.cycles[n_train..].to_vec(),
                capacities: s.capacities[n_train..].to_vec(),
            },
        );
    }
    Ok((TrainingSet::new(cells)?, held_out))
}

fn box_data_error(e: DataError) -> McgpError {
    McgpError::InvalidTrainingSet(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(id: &str, n: u32) -> CapacitySeries {
        CapacitySeries::new(
            id.to_string(),
            (1..=n).collect(),
            (1..=n).map(|k| 2.0 - 0.002 * f64::from(k)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn parse_basic_rows() {
        let text = "cell_id,cycle,capacity_ah\nB0005,1,1.856\nB0005,2,1.846\nB0005,3,1.835\n";
        let all = parse_csv(text).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].cell_id, "B0005");
        assert_eq!(all[0].cycles, vec![1, 2, 3]);
        assert_eq!(all[0].capacities[2], 1.835);
    }

    #[test]
    fn parse_header_only_is_empty() {
        assert!(parse_csv("cell_id,cycle,capacity_ah\n").unwrap().is_empty());
    }

    #[test]
    fn parse_rejects_missing_header() {
        assert!(matches!(
            parse_csv(""),
            Err(DataError::ParseError { line: 1, .. })
        ));
        assert!(matches!(
            parse_csv("cycle,capacity\n"),
            Err(DataError::ParseError { line: 1, .. })
        ));
    }

    #[test]
    fn parse_rejects_duplicate_cycle_with_line_number() {
        let text = "cell_id,cycle,capacity_ah\nA,1,1.0\nA,2,1.0\nA,2,0.9\n";
        match parse_csv(text) {
            Err(DataError::DuplicateCycle { line: 4, cycle: 2, .. }) => {}
            other => panic!("expected DuplicateCycle at line 4, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_nonpositive_capacity() {
        let text = "cell_id,cycle,capacity_ah\nA,1,0.0\n";
        assert!(matches!(
            parse_csv(text),
            Err(DataError::NonPositiveCapacity { line: 2, .. })
        ));
    }

    #[test]
    fn parse_rejects_bad_fields() {
        for (row, what) in [
            ("A,x,1.0", "bad cycle"),
            ("A,0,1.0", "zero cycle"),
            ("A,1", "missing field"),
            ("A,1,1.0,extra", "extra field"),
            (",1,1.0", "empty id"),
        ] {
            let text = format!("cell_id,cycle,capacity_ah\n{row}\n");
            assert!(
                matches!(parse_csv(&text), Err(DataError::ParseError { line: 2, .. })),
                "{what} should fail"
            );
        }
    }

    #[test]
    fn parse_sorts_cells_and_cycles() {
        let text = "cell_id,cycle,capacity_ah\nB,2,1.0\nA,5,1.2\nB,1,1.1\nA,3,1.3\n";
        let all = parse_csv(text).unwrap();
        assert_eq!(all[0].cell_id, "A");
        assert_eq!(all[0].cycles, vec![3, 5]);
        assert_eq!(all[1].cycles, vec![1, 2]);
    }

    #[test]
    fn csv_roundtrip_preserves_series() {
        let original = vec![series("B0005", 10), series("B0006", 7)];
        let rendered = render_csv(&original);
        let back = parse_csv(&rendered).unwrap();
        assert_eq!(original, back);
    }

    #[test]
    fn downsample_keeps_expected_indices() {
        let s = series("A", 9);
        let d = downsample(&s, 3, 0);
        assert_eq!(d.cycles, vec![1, 4, 7]);
        let d1 = downsample(&s, 3, 1);
        assert_eq!(d1.cycles, vec![2, 5, 8]);
        assert_eq!(downsample(&s, 1, 0), s);
        let long = series("A", 168);
        assert_eq!(downsample(&long, 3, 0).len(), 56);
    }

    #[test]
    fn builtin_scenarios_match_protocol() {
        for (name, target) in [("a", "B0005"), ("b", "B0006"), ("c", "B0007")] {
            let sc = Scenario::builtin(name).unwrap();
            assert_eq!(sc.target_cell, target);
            assert_eq!(sc.train_cycles_per_cell[target], 100);
            assert_eq!(sc.downsample_stride, 3);
            assert_eq!(sc.downsample_phase, 0);
            let others: Vec<_> = sc
                .train_cycles_per_cell
                .iter()
                .filter(|(c, _)| c.as_str() != target)
                .collect();
            assert_eq!(others.len(), 2);
            assert!(others.iter().all(|(_, &n)| n == 168));
        }
        assert!(Scenario::builtin("d").is_none());
    }

    #[test]
    fn build_scenario_a_splits_as_published() {
        let all = vec![series("B0005", 168), series("B0006", 168), series("B0007", 168)];
        let sc = Scenario::builtin("a").unwrap();
        let (train, held_out) = build_scenario(&all, &sc).unwrap();
        // ceil(100/3) + ceil(168/3) * 2
        assert_eq!(train.total_count(), 34 + 56 + 56);
        let tail = &held_out["B0005"];
        assert_eq!(tail.len(), 68);
        assert_eq!(tail.cycles.first(), Some(&101));
        assert_eq!(tail.cycles.last(), Some(&168));
        assert!(held_out["B0006"].is_empty());
        assert!(held_out["B0007"].is_empty());
    }

    #[test]
    fn build_scenario_partitions_exactly() {
        let all = vec![series("A", 30), series("B", 30)];
        let sc = Scenario {
            name: "t".into(),
            target_cell: "A".into(),
            train_cycles_per_cell: [("A".to_string(), 20), ("B".to_string(), 30)]
                .into_iter()
                .collect(),
            downsample_stride: 1,
            downsample_phase: 0,
        };
        let (train, held_out) = build_scenario(&all, &sc).unwrap();
        let a = &train.cells()[0];
        // With stride 1 nothing is dropped: train + held_out tile the series.
        let train_cycles: Vec<u32> = a.cycles.iter().map(|&c| c as u32).collect();
        let mut combined = train_cycles;
        combined.extend(&held_out["A"].cycles);
        assert_eq!(combined, (1..=30).collect::<Vec<u32>>());
        assert!(held_out["B"].is_empty());
    }

    #[test]
    fn build_scenario_errors() {
        let all = vec![series("A", 30)];
        let mut sc = Scenario {
            name: "t".into(),
            target_cell: "A".into(),
            train_cycles_per_cell: [("A".to_string(), 31)].into_iter().collect(),
            downsample_stride: 3,
            downsample_phase: 0,
        };
        assert!(build_scenario(&all, &sc).is_err());
        sc.train_cycles_per_cell.insert("A".to_string(), 20);
        sc.train_cycles_per_cell.insert("Z".to_string(), 5);
        assert!(build_scenario(&all, &sc).is_err());
    }

    #[test]
    fn scenario_toml_roundtrip() {
        let sc = Scenario::builtin("b").unwrap();
        let text = toml::to_string(&sc).unwrap();
        let back: Scenario = toml::from_str(&text).unwrap();
        assert_eq!(sc, back);
    }
}

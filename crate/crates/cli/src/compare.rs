//! Annotations needed per strategy to reach a held-out accuracy target.

use serde::{Deserialize, Serialize};

use crate::sim::{run_simulation, SimError, SimulationConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum CellOutcome {
    Reached { annotations: usize },
    TargetUnreachable { annotations_spent: usize },
}

impl CellOutcome {
    pub fn annotations(&self) -> Option<usize> {
        match self {
            CellOutcome::Reached { annotations } => Some(*annotations),
            CellOutcome::TargetUnreachable { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub strategy: String,
    pub seed: u64,
    pub outcome: CellOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub reached: usize,
    pub unreachable: usize,
    /// Over cells that reached the target.
    pub mean_annotations: Option<f64>,
    /// Population standard deviation over cells that reached the target.
    pub std_annotations: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub target_top1: f64,
    pub seeds: Vec<u64>,
    pub cells: Vec<Cell>,
    pub summary: Vec<StrategySummary>,
}

#[derive(Debug, Serialize)]
pub struct CellRow<'a> {
    pub strategy: &'a str,
    pub seed: u64,
    pub reached: bool,
    pub annotations: usize,
}

impl ComparisonReport {
    pub fn summary_for(&self, strategy: &str) -> Option<&StrategySummary> {
        self.summary.iter().find(|s| s.strategy == strategy)
    }

    pub fn cell_rows(&self) -> Vec<CellRow<'_>> {
        self.cells
            .iter()
            .map(|c| CellRow {
                strategy: &c.strategy,
                seed: c.seed,
                reached: c.outcome.annotations().is_some(),
                annotations: match c.outcome {
                    CellOutcome::Reached { annotations } => annotations,
                    CellOutcome::TargetUnreachable { annotations_spent } => annotations_spent,
                },
            })
            .collect()
    }
}

fn summarize(strategy: &str, cells: &[Cell]) -> StrategySummary {
    let xs: Vec<f64> = cells
        .iter()
        .filter(|c| c.strategy == strategy)
        .filter_map(|c| c.outcome.annotations())
        .map(|n| n as f64)
        .collect();
    let total = cells.iter().filter(|c| c.strategy == strategy).count();
    let mean = (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    StrategySummary {
        strategy: strategy.to_string(),
        reached: xs.len(),
        unreachable: total - xs.len(),
        mean_annotations: mean,
        std_annotations: mean.map(|m| (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()),
    }
}

/// Runs every strategy on every seed; one thread per seed. Each run may
/// spend up to `base.budget` annotations; the corpus is regenerated per seed
/// and shared by all strategies for that seed. A target above 1 cannot be
/// reached by an accuracy and is reported unreachable without running.
pub fn compare_strategies(base: &SimulationConfig, strategies: &[String], seeds: &[u64], target: f64) -> Result<ComparisonReport, SimError> {
    if strategies.len() < 2 {
        return Err(SimError::Config("compare needs at least two strategies".into()));
    }
    if seeds.len() < 3 {
        return Err(SimError::Config("compare needs at least three seeds".into()));
    }
    if base.budget == 0 {
        return Err(SimError::BudgetZero);
    }
    if target.is_nan() || target < 0.0 {
        return Err(SimError::Config(format!("target {target} must be a non-negative number")));
    }
    let configs: Vec<Vec<SimulationConfig>> = seeds
        .iter()
        .map(|&seed| {
            strategies
                .iter()
                .map(|s| SimulationConfig {
                    seed,
                    strategy: s.clone(),
                    target_top1: Some(target),
                    auto_label_every: 0,
                    final_auto_label: false,
                    ..base.clone()
                })
                .collect()
        })
        .collect();
    for cfg in configs.iter().flatten() {
        cfg.validate()?;
    }

    let per_seed: Vec<Result<Vec<Cell>, SimError>> = if target > 1.0 {
        configs
            .iter()
            .map(|row| {
                Ok(row
                    .iter()
                    .map(|c| Cell {
                        strategy: c.strategy.clone(),
                        seed: c.seed,
                        outcome: CellOutcome::TargetUnreachable { annotations_spent: 0 },
                    })
                    .collect())
            })
            .collect()
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = configs
                .iter()
                .map(|row| {
                    scope.spawn(move || {
                        row.iter()
                            .map(|c| {
                                let report = run_simulation(c)?.report;
                                Ok(Cell {
                                    strategy: c.strategy.clone(),
                                    seed: c.seed,
                                    outcome: match report.annotations_to_target {
                                        Some(annotations) => CellOutcome::Reached { annotations },
                                        None => CellOutcome::TargetUnreachable {
                                            annotations_spent: report.human_labels,
                                        },
                                    },
                                })
                            })
                            .collect()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
        })
    };
    let mut cells = Vec::new();
    for r in per_seed {
        cells.extend(r?);
    }
    let mut seen = Vec::new();
    for s in strategies {
        if !seen.contains(s) {
            seen.push(s.clone());
        }
    }
    let summary = seen.iter().map(|s| summarize(s, &cells)).collect();
    Ok(ComparisonReport {
        target_top1: target,
        seeds: seeds.to_vec(),
        cells,
        summary,
    })
}

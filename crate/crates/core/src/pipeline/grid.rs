//! Grid search: run the pipeline once per configuration cell, score each on
//! dev MAP, and write a leaderboard. Failed cells are recorded and the search
//! continues. Ties break by fewer trainable parameters, then by the
//! lexicographic override string, so the argmax is deterministic.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Method, PipelineConfig};
use super::stages;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub cell_id: usize,
    pub overrides: BTreeMap<String, String>,
    pub dev_map: Option<f64>,
    pub param_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl GridCell {
    fn override_string(&self) -> String {
        self.overrides
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    /// Cells sorted best-first.
    pub cells: Vec<GridCell>,
    pub best: Option<GridCell>,
}

/// Cartesian product of the grid axes, keys in sorted order, values in file
/// order. Every combination is enumerated, including ones that later fail
/// config validation (those surface as failed cells).
pub fn expand_grid(grid: &BTreeMap<String, Vec<String>>) -> Vec<BTreeMap<String, String>> {
    let mut cells: Vec<BTreeMap<String, String>> = vec![BTreeMap::new()];
    for (key, values) in grid {
        let mut next = Vec::with_capacity(cells.len() * values.len());
        for cell in &cells {
            for value in values {
                let mut extended = cell.clone();
                extended.insert(key.clone(), value.clone());
                next.push(extended);
            }
        }
        cells = next;
    }
    cells
}

/// Run every stage the method needs inside the cell's own output directory
/// and return its dev MAP.
fn run_cell(
    config_path: &Path,
    cell_dir: &Path,
    overrides: &BTreeMap<String, String>,
) -> Result<f64> {
    let mut all_overrides: Vec<(String, String)> = overrides
        .iter()
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    all_overrides.push((
        "paths.output_dir".to_string(),
        cell_dir.display().to_string(),
    ));
    let cfg = PipelineConfig::load_with_overrides(config_path, &all_overrides)?;

    stages::run_ingest(&cfg)?;
    match cfg.method {
        Method::Prompt => {
            stages::run_embed(&cfg)?;
        }
        Method::Contrastive => {
            stages::run_pairs(&cfg)?;
            stages::run_train(&cfg)?;
            stages::run_embed(&cfg)?;
        }
        Method::Classify => {
            stages::run_pairs(&cfg)?;
            stages::run_train(&cfg)?;
        }
    }
    stages::run_rank(&cfg)?;
    stages::run_eval(&cfg)?;

    let report_path = cfg.stage_dir("eval").join("report.json");
    let report: crate::eval::EvalReport =
        serde_json::from_str(&fs::read_to_string(&report_path).map_err(|e| {
            Error::Validation(format!("cannot read {}: {e}", report_path.display()))
        })?)?;
    Ok(report.map_overall)
}

fn sort_cells(cells: &mut [GridCell]) {
    cells.sort_by(|a, b| match (a.dev_map, b.dev_map) {
        (Some(x), Some(y)) => y
            .partial_cmp(&x)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.param_count.cmp(&b.param_count))
            .then(a.override_string().cmp(&b.override_string())),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.override_string().cmp(&b.override_string()),
    });
}

/// Evaluate every grid cell (up to `jobs` in parallel), write
/// leaderboard.json/.txt and the winning cell's full config under
/// `<output_dir>/grid/`, and return the leaderboard.
pub fn run_gridsearch(
    config_path: &Path,
    cfg: &PipelineConfig,
    jobs: usize,
) -> Result<Leaderboard> {
    if cfg.grid.is_empty() {
        return Err(Error::Validation(
            "no grid.* keys configured; nothing to search".into(),
        ));
    }
    let grid_dir = cfg.output_dir.join("grid");
    fs::create_dir_all(&grid_dir)?;
    let combos = expand_grid(&cfg.grid);

    let evaluate = |(cell_id, overrides): (usize, &BTreeMap<String, String>)| -> GridCell {
        let cell_dir = grid_dir.join(format!("cell_{cell_id:03}"));
        let (dev_map, error, param_count) = match run_cell(config_path, &cell_dir, overrides) {
            Ok(map) => {
                let count = PipelineConfig::load_with_overrides(
                    config_path,
                    &overrides
                        .iter()
                        .map(|(k, v)| (k.clone(), v.clone()))
                        .collect::<Vec<_>>(),
                )
                .map(|c| c.param_count())
                .unwrap_or(0);
                (Some(map), None, count)
            }
            Err(e) => (None, Some(e.to_string()), 0),
        };
        GridCell {
            cell_id,
            overrides: overrides.clone(),
            dev_map,
            param_count,
            error,
        }
    };

    let mut cells: Vec<GridCell> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Validation(format!("cannot build a {jobs}-thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            combos.par_iter().enumerate().map(evaluate).collect()
        })
    } else {
        combos.iter().enumerate().map(evaluate).collect()
    };

    sort_cells(&mut cells);
    let best = cells.iter().find(|c| c.dev_map.is_some()).cloned();

    let leaderboard = Leaderboard { cells, best };
    fs::write(
        grid_dir.join("leaderboard.json"),
        serde_json::to_string_pretty(&leaderboard)? + "\n",
    )?;
    let mut text = format!(
        "{:<6} {:>9} {:>12}  overrides\n",
        "rank", "dev MAP", "params"
    );
    for (i, cell) in leaderboard.cells.iter().enumerate() {
        match cell.dev_map {
            Some(map) => text.push_str(&format!(
                "{:<6} {:>9.3} {:>12}  {}\n",
                i + 1,
                crate::eval::round3(map),
                cell.param_count,
                cell.override_string()
            )),
            None => text.push_str(&format!(
                "{:<6} {:>9} {:>12}  {} (failed: {})\n",
                i + 1,
                "-",
                "-",
                cell.override_string(),
                cell.error.as_deref().unwrap_or("unknown")
            )),
        }
    }
    fs::write(grid_dir.join("leaderboard.txt"), text)?;

    if let Some(best) = &leaderboard.best {
        let mut config_text = String::new();
        let base = PipelineConfig::load_with_overrides(
            config_path,
            &best
                .overrides
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect::<Vec<_>>(),
        )?;
        for (key, value) in base.snapshot() {
            if key.starts_with("grid.") {
                continue;
            }
            config_text.push_str(&format!("{key} = {value}\n"));
        }
        fs::write(grid_dir.join("best.conf"), config_text)?;
    }
    Ok(leaderboard)
}

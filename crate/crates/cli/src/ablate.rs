use std::fs;
use std::path::Path;

use mesh_graphormer::config::{AblationCell, GraphormerConfig, Precision};
use mesh_graphormer::pipeline::Model;
use mesh_graphormer::training::Metrics;

use crate::train::train;
use crate::{io_err, CliResult};

pub const ABLATION_HEADER: &str = "cell,grid_features,grb_encoders,grb_kind,grb_design,seed,params,mpjpe,pa_mpjpe,mpve,status";

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub cell: AblationCell,
    pub params: Option<u64>,
    /// Final held-out metrics, reported units.
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
}

impl AblationRow {
    fn fields(&self, index: usize) -> Vec<String> {
        let c = &self.cell;
        let encoders = if c.grb_encoders.is_empty() {
            "none".to_string()
        } else {
            c.grb_encoders.iter().map(|k| k.to_string()).collect::<Vec<_>>().join("+")
        };
        let num = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        vec![
            index.to_string(),
            if c.grid_features { "on" } else { "off" }.to_string(),
            encoders,
            c.grb_kind.map_or("-", |k| k.name()).to_string(),
            c.grb_design.map_or("-", |d| d.name()).to_string(),
            c.seed.to_string(),
            self.params.map_or("-".to_string(), |p| p.to_string()),
            num(self.metrics.map(|m| m.mpjpe)),
            num(self.metrics.map(|m| m.pa_mpjpe)),
            num(self.metrics.map(|m| m.mpve)),
            match &self.error {
                None => "ok".to_string(),
                Some(e) => format!("error: {e}"),
            },
        ]
    }

    pub fn csv_row(&self, index: usize) -> String {
        self.fields(index)
            .into_iter()
            .map(|f| {
                if f.contains([',', '"', '\n']) {
                    format!("\"{}\"", f.replace('"', "\"\""))
                } else {
                    f
                }
            })
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Column-aligned text rendering of the results.
pub fn render_table(rows: &[AblationRow]) -> String {
    let mut table: Vec<Vec<String>> = vec![ABLATION_HEADER.split(',').map(String::from).collect()];
    table.extend(rows.iter().enumerate().map(|(i, r)| r.fields(i)));
    let cols = table[0].len();
    let width: Vec<usize> = (0..cols)
        .map(|c| table.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in table.iter().enumerate() {
        let line: Vec<String> = row.iter().zip(&width).map(|(f, w)| format!("{f:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * (cols - 1)));
            out.push('\n');
        }
    }
    out
}

fn param_count(cfg: &GraphormerConfig) -> Option<u64> {
    match cfg.model.precision {
        Precision::F32 => Model::<f32>::init(cfg).ok().map(|m| m.store.total_numel() as u64),
        Precision::F64 => Model::<f64>::init(cfg).ok().map(|m| m.store.total_numel() as u64),
    }
}

/// Trains and evaluates every cell of `base.ablation` under `out/cell_NN`,
/// then writes `ablation.csv` and `ablation.txt`. A failing cell is
/// recorded in its row and the sweep continues.
pub fn ablate(base: &GraphormerConfig, out: &Path, mut progress: impl FnMut(&str)) -> CliResult<Vec<AblationRow>> {
    base.validate()?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let cells = base.ablation.cells(base.train.seed);
    progress(&format!("ablation: {} cells", cells.len()));
    let mut rows = Vec::with_capacity(cells.len());
    for (i, cell) in cells.into_iter().enumerate() {
        let cfg = cell.apply(base);
        let row = match train(&cfg, &out.join(format!("cell_{i:02}"))) {
            Ok(s) => AblationRow {
                cell,
                params: Some(s.params),
                metrics: Some(s.test),
                error: None,
            },
            Err(e) => AblationRow {
                cell,
                params: param_count(&cfg),
                metrics: None,
                error: Some(e.message),
            },
        };
        progress(&format!("cell {i}: {}", row.fields(i)[10]));
        rows.push(row);
    }
    let mut csv = format!("{ABLATION_HEADER}\n");
    for (i, r) in rows.iter().enumerate() {
        csv.push_str(&r.csv_row(i));
        csv.push('\n');
    }
    let csv_path = out.join("ablation.csv");
    fs::write(&csv_path, csv).map_err(|e| io_err(&csv_path, e))?;
    let txt_path = out.join("ablation.txt");
    fs::write(&txt_path, render_table(&rows)).map_err(|e| io_err(&txt_path, e))?;
    Ok(rows)
}

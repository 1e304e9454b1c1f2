use std::fmt::Write;

use mesh_graphormer::config::GraphormerConfig;
use mesh_graphormer::pipeline::{count_params, flops_estimate, Breakdown, Model};

use crate::CliResult;

/// Parameter and multiply-add counts of a config and of the same config
/// with every graph module removed.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamReport {
    pub params: Breakdown,
    pub baseline_params: Breakdown,
    pub flops: Breakdown,
    pub baseline_flops: Breakdown,
}

impl ParamReport {
    pub fn param_delta(&self) -> i64 {
        self.params.total() as i64 - self.baseline_params.total() as i64
    }

    pub fn flop_delta(&self) -> i64 {
        self.flops.total() as i64 - self.baseline_flops.total() as i64
    }

    /// Relative FLOP increase over the baseline.
    pub fn flop_delta_ratio(&self) -> f64 {
        self.flop_delta() as f64 / self.baseline_flops.total() as f64
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let width = self.params.groups.iter().map(|(g, _)| g.len()).max().unwrap_or(0).max(14);
        let _ = writeln!(s, "{:<width$}  {:>14}  {:>16}", "module", "params", "mult-adds");
        for (g, n) in &self.params.groups {
            let _ = writeln!(s, "{g:<width$}  {n:>14}  {:>16}", self.flops.get(g));
        }
        let _ = writeln!(s, "{:<width$}  {:>14}  {:>16}", "total", self.params.total(), self.flops.total());
        let _ = writeln!(
            s,
            "{:<width$}  {:>14}  {:>16}",
            "baseline",
            self.baseline_params.total(),
            self.baseline_flops.total()
        );
        let _ = writeln!(
            s,
            "{:<width$}  {:>+14}  {:>+16}  ({:+.4}% mult-adds, {:+.3}M params)",
            "delta",
            self.param_delta(),
            self.flop_delta(),
            100.0 * self.flop_delta_ratio(),
            self.param_delta() as f64 / 1e6
        );
        s
    }
}

pub fn count_report(config: &GraphormerConfig) -> CliResult<ParamReport> {
    let mut baseline = config.clone();
    baseline.model.grb_encoders.clear();
    let params = count_params(&Model::<f32>::init(config)?.store);
    let baseline_params = count_params(&Model::<f32>::init(&baseline)?.store);
    Ok(ParamReport {
        params,
        baseline_params,
        flops: flops_estimate(config)?,
        baseline_flops: flops_estimate(&baseline)?,
    })
}

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mesh_graphormer::config::{GraphormerConfig, Precision, Split};
use mesh_graphormer::numerics::Real;
use mesh_graphormer::training::{
    evaluate, log_preamble, mean_metrics, save_checkpoint, train_loop, EpochRecord, Metrics, TrainData, TrainState,
};
use mesh_graphormer::Error;

use crate::{io_err, CliError, CliResult, EXIT_NUMERIC};

pub const CONFIG_FILE: &str = "config.toml";
pub const LOG_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.grmc";

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub records: Vec<EpochRecord>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub params: u64,
    /// Held-out metrics of the final model, reported units.
    pub test: Metrics,
}

/// Trains `config` into `out`: resolved config snapshot, metric log,
/// periodic and final checkpoints.
pub fn train(config: &GraphormerConfig, out: &Path) -> CliResult<TrainSummary> {
    config.validate()?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let snapshot = out.join(CONFIG_FILE);
    fs::write(&snapshot, config.render()).map_err(|e| io_err(&snapshot, e))?;
    match config.model.precision {
        Precision::F32 => train_typed::<f32>(config, out),
        Precision::F64 => train_typed::<f64>(config, out),
    }
}

fn train_typed<T: Real>(config: &GraphormerConfig, out: &Path) -> CliResult<TrainSummary> {
    let mut state = TrainState::<T>::new(config)?;
    let data = TrainData::generate(config, &state.model.geometry)?;
    let log_path = out.join(LOG_FILE);
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| io_err(&log_path, e))?);
    log.write_all(log_preamble(config).as_bytes()).map_err(|e| io_err(&log_path, e))?;
    log.flush().map_err(|e| io_err(&log_path, e))?;
    let every = config.train.checkpoint_every;
    let mut last_good: Option<PathBuf> = None;
    let result = train_loop(&mut state, &data, |s, rec| {
        writeln!(log, "{}", rec.csv_row())?;
        log.flush()?;
        if every > 0 && s.epoch % every == 0 {
            let path = out.join(format!("checkpoint_epoch{:04}.grmc", s.epoch));
            save_checkpoint(&path, s)?;
            last_good = Some(path);
        }
        Ok(())
    });
    let records = match result {
        Ok(r) => r,
        Err(Error::NonFinite(what)) => {
            let last = last_good.map_or("none".to_string(), |p| p.display().to_string());
            return Err(CliError {
                code: EXIT_NUMERIC,
                message: format!(
                    "non-finite {what} during epoch {}; last good checkpoint: {last}",
                    state.epoch + 1
                ),
            });
        }
        Err(e) => return Err(e.into()),
    };
    let checkpoint = out.join(CHECKPOINT_FILE);
    save_checkpoint(&checkpoint, &state)?;
    let test = match records.last() {
        Some(r) => r.test,
        None => mean_metrics(&evaluate(&state.model, &data, Split::Test, config.train.workers)?).reported(),
    };
    Ok(TrainSummary {
        records,
        checkpoint,
        log: log_path,
        params: state.model.store.total_numel() as u64,
        test,
    })
}

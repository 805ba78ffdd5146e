use std::path::Path;

use crate::metrics::read_metrics;
use crate::RunError;

pub const COLUMNS: [&str; 10] = [
    "epoch",
    "vq",
    "mq",
    "ta",
    "composite",
    "policy_loss",
    "kl_loss",
    "total_loss",
    "mask_fraction",
    "rho",
];

/// Writes one CSV row per logged epoch.
pub fn export_plot_data(log: &Path, out: &Path) -> Result<usize, RunError> {
    let records = read_metrics(log)?;
    let csv_err = |e: csv::Error| RunError::Parse(e.to_string());
    let mut w = csv::Writer::from_path(out).map_err(csv_err)?;
    w.write_record(COLUMNS).map_err(csv_err)?;
    for r in &records {
        let m = r.reward_means;
        let row = [
            r.epoch.to_string(),
            m.vq.to_string(),
            m.mq.to_string(),
            m.ta.to_string(),
            r.composite.to_string(),
            r.policy_loss.to_string(),
            r.kl_loss.to_string(),
            r.total_loss.to_string(),
            r.mask_fraction.to_string(),
            r.rho.to_string(),
        ];
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| RunError::io(out, e))?;
    Ok(records.len())
}

use std::path::Path;

use crate::backbones::{embed_with, EncoderConfig};
use crate::error::{Error, Result};
use crate::harmonize::SensorWindow;
use crate::params::ParamStore;

/// Write one CSV row per window: embedding values, label, subject, dataset
/// and window id. Returns the embedding width.
pub fn export_embeddings(
    store: &ParamStore,
    cfg: &EncoderConfig,
    windows: &[&SensorWindow],
    batch: usize,
    out: &Path,
) -> Result<usize> {
    let emb = embed_with(store, cfg, windows, batch);
    let width = cfg.embedding_width();
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
    let mut header: Vec<String> = (0..width).map(|i| format!("e{i}")).collect();
    header.extend(["label", "subject", "dataset", "window_id"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for (i, win) in windows.iter().enumerate() {
        let mut row: Vec<String> = emb.row(i).iter().map(|v| format!("{v:e}")).collect();
        row.extend([win.label.to_string(), win.subject_id.clone(), win.dataset_id.clone(), win.id.clone()]);
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    crate::fsutil::atomic_write(out, &bytes)?;
    Ok(width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbones::{Encoder, Family};
    use crate::seed::rng;
    use crate::tensor::Tensor;

    #[test]
    fn rows_widths_and_determinism() {
        let enc = Encoder::init(EncoderConfig::desk(Family::ConvInception), 1).unwrap();
        let windows: Vec<SensorWindow> = (0..5)
            .map(|i| {
                let v = Tensor::randn(&[768], 1.0, &mut rng(i)).into_data();
                SensorWindow::new(format!("d/s{i}/0/0"), v, (i % 3) as u8, format!("s{i}"), "d".into()).unwrap()
            })
            .collect();
        let refs: Vec<&SensorWindow> = windows.iter().collect();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        let width = export_embeddings(&enc.params, &enc.config, &refs, 2, &a).unwrap();
        export_embeddings(&enc.params, &enc.config, &refs, 3, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let mut r = csv::Reader::from_path(&a).unwrap();
        let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        assert_eq!(rows.len(), 5);
        assert!(rows.iter().all(|row| row.len() == width + 4));
        assert_eq!(&rows[4][width + 1], "s4");
    }
}

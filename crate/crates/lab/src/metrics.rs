//! `metrics.csv` writer running on its own thread behind a bounded queue.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, SyncSender};
use std::thread::JoinHandle;

use uda_core::trainer::MetricsRecord;

use crate::error::{LabError, Result};
use crate::formats::{metrics_row, METRICS_HEADER};

pub const QUEUE_BOUND: usize = 64;

pub struct MetricsWriter {
    tx: Option<SyncSender<MetricsRecord>>,
    handle: Option<JoinHandle<Result<usize>>>,
    path: PathBuf,
}

impl MetricsWriter {
    /// Creates the file, writes the header and starts the writer thread.
    pub fn spawn(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| LabError::io(path, e))?;
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(f);
        let err_path = path.to_path_buf();
        w.write_record(METRICS_HEADER).map_err(|e| LabError::format(err_path.display().to_string(), e))?;
        let (tx, rx) = sync_channel::<MetricsRecord>(QUEUE_BOUND);
        let handle = std::thread::spawn(move || {
            let mut rows = 0;
            let fail = |e: csv::Error| LabError::format(err_path.display().to_string(), e);
            for rec in rx {
                w.write_record(metrics_row(&rec)).map_err(fail)?;
                rows += 1;
            }
            w.flush().map_err(|e| LabError::io(&err_path, e))?;
            Ok(rows)
        });
        Ok(MetricsWriter { tx: Some(tx), handle: Some(handle), path: path.to_path_buf() })
    }

    /// Queues a record; blocks only while the queue is full.
    pub fn send(&self, rec: &MetricsRecord) {
        if let Some(tx) = &self.tx {
            // a dead writer surfaces its error from finish()
            let _ = tx.send(*rec);
        }
    }

    /// Closes the queue, waits for the thread and returns the row count.
    pub fn finish(mut self) -> Result<usize> {
        self.tx.take();
        let handle = self.handle.take().expect("finish called once");
        handle
            .join()
            .map_err(|_| LabError::format(self.path.display().to_string(), "metrics writer panicked"))?
    }
}

impl Drop for MetricsWriter {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

//! CSV formats for domain pairs, embeddings and per-run metrics.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a value
//! read back parses to the identical `f64`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use uda_core::analysis::Embeddings;
use uda_core::datasets::{one_hot, DataModality, DatasetMeta, DomainPair};
use uda_core::trainer::MetricsRecord;
use uda_core::Tensor;

use crate::error::{LabError, Result};

/// Column order of `metrics.csv`.
pub const METRICS_HEADER: [&str; 11] =
    ["epoch", "ce", "vat", "aug", "tc", "adv", "total", "source_acc", "target_acc", "lr", "grl_lambda"];

pub fn metrics_row(r: &MetricsRecord) -> Vec<String> {
    let l = &r.losses;
    vec![
        r.epoch.to_string(),
        l.ce.to_string(),
        l.vat.to_string(),
        l.aug.to_string(),
        l.tc.to_string(),
        l.adv.to_string(),
        l.total.to_string(),
        r.source_acc.to_string(),
        r.target_acc.map(|v| v.to_string()).unwrap_or_default(),
        r.lr.to_string(),
        r.grl_lambda.to_string(),
    ]
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    let f = File::create(path).map_err(|e| LabError::io(path, e))?;
    Ok(writer(f))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> LabError + '_ {
    move |e| LabError::format(path.display().to_string(), e)
}

/// Writes a table with the given header to `path`.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

/// Header `x_0..x_{d−1}, y, domain`; source rows (domain 0) then target rows
/// (domain 1). Target labels are the evaluation labels.
pub fn write_pair<W: Write>(pair: &DomainPair, out: W) -> Result<()> {
    let d = pair.input_dim();
    let mut w = writer(out);
    let mut header: Vec<String> = (0..d).map(|j| format!("x_{j}")).collect();
    header.push("y".into());
    header.push("domain".into());
    let err = |e: csv::Error| LabError::format("domain pair csv", e);
    w.write_record(&header).map_err(err)?;
    for (x, y, dom) in [(pair.x_s(), pair.y_s(), 0), (pair.x_t(), pair.target_labels(), 1)] {
        for (i, label) in y.argmax_rows().into_iter().enumerate() {
            let mut row: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
            row.push(label.to_string());
            row.push(dom.to_string());
            w.write_record(&row).map_err(err)?;
        }
    }
    w.flush().map_err(|e| LabError::format("domain pair csv", e))
}

pub fn save_pair(pair: &DomainPair, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| LabError::io(path, e))?;
    write_pair(pair, f)
}

/// Reads a pair written by [`write_pair`]. The file carries no modality or
/// class count, so both are supplied by the caller.
pub fn read_pair<R: Read>(input: R, modality: DataModality, classes: usize, meta: DatasetMeta) -> Result<DomainPair> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let bad = |reason: String| LabError::format("domain pair csv", reason);
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let cols = header.len();
    if cols < 3 || &header[cols - 2] != "y" || &header[cols - 1] != "domain" {
        return Err(bad("expected columns x_0..x_{d-1}, y, domain".into()));
    }
    let d = cols - 2;
    let (mut xs, mut ys, mut xt, mut yt) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |k: usize| -> Result<f64> {
            rec[k].trim().parse::<f64>().map_err(|e| bad(format!("row {}: column {k}: {e}", line + 1)))
        };
        let x: Vec<f64> = (0..d).map(num).collect::<Result<_>>()?;
        let y: usize = rec[d].trim().parse().map_err(|e| bad(format!("row {}: label: {e}", line + 1)))?;
        if y >= classes {
            return Err(bad(format!("row {}: label {y} out of range for {classes} classes", line + 1)));
        }
        match rec[d + 1].trim() {
            "0" => {
                xs.extend(x);
                ys.push(y);
            }
            "1" => {
                xt.extend(x);
                yt.push(y);
            }
            other => return Err(bad(format!("row {}: domain must be 0 or 1, got {other}", line + 1))),
        }
    }
    if ys.is_empty() || yt.is_empty() {
        return Err(bad("both domains need at least one row".into()));
    }
    let (ns, nt) = (ys.len(), yt.len());
    Ok(DomainPair::from_parts(
        Tensor::matrix(ns, d, xs),
        one_hot(&ys, classes),
        Tensor::matrix(nt, d, xt),
        one_hot(&yt, classes),
        modality,
        meta,
    )?)
}

pub fn load_pair(path: &Path, modality: DataModality, classes: usize, meta: DatasetMeta) -> Result<DomainPair> {
    let f = File::open(path).map_err(|e| LabError::io(path, e))?;
    read_pair(f, modality, classes, meta)
}

/// Header `z_0..z_{k−1}, label, domain`.
pub fn save_embeddings(e: &Embeddings, path: &Path) -> Result<()> {
    let k = e.z.cols();
    let mut header: Vec<String> = (0..k).map(|j| format!("z_{j}")).collect();
    header.push("label".into());
    header.push("domain".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..e.z.rows()).map(|i| {
        let mut row: Vec<String> = e.z.row(i).iter().map(|v| v.to_string()).collect();
        row.push(e.labels[i].to_string());
        row.push(e.domains[i].to_string());
        row
    });
    write_table(path, &header, rows)
}

pub fn load_embeddings(path: &Path) -> Result<Embeddings> {
    let f = File::open(path).map_err(|e| LabError::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(f);
    let bad = |reason: String| LabError::format(path.display().to_string(), reason);
    let cols = rdr.headers().map_err(|e| bad(e.to_string()))?.len();
    if cols < 3 {
        return Err(bad("expected columns z_0..z_{k-1}, label, domain".into()));
    }
    let k = cols - 2;
    let (mut z, mut labels, mut domains) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        for j in 0..k {
            z.push(rec[j].parse::<f64>().map_err(|e| bad(e.to_string()))?);
        }
        labels.push(rec[k].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?);
        domains.push(rec[k + 1].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?);
    }
    let n = labels.len();
    Ok(Embeddings { z: Tensor::matrix(n, k, z), labels, domains })
}

/// SHA-256 over the raw bits of every tensor in the pair, hex encoded.
pub fn pair_hash(pair: &DomainPair) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for t in [pair.x_s(), pair.y_s(), pair.x_t(), pair.target_labels()] {
        for &d in t.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

//! CSV writers. Every file starts with `#`-prefixed lines that record the
//! seed and configuration it was produced with.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::gibbs::McmcTrace;
use crate::partition::SimilarityMatrix;

/// Writes `preamble` as comment lines followed by a CSV table.
pub fn write_csv<I, R>(path: &Path, preamble: &[String], header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut out = BufWriter::new(File::create(path)?);
    for line in preamble {
        for part in line.lines() {
            writeln!(out, "# {part}")?;
        }
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Formats a float so that it parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_else(|| "NA".into())
}

/// One row per retained draw: coefficients by column name, then `sigma2`.
pub fn write_trace_csv(path: &Path, preamble: &[String], names: &[String], trace: &McmcTrace) -> Result<()> {
    let mut header = names.to_vec();
    header.push("sigma2".into());
    let reg = &trace.regression;
    write_csv(
        path,
        preamble,
        &header,
        (0..reg.n_draws()).map(|m| {
            reg.beta(m)
                .iter()
                .copied()
                .chain(std::iter::once(reg.sigma2()[m]))
                .map(fmt_f64)
                .collect::<Vec<_>>()
        }),
    )
}

/// Allocation draws of covariate `j` as an integer matrix.
pub fn write_allocations_csv(path: &Path, preamble: &[String], labels: &[String], trace: &McmcTrace, j: usize) -> Result<()> {
    write_csv(
        path,
        preamble,
        labels,
        trace.allocations[j].iter().map(|d| d.iter().map(u32::to_string).collect::<Vec<_>>()),
    )
}

/// Co-clustering matrix with element labels on both axes.
pub fn write_similarity_csv(path: &Path, preamble: &[String], labels: &[String], c: &SimilarityMatrix) -> Result<()> {
    let mut header = vec!["level".to_string()];
    header.extend(labels.iter().cloned());
    let m = c.matrix();
    write_csv(
        path,
        preamble,
        &header,
        labels.iter().enumerate().map(|(g, l)| {
            std::iter::once(l.clone())
                .chain((0..m.ncols()).map(|h| fmt_f64(m[(g, h)])))
                .collect::<Vec<_>>()
        }),
    )
}

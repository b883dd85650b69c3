//! CSV serialization of simulation traces.
//!
//! Column layout (for n nodes and m edges):
//! `t, x_1..x_n, xbar_1..xbar_n, up_1..up_n, ue_1..ue_m, xp_1..xp_n,
//! xe_1..xe_m, V, err_x, err_up, sat_flags`.
//!
//! Values are written in scientific notation with 13 significant digits, so
//! identical runs produce byte-identical files.

use crate::simulator::SimTrace;
use crate::Result;
use std::io::Write;
use std::path::Path;

fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

/// Write the trace as CSV.
pub fn write_csv<W: Write>(trace: &SimTrace, mut w: W) -> Result<()> {
    let mut header = vec!["t".to_string()];
    let cols = |prefix: &str, count: usize| -> Vec<String> {
        (1..=count).map(|i| format!("{prefix}_{i}")).collect()
    };
    header.extend(cols("x", trace.n));
    header.extend(cols("xbar", trace.n));
    header.extend(cols("up", trace.n));
    header.extend(cols("ue", trace.m));
    header.extend(cols("xp", trace.n));
    header.extend(cols("xe", trace.m));
    header.push("V".into());
    header.push("err_x".into());
    header.push("err_up".into());
    header.push("sat_flags".into());
    writeln!(w, "{}", header.join(","))?;

    for rec in &trace.records {
        let mut row = Vec::with_capacity(header.len());
        row.push(fmt(rec.t));
        for v in rec.x.iter().chain(rec.xbar.iter()).chain(rec.u_p.iter()) {
            row.push(fmt(*v));
        }
        for v in rec.u_e.iter() {
            row.push(fmt(*v));
        }
        for v in rec.x_p.iter() {
            row.push(fmt(*v));
        }
        for v in rec.x_e.iter() {
            row.push(fmt(*v));
        }
        row.push(fmt(rec.v));
        row.push(fmt(rec.err_x));
        row.push(fmt(rec.err_up));
        row.push(rec.sat.render());
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Write the trace to a file path.
pub fn write_csv_file(trace: &SimTrace, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut buf = std::io::BufWriter::new(file);
    write_csv(trace, &mut buf)?;
    buf.flush()?;
    Ok(())
}

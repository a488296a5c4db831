//! CSV artifacts and atomic file writes.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};
use superatom::ObservableSeries;

pub const BASE_COLUMNS: [&str; 8] = ["t_us", "pr0", "pr1", "pr2", "pr_ge3", "pop_e_total", "purity", "trace_err"];

pub const SUMMARY_HEADER: &str = "n_atoms,engine,pr1_t_end,stderr_pr1";

pub fn header(n_atoms: usize, with_stderr: bool) -> String {
    let mut cols: Vec<String> = BASE_COLUMNS.iter().map(|c| c.to_string()).collect();
    cols.extend((0..n_atoms).map(|j| format!("per_atom_rr_{j}")));
    if with_stderr {
        cols.push("stderr_pr1".into());
    }
    cols.join(",")
}

/// Nine significant digits in scientific notation; `.` is the only decimal
/// separator Rust formatting produces.
pub fn num(x: f64) -> String {
    format!("{x:.8e}")
}

/// CSV text for one series; `stderr_pr1` is appended when given.
pub fn series_csv(series: &ObservableSeries, stderr_pr1: Option<&[f64]>) -> String {
    let n = series.n_atoms();
    let mut out = header(n, stderr_pr1.is_some());
    out.push('\n');
    for k in 0..series.len() {
        let p = &series.pr_n[k];
        let fields = [
            series.times[k],
            p[0],
            p[1],
            p[2],
            p[3],
            series.pop_e_total[k],
            series.purity[k],
            series.trace_error[k],
        ];
        let mut row: Vec<String> = fields.iter().map(|&x| num(x)).collect();
        row.extend(series.per_atom_rr[k].iter().map(|&x| num(x)));
        if let Some(se) = stderr_pr1 {
            row.push(num(se[k]));
        }
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

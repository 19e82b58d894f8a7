//! CSV rows, number formatting and atomic file writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::HarnessError;

pub const CSV_HEADER: &str = "experiment_id,model,kernel,epsilon,N,seed,k,estimate_mean,oracle_mean,abs_error,rv_count_step,rv_count_cum,wall_ms";

/// Decimal with 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub experiment_id: String,
    pub model: String,
    pub kernel: String,
    pub epsilon: f64,
    pub n: usize,
    pub seed: u64,
    pub k: usize,
    pub estimate_mean: f64,
    pub oracle_mean: f64,
    pub abs_error: f64,
    pub rv_count_step: u64,
    pub rv_count_cum: u64,
    pub wall_ms: f64,
}

impl CsvRow {
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.experiment_id,
            self.model,
            self.kernel,
            fmt_num(self.epsilon),
            self.n,
            self.seed,
            self.k,
            fmt_num(self.estimate_mean),
            fmt_num(self.oracle_mean),
            fmt_num(self.abs_error),
            self.rv_count_step,
            self.rv_count_cum,
            fmt_num(self.wall_ms)
        )
    }
}

pub fn render_csv(rows: &[CsvRow]) -> String {
    let mut out = String::with_capacity(128 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir.display(), e))?;
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        HarnessError::io(path.display(), e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_carry_seventeen_digits() {
        assert_eq!(fmt_num(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_num(16.0), "1.6000000000000000e1");
        let x = std::f64::consts::PI;
        assert_eq!(fmt_num(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn header_is_exact() {
        let csv = render_csv(&[]);
        assert_eq!(
            csv,
            "experiment_id,model,kernel,epsilon,N,seed,k,estimate_mean,oracle_mean,abs_error,rv_count_step,rv_count_cum,wall_ms\n"
        );
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = std::env::temp_dir().join(format!("msfilter-out-test-{}", std::process::id()));
        let path = dir.join("a.csv");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(fs::read_dir(&dir).unwrap().count(), 1);
        fs::remove_dir_all(dir).unwrap();
    }
}

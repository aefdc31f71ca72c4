//! CSV and manifest writers. Floats use Rust's shortest round-trip
//! formatting, so identical runs produce identical bytes.

use std::io::Write;
use std::path::Path;

use crdme_core::stats::{SummaryStats, SurvivalCurve};

use crate::driver::{fnv64, LevelRow};

pub fn survival_csv(curve: &SurvivalCurve) -> String {
    let mut s = String::from("t,S,ci_lo,ci_hi\n");
    for &(t, v) in &curve.steps {
        let hw = curve.half_width(v);
        s.push_str(&format!(
            "{},{},{},{}\n",
            t,
            v,
            (v - hw).max(0.0),
            (v + hw).min(1.0)
        ));
    }
    s
}

pub fn pbound_csv(grid: &[f64], stats: &[SummaryStats]) -> String {
    debug_assert_eq!(grid.len(), stats.len());
    let mut s = String::from("t,mean,ci_lo,ci_hi\n");
    for (t, st) in grid.iter().zip(stats) {
        let (lo, hi) = st.ci();
        s.push_str(&format!("{},{},{},{}\n", t, st.mean, lo, hi));
    }
    s
}

pub fn convergence_csv(rows: &[LevelRow]) -> String {
    let mut s = String::from("level,h,rb_over_h,stat,ci,diff\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.level,
            r.h,
            r.rb_over_h,
            r.stat.mean,
            r.stat.half_width,
            r.diff.map_or(String::new(), |d| d.to_string())
        ));
    }
    s
}

/// Key-value run record. Everything but the trailing timestamp is a pure
/// function of the inputs, so reruns differ only in that line.
pub fn manifest_text(
    command: &str,
    config_text: &str,
    seed: u64,
    extras: &[(String, String)],
) -> String {
    let mut s = String::new();
    s.push_str(&format!("command = {command}\n"));
    s.push_str(&format!(
        "config_fnv1a = {:016x}\n",
        fnv64(config_text.as_bytes())
    ));
    s.push_str(&format!("seed = {seed}\n"));
    s.push_str(&format!("version = {}\n", env!("CARGO_PKG_VERSION")));
    for (k, v) in extras {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s.push_str(&format!(
        "timestamp = {}\n",
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    ));
    s
}

pub fn write_file(path: &Path, contents: &str) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(contents.as_bytes())?;
    f.flush()
}

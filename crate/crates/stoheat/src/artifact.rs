//! Byte-stable artifact writing.
//!
//! All numeric output uses decimal scientific notation with 17 significant
//! digits (round-trip exact for f64) and a fixed column order, so a rerun
//! with the same seed yields byte-identical files regardless of thread
//! count. Files are written atomically (temp + rename).

use crate::error::Result;
use crate::estimator::{HolderEstimate, IncrementTable, WeakLimitPoint};
use crate::rng::mix64;
use crate::simulate::FieldEnsemble;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

/// 17-significant-digit decimal rendering; round-trips any finite f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Short hexadecimal run id derived from the canonical metadata bytes.
pub fn run_id(meta_json: &str) -> String {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in meta_json.as_bytes() {
        h = mix64(h ^ *b as u64);
    }
    format!("{h:016x}")
}

/// Atomic write: temp file in the target directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "artifact".into()),
        std::process::id()
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Ensemble CSV: `replica,t_index,x_index,value` rows over the stored grid.
pub fn ensemble_csv(ens: &FieldEnsemble) -> String {
    let mut out = String::with_capacity(ens.replicas() * ens.n_times() * ens.n_cols() * 28);
    out.push_str("replica,t_index,x_index,value\n");
    for r in 0..ens.replicas() {
        for ti in 0..ens.n_times() {
            for ci in 0..ens.n_cols() {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    ens.replica_offset() + r,
                    ti,
                    ci,
                    fmt_f64(ens.value(r, ti, ci))
                );
            }
        }
    }
    out
}

/// Axis sidecar for the ensemble CSV: stored times and locations.
pub fn ensemble_axes_json(ens: &FieldEnsemble) -> Result<String> {
    #[derive(serde::Serialize)]
    struct Axes<'a> {
        times: &'a [f64],
        xs: &'a [f64],
    }
    Ok(serde_json::to_string_pretty(&Axes {
        times: ens.stored_times(),
        xs: ens.stored_xs(),
    })?)
}

/// Moment sweep rows `(t, x, value, kind)`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SweepRow {
    pub t: f64,
    pub x: f64,
    pub value: f64,
    pub kind: String,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("t,x,value,kind\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", fmt_f64(r.t), fmt_f64(r.x), fmt_f64(r.value), r.kind);
    }
    out
}

/// Lag table CSV: `lag,moment,stderr,replicas,anchors`.
pub fn lag_table_csv(table: &IncrementTable) -> String {
    let mut out = String::from("lag,moment,stderr,replicas,anchors\n");
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_f64(r.lag),
            fmt_f64(r.moment),
            fmt_f64(r.std_error),
            r.replicas,
            r.anchors
        );
    }
    out
}

/// Weak-limit error sequence CSV: `t,error_sq,stderr`.
pub fn weak_limit_csv(points: &[WeakLimitPoint]) -> String {
    let mut out = String::from("t,error_sq,stderr\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{}",
            fmt_f64(p.t),
            fmt_f64(p.error_sq),
            fmt_f64(p.std_error)
        );
    }
    out
}

pub fn estimate_json(est: &HolderEstimate) -> Result<String> {
    Ok(serde_json::to_string_pretty(est)?)
}

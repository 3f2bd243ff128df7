//! Whitespace-separated data files for external plotting.
//!
//! The output is a pure function of the record's grid, so re-emitting from
//! the same record gives byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{LabError, LabResult};
use crate::record::RunRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// `log10 x`, `log10 mean cost`, error bar on the log scale.
    RateFit,
    /// Grid value, normalized mean and its SE.
    Plateau,
    /// Grid value, SD of the normalized costs and its SE.
    SdDecay,
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [PlotKind::RateFit, PlotKind::Plateau, PlotKind::SdDecay];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::RateFit => "rate-fit",
            PlotKind::Plateau => "plateau",
            PlotKind::SdDecay => "sd-decay",
        }
    }
}

impl FromStr for PlotKind {
    type Err = LabError;

    fn from_str(s: &str) -> LabResult<Self> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| LabError::Plot(format!("unknown plot kind '{s}' (expected rate-fit, plateau or sd-decay)")))
    }
}

pub fn render(record: &RunRecord, kind: PlotKind) -> LabResult<String> {
    if record.grid.is_empty() {
        return Err(LabError::Plot("record has no grid points".into()));
    }
    let label = &record.grid_label;
    let mut out = String::new();
    match kind {
        PlotKind::RateFit => {
            writeln!(out, "# log10_{label} log10_mean_cost log10_se").unwrap();
            for g in record.grid.iter().filter(|g| g.mean_cost > 0.0) {
                let err = g.se_cost / (g.mean_cost * std::f64::consts::LN_10);
                writeln!(out, "{:e} {:e} {:e}", g.value.log10(), g.mean_cost.log10(), err).unwrap();
            }
            if let Some(f) = &record.fit {
                writeln!(out, "# slope {:e} intercept_log10 {:e}", f.exponent, f.intercept / std::f64::consts::LN_10).unwrap();
            }
        }
        PlotKind::Plateau => {
            writeln!(out, "# {label} normalized se").unwrap();
            for g in &record.grid {
                writeln!(out, "{:e} {:e} {:e}", g.value, g.normalized, g.normalized_se).unwrap();
            }
            if let Some(c) = &record.constant {
                writeln!(out, "# constant {:e} se {:e}", c.value, c.se).unwrap();
            }
        }
        PlotKind::SdDecay => {
            writeln!(out, "# {label} sd_normalized sd_se").unwrap();
            for g in &record.grid {
                writeln!(out, "{:e} {:e} {:e}", g.value, g.normalized_sd, g.normalized_sd_se).unwrap();
            }
        }
    }
    Ok(out)
}

/// Writes `{kind}.dat` into `dir` and returns its path.
pub fn emit_plot_data(record: &RunRecord, kind: PlotKind, dir: &Path) -> LabResult<PathBuf> {
    let text = render(record, kind)?;
    std::fs::create_dir_all(dir).map_err(crate::error::io_err(dir))?;
    let path = dir.join(format!("{}.dat", kind.name()));
    crate::record::write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::tests::sample_record;

    #[test]
    fn kinds_parse() {
        for k in PlotKind::ALL {
            assert_eq!(k.name().parse::<PlotKind>().unwrap(), k);
        }
        assert!("histogram".parse::<PlotKind>().is_err());
    }

    #[test]
    fn deterministic_and_nonempty() {
        let r = sample_record();
        let a = render(&r, PlotKind::RateFit).unwrap();
        assert_eq!(a, render(&r, PlotKind::RateFit).unwrap());
        assert_eq!(a.lines().filter(|l| !l.starts_with('#')).count(), 1);
        let mut empty = r.clone();
        empty.grid.clear();
        assert!(render(&empty, PlotKind::Plateau).is_err());
    }
}

//! File formats: particle CSV, grid binary with a JSON sidecar, trajectory
//! CSV, JSON lines and plot data.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::measures::{Grid, GridMeasure, ParticleMeasure};

/// Columns `x_1..x_d, w`.
pub fn write_particles(path: &Path, p: &ParticleMeasure) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=p.dim()).map(|i| format!("x_{i}")).collect();
    header.push("w".into());
    w.write_record(&header)?;
    for (x, m) in p.iter() {
        let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        row.push(m.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_particles(path: &Path, domain: Domain) -> Result<ParticleMeasure> {
    let d = domain.dim();
    let mut r = csv::Reader::from_path(path)?;
    let ncol = r.headers()?.len();
    if ncol != d + 1 {
        return Err(Error::Io(format!(
            "{}: expected {} columns for dimension {d}, found {ncol}",
            path.display(),
            d + 1
        )));
    }
    let (mut pts, mut ws) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Io(format!("{}: row {}: `{field}` is not a number", path.display(), i + 2)))?;
            if j < d {
                pts.push(v);
            } else {
                ws.push(v);
            }
        }
    }
    ParticleMeasure::new(domain, pts, ws)
}

/// Metadata stored next to a grid's raw values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub shape: Vec<usize>,
    pub cell_volume: f64,
    pub domain: String,
    /// Euclidean grids only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<Vec<f64>>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Row-major little-endian `f64` values at `path`, metadata at `path.json`.
pub fn write_grid(path: &Path, g: &GridMeasure) -> Result<()> {
    let grid = g.grid();
    let euclid = !grid.domain().is_torus();
    let meta = GridSidecar {
        shape: grid.shape().to_vec(),
        cell_volume: grid.cell_volume(),
        domain: grid.domain().to_string(),
        origin: euclid.then(|| grid.origin().to_vec()),
        spacing: euclid.then(|| grid.spacing().to_vec()),
    };
    let bytes: Vec<u8> = g.values().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes)?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<GridMeasure> {
    let meta: GridSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    let domain: Domain = meta.domain.parse().map_err(|_| Error::Io(format!("bad domain `{}`", meta.domain)))?;
    let grid = if domain.is_torus() {
        Grid::torus(&meta.shape)?
    } else {
        let (o, h) = meta
            .origin
            .as_ref()
            .zip(meta.spacing.as_ref())
            .ok_or_else(|| Error::Io("euclidean grid sidecar needs origin and spacing".into()))?;
        Grid::euclidean(o, h, &meta.shape)?
    };
    if grid.dim() != domain.dim() {
        return Err(Error::Io(format!("shape {:?} does not match domain {domain}", meta.shape)));
    }
    if (grid.cell_volume() - meta.cell_volume).abs() > 1e-12 * meta.cell_volume.abs().max(1.0) {
        return Err(Error::Io(format!(
            "sidecar cell_volume {} disagrees with the lattice ({})",
            meta.cell_volume,
            grid.cell_volume()
        )));
    }
    let bytes = fs::read(path)?;
    if bytes.len() != 8 * grid.len() {
        return Err(Error::Io(format!("{}: {} bytes for {} cells", path.display(), bytes.len(), grid.len())));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    GridMeasure::new(grid, values)
}

pub const TRAJECTORY_COLUMNS: [&str; 9] =
    ["t", "energy", "grad_norm_sq", "pl_ratio", "min_f", "max_f", "sup_dv", "holder_mu", "support_radius"];

/// One row per record; `support_radius` is empty on the torus.
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRAJECTORY_COLUMNS)?;
    for r in &traj.records {
        let e = &r.report;
        let m = &r.monitor;
        w.write_record([
            r.t.to_string(),
            e.energy.to_string(),
            e.grad_norm_sq.to_string(),
            e.pl_ratio.to_string(),
            e.min_density.to_string(),
            e.max_density.to_string(),
            m.sup_dv.to_string(),
            m.holder_mu.to_string(),
            m.support_radius.map_or_else(String::new, |v| v.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Header plus numeric rows.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// One JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it)?);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Energy,
    Pl,
    Bounds,
    /// Instantaneous decay rate `-d ln E / dt` between records.
    Exponent,
}

impl PlotKind {
    pub fn name(self) -> &'static str {
        match self {
            PlotKind::Energy => "energy",
            PlotKind::Pl => "pl",
            PlotKind::Bounds => "bounds",
            PlotKind::Exponent => "exponent",
        }
    }
}

impl std::str::FromStr for PlotKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "energy" => Ok(PlotKind::Energy),
            "pl" => Ok(PlotKind::Pl),
            "bounds" => Ok(PlotKind::Bounds),
            "exponent" => Ok(PlotKind::Exponent),
            _ => Err(Error::Validation {
                field: "plot".into(),
                message: format!("expected energy | pl | bounds | exponent, got `{s}`"),
            }),
        }
    }
}

fn two_column(label: &str, pts: &[(f64, f64)]) -> String {
    let mut s = format!("t,{label}\n");
    for (t, v) in pts {
        s.push_str(&format!("{t},{v}\n"));
    }
    s
}

fn gnuplot(title: &str, series: &[(&str, &str)], logy: bool) -> String {
    let mut s = String::from("set datafile separator ','\nset key autotitle columnhead\nset xlabel 't'\n");
    s.push_str(&format!("set title '{title}'\n"));
    if logy {
        s.push_str("set logscale y\n");
    }
    let plots: Vec<String> =
        series.iter().map(|(file, name)| format!("'{file}' using 1:2 with linespoints title '{name}'")).collect();
    s.push_str(&format!("plot {}\n", plots.join(", \\\n     ")));
    s
}

/// Write plot data for `kind` into `dir`; returns the files written.
///
/// Every file is rendered before any is written, and files already written
/// are removed if a later write fails.
pub fn emit_plotdata(traj: &Trajectory, kind: PlotKind, dir: &Path) -> Result<Vec<PathBuf>> {
    let recs = &traj.records;
    if recs.is_empty() {
        return Err(Error::Io("empty trajectory: nothing to plot".into()));
    }
    let series =
        |f: &dyn Fn(&crate::dynamics::Record) -> f64| -> Vec<(f64, f64)> { recs.iter().map(|r| (r.t, f(r))).collect() };
    let name = kind.name();
    let mut files: Vec<(String, String)> = Vec::new();
    match kind {
        PlotKind::Energy => {
            files.push(("energy.csv".into(), two_column("energy", &series(&|r| r.report.energy))));
            files.push(("log_energy.csv".into(), two_column("log_energy", &series(&|r| r.report.energy.ln()))));
            files.push(("energy.gp".into(), gnuplot("energy", &[("energy.csv", "E(t)")], true)));
        }
        PlotKind::Pl => {
            files.push(("pl.csv".into(), two_column("pl_ratio", &series(&|r| r.report.pl_ratio))));
            files.push(("pl.gp".into(), gnuplot("PL ratio", &[("pl.csv", "|grad phi|^2 / E")], false)));
        }
        PlotKind::Bounds => {
            files.push(("bounds_min.csv".into(), two_column("min_f", &series(&|r| r.report.min_density))));
            files.push(("bounds_max.csv".into(), two_column("max_f", &series(&|r| r.report.max_density))));
            files.push((
                "bounds.gp".into(),
                gnuplot("density bounds", &[("bounds_min.csv", "min f"), ("bounds_max.csv", "max f")], false),
            ));
        }
        PlotKind::Exponent => {
            if recs.len() < 2 {
                return Err(Error::Io("exponent plot needs at least two records".into()));
            }
            let pts: Vec<(f64, f64)> = recs
                .windows(2)
                .map(|w| {
                    let dt = w[1].t - w[0].t;
                    (0.5 * (w[0].t + w[1].t), -(w[1].report.energy.ln() - w[0].report.energy.ln()) / dt)
                })
                .collect();
            files.push(("exponent.csv".into(), two_column("rate", &pts)));
            files.push(("exponent.gp".into(), gnuplot("decay rate", &[("exponent.csv", "-dlnE/dt")], false)));
        }
    }
    debug_assert!(files.iter().any(|(f, _)| f.starts_with(name)));
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (file, body) in &files {
        let p = dir.join(file);
        if let Err(e) = fs::write(&p, body) {
            for q in &written {
                let _ = fs::remove_file(q);
            }
            return Err(e.into());
        }
        written.push(p);
    }
    Ok(written)
}

//! CSV emission and run manifests.
//!
//! Numbers are written as `{:.16e}` (17 significant digits) so that repeated
//! runs can be compared byte for byte.

use crate::error::Result;
use crate::leader::HistoryRow;
use crate::nash::FollowerVector;
use crate::state::{Context, ControlField, ControlSet, Trajectory};
use crate::functionals::Player;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// A CSV table with a one-line header.
#[derive(Debug, Clone, PartialEq)]
pub struct Csv {
    body: String,
    ncol: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut body = header.join(",");
        body.push('\n');
        Csv { body, ncol: header.len() }
    }

    /// Appends a row; cells are preformatted.
    pub fn row<I: IntoIterator<Item = String>>(&mut self, cells: I) {
        let cells: Vec<String> = cells.into_iter().collect();
        debug_assert_eq!(cells.len(), self.ncol);
        self.body.push_str(&cells.join(","));
        self.body.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.body
    }

    pub fn n_rows(&self) -> usize {
        self.body.lines().count() - 1
    }
}

/// Coefficients per step: step, time, field (z or w), mode indices k, l, value.
pub fn trajectory_csv(ctx: &Context, traj: &Trajectory) -> Csv {
    let mut csv = Csv::new(&["step", "time", "field", "k", "l", "value"]);
    let n = ctx.dim();
    for (m, x) in traj.x.iter().enumerate() {
        let t = num(ctx.grid.t(m));
        for (field, off) in [("z", 0), ("w", n)] {
            for a in 0..n {
                let (k, l) = ctx.basis.mode(a);
                csv.row([m.to_string(), t.clone(), field.into(), k.to_string(), l.to_string(), num(x[off + a])]);
            }
        }
    }
    csv
}

/// Node samples per interval: control, interval, time (interval start), component, x, y, value.
pub fn controls_csv(ctx: &Context, named: &[(&str, &ControlField)]) -> Csv {
    let mut csv = Csv::new(&["control", "interval", "time", "component", "x", "y", "value"]);
    for (name, c) in named {
        let nodes = &ctx.region(c.region).nodes;
        for j in 0..c.n_steps {
            let t = num(ctx.grid.t(j));
            let blk = c.interval(j);
            for comp in 0..c.ncomp {
                for (r, &p) in nodes.iter().enumerate() {
                    let (x, y) = ctx.geometry.node(p);
                    csv.row([name.to_string(), j.to_string(), t.clone(), comp.to_string(), num(x), num(y), num(blk[comp * c.nr + r])]);
                }
            }
        }
    }
    csv
}

pub fn control_set_csv(ctx: &Context, set: &ControlSet) -> Csv {
    controls_csv(ctx, &[("f", &set.f), ("g", &set.g), ("v1", &set.v[0]), ("v2", &set.v[1]), ("u1", &set.u[0]), ("u2", &set.u[1])])
}

pub fn followers_csv(ctx: &Context, xi: &FollowerVector) -> Csv {
    let names = ["v1", "v2", "u1", "u2"];
    let named: Vec<(&str, &ControlField)> = Player::ALL.iter().map(|p| (names[p.index()], xi.get(*p))).collect();
    controls_csv(ctx, &named)
}

pub fn history_csv(rows: &[HistoryRow]) -> Csv {
    let mut csv = Csv::new(&["iter", "theta", "grad_norm"]);
    for r in rows {
        csv.row([r.iter.to_string(), num(r.theta), num(r.grad_norm)]);
    }
    csv
}

/// Residual history of a Krylov solve.
pub fn residual_csv(history: &[f64]) -> Csv {
    let mut csv = Csv::new(&["iter", "residual"]);
    for (i, r) in history.iter().enumerate() {
        csv.row([i.to_string(), num(*r)]);
    }
    csv
}

/// name,value table.
pub fn key_value_csv(rows: &[(String, f64)]) -> Csv {
    let mut csv = Csv::new(&["name", "value"]);
    for (k, v) in rows {
        csv.row([k.clone(), num(*v)]);
    }
    csv
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in d {
        let _ = write!(s, "{b:02x}");
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageResidual {
    pub stage: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub modes: usize,
    pub n_steps: usize,
    pub motion: String,
    pub wall_clock_s: f64,
    pub residuals: Vec<StageResidual>,
    pub files: Vec<FileEntry>,
}

/// Output directory that records every file it writes.
#[derive(Debug)]
pub struct RunOutput {
    dir: PathBuf,
    pub manifest: RunManifest,
}

/// One manifest per command, so runs sharing a directory keep their inventories.
pub fn manifest_name(command: &str) -> String {
    format!("{command}_manifest.toml")
}

impl RunOutput {
    pub fn create(dir: &Path, manifest: RunManifest) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(RunOutput { dir: dir.to_path_buf(), manifest })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        std::fs::write(self.dir.join(name), text)?;
        self.manifest.files.retain(|f| f.path != name);
        self.manifest.files.push(FileEntry {
            path: name.into(),
            sha256: sha256_hex(text.as_bytes()),
            bytes: text.len(),
        });
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, csv: &Csv) -> Result<()> {
        self.write_text(name, csv.as_str())
    }

    pub fn residual(&mut self, stage: &str, value: f64) {
        self.manifest.residuals.push(StageResidual { stage: stage.into(), value });
    }

    /// Writes the manifest last; wall-clock time is its only run-dependent entry.
    pub fn finish(self, wall_clock_s: f64) -> Result<RunManifest> {
        let mut m = self.manifest;
        m.wall_clock_s = wall_clock_s;
        let text = toml::to_string(&m).expect("manifest serializes");
        std::fs::write(self.dir.join(manifest_name(&m.command)), text)?;
        Ok(m)
    }
}

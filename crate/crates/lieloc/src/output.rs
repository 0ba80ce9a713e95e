//! Result files: versioned trajectory CSV, metrics JSON and plot data.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::config::Role;
use crate::error::{SimError, SimResult};
use crate::metrics::{median, rmse, RunMetrics};
use crate::runner::{FilterVariant, SimLog};

pub const TRAJECTORY_HEADER: &str = "# lieloc trajectories v1";
pub const METRICS_SCHEMA: &str = "lieloc metrics v1";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const METRICS_FILE: &str = "metrics.json";

/// Unit quaternion `(w, x, y, z)` with `w >= 0`.
pub fn quaternion_wxyz(r: &Matrix3<f64>) -> [f64; 4] {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    let s = if q.w < 0.0 { -1.0 } else { 1.0 };
    [s * q.w, s * q.i, s * q.j, s * q.k]
}

/// Geodesic angle between two unit quaternions.
pub fn quaternion_angle(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let qa = Quaternion::new(a[0], a[1], a[2], a[3]);
    let qb = Quaternion::new(b[0], b[1], b[2], b[3]);
    let d = qa.conjugate() * qb;
    2.0 * d.imag().norm().atan2(d.w.abs())
}

/// One CSV line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub robot_id: u32,
    pub role: Role,
    pub variant: FilterVariant,
    pub seed: u64,
    pub true_qw: f64,
    pub true_qx: f64,
    pub true_qy: f64,
    pub true_qz: f64,
    pub true_px: f64,
    pub true_py: f64,
    pub true_pz: f64,
    pub est_qw: f64,
    pub est_qx: f64,
    pub est_qy: f64,
    pub est_qz: f64,
    pub est_px: f64,
    pub est_py: f64,
    pub est_pz: f64,
    pub cov_trace: f64,
    pub nees: f64,
    pub d2: Option<f64>,
    /// `accepted`, `rejected`, or empty when no pseudo-pose was tested.
    pub gate_flag: String,
    pub faulted: Option<u8>,
}

impl TrajectoryRow {
    pub fn true_q(&self) -> [f64; 4] {
        [self.true_qw, self.true_qx, self.true_qy, self.true_qz]
    }

    pub fn est_q(&self) -> [f64; 4] {
        [self.est_qw, self.est_qx, self.est_qy, self.est_qz]
    }

    pub fn true_p(&self) -> Vector3<f64> {
        Vector3::new(self.true_px, self.true_py, self.true_pz)
    }

    pub fn est_p(&self) -> Vector3<f64> {
        Vector3::new(self.est_px, self.est_py, self.est_pz)
    }
}

pub fn trajectory_rows(log: &SimLog) -> Vec<TrajectoryRow> {
    let mut rows = Vec::new();
    for r in &log.robots {
        for x in &r.records {
            let tq = quaternion_wxyz(&x.truth.rotation);
            let eq = quaternion_wxyz(&x.estimate.rotation);
            rows.push(TrajectoryRow {
                t: x.t,
                robot_id: r.id,
                role: r.role,
                variant: log.variant,
                seed: log.seed,
                true_qw: tq[0],
                true_qx: tq[1],
                true_qy: tq[2],
                true_qz: tq[3],
                true_px: x.truth.position.x,
                true_py: x.truth.position.y,
                true_pz: x.truth.position.z,
                est_qw: eq[0],
                est_qx: eq[1],
                est_qy: eq[2],
                est_qz: eq[3],
                est_px: x.estimate.position.x,
                est_py: x.estimate.position.y,
                est_pz: x.estimate.position.z,
                cov_trace: x.cov_trace,
                nees: x.nees,
                d2: x.gate.map(|g| g.d_squared),
                gate_flag: match x.gate {
                    Some(g) if g.accepted => "accepted".into(),
                    Some(_) => "rejected".into(),
                    None => String::new(),
                },
                faulted: x.gate.map(|g| u8::from(g.faulted)),
            });
        }
    }
    rows
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |e| SimError::io(path, e)
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> SimError + '_ {
    move |e| SimError::Output(format!("{}: {e}", path.display()))
}

/// Writes rows under the version header line.
pub fn write_trajectories(path: &Path, rows: &[TrajectoryRow]) -> SimResult<()> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    writeln!(file, "{TRAJECTORY_HEADER}").map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_trajectories(path: &Path) -> SimResult<Vec<TrajectoryRow>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let (first, rest) = text.split_once('\n').unwrap_or((text.as_str(), ""));
    if first.trim_end() != TRAJECTORY_HEADER {
        return Err(SimError::Output(format!("{}: expected header '{TRAJECTORY_HEADER}', found '{first}'", path.display())));
    }
    let mut rdr = csv::Reader::from_reader(rest.as_bytes());
    rdr.deserialize().map(|r| r.map_err(csv_err(path))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: FilterVariant,
    pub role: Role,
    pub seeds: usize,
    pub median_position_rmse_m: f64,
    pub median_rotation_rmse_rad: f64,
    pub gate_accepted: usize,
    pub gate_rejected: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub schema: String,
    pub summary: Vec<SummaryRow>,
    pub runs: Vec<RunMetrics>,
}

pub fn summarize(runs: &[RunMetrics]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(FilterVariant, Role), Vec<&crate::metrics::RobotMetrics>> = BTreeMap::new();
    for run in runs {
        for r in &run.robots {
            groups.entry((run.variant, r.role)).or_default().push(r);
        }
    }
    groups
        .into_iter()
        .map(|((variant, role), rs)| SummaryRow {
            variant,
            role,
            seeds: rs.len(),
            median_position_rmse_m: median(&rs.iter().map(|r| r.position_rmse_m).collect::<Vec<_>>()),
            median_rotation_rmse_rad: median(&rs.iter().map(|r| r.rotation_rmse_rad).collect::<Vec<_>>()),
            gate_accepted: rs.iter().map(|r| r.gate.accepted).sum(),
            gate_rejected: rs.iter().map(|r| r.gate.rejected).sum(),
        })
        .collect()
}

pub fn write_metrics(path: &Path, runs: &[RunMetrics]) -> SimResult<()> {
    let file = MetricsFile { schema: METRICS_SCHEMA.into(), summary: summarize(runs), runs: runs.to_vec() };
    let text = serde_json::to_string_pretty(&file).map_err(|e| SimError::Output(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn read_metrics(path: &Path) -> SimResult<MetricsFile> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let m: MetricsFile = serde_json::from_str(&text).map_err(|e| SimError::Output(format!("{}: {e}", path.display())))?;
    if m.schema != METRICS_SCHEMA {
        return Err(SimError::Output(format!("{}: unsupported schema '{}'", path.display(), m.schema)));
    }
    Ok(m)
}

/// Directory for one labeled result set.
pub fn run_dir(out: &Path, variant: FilterVariant, seed: u64) -> PathBuf {
    out.join("runs").join(format!("{variant}_seed{seed}"))
}

/// Per-run statistics recomputed from CSV rows.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRunStats {
    pub variant: FilterVariant,
    pub seed: u64,
    pub robot_id: u32,
    pub role: Role,
    pub position_rmse_m: f64,
    pub rotation_rmse_rad: f64,
    pub accepted: usize,
    pub rejected: usize,
}

pub fn stats_from_rows(rows: &[TrajectoryRow]) -> Vec<CsvRunStats> {
    let mut groups: BTreeMap<(FilterVariant, u64, u32), Vec<&TrajectoryRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.variant, r.seed, r.robot_id)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((variant, seed, robot_id), rs)| CsvRunStats {
            variant,
            seed,
            robot_id,
            role: rs[0].role,
            position_rmse_m: rmse(rs.iter().map(|r| (r.est_p() - r.true_p()).norm())),
            rotation_rmse_rad: rmse(rs.iter().map(|r| quaternion_angle(&r.true_q(), &r.est_q()))),
            accepted: rs.iter().filter(|r| r.gate_flag == "accepted").count(),
            rejected: rs.iter().filter(|r| r.gate_flag == "rejected").count(),
        })
        .collect()
}

/// Text table of median RMSE per variant and role plus gate totals.
pub fn format_table(stats: &[CsvRunStats]) -> String {
    let mut groups: BTreeMap<(FilterVariant, Role), Vec<&CsvRunStats>> = BTreeMap::new();
    for s in stats {
        groups.entry((s.variant, s.role)).or_default().push(s);
    }
    let mut out = format!(
        "{:<12} {:<10} {:>5} {:>14} {:>14} {:>9} {:>9}\n",
        "variant", "role", "seeds", "pos_rmse_m", "rot_rmse_rad", "accepted", "rejected"
    );
    for ((v, role), ss) in groups {
        let pos: Vec<f64> = ss.iter().map(|s| s.position_rmse_m).collect();
        let rot: Vec<f64> = ss.iter().map(|s| s.rotation_rmse_rad).collect();
        out += &format!(
            "{:<12} {:<10} {:>5} {:>14.6} {:>14.6} {:>9} {:>9}\n",
            v.as_str(),
            role.as_str(),
            ss.len(),
            median(&pos),
            median(&rot),
            ss.iter().map(|s| s.accepted).sum::<usize>(),
            ss.iter().map(|s| s.rejected).sum::<usize>()
        );
    }
    out
}

#[derive(Serialize)]
struct OverlayRow {
    variant: FilterVariant,
    seed: u64,
    robot_id: u32,
    role: Role,
    t: f64,
    true_x: f64,
    true_y: f64,
    est_x: f64,
    est_y: f64,
}

#[derive(Serialize)]
struct MahalanobisRow {
    variant: FilterVariant,
    seed: u64,
    robot_id: u32,
    role: Role,
    t: f64,
    d2: f64,
    gate_flag: String,
}

#[derive(Serialize)]
struct ErrorRow {
    variant: FilterVariant,
    seed: u64,
    robot_id: u32,
    role: Role,
    t: f64,
    position_error_m: f64,
    rotation_error_rad: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> SimResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes trajectory overlays, Mahalanobis series and error series under
/// `dir`; returns the written paths.
pub fn write_plotdata(dir: &Path, rows: &[TrajectoryRow]) -> SimResult<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let overlay = dir.join("trajectory_overlay.csv");
    write_csv(
        &overlay,
        rows.iter().map(|r| OverlayRow {
            variant: r.variant,
            seed: r.seed,
            robot_id: r.robot_id,
            role: r.role,
            t: r.t,
            true_x: r.true_px,
            true_y: r.true_py,
            est_x: r.est_px,
            est_y: r.est_py,
        }),
    )?;
    let maha = dir.join("mahalanobis.csv");
    write_csv(
        &maha,
        rows.iter().filter_map(|r| {
            r.d2.map(|d2| MahalanobisRow {
                variant: r.variant,
                seed: r.seed,
                robot_id: r.robot_id,
                role: r.role,
                t: r.t,
                d2,
                gate_flag: r.gate_flag.clone(),
            })
        }),
    )?;
    let err = dir.join("position_error.csv");
    write_csv(
        &err,
        rows.iter().map(|r| ErrorRow {
            variant: r.variant,
            seed: r.seed,
            robot_id: r.robot_id,
            role: r.role,
            t: r.t,
            position_error_m: (r.est_p() - r.true_p()).norm(),
            rotation_error_rad: quaternion_angle(&r.true_q(), &r.est_q()),
        }),
    )?;
    Ok(vec![overlay, maha, err])
}

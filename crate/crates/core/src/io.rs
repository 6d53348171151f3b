//! On-disk formats: trajectory CSV with a JSON sidecar, dataset CSV and
//! pretty-printed JSON reports.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::linalg::{Matrix, Vector};
use crate::sim::Dataset;
use crate::theory::TheoryConstants;
use crate::two_layer::{ModelKind, TermTriple, Trajectory};

/// Scientific notation with 17 significant digits, enough to round-trip
/// every `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_float(field: &str, column: &str) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| SimError::Parse(format!("column {column}: cannot parse {field:?} as a number")))
}

/// Everything needed to reinterpret a trajectory file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub model: ModelKind,
    pub eta: Option<f64>,
    pub d: usize,
    pub s: usize,
    /// Diagonal of `A` when the run used the true diagonal covariance.
    pub a: Option<Vec<f64>>,
    pub x_hat: Vec<f64>,
    pub seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub constants: Option<TheoryConstants>,
    /// The experiment file the run was produced from.
    pub spec: serde_json::Value,
}

/// `out/trajectory.csv` -> `out/trajectory.meta.json`.
pub fn meta_path_for(csv_path: &Path) -> PathBuf {
    let stem = csv_path.file_stem().and_then(|s| s.to_str()).unwrap_or("trajectory");
    csv_path.with_file_name(format!("{stem}.meta.json"))
}

pub fn trajectory_header(d: usize, with_terms: bool) -> Vec<String> {
    let mut cols = vec!["t".to_string(), "loss_pop".into(), "loss_test".into()];
    cols.extend((0..d).map(|k| format!("f_{k}")));
    let entries: Vec<(usize, usize)> = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).collect();
    cols.extend(entries.iter().map(|(i, j)| format!("w_{i}_{j}")));
    if with_terms {
        for prefix in ["g", "s", "n"] {
            cols.extend(entries.iter().map(|(i, j)| format!("{prefix}_{i}_{j}")));
        }
    }
    cols
}

pub fn write_trajectory_csv<W: Write>(writer: W, traj: &Trajectory) -> Result<()> {
    let d = traj.dim();
    let with_terms = traj.decomposition.is_some();
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(trajectory_header(d, with_terms))?;
    for k in 0..traj.len() {
        let mut row = vec![
            format_float(traj.times[k]),
            format_float(traj.pop_loss[k]),
            format_float(traj.test_loss[k]),
        ];
        row.extend(traj.outputs[k].iter().map(|v| format_float(*v)));
        let w = &traj.w_series[k];
        for i in 0..d {
            for j in 0..d {
                row.push(format_float(w[(i, j)]));
            }
        }
        if let Some(dec) = &traj.decomposition {
            let terms = &dec[k];
            for pick in [|t: &TermTriple| t.g, |t: &TermTriple| t.s, |t: &TermTriple| t.n] {
                row.extend(terms.iter().map(|t| format_float(pick(t))));
            }
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a trajectory written by [`write_trajectory_csv`]. The dimension
/// and the presence of term columns are read off the header.
pub fn read_trajectory_csv<R: Read>(reader: R, model: ModelKind, eta: Option<f64>) -> Result<Trajectory> {
    let mut input = csv::Reader::from_reader(reader);
    let header: Vec<String> = input.headers()?.iter().map(str::to_string).collect();
    let count = |prefix: &str| header.iter().filter(|h| h.starts_with(prefix)).count();
    let d = count("f_");
    if d == 0 || count("w_") != d * d {
        return Err(SimError::Parse(format!(
            "trajectory header has {} output and {} weight columns",
            d,
            count("w_")
        )));
    }
    let with_terms = count("g_") > 0;
    let expected = trajectory_header(d, with_terms);
    if header != expected {
        return Err(SimError::Parse("unexpected trajectory column layout".into()));
    }
    let mut traj = Trajectory::new(model, eta, with_terms);
    for record in input.records() {
        let record = record?;
        let mut values = Vec::with_capacity(record.len());
        for (field, column) in record.iter().zip(&header) {
            values.push(parse_float(field, column)?);
        }
        if values.len() != header.len() {
            return Err(SimError::Parse(format!(
                "row has {} fields, expected {}",
                values.len(),
                header.len()
            )));
        }
        let mut rest = &values[3..];
        traj.times.push(values[0]);
        traj.pop_loss.push(values[1]);
        traj.test_loss.push(values[2]);
        traj.outputs.push(Vector::from_column_slice(&rest[..d]));
        rest = &rest[d..];
        traj.w_series.push(Matrix::from_row_slice(d, d, &rest[..d * d]));
        rest = &rest[d * d..];
        if let Some(dec) = traj.decomposition.as_mut() {
            let n = d * d;
            dec.push(
                (0..n)
                    .map(|e| TermTriple {
                        g: rest[e],
                        s: rest[n + e],
                        n: rest[2 * n + e],
                    })
                    .collect(),
            );
        }
    }
    if traj.is_empty() {
        return Err(SimError::Parse("trajectory has no rows".into()));
    }
    Ok(traj)
}

pub fn save_trajectory(path: &Path, traj: &Trajectory, meta: &TrajectoryMeta) -> Result<()> {
    write_trajectory_csv(BufWriter::new(File::create(path)?), traj)?;
    write_json(&meta_path_for(path), meta)
}

/// Loads a trajectory together with its sidecar metadata.
pub fn load_trajectory(path: &Path) -> Result<(Trajectory, TrajectoryMeta)> {
    let meta_path = meta_path_for(path);
    let meta: TrajectoryMeta = read_json(&meta_path)?;
    let traj = read_trajectory_csv(BufReader::new(File::open(path)?), meta.model, meta.eta)?;
    if traj.dim() != meta.d {
        return Err(SimError::Dimension {
            expected: meta.d,
            got: traj.dim(),
        });
    }
    Ok((traj, meta))
}

pub fn write_dataset_csv<W: Write>(writer: W, dataset: &Dataset) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec!["cluster".to_string()];
    header.extend((0..dataset.dim()).map(|k| format!("x_{k}")));
    out.write_record(&header)?;
    for (x, cluster) in dataset.points.iter().zip(&dataset.cluster_of) {
        let mut row = vec![cluster.to_string()];
        row.extend(x.iter().map(|v| format_float(*v)));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstantsFile {
    #[serde(flatten)]
    constants: TheoryConstants,
    lambda: Option<f64>,
}

/// Reads theory constants (and an optional `lambda`) from a TOML file, or
/// from JSON when the extension is `.json`.
pub fn load_constants(path: &Path) -> Result<(TheoryConstants, Option<f64>)> {
    let text = std::fs::read_to_string(path)?;
    let file: ConstantsFile = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text)?
    } else {
        toml::from_str(&text).map_err(|e| SimError::Config(e.message().to_string()))?
    };
    file.constants.validate()?;
    Ok((file.constants, file.lambda))
}

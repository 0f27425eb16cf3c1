//! Simulated episodes and their on-disk forms.
//!
//! Binary layout (all little-endian): the 8-byte magic `JMFTRJ01`, then `u64`
//! header fields `s, o, M, T, count`, then per trajectory `x_0` (`s` floats)
//! followed by `T` records of `x_t` (`s`), `y_t` (`o`) and the 1-based mode
//! label as a float (0 when unlabeled). Every payload value is an `f64`.
//!
//! CSV layout: header `traj,t,x1..xs,y1..yo,j`; one row per step, plus a
//! `t = 0` row carrying `x_0` with empty observation and label cells.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"JMFTRJ01";

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x0: DVector<f64>,
    pub states: Vec<DVector<f64>>,
    pub observations: Vec<DVector<f64>>,
    /// Zero-based mode labels, or empty when the source carries none.
    /// Kept for diagnostics; training code never reads them.
    pub modes: Vec<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.x0.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.observations.first().map_or(0, |y| y.len())
    }

    pub fn is_labeled(&self) -> bool {
        !self.modes.is_empty()
    }

    pub fn without_labels(mut self) -> Self {
        self.modes.clear();
        self
    }
}

fn dims(data: &[Trajectory]) -> Result<(usize, usize, usize)> {
    let first = data.first().ok_or(Error::EmptyDataset)?;
    let (s, o, t) = (first.state_dim(), first.obs_dim(), first.len());
    for (i, tr) in data.iter().enumerate() {
        if tr.state_dim() != s || tr.obs_dim() != o || tr.len() != t || tr.observations.len() != t {
            return Err(Error::Dimension(format!("trajectory {i} differs in shape from trajectory 0")));
        }
    }
    Ok((s, o, t))
}

/// Writes a dataset of equal-length trajectories in the binary container.
pub fn write_binary<W: Write>(mut w: W, data: &[Trajectory], num_modes: usize) -> Result<()> {
    let (s, o, t) = dims(data)?;
    w.write_all(MAGIC)?;
    for v in [s, o, num_modes, t, data.len()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    let mut put = |v: f64| w.write_all(&v.to_le_bytes());
    for tr in data {
        for v in tr.x0.iter() {
            put(*v)?;
        }
        for k in 0..t {
            for v in tr.states[k].iter().chain(tr.observations[k].iter()) {
                put(*v)?;
            }
            put(tr.modes.get(k).map_or(0.0, |j| (*j + 1) as f64))?;
        }
    }
    Ok(())
}

/// Reads a binary container; returns the trajectories and the header's mode count.
pub fn read_binary<R: Read>(mut r: R) -> Result<(Vec<Trajectory>, usize)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a trajectory container".into()));
    }
    let mut header = [0usize; 5];
    for h in header.iter_mut() {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        *h = u64::from_le_bytes(b) as usize;
    }
    let [s, o, m, t, count] = header;
    let mut get = || -> Result<f64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    };
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        let x0 = DVector::from_iterator(s, (0..s).map(|_| get()).collect::<Result<Vec<_>>>()?);
        let mut states = Vec::with_capacity(t);
        let mut observations = Vec::with_capacity(t);
        let mut modes = Vec::with_capacity(t);
        for _ in 0..t {
            states.push(DVector::from_vec((0..s).map(|_| get()).collect::<Result<Vec<_>>>()?));
            observations.push(DVector::from_vec((0..o).map(|_| get()).collect::<Result<Vec<_>>>()?));
            let label = get()?;
            if label >= 1.0 {
                modes.push(label as usize - 1);
            }
        }
        if !modes.is_empty() && modes.len() != t {
            return Err(Error::Format("partially labeled trajectory".into()));
        }
        data.push(Trajectory {
            x0,
            states,
            observations,
            modes,
        });
    }
    Ok((data, m))
}

pub fn save_binary(path: &Path, data: &[Trajectory], num_modes: usize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_binary(&mut w, data, num_modes)?;
    w.flush()?;
    Ok(())
}

pub fn load_binary(path: &Path) -> Result<(Vec<Trajectory>, usize)> {
    read_binary(BufReader::new(File::open(path)?))
}

fn csv_header(s: usize, o: usize) -> Vec<String> {
    let mut h = vec!["traj".to_string(), "t".to_string()];
    h.extend((1..=s).map(|i| format!("x{i}")));
    h.extend((1..=o).map(|i| format!("y{i}")));
    h.push("j".into());
    h
}

/// Writes the per-step CSV export. Floats use the shortest round-trip representation.
pub fn write_csv<W: Write>(w: W, data: &[Trajectory]) -> Result<()> {
    let (s, o, _) = dims(data)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(csv_header(s, o))?;
    for (d, tr) in data.iter().enumerate() {
        let mut row = vec![d.to_string(), "0".to_string()];
        row.extend(tr.x0.iter().map(|v| v.to_string()));
        row.extend(std::iter::repeat_n(String::new(), o + 1));
        out.write_record(&row)?;
        for k in 0..tr.len() {
            let mut row = vec![d.to_string(), (k + 1).to_string()];
            row.extend(tr.states[k].iter().map(|v| v.to_string()));
            row.extend(tr.observations[k].iter().map(|v| v.to_string()));
            row.push(tr.modes.get(k).map_or(String::new(), |j| (j + 1).to_string()));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Column names used to read a trajectory CSV.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ColumnMap {
    pub traj: String,
    pub time: String,
    pub states: Vec<String>,
    pub observations: Vec<String>,
}

impl ColumnMap {
    /// The names [`write_csv`] emits.
    pub fn default_for(s: usize, o: usize) -> Self {
        ColumnMap {
            traj: "traj".into(),
            time: "t".into(),
            states: (1..=s).map(|i| format!("x{i}")).collect(),
            observations: (1..=o).map(|i| format!("y{i}")).collect(),
        }
    }
}

/// Reads trajectories from CSV. Rows are grouped by the trajectory column in
/// order of first appearance; a `t = 0` row supplies `x_0` (otherwise `x_0 = x_1`).
/// Mode labels are never read.
pub fn read_csv<R: Read>(r: R, columns: &ColumnMap) -> Result<Vec<Trajectory>> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(r);
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let find = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Parse {
            row: 1,
            column: name.to_string(),
            message: "missing column".into(),
        })
    };
    let traj_col = find(&columns.traj)?;
    let time_col = find(&columns.time)?;
    let state_cols = columns.states.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let obs_cols = columns.observations.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;

    struct Partial {
        x0: Option<DVector<f64>>,
        steps: Vec<(f64, DVector<f64>, DVector<f64>)>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Partial> = HashMap::new();

    for (i, rec) in reader.records().enumerate() {
        // Header is row 1.
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let cell = |col: usize| rec.get(col).unwrap_or("").trim();
        let num = |col: usize| -> Result<f64> {
            cell(col).parse::<f64>().map_err(|e| Error::Parse {
                row,
                column: headers.get(col).unwrap_or("").to_string(),
                message: format!("'{}': {e}", cell(col)),
            })
        };
        let id = cell(traj_col).to_string();
        let time = num(time_col)?;
        let state = DVector::from_vec(state_cols.iter().map(|c| num(*c)).collect::<Result<Vec<_>>>()?);
        let entry = groups.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Partial {
                x0: None,
                steps: Vec::new(),
            }
        });
        if time == 0.0 && obs_cols.iter().all(|c| cell(*c).is_empty()) {
            entry.x0 = Some(state);
            continue;
        }
        let obs = DVector::from_vec(obs_cols.iter().map(|c| num(*c)).collect::<Result<Vec<_>>>()?);
        entry.steps.push((time, state, obs));
    }
    if order.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let mut p = groups.remove(&id).expect("grouped id");
        if p.steps.is_empty() {
            return Err(Error::Parse {
                row: 0,
                column: columns.traj.clone(),
                message: format!("trajectory '{id}' has no observation rows"),
            });
        }
        p.steps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let x0 = p.x0.unwrap_or_else(|| p.steps[0].1.clone());
        let (states, observations) = p.steps.into_iter().map(|(_, x, y)| (x, y)).unzip();
        out.push(Trajectory {
            x0,
            states,
            observations,
            modes: Vec::new(),
        });
    }
    Ok(out)
}

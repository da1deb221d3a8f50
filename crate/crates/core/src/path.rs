//! Càdlàg sample paths and ensembles, plus the CSV path format.
//!
//! A path is a list of events. Consecutive events are joined by a straight
//! segment; an event with its jump flag set is reached by a jump instead.
//! Jumps and instantaneous rectilinear moves both carry zero duration, so
//! timestamps are non-decreasing rather than strictly increasing.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CadlagPath {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    jumps: Vec<bool>,
}

impl CadlagPath {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>, jumps: Vec<bool>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidPath("path has no events".into()));
        }
        if values.len() != times.len() || jumps.len() != times.len() {
            return Err(Error::InvalidPath(format!(
                "{} times, {} values, {} jump flags",
                times.len(),
                values.len(),
                jumps.len()
            )));
        }
        let d = values[0].len();
        if d == 0 {
            return Err(Error::InvalidPath("values must have at least one component".into()));
        }
        if values.iter().any(|v| v.len() != d) {
            return Err(Error::InvalidPath("ragged value vectors".into()));
        }
        if jumps[0] {
            return Err(Error::InvalidPath("first event cannot be a jump".into()));
        }
        if times.iter().chain(values.iter().flatten()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidPath("non-finite entry".into()));
        }
        for k in 1..times.len() {
            if times[k] < times[k - 1] {
                return Err(Error::NonMonotoneTime { index: k });
            }
            if jumps[k] && times[k] != times[k - 1] {
                return Err(Error::InvalidPath(format!(
                    "jump at index {k} must have zero duration"
                )));
            }
        }
        Ok(CadlagPath {
            times,
            values,
            jumps,
        })
    }

    /// Path consisting of a single event.
    pub fn constant(t: f64, x: Vec<f64>) -> Result<Self> {
        Self::new(vec![t], vec![x], vec![false])
    }

    /// Rectilinear lift of observations: every new observation first advances
    /// the clock with the value held, then moves the value instantaneously.
    pub fn rectilinear(observations: &[(f64, Vec<f64>)]) -> Result<Self> {
        let (t0, x0) = observations
            .first()
            .ok_or_else(|| Error::InvalidPath("no observations".into()))?;
        let mut times = vec![*t0];
        let mut values = vec![x0.clone()];
        for (k, w) in observations.windows(2).enumerate() {
            let (ta, xa) = &w[0];
            let (tb, xb) = &w[1];
            if tb <= ta {
                return Err(Error::NonMonotoneTime { index: k + 1 });
            }
            times.push(*tb);
            values.push(xa.clone());
            if xa != xb {
                times.push(*tb);
                values.push(xb.clone());
            }
        }
        let jumps = vec![false; times.len()];
        Self::new(times, values, jumps)
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn jumps(&self) -> &[bool] {
        &self.jumps
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("nonempty")
    }

    pub fn first_value(&self) -> &[f64] {
        &self.values[0]
    }

    pub fn last_value(&self) -> &[f64] {
        self.values.last().expect("nonempty")
    }

    pub fn jump_count(&self) -> usize {
        self.jumps.iter().filter(|j| **j).count()
    }

    /// Consecutive increments `(dt, dx, is_jump)`.
    pub fn increments(&self) -> impl Iterator<Item = (f64, Vec<f64>, bool)> + '_ {
        (1..self.len()).map(move |k| {
            let dt = self.times[k] - self.times[k - 1];
            let dx = self.values[k]
                .iter()
                .zip(&self.values[k - 1])
                .map(|(a, b)| a - b)
                .collect();
            (dt, dx, self.jumps[k])
        })
    }

    /// Right-continuous value at time `t` (after any jumps at `t`).
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        if t <= self.times[0] {
            return self.values[0].clone();
        }
        // last index with time <= t
        let k = self.times.partition_point(|&s| s <= t) - 1;
        if k + 1 == self.len() || self.times[k] == t {
            return self.values[k].clone();
        }
        let (ta, tb) = (self.times[k], self.times[k + 1]);
        let u = (t - ta) / (tb - ta);
        self.values[k]
            .iter()
            .zip(&self.values[k + 1])
            .map(|(a, b)| a + u * (b - a))
            .collect()
    }

    /// Restriction to `[t0, t1]`. The straddling segments are split linearly;
    /// jumps at exactly `t0` are absorbed into the starting value and jumps at
    /// exactly `t1` are kept.
    pub fn restrict(&self, t0: f64, t1: f64) -> Result<CadlagPath> {
        if t0 < self.start_time() || t1 > self.end_time() || t1 < t0 {
            return Err(Error::GridOutsideSupport(if t1 > self.end_time() { t1 } else { t0 }));
        }
        let mut times = vec![t0];
        let mut values = vec![self.value_at(t0)];
        let mut jumps = vec![false];
        for k in 0..self.len() {
            let t = self.times[k];
            if t <= t0 {
                continue;
            }
            if t > t1 {
                break;
            }
            times.push(t);
            values.push(self.values[k].clone());
            jumps.push(self.jumps[k]);
        }
        if *times.last().unwrap() < t1 {
            times.push(t1);
            values.push(self.value_at(t1));
            jumps.push(false);
        }
        CadlagPath::new(times, values, jumps)
    }

    /// Velocity of the last segment of positive duration ending at or before
    /// `t`; zero if there is none.
    pub fn last_continuous_velocity(&self, t: f64) -> Vec<f64> {
        for k in (1..self.len()).rev() {
            if self.times[k] > t || self.jumps[k] {
                continue;
            }
            let dt = self.times[k] - self.times[k - 1];
            if dt > 0.0 {
                return self.values[k]
                    .iter()
                    .zip(&self.values[k - 1])
                    .map(|(a, b)| (a - b) / dt)
                    .collect();
            }
        }
        vec![0.0; self.dim()]
    }
}

/// Nonempty collection of paths sharing one spatial dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    paths: Vec<CadlagPath>,
}

impl PathEnsemble {
    pub fn new(paths: Vec<CadlagPath>) -> Result<Self> {
        let first = paths.first().ok_or(Error::EmptyEnsemble)?;
        let d = first.dim();
        if paths.iter().any(|p| p.dim() != d) {
            return Err(Error::InvalidPath("ensemble paths differ in dimension".into()));
        }
        Ok(PathEnsemble { paths })
    }

    pub fn paths(&self) -> &[CadlagPath] {
        &self.paths
    }

    pub fn into_paths(self) -> Vec<CadlagPath> {
        self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.paths[0].dim()
    }
}

fn format_num(x: f64) -> String {
    // shortest representation that round-trips
    format!("{x:?}")
}

/// Write a single path as CSV with header `t,x1,..,xd,jump`.
pub fn write_path_csv<W: Write>(path: &CadlagPath, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=path.dim()).map(|i| format!("x{i}")));
    header.push("jump".into());
    wtr.write_record(&header)?;
    for k in 0..path.len() {
        let mut row = vec![format_num(path.times[k])];
        row.extend(path.values[k].iter().map(|v| format_num(*v)));
        row.push(if path.jumps[k] { "1" } else { "0" }.into());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Write an ensemble as one CSV with a leading `path_id` column.
pub fn write_ensemble_csv<W: Write>(ensemble: &PathEnsemble, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["path_id".to_string(), "t".to_string()];
    header.extend((1..=ensemble.dim()).map(|i| format!("x{i}")));
    header.push("jump".into());
    wtr.write_record(&header)?;
    for (id, path) in ensemble.paths().iter().enumerate() {
        for k in 0..path.len() {
            let mut row = vec![id.to_string(), format_num(path.times[k])];
            row.extend(path.values[k].iter().map(|v| format_num(*v)));
            row.push(if path.jumps[k] { "1" } else { "0" }.into());
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Read either CSV layout. A single-path file yields an ensemble of one path.
pub fn read_ensemble_csv<R: Read>(input: R) -> Result<PathEnsemble> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let has_id = header.first().map(|h| h == "path_id").unwrap_or(false);
    let offset = usize::from(has_id);
    if header.len() < offset + 3
        || header[offset] != "t"
        || header.last().map(String::as_str) != Some("jump")
    {
        return Err(Error::Parse(format!(
            "expected header [path_id,]t,x1,..,xd,jump, got {}",
            header.join(",")
        )));
    }
    let d = header.len() - offset - 2;
    let parse = |s: &str, line: usize| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Parse(format!("line {line}: bad number '{s}'")))
    };
    let mut groups: Vec<(String, Vec<f64>, Vec<Vec<f64>>, Vec<bool>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != header.len() {
            return Err(Error::Parse(format!("line {line}: wrong field count")));
        }
        let id = if has_id { rec[0].to_string() } else { String::new() };
        let t = parse(&rec[offset], line)?;
        let x = (0..d)
            .map(|j| parse(&rec[offset + 1 + j], line))
            .collect::<Result<Vec<_>>>()?;
        let jump = match &rec[offset + 1 + d] {
            "0" => false,
            "1" => true,
            other => return Err(Error::Parse(format!("line {line}: jump must be 0 or 1, got '{other}'"))),
        };
        match groups.last_mut() {
            Some(g) if g.0 == id => {
                g.1.push(t);
                g.2.push(x);
                g.3.push(jump);
            }
            _ => {
                if groups.iter().any(|g| g.0 == id) {
                    return Err(Error::Parse(format!("line {line}: rows of path '{id}' are not contiguous")));
                }
                groups.push((id, vec![t], vec![x], vec![jump]));
            }
        }
    }
    let paths = groups
        .into_iter()
        .map(|(_, t, x, j)| CadlagPath::new(t, x, j))
        .collect::<Result<Vec<_>>>()?;
    PathEnsemble::new(paths)
}

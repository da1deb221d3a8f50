//! Time-indexed target expected signatures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::TensorSeries;

/// Target series on a time grid, with forward-difference velocities.
/// Between grid points the target is interpolated linearly in flattened
/// coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyTrajectory {
    grid: Vec<f64>,
    proxies: Vec<TensorSeries>,
    velocity: Vec<TensorSeries>,
}

impl ProxyTrajectory {
    pub fn new(grid: Vec<f64>, proxies: Vec<TensorSeries>) -> Result<Self> {
        if grid.is_empty() || grid.len() != proxies.len() {
            return Err(Error::InvalidConfig(format!(
                "proxy grid has {} points and {} series",
                grid.len(),
                proxies.len()
            )));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig("proxy grid must be strictly increasing".into()));
        }
        let (depth, dim) = (proxies[0].depth(), proxies[0].dim());
        if proxies.iter().any(|p| p.depth() != depth || p.dim() != dim) {
            return Err(Error::DimensionMismatch("proxies disagree in shape".into()));
        }
        let velocity = grid
            .windows(2)
            .zip(proxies.windows(2))
            .map(|(t, p)| p[1].sub(&p[0]).map(|d| d.scale(1.0 / (t[1] - t[0]))))
            .collect::<Result<Vec<_>>>()?;
        Ok(ProxyTrajectory {
            grid,
            proxies,
            velocity,
        })
    }

    /// A target held fixed over `[t0, t1]`.
    pub fn frozen(target: TensorSeries, t0: f64, t1: f64) -> Result<Self> {
        if t1 > t0 {
            Self::new(vec![t0, t1], vec![target.clone(), target])
        } else {
            Self::new(vec![t0], vec![target])
        }
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn proxies(&self) -> &[TensorSeries] {
        &self.proxies
    }

    pub fn velocity(&self) -> &[TensorSeries] {
        &self.velocity
    }

    pub fn start(&self) -> f64 {
        self.grid[0]
    }

    pub fn end(&self) -> f64 {
        *self.grid.last().expect("nonempty")
    }

    pub fn depth(&self) -> usize {
        self.proxies[0].depth()
    }

    pub fn alphabet(&self) -> usize {
        self.proxies[0].dim()
    }

    /// Does the grid cover `[a, b]` up to a relative tolerance on the clock?
    pub fn covers(&self, a: f64, b: f64) -> bool {
        let tol = 1e-9 * (1.0 + a.abs().max(b.abs()));
        self.start() <= a + tol && self.end() >= b - tol
    }

    /// Target at time `s`.
    pub fn at(&self, s: f64) -> Result<TensorSeries> {
        let tol = 1e-9 * (1.0 + s.abs());
        if s < self.start() - tol || s > self.end() + tol {
            return Err(Error::ProxyGridGap {
                start: s,
                end: s,
            });
        }
        if self.grid.len() == 1 || s <= self.start() {
            return Ok(self.proxies[0].clone());
        }
        if s >= self.end() {
            return Ok(self.proxies.last().unwrap().clone());
        }
        let k = self.grid.partition_point(|&g| g <= s) - 1;
        let u = s - self.grid[k];
        if u == 0.0 {
            return Ok(self.proxies[k].clone());
        }
        let mut out = self.proxies[k].clone();
        out.axpy(u, &self.velocity[k])?;
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct ProxyPoint {
    t: f64,
    #[serde(flatten)]
    series: serde_json::Value,
}

impl Serialize for ProxyTrajectory {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::Error as _;
        let points = self
            .grid
            .iter()
            .zip(&self.proxies)
            .map(|(t, p)| {
                Ok(ProxyPoint {
                    t: *t,
                    series: serde_json::to_value(p).map_err(S::Error::custom)?,
                })
            })
            .collect::<std::result::Result<Vec<_>, S::Error>>()?;
        points.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ProxyTrajectory {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let points = Vec::<ProxyPoint>::deserialize(deserializer)?;
        let mut grid = Vec::with_capacity(points.len());
        let mut proxies = Vec::with_capacity(points.len());
        for p in points {
            grid.push(p.t);
            proxies.push(serde_json::from_value(p.series).map_err(D::Error::custom)?);
        }
        ProxyTrajectory::new(grid, proxies).map_err(D::Error::custom)
    }
}

//! Trajectories and the two training views of them: independent samples
//! and fixed-length windows.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub q: Array1<f64>,
    pub dq: Array1<f64>,
    pub ddq: Option<Array1<f64>>,
    pub tau: Option<Array1<f64>>,
}

/// Uniformly sampled trajectory; row `k` is time `k·dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub q: Array2<f64>,
    pub dq: Array2<f64>,
    pub ddq: Array2<f64>,
    pub tau: Array2<f64>,
}

impl Trajectory {
    pub fn new(dt: f64, q: Array2<f64>, dq: Array2<f64>, ddq: Array2<f64>, tau: Array2<f64>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        let d = q.dim();
        for (name, a) in [("dq", &dq), ("ddq", &ddq), ("tau", &tau)] {
            if a.dim() != d {
                return Err(Error::dim(format!("{name} has shape {:?}, q has {d:?}", a.dim())));
            }
        }
        Ok(Trajectory { dt, q, dq, ddq, tau })
    }

    pub fn len(&self) -> usize {
        self.q.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.q.ncols()
    }

    pub fn state(&self, k: usize) -> State {
        State {
            q: self.q.row(k).to_owned(),
            dq: self.dq.row(k).to_owned(),
            ddq: Some(self.ddq.row(k).to_owned()),
            tau: Some(self.tau.row(k).to_owned()),
        }
    }

    /// Rows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Trajectory {
        let r = s![start..end, ..];
        Trajectory {
            dt: self.dt,
            q: self.q.slice(r).to_owned(),
            dq: self.dq.slice(r).to_owned(),
            ddq: self.ddq.slice(r).to_owned(),
            tau: self.tau.slice(r).to_owned(),
        }
    }
}

/// Independent `(q, q̇, q̈, τ)` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub q: Array2<f64>,
    pub dq: Array2<f64>,
    pub ddq: Array2<f64>,
    pub tau: Array2<f64>,
}

impl Samples {
    pub fn from_trajectories(trajs: &[Trajectory]) -> Result<Self> {
        if trajs.is_empty() {
            return Err(Error::invalid("no trajectories"));
        }
        let cat = |f: fn(&Trajectory) -> &Array2<f64>| {
            let views: Vec<_> = trajs.iter().map(|t| f(t).view()).collect();
            concatenate(Axis(0), &views).map_err(|e| Error::dim(e.to_string()))
        };
        Ok(Samples {
            q: cat(|t| &t.q)?,
            dq: cat(|t| &t.dq)?,
            ddq: cat(|t| &t.ddq)?,
            tau: cat(|t| &t.tau)?,
        })
    }

    pub fn len(&self) -> usize {
        self.q.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.q.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Samples {
        Samples {
            q: self.q.select(Axis(0), rows),
            dq: self.dq.select(Axis(0), rows),
            ddq: self.ddq.select(Axis(0), rows),
            tau: self.tau.select(Axis(0), rows),
        }
    }

    /// `count` distinct rows drawn uniformly.
    pub fn subsample(&self, count: usize, rng: &mut impl Rng) -> Samples {
        let rows = rand::seq::index::sample(rng, self.len(), count.min(self.len())).into_vec();
        self.select(&rows)
    }
}

/// Windows of `h + 1` consecutive states; entry `j` of each field holds
/// step `j` of every window as one `N x n` block.
#[derive(Debug, Clone, PartialEq)]
pub struct Windows {
    pub dt: f64,
    pub q: Vec<Array2<f64>>,
    pub dq: Vec<Array2<f64>>,
    pub tau: Vec<Array2<f64>>,
}

impl Windows {
    fn from_starts(trajs: &[Trajectory], h: usize, starts: &[(usize, usize)]) -> Result<Self> {
        if h == 0 {
            return Err(Error::invalid("window length must be at least one step"));
        }
        let dt = trajs.first().ok_or_else(|| Error::invalid("no trajectories"))?.dt;
        let n = trajs[0].dim();
        let block = |f: fn(&Trajectory) -> &Array2<f64>, j: usize| {
            let mut out = Array2::zeros((starts.len(), n));
            for (r, &(t, k)) in starts.iter().enumerate() {
                out.row_mut(r).assign(&f(&trajs[t]).row(k + j));
            }
            out
        };
        Ok(Windows {
            dt,
            q: (0..=h).map(|j| block(|t| &t.q, j)).collect(),
            dq: (0..=h).map(|j| block(|t| &t.dq, j)).collect(),
            tau: (0..=h).map(|j| block(|t| &t.tau, j)).collect(),
        })
    }

    fn check(trajs: &[Trajectory], h: usize) -> Result<()> {
        let Some(first) = trajs.first() else {
            return Err(Error::invalid("no trajectories"));
        };
        for t in trajs {
            if t.dt != first.dt || t.dim() != first.dim() {
                return Err(Error::invalid("trajectories differ in time step or dimension"));
            }
        }
        if trajs.iter().all(|t| t.len() <= h) {
            return Err(Error::invalid(format!("no trajectory is longer than {h} steps")));
        }
        Ok(())
    }

    /// `count` windows with uniformly drawn trajectory and start.
    pub fn sample(trajs: &[Trajectory], h: usize, count: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::check(trajs, h)?;
        let eligible: Vec<usize> = (0..trajs.len()).filter(|&i| trajs[i].len() > h).collect();
        let starts: Vec<(usize, usize)> = (0..count)
            .map(|_| {
                let t = eligible[rng.random_range(0..eligible.len())];
                (t, rng.random_range(0..trajs[t].len() - h))
            })
            .collect();
        Self::from_starts(trajs, h, &starts)
    }

    /// Consecutive non-overlapping windows covering each trajectory.
    pub fn tiled(trajs: &[Trajectory], h: usize) -> Result<Self> {
        Self::check(trajs, h)?;
        let mut starts = Vec::new();
        for (i, t) in trajs.iter().enumerate() {
            let mut k = 0;
            while k + h < t.len() {
                starts.push((i, k));
                k += h;
            }
        }
        Self::from_starts(trajs, h, &starts)
    }

    /// Number of integration steps per window.
    pub fn horizon(&self) -> usize {
        self.q.len() - 1
    }

    pub fn len(&self) -> usize {
        self.q[0].nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.q[0].ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Windows {
        let sel = |v: &Vec<Array2<f64>>| v.iter().map(|a| a.select(Axis(0), rows)).collect();
        Windows {
            dt: self.dt,
            q: sel(&self.q),
            dq: sel(&self.dq),
            tau: sel(&self.tau),
        }
    }
}

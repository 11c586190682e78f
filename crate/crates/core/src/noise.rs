//! Discrete space-time white noise.
//!
//! Increments live on a lattice of half-cells of width `dx/2`: the solver
//! cell around node `x_i = i dx` is the union of lattice cells `2i - 1` and
//! `2i`. Each lattice value is `sqrt(dt dx/2) η` with `η` drawn from ChaCha8
//! keyed by `(seed, step)` at a fixed word offset per lattice cell, so any
//! cell can be regenerated independently of scheduling. A coarse path
//! obtained by summing lattice cells of a finer path is therefore exactly
//! the coarse path of the same noise.

use std::f64::consts::PI;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::heat_kernel::GridFunction;

/// Identifies the PRNG algorithm and the cell-to-stream layout. Changing
/// either invalidates replay of stored paths.
pub const GENERATOR_TAG: &str = "chacha8-boxmuller-halfcell-v1";

const WORDS_PER_NORMAL: u128 = 4;
const BRIDGE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityGate {
    /// `dt <= dx²`
    #[default]
    Explicit,
    /// `dt <= dx`, valid for the semi-implicit step.
    SemiImplicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Interior points.
    pub nx: usize,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub stability_gate: StabilityGate,
}

impl GridSpec {
    pub fn new(nx: usize, dt: f64, t_end: f64) -> Result<Self> {
        let g = GridSpec {
            nx,
            dt,
            t_end,
            stability_gate: StabilityGate::Explicit,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn semi_implicit(nx: usize, dt: f64, t_end: f64) -> Result<Self> {
        let g = GridSpec {
            nx,
            dt,
            t_end,
            stability_gate: StabilityGate::SemiImplicit,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 {
            return Err(LabError::Domain("nx must be positive".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) || !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(LabError::Domain(format!(
                "dt and t_end must be positive and finite (dt={}, t_end={})",
                self.dt, self.t_end
            )));
        }
        let dx = self.dx();
        let (limit, name) = match self.stability_gate {
            StabilityGate::Explicit => (dx * dx, "dx^2"),
            StabilityGate::SemiImplicit => (dx, "dx"),
        };
        if self.dt > limit * (1.0 + 1e-12) {
            return Err(LabError::Domain(format!(
                "dt = {} exceeds the stability gate {name} = {limit}",
                self.dt
            )));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        1.0 / (self.nx + 1) as f64
    }

    /// `ceil(t_end / dt)`, ignoring rounding noise below `1e-9` steps.
    pub fn steps(&self) -> usize {
        ((self.t_end / self.dt) - 1e-9).ceil().max(1.0) as usize
    }

    /// Number of lattice half-cells, `2(nx + 1)`.
    pub fn lattice_len(&self) -> usize {
        2 * (self.nx + 1)
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Source {
    Direct,
    /// Sums of a finer direct path.
    Aggregated {
        fine: GridSpec,
        time_factor: usize,
        space_factor: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub seed: u64,
    pub grid: GridSpec,
    source: Source,
}

/// Seed of replica `index` in a block starting at `base`.
pub fn split_seed(base: u64, index: u64) -> u64 {
    base.wrapping_add(index)
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let a = rng.next_u64();
    let b = rng.next_u64();
    let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

impl NoisePath {
    pub fn new(seed: u64, grid: GridSpec) -> Result<Self> {
        grid.validate()?;
        Ok(NoisePath {
            seed,
            grid,
            source: Source::Direct,
        })
    }

    pub fn generator_tag(&self) -> &'static str {
        GENERATOR_TAG
    }

    /// Coarse path whose increments are sums of this path's increments.
    /// `coarse.nx + 1` must divide `nx + 1` and `coarse.dt / dt` must be an
    /// integer.
    pub fn coarsen(&self, coarse: GridSpec) -> Result<NoisePath> {
        coarse.validate()?;
        let (fine, base_tf, base_sf) = match &self.source {
            Source::Direct => (self.grid, 1, 1),
            Source::Aggregated {
                fine,
                time_factor,
                space_factor,
            } => (*fine, *time_factor, *space_factor),
        };
        let sf_num = self.grid.nx + 1;
        let sf_den = coarse.nx + 1;
        if sf_num % sf_den != 0 {
            return Err(LabError::Domain(format!(
                "coarse nx+1 = {sf_den} does not divide fine nx+1 = {sf_num}"
            )));
        }
        let ratio = coarse.dt / self.grid.dt;
        let tf = ratio.round();
        if tf < 1.0 || (ratio - tf).abs() > 1e-9 * ratio {
            return Err(LabError::Domain(format!(
                "coarse dt {} is not an integer multiple of {}",
                coarse.dt, self.grid.dt
            )));
        }
        if coarse.steps() * tf as usize > self.grid.steps() {
            return Err(LabError::Domain("coarse path outlasts the fine path".into()));
        }
        Ok(NoisePath {
            seed: self.seed,
            grid: coarse,
            source: Source::Aggregated {
                fine,
                time_factor: base_tf * tf as usize,
                space_factor: base_sf * sf_num / sf_den,
            },
        })
    }

    fn check_step(&self, m: usize) -> Result<()> {
        if m >= self.grid.steps() {
            return Err(LabError::Domain(format!(
                "step {m} out of range 0..{}",
                self.grid.steps()
            )));
        }
        Ok(())
    }

    fn direct_lattice_row(seed: u64, grid: &GridSpec, m: usize, out: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(m as u64);
        rng.set_word_pos(0);
        let scale = (grid.dt * grid.dx() * 0.5).sqrt();
        for v in out.iter_mut() {
            *v = scale * standard_normal(&mut rng);
        }
    }

    /// Lattice half-cell increments of step `m`, length `2(nx + 1)`.
    pub fn lattice_row(&self, m: usize) -> Result<Vec<f64>> {
        self.check_step(m)?;
        let mut row = vec![0.0; self.grid.lattice_len()];
        match &self.source {
            Source::Direct => Self::direct_lattice_row(self.seed, &self.grid, m, &mut row),
            Source::Aggregated {
                fine,
                time_factor,
                space_factor,
            } => {
                let mut buf = vec![0.0; fine.lattice_len()];
                for j in 0..*time_factor {
                    Self::direct_lattice_row(self.seed, fine, m * time_factor + j, &mut buf);
                    for (k, v) in row.iter_mut().enumerate() {
                        *v += buf[k * space_factor..(k + 1) * space_factor].iter().sum::<f64>();
                    }
                }
            }
        }
        Ok(row)
    }

    /// Single lattice value, regenerated from its counter position.
    pub fn lattice_cell(&self, m: usize, k: usize) -> Result<f64> {
        if k >= self.grid.lattice_len() {
            return Err(LabError::Domain(format!("lattice cell {k} out of range")));
        }
        match &self.source {
            Source::Direct => {
                self.check_step(m)?;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(m as u64);
                rng.set_word_pos(k as u128 * WORDS_PER_NORMAL);
                Ok((self.grid.dt * self.grid.dx() * 0.5).sqrt() * standard_normal(&mut rng))
            }
            Source::Aggregated { .. } => Ok(self.lattice_row(m)?[k]),
        }
    }

    /// `W(cell(m, i))` for the `nx` interior nodes; variance `dt·dx`.
    pub fn sample_increments(&self, m: usize) -> Result<Vec<f64>> {
        let row = self.lattice_row(m)?;
        Ok(cells_from_lattice(&row))
    }

    /// Splits the increments of step `m` into `2^depth` Brownian-bridge
    /// sub-increments that sum back to `parent`. Deterministic in
    /// `(seed, m, depth)`.
    pub fn bridge_increments(&self, m: usize, parent: &[f64], depth: u32) -> Vec<Vec<f64>> {
        let mut rows = vec![parent.to_vec()];
        let mut var = self.grid.dt * self.grid.dx();
        for level in 0..depth {
            let mut next = Vec::with_capacity(rows.len() * 2);
            for (j, row) in rows.iter().enumerate() {
                // heap index of the node being split
                let node = (1u128 << level) + j as u128;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ BRIDGE_SALT);
                rng.set_stream(m as u64);
                rng.set_word_pos(node * row.len() as u128 * WORDS_PER_NORMAL);
                let sd = 0.5 * var.sqrt();
                let mut left = Vec::with_capacity(row.len());
                let mut right = Vec::with_capacity(row.len());
                for &w in row {
                    let l = 0.5 * w + sd * standard_normal(&mut rng);
                    left.push(l);
                    right.push(w - l);
                }
                next.push(left);
                next.push(right);
            }
            rows = next;
            var *= 0.5;
        }
        rows
    }

    /// `Σ φ(x_i) W(cell(m, i))` over the steps that end by time `t`.
    /// `phi` is sampled on the closed grid (`nx + 2` points).
    pub fn integrate_test_function(&self, phi: &GridFunction, t: f64) -> Result<f64> {
        if phi.values.len() != self.grid.nx + 2 {
            return Err(LabError::Contract(format!(
                "test function has {} samples, grid needs {}",
                phi.values.len(),
                self.grid.nx + 2
            )));
        }
        if t > self.grid.t_end * (1.0 + 1e-12) || t < 0.0 {
            return Err(LabError::Domain(format!("t = {t} outside [0, t_end]")));
        }
        let steps = ((t / self.grid.dt) + 1e-9).floor() as usize;
        let steps = steps.min(self.grid.steps());
        let mut acc = 0.0;
        for m in 0..steps {
            let w = self.sample_increments(m)?;
            acc += w.iter().zip(&phi.values[1..]).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(acc)
    }
}

/// Pairs lattice cells `(2i - 1, 2i)` into the `nx` solver cells.
pub fn cells_from_lattice(row: &[f64]) -> Vec<f64> {
    let nx = row.len() / 2 - 1;
    (1..=nx).map(|i| row[2 * i - 1] + row[2 * i]).collect()
}

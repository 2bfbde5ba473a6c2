//! Fractional kernels and the numerical size/smoothness checks.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{Coords, Space};

/// How `K(x, x)` is defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagonal {
    /// `K(x, x) = 0`.
    #[default]
    Exclude,
    /// `K(x, x) = lambda(x, r_atom)^(alpha - 1)` with `r_atom` half the nearest-neighbour distance.
    AtomRadius,
    /// Evaluate the kernel formula; an error for kernels singular on the diagonal.
    Formula,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelVariant {
    /// `lambda(y, d(x, y))^(alpha - 1)`.
    FracIntegral,
    /// `|1 - <x, y>|^(-m (1 - alpha))` on complex coordinates.
    Bergman { m: f64 },
    /// Explicit values with zero diagonal.
    CustomMatrix { values: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub alpha: f64,
    #[serde(flatten)]
    pub variant: KernelVariant,
    #[serde(default)]
    pub diagonal: Diagonal,
}

impl KernelSpec {
    pub fn frac_integral(alpha: f64) -> Self {
        KernelSpec {
            alpha,
            variant: KernelVariant::FracIntegral,
            diagonal: Diagonal::Exclude,
        }
    }

    pub fn with_diagonal(mut self, diagonal: Diagonal) -> Self {
        self.diagonal = diagonal;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Parameter(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        match &self.variant {
            KernelVariant::Bergman { m } if !(*m > 0.0) => Err(Error::Parameter(format!(
                "Bergman exponent must be positive, got {m}"
            ))),
            KernelVariant::CustomMatrix { values } => {
                for (i, row) in values.iter().enumerate() {
                    if row.get(i).is_some_and(|&v| v != 0.0) {
                        return Err(Error::Parameter(
                            "custom kernel must vanish on the diagonal".into(),
                        ));
                    }
                    if row.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Parameter(
                            "custom kernel has non-finite entries".into(),
                        ));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn singular(&self) -> bool {
        matches!(self.variant, KernelVariant::FracIntegral)
    }
}

fn complex_coords(space: &Space) -> Result<Vec<Vec<Complex64>>> {
    space
        .points()
        .iter()
        .map(|p| match &p.coords {
            Some(Coords::Real(v)) => Ok(v.iter().map(|&x| Complex64::new(x, 0.0)).collect()),
            Some(Coords::Complex(v)) => Ok(v.iter().map(|&[a, b]| Complex64::new(a, b)).collect()),
            None => Err(Error::Parameter(format!(
                "Bergman kernel needs coordinates for point {:?}",
                p.id
            ))),
        })
        .collect()
}

fn atom_radius(space: &Space, x: usize) -> Option<f64> {
    space.sorted_distances(x).get(1).map(|&d| d / 2.0)
}

/// Dense kernel values for one space.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    n: usize,
    alpha: f64,
    values: Vec<f64>,
}

impl KernelMatrix {
    pub fn new(spec: &KernelSpec, space: &Space) -> Result<KernelMatrix> {
        spec.validate()?;
        let n = space.len();
        if let KernelVariant::CustomMatrix { values } = &spec.variant {
            if values.len() != n || values.iter().any(|r| r.len() != n) {
                return Err(Error::Parameter(format!("custom kernel must be {n} x {n}")));
            }
        }
        if spec.diagonal == Diagonal::Formula && spec.singular() {
            return Err(Error::SingularDiagonal);
        }
        let coords = match spec.variant {
            KernelVariant::Bergman { .. } => Some(complex_coords(space)?),
            _ => None,
        };
        let alpha = spec.alpha;
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|x| {
                (0..n)
                    .map(|y| entry(spec, space, coords.as_deref(), x, y))
                    .collect()
            })
            .collect();
        Ok(KernelMatrix {
            n,
            alpha,
            values: rows.concat(),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[x * self.n + y]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.values[x * self.n..(x + 1) * self.n]
    }
}

fn entry(
    spec: &KernelSpec,
    space: &Space,
    coords: Option<&[Vec<Complex64>]>,
    x: usize,
    y: usize,
) -> f64 {
    let power = 1.0 - spec.alpha;
    if x == y {
        match spec.diagonal {
            Diagonal::Exclude => return 0.0,
            Diagonal::AtomRadius => {
                return atom_radius(space, x).map_or(0.0, |r| space.lambda(x, r).powf(-power));
            }
            Diagonal::Formula => {}
        }
    }
    match &spec.variant {
        KernelVariant::FracIntegral => space.lambda(y, space.d(x, y)).powf(-power),
        KernelVariant::Bergman { m } => {
            let c = coords.expect("coordinates resolved for Bergman kernels");
            let inner: Complex64 = c[x].iter().zip(&c[y]).map(|(a, b)| a.conj() * b).sum();
            (Complex64::new(1.0, 0.0) - inner).norm().powf(-m * power)
        }
        KernelVariant::CustomMatrix { values } => values[x][y],
    }
}

/// `K(x, y)` under the configured diagonal convention.
pub fn eval_kernel(spec: &KernelSpec, space: &Space, x: usize, y: usize) -> Result<f64> {
    spec.validate()?;
    if x >= space.len() || y >= space.len() {
        return Err(Error::Parameter("point out of range".into()));
    }
    if x == y && spec.diagonal == Diagonal::Formula && spec.singular() {
        return Err(Error::SingularDiagonal);
    }
    let coords = match spec.variant {
        KernelVariant::Bergman { .. } => Some(complex_coords(space)?),
        _ => None,
    };
    Ok(entry(spec, space, coords.as_deref(), x, y))
}

/// Fitted constants of the size and smoothness conditions.
#[derive(Debug, Clone, Serialize)]
pub struct KernelFit {
    pub c_size: f64,
    pub size_witness: Option<(usize, usize)>,
    /// `(delta, C)` for each candidate exponent.
    pub smooth_table: Vec<(f64, f64)>,
    pub delta: Option<f64>,
    pub c_smooth: Option<f64>,
    pub smooth_witness: Option<(usize, usize, usize)>,
    /// Separation factor in the smoothness condition.
    pub c_k: f64,
    pub triples_checked: usize,
    pub exhaustive: bool,
}

/// Smallest `C` with `|K(x, y)| <= C lambda(x, d(x, y))^(alpha - 1)` over off-diagonal pairs.
pub fn check_size_condition(kernel: &KernelMatrix, space: &Space) -> (f64, Option<(usize, usize)>) {
    let n = space.len();
    let power = 1.0 - kernel.alpha();
    let mut best = 0.0;
    let mut witness = None;
    for x in 0..n {
        for y in 0..n {
            if x == y {
                continue;
            }
            let v = kernel.get(x, y).abs() * space.lambda(x, space.d(x, y)).powf(power);
            if v > best || witness.is_none() {
                best = v.max(best);
                witness = Some((x, y));
            }
        }
    }
    (best, witness)
}

pub const TRIPLE_BUDGET: usize = 1_000_000;
pub const SEPARATION: f64 = 2.0;

/// Fits the smoothness constant for each `delta` in the grid.
pub fn check_smoothness_condition(
    kernel: &KernelMatrix,
    space: &Space,
    delta_grid: &[f64],
    seed: u64,
) -> Result<KernelFit> {
    if delta_grid.is_empty() || delta_grid.iter().any(|&d| !(d > 0.0 && d <= 1.0)) {
        return Err(Error::Parameter("delta values must lie in (0, 1]".into()));
    }
    let n = space.len();
    let power = 1.0 - kernel.alpha();
    let mut worst = vec![0.0f64; delta_grid.len()];
    let mut witness = vec![None; delta_grid.len()];
    let mut checked = 0usize;
    let mut visit = |x: usize, xt: usize, y: usize| {
        if x == xt {
            return false;
        }
        let dxx = space.d(x, xt);
        let dxy = space.d(x, y);
        if dxy < SEPARATION * dxx {
            return false;
        }
        let lhs = (kernel.get(x, y) - kernel.get(xt, y)).abs()
            + (kernel.get(y, x) - kernel.get(y, xt)).abs();
        let scale = space.lambda(x, dxy).powf(power);
        for (k, &delta) in delta_grid.iter().enumerate() {
            let c = lhs * (dxy / dxx).powf(delta) * scale;
            if c > worst[k] || witness[k].is_none() {
                worst[k] = worst[k].max(c);
                witness[k] = Some((x, xt, y));
            }
        }
        checked += 1;
        true
    };
    let total = n.saturating_mul(n).saturating_mul(n);
    let exhaustive = total <= TRIPLE_BUDGET;
    if exhaustive {
        for x in 0..n {
            for xt in 0..n {
                for y in 0..n {
                    visit(x, xt, y);
                }
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut attempts = 0usize;
        let mut admitted = 0usize;
        while admitted < TRIPLE_BUDGET && attempts < 20 * TRIPLE_BUDGET {
            attempts += 1;
            if visit(
                rng.gen_range(0..n),
                rng.gen_range(0..n),
                rng.gen_range(0..n),
            ) {
                admitted += 1;
            }
        }
    }
    let (c_size, size_witness) = check_size_condition(kernel, space);
    let table: Vec<(f64, f64)> = delta_grid
        .iter()
        .copied()
        .zip(worst.iter().copied())
        .collect();
    let best = if checked == 0 {
        None
    } else {
        let min_c = worst.iter().copied().fold(f64::INFINITY, f64::min);
        table
            .iter()
            .enumerate()
            .rev()
            .find(|(_, (_, c))| *c <= min_c)
            .map(|(k, &(d, c))| (d, c, witness[k]))
    };
    Ok(KernelFit {
        c_size,
        size_witness,
        smooth_table: if checked == 0 { Vec::new() } else { table },
        delta: best.map(|b| b.0),
        c_smooth: best.map(|b| b.1),
        smooth_witness: best.and_then(|b| b.2),
        c_k: SEPARATION,
        triples_checked: checked,
        exhaustive,
    })
}

/// The default exponent grid, extended by `extra` when given.
pub fn default_delta_grid(extra: Option<f64>) -> Vec<f64> {
    let mut grid = vec![0.25, 0.5, 0.75, 1.0];
    if let Some(e) = extra {
        if e > 0.0 && e <= 1.0 && !grid.contains(&e) {
            grid.push(e);
            grid.sort_by(f64::total_cmp);
        }
    }
    grid
}

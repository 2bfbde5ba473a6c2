//! Fractional integrals, commutators and the multilinear expansion.

use std::ops::Deref;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelMatrix, KernelSpec};
use crate::space::Space;

/// One real value per point of a space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FunctionVec(Vec<f64>);

impl FunctionVec {
    pub fn new(values: Vec<f64>) -> Result<FunctionVec> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!(
                "function value {i} is not finite"
            )));
        }
        Ok(FunctionVec(values))
    }

    pub fn zeros(n: usize) -> FunctionVec {
        FunctionVec(vec![0.0; n])
    }

    pub fn constant(n: usize, c: f64) -> FunctionVec {
        FunctionVec(vec![c; n])
    }

    /// Indicator of a set of point indices.
    pub fn indicator(n: usize, points: &[usize]) -> FunctionVec {
        let mut v = vec![0.0; n];
        for &p in points {
            v[p] = 1.0;
        }
        FunctionVec(v)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FunctionVec {
        FunctionVec(self.0.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, c: f64) -> FunctionVec {
        self.map(|v| c * v)
    }

    pub fn mul(&self, other: &[f64]) -> FunctionVec {
        FunctionVec(self.0.iter().zip(other).map(|(a, b)| a * b).collect())
    }

    /// Checks that the function is bound to `space`.
    pub fn check(&self, space: &Space) -> Result<()> {
        check_bound(space, self)
    }

    /// Reads one real per line, or a delimited table keyed by point id.
    ///
    /// Tables need a header row; the value column is `column` or the second one.
    pub fn from_text(text: &str, space: &Space, column: Option<&str>) -> Result<FunctionVec> {
        let first = text
            .lines()
            .find(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let delimited = first.is_some_and(|l| l.contains(',') || l.contains('\t'));
        let values = if delimited {
            let delim = if first.unwrap().contains('\t') {
                b'\t'
            } else {
                b','
            };
            let mut reader = csv::ReaderBuilder::new()
                .delimiter(delim)
                .trim(csv::Trim::All)
                .from_reader(text.as_bytes());
            let headers = reader.headers()?.clone();
            let col = match column {
                Some(name) => headers
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Error::Schema(format!("no column named {name:?}")))?,
                None => 1,
            };
            let mut values = vec![f64::NAN; space.len()];
            for record in reader.records() {
                let record = record?;
                let id = record.get(0).unwrap_or_default();
                let idx = space
                    .index_of(id)
                    .ok_or_else(|| Error::Schema(format!("unknown point id {id:?}")))?;
                let raw = record
                    .get(col)
                    .ok_or_else(|| Error::Schema(format!("row for {id:?} is short")))?;
                values[idx] = raw
                    .parse()
                    .map_err(|_| Error::Schema(format!("bad number {raw:?}")))?;
            }
            if let Some(i) = values.iter().position(|v| v.is_nan()) {
                return Err(Error::Schema(format!(
                    "no value for point {:?}",
                    space.points()[i].id
                )));
            }
            values
        } else {
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(|l| {
                    l.parse::<f64>()
                        .map_err(|_| Error::Schema(format!("bad number {l:?}")))
                })
                .collect::<Result<Vec<_>>>()?
        };
        let f = FunctionVec::new(values)?;
        f.check(space)?;
        Ok(f)
    }

    /// One value per line, round-trip precision.
    pub fn to_text(&self) -> String {
        self.0.iter().map(|v| format!("{v:?}\n")).collect()
    }
}

impl Deref for FunctionVec {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for FunctionVec {
    fn from(v: Vec<f64>) -> Self {
        FunctionVec(v)
    }
}

pub(crate) fn check_bound(space: &Space, f: &[f64]) -> Result<()> {
    if f.len() != space.len() {
        return Err(Error::Length {
            expected: space.len(),
            got: f.len(),
        });
    }
    if let Some(i) = f.iter().position(|v| !v.is_finite()) {
        return Err(Error::Parameter(format!(
            "function value {i} is not finite"
        )));
    }
    Ok(())
}

fn check_matrix(kernel: &KernelMatrix, space: &Space) -> Result<()> {
    if kernel.len() != space.len() {
        return Err(Error::Length {
            expected: space.len(),
            got: kernel.len(),
        });
    }
    Ok(())
}

/// `T f(x) = sum_y K(x, y) f(y) w_y` with a precomputed kernel.
pub fn apply(kernel: &KernelMatrix, space: &Space, f: &[f64]) -> Result<FunctionVec> {
    check_matrix(kernel, space)?;
    check_bound(space, f)?;
    let w = space.weights();
    let out = (0..space.len())
        .into_par_iter()
        .map(|x| {
            let row = kernel.row(x);
            let mut acc = 0.0;
            for y in 0..row.len() {
                acc += row[y] * f[y] * w[y];
            }
            acc
        })
        .collect();
    Ok(FunctionVec(out))
}

/// `T f` for a kernel specification.
pub fn apply_t(spec: &KernelSpec, space: &Space, f: &[f64]) -> Result<FunctionVec> {
    apply(&KernelMatrix::new(spec, space)?, space, f)
}

/// The fractional integral `I_alpha f` (excluded diagonal).
pub fn apply_i_alpha(space: &Space, f: &[f64], alpha: f64) -> Result<FunctionVec> {
    apply_t(&KernelSpec::frac_integral(alpha), space, f)
}

/// `b T f - T(b f)`.
pub fn commutator(
    b: &[f64],
    kernel: &KernelMatrix,
    space: &Space,
    f: &[f64],
) -> Result<FunctionVec> {
    multilinear_commutator(&[b], kernel, space, f)
}

/// `[b_k, ..., [b_1, T] ...] f`.
///
/// Evaluated through the product kernel `K(x, z) prod_i (b_i(x) - b_i(z))`,
/// which expands to the nested definition.
pub fn multilinear_commutator(
    bs: &[&[f64]],
    kernel: &KernelMatrix,
    space: &Space,
    f: &[f64],
) -> Result<FunctionVec> {
    if bs.is_empty() {
        return Err(Error::Parameter(
            "a commutator needs at least one symbol".into(),
        ));
    }
    check_matrix(kernel, space)?;
    check_bound(space, f)?;
    for b in bs {
        check_bound(space, b)?;
    }
    let w = space.weights();
    let out = (0..space.len())
        .into_par_iter()
        .map(|x| {
            let row = kernel.row(x);
            let mut acc = 0.0;
            for z in 0..row.len() {
                let mut prod = row[z] * f[z] * w[z];
                for b in bs {
                    prod *= b[x] - b[z];
                }
                acc += prod;
            }
            acc
        })
        .collect();
    Ok(FunctionVec(out))
}

/// A subset `sigma` of `{1, ..., k}` with its complement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SigmaSubset {
    pub k: usize,
    /// One-based, increasing.
    pub indices: Vec<usize>,
    pub complement: Vec<usize>,
}

/// All `i`-element subsets of `{1, ..., k}` in lexicographic order.
pub fn sigma_subsets(k: usize, i: usize) -> Result<Vec<SigmaSubset>> {
    if i > k {
        return Err(Error::Parameter(format!(
            "subset size {i} exceeds arity {k}"
        )));
    }
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(i);
    fn rec(start: usize, k: usize, i: usize, current: &mut Vec<usize>, out: &mut Vec<SigmaSubset>) {
        if current.len() == i {
            let complement = (1..=k).filter(|j| !current.contains(j)).collect();
            out.push(SigmaSubset {
                k,
                indices: current.clone(),
                complement,
            });
            return;
        }
        for j in start..=k {
            current.push(j);
            rec(j + 1, k, i, current, out);
            current.pop();
        }
    }
    rec(1, k, i, &mut current, &mut out);
    Ok(out)
}

/// Which operator stands in for the empty commutator in [`expansion_rhs`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionConvention {
    /// `T f`: the identity holds exactly.
    #[default]
    Exact,
    /// `T(|f|)`, a bound rather than an identity.
    AbsoluteAtFull,
}

/// Right-hand side of
/// `T_b f(y) = T(prod_i (m_i - b_i) f)(y) - sum_{sigma != {}} prod_{i in sigma} (m_i - b_i(y)) T_{b_sigma'} f(y)`.
pub fn expansion_rhs(
    bs: &[&[f64]],
    kernel: &KernelMatrix,
    space: &Space,
    f: &[f64],
    means: &[f64],
    convention: ExpansionConvention,
) -> Result<FunctionVec> {
    let k = bs.len();
    if k == 0 || means.len() != k {
        return Err(Error::Parameter(format!(
            "{} means for {} symbols",
            means.len(),
            k
        )));
    }
    let n = space.len();
    let mut weighted = f.to_vec();
    for (b, &m) in bs.iter().zip(means) {
        for x in 0..n {
            weighted[x] *= m - b[x];
        }
    }
    let mut out = apply(kernel, space, &weighted)?.into_inner();
    for size in 1..=k {
        for sigma in sigma_subsets(k, size)? {
            let inner = if sigma.complement.is_empty() {
                match convention {
                    ExpansionConvention::Exact => apply(kernel, space, f)?,
                    ExpansionConvention::AbsoluteAtFull => {
                        let abs: Vec<f64> = f.iter().map(|v| v.abs()).collect();
                        apply(kernel, space, &abs)?
                    }
                }
            } else {
                let rest: Vec<&[f64]> = sigma.complement.iter().map(|&j| bs[j - 1]).collect();
                multilinear_commutator(&rest, kernel, space, f)?
            };
            for y in 0..n {
                let coeff: f64 = sigma
                    .indices
                    .iter()
                    .map(|&j| means[j - 1] - bs[j - 1][y])
                    .product();
                out[y] -= coeff * inner[y];
            }
        }
    }
    Ok(FunctionVec(out))
}

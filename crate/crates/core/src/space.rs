//! Finite weighted metric spaces with a dominating function.
//!
//! A [`Space`] owns a dense distance matrix, the atomic measure and the
//! dominating function. At construction it precomputes, for every center,
//! the other points sorted by distance together with prefix sums of the
//! weights, so that the mass of any open ball is a binary search away.

use std::sync::OnceLock;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coordinates attached to a point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coords {
    Real(Vec<f64>),
    Complex(Vec<[f64; 2]>),
}

impl Coords {
    fn as_complex(&self) -> Vec<Complex64> {
        match self {
            Coords::Real(v) => v.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
            Coords::Complex(v) => v.iter().map(|&[re, im]| Complex64::new(re, im)).collect(),
        }
    }
}

/// A point record: identifier plus optional coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<Coords>,
}

/// How distances are obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MetricSpec {
    Matrix {
        values: Vec<Vec<f64>>,
    },
    Euclidean,
    /// `||x| - |y|| + |1 - <x, y> / (|x| |y|)|` on the open unit ball of C^d.
    ComplexBall,
}

/// The dominating function `lambda(x, r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DominatingFn {
    /// `c0 * r^kappa`.
    Power { c0: f64, kappa: f64 },
    /// `max(dist_to_boundary(x)^m, r^m)` on the unit ball.
    Bergman { m: f64 },
    /// The measure of the open ball itself.
    Measure,
    /// Per-center right-continuous step function on a shared radius grid.
    Table {
        radii: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

impl DominatingFn {
    /// A table that is constant in `r` for every center.
    pub fn constant(points: usize, value: f64) -> Self {
        DominatingFn::Table {
            radii: vec![1.0],
            values: vec![vec![value]; points],
        }
    }
}

/// The on-disk space document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpaceDoc {
    pub points: Vec<Point>,
    pub metric: MetricSpec,
    pub weights: Vec<f64>,
    pub lambda: DominatingFn,
}

/// An open ball `{y : d(center, y) < radius}` with its realized size cached.
///
/// The realized set is the first `size` entries of the center's
/// distance-sorted neighbour list, see [`Space::members`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ball {
    pub center: usize,
    pub radius: f64,
    pub size: usize,
}

/// Sampling knobs for the structural checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplePlan {
    /// Radii per decade of the log grid.
    pub per_decade: usize,
    /// Centers visited by the grid-based fits (all when the space is smaller).
    pub max_centers: usize,
    /// Triangle inequality is checked exhaustively up to this many points.
    pub exhaustive_triangle: usize,
    /// Random triples checked above the exhaustive threshold.
    pub sampled_triples: usize,
    /// Budget of pairwise distance lookups for the covering check.
    pub cover_budget: usize,
    pub seed: u64,
}

impl Default for SamplePlan {
    fn default() -> Self {
        SamplePlan {
            per_decade: 32,
            max_centers: 64,
            exhaustive_triangle: 256,
            sampled_triples: 200_000,
            cover_budget: 40_000_000,
            seed: 0x5eed,
        }
    }
}

/// A witness of the failure of `mu(B) <= lambda(c_B, r_B)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpperDoublingViolation {
    pub center: usize,
    pub radius: f64,
    pub mass: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct UpperDoublingReport {
    pub passed: bool,
    pub c_lambda: f64,
    pub violations: Vec<UpperDoublingViolation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    pub constant: f64,
    pub witness: Option<(usize, usize, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoveringReport {
    pub n0: usize,
    pub dimension: f64,
    pub balls_checked: usize,
    pub exhaustive: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReverseDoublingReport {
    pub epsilon: f64,
    /// `(a, C(a))` pairs.
    pub table: Vec<(f64, f64)>,
    /// Per-`a` partial sums of `sum_k C(a^k)^(-eps)` up to `k_max`.
    pub partial_sums: Vec<f64>,
    pub tail_terms: Vec<f64>,
    pub converges: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct WeakGrowthReport {
    pub constant: f64,
    pub epsilon: f64,
    /// `(epsilon, C)` for every candidate exponent.
    pub table: Vec<(f64, f64)>,
    pub flagged: bool,
}

/// Fitted structural constants of a space.
#[derive(Debug, Clone, Serialize)]
pub struct SpaceConstants {
    pub c_lambda: f64,
    pub c_lambda_tilde: f64,
    pub n0: usize,
    pub n: f64,
    pub nu: f64,
    pub upper_doubling_passed: bool,
    pub quasi_triangle: f64,
}

/// A validated finite metric measure space.
#[derive(Debug, Clone)]
pub struct Space {
    points: Vec<Point>,
    metric_kind: MetricKindTag,
    n: usize,
    dist: Vec<f64>,
    weights: Vec<f64>,
    lambda: DominatingFn,
    order: Vec<usize>,
    sorted: Vec<f64>,
    prefix_mass: Vec<f64>,
    canonical_radii: Vec<Vec<f64>>,
    boundary: Vec<f64>,
    min_gap: f64,
    diam: f64,
    quasi: f64,
    constants: OnceLock<SpaceConstants>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MetricKindTag {
    Metric,
    Quasi,
}

const TRIANGLE_SLACK: f64 = 1e-12;

fn complex_ball_distance(x: &[Complex64], y: &[Complex64]) -> f64 {
    let nx = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let ny = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let radial = (nx - ny).abs();
    if nx == 0.0 || ny == 0.0 {
        // The angular term is taken as its infimum, zero, at the origin.
        return radial;
    }
    let inner: Complex64 = x.iter().zip(y).map(|(a, b)| a.conj() * b).sum();
    radial + (Complex64::new(1.0, 0.0) - inner / (nx * ny)).norm()
}

impl Space {
    /// Parses and validates a JSON space document.
    pub fn from_json(text: &str) -> Result<Space> {
        let doc: SpaceDoc = serde_json::from_str(text)?;
        Space::from_doc(doc)
    }

    pub fn from_doc(doc: SpaceDoc) -> Result<Space> {
        Space::new(doc.points, doc.metric, doc.weights, doc.lambda)
    }

    /// Builds a space from an explicit distance matrix with generated ids.
    pub fn from_matrix(
        values: Vec<Vec<f64>>,
        weights: Vec<f64>,
        lambda: DominatingFn,
    ) -> Result<Space> {
        let points = (0..weights.len())
            .map(|i| Point {
                id: i.to_string(),
                coords: None,
            })
            .collect();
        Space::new(points, MetricSpec::Matrix { values }, weights, lambda)
    }

    pub fn new(
        points: Vec<Point>,
        metric: MetricSpec,
        weights: Vec<f64>,
        lambda: DominatingFn,
    ) -> Result<Space> {
        let n = points.len();
        if n == 0 {
            return Err(Error::Schema("a space needs at least one point".into()));
        }
        if weights.len() != n {
            return Err(Error::Schema(format!(
                "{} weights for {} points",
                weights.len(),
                n
            )));
        }
        for (index, &value) in weights.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::BadWeight { index, value });
            }
        }
        let mut ids = std::collections::HashSet::new();
        for p in &points {
            if !ids.insert(p.id.as_str()) {
                return Err(Error::Schema(format!("duplicate point id {:?}", p.id)));
            }
        }

        let mut dist = vec![0.0; n * n];
        let mut kind = MetricKindTag::Metric;
        match &metric {
            MetricSpec::Matrix { values } => {
                if values.len() != n || values.iter().any(|row| row.len() != n) {
                    return Err(Error::Schema(format!("distance matrix must be {n} x {n}")));
                }
                for i in 0..n {
                    for j in 0..n {
                        let v = values[i][j];
                        if !(v >= 0.0 && v.is_finite()) {
                            return Err(Error::BadDistance(i, j));
                        }
                        if v != values[j][i] {
                            return Err(Error::Asymmetric(i, j));
                        }
                        dist[i * n + j] = v;
                    }
                }
            }
            MetricSpec::Euclidean | MetricSpec::ComplexBall => {
                let coords: Vec<Vec<Complex64>> = points
                    .iter()
                    .map(|p| {
                        p.coords.as_ref().map(Coords::as_complex).ok_or_else(|| {
                            Error::Schema(format!("point {:?} has no coordinates", p.id))
                        })
                    })
                    .collect::<Result<_>>()?;
                let dim = coords[0].len();
                if coords.iter().any(|c| c.len() != dim) {
                    return Err(Error::Schema("points have differing dimensions".into()));
                }
                let euclid = matches!(metric, MetricSpec::Euclidean);
                if !euclid {
                    kind = MetricKindTag::Quasi;
                }
                for i in 0..n {
                    for j in (i + 1)..n {
                        let v = if euclid {
                            coords[i]
                                .iter()
                                .zip(&coords[j])
                                .map(|(a, b)| (a - b).norm_sqr())
                                .sum::<f64>()
                                .sqrt()
                        } else {
                            complex_ball_distance(&coords[i], &coords[j])
                        };
                        if !v.is_finite() {
                            return Err(Error::BadDistance(i, j));
                        }
                        dist[i * n + j] = v;
                        dist[j * n + i] = v;
                    }
                }
            }
        }
        for i in 0..n {
            if dist[i * n + i] != 0.0 {
                return Err(Error::BadDistance(i, i));
            }
            for j in 0..n {
                if i != j && dist[i * n + j] == 0.0 {
                    return Err(Error::Coincident(i, j));
                }
            }
        }

        let boundary = match &lambda {
            DominatingFn::Bergman { m } => {
                if !(*m > 0.0) {
                    return Err(Error::Lambda(format!(
                        "Bergman exponent must be positive, got {m}"
                    )));
                }
                points
                    .iter()
                    .map(|p| {
                        let c = p
                            .coords
                            .as_ref()
                            .ok_or_else(|| {
                                Error::Lambda("Bergman lambda needs coordinates".into())
                            })?
                            .as_complex();
                        let norm = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                        if norm >= 1.0 {
                            return Err(Error::Lambda(format!(
                                "point {:?} is outside the unit ball",
                                p.id
                            )));
                        }
                        Ok(1.0 - norm)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            DominatingFn::Power { c0, kappa } => {
                if !(*c0 > 0.0 && *kappa > 0.0 && c0.is_finite() && kappa.is_finite()) {
                    return Err(Error::Lambda(format!(
                        "power law needs c0, kappa > 0, got {c0}, {kappa}"
                    )));
                }
                Vec::new()
            }
            DominatingFn::Table { radii, values } => {
                if radii.is_empty() || radii.windows(2).any(|w| !(w[0] < w[1])) || radii[0] <= 0.0 {
                    return Err(Error::Lambda(
                        "table radii must be positive and increasing".into(),
                    ));
                }
                if values.len() != n || values.iter().any(|v| v.len() != radii.len()) {
                    return Err(Error::Lambda(
                        "table needs one row per point, one value per radius".into(),
                    ));
                }
                for row in values {
                    if row.iter().any(|v| !(*v > 0.0 && v.is_finite()))
                        || row.windows(2).any(|w| w[0] > w[1])
                    {
                        return Err(Error::Lambda(
                            "table rows must be positive and non-decreasing".into(),
                        ));
                    }
                }
                Vec::new()
            }
            DominatingFn::Measure => Vec::new(),
        };

        let mut order = vec![0usize; n * n];
        let mut sorted = vec![0.0; n * n];
        let mut prefix_mass = vec![0.0; n * (n + 1)];
        let mut canonical_radii = Vec::with_capacity(n);
        let mut min_gap = f64::INFINITY;
        let mut diam: f64 = 0.0;
        for &v in &dist {
            if v > 0.0 {
                min_gap = min_gap.min(v);
            }
            diam = diam.max(v);
        }
        if !min_gap.is_finite() {
            min_gap = 1.0;
        }
        for c in 0..n {
            let row = &dist[c * n..(c + 1) * n];
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
            let mut acc = 0.0;
            for (k, &y) in idx.iter().enumerate() {
                order[c * n + k] = y;
                sorted[c * n + k] = row[y];
                acc += weights[y];
                prefix_mass[c * (n + 1) + k + 1] = acc;
            }
            let mut distinct: Vec<f64> = Vec::new();
            for k in 0..n {
                let v = sorted[c * n + k];
                if distinct.last() != Some(&v) {
                    distinct.push(v);
                }
            }
            let last = *distinct.last().unwrap_or(&0.0);
            let mut radii: Vec<f64> = distinct.iter().skip(1).copied().collect();
            radii.push(last + min_gap);
            canonical_radii.push(radii);
        }

        let space = Space {
            points,
            metric_kind: kind,
            n,
            dist,
            weights,
            lambda,
            order,
            sorted,
            prefix_mass,
            canonical_radii,
            boundary,
            min_gap,
            diam,
            quasi: 1.0,
            constants: OnceLock::new(),
        };
        let quasi = space.validate_triangle(&SamplePlan::default())?;
        let space = Space { quasi, ..space };
        space.validate_lambda_monotone()?;
        Ok(space)
    }

    fn validate_triangle(&self, plan: &SamplePlan) -> Result<f64> {
        let n = self.n;
        let mut worst: f64 = 1.0;
        let mut check = |x: usize, y: usize, z: usize| -> Result<()> {
            let lhs = self.d(x, z);
            let rhs = self.d(x, y) + self.d(y, z);
            if lhs > rhs * (1.0 + TRIANGLE_SLACK) {
                if self.metric_kind == MetricKindTag::Metric {
                    return Err(Error::Triangle(x, y, z));
                }
                worst = worst.max(lhs / rhs);
            }
            Ok(())
        };
        if n <= plan.exhaustive_triangle {
            for x in 0..n {
                for y in 0..n {
                    for z in 0..n {
                        check(x, y, z)?;
                    }
                }
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            for _ in 0..plan.sampled_triples {
                check(
                    rng.gen_range(0..n),
                    rng.gen_range(0..n),
                    rng.gen_range(0..n),
                )?;
            }
        }
        Ok(worst)
    }

    fn validate_lambda_monotone(&self) -> Result<()> {
        let grid = log_grid(self.min_gap, 2.0 * self.diam.max(self.min_gap), 64);
        for x in self.grid_centers(usize::MAX) {
            let mut prev = 0.0;
            for &r in &grid {
                let v = self.lambda(x, r);
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::Lambda(format!(
                        "lambda({x}, {r}) = {v} is not positive"
                    )));
                }
                if v < prev {
                    return Err(Error::Lambda(format!(
                        "lambda({x}, .) decreases near r = {r}"
                    )));
                }
                prev = v;
            }
        }
        Ok(())
    }

    /// Number of points.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.points.iter().position(|p| p.id == id)
    }

    #[inline]
    pub fn d(&self, x: usize, y: usize) -> f64 {
        self.dist[x * self.n + y]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn weight(&self, x: usize) -> f64 {
        self.weights[x]
    }

    pub fn total_mass(&self) -> f64 {
        self.prefix_mass[self.n]
    }

    pub fn dominating(&self) -> &DominatingFn {
        &self.lambda
    }

    /// Smallest positive pairwise distance (1 for a single point).
    pub fn min_gap(&self) -> f64 {
        self.min_gap
    }

    pub fn diameter(&self) -> f64 {
        self.diam
    }

    /// Whether the distance is only a quasi-metric.
    pub fn is_quasi_metric(&self) -> bool {
        self.metric_kind == MetricKindTag::Quasi
    }

    /// Fitted `K` with `d(x,z) <= K (d(x,y) + d(y,z))`; 1 for true metrics.
    pub fn quasi_triangle_constant(&self) -> f64 {
        self.quasi
    }

    /// Points sorted by distance from `c` (ties by index).
    #[inline]
    pub fn order(&self, c: usize) -> &[usize] {
        &self.order[c * self.n..(c + 1) * self.n]
    }

    /// Distances from `c` in the order of [`Space::order`].
    #[inline]
    pub fn sorted_distances(&self, c: usize) -> &[f64] {
        &self.sorted[c * self.n..(c + 1) * self.n]
    }

    /// Number of points at distance `< r` from `c`.
    #[inline]
    pub fn count_open(&self, c: usize, r: f64) -> usize {
        self.sorted_distances(c).partition_point(|&v| v < r)
    }

    /// Number of points at distance `<= r` from `c`.
    #[inline]
    pub fn count_closed(&self, c: usize, r: f64) -> usize {
        self.sorted_distances(c).partition_point(|&v| v <= r)
    }

    /// Mass of the first `k` points of `order(c)`.
    #[inline]
    pub fn prefix_mass(&self, c: usize, k: usize) -> f64 {
        self.prefix_mass[c * (self.n + 1) + k]
    }

    /// The open ball `B(center, radius)`.
    ///
    /// # Panics
    /// If `center` is out of range or `radius` is not positive.
    pub fn ball(&self, center: usize, radius: f64) -> Ball {
        assert!(center < self.n, "center {center} out of range");
        assert!(radius > 0.0, "ball radius must be positive, got {radius}");
        Ball {
            center,
            radius,
            size: self.count_open(center, radius),
        }
    }

    /// Fallible variant of [`Space::ball`] for untrusted input.
    pub fn try_ball(&self, center: usize, radius: f64) -> Result<Ball> {
        if center >= self.n {
            return Err(Error::Parameter(format!("center {center} out of range")));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::Parameter(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        Ok(self.ball(center, radius))
    }

    /// `rho * B`, same center.
    pub fn dilate(&self, ball: &Ball, rho: f64) -> Ball {
        self.ball(ball.center, ball.radius * rho)
    }

    /// Realized point set of a ball, sorted by distance from its center.
    #[inline]
    pub fn members(&self, ball: &Ball) -> &[usize] {
        &self.order(ball.center)[..ball.size]
    }

    pub fn contains(&self, ball: &Ball, y: usize) -> bool {
        self.d(ball.center, y) < ball.radius
    }

    /// `mu(B)`.
    #[inline]
    pub fn mu(&self, ball: &Ball) -> f64 {
        self.prefix_mass(ball.center, ball.size)
    }

    /// `mu(B(center, radius))` without building a ball.
    #[inline]
    pub fn mu_ball(&self, center: usize, radius: f64) -> f64 {
        self.prefix_mass(center, self.count_open(center, radius))
    }

    /// Stored radii of the canonical balls centered at `c`, ascending.
    pub fn canonical_radii(&self, c: usize) -> &[f64] {
        &self.canonical_radii[c]
    }

    /// Every canonical ball, grouped by center and ascending in radius.
    pub fn canonical_balls(&self) -> Vec<Ball> {
        (0..self.n)
            .flat_map(|c| self.canonical_radii[c].iter().map(move |&r| (c, r)))
            .map(|(c, r)| self.ball(c, r))
            .collect()
    }

    /// `lambda(x, r)`.
    ///
    /// # Panics
    /// If `r` is not positive; use [`Space::try_lambda`] for untrusted input.
    pub fn lambda(&self, x: usize, r: f64) -> f64 {
        debug_assert!(r > 0.0);
        match &self.lambda {
            DominatingFn::Power { c0, kappa } => c0 * r.powf(*kappa),
            DominatingFn::Bergman { m } => self.boundary[x].powf(*m).max(r.powf(*m)),
            DominatingFn::Measure => self.mu_ball(x, r),
            DominatingFn::Table { radii, values } => {
                let k = radii.partition_point(|&g| g <= r);
                values[x][k.saturating_sub(1)]
            }
        }
    }

    pub fn try_lambda(&self, x: usize, r: f64) -> Result<f64> {
        if x >= self.n {
            return Err(Error::Parameter(format!("point {x} out of range")));
        }
        if !(r > 0.0) {
            return Err(Error::Parameter(format!("lambda needs r > 0, got {r}")));
        }
        Ok(self.lambda(x, r))
    }

    /// Distance to the boundary of the unit ball (Bergman spaces only).
    pub fn boundary_distance(&self, x: usize) -> Option<f64> {
        self.boundary.get(x).copied()
    }

    /// Log-spaced radii between the smallest gap and twice the diameter.
    pub fn radius_grid(&self, per_decade: usize) -> Vec<f64> {
        let hi = 2.0 * self.diam.max(self.min_gap);
        let decades = (hi / self.min_gap).log10().max(0.0);
        let count = ((decades * per_decade as f64).ceil() as usize).max(1) + 1;
        log_grid(self.min_gap, hi, count)
    }

    fn grid_centers(&self, max_centers: usize) -> Vec<usize> {
        if self.n <= max_centers {
            (0..self.n).collect()
        } else {
            (0..max_centers).map(|k| k * self.n / max_centers).collect()
        }
    }

    /// Checks `mu(B) <= lambda` on canonical balls and fits `C_lambda`.
    pub fn check_upper_doubling(&self, plan: &SamplePlan) -> UpperDoublingReport {
        let mut violations = Vec::new();
        for c in 0..self.n {
            for &r in &self.canonical_radii[c] {
                let mass = self.mu_ball(c, r);
                let lam = self.lambda(c, r);
                if mass > lam {
                    violations.push(UpperDoublingViolation {
                        center: c,
                        radius: r,
                        mass,
                        lambda: lam,
                    });
                }
            }
        }
        let grid = self.radius_grid(plan.per_decade);
        let mut c_lambda: f64 = 1.0;
        for x in self.grid_centers(plan.max_centers) {
            for &r in &grid {
                c_lambda = c_lambda.max(self.lambda(x, r) / self.lambda(x, r / 2.0));
            }
        }
        UpperDoublingReport {
            passed: violations.is_empty(),
            c_lambda,
            violations,
        }
    }

    /// Fits the smallest `C` with `lambda(x, r) <= C lambda(y, r)` when `d(x, y) <= r`.
    pub fn check_lambda_regularity(&self, plan: &SamplePlan) -> RegularityReport {
        let centers = self.grid_centers(plan.max_centers);
        let grid = self.radius_grid(plan.per_decade / 4 + 1);
        let mut best: f64 = 1.0;
        let mut witness = None;
        for &x in &centers {
            for &y in &centers {
                let dxy = self.d(x, y);
                for &r in grid.iter().filter(|&&r| r >= dxy) {
                    let ratio = self.lambda(x, r) / self.lambda(y, r);
                    if ratio > best {
                        best = ratio;
                        witness = Some((x, y, r));
                    }
                }
            }
        }
        RegularityReport {
            constant: best,
            witness,
        }
    }

    /// Greedy covering of canonical balls by half-radius balls centered at their points.
    pub fn check_geometric_doubling(&self, plan: &SamplePlan) -> CoveringReport {
        let balls = self.canonical_balls();
        let total: usize = balls.iter().map(|b| b.size * b.size).sum();
        let exhaustive = total <= plan.cover_budget;
        let chosen: Vec<Ball> = if exhaustive {
            balls
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            let mut spent = 0usize;
            let mut picked = Vec::new();
            // Always include the largest ball at each center, then random ones.
            for c in 0..self.n {
                let r = *self.canonical_radii[c].last().unwrap();
                picked.push(self.ball(c, r));
            }
            while spent < plan.cover_budget / 2 {
                let b = balls[rng.gen_range(0..balls.len())];
                spent += b.size * b.size;
                picked.push(b);
            }
            picked
        };
        let n0 = chosen
            .iter()
            .map(|b| self.greedy_cover_size(b))
            .max()
            .unwrap_or(1)
            .max(1);
        CoveringReport {
            n0,
            dimension: (n0 as f64).log2(),
            balls_checked: chosen.len(),
            exhaustive,
        }
    }

    /// Size of the greedy (max-coverage) cover of `ball` by balls of half its radius
    /// centered at its own points.
    pub fn greedy_cover_size(&self, ball: &Ball) -> usize {
        let members = self.members(ball);
        let m = members.len();
        let half = ball.radius / 2.0;
        let mut covered = vec![false; m];
        let mut left = m;
        let mut count = 0;
        while left > 0 {
            let mut best = (0usize, 0usize);
            for (i, &c) in members.iter().enumerate() {
                let gain = (0..m)
                    .filter(|&j| !covered[j] && self.d(c, members[j]) < half)
                    .count();
                if gain > best.1 {
                    best = (i, gain);
                }
            }
            let c = members[best.0];
            for j in 0..m {
                if !covered[j] && self.d(c, members[j]) < half {
                    covered[j] = true;
                    left -= 1;
                }
            }
            count += 1;
        }
        count
    }

    /// `C(a) = inf lambda(x, a r) / lambda(x, r)` and the series test of weak reverse doubling.
    pub fn check_weak_reverse_doubling(
        &self,
        epsilon: f64,
        a_grid: &[f64],
        k_max: usize,
        threshold: f64,
        plan: &SamplePlan,
    ) -> Result<ReverseDoublingReport> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Parameter(format!(
                "epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        if a_grid.iter().any(|&a| !(a > 1.0)) {
            return Err(Error::Parameter("ratios must exceed 1".into()));
        }
        let centers = self.grid_centers(plan.max_centers);
        let top = 2.0 * self.diam.max(self.min_gap);
        let ratio_inf = |a: f64| -> f64 {
            let r_max = top / a;
            let radii = log_grid(r_max * 1e-4, r_max * (1.0 - 1e-9), 16);
            let mut best = f64::INFINITY;
            for &x in &centers {
                for &r in &radii {
                    best = best.min(self.lambda(x, a * r) / self.lambda(x, r));
                }
            }
            best
        };
        let table: Vec<(f64, f64)> = a_grid.iter().map(|&a| (a, ratio_inf(a))).collect();
        let mut partial_sums = Vec::new();
        let mut tail_terms = Vec::new();
        for &a in a_grid {
            let mut sum = 0.0;
            let mut last = 0.0;
            for k in 1..=k_max {
                last = ratio_inf(a.powi(k as i32)).powf(-epsilon);
                sum += last;
            }
            partial_sums.push(sum);
            tail_terms.push(last);
        }
        let converges = tail_terms.iter().all(|&t| t < threshold);
        Ok(ReverseDoublingReport {
            epsilon,
            table,
            partial_sums,
            tail_terms,
            converges,
        })
    }

    /// Fits `|lambda(y, r+t) - lambda(x, r)| <= C ((d(x,y)+t)/r)^eps lambda(x, r)`.
    pub fn check_weak_growth(&self, plan: &SamplePlan) -> WeakGrowthReport {
        let eps_grid: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
        let centers = self.grid_centers(plan.max_centers.min(32));
        let radii = self.radius_grid(plan.per_decade / 4 + 1);
        let mut worst = vec![0.0f64; eps_grid.len()];
        for &x in &centers {
            for &y in &centers {
                let dxy = self.d(x, y);
                for &r in radii.iter().filter(|&&r| r >= dxy) {
                    let base = self.lambda(x, r);
                    for frac in [0.0, 0.125, 0.25, 0.5, 1.0] {
                        let t = frac * r;
                        let diff = (self.lambda(y, r + t) - base).abs();
                        let spread = (dxy + t) / r;
                        for (k, &eps) in eps_grid.iter().enumerate() {
                            let c = if diff == 0.0 {
                                0.0
                            } else if spread == 0.0 {
                                f64::INFINITY
                            } else {
                                diff / (spread.powf(eps) * base)
                            };
                            worst[k] = worst[k].max(c);
                        }
                    }
                }
            }
        }
        let table: Vec<(f64, f64)> = eps_grid
            .iter()
            .copied()
            .zip(worst.iter().copied())
            .collect();
        let min_c = worst.iter().copied().fold(f64::INFINITY, f64::min);
        let (epsilon, constant) = table
            .iter()
            .rev()
            .find(|(_, c)| *c <= min_c * (1.0 + 1e-12))
            .copied()
            .unwrap_or((1.0, f64::INFINITY));
        WeakGrowthReport {
            constant,
            epsilon,
            table,
            flagged: !(constant <= 10.0),
        }
    }

    /// Fitted constants under the default sampling plan, computed once.
    pub fn constants(&self) -> &SpaceConstants {
        self.constants
            .get_or_init(|| self.fit_constants(&SamplePlan::default()))
    }

    pub fn fit_constants(&self, plan: &SamplePlan) -> SpaceConstants {
        let upper = self.check_upper_doubling(plan);
        let regularity = self.check_lambda_regularity(plan);
        let cover = self.check_geometric_doubling(plan);
        SpaceConstants {
            c_lambda: upper.c_lambda,
            c_lambda_tilde: regularity.constant,
            n0: cover.n0,
            n: cover.dimension,
            nu: upper.c_lambda.log2(),
            upper_doubling_passed: upper.passed,
            quasi_triangle: self.quasi,
        }
    }

    /// Installs externally fitted constants (for instance from a cache).
    pub fn with_constants(self, constants: SpaceConstants) -> Space {
        let cell = OnceLock::new();
        let _ = cell.set(constants);
        Space {
            constants: cell,
            ..self
        }
    }
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 || hi <= lo {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn s3() -> Space {
        let d = |i: usize, j: usize| (i as f64 - j as f64).abs();
        let values = (0..3).map(|i| (0..3).map(|j| d(i, j)).collect()).collect();
        Space::from_matrix(
            values,
            vec![1.0; 3],
            DominatingFn::Power {
                c0: 2.0,
                kappa: 1.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn s3_ball_masses() {
        let s = s3();
        assert_eq!(s.mu_ball(1, 1.5), 3.0);
        assert_eq!(s.mu_ball(1, 0.5), 1.0);
        assert_eq!(s.mu_ball(1, 1.0), 1.0, "balls are open");
        assert_eq!(s.lambda(1, 3.0), 6.0);
    }

    #[test]
    fn single_point_space() {
        let s = Space::from_matrix(vec![vec![0.0]], vec![2.5], DominatingFn::Measure).unwrap();
        assert_eq!(s.mu_ball(0, 0.1), 2.5);
        assert_eq!(s.mu_ball(0, 100.0), 2.5);
        let cover = s.check_geometric_doubling(&SamplePlan::default());
        assert_eq!(cover.n0, 1);
        assert_eq!(cover.dimension, 0.0);
        assert_eq!(
            s.check_lambda_regularity(&SamplePlan::default()).constant,
            1.0
        );
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        let err = Space::from_matrix(
            vec![vec![0.0, 1.0], vec![2.0, 0.0]],
            vec![1.0, 1.0],
            DominatingFn::Measure,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Asymmetric(0, 1)));
    }

    #[test]
    fn triangle_failure_reports_triple() {
        let err = Space::from_matrix(
            vec![
                vec![0.0, 1.0, 5.0],
                vec![1.0, 0.0, 1.0],
                vec![5.0, 1.0, 0.0],
            ],
            vec![1.0; 3],
            DominatingFn::Measure,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Triangle(0, 1, 2)));
    }

    #[test]
    fn bad_weight_rejected() {
        let err =
            Space::from_matrix(vec![vec![0.0]], vec![0.0], DominatingFn::Measure).unwrap_err();
        assert!(matches!(err, Error::BadWeight { index: 0, .. }));
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{
            "points": [{"id": "a", "coords": [0.0]}, {"id": "b", "coords": [1.0]}, {"id": "c", "coords": [2.0]}],
            "metric": {"type": "euclidean"},
            "weights": [1, 1, 1],
            "lambda": {"type": "power", "c0": 2, "kappa": 1}
        }"#;
        let s = Space::from_json(text).unwrap();
        assert_eq!(s.d(0, 2), 2.0);
        assert_eq!(s.index_of("b"), Some(1));
        assert!(Space::from_json(r#"{"points": []}"#).is_err());
    }

    #[test]
    fn s3_upper_doubling_and_cover() {
        let s = s3();
        let rep = s.check_upper_doubling(&SamplePlan::default());
        assert!(rep.passed);
        assert_eq!(rep.c_lambda, 2.0);
        assert!(s.greedy_cover_size(&s.ball(1, 1.5)) <= 3);
    }

    #[test]
    fn raised_weight_is_reported() {
        let values = (0..3)
            .map(|i: i32| (0..3).map(|j: i32| (i - j).abs() as f64).collect())
            .collect();
        let s = Space::from_matrix(
            values,
            vec![1.0, 5.0, 1.0],
            DominatingFn::Power {
                c0: 2.0,
                kappa: 1.0,
            },
        )
        .unwrap();
        let rep = s.check_upper_doubling(&SamplePlan::default());
        assert!(!rep.passed);
        assert!(rep.violations.iter().any(|v| v.center == 1));
    }

    fn line(n: usize, lambda: DominatingFn) -> Space {
        let points = (0..n)
            .map(|i| Point {
                id: i.to_string(),
                coords: Some(Coords::Real(vec![i as f64])),
            })
            .collect();
        Space::new(points, MetricSpec::Euclidean, vec![1.0; n], lambda).unwrap()
    }

    #[test]
    fn measure_lambda_on_line_has_small_doubling_constant() {
        let s = line(40, DominatingFn::Measure);
        let rep = s.check_upper_doubling(&SamplePlan::default());
        assert!(rep.passed);
        assert!(rep.c_lambda <= 3.0, "{}", rep.c_lambda);
    }

    #[test]
    fn line_of_64_points_covers_with_three() {
        let s = line(
            64,
            DominatingFn::Power {
                c0: 2.0,
                kappa: 1.0,
            },
        );
        let rep = s.check_geometric_doubling(&SamplePlan::default());
        assert!(rep.exhaustive);
        assert!(rep.n0 <= 3, "{}", rep.n0);
    }

    #[test]
    fn canonical_radii_are_next_distances() {
        let s = s3();
        assert_eq!(s.canonical_radii(0), &[1.0, 2.0, 3.0]);
        assert_eq!(s.canonical_radii(1), &[1.0, 2.0]);
        let sets: Vec<usize> = s.canonical_balls().iter().map(|b| b.size).collect();
        assert_eq!(sets, vec![1, 2, 3, 1, 3, 1, 2, 3]);
    }

    #[test]
    fn power_law_ratio_is_exact() {
        let s = s3();
        assert_eq!(s.lambda(0, 0.8) / s.lambda(0, 0.4), 2.0);
        assert!(s.try_lambda(0, 0.0).is_err());
    }

    #[test]
    fn bergman_at_origin() {
        let points = vec![
            Point {
                id: "o".into(),
                coords: Some(Coords::Complex(vec![[0.0, 0.0]])),
            },
            Point {
                id: "p".into(),
                coords: Some(Coords::Complex(vec![[0.3, 0.4]])),
            },
        ];
        let s = Space::new(
            points,
            MetricSpec::ComplexBall,
            vec![0.1, 0.1],
            DominatingFn::Bergman { m: 2.0 },
        )
        .unwrap();
        assert_eq!(s.boundary_distance(0), Some(1.0));
        assert_eq!(s.lambda(0, 0.2), 1.0);
        assert!((s.d(0, 1) - 0.5).abs() < 1e-15);
        let reg = s.check_lambda_regularity(&SamplePlan::default());
        assert!(reg.constant >= 1.0 && reg.constant.is_finite());
    }

    #[test]
    fn reverse_doubling_power_law() {
        let s = s3();
        let rep = s
            .check_weak_reverse_doubling(0.5, &[2.0, 3.0], 40, 1e-3, &SamplePlan::default())
            .unwrap();
        for &(a, c) in &rep.table {
            assert!((c - a).abs() <= 1e-9 * a);
        }
        assert!(rep.converges);
        assert!(s
            .check_weak_reverse_doubling(1.5, &[2.0], 4, 1e-3, &SamplePlan::default())
            .is_err());
    }

    #[test]
    fn reverse_doubling_fails_for_flat_lambda() {
        let values = (0..3)
            .map(|i: i32| (0..3).map(|j: i32| (i - j).abs() as f64).collect())
            .collect();
        let s = Space::from_matrix(values, vec![0.1; 3], DominatingFn::constant(3, 1.0)).unwrap();
        let rep = s
            .check_weak_reverse_doubling(0.5, &[2.0], 20, 1e-3, &SamplePlan::default())
            .unwrap();
        assert_eq!(rep.table[0].1, 1.0);
        assert!(!rep.converges);
        let growth = s.check_weak_growth(&SamplePlan::default());
        assert_eq!(growth.constant, 0.0);
    }

    #[test]
    fn weak_growth_power_law() {
        let s = line(
            10,
            DominatingFn::Power {
                c0: 3.0,
                kappa: 1.0,
            },
        );
        let rep = s.check_weak_growth(&SamplePlan::default());
        assert_eq!(rep.epsilon, 1.0);
        assert!(rep.constant <= 1.0 + 1e-12, "{}", rep.constant);
    }

    #[test]
    fn weak_growth_flags_jumps() {
        let values = (0..3)
            .map(|i: i32| (0..3).map(|j: i32| (i - j).abs() as f64).collect())
            .collect();
        let lambda = DominatingFn::Table {
            radii: vec![0.5, 1.5],
            values: vec![vec![10.0, 1e4]; 3],
        };
        let s = Space::from_matrix(values, vec![1.0; 3], lambda).unwrap();
        assert!(s.check_weak_growth(&SamplePlan::default()).flagged);
    }
}

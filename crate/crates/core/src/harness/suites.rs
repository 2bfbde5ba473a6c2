//! Suite bodies: one fixture size at a time, then ladder trends.

use rayon::prelude::*;

use super::stats::{
    block_family, calibrated_symbol, endpoint_lhs, endpoint_rhs, estimate_operator_norm,
    threshold_grid, weak_type_statistic, Statistic, SymbolNorm,
};
use super::{
    ExperimentConfig, FixtureSummary, StatRow, SuiteEntry, SuiteName, SuiteReport, TrendRow,
};
use crate::error::{Error, Result};
use crate::fixtures::{make_function_family, make_space, FixtureSpec};
use crate::kernels::{KernelMatrix, KernelSpec};
use crate::maximal::{maximal_m_alpha, maximal_n, sharp_maximal};
use crate::norms::{
    lp_norm, luxemburg_norm, orlicz_indices, psi_from_phi, rbmo_norm, weak_lp, OrliczFn,
};
use crate::operators::{apply, multilinear_commutator, FunctionVec};
use crate::space::{SamplePlan, Space};

struct Ctx<'a> {
    config: &'a ExperimentConfig,
    entry: &'a SuiteEntry,
    spec: FixtureSpec,
    space: Space,
    kernel: KernelMatrix,
    family: Vec<(String, FunctionVec)>,
}

impl Ctx<'_> {
    fn count(&self) -> usize {
        self.entry.family_count.unwrap_or(self.config.family_count)
    }

    fn push(&self, report: &mut SuiteReport, statistic: &str, st: Statistic) {
        if let Some(v) = st.value {
            if !v.is_finite() {
                report.hard_failures.push(format!(
                    "{} {}: non-finite value {v}",
                    self.spec.label(),
                    statistic
                ));
            }
        }
        report.rows.push(StatRow {
            fixture_family: self.spec.family_label(),
            fixture: self.spec.label(),
            n: self.space.len(),
            statistic: statistic.to_string(),
            value: st.value,
            evaluated: st.evaluated,
            skipped: st.skipped,
            witness: st.witness.unwrap_or_default(),
        });
    }

    fn fail(&self, report: &mut SuiteReport, message: String) {
        report
            .hard_failures
            .push(format!("{}: {message}", self.spec.label()));
    }

    /// Ratios per family member, evaluated in parallel and merged in family order.
    fn per_member(
        &self,
        eval: impl Fn(&[f64]) -> Result<Option<(f64, String)>> + Sync,
    ) -> Result<Statistic> {
        let items = self
            .family
            .par_iter()
            .map(|(label, f)| {
                Ok(match eval(f)? {
                    None => (label.clone(), None),
                    Some((v, extra)) if extra.is_empty() => (label.clone(), Some(v)),
                    Some((v, extra)) => (format!("{label};{extra}"), Some(v)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Statistic::from_ratios(items))
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Runs one suite entry over its fixtures and ladder.
pub fn run_suite(config: &ExperimentConfig, entry: &SuiteEntry) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        suite: entry.name,
        label: entry.label(),
        fixtures: Vec::new(),
        rows: Vec::new(),
        trends: Vec::new(),
        notes: Vec::new(),
        hard_failures: Vec::new(),
    };
    let fixtures = entry.fixtures.as_ref().unwrap_or(&config.fixtures);
    let ladder = entry.ladder.as_ref().unwrap_or(&config.ladder);
    let mut families = entry
        .families
        .clone()
        .unwrap_or_else(|| config.families.clone());
    if entry.name == SuiteName::SharpMaximal {
        families.iter_mut().for_each(|f| f.mean_zero = true);
    }
    for base in fixtures {
        let specs: Vec<FixtureSpec> = if ladder.is_empty() {
            vec![base.clone()]
        } else {
            ladder.iter().map(|&n| base.with_size(n)).collect()
        };
        for spec in specs {
            let space = make_space(&spec)?;
            let c = space.constants();
            report.fixtures.push(FixtureSummary {
                fixture: spec.label(),
                n: space.len(),
                c_lambda: c.c_lambda,
                c_lambda_tilde: c.c_lambda_tilde,
                n0: c.n0,
                upper_doubling_passed: c.upper_doubling_passed,
            });
            let count = entry.family_count.unwrap_or(config.family_count);
            let mut family = Vec::new();
            for (i, fam) in families.iter().enumerate() {
                let members =
                    make_function_family(&space, fam, count, config.seed.wrapping_add(i as u64))?;
                family.extend(
                    members
                        .into_iter()
                        .enumerate()
                        .map(|(j, f)| (format!("{}#{j}", fam.label()), f)),
                );
            }
            let kernel = KernelMatrix::new(&config.kernel, &space)?;
            let ctx = Ctx {
                config,
                entry,
                spec,
                space,
                kernel,
                family,
            };
            match entry.name {
                SuiteName::FractionalBounds => fractional_bounds(&ctx, &mut report)?,
                SuiteName::Commutators => commutators(&ctx, &mut report)?,
                SuiteName::Endpoint => endpoint(&ctx, &mut report)?,
                SuiteName::Pointwise => pointwise(&ctx, &mut report)?,
                SuiteName::SharpMaximal => sharp(&ctx, &mut report)?,
            }
        }
    }
    report.trends = trends(&report.rows, entry.max_growth);
    Ok(report)
}

/// Consecutive-size growth per (fixture family, statistic), in row order.
fn trends(rows: &[StatRow], limit: f64) -> Vec<TrendRow> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        let key = (r.fixture_family.as_str(), r.statistic.as_str());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut out = Vec::new();
    for (family, statistic) in keys {
        let series: Vec<&StatRow> = rows
            .iter()
            .filter(|r| r.fixture_family == family && r.statistic == statistic)
            .collect();
        for pair in series.windows(2) {
            let (Some(a), Some(b)) = (pair[0].value, pair[1].value) else {
                continue;
            };
            if !(a > 0.0) {
                continue;
            }
            let growth = b / a - 1.0;
            out.push(TrendRow {
                fixture_family: family.to_string(),
                statistic: statistic.to_string(),
                n_from: pair[0].n,
                n_to: pair[1].n,
                value_from: a,
                value_to: b,
                growth,
                limit,
                passed: growth < limit,
            });
        }
    }
    out
}

fn fractional_bounds(ctx: &Ctx, report: &mut SuiteReport) -> Result<()> {
    let (space, kernel) = (&ctx.space, &ctx.kernel);
    let alpha = ctx.config.alpha();
    let (p, q) = (ctx.config.exponents.p, ctx.config.exponents.q);
    let q_end = 1.0 / (1.0 - alpha);
    let t = |f: &[f64]| apply(kernel, space, f);
    if ctx.entry.wants("strong") {
        let st = estimate_operator_norm(space, &t, p, q, &ctx.family)?;
        ctx.push(report, "strong", st);
        for (label, f) in &ctx.family {
            let g = t(f)?;
            let (weak, strong) = (weak_lp(space, &g, q)?, lp_norm(space, &g, q)?);
            if weak > strong * (1.0 + 1e-12) {
                ctx.fail(
                    report,
                    format!("{label}: weak norm {weak:e} exceeds strong norm {strong:e}"),
                );
            }
        }
    }
    if ctx.entry.wants("weak") {
        let st = weak_type_statistic(space, &t, 1.0, q_end, &ctx.family)?;
        ctx.push(report, "weak", st);
    }
    if ctx.entry.wants("rbmo") {
        let st = ctx.per_member(|f| {
            let d = lp_norm(space, f, 1.0 / alpha)?;
            if d == 0.0 {
                return Ok(None);
            }
            Ok(Some((
                rbmo_norm(space, &t(f)?, 2.0)?.value / d,
                String::new(),
            )))
        })?;
        ctx.push(report, "rbmo", st);
    }
    let want_blocks = ctx.entry.wants("block_strong") || ctx.entry.wants("block_weak");
    if want_blocks {
        let blocks = block_family(space, ctx.count())?;
        if blocks.is_empty() {
            report
                .notes
                .push(format!("{}: no ball carries a block", ctx.spec.label()));
        }
        let mut strong = Vec::new();
        let mut weak = Vec::new();
        for (label, b, validation) in &blocks {
            if !validation.passed() {
                ctx.fail(report, format!("{label} fails block validation"));
                continue;
            }
            if validation.block_norm == 0.0 {
                strong.push((label.clone(), None));
                weak.push((label.clone(), None));
                continue;
            }
            let g = t(b)?;
            strong.push((
                label.clone(),
                Some(lp_norm(space, &g, q_end)? / validation.block_norm),
            ));
            weak.push((
                label.clone(),
                Some(weak_lp(space, &g, q_end)? / validation.block_norm),
            ));
        }
        if ctx.entry.wants("block_strong") {
            ctx.push(report, "block_strong", Statistic::from_ratios(strong));
        }
        if ctx.entry.wants("block_weak") {
            ctx.push(report, "block_weak", Statistic::from_ratios(weak));
        }
    }
    Ok(())
}

fn symbols(
    ctx: &Ctx,
    report: &mut SuiteReport,
    norms: &[SymbolNorm],
    target: f64,
    tolerance: f64,
    salt: u64,
) -> Option<Vec<(FunctionVec, f64)>> {
    let mut out = Vec::new();
    for (j, norm) in norms.iter().enumerate() {
        match calibrated_symbol(
            &ctx.space,
            ctx.config.seed.wrapping_add(salt + j as u64),
            *norm,
            target,
            tolerance,
        ) {
            Ok(s) => out.push(s),
            Err(e) => {
                ctx.fail(report, format!("symbol {j}: {e}"));
                return None;
            }
        }
    }
    Some(out)
}

fn commutators(ctx: &Ctx, report: &mut SuiteReport) -> Result<()> {
    let (space, kernel) = (&ctx.space, &ctx.kernel);
    let settings = ctx.config.commutator;
    let alpha = ctx.config.alpha();
    let (p, q) = (ctx.config.exponents.p, ctx.config.exponents.q);
    let phi = ctx.config.phi();
    let psi = psi_from_phi(&phi, alpha)?;
    for (name, f) in [("phi", &phi), ("psi", &psi)] {
        let (a, b) = orlicz_indices(f);
        if !(a > 1.0 && a <= b && b.is_finite()) {
            return Err(Error::Precondition(format!(
                "indices of {name} are ({a}, {b}); need 1 < a <= b < inf"
            )));
        }
    }
    let k = settings.k;
    let Some(syms) = symbols(
        ctx,
        report,
        &vec![SymbolNorm::Rbmo; k],
        settings.target,
        settings.tolerance,
        100,
    ) else {
        return Ok(());
    };
    let norms: Vec<f64> = syms.iter().map(|s| s.1).collect();
    let bs: Vec<&[f64]> = syms.iter().map(|s| &s.0[..]).collect();
    let product: f64 = norms.iter().product();
    if ctx.entry.wants("commutator") {
        let st = ctx.per_member(|f| {
            let d = lp_norm(space, f, p)? * norms[0];
            if d == 0.0 {
                return Ok(None);
            }
            Ok(Some((
                lp_norm(
                    space,
                    &multilinear_commutator(&bs[..1], kernel, space, f)?,
                    q,
                )? / d,
                String::new(),
            )))
        })?;
        ctx.push(report, "commutator", st);
    }
    let want_lp = ctx.entry.wants("multilinear_lp");
    let want_orlicz = ctx.entry.wants("multilinear_orlicz");
    if want_lp || want_orlicz {
        let lp = ctx.per_member(|f| {
            let d = lp_norm(space, f, p)? * product;
            if d == 0.0 {
                return Ok(None);
            }
            Ok(Some((
                lp_norm(space, &multilinear_commutator(&bs, kernel, space, f)?, q)? / d,
                String::new(),
            )))
        })?;
        let orlicz = ctx.per_member(|f| {
            let d = luxemburg_norm(space, f, &phi)? * product;
            if d == 0.0 {
                return Ok(None);
            }
            Ok(Some((
                luxemburg_norm(space, &multilinear_commutator(&bs, kernel, space, f)?, &psi)? / d,
                String::new(),
            )))
        })?;
        if let (OrliczFn::Power { .. }, Some(a), Some(b)) = (&phi, lp.value, orlicz.value) {
            if (a - b).abs() > 1e-8 * a.abs() {
                ctx.fail(
                    report,
                    format!("power Orlicz statistic {b:e} differs from the Lebesgue one {a:e}"),
                );
            }
        }
        if want_lp {
            ctx.push(report, &format!("multilinear_lp(k={k})"), lp);
        }
        if want_orlicz {
            ctx.push(report, &format!("multilinear_orlicz(k={k})"), orlicz);
        }
    }
    Ok(())
}

fn endpoint(ctx: &Ctx, report: &mut SuiteReport) -> Result<()> {
    let (space, kernel) = (&ctx.space, &ctx.kernel);
    let settings = &ctx.config.endpoint;
    let norms_kind: Vec<SymbolNorm> = settings.r.iter().map(|&r| SymbolNorm::OscExp(r)).collect();
    let Some(syms) = symbols(
        ctx,
        report,
        &norms_kind,
        settings.target,
        settings.tolerance,
        200,
    ) else {
        return Ok(());
    };
    let norms: Vec<f64> = syms.iter().map(|s| s.1).collect();
    let bs: Vec<&[f64]> = syms.iter().map(|s| &s.0[..]).collect();
    let st = ctx.per_member(|f| {
        let g = multilinear_commutator(&bs, kernel, space, f)?;
        let top = match max_abs(&g) {
            m if m > 0.0 => m,
            _ => max_abs(f),
        };
        if top == 0.0 {
            return Ok(None);
        }
        let mut best: Option<(f64, String)> = None;
        for lambda in threshold_grid(top, settings.thresholds) {
            let rhs = endpoint_rhs(space, f, lambda, &settings.r, &norms)?;
            if rhs == 0.0 {
                continue;
            }
            let ratio = endpoint_lhs(space, &g, lambda) / rhs;
            if best.as_ref().map_or(true, |b| ratio > b.0) {
                best = Some((ratio, format!("lambda={lambda:e}")));
            }
        }
        Ok(best)
    })?;
    ctx.push(report, "endpoint", st);
    Ok(())
}

fn pointwise(ctx: &Ctx, report: &mut SuiteReport) -> Result<()> {
    let space = &ctx.space;
    let alpha = ctx.config.alpha();
    let eps = ctx.config.pointwise.epsilon;
    let spec = KernelSpec::frac_integral(alpha).with_diagonal(ctx.config.kernel.diagonal);
    let owned;
    let kernel = if spec == ctx.config.kernel {
        &ctx.kernel
    } else {
        owned = KernelMatrix::new(&spec, space)?;
        &owned
    };
    if ctx.entry.wants("welland") {
        let reverse = space.check_weak_reverse_doubling(
            eps,
            &[2.0, 4.0],
            40,
            0.05,
            &SamplePlan::default(),
        )?;
        if !reverse.converges {
            report.notes.push(format!(
                "{}: dominating function fails weak reverse doubling at epsilon {eps}; product bound skipped",
                ctx.spec.label()
            ));
        } else {
            let st = ctx.per_member(|f| {
                let i = apply(kernel, space, f)?;
                let upper = maximal_m_alpha(space, f, 1.0, 6.0, alpha + eps)?;
                let lower = maximal_m_alpha(space, f, 1.0, 6.0, alpha - eps)?;
                let mut best: Option<(f64, String)> = None;
                for x in 0..space.len() {
                    let product = upper[x] * lower[x];
                    if product == 0.0 {
                        continue;
                    }
                    let ratio = i[x].abs() / product.sqrt();
                    if best.as_ref().map_or(true, |b| ratio > b.0) {
                        best = Some((ratio, format!("x={x}")));
                    }
                }
                Ok(best)
            })?;
            ctx.push(report, "welland", st);
        }
    }
    if ctx.entry.wants("potential_ball") {
        let per_center: Vec<(f64, String)> = (0..space.len())
            .into_par_iter()
            .map(|x| {
                let row = kernel.row(x);
                let order = space.order(x);
                let mut best = (f64::NEG_INFINITY, String::new());
                let mut acc = 0.0;
                let mut size = 0;
                for &r in space.canonical_radii(x) {
                    let target = space.count_open(x, r);
                    while size < target {
                        let y = order[size];
                        acc += row[y] * space.weight(y);
                        size += 1;
                    }
                    let v = acc / space.lambda(x, r).powf(alpha);
                    if v > best.0 {
                        best = (v, format!("x={x},r={r:e}"));
                    }
                }
                best
            })
            .collect();
        let items = per_center.into_iter().map(|(v, w)| (w, Some(v))).collect();
        ctx.push(report, "potential_ball", Statistic::from_ratios(items));
    }
    Ok(())
}

fn sharp(ctx: &Ctx, report: &mut SuiteReport) -> Result<()> {
    let space = &ctx.space;
    let alpha = ctx.config.alpha();
    let p = ctx.config.exponents.p;
    if ctx.entry.wants("sharp_ratio") {
        let st = ctx.per_member(|f| {
            let d = lp_norm(space, &sharp_maximal(space, f, alpha)?, p)?;
            if d == 0.0 {
                return Ok(None);
            }
            Ok(Some((
                lp_norm(space, &maximal_n(space, f)?, p)? / d,
                String::new(),
            )))
        })?;
        ctx.push(report, "sharp_ratio", st);
    }
    Ok(())
}

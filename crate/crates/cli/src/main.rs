use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use nhspace::czd::{cz_decompose, CzOptions};
use nhspace::fixtures::{make_space, FixtureSpec};
use nhspace::geometry::{coeff_k, coeff_k_tilde, coeff_k_tilde_alpha};
use nhspace::harness::{self, SuiteName};
use nhspace::kernels::{KernelMatrix, KernelSpec};
use nhspace::norms::{self, OrliczFn};
use nhspace::operators::{apply, multilinear_commutator, FunctionVec};
use nhspace::space::{Ball, SamplePlan, Space};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "nhspace",
    version,
    about = "Operators and norms on finite non-homogeneous metric measure spaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a space and print its fitted constants.
    CheckSpace {
        /// Space document or fixture description (JSON).
        file: PathBuf,
    },
    /// Apply the kernel operator, or a commutator when symbols are given.
    Apply {
        #[arg(long)]
        space: PathBuf,
        /// Kernel spec as inline JSON or a path to a JSON file.
        #[arg(long)]
        kernel: String,
        #[arg(long)]
        f: PathBuf,
        /// Commutator symbols, outermost last.
        #[arg(long)]
        b: Vec<PathBuf>,
    },
    /// Calderon-Zygmund decomposition of `f` at level `t`.
    Czd {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        f: PathBuf,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        t: f64,
        /// Selection constant; the space-dependent default when absent.
        #[arg(long)]
        gamma0: Option<f64>,
        /// Accept levels below the admissibility bound.
        #[arg(long)]
        no_level_bound: bool,
    },
    /// Evaluate a norm of `f`.
    Norm {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        f: PathBuf,
        #[arg(long, value_enum)]
        kind: NormKind,
        /// Lebesgue exponent for `lp` and `weak`.
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        /// Young function (inline JSON or file) for `orlicz`.
        #[arg(long)]
        phi: Option<String>,
        /// Dilation for `rbmo`.
        #[arg(long, default_value_t = 2.0)]
        rho: f64,
        /// Exponent of the exponential class for `osc`.
        #[arg(long, default_value_t = 1.0)]
        r: f64,
    },
    /// Evaluate a coefficient between nested balls given by center id and radius.
    Coeff {
        #[arg(long)]
        space: PathBuf,
        #[arg(long, value_enum)]
        kind: CoeffKind,
        #[arg(long)]
        inner_center: String,
        #[arg(long)]
        inner_radius: f64,
        #[arg(long)]
        outer_center: String,
        #[arg(long)]
        outer_radius: f64,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
    },
    /// Run one suite of a config.
    Suite {
        name: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run every suite of a config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum NormKind {
    Lp,
    Weak,
    Orlicz,
    Rbmo,
    Osc,
}

#[derive(Clone, Copy, ValueEnum)]
enum CoeffKind {
    #[value(name = "K")]
    K,
    #[value(name = "Ktilde")]
    KTilde,
    #[value(name = "Ktilde-alpha")]
    KTildeAlpha,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Inline JSON when the argument parses, otherwise a file path.
fn json_arg<T: serde::de::DeserializeOwned>(arg: &str) -> Result<T> {
    if let Ok(v) = serde_json::from_str(arg) {
        return Ok(v);
    }
    let text = read(Path::new(arg))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {arg}"))
}

fn load_space(path: &Path) -> Result<Space> {
    let text = read(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if value.get("points").is_some() {
        Ok(Space::from_json(&text)?)
    } else {
        let spec: FixtureSpec =
            serde_json::from_value(value).context("neither a space document nor a fixture")?;
        Ok(make_space(&spec)?)
    }
}

fn load_f(path: &Path, space: &Space) -> Result<FunctionVec> {
    Ok(FunctionVec::from_text(&read(path)?, space, None)?)
}

fn ball(space: &Space, center: &str, radius: f64) -> Result<Ball> {
    let index = match space.index_of(center) {
        Some(i) => i,
        None => center
            .parse()
            .with_context(|| format!("unknown point {center:?}"))?,
    };
    Ok(space.try_ball(index, radius)?)
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run_config(config: &Path, only: Option<SuiteName>, output: Option<&Path>) -> Result<ExitCode> {
    let outcome = harness::run(config, only, output)?;
    for path in &outcome.written {
        println!("wrote {}", path.display());
    }
    for suite in &outcome.report.suites {
        let failed = suite.trends.iter().filter(|t| !t.passed).count();
        println!(
            "{}: {} rows, {} trends ({} above limit)",
            suite.label,
            suite.rows.len(),
            suite.trends.len(),
            failed
        );
        for note in &suite.notes {
            println!("  note: {note}");
        }
    }
    for failure in outcome.report.hard_failures() {
        eprintln!("hard failure: {failure}");
    }
    let b = &outcome.baseline;
    println!("baselines: {} checked, {} recorded", b.checked, b.recorded);
    for e in &b.exceeded {
        eprintln!("baseline exceeded: {e}");
    }
    Ok(if outcome.success() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::CheckSpace { file } => {
            let space = load_space(&file)?;
            let plan = SamplePlan::default();
            print_json(&json!({
                "points": space.len(),
                "total_mass": space.total_mass(),
                "constants": space.constants(),
                "upper_doubling": space.check_upper_doubling(&plan),
                "geometric_doubling": space.check_geometric_doubling(&plan),
                "lambda_regularity": space.check_lambda_regularity(&plan),
                "weak_growth": space.check_weak_growth(&plan),
            }))?;
        }
        Command::Apply {
            space,
            kernel,
            f,
            b,
        } => {
            let space = load_space(&space)?;
            let spec: KernelSpec = json_arg(&kernel)?;
            let matrix = KernelMatrix::new(&spec, &space)?;
            let f = load_f(&f, &space)?;
            let out = if b.is_empty() {
                apply(&matrix, &space, &f)?
            } else {
                let symbols = b
                    .iter()
                    .map(|p| load_f(p, &space))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&[f64]> = symbols.iter().map(|s| &s[..]).collect();
                multilinear_commutator(&refs, &matrix, &space, &f)?
            };
            print!("{}", out.to_text());
        }
        Command::Czd {
            space,
            f,
            p,
            t,
            gamma0,
            no_level_bound,
        } => {
            let space = load_space(&space)?;
            let f = load_f(&f, &space)?;
            let options = CzOptions {
                gamma0,
                enforce_level_bound: !no_level_bound,
            };
            print_json(&cz_decompose(&space, &f, p, t, &options)?)?;
        }
        Command::Norm {
            space,
            f,
            kind,
            p,
            phi,
            rho,
            r,
        } => {
            let space = load_space(&space)?;
            let f = load_f(&f, &space)?;
            let value = match kind {
                NormKind::Lp => json!({ "lp": norms::lp_norm(&space, &f, p)? }),
                NormKind::Weak => json!({ "weak_lp": norms::weak_lp(&space, &f, p)? }),
                NormKind::Orlicz => {
                    let Some(phi) = phi else {
                        bail!("--phi is required for the orlicz norm")
                    };
                    let phi: OrliczFn = json_arg(&phi)?;
                    json!({ "luxemburg": norms::luxemburg_norm(&space, &f, &phi)? })
                }
                NormKind::Rbmo => serde_json::to_value(norms::rbmo_norm(&space, &f, rho)?)?,
                NormKind::Osc => serde_json::to_value(norms::osc_exp_norm(&space, &f, r)?)?,
            };
            print_json(&value)?;
        }
        Command::Coeff {
            space,
            kind,
            inner_center,
            inner_radius,
            outer_center,
            outer_radius,
            alpha,
        } => {
            let space = load_space(&space)?;
            let b = ball(&space, &inner_center, inner_radius)?;
            let s = ball(&space, &outer_center, outer_radius)?;
            let value = match kind {
                CoeffKind::K => coeff_k(&space, &b, &s)?,
                CoeffKind::KTilde => coeff_k_tilde(&space, &b, &s)?,
                CoeffKind::KTildeAlpha => coeff_k_tilde_alpha(&space, &b, &s, alpha)?,
            };
            print_json(&value)?;
        }
        Command::Suite {
            name,
            config,
            output,
        } => {
            let name = SuiteName::parse(&name)?;
            return run_config(&config, Some(name), output.as_deref());
        }
        Command::Run { config, output } => return run_config(&config, None, output.as_deref()),
    }
    Ok(ExitCode::SUCCESS)
}

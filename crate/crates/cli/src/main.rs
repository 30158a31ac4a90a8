//! Command-line driver: model and graph loading, density curves, Weyl-disc
//! tables, fourth-moment Monte Carlo runs, shell partition reports and the
//! verification suites. All outputs are deterministic CSV.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shellspec::boundary::EvalPolicy;
use shellspec::graph::{
    channel_decomposition, extract_shell_operator, group_shells, validate_partition,
    WeightedGraph,
};
use shellspec::models::{build_model, fourth_moment_run, ModelSpec};
use shellspec::numerics::numerical_rank;
use shellspec::verify::Suite;
use shellspec::{c64, C64, CVector, TolerancePolicy};

#[derive(Parser)]
#[command(
    name = "shellspec",
    about = "Transfer-matrix spectral analysis on shell-decomposed graphs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Path to a model spec JSON file.
    #[arg(long, conflicts_with = "spec")]
    model: Option<PathBuf>,
    /// Inline model spec JSON.
    #[arg(long)]
    spec: Option<String>,
}

#[derive(Args, Clone, Copy)]
struct PolicyArgs {
    /// Relative singular-value cutoff for rank decisions.
    #[arg(long, default_value_t = 1e-12)]
    rank_tol: f64,
    /// Condition-number ceiling for suitability checks.
    #[arg(long, default_value_t = 1e12)]
    cond_max: f64,
    /// Relative eigenvalue exclusion radius.
    #[arg(long, default_value_t = 1e-10)]
    eig_tol: f64,
    /// Disable the real-axis nudge fallback at singular parameters.
    #[arg(long)]
    no_nudge: bool,
}

impl PolicyArgs {
    fn eval_policy(&self) -> Result<EvalPolicy, CliError> {
        let tol = TolerancePolicy {
            rank_rel_tol: self.rank_tol,
            suitability_cond_max: self.cond_max,
            eig_exclusion_tol: self.eig_tol,
        };
        tol.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(EvalPolicy {
            tol,
            nudge_rel: 1e-9,
            allow_nudge: !self.no_nudge,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Absolutely continuous density over a parameter grid, with the
    /// averaged transform, Dirichlet minimum and point masses.
    Density {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, allow_hyphen_values = true)]
        lmin: f64,
        #[arg(long, allow_hyphen_values = true)]
        lmax: f64,
        #[arg(long)]
        points: usize,
        /// Truncation depth n of the boundary data R_{0,n}.
        #[arg(long)]
        depth: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        policy: PolicyArgs,
    },
    /// Weyl-disc table across depths at one upper-half-plane parameter.
    Weyl {
        #[command(flatten)]
        model: ModelArgs,
        /// Spectral parameter "a+bi" with Im > 0.
        #[arg(long, allow_hyphen_values = true)]
        z: String,
        #[arg(long)]
        depth: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        policy: PolicyArgs,
    },
    /// Fourth-moment Monte Carlo of the conjugated transfer chain.
    Mc {
        #[command(flatten)]
        model: ModelArgs,
        /// Comma-separated parameter list, e.g. "-1,0,1".
        #[arg(long, allow_hyphen_values = true)]
        lambdas: String,
        /// Record every k-th depth up to the spec depth.
        #[arg(long, default_value_t = 10)]
        every: usize,
        #[arg(long, default_value_t = 64)]
        trials: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a verification suite and exit non-zero on any failed property.
    Verify {
        /// all | algebra | weyl | spectral | models
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Shell-partition report for a graph file: sizes, connection ranks and
    /// the non-decreasing-rank grouping.
    Partition {
        /// Path to a graph JSON file.
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 0)]
        root: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    Config(String),
    Model(String),
    VerifyFailed,
}

impl CliError {
    fn exit(self) -> ExitCode {
        match self {
            CliError::VerifyFailed => ExitCode::from(1),
            CliError::Config(msg) => {
                eprintln!("configuration error: {msg}");
                ExitCode::from(2)
            }
            CliError::Model(msg) => {
                eprintln!("model error: {msg}");
                ExitCode::from(3)
            }
        }
    }
}

fn parse_complex(s: &str) -> Result<C64, CliError> {
    let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || CliError::Config(format!("cannot parse complex number '{s}' (expected a+bi)"));
    if compact.is_empty() {
        return Err(bad());
    }
    if !compact.ends_with('i') {
        return compact.parse::<f64>().map(|re| c64(re, 0.0)).map_err(|_| bad());
    }
    let body = &compact[..compact.len() - 1];
    // split at the last sign that is not an exponent sign and not leading
    let mut split = None;
    for (idx, ch) in body.char_indices().skip(1) {
        if (ch == '+' || ch == '-') && !matches!(body.as_bytes()[idx - 1], b'e' | b'E') {
            split = Some(idx);
        }
    }
    let (re_str, im_str) = match split {
        Some(idx) => (&body[..idx], &body[idx..]),
        None => ("0", body),
    };
    let im = match im_str {
        "" | "+" => 1.0,
        "-" => -1.0,
        other => other.parse::<f64>().map_err(|_| bad())?,
    };
    let re = if re_str.is_empty() {
        0.0
    } else {
        re_str.parse::<f64>().map_err(|_| bad())?
    };
    Ok(c64(re, im))
}

fn load_spec(args: &ModelArgs) -> Result<ModelSpec, CliError> {
    let text = match (&args.model, &args.spec) {
        (Some(path), None) => std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?,
        (None, Some(inline)) => inline.clone(),
        _ => {
            return Err(CliError::Config(
                "exactly one of --model or --spec is required".into(),
            ))
        }
    };
    let spec = ModelSpec::from_json(&text).map_err(|e| CliError::Config(e.to_string()))?;
    for warning in spec.validate().map_err(|e| CliError::Model(e.to_string()))? {
        eprintln!("warning: {warning}");
    }
    Ok(spec)
}

fn write_file(path: &PathBuf, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Model(format!("cannot write {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Density {
            model,
            lmin,
            lmax,
            points,
            depth,
            out,
            policy,
        } => {
            if points < 2 || !(lmin < lmax) {
                return Err(CliError::Config(
                    "need points >= 2 and lmin < lmax".into(),
                ));
            }
            let spec = load_spec(&model)?;
            if depth > spec.depth {
                return Err(CliError::Config(format!(
                    "depth {depth} exceeds the spec depth {}",
                    spec.depth
                )));
            }
            let eval = policy.eval_policy()?;
            let (so, cd) = build_model(&spec).map_err(|e| CliError::Model(e.to_string()))?;
            let grid: Vec<f64> = (0..points)
                .map(|k| lmin + (lmax - lmin) * k as f64 / (points - 1) as f64)
                .collect();
            let est = shellspec::spectral::density_curve(&so, &cd, &grid, depth, &eval)
                .map_err(|e| CliError::Model(e.to_string()))?;
            write_file(&out, &shellspec::report::density_csv(&est))?;
            let masses_path = out.with_extension(format!(
                "{}masses.csv",
                out.extension()
                    .map(|e| format!("{}.", e.to_string_lossy()))
                    .unwrap_or_default()
            ));
            write_file(&masses_path, &shellspec::report::masses_csv(&est.point_masses))?;
            println!(
                "density: {} rows -> {} (+ {})",
                est.grid.len(),
                out.display(),
                masses_path.display()
            );
            Ok(())
        }
        Command::Weyl {
            model,
            z,
            depth,
            out,
            policy,
        } => {
            let z = parse_complex(&z)?;
            if !(z.im > 0.0) {
                return Err(CliError::Config("weyl requires Im z > 0".into()));
            }
            let spec = load_spec(&model)?;
            if depth > spec.depth {
                return Err(CliError::Config(format!(
                    "depth {depth} exceeds the spec depth {}",
                    spec.depth
                )));
            }
            let eval = policy.eval_policy()?;
            let (so, cd) = build_model(&spec).map_err(|e| CliError::Model(e.to_string()))?;
            let depths: Vec<usize> = (0..=depth).collect();
            let rows = shellspec::weyl::limit_point_diagnostic(&so, &cd, z, &depths, &eval)
                .map_err(|e| CliError::Model(e.to_string()))?;
            write_file(&out, &shellspec::report::weyl_csv(&rows))?;
            println!("weyl: {} rows -> {}", rows.len(), out.display());
            Ok(())
        }
        Command::Mc {
            model,
            lambdas,
            every,
            trials,
            out,
        } => {
            if every == 0 {
                return Err(CliError::Config("--every must be positive".into()));
            }
            let lambdas: Vec<f64> = lambdas
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Config(format!("bad --lambdas: {e}")))?;
            if lambdas.is_empty() {
                return Err(CliError::Config("--lambdas must be non-empty".into()));
            }
            let spec = load_spec(&model)?;
            let depths: Vec<usize> = (1..=spec.depth / every).map(|k| k * every).collect();
            if depths.is_empty() {
                return Err(CliError::Config(
                    "no recordable depths: increase depth or lower --every".into(),
                ));
            }
            let res = fourth_moment_run(
                &spec,
                &lambdas,
                &depths,
                trials,
                (c64(1.0, 0.0), c64(0.0, 0.0)),
            )
            .map_err(|e| CliError::Model(e.to_string()))?;
            write_file(&out, &shellspec::report::mc_csv(&res))?;
            println!(
                "mc: {} lambdas x {} depths, {} trials -> {}",
                res.lambdas.len(),
                res.depths.len(),
                res.trials,
                out.display()
            );
            Ok(())
        }
        Command::Verify { suite } => {
            let suite: Suite = suite.parse().map_err(|e: shellspec::Error| {
                CliError::Config(e.to_string())
            })?;
            let results = shellspec::verify::run_suite(suite);
            let mut all_pass = true;
            for r in &results {
                println!("{}", r.line());
                all_pass &= r.passed;
            }
            if all_pass {
                Ok(())
            } else {
                Err(CliError::VerifyFailed)
            }
        }
        Command::Partition { graph, root, out } => {
            let text = std::fs::read_to_string(&graph)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", graph.display())))?;
            let g = WeightedGraph::from_json(&text).map_err(|e| CliError::Config(e.to_string()))?;
            let p = g
                .bfs_partition(root)
                .map_err(|e| CliError::Model(e.to_string()))?;
            let violations =
                validate_partition(&g, &p).map_err(|e| CliError::Model(e.to_string()))?;
            if !violations.is_empty() {
                return Err(CliError::Model(format!(
                    "partition violates the shell condition on {} edges",
                    violations.len()
                )));
            }
            let so = extract_shell_operator(&g, &p).map_err(|e| CliError::Model(e.to_string()))?;
            let tol = TolerancePolicy::default();
            let ranks: Vec<usize> = so
                .connections
                .iter()
                .map(|w| {
                    numerical_rank(
                        w.clone().svd(false, false).singular_values.as_slice(),
                        tol.rank_rel_tol,
                    )
                })
                .collect();
            let (grouped, blocks) =
                group_shells(&so, &tol).map_err(|e| CliError::Model(e.to_string()))?;
            let root_vec = CVector::from_element(so.potentials[0].nrows(), c64(1.0, 0.0));
            let a2_summary = match channel_decomposition(&so, &root_vec, &tol) {
                Ok(cd) => {
                    let reports = shellspec::graph::check_a2(&so, &cd, 4, 1, &tol);
                    let deficient: Vec<usize> = reports
                        .iter()
                        .filter(|r| !r.any_full_rank)
                        .map(|r| r.shell)
                        .collect();
                    if deficient.is_empty() {
                        "all shells generically full rank".to_string()
                    } else {
                        format!("rank-deficient shells: {deficient:?}")
                    }
                }
                Err(e) => format!("channel decomposition failed: {e}"),
            };
            write_file(
                &out,
                &shellspec::report::partition_csv(&p.sizes(), &ranks, &blocks),
            )?;
            println!(
                "partition: {} shells -> {} blocks ({} after grouping); {a2_summary}; -> {}",
                p.shell_count(),
                blocks.len(),
                grouped.potentials.len(),
                out.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("SHELLSPEC_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("configuration error: SHELLSPEC_THREADS must be a positive integer");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.exit(),
    }
}

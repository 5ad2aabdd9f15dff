use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ticketforge::activation::Activation;
use ticketforge::budget::{self, NormMethod, WidthInputs, WidthMode};
use ticketforge::construct::{self, ConstructConfig};
use ticketforge::io;
use ticketforge::manifest::Mode;
use ticketforge::subsetsum::{self, Distribution, Experiment, BENCH_CSV_HEADER};
use ticketforge::verify::{self, COMPARISON_CSV_HEADER};
use ticketforge::Error;

#[derive(Parser)]
#[command(name = "ticketforge", version, about = "Build strong lottery tickets by pruning random networks")]
struct Cli {
    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Json)]
    format: OutFormat,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutFormat {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random target network.
    GenTarget {
        /// Layer widths, e.g. 4,8,8,2.
        #[arg(long, value_delimiter = ',', required = true)]
        arch: Vec<usize>,
        #[arg(long, default_value = "relu")]
        activation: Activation,
        /// Activation of the output layer (defaults to --activation).
        #[arg(long)]
        output_activation: Option<Activation>,
        #[arg(long, default_value_t = 0.0)]
        sparsity: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Prune a random source network into a ticket approximating a target.
    Construct {
        #[command(flatten)]
        build: BuildArgs,
        #[arg(long, default_value = "l+1")]
        mode: Mode,
        /// Stop at the first block that cannot be solved.
        #[arg(long)]
        strict: bool,
    },
    /// Audit a ticket and measure its error against the target.
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        ticket: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Error threshold; defaults to the ε the ticket was built for.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Per-layer parameter tolerances of a target.
    Budget {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        /// Estimate norms from this many samples instead of interval bounds.
        #[arg(long)]
        sampled: Option<usize>,
    },
    /// Source widths required by the existence bounds.
    Widths {
        /// Target model; alternatively give --arch.
        #[arg(long, conflicts_with = "arch")]
        model: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        arch: Option<Vec<usize>>,
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long = "C", default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
        /// two_for_one, one_for_one or full.
        #[arg(long, default_value = "full")]
        mode: WidthMode,
    },
    /// Monte Carlo success rates of random subset sum.
    BenchSubsetsum {
        #[arg(long, default_value = "uniform")]
        dist: Distribution,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.01,0.001")]
        eps_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "10,15,20")]
        m: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        max_subset_size: Option<usize>,
        /// Also report the smallest m reaching this success rate.
        #[arg(long)]
        min_rate: Option<f64>,
    },
    /// Build both constructions for one target and compare them.
    Compare {
        #[command(flatten)]
        build: BuildArgs,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
    },
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Pool size of one-for-one blocks.
    #[arg(long, default_value_t = 10)]
    pool: usize,
    /// Pool size of two-for-one blocks.
    #[arg(long, default_value_t = 15)]
    pool2: usize,
    #[arg(long, default_value_t = 3)]
    retries: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Activation of the first source layer in l+1 mode.
    #[arg(long)]
    first_activation: Option<Activation>,
    /// Mirror slab neurons in pairs for every activation.
    #[arg(long)]
    looks_linear: bool,
}

impl BuildArgs {
    fn config(&self, strict: bool) -> ConstructConfig {
        ConstructConfig {
            eps: self.eps,
            delta: self.delta,
            pool: self.pool,
            pool_two_for_one: self.pool2,
            retries: self.retries,
            seed: self.seed,
            first_activation: self.first_activation,
            looks_linear: self.looks_linear,
            strict,
            ..ConstructConfig::default()
        }
    }
}

/// Output text plus whether the run should exit with the failure code.
struct Outcome {
    text: String,
    failed: bool,
}

impl Outcome {
    fn ok(text: String) -> Self {
        Self { text, failed: false }
    }
}

fn csv_only_for_reports(format: OutFormat, what: &str) -> ticketforge::Result<()> {
    if format == OutFormat::Csv {
        return Err(Error::Config(format!("{what} is only written as JSON")));
    }
    Ok(())
}

fn run(cli: &Cli) -> ticketforge::Result<Outcome> {
    let csv = cli.format == OutFormat::Csv;
    match &cli.cmd {
        Command::GenTarget { arch, activation, output_activation, sparsity, seed } => {
            csv_only_for_reports(cli.format, "a model")?;
            let net = io::gen_target(arch, *activation, *output_activation, *sparsity, *seed)?;
            Ok(Outcome::ok(io::model_to_string(&net)?))
        }
        Command::Construct { build, mode, strict } => {
            csv_only_for_reports(cli.format, "a ticket")?;
            let target = io::load_model(&build.model)?;
            let ticket = construct::construct(&target, *mode, &build.config(*strict))?;
            let man = ticket.manifest.as_ref().expect("constructed tickets carry a manifest");
            for b in man.failed_blocks() {
                eprintln!("unsolved block: {} (residual {:e} > {:e})", b.coordinates(), b.residual, b.tolerance);
            }
            Ok(Outcome { text: io::ticket_to_string(&ticket)?, failed: !man.all_achieved() })
        }
        Command::Verify { model, ticket, samples, seed, eps } => {
            let target = io::load_model(model)?;
            let ticket = io::load_ticket(ticket)?;
            let report = verify::verify(&target, &ticket, *samples, *seed)?;
            let limit = eps.or(ticket.manifest.as_ref().map(|m| m.eps)).unwrap_or(f64::INFINITY);
            let error = report.sup_error.unwrap_or(0.0);
            let failed = report.failed > 0 || !report.clean() || error > limit;
            let text = if csv {
                format!(
                    "sup_error,samples,params,max_width,depth,attempted,achieved,failed,flags,source_reproduced,seed\n{:e},{},{},{},{},{},{},{},{},{},{}\n",
                    error,
                    report.samples,
                    report.stats.param_count,
                    report.stats.max_width,
                    report.stats.depth,
                    report.attempted,
                    report.achieved,
                    report.failed,
                    report.flags.len(),
                    report.source_reproduced,
                    report.seed
                )
            } else {
                io::canonical(&report)? + "\n"
            };
            Ok(Outcome { text, failed })
        }
        Command::Budget { model, eps, sampled } => {
            let target = io::load_model(model)?;
            let method = match sampled {
                Some(n) => NormMethod::Sampled { samples: *n, seed: 0 },
                None => NormMethod::Interval,
            };
            let b = budget::error_budget(&target, *eps, method)?;
            if !b.norms.sound {
                eprintln!("warning: sampled norms are not guaranteed bounds; tolerances may be unsound");
            }
            let text = if csv {
                let mut s = String::from("layer,eps_l,m_prev,w_inf\n");
                for (l, e) in b.layer_eps.iter().enumerate() {
                    s += &format!("{},{:e},{:e},{:e}\n", l + 1, e, b.norms.m[l], b.norms.w_inf[l]);
                }
                s
            } else {
                io::canonical(&b)? + "\n"
            };
            b.check()?;
            Ok(Outcome::ok(text))
        }
        Command::Widths { model, arch, eps, delta, c, gamma, mode } => {
            let mut inp = match (model, arch) {
                (Some(path), _) => {
                    let target = io::load_model(path)?;
                    let b = budget::error_budget(&target, *eps, NormMethod::Interval)?;
                    let mut inp = WidthInputs::new(target.arch(), *eps, *delta);
                    inp.lipschitz = b.lipschitz;
                    inp.m_bound = b.norms.m.iter().copied().fold(1.0, f64::max);
                    inp.nonzero = Some(target.nonzero_count());
                    inp.layer_eps = Some(b.layer_eps);
                    inp
                }
                (None, Some(arch)) => WidthInputs::new(arch.clone(), *eps, *delta),
                (None, None) => return Err(Error::Config("give --model or --arch".into())),
            };
            inp.c = *c;
            inp.gamma = *gamma;
            let r = budget::width_bounds(&inp, *mode)?;
            let text = if csv {
                let mut s = String::from("layer,width,raw\n");
                for (l, (w, raw)) in r.widths.iter().zip(&r.raw).enumerate() {
                    s += &format!("{},{},{:e}\n", l + 1, w, raw);
                }
                s
            } else {
                io::canonical(&r)? + "\n"
            };
            Ok(Outcome::ok(text))
        }
        Command::BenchSubsetsum { dist, eps_grid, m, trials, seed, max_subset_size, min_rate } => {
            let mut exp = Experiment::new(*dist, *trials, *seed);
            exp.max_subset_size = *max_subset_size;
            let rows = subsetsum::bench(&exp, m, eps_grid)?;
            let minimal = match min_rate {
                Some(rate) => eps_grid
                    .iter()
                    .map(|&e| Ok(json!({"eps": e, "min_m": exp.min_m_for(e, *rate)?})))
                    .collect::<ticketforge::Result<Vec<_>>>()?,
                None => Vec::new(),
            };
            let text = if csv {
                let mut s = format!("{BENCH_CSV_HEADER}\n");
                for r in &rows {
                    s += &r.csv();
                    s.push('\n');
                }
                s
            } else {
                io::to_canonical_string(&json!({"rows": rows, "min_m": minimal}))? + "\n"
            };
            Ok(Outcome::ok(text))
        }
        Command::Compare { build, samples } => {
            let target = io::load_model(&build.model)?;
            let rows = verify::compare_modes(&target, &build.config(false), *samples)?;
            let failed = rows.iter().any(|r| r.failed_blocks > 0);
            let text = if csv {
                let mut s = format!("{COMPARISON_CSV_HEADER}\n");
                for r in &rows {
                    s += &r.csv();
                    s.push('\n');
                }
                s
            } else {
                io::canonical(&rows)? + "\n"
            };
            Ok(Outcome { text, failed })
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::BlockFailure(_) | Error::CapacityExhausted(_) => 2,
        Error::BudgetUnderflow { .. } => 3,
        Error::Io(_) | Error::Json(_) | Error::Format(_) => 4,
        _ => 1,
    }
}

fn write_out(path: Option<&Path>, text: &str) -> ticketforge::Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = run(&cli).and_then(|o| {
        write_out(cli.out.as_deref(), &o.text)?;
        Ok(o.failed)
    });
    match result {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

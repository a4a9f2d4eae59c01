use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use peerenc_core::config::{Format, RunConfig};
use peerenc_core::design::{run_design, ExperimentData};
use peerenc_core::estimands::{estimand_report, Theorem};
use peerenc_core::estimators::estimate;
use peerenc_core::montecarlo::{replicate, verify_theorems, with_threads};
use peerenc_core::population::{inspect, validate, Population};

/// Exit status when a verification check fails.
const EXIT_CHECK_FAILED: u8 = 1;
/// Exit status for invalid input or runtime errors.
const EXIT_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "peerenc", version, about = "Peer encouragement design simulator and estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a population from the config's DGP and write it as JSON.
    Generate(Common),
    /// Evaluate every exact estimand on a population.
    Estimands(Common),
    /// Replicate the design and summarize the estimators.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write replicate 0's realized data as CSV.
        #[arg(long, value_name = "PATH")]
        data_out: Option<PathBuf>,
    },
    /// Check the identification theorems exactly and by Monte Carlo.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Theorems expected to fail (negative tests).
        #[arg(long, value_enum, num_args = 1.., value_name = "THM")]
        expect_fail: Vec<ThmArg>,
    },
    /// Compute the estimators on realized data in CSV form.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// CSV with columns block_id,S,unit_id,Z,D,Y.
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Population JSON; generated from the config's DGP when absent.
    #[arg(long, value_name = "PATH")]
    pop: Option<PathBuf>,
    /// Overrides the config seed (and any explicit Monte Carlo seed).
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, env = "PEERENC_THREADS", value_name = "N")]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
    Text,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ThmArg {
    Thm1,
    Thm2,
    Thm3,
}

impl From<ThmArg> for Theorem {
    fn from(t: ThmArg) -> Self {
        match t {
            ThmArg::Thm1 => Theorem::Thm1,
            ThmArg::Thm2 => Theorem::Thm2,
            ThmArg::Thm3 => Theorem::Thm3,
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    format: Format,
    out: Option<PathBuf>,
    threads: Option<usize>,
    pop_path: Option<PathBuf>,
}

impl Ctx {
    fn load(c: &Common) -> Result<Self> {
        let text = fs::read_to_string(&c.config).with_context(|| format!("reading config {}", c.config.display()))?;
        let mut cfg = RunConfig::from_json(&text).with_context(|| format!("in config {}", c.config.display()))?;
        if let Some(seed) = c.seed {
            cfg.seed = seed;
            cfg.mc.seed = None;
        }
        let format = match c.format {
            Some(FormatArg::Json) => Format::Json,
            Some(FormatArg::Csv) => Format::Csv,
            Some(FormatArg::Text) => Format::Text,
            None => cfg.output.format,
        };
        let out = c.out.clone().or_else(|| cfg.output.path.clone());
        Ok(Self {
            cfg,
            format,
            out,
            threads: c.threads,
            pop_path: c.pop.clone(),
        })
    }

    fn population(&self) -> Result<Population> {
        match &self.pop_path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading population {}", p.display()))?;
                let pop = Population::from_json(&text).with_context(|| format!("in population {}", p.display()))?;
                validate(&pop)?;
                Ok(pop)
            }
            None => Ok(self.cfg.build_population()?),
        }
    }

    fn emit(&self, body: &str) -> Result<()> {
        write_output(self.out.as_deref(), body)
    }
}

fn write_output(path: Option<&Path>, body: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn with_newline(mut s: String) -> String {
    if !s.ends_with('\n') {
        s.push('\n');
    }
    s
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Generate(c) => {
            let ctx = Ctx::load(&c)?;
            let pop = ctx.cfg.build_population()?;
            eprint!("{}", inspect(&pop).summary());
            ctx.emit(&with_newline(pop.to_json()?))?;
            Ok(0)
        }
        Command::Estimands(c) => {
            let ctx = Ctx::load(&c)?;
            let pop = ctx.population()?;
            let d = ctx.cfg.design_config()?;
            let engine = ctx.cfg.engine();
            let report = with_threads(ctx.threads, || estimand_report(&engine, &pop, &d.mech_a, &d.mech_b))??;
            ctx.emit(&with_newline(match ctx.format {
                Format::Json => report.to_json()?,
                Format::Csv => report.to_csv()?,
                Format::Text => report.to_text(),
            }))?;
            Ok(0)
        }
        Command::Simulate { common, data_out } => {
            let ctx = Ctx::load(&common)?;
            let pop = ctx.population()?;
            let d = ctx.cfg.design_config()?;
            if let Some(path) = data_out {
                let data = run_design(&pop, &d)?;
                write_output(Some(&path), &data.to_csv()?)?;
            }
            let engine = ctx.cfg.engine();
            let r = ctx.cfg.mc.replications;
            let summary = with_threads(ctx.threads, || replicate(&engine, &pop, &d, r))??;
            ctx.emit(&with_newline(match ctx.format {
                Format::Json => summary.to_json()?,
                Format::Csv => summary.to_csv()?,
                Format::Text => summary.to_text(),
            }))?;
            Ok(0)
        }
        Command::Verify { common, expect_fail } => {
            let ctx = Ctx::load(&common)?;
            let pop = ctx.population()?;
            let d = ctx.cfg.design_config()?;
            let engine = ctx.cfg.engine();
            let r = ctx.cfg.mc.replications;
            let report = with_threads(ctx.threads, || verify_theorems(&engine, &pop, &d, r))??;
            let expect: Vec<Theorem> = expect_fail.into_iter().map(Theorem::from).collect();
            ctx.emit(&with_newline(match ctx.format {
                Format::Json => report.to_json()?,
                Format::Csv => report.to_csv()?,
                Format::Text => report.to_text(&expect),
            }))?;
            let gate = report.gate(&expect);
            for g in gate.iter().filter(|g| !g.ok) {
                eprintln!("FAIL {}: {}", g.check, g.detail);
            }
            Ok(if gate.iter().all(|g| g.ok) { 0 } else { EXIT_CHECK_FAILED })
        }
        Command::Analyze { common, data } => {
            let ctx = Ctx::load(&common)?;
            let text = fs::read_to_string(&data).with_context(|| format!("reading {}", data.display()))?;
            let data = ExperimentData::from_csv(&text).with_context(|| format!("in {}", data.display()))?;
            let d = ctx.cfg.design_config()?;
            let report = estimate(&data, &d.mech_a, &d.mech_b)?;
            ctx.emit(&with_newline(match ctx.format {
                Format::Json => report.to_json()?,
                Format::Csv => report.to_csv()?,
                Format::Text => report.to_text(),
            }))?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dsco_cli::pipeline::{self, Workspace};
use dsco_cli::{exit_code, RunConfig};
use dsco_core::Result;

#[derive(Parser)]
#[command(
    name = "dsco",
    version,
    about = "Concentrate a labeled dataset into a few surrogate samples per class"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set inner_steps=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, value_parser = ["data_accessible", "data_free"])]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ipc: Option<usize>,
    /// Output root; defaults to the config value, then $DSCO_OUTPUT_ROOT.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

impl Common {
    fn load(&self) -> Result<(RunConfig, Workspace)> {
        let mut overrides = self.overrides.clone();
        if let Some(m) = &self.mode {
            overrides.push(format!("mode=\"{m}\""));
        }
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(i) = self.ipc {
            overrides.push(format!("ipc={i}"));
        }
        let cfg = RunConfig::load(self.config.as_deref(), &overrides)?;
        let root = self.output.clone().unwrap_or_else(|| cfg.output_root());
        Ok((cfg, Workspace::new(root, self.force)))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the class-conditional denoiser and the teacher classifier.
    TrainDiffusion(Common),
    /// Synthesize surrogates and dope them when recognition stalls.
    Concentrate(Common),
    /// Fill the synthetic set up to `ipc` with confusing real samples.
    Dope(Common),
    /// Downstream accuracy, MMD and group distances for a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Dataset to evaluate; defaults to concentrated.dsco.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Occupancy of i.i.d. draws versus the ideal one-per-cell layout.
    BiasDemo {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 500)]
        n_exp: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [10, 50, 100])]
        sizes: Vec<usize>,
    },
    /// Print the effective configuration as TOML.
    PrintConfig(Common),
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainDiffusion(c) => {
            let (cfg, ws) = c.load()?;
            let out = pipeline::cmd_train_diffusion(cfg, &ws)?;
            println!("holdout eps-MSE {:.4}", out.holdout_mse);
            println!("teacher train accuracy {:.4}", out.teacher_accuracy);
        }
        Command::Concentrate(c) => {
            let (cfg, ws) = c.load()?;
            let out = pipeline::cmd_concentrate(cfg, &ws)?;
            match out.trigger {
                Some(t) => println!(
                    "dope trigger fired between {} and {} samples (gain {:.3})",
                    t.from, t.to, t.gain
                ),
                None => println!("dope trigger did not fire"),
            }
            println!(
                "wrote {} samples ({} synthetic, {} doped) to {}",
                out.dataset.len(),
                out.dataset.n_synthetic(),
                out.dataset.doped_indices().len(),
                ws.path(pipeline::CONCENTRATED_FILE).display()
            );
        }
        Command::Dope(c) => {
            let (cfg, ws) = c.load()?;
            let out = pipeline::cmd_dope(cfg, &ws)?;
            println!(
                "wrote {} samples ({} doped) to {}",
                out.len(),
                out.doped_indices().len(),
                ws.path(pipeline::DOPED_FILE).display()
            );
        }
        Command::Eval { common, dataset } => {
            let (cfg, ws) = common.load()?;
            let out = pipeline::cmd_eval(cfg, &ws, dataset.as_deref())?;
            for m in &out.metrics {
                println!("{}", m.to_csv());
            }
        }
        Command::BiasDemo {
            common,
            n_exp,
            sizes,
        } => {
            let (cfg, ws) = common.load()?;
            print!("{}", pipeline::cmd_bias_demo(&ws, n_exp, &sizes, cfg.seed)?);
        }
        Command::PrintConfig(c) => {
            let (cfg, _) = c.load()?;
            print!("{}", cfg.to_toml()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

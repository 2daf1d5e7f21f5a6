use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use interflow::harness::{
    depth_sweep, mean_weight_table, parse_config, read_weight_dump, repeat_and_summarize, run_experiment,
    ExperimentSpec,
};
use interflow::Error;

#[derive(Parser)]
#[command(name = "interflow", version, about = "Train and inspect Interflow models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write metrics.csv, weights.json and checkpoint.bin.
    Train(Common),
    /// Train plain backbones of several depths and write depth_sweep.csv.
    SweepDepth {
        #[command(flatten)]
        common: Common,
        /// Inclusive range `a..b` or a comma-separated list.
        #[arg(long, default_value = "4..13")]
        depths: String,
    },
    /// Repeat a run with consecutive seeds and write summary.csv.
    Repeat {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 30)]
        n: usize,
        /// 1-based run numbers to leave out of the extra summary rows.
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<usize>,
    },
    /// Average the weights.json of one or more runs into a branch × class table.
    WeightDump {
        /// weights.json files or run directories containing one.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    scale: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Any other config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn spec(&self) -> interflow::Result<ExperimentSpec> {
        let text = match &self.config {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::Io {
                context: format!("reading {}", p.display()),
                source: e,
            })?,
            None => String::new(),
        };
        let mut overrides = Vec::new();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("--set expects key=value, got {kv:?}")))?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        let named = [
            ("method", &self.method),
            ("dataset", &self.dataset),
            ("epochs", &self.epochs),
            ("seed", &self.seed),
            ("scale", &self.scale),
            ("output_dir", &self.out),
        ];
        for (k, v) in named {
            if let Some(v) = v {
                overrides.push((k.to_string(), v.clone()));
            }
        }
        parse_config(&text, &overrides)
    }
}

fn parse_depths(s: &str) -> interflow::Result<Vec<usize>> {
    let bad = || Error::InvalidArgument(format!("bad --depths {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if a == 0 || a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|d| d.trim().parse().map_err(|_| bad())).collect()
}

fn weights_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("weights.json")
    } else {
        p.to_path_buf()
    }
}

fn run(cli: Cli) -> interflow::Result<()> {
    match cli.command {
        Command::Train(common) => {
            let spec = common.spec()?;
            let record = run_experiment(&spec)?;
            println!(
                "{} on {}: test accuracy {} after {} epochs ({})",
                spec.method,
                spec.dataset,
                record.final_test_acc(),
                record.per_epoch.len(),
                spec.output_dir.display()
            );
        }
        Command::SweepDepth { common, depths } => {
            let spec = common.spec()?;
            let table = depth_sweep(&spec, &parse_depths(&depths)?)?;
            println!("depth,test_accuracy");
            for (d, acc) in table {
                println!("{d},{acc}");
            }
        }
        Command::Repeat { common, n, exclude } => {
            let spec = common.spec()?;
            let (_, table) = repeat_and_summarize(&spec, n, &exclude)?;
            print!("{table}");
        }
        Command::WeightDump { paths } => {
            let dumps = paths
                .iter()
                .map(|p| read_weight_dump(&weights_path(p)))
                .collect::<interflow::Result<Vec<_>>>()?;
            print!("{}", mean_weight_table(&dumps)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::TrainingAborted { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

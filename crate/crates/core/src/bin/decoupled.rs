use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use decoupled_asr::cli;
use decoupled_asr::config::{Command, RunConfig, KEYS};

#[derive(Parser)]
#[command(name = "decoupled", version, about = "Decoupled ASR with a replaceable internal LM")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable. Any config key also works as `--key value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// `--key value` pairs for config keys.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true)]
    rest: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the two-domain benchmark.
    GenData(Common),
    /// Train a source LM or fine-tune one on target text.
    TrainLm(Common),
    /// Train an AED or transducer model.
    TrainAsr(Common),
    /// Decode a dataset into a hypothesis TSV.
    Decode(Common),
    /// Score hypotheses, optionally against a second system.
    Score(Common),
    /// Run the full adaptation experiment.
    Experiment(Common),
    /// List config keys and defaults.
    Keys,
}

fn split_set(kv: &str) -> Result<(String, String), String> {
    let (k, v) = kv.split_once('=').ok_or_else(|| format!("--set expects KEY=VALUE, got '{kv}'"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Config file and ordered overrides; `--set` and `--config` may also follow `--key value` pairs.
fn overrides(c: &Common) -> Result<(Option<PathBuf>, Vec<(String, String)>), String> {
    let mut config = c.config.clone();
    let mut out = c.set.iter().map(|kv| split_set(kv)).collect::<Result<Vec<_>, _>>()?;
    let mut it = c.rest.iter();
    while let Some(flag) = it.next() {
        let key = flag
            .strip_prefix("--")
            .ok_or_else(|| format!("unexpected argument '{flag}'"))?
            .replace('-', "_");
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| format!("--{key} needs a value"))?;
                (key, v.clone())
            }
        };
        match key.as_str() {
            "set" => out.push(split_set(&value)?),
            "config" => config = Some(PathBuf::from(value)),
            _ => out.push((key, value)),
        }
    }
    Ok((config, out))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Cli::parse();
    let (command, common) = match &args.cmd {
        Cmd::GenData(c) => (Command::GenData, c),
        Cmd::TrainLm(c) => (Command::TrainLm, c),
        Cmd::TrainAsr(c) => (Command::TrainAsr, c),
        Cmd::Decode(c) => (Command::Decode, c),
        Cmd::Score(c) => (Command::Score, c),
        Cmd::Experiment(c) => (Command::Experiment, c),
        Cmd::Keys => {
            for k in KEYS {
                let cmds: Vec<&str> = k.commands.iter().map(|c| c.name()).collect();
                println!("{:<18} {:<12} {}  [{}]", k.key, k.default, k.help, cmds.join(","));
            }
            return ExitCode::SUCCESS;
        }
    };
    let result = overrides(common)
        .map_err(|msg| format!("error: config: {msg}"))
        .and_then(|(config, ov)| {
            RunConfig::resolve(command, config.as_deref(), &ov)
                .and_then(|cfg| cli::run(&cfg))
                .map_err(|e| format!("error: {}: {}", e.kind(), e.to_string().replace('\n', " ")))
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(line) => {
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}

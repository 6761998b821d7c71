use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mnlvql::bench::{self, BenchError, ExperimentConfig, AGENT_KINDS, ENV_KINDS};

/// Runs seeded MNL-VQL benchmark experiments and writes a regret CSV.
#[derive(Debug, Parser)]
#[command(name = "mnlvql-bench", version)]
struct Cli {
    /// INI-style config with [env], [agent] and [run] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment kind (shopping, hard, custom).
    #[arg(long)]
    env: Option<String>,
    /// Comma-separated agent list.
    #[arg(long)]
    agent: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
    #[arg(long)]
    list_agents: bool,
    #[arg(long)]
    list_envs: bool,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, BenchError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(e) = &cli.env {
        cfg.env.kind = e.parse().map_err(|m: String| BenchError::Config {
            field: "--env".into(),
            message: m,
        })?;
    }
    if let Some(a) = &cli.agent {
        cfg.agent.kinds = bench::parse_agents("--agent", a)?;
    }
    if let Some(k) = cli.episodes {
        cfg.episodes = k;
    }
    if let Some(r) = cli.replications {
        cfg.replications = r;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if cli.list_agents || cli.list_envs {
        if cli.list_agents {
            println!("{}", AGENT_KINDS.join("\n"));
        }
        if cli.list_envs {
            println!("{}", ENV_KINDS.join("\n"));
        }
        return ExitCode::SUCCESS;
    }
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let records = match bench::run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(if e.is_config() { 2 } else { 1 });
        }
    };
    let result = match &cfg.out {
        Some(p) => bench::emit_csv(&records, p),
        None => {
            print!("{}", bench::to_csv(&records));
            Ok(())
        }
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    if !cli.quiet {
        for (agent, mean) in bench::final_mean_returns(&records, cfg.episodes.saturating_sub(cfg.episodes.min(1000))) {
            eprintln!("{agent}: final mean return {mean:.4}");
        }
    }
    ExitCode::SUCCESS
}

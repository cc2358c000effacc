use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use openport_conform::fuzz::{run_fuzz, DEFAULT_SEED, MIN_CORPUS};
use openport_conform::gate::{gate, GateOptions};
use openport_conform::profile::ConformanceProfile;
use openport_conform::runner::{render, run_profile};
use openport_conform::transport::{LocalReference, Target};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "openport-conform", version, about = "Conformance runner for OpenPort gateways")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Remote {
    /// Remote gateway root; omit to run against an in-process reference runtime.
    #[arg(long, requires = "token")]
    base_url: Option<String>,
    /// Agent bearer token for remote mode.
    #[arg(long, env = "OPENPORT_AGENT_TOKEN", requires = "base_url")]
    token: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Runs a profile (file path or built-in name).
    Run {
        #[arg(long)]
        profile: String,
        #[command(flatten)]
        remote: Remote,
        #[arg(long, default_value = "conformance-report.json")]
        out: PathBuf,
        /// Runs a profile that is marked disabled.
        #[arg(long)]
        allow_disabled: bool,
    },
    /// Sends a seeded malformed-request corpus.
    Fuzz {
        #[arg(long, default_value_t = MIN_CORPUS)]
        count: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[command(flatten)]
        remote: Remote,
        #[arg(long, default_value = "fuzz-report.json")]
        out: PathBuf,
    },
    /// Workspace tests, core profile, fuzz budget and reason-code regressions.
    Gate {
        /// Skips `cargo test --workspace`.
        #[arg(long)]
        skip_cargo_tests: bool,
        #[arg(long, default_value = ".")]
        workspace: PathBuf,
        #[arg(long, default_value = "gate-report.json")]
        out: PathBuf,
    },
    /// Lists built-in profiles.
    Profiles,
}

/// Keeps the in-process runtime alive for the duration of a run.
fn target(remote: Remote) -> Result<(Target, String, Option<LocalReference>), String> {
    match (remote.base_url, remote.token) {
        (Some(url), Some(token)) => Ok((Target::remote(&url).map_err(|e| e.to_string())?, token, None)),
        _ => {
            let local = LocalReference::new();
            Ok((local.target.clone(), local.agent_token.clone(), Some(local)))
        }
    }
}

fn write_report<T: Serialize>(out: &PathBuf, report: &T) -> Result<(), String> {
    let text = serde_json::to_string_pretty(report).map_err(|e| e.to_string())?;
    std::fs::write(out, text + "\n").map_err(|e| format!("cannot write {}: {e}", out.display()))?;
    println!("report written to {}", out.display());
    Ok(())
}

async fn execute(cmd: Cmd) -> Result<bool, String> {
    match cmd {
        Cmd::Run { profile, remote, out, allow_disabled } => {
            let profile = ConformanceProfile::resolve(&profile).map_err(|e| e.to_string())?;
            if !profile.enabled && !allow_disabled {
                return Err(format!("profile `{}` is disabled; pass --allow-disabled to run it", profile.name));
            }
            let (target, token, _local) = target(remote)?;
            println!("target {}", target.describe());
            let report = run_profile(&profile, &target, &token).await;
            print!("{}", render(&report));
            write_report(&out, &report)?;
            Ok(report.pass)
        }
        Cmd::Fuzz { count, seed, remote, out } => {
            if count < MIN_CORPUS {
                return Err(format!("--count must be at least {MIN_CORPUS}"));
            }
            let core = ConformanceProfile::builtin("core-v1").map_err(|e| e.to_string())?;
            let (target, token, _local) = target(remote)?;
            let report = run_fuzz(&target, Some(&token), count, seed, &core.envelope).await;
            println!(
                "fuzz {}: {} requests, seed {}, {} responses >= 500, {} envelope violations, {} transport failures",
                if report.pass() { "PASS" } else { "FAIL" },
                report.count,
                report.seed,
                report.count_5xx,
                report.count_envelope_violations,
                report.transport_failures
            );
            for f in &report.failures {
                println!("  case {} {:?} {} {}: {}", f.index, f.mutation, f.method, f.path, f.reason);
            }
            write_report(&out, &report)?;
            Ok(report.pass())
        }
        Cmd::Gate { skip_cargo_tests, workspace, out } => {
            let opts = GateOptions { cargo_tests: !skip_cargo_tests, workspace, ..GateOptions::default() };
            let report = gate(&opts).await;
            print!("{}", report.render());
            write_report(&out, &report)?;
            Ok(report.pass)
        }
        Cmd::Profiles => {
            for name in ConformanceProfile::builtin_names() {
                let p = ConformanceProfile::builtin(name).map_err(|e| e.to_string())?;
                println!("{name}\t{}\t{}", if p.enabled { "enabled" } else { "disabled" }, p.description);
            }
            Ok(true)
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command).await {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

//! `polartrace`: a client of the solver service. Without `--server` it
//! starts the service in-process on a loopback port and talks to that.
//!
//! Exit status: 0 on success, 1 for configuration or input errors, 2 when a
//! numerical stage fails or a solve does not converge.

mod args;

use args::{Cli, Command, Common};
use clap::Parser;
use polartrace_api::dto::{ErrorKind, SolveRequest};
use polartrace_api::report::{self, CsvRow};
use polartrace_api::vm2d::{Unit, Vm2d};
use polartrace_api::RunConfig;
use polartrace_client::{Client, ClientError};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match e.kind() {
            ErrorKind::Numerical | ErrorKind::Internal if matches!(e, ClientError::Api { .. }) => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            RunConfig::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    common.apply(&mut cfg);
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

async fn connect(common: &Common) -> Result<Client, CliError> {
    match &common.server {
        Some(url) => Ok(Client::new(url.clone())),
        None => {
            let addr = polartrace_service::spawn("127.0.0.1:0")
                .await
                .map_err(|e| CliError::Config(format!("cannot start the embedded service: {e}")))?;
            Ok(Client::new(format!("http://{addr}")))
        }
    }
}

fn write<T: CsvRow>(dir: &Path, rows: &[T]) -> Result<PathBuf, CliError> {
    report::write_file(dir, rows).map_err(|e| CliError::Config(format!("{}: {e}", dir.join(T::FILE).display())))
}

async fn offline(client: &Client, cfg: &RunConfig, dir: &Path) -> Result<String, CliError> {
    let info = client.create_session(cfg).await?;
    write(dir, &[info.offline.clone()])?;
    write(dir, &info.timings)?;
    write(dir, &info.compression)?;
    let o = &info.offline;
    println!(
        "offline: {} x {} grid, {} layers, omega {:.3}, {} of {} kernel entries stored (ratio {:.3})",
        o.nx, o.nz, o.layers, o.omega, o.stored_entries, o.dense_entries, o.compression_ratio
    );
    for w in &info.warnings {
        eprintln!("warning: {w}");
    }
    Ok(info.id)
}

async fn run(cli: Cli) -> Result<(), CliError> {
    let common = match &cli.command {
        Command::Serve { bind } => {
            let listener =
                tokio::net::TcpListener::bind(bind).await.map_err(|e| CliError::Config(format!("cannot bind {bind}: {e}")))?;
            println!("listening on {}", listener.local_addr().map_err(|e| CliError::Config(e.to_string()))?);
            return polartrace_service::serve(listener).await.map_err(|e| CliError::Config(e.to_string()));
        }
        Command::Offline(c) | Command::Spectrum(c) | Command::OracleCheck(c) => c,
        Command::Solve { common, .. } | Command::Sweep { common, .. } => common,
    };
    let mut cfg = load_config(common)?;
    let dir = common.output_dir(&cfg);
    let client = connect(common).await?;

    match &cli.command {
        Command::Offline(_) => {
            let id = offline(&client, &cfg, &dir).await?;
            client.delete_session(&id).await?;
        }
        Command::Solve { write_fields, .. } => {
            let id = offline(&client, &cfg, &dir).await?;
            let req = SolveRequest { sources: None, oracle: Some(cfg.oracle), include_fields: *write_fields };
            let resp = client.solve(&id, &req).await;
            client.delete_session(&id).await?;
            let resp = resp?;
            write(&dir, &resp.rows)?;
            write(&dir, &resp.residuals)?;
            write(&dir, &resp.timings)?;
            for f in &resp.fields {
                let values = f.re.iter().zip(&f.im).flat_map(|(r, i)| [*r, *i]).collect();
                let path = dir.join(format!("field_{}.vm2d", f.source_id));
                Vm2d::new(f.nx_ext, f.nz_ext, f.h, Unit::ComplexField, values)
                    .and_then(|v| v.write_path(&path))
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            }
            for r in &resp.rows {
                let oracle = r.oracle_error.map(|e| format!(", direct-solve error {e:.2e}")).unwrap_or_default();
                println!("source {}: {} after {} iterations, residual {:.2e}{oracle}", r.source_id, r.status, r.iterations, r.final_residual);
                if !r.error.is_empty() {
                    eprintln!("source {}: {}", r.source_id, r.error);
                }
            }
            let failed = resp.rows.iter().filter(|r| !r.succeeded()).count();
            if failed > 0 {
                return Err(CliError::Numerical(format!("{failed} of {} sources did not converge", resp.rows.len())));
            }
        }
        Command::Sweep { sweep_n, sweep_layers, .. } => {
            if !sweep_n.is_empty() {
                cfg.sweep.n = sweep_n.clone();
            }
            if !sweep_layers.is_empty() {
                cfg.sweep.layers = sweep_layers.clone();
            }
            let resp = client.sweep(&cfg).await?;
            write(&dir, &resp.rows)?;
            write(&dir, &resp.timings)?;
            for r in &resp.rows {
                let its = match (r.min_iterations, r.max_iterations) {
                    (Some(a), Some(b)) => format!("{a}-{b} iterations"),
                    _ => "-".into(),
                };
                println!("n {:>5}  layers {:>3}  omega {:>8.3}  {its}  {}", r.n, r.layers, r.omega, r.status);
            }
            if resp.rows.iter().any(|r| r.status.starts_with("not converged")) {
                return Err(CliError::Numerical("some sweep cells did not converge".into()));
            }
        }
        Command::Spectrum(_) => {
            let id = offline(&client, &cfg, &dir).await?;
            let resp = client.spectrum(&id).await;
            client.delete_session(&id).await?;
            let resp = resp?;
            write(&dir, &resp.eigenvalues)?;
            write(&dir, &resp.mu)?;
            write(&dir, &[resp.summary.clone()])?;
            let s = &resp.summary;
            println!("spectrum: dimension {}, {} within 1e-8 of one, {} outside radius 0.2", s.dimension, s.within_1e_8, s.outside_0_2);
        }
        Command::OracleCheck(_) => {
            let resp = client.oracle_check(&cfg).await?;
            write(&dir, &resp.rows)?;
            for r in &resp.rows {
                println!("{} {} [{}]: {:.3e} (tolerance {:.0e})", if r.pass { "PASS" } else { "FAIL" }, r.check, r.case, r.value, r.tolerance);
            }
            let failed = resp.rows.iter().filter(|r| !r.pass).count();
            if failed > 0 {
                return Err(CliError::Numerical(format!("{failed} checks failed")));
            }
        }
        Command::Serve { .. } => unreachable!("handled above"),
    }
    eprintln!("outputs in {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(1);
        }
    };
    match rt.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

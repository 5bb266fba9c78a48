//! `examchain`: operator entry point for keys, genesis, simulated networks,
//! dev-mode transactions, queries, verification and reports.
//!
//! Exit codes: 0 success, 1 a check failed or a transaction was rejected,
//! 2 usage or unreadable input, 70 internal error.

mod node;
mod output;
mod query;
mod tx;

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use examchain_core::campus::{genesis_config, labeled_key};
use examchain_core::crypto::{seed_from_label, Address, Digest32, KeyPair};
use examchain_core::genesis::genesis;
use examchain_core::iot::validate_and_report;
use examchain_core::ledger::{decode_log, verify_log_bytes, write_chain, BlockLog, ChainVerdict};
use examchain_core::netsim::{Scenario, Simulation};
use examchain_core::replay::replay_chain;
use examchain_core::state::{verify_certificate, CertVerdict, Certificate};
use examchain_core::tx::TxBody;
use serde_json::json;

use node::{sealer, signer, Home};
use output::{exit_code, invalid, usage, Out, EXIT_INTERNAL};
use query::QueryCmd;
use tx::TxCmd;

#[derive(Debug, Parser)]
#[command(name = "examchain", version, about = "Permissioned examination ledger")]
struct Cli {
    /// Data directory holding genesis.toml and chain.log.
    #[arg(long, global = true, env = "EXAMCHAIN_HOME", default_value = ".examchain")]
    home: PathBuf,
    /// Genesis config file [default: HOME/genesis.toml].
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Block log [default: HOME/chain.log].
    #[arg(long, global = true)]
    chain_path: Option<PathBuf>,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print JSON instead of text records.
    #[arg(long, global = true)]
    report_json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print a key's public key and address, creating the seed file if missing.
    Keygen {
        #[arg(long)]
        seed_file: Option<PathBuf>,
        /// Deterministic development identity instead of a seed file.
        #[arg(long, conflicts_with = "seed_file")]
        label: Option<String>,
    },
    /// Write the genesis block to a fresh block log.
    Genesis {
        /// Member count for the generated development config, used when the
        /// config file does not exist yet.
        #[arg(long, default_value_t = 4)]
        members: usize,
        /// University node seed file [default: development node key].
        #[arg(long)]
        node_key: Option<PathBuf>,
    },
    /// Run a scenario file on the simulated network.
    RunScenario { scenario: PathBuf },
    /// Commit one transaction in its own block (single-node dev mode).
    Tx {
        /// Sender seed file.
        #[arg(long)]
        key: Option<PathBuf>,
        /// Sender development identity label.
        #[arg(long = "as", conflicts_with = "key")]
        label: Option<String>,
        /// Sealing node seed file [default: development university node].
        #[arg(long)]
        node_key: Option<PathBuf>,
        /// Block timestamp [default: tip timestamp + 1].
        #[arg(long)]
        timestamp: Option<u64>,
        #[command(subcommand)]
        kind: TxCmd,
    },
    /// Look up committed state.
    Query {
        #[command(subcommand)]
        what: QueryCmd,
    },
    /// Check every block of a log; exits 1 and names the first invalid height.
    VerifyChain { path: Option<PathBuf> },
    /// Check a presented certificate against the chain.
    VerifyCert {
        #[arg(long, value_parser = |s: &str| Digest32::from_hex(s).map_err(|e| e.to_string()))]
        id: Digest32,
        /// Certificate JSON as printed by `query certificate --report-json`
        /// [default: the stored record].
        #[arg(long)]
        cert: Option<PathBuf>,
    },
    /// Attendance, inventory and asset reports from the committed state.
    Report {
        /// First timestamp of asset movements to list.
        #[arg(long)]
        from: Option<u64>,
        /// Last timestamp of asset movements to list.
        #[arg(long)]
        to: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match panic::catch_unwind(AssertUnwindSafe(|| run(cli))) {
        Ok(Ok(true)) => ExitCode::SUCCESS,
        Ok(Ok(false)) => ExitCode::from(output::EXIT_INVALID),
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}

/// Ok(false) means the command ran and its check failed.
fn run(cli: Cli) -> Result<bool> {
    let out = Out { json: cli.report_json };
    let explicit_chain = cli.chain_path.clone();
    let home = Home::new(cli.home, cli.config, cli.chain_path);
    match cli.command {
        Command::Keygen { seed_file, label } => keygen(out, seed_file, label, cli.seed),
        Command::Genesis { members, node_key } => {
            if home.config.exists() {
                home.load_config()?;
            } else {
                if let Some(dir) = home.config.parent() {
                    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                }
                std::fs::write(&home.config, genesis_config(members).to_toml_string())
                    .with_context(|| format!("writing {}", home.config.display()))?;
            }
            let config = home.load_config()?;
            if home.chain.exists() {
                return Err(invalid(format!("{} already exists", home.chain.display())));
            }
            let key = sealer(node_key.as_deref())?;
            let (block, state) = genesis(&config, &key).map_err(|e| invalid(e.to_string()))?;
            BlockLog::create(&home.chain, &block).map_err(|e| usage(e.to_string()))?;
            out.record(json!({
                "config": home.config.display().to_string(),
                "chain": home.chain.display().to_string(),
                "height": 0,
                "hash": block.hash(),
                "state_root": state.state_root(),
                "members": config.members.len(),
                "fault_bound": config.effective_fault_bound(),
                "identities": config.identities.len(),
            }));
            Ok(true)
        }
        Command::RunScenario { scenario } => {
            let mut s = Scenario::load(&scenario).map_err(|e| usage(e.to_string()))?;
            if let Some(seed) = cli.seed {
                s.network.seed = seed;
                s.workload.seed = seed;
            }
            let mut sim = Simulation::new(s).map_err(|e| usage(e.to_string()))?;
            let report = sim.run();
            if let Some(path) = explicit_chain {
                let honest = sim
                    .replicas()
                    .iter()
                    .find(|r| sim.is_honest(r.id()))
                    .context("scenario has no honest replica")?;
                write_chain(&path, honest.chain())?;
            }
            out.either(&report.to_text(), || report.to_json());
            if report.divergence {
                eprintln!("honest replicas diverged at heights {:?}", report.divergent_heights);
            }
            Ok(!report.divergence)
        }
        Command::Tx {
            key,
            label,
            node_key,
            timestamp,
            kind,
        } => {
            let sender = signer(key.as_deref(), label.as_deref())?;
            let sealing = sealer(node_key.as_deref())?;
            let mut node = home.open()?;
            let tx = node.sign(&sender, kind.into_body());
            let (hash, tx_kind, nonce) = (tx.hash(), tx.kind(), tx.nonce);
            let block = node.commit(tx, &sealing, timestamp)?.clone();
            let mut record = json!({
                "committed": true,
                "height": block.header.height,
                "block_hash": block.hash(),
                "tx_hash": hash,
                "kind": tx_kind.name(),
                "sender": sender.address(),
                "nonce": nonce,
                "state_root": block.header.state_root,
            });
            if let TxBody::IssueCertificate { student, program } = &block.transactions[0].body {
                let cert = node
                    .state
                    .certificates()
                    .values()
                    .find(|c| c.student == *student && c.program == *program)
                    .context("issued certificate missing from state")?;
                record["certificate_id"] = json!(cert.certificate_id);
            }
            out.record(record);
            Ok(true)
        }
        Command::Query { what } => {
            let node = home.open()?;
            out.record(query::run(what, &node.chain, &node.state)?);
            Ok(true)
        }
        Command::VerifyChain { path } => {
            let path = path.unwrap_or(home.chain.clone());
            let bytes = std::fs::read(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let verdict = match verify_log_bytes(&bytes) {
                ChainVerdict::Ok { .. } if home.config.exists() => {
                    let config = home.load_config()?;
                    let blocks = decode_log(&bytes).map_err(|_| anyhow::anyhow!("verified log no longer decodes"))?;
                    match replay_chain(&config, &blocks) {
                        Ok(state) => Ok((blocks.len() as u64 - 1, Some(state.state_root()))),
                        Err(e) => Err((e.height().unwrap_or(0), e.to_string())),
                    }
                }
                ChainVerdict::Ok { height } => Ok((height.unwrap_or(0), None)),
                ChainVerdict::Invalid { height, reason } => Err((height, reason)),
            };
            match verdict {
                Ok((height, root)) => {
                    out.record(json!({
                        "status": "valid",
                        "height": height,
                        "replayed": root.is_some(),
                        "state_root": root,
                    }));
                    Ok(true)
                }
                Err((height, reason)) => {
                    out.record(json!({
                        "status": "invalid",
                        "first_invalid_height": height,
                        "reason": reason,
                    }));
                    Ok(false)
                }
            }
        }
        Command::VerifyCert { id, cert } => {
            let node = home.open()?;
            let presented: Certificate = match cert {
                Some(path) => {
                    let text =
                        std::fs::read_to_string(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
                    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
                }
                None => match node.state.certificate(&id) {
                    Some(c) => c.clone(),
                    // nothing stored: any presented record gets the unknown-id verdict
                    None => Certificate::new(Address::default(), String::new(), Digest32::ZERO, 0, Address::default()),
                },
            };
            let verdict = verify_certificate(&node.state, &id, &presented);
            let mut record = serde_json::to_value(verdict)?;
            record["certificate_id"] = json!(id);
            out.record(record);
            Ok(verdict == CertVerdict::Accept)
        }
        Command::Report { from, to } => {
            let node = home.open()?;
            let period = (from.is_some() || to.is_some()).then(|| from.unwrap_or(0)..=to.unwrap_or(u64::MAX));
            let reports = validate_and_report(&node.state, period, None);
            out.either(&reports.to_tsv(), || reports.to_json());
            Ok(true)
        }
    }
}

fn keygen(out: Out, seed_file: Option<PathBuf>, label: Option<String>, seed: Option<u64>) -> Result<bool> {
    let fresh = || match seed {
        Some(s) => KeyPair::from_seed(&seed_from_label(&format!("keygen/{s}"))),
        None => KeyPair::generate(),
    };
    let mut record = json!({});
    let key = match (seed_file, label) {
        (_, Some(label)) => {
            record["label"] = json!(label);
            labeled_key(&label)
        }
        (Some(path), None) if path.exists() => node::read_key_file(&path)?,
        (Some(path), None) => {
            let key = fresh();
            std::fs::write(&path, format!("{}\n", hex_seed(&key)))
                .map_err(|e| usage(format!("{}: {e}", path.display())))?;
            record["created"] = json!(path.display().to_string());
            key
        }
        (None, None) => {
            let key = fresh();
            record["seed"] = json!(hex_seed(&key));
            key
        }
    };
    record["public_key"] = json!(key.public_key());
    record["address"] = json!(key.address());
    out.record(record);
    Ok(true)
}

fn hex_seed(key: &KeyPair) -> String {
    Digest32(key.seed()).to_hex()
}

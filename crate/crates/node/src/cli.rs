//! Command-line interface.
//!
//! Exit status: 0 on success (or a genuine verdict), 1 when a recording is
//! not genuine, 2 on any error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use audiochain_core::fingerprint::FingerprintParams;
use audiochain_core::synth::{noise, speech_like};
use audiochain_core::tamper::{control_condition, format_table, run_robustness_experiment, table2_conditions, Manipulation};
use audiochain_core::verify::VerificationResult;
use audiochain_core::wav::{read_wav, write_wav, AudioClip};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::{json, Value};

use crate::client::{PeerClient, Reply};
use crate::config::NodeConfig;
use crate::harness::{run_demo, DemoOptions, Variant};
use crate::node::Node;

pub const EXIT_NOT_GENUINE: u8 = 1;
pub const EXIT_ERROR: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "audiochain", version, about = "Tamper-evident registry for audio recordings")]
pub struct Cli {
    /// Node to talk to for remote commands.
    #[arg(long, global = true, env = "AUDIOCHAIN_NODE", default_value = "http://127.0.0.1:5000")]
    pub node: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a node.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Register a WAV file through a recorder node.
    Record {
        file: PathBuf,
        /// Name stored in the transaction (defaults to the file name).
        #[arg(long)]
        name: Option<String>,
    },
    /// Ask the node to mine one pending transaction.
    Mine,
    /// List pending transactions.
    Pending,
    /// Show the node's chain.
    Chain {
        #[arg(long)]
        json: bool,
    },
    /// Fetch a registered recording, verify it and write it to disk.
    Fetch {
        content_id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify a registered recording by content id.
    Verify {
        content_id: String,
        #[arg(long)]
        json: bool,
    },
    /// Authenticate a WAV file of unknown origin.
    Authenticate {
        file: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Apply one manipulation to a WAV file.
    Tamper {
        #[arg(long, value_enum)]
        op: TamperOp,
        /// Seconds for trim, dB for gain, percent for stretch, cents for pitch.
        #[arg(long, allow_hyphen_values = true)]
        amount: f64,
        input: PathBuf,
        output: PathBuf,
    },
    /// Offline experiments.
    Experiment {
        #[command(subcommand)]
        kind: Experiment,
    },
    /// Manage the node's peers.
    Peers {
        #[command(subcommand)]
        action: PeersAction,
    },
    /// Write a deterministic synthetic test recording.
    Synth {
        output: PathBuf,
        #[arg(long, default_value_t = 14.0)]
        seconds: f64,
        #[arg(long, default_value_t = 16000)]
        rate: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = SynthKind::Speech)]
        kind: SynthKind,
        #[arg(long, default_value_t = 1)]
        channels: usize,
    },
    /// Run the five-node demonstration on localhost.
    Demo {
        #[arg(long, value_enum, default_value_t = Variant::Honest)]
        variant: Variant,
        /// Working directory for node state and logs (default: a temp dir).
        #[arg(long)]
        work_dir: Option<PathBuf>,
        #[arg(long, default_value_t = audiochain_core::ledger::DEFAULT_DIFFICULTY)]
        difficulty: u32,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TamperOp {
    Trim,
    Gain,
    Stretch,
    Pitch,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SynthKind {
    Speech,
    Noise,
}

#[derive(Debug, Subcommand)]
pub enum Experiment {
    /// Fingerprint robustness against the standard manipulation set.
    Robustness {
        input: PathBuf,
        /// Add the 0 dB control row.
        #[arg(long)]
        control: bool,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum PeersAction {
    Add { url: String },
    Remove { url: String },
    List,
}

fn expect_json(reply: Reply, ok: &[u16]) -> Result<Value> {
    let value = reply.json().map_err(|e| anyhow!(e))?;
    if !ok.contains(&reply.status) {
        bail!("node answered {}: {}", reply.status, value);
    }
    Ok(value)
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn print_verdict(result: &VerificationResult, json: bool) -> Result<()> {
    if json {
        return print_json(result);
    }
    if let Some(p) = &result.payload {
        println!("recording  {} ({})", p.content_id, p.rec_file_name);
        println!("device     {} {} [{}]", p.device_maker, p.device_model, p.device_mac_add);
    }
    for c in &result.checks {
        let mark = if c.passed { "ok" } else { "FAILED" };
        match &c.detail {
            Some(d) => println!("  {:<13} {mark:<6} {d}", c.name.as_str()),
            None => println!("  {:<13} {mark}", c.name.as_str()),
        }
    }
    println!("{}", if result.genuine { "genuine" } else { "not genuine" });
    Ok(())
}

fn verdict_code(result: &VerificationResult) -> ExitCode {
    if result.genuine {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_NOT_GENUINE)
    }
}

fn read_clip(path: &Path) -> Result<(AudioClip, Option<audiochain_core::ContentId>)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    read_wav(&bytes).with_context(|| format!("parsing {}", path.display()))
}

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
}

fn serve(config_path: &Path) -> Result<ExitCode> {
    let config = NodeConfig::load(config_path)?;
    let bind = config.bind.clone();
    let node = Arc::new(Node::open(config)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind)
            .await
            .with_context(|| format!("BindFailure: cannot listen on {bind}"))?;
        info!("listening on {bind} as {}", node.self_url());
        let boot = node.clone();
        tokio::task::spawn_blocking(move || boot.bootstrap());
        crate::server::serve(node, listener, shutdown_signal()).await?;
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(ExitCode::SUCCESS)
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let client = PeerClient::default();
    let node = cli.node.trim_end_matches('/').to_string();
    match cli.command {
        Command::Serve { config } => serve(&config),
        Command::Record { file, name } => {
            let bytes = std::fs::read(&file).with_context(|| format!("reading {}", file.display()))?;
            let name = name.unwrap_or_else(|| {
                file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
            });
            let url = format!("{node}/record?filename={}", url::form_urlencoded::byte_serialize(name.as_bytes()).collect::<String>());
            let reply = expect_json(client.post_bytes(&url, &bytes).map_err(|e| anyhow!(e))?, &[201])?;
            print_json(&reply)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Mine => {
            let reply = client.post_empty(&format!("{node}/mine")).map_err(|e| anyhow!(e))?;
            let status = reply.status;
            let value = reply.json().map_err(|e| anyhow!(e))?;
            print_json(&value)?;
            match status {
                200 => Ok(ExitCode::SUCCESS),
                404 => Ok(ExitCode::from(EXIT_NOT_GENUINE)),
                s => bail!("node answered {s}"),
            }
        }
        Command::Pending => {
            print_json(&expect_json(client.get(&format!("{node}/transactions/pending")).map_err(|e| anyhow!(e))?, &[200])?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Chain { json } => {
            let value = expect_json(client.get(&format!("{node}/chain")).map_err(|e| anyhow!(e))?, &[200])?;
            if json {
                print_json(&value)?;
            } else {
                for b in value["chain"].as_array().into_iter().flatten() {
                    let tx = &b["transactions"][0];
                    println!(
                        "#{:<4} {}  {}",
                        b["index"],
                        b["hash"].as_str().unwrap_or(""),
                        tx["contentId"].as_str().map_or("(genesis)".to_string(), |c| {
                            format!("{c} {}", tx["recFileName"].as_str().unwrap_or(""))
                        })
                    );
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { content_id, json } => {
            let value = expect_json(client.get(&format!("{node}/verify/{content_id}")).map_err(|e| anyhow!(e))?, &[200])?;
            let result: VerificationResult = serde_json::from_value(value)?;
            print_verdict(&result, json)?;
            Ok(verdict_code(&result))
        }
        Command::Fetch { content_id, out } => {
            let value = expect_json(client.get(&format!("{node}/verify/{content_id}")).map_err(|e| anyhow!(e))?, &[200])?;
            let result: VerificationResult = serde_json::from_value(value)?;
            if !result.genuine {
                print_verdict(&result, false)?;
                eprintln!("not writing {}: recording failed {:?}", out.display(), result.failed_checks());
                return Ok(verdict_code(&result));
            }
            let cid = &result.payload.as_ref().expect("genuine results carry a payload").ipfs_hash;
            let reply = client.get(&format!("{node}/cas/{cid}")).map_err(|e| anyhow!(e))?;
            if reply.status != 200 || !audiochain_core::Cid::parse(cid)?.matches(&reply.body) {
                bail!("node did not serve the verified object {cid}");
            }
            std::fs::write(&out, &reply.body).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} ({} bytes)", out.display(), reply.body.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Authenticate { file, json } => {
            let bytes = std::fs::read(&file).with_context(|| format!("reading {}", file.display()))?;
            let value = expect_json(client.post_bytes(&format!("{node}/authenticate"), &bytes).map_err(|e| anyhow!(e))?, &[200])?;
            let result: VerificationResult = serde_json::from_value(value)?;
            print_verdict(&result, json)?;
            Ok(verdict_code(&result))
        }
        Command::Tamper { op, amount, input, output } => {
            let (clip, id) = read_clip(&input)?;
            let m = match op {
                TamperOp::Trim => Manipulation::Trim(amount),
                TamperOp::Gain => Manipulation::Gain(amount),
                TamperOp::Stretch => Manipulation::TimeStretch(amount),
                TamperOp::Pitch => Manipulation::PitchShift(amount),
            };
            let altered = m.apply(&clip)?;
            std::fs::write(&output, write_wav(&altered, id.as_ref()))?;
            println!("{m}: wrote {}", output.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Experiment { kind: Experiment::Robustness { input, control, json } } => {
            let (clip, _) = read_clip(&input)?;
            let mut conditions = table2_conditions();
            if control {
                conditions.push(control_condition());
            }
            let rows = run_robustness_experiment(&clip, &conditions, &FingerprintParams::default())?;
            if json {
                print_json(&rows)?;
            } else {
                print!("{}", format_table(&rows));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Peers { action } => {
            let value = match action {
                PeersAction::Add { url } => {
                    let r = client.post_json(&format!("{node}/nodes/register"), &json!({ "peer": url }));
                    expect_json(r.map_err(|e| anyhow!(e))?, &[201])?
                }
                PeersAction::Remove { url } => {
                    let r = client.post_json(&format!("{node}/nodes/remove"), &json!({ "peer": url }));
                    expect_json(r.map_err(|e| anyhow!(e))?, &[200])?
                }
                PeersAction::List => expect_json(client.get(&format!("{node}/nodes")).map_err(|e| anyhow!(e))?, &[200])?,
            };
            print_json(&value)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth { output, seconds, rate, seed, kind, channels } => {
            if channels == 0 || seconds <= 0.0 || rate == 0 {
                bail!("need at least one channel, a positive duration and a positive rate");
            }
            let clip = match kind {
                SynthKind::Noise => noise(seed, seconds, rate, channels),
                SynthKind::Speech => {
                    let chans = (0..channels as u64)
                        .map(|c| speech_like(seed + c, seconds, rate).into_channels().remove(0))
                        .collect();
                    AudioClip::new(rate, chans)?
                }
            };
            std::fs::write(&output, write_wav(&clip, None))?;
            println!("wrote {} ({} s, {} Hz, {} ch)", output.display(), clip.duration_seconds(), rate, channels);
            Ok(ExitCode::SUCCESS)
        }
        Command::Demo { variant, work_dir, difficulty } => {
            let binary = std::env::current_exe()?;
            let tmp;
            let work_dir = match work_dir {
                Some(d) => d,
                None => {
                    tmp = tempfile::tempdir()?;
                    tmp.path().to_path_buf()
                }
            };
            let mut opts = DemoOptions::new(binary, work_dir, variant);
            opts.difficulty = difficulty;
            let report = run_demo(&opts, &mut |step| {
                println!("{}", serde_json::to_string(step).expect("step serializes"));
            })?;
            Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::from(EXIT_NOT_GENUINE) })
        }
    }
}

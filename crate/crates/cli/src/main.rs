use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use mqc_cli::config::{ExperimentSpec, MitigationMode, NoiseFlags, VariantArg};
use mqc_cli::runner;

#[derive(Parser)]
#[command(
    name = "mqc",
    version,
    about = "Simulate and analyze multiple-quantum-coherence GHZ entanglement experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Device config file (TOML).
    #[arg(long)]
    device: PathBuf,
    /// Explicit physical qubits, root first (comma separated); overrides --n.
    #[arg(long, value_delimiter = ',')]
    qubits: Option<Vec<usize>>,
    /// Number of qubits, taken as a prefix of the device entangling order.
    #[arg(short = 'n', long)]
    n: Option<usize>,
    /// State family to prepare.
    #[arg(long, value_enum, default_value = "ghz")]
    variant: CliVariant,
    /// Insert the collective pi-pulse between preparation and rotation.
    #[arg(long)]
    refocus: bool,
    #[arg(long, default_value_t = 16384)]
    shots: u64,
    #[arg(long, default_value_t = 8)]
    reps: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Readout correction: none | full | truncated:K | tensored.
    #[arg(long, default_value = "none")]
    mitigation: String,
    /// Enable depolarizing-plus-relaxation gate errors.
    #[arg(long)]
    noise_gates: bool,
    /// Enable thermal relaxation on idle qubits.
    #[arg(long)]
    noise_idle: bool,
    /// Enable readout confusion.
    #[arg(long)]
    noise_readout: bool,
    /// Std dev of the per-shot quasi-static drift rate (rad/ns).
    #[arg(long, default_value_t = 0.0)]
    drift_sigma: f64,
    /// Compute exact outcome probabilities instead of sampling (noiseless
    /// configurations only).
    #[arg(long)]
    exact: bool,
    /// Shots per prepared basis state when building calibration matrices;
    /// 0 uses exact probabilities.
    #[arg(long, default_value_t = 4096)]
    calibration_shots: u64,
    /// Output directory for the run record.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum CliVariant {
    Ghz,
    Star,
    Complete,
}

impl RunArgs {
    fn to_spec(&self) -> Result<ExperimentSpec> {
        let spec = ExperimentSpec {
            device_path: self.device.clone(),
            qubits: self.qubits.clone(),
            num_qubits: self.n,
            variant: match self.variant {
                CliVariant::Ghz => VariantArg::Ghz,
                CliVariant::Star => VariantArg::Star,
                CliVariant::Complete => VariantArg::Complete,
            },
            refocus: self.refocus,
            shots: self.shots,
            repetitions: self.reps,
            seed: self.seed,
            mitigation: MitigationMode::parse(&self.mitigation)?,
            noise: NoiseFlags {
                gates: self.noise_gates,
                idle: self.noise_idle,
                readout: self.noise_readout,
                drift_sigma: self.drift_sigma,
            },
            exact: self.exact,
            calibration_shots: self.calibration_shots,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the collective rotation, extract the coherence spectrum and
    /// fidelity bounds.
    GhzMqc(RunArgs),
    /// Parity-oscillation sweep: coherence amplitude and fidelity.
    Parity(RunArgs),
    /// Readout-correction convergence versus calibration truncation size.
    MitigationStudy {
        #[command(flatten)]
        run: RunArgs,
        /// Truncation sizes to evaluate (comma separated).
        #[arg(long, value_delimiter = ',', default_value = "32,64,128,256")]
        k_values: Vec<usize>,
    },
    /// Recompute a stored record from its persisted counts and compare.
    Replay {
        /// Record directory containing results.json.
        #[arg(long)]
        record: PathBuf,
        /// Recompute under a different mitigation mode; divergence from the
        /// stored outputs is then the expected result.
        #[arg(long)]
        mitigation: Option<String>,
    },
}

fn fidelity_summary(derived: &serde_json::Value) -> String {
    let fid = derived.pointer("/mitigated/fidelity").or_else(|| derived.pointer("/raw/fidelity"));
    match fid {
        Some(f) => {
            let lower = f.get("lower").and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
            let upper = f.get("upper").and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
            let direct = f.get("direct").and_then(|v| v.as_f64());
            let entangled = f.get("entangled").and_then(|v| v.as_bool()).unwrap_or(false);
            let direct_text = direct.map(|d| format!(", direct {d:.4}")).unwrap_or_default();
            format!(
                "fidelity bounds [{lower:.4}, {upper:.4}]{direct_text}; multipartite entanglement {}",
                if entangled { "witnessed" } else { "not witnessed" }
            )
        }
        None => String::new(),
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GhzMqc(args) => {
            let spec = args.to_spec()?;
            let summary = runner::cmd_ghz_mqc(&spec, &args.out)?;
            println!("record written to {}", summary.out_dir.display());
            println!("{}", fidelity_summary(&summary.derived));
        }
        Command::Parity(args) => {
            let spec = args.to_spec()?;
            let summary = runner::cmd_parity(&spec, &args.out)?;
            println!("record written to {}", summary.out_dir.display());
            if let Some(f) = summary.derived.pointer("/raw/fidelity").and_then(|v| v.as_f64()) {
                println!("parity fidelity {f:.4}");
            }
        }
        Command::MitigationStudy { run, k_values } => {
            let spec = run.to_spec()?;
            let summary = runner::cmd_mitigation_study(&spec, &k_values, &run.out)?;
            println!("record written to {}", summary.out_dir.display());
        }
        Command::Replay { record, mitigation } => {
            let override_mode = mitigation.as_deref().map(MitigationMode::parse).transpose()?;
            let expected_divergence = override_mode.is_some();
            let report = runner::cmd_replay(&record, override_mode)?;
            if report.matches {
                println!("replay of {} matches the stored record", report.command);
            } else if expected_divergence {
                println!(
                    "replay under a different mitigation mode diverges in {} fields (expected)",
                    report.differences.len()
                );
                for d in report.differences.iter().take(10) {
                    println!("  {d}");
                }
            } else {
                for d in &report.differences {
                    eprintln!("mismatch: {d}");
                }
                anyhow::bail!("replay diverged in {} fields", report.differences.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let payload = serde_json::json!({ "error": format!("{err:#}") });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}

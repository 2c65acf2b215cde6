//! Command implementations: deterministic execution, persistence, derived
//! reports, and replay.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use mqc_sim::analysis::{
    aggregate_repetitions, mqc_spectrum, parity_coherence, FidelityReport, MqcSpectrum,
    SweepResult,
};
use mqc_sim::circuits::{
    auto_plan, build_ghz_prep, build_mqc_circuit, build_parity_circuit, phi_grid,
    stamp_durations, EntanglingPlan, PhiGrid,
};
use mqc_sim::mitigation::{
    build_full_calibration, build_truncated_calibration, convergence_study, mitigate,
    select_truncation_states, tensored_mitigate, CalibrationMatrix, ConvergenceRow,
    MitigatedDistribution,
};
use mqc_sim::noise::{NoiseModel, ReadoutModel};
use mqc_sim::seeding::{mix, mix_label};
use mqc_sim::statevector::{Circuit, CountsTable, StateVector};

use crate::config::{load_device, ExperimentSpec, LoadedDevice, MitigationMode, VariantArg};
use crate::record::{
    compare_json, counts_to_text, csv_opt, probs_to_text, read_counts_file, read_manifest,
    read_probs_file, write_atomic, write_manifest, TOOL_VERSION,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PlanSnapshot {
    qubits: Vec<usize>,
    cx_moments: Vec<Vec<(usize, usize)>>,
}

impl PlanSnapshot {
    fn of(plan: &EntanglingPlan) -> Self {
        PlanSnapshot { qubits: plan.qubits().to_vec(), cx_moments: plan.cx_moments().to_vec() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
enum DataFiles {
    /// Per-point counts files, indexed `[phi][repetition]`.
    Sampled { sweep: Vec<Vec<String>>, populations: Vec<String> },
    /// Exact outcome probabilities, one file per sweep point.
    Exact { sweep: Vec<String>, populations: Option<String> },
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool_version: &'a str,
    command: &'a str,
    spec: &'a ExperimentSpec,
    plan: PlanSnapshot,
    grid: &'a PhiGrid,
    wall_clock_seconds: f64,
    fill_warnings: Vec<String>,
    data: DataFiles,
    derived: Value,
}

/// Outcome handed back to `main` for a one-line summary.
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub derived: Value,
}

enum Execution {
    Sampled { sweep: Vec<Vec<CountsTable>>, pops: Vec<CountsTable> },
    Exact { sweep: Vec<Vec<(u64, f64)>>, pops: Option<Vec<(u64, f64)>> },
}

#[derive(Clone, Copy)]
enum SweepKind {
    Mqc,
    Parity,
}

impl SweepKind {
    fn label(self) -> &'static str {
        match self {
            SweepKind::Mqc => "ghz-mqc",
            SweepKind::Parity => "parity",
        }
    }
}

fn resolve_plan(
    spec: &ExperimentSpec,
    device: &LoadedDevice,
) -> Result<(EntanglingPlan, PhiGrid)> {
    let qubits = spec.resolve_qubits(device)?;
    let plan = auto_plan(&device.model, &qubits)
        .map_err(|e| anyhow::anyhow!("planning over qubits {qubits:?}: {e}"))?;
    let grid = phi_grid(plan.num_qubits()).map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok((plan, grid))
}

fn build_noise(
    spec: &ExperimentSpec,
    device: &LoadedDevice,
    plan: &EntanglingPlan,
) -> Result<NoiseModel> {
    if !spec.noise.any() {
        return Ok(NoiseModel::noiseless(plan.num_qubits()));
    }
    if spec.variant != VariantArg::Ghz && spec.noise.gates {
        bail!(
            "gate noise is calibrated per device coupler; graph-state variant circuits \
             use uncalibrated pairs, so disable gate noise for variants"
        );
    }
    NoiseModel::from_device(&device.model, plan, spec.noise.toggles())
        .map_err(|e| anyhow::anyhow!("building noise model: {e}"))
}

fn nonzero_probabilities(state: &StateVector) -> Vec<(u64, f64)> {
    state
        .probabilities()
        .into_iter()
        .enumerate()
        .filter(|&(_, p)| p > 1e-15)
        .map(|(bits, p)| (bits as u64, p))
        .collect()
}

fn sweep_circuit(
    kind: SweepKind,
    spec: &ExperimentSpec,
    device: &LoadedDevice,
    plan: &EntanglingPlan,
    phi: f64,
) -> Result<Circuit> {
    let mut circuit = match kind {
        SweepKind::Mqc => {
            build_mqc_circuit(plan, phi, spec.refocus, spec.variant.to_variant())
                .map_err(|e| anyhow::anyhow!("{e}"))?
        }
        SweepKind::Parity => build_parity_circuit(plan, phi).map_err(|e| anyhow::anyhow!("{e}"))?,
    };
    stamp_durations(&mut circuit, &device.model, plan);
    Ok(circuit)
}

fn run_point(
    circuit: &Circuit,
    noise: &NoiseModel,
    shots: u64,
    seed: u64,
) -> Result<CountsTable> {
    if noise.is_trivial() {
        let mut state = StateVector::new(circuit.num_qubits);
        state.apply_circuit(circuit).map_err(|e| anyhow::anyhow!("{e}"))?;
        state.sample_counts(shots, seed).map_err(|e| anyhow::anyhow!("{e}"))
    } else {
        mqc_sim::noise::run_trajectories(circuit, noise, shots, seed)
            .map_err(|e| anyhow::anyhow!("{e}"))
    }
}

fn execute(
    kind: SweepKind,
    spec: &ExperimentSpec,
    device: &LoadedDevice,
    plan: &EntanglingPlan,
    grid: &PhiGrid,
) -> Result<Execution> {
    let noise = build_noise(spec, device, plan)?;
    let base_seed = mix_label(spec.seed, kind.label());
    let pop_seed = mix_label(spec.seed, "populations");
    let wants_populations = matches!(kind, SweepKind::Parity) || spec.variant == VariantArg::Ghz;

    if spec.exact {
        let mut sweep = Vec::with_capacity(grid.len());
        for &phi in grid.angles() {
            let circuit = sweep_circuit(kind, spec, device, plan, phi)?;
            let mut state = StateVector::new(plan.num_qubits());
            state.apply_circuit(&circuit).map_err(|e| anyhow::anyhow!("{e}"))?;
            sweep.push(nonzero_probabilities(&state));
        }
        let pops = if wants_populations {
            let mut prep = build_ghz_prep(plan).map_err(|e| anyhow::anyhow!("{e}"))?;
            stamp_durations(&mut prep, &device.model, plan);
            let mut state = StateVector::new(plan.num_qubits());
            state.apply_circuit(&prep).map_err(|e| anyhow::anyhow!("{e}"))?;
            Some(nonzero_probabilities(&state))
        } else {
            None
        };
        return Ok(Execution::Exact { sweep, pops });
    }

    let mut sweep = Vec::with_capacity(grid.len());
    for (j, &phi) in grid.angles().iter().enumerate() {
        let circuit = sweep_circuit(kind, spec, device, plan, phi)?;
        let mut reps = Vec::with_capacity(spec.repetitions as usize);
        for r in 0..spec.repetitions {
            let seed = mix(mix(base_seed, j as u64), r);
            reps.push(run_point(&circuit, &noise, spec.shots, seed)?);
        }
        sweep.push(reps);
    }
    let pops = if wants_populations {
        let mut prep = build_ghz_prep(plan).map_err(|e| anyhow::anyhow!("{e}"))?;
        stamp_durations(&mut prep, &device.model, plan);
        let mut tables = Vec::with_capacity(spec.repetitions as usize);
        for r in 0..spec.repetitions {
            tables.push(run_point(&prep, &noise, spec.shots, mix(pop_seed, r))?);
        }
        tables
    } else {
        Vec::new()
    };
    Ok(Execution::Sampled { sweep, pops })
}

// ---------------------------------------------------------------------------
// Derivation: pure functions from persisted data to reported numbers.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
struct Populations {
    p_all_zero: f64,
    p_all_one: f64,
    p_all_zero_stderr: Option<f64>,
    p_all_one_stderr: Option<f64>,
}

fn mean_stderr(values: &[f64]) -> (f64, Option<f64>) {
    let k = values.len();
    let mean = values.iter().sum::<f64>() / k as f64;
    if k < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    (mean, Some((var / k as f64).sqrt()))
}

fn populations_from_freqs(p0: &[f64], p1: &[f64]) -> Populations {
    let (z, ze) = mean_stderr(p0);
    let (o, oe) = mean_stderr(p1);
    Populations { p_all_zero: z, p_all_one: o, p_all_zero_stderr: ze, p_all_one_stderr: oe }
}

#[derive(Debug, Clone, Serialize)]
struct ChannelOutputs {
    sweep: SweepResult,
    spectrum: MqcSpectrum,
    fidelity: FidelityReport,
}

fn channel_outputs(
    grid: &PhiGrid,
    per_rep_values: &[Vec<f64>],
    num_qubits: usize,
    populations: Option<&Populations>,
) -> Result<ChannelOutputs> {
    let sweeps: Vec<SweepResult> = per_rep_values
        .iter()
        .map(|values| SweepResult::new(grid.clone(), values.clone()))
        .collect::<Result<_, _>>()
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let sweep = aggregate_repetitions(&sweeps).map_err(|e| anyhow::anyhow!("{e}"))?;
    let spectrum = mqc_spectrum(&sweep).map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut fidelity = FidelityReport::from_spectrum(&spectrum, num_qubits);
    if let Some(p) = populations {
        fidelity = fidelity.with_direct(
            p.p_all_zero,
            p.p_all_one,
            spectrum.amplitude(num_qubits),
            match (p.p_all_zero_stderr, p.p_all_one_stderr) {
                (Some(a), Some(b)) => Some((a, b)),
                _ => None,
            },
            spectrum.stderr(num_qubits),
        );
    }
    Ok(ChannelOutputs { sweep, spectrum, fidelity })
}

/// Calibrations used by one mitigated derivation.
struct MitigationSetup {
    sweep_calibration: Option<CalibrationMatrix>,
    pop_calibration: Option<CalibrationMatrix>,
    confusions: Option<Vec<[[f64; 2]; 2]>>,
}

fn readout_for_plan(device: &LoadedDevice, plan: &EntanglingPlan) -> Result<ReadoutModel> {
    let fidelities: Vec<f64> =
        plan.qubits().iter().map(|&q| device.model.qubit(q).readout_fidelity).collect();
    ReadoutModel::symmetric(&fidelities).map_err(|e| anyhow::anyhow!("{e}"))
}

fn mitigation_setup(
    spec: &ExperimentSpec,
    device: &LoadedDevice,
    plan: &EntanglingPlan,
    sweep_counts: &[Vec<CountsTable>],
    pop_counts: &[CountsTable],
) -> Result<MitigationSetup> {
    let n = plan.num_qubits();
    let cal_seed = mix_label(spec.seed, "calibration");
    match &spec.mitigation {
        MitigationMode::None => {
            Ok(MitigationSetup { sweep_calibration: None, pop_calibration: None, confusions: None })
        }
        MitigationMode::Full => {
            if n > 10 {
                bail!("full calibration supports at most 10 qubits; use truncated or tensored");
            }
            let readout = readout_for_plan(device, plan)?;
            let cal = build_full_calibration(n, &readout, spec.calibration_shots, cal_seed)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            Ok(MitigationSetup {
                sweep_calibration: Some(cal.clone()),
                pop_calibration: Some(cal),
                confusions: None,
            })
        }
        MitigationMode::Truncated(k) => {
            let readout = readout_for_plan(device, plan)?;
            let flat: Vec<CountsTable> =
                sweep_counts.iter().flat_map(|reps| reps.iter().cloned()).collect();
            let labels =
                select_truncation_states(&flat, *k).map_err(|e| anyhow::anyhow!("{e}"))?;
            let sweep_cal =
                build_truncated_calibration(&labels, n, &readout, spec.calibration_shots, cal_seed)
                    .map_err(|e| anyhow::anyhow!("{e}"))?;
            let pop_cal = if pop_counts.is_empty() {
                None
            } else {
                let labels = select_truncation_states(pop_counts, *k)
                    .map_err(|e| anyhow::anyhow!("{e}"))?;
                Some(
                    build_truncated_calibration(
                        &labels,
                        n,
                        &readout,
                        spec.calibration_shots,
                        mix(cal_seed, 1),
                    )
                    .map_err(|e| anyhow::anyhow!("{e}"))?,
                )
            };
            Ok(MitigationSetup {
                sweep_calibration: Some(sweep_cal),
                pop_calibration: pop_cal,
                confusions: None,
            })
        }
        MitigationMode::Tensored => {
            let readout = readout_for_plan(device, plan)?;
            let confusions: Vec<[[f64; 2]; 2]> =
                (0..n).map(|q| *readout.confusion(q)).collect();
            Ok(MitigationSetup {
                sweep_calibration: None,
                pop_calibration: None,
                confusions: Some(confusions),
            })
        }
    }
}

fn correct_table(
    counts: &CountsTable,
    setup: &MitigationSetup,
    use_pop_calibration: bool,
) -> Result<MitigatedDistribution> {
    if let Some(confusions) = &setup.confusions {
        return tensored_mitigate(counts, confusions).map_err(|e| anyhow::anyhow!("{e}"));
    }
    let calibration = if use_pop_calibration {
        setup.pop_calibration.as_ref().context("no populations calibration")?
    } else {
        setup.sweep_calibration.as_ref().context("no sweep calibration")?
    };
    mitigate(counts, calibration).map_err(|e| anyhow::anyhow!("{e}"))
}

#[derive(Debug, Clone, Serialize)]
struct GhzDerived {
    raw: ChannelOutputs,
    mitigated: Option<ChannelOutputs>,
    populations: Option<Populations>,
    populations_mitigated: Option<Populations>,
    /// Largest out-of-label-set count mass seen during mitigation.
    mitigation_dropped_mass_max: Option<f64>,
}

fn derive_ghz(
    spec: &ExperimentSpec,
    device: &LoadedDevice,
    plan: &EntanglingPlan,
    grid: &PhiGrid,
    exec: &Execution,
) -> Result<(GhzDerived, Option<String>)> {
    let n = plan.num_qubits();
    match exec {
        Execution::Exact { sweep, pops } => {
            let values: Vec<f64> = sweep
                .iter()
                .map(|probs| {
                    probs.iter().find(|&&(bits, _)| bits == 0).map(|&(_, p)| p).unwrap_or(0.0)
                })
                .collect();
            let populations = pops.as_ref().map(|probs| {
                let p0 = probs.iter().find(|&&(b, _)| b == 0).map(|&(_, p)| p).unwrap_or(0.0);
                let ones = (1u64 << n) - 1;
                let p1 = probs.iter().find(|&&(b, _)| b == ones).map(|&(_, p)| p).unwrap_or(0.0);
                Populations {
                    p_all_zero: p0,
                    p_all_one: p1,
                    p_all_zero_stderr: None,
                    p_all_one_stderr: None,
                }
            });
            let raw = channel_outputs(grid, &[values], n, populations.as_ref())?;
            Ok((
                GhzDerived {
                    raw,
                    mitigated: None,
                    populations,
                    populations_mitigated: None,
                    mitigation_dropped_mass_max: None,
                },
                None,
            ))
        }
        Execution::Sampled { sweep, pops } => {
            let reps = spec.repetitions as usize;
            let mut raw_values = vec![Vec::with_capacity(grid.len()); reps];
            for phi_counts in sweep {
                for (r, counts) in phi_counts.iter().enumerate() {
                    raw_values[r].push(counts.frequency(0));
                }
            }
            let populations = (!pops.is_empty()).then(|| {
                let ones = (1u64 << n) - 1;
                let p0: Vec<f64> = pops.iter().map(|c| c.frequency(0)).collect();
                let p1: Vec<f64> = pops.iter().map(|c| c.frequency(ones)).collect();
                populations_from_freqs(&p0, &p1)
            });
            let raw = channel_outputs(grid, &raw_values, n, populations.as_ref())?;

            if spec.mitigation == MitigationMode::None {
                return Ok((
                    GhzDerived {
                        raw,
                        mitigated: None,
                        populations,
                        populations_mitigated: None,
                        mitigation_dropped_mass_max: None,
                    },
                    None,
                ));
            }

            let setup = mitigation_setup(spec, device, plan, sweep, pops)?;
            let mut dropped_max = 0.0f64;
            let mut mitigated_values = vec![Vec::with_capacity(grid.len()); reps];
            for phi_counts in sweep {
                for (r, counts) in phi_counts.iter().enumerate() {
                    let corrected = correct_table(counts, &setup, false)?;
                    dropped_max = dropped_max.max(corrected.dropped_mass);
                    mitigated_values[r].push(corrected.probability_of(0));
                }
            }
            let populations_mitigated = if pops.is_empty() {
                None
            } else {
                let ones = (1u64 << n) - 1;
                let mut p0 = Vec::with_capacity(pops.len());
                let mut p1 = Vec::with_capacity(pops.len());
                for counts in pops {
                    let corrected = correct_table(counts, &setup, true)?;
                    dropped_max = dropped_max.max(corrected.dropped_mass);
                    p0.push(corrected.probability_of(0));
                    p1.push(corrected.probability_of(ones));
                }
                Some(populations_from_freqs(&p0, &p1))
            };
            let mitigated =
                channel_outputs(grid, &mitigated_values, n, populations_mitigated.as_ref())?;
            let calibration_csv = setup.sweep_calibration.as_ref().map(CalibrationMatrix::to_csv);
            Ok((
                GhzDerived {
                    raw,
                    mitigated: Some(mitigated),
                    populations,
                    populations_mitigated,
                    mitigation_dropped_mass_max: Some(dropped_max),
                },
                calibration_csv,
            ))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct ParityOutputs {
    sweep: SweepResult,
    coherence: f64,
    coherence_stderr: Option<f64>,
    fidelity: f64,
    fidelity_stderr: Option<f64>,
}

fn parity_outputs(
    grid: &PhiGrid,
    per_rep_values: &[Vec<f64>],
    num_qubits: usize,
    populations: &Populations,
) -> Result<ParityOutputs> {
    let sweeps: Vec<SweepResult> = per_rep_values
        .iter()
        .map(|values| SweepResult::new(grid.clone(), values.clone()))
        .collect::<Result<_, _>>()
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let sweep = aggregate_repetitions(&sweeps).map_err(|e| anyhow::anyhow!("{e}"))?;
    let (coherence, coherence_stderr) =
        parity_coherence(&sweep, num_qubits).map_err(|e| anyhow::anyhow!("{e}"))?;
    let fidelity =
        (0.5 * (populations.p_all_zero + populations.p_all_one + coherence)).clamp(0.0, 1.0);
    let fidelity_stderr = match (
        populations.p_all_zero_stderr,
        populations.p_all_one_stderr,
        coherence_stderr,
    ) {
        (Some(a), Some(b), Some(c)) => Some(0.5 * (a * a + b * b + c * c).sqrt()),
        _ => None,
    };
    Ok(ParityOutputs { sweep, coherence, coherence_stderr, fidelity, fidelity_stderr })
}

fn mitigated_parity(dist: &MitigatedDistribution) -> f64 {
    dist.labels
        .iter()
        .zip(&dist.probabilities)
        .map(|(&bits, &p)| if bits.count_ones() % 2 == 0 { p } else { -p })
        .sum()
}

#[derive(Debug, Clone, Serialize)]
struct ParityDerived {
    raw: ParityOutputs,
    mitigated: Option<ParityOutputs>,
    populations: Populations,
    populations_mitigated: Option<Populations>,
}

fn derive_parity(
    spec: &ExperimentSpec,
    device: &LoadedDevice,
    plan: &EntanglingPlan,
    grid: &PhiGrid,
    exec: &Execution,
) -> Result<ParityDerived> {
    let n = plan.num_qubits();
    if matches!(spec.mitigation, MitigationMode::Truncated(_)) {
        bail!(
            "truncated calibration cannot correct parity-oscillation experiments: their \
             outcomes spread over all basis states; use full or tensored mitigation"
        );
    }
    match exec {
        Execution::Exact { sweep, pops } => {
            let values: Vec<f64> = sweep
                .iter()
                .map(|probs| {
                    probs
                        .iter()
                        .map(|&(bits, p)| if bits.count_ones() % 2 == 0 { p } else { -p })
                        .sum()
                })
                .collect();
            let probs = pops.as_ref().context("parity runs always measure populations")?;
            let ones = (1u64 << n) - 1;
            let populations = Populations {
                p_all_zero: probs.iter().find(|&&(b, _)| b == 0).map(|&(_, p)| p).unwrap_or(0.0),
                p_all_one: probs.iter().find(|&&(b, _)| b == ones).map(|&(_, p)| p).unwrap_or(0.0),
                p_all_zero_stderr: None,
                p_all_one_stderr: None,
            };
            let raw = parity_outputs(grid, &[values], n, &populations)?;
            Ok(ParityDerived { raw, mitigated: None, populations, populations_mitigated: None })
        }
        Execution::Sampled { sweep, pops } => {
            let reps = spec.repetitions as usize;
            let mut raw_values = vec![Vec::with_capacity(grid.len()); reps];
            for phi_counts in sweep {
                for (r, counts) in phi_counts.iter().enumerate() {
                    raw_values[r].push(counts.parity_expectation());
                }
            }
            let ones = (1u64 << n) - 1;
            let p0: Vec<f64> = pops.iter().map(|c| c.frequency(0)).collect();
            let p1: Vec<f64> = pops.iter().map(|c| c.frequency(ones)).collect();
            let populations = populations_from_freqs(&p0, &p1);
            let raw = parity_outputs(grid, &raw_values, n, &populations)?;

            if spec.mitigation == MitigationMode::None {
                return Ok(ParityDerived {
                    raw,
                    mitigated: None,
                    populations,
                    populations_mitigated: None,
                });
            }
            let setup = mitigation_setup(spec, device, plan, sweep, pops)?;
            let mut mitigated_values = vec![Vec::with_capacity(grid.len()); reps];
            for phi_counts in sweep {
                for (r, counts) in phi_counts.iter().enumerate() {
                    let corrected = correct_table(counts, &setup, false)?;
                    mitigated_values[r].push(mitigated_parity(&corrected));
                }
            }
            let mut mp0 = Vec::with_capacity(pops.len());
            let mut mp1 = Vec::with_capacity(pops.len());
            for counts in pops {
                let corrected = correct_table(counts, &setup, true)?;
                mp0.push(corrected.probability_of(0));
                mp1.push(corrected.probability_of(ones));
            }
            let populations_mitigated = populations_from_freqs(&mp0, &mp1);
            let mitigated = parity_outputs(grid, &mitigated_values, n, &populations_mitigated)?;
            Ok(ParityDerived {
                raw,
                mitigated: Some(mitigated),
                populations,
                populations_mitigated: Some(populations_mitigated),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Persistence helpers shared by the commands.
// ---------------------------------------------------------------------------

fn persist_execution(out_dir: &Path, exec: &Execution, num_qubits: usize) -> Result<DataFiles> {
    match exec {
        Execution::Sampled { sweep, pops } => {
            let mut sweep_files = Vec::with_capacity(sweep.len());
            for (j, reps) in sweep.iter().enumerate() {
                let mut rep_files = Vec::with_capacity(reps.len());
                for (r, counts) in reps.iter().enumerate() {
                    let rel = format!("counts/phi{j:03}_rep{r:02}.txt");
                    write_atomic(&out_dir.join(&rel), &counts_to_text(counts))?;
                    rep_files.push(rel);
                }
                sweep_files.push(rep_files);
            }
            let mut pop_files = Vec::with_capacity(pops.len());
            for (r, counts) in pops.iter().enumerate() {
                let rel = format!("counts/pop_rep{r:02}.txt");
                write_atomic(&out_dir.join(&rel), &counts_to_text(counts))?;
                pop_files.push(rel);
            }
            Ok(DataFiles::Sampled { sweep: sweep_files, populations: pop_files })
        }
        Execution::Exact { sweep, pops } => {
            let mut sweep_files = Vec::with_capacity(sweep.len());
            for (j, probs) in sweep.iter().enumerate() {
                let rel = format!("probs/phi{j:03}.txt");
                write_atomic(&out_dir.join(&rel), &probs_to_text(num_qubits, probs))?;
                sweep_files.push(rel);
            }
            let pop_file = match pops {
                Some(probs) => {
                    let rel = "probs/pop.txt".to_string();
                    write_atomic(&out_dir.join(&rel), &probs_to_text(num_qubits, probs))?;
                    Some(rel)
                }
                None => None,
            };
            Ok(DataFiles::Exact { sweep: sweep_files, populations: pop_file })
        }
    }
}

fn load_execution(record_dir: &Path, data: &DataFiles) -> Result<Execution> {
    match data {
        DataFiles::Sampled { sweep, populations } => {
            let mut sweep_counts = Vec::with_capacity(sweep.len());
            for rep_files in sweep {
                let mut reps = Vec::with_capacity(rep_files.len());
                for rel in rep_files {
                    reps.push(read_counts_file(&record_dir.join(rel))?);
                }
                sweep_counts.push(reps);
            }
            let mut pops = Vec::with_capacity(populations.len());
            for rel in populations {
                pops.push(read_counts_file(&record_dir.join(rel))?);
            }
            Ok(Execution::Sampled { sweep: sweep_counts, pops })
        }
        DataFiles::Exact { sweep, populations } => {
            let mut sweep_probs = Vec::with_capacity(sweep.len());
            for rel in sweep {
                let (_, probs) = read_probs_file(&record_dir.join(rel))?;
                sweep_probs.push(probs);
            }
            let pops = match populations {
                Some(rel) => Some(read_probs_file(&record_dir.join(rel))?.1),
                None => None,
            };
            Ok(Execution::Exact { sweep: sweep_probs, pops })
        }
    }
}

fn write_sweep_csv(
    out_dir: &Path,
    name: &str,
    grid: &PhiGrid,
    raw: &SweepResult,
    mitigated: Option<&SweepResult>,
) -> Result<()> {
    let mut csv = String::from("phi_index,phi_radians,raw,raw_stderr,mitigated,mitigated_stderr\n");
    for (j, &phi) in grid.angles().iter().enumerate() {
        let raw_err = raw.stderr.as_ref().map(|e| e[j]);
        let (mit, mit_err) = match mitigated {
            Some(m) => (Some(m.values[j]), m.stderr.as_ref().map(|e| e[j])),
            None => (None, None),
        };
        csv.push_str(&format!(
            "{j},{phi},{},{},{},{}\n",
            raw.values[j],
            csv_opt(raw_err),
            csv_opt(mit),
            csv_opt(mit_err)
        ));
    }
    write_atomic(&out_dir.join(name), &csv)
}

fn write_spectrum_csv(
    out_dir: &Path,
    raw: &MqcSpectrum,
    mitigated: Option<&MqcSpectrum>,
) -> Result<()> {
    let mut csv = String::from("q,raw,raw_stderr,mitigated,mitigated_stderr\n");
    for q in 0..=raw.q_max {
        let (mit, mit_err) = match mitigated {
            Some(m) => (Some(m.amplitude(q)), m.stderr(q)),
            None => (None, None),
        };
        csv.push_str(&format!(
            "{q},{},{},{},{}\n",
            raw.amplitude(q),
            csv_opt(raw.stderr(q)),
            csv_opt(mit),
            csv_opt(mit_err)
        ));
    }
    write_atomic(&out_dir.join("spectrum.csv"), &csv)
}

// ---------------------------------------------------------------------------
// Commands.
// ---------------------------------------------------------------------------

pub fn cmd_ghz_mqc(spec: &ExperimentSpec, out_dir: &Path) -> Result<RunSummary> {
    spec.validate()?;
    let started = Instant::now();
    let device = load_device(&spec.device_path)?;
    let (plan, grid) = resolve_plan(spec, &device)?;
    let noise_warnings = build_noise(spec, &device, &plan)?.fill_warnings.clone();
    let exec = execute(SweepKind::Mqc, spec, &device, &plan, &grid)?;
    std::fs::create_dir_all(out_dir)?;
    let data = persist_execution(out_dir, &exec, plan.num_qubits())?;
    let (derived, calibration_csv) = derive_ghz(spec, &device, &plan, &grid, &exec)?;
    write_sweep_csv(
        out_dir,
        "sweep.csv",
        &grid,
        &derived.raw.sweep,
        derived.mitigated.as_ref().map(|m| &m.sweep),
    )?;
    write_spectrum_csv(
        out_dir,
        &derived.raw.spectrum,
        derived.mitigated.as_ref().map(|m| &m.spectrum),
    )?;
    if let Some(csv) = calibration_csv {
        write_atomic(&out_dir.join("calibration.csv"), &csv)?;
    }
    let derived_value = serde_json::to_value(&derived)?;
    let manifest = Manifest {
        tool_version: TOOL_VERSION,
        command: "ghz-mqc",
        spec,
        plan: PlanSnapshot::of(&plan),
        grid: &grid,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        fill_warnings: noise_warnings,
        data,
        derived: derived_value.clone(),
    };
    let manifest_path = write_manifest(out_dir, &manifest)?;
    Ok(RunSummary { out_dir: out_dir.to_path_buf(), manifest_path, derived: derived_value })
}

pub fn cmd_parity(spec: &ExperimentSpec, out_dir: &Path) -> Result<RunSummary> {
    spec.validate()?;
    if spec.variant != VariantArg::Ghz {
        bail!("parity oscillations are defined for the GHZ preparation");
    }
    if spec.refocus {
        bail!("the refocusing pulse applies to the MQC sequence, not parity measurements");
    }
    if matches!(spec.mitigation, MitigationMode::Truncated(_)) {
        bail!(
            "truncated calibration cannot correct parity-oscillation experiments: their \
             outcomes spread over all basis states; use full or tensored mitigation"
        );
    }
    let started = Instant::now();
    let device = load_device(&spec.device_path)?;
    let (plan, grid) = resolve_plan(spec, &device)?;
    let noise_warnings = build_noise(spec, &device, &plan)?.fill_warnings.clone();
    let exec = execute(SweepKind::Parity, spec, &device, &plan, &grid)?;
    std::fs::create_dir_all(out_dir)?;
    let data = persist_execution(out_dir, &exec, plan.num_qubits())?;
    let derived = derive_parity(spec, &device, &plan, &grid, &exec)?;
    write_sweep_csv(
        out_dir,
        "parity.csv",
        &grid,
        &derived.raw.sweep,
        derived.mitigated.as_ref().map(|m| &m.sweep),
    )?;
    let derived_value = serde_json::to_value(&derived)?;
    let manifest = Manifest {
        tool_version: TOOL_VERSION,
        command: "parity",
        spec,
        plan: PlanSnapshot::of(&plan),
        grid: &grid,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        fill_warnings: noise_warnings,
        data,
        derived: derived_value.clone(),
    };
    let manifest_path = write_manifest(out_dir, &manifest)?;
    Ok(RunSummary { out_dir: out_dir.to_path_buf(), manifest_path, derived: derived_value })
}

#[derive(Debug, Clone, Serialize)]
struct HistogramRow {
    excitations: u32,
    weight_selected: f64,
    weight_all: f64,
}

#[derive(Debug, Clone, Serialize)]
struct StudyDerived {
    rows: Vec<ConvergenceRow>,
    full_reference: Option<ConvergenceRow>,
    histogram: Vec<HistogramRow>,
}

fn derive_study(
    spec: &ExperimentSpec,
    device: &LoadedDevice,
    plan: &EntanglingPlan,
    grid: &PhiGrid,
    exec: &Execution,
    k_values: &[usize],
) -> Result<StudyDerived> {
    let n = plan.num_qubits();
    let Execution::Sampled { sweep, .. } = exec else {
        bail!("the truncation study needs sampled counts; drop --exact");
    };
    let readout = readout_for_plan(device, plan)?;
    let cal_seed = mix_label(spec.seed, "calibration");
    let rows = convergence_study(
        sweep,
        grid,
        n,
        k_values,
        &readout,
        spec.calibration_shots,
        cal_seed,
    )
    .map_err(|e| anyhow::anyhow!("{e}"))?;

    let full_reference = if n <= 10 {
        let cal = build_full_calibration(n, &readout, spec.calibration_shots, cal_seed)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        let reps = spec.repetitions as usize;
        let mut values = vec![Vec::with_capacity(grid.len()); reps];
        for phi_counts in sweep {
            for (r, counts) in phi_counts.iter().enumerate() {
                let corrected = mitigate(counts, &cal).map_err(|e| anyhow::anyhow!("{e}"))?;
                values[r].push(corrected.probability_of(0));
            }
        }
        let outputs = channel_outputs(grid, &values, n, None)?;
        Some(ConvergenceRow {
            k: 1 << n,
            i_zero: outputs.spectrum.amplitude(0),
            i_zero_stderr: outputs.spectrum.stderr(0),
            i_top: outputs.spectrum.amplitude(n),
            i_top_stderr: outputs.spectrum.stderr(n),
        })
    } else {
        None
    };

    // Excitation-number makeup of the heaviest states versus everything.
    let k_max = k_values.iter().copied().max().unwrap_or(256);
    let flat: Vec<CountsTable> = sweep.iter().flat_map(|reps| reps.iter().cloned()).collect();
    let selected = select_truncation_states(&flat, k_max).map_err(|e| anyhow::anyhow!("{e}"))?;
    let selected: std::collections::BTreeSet<u64> = selected.into_iter().collect();
    let mut weight_selected = vec![0.0f64; n + 1];
    let mut weight_all = vec![0.0f64; n + 1];
    let mut total = 0.0f64;
    for table in &flat {
        for (bits, c) in table.iter() {
            let e = bits.count_ones() as usize;
            total += c as f64;
            weight_all[e] += c as f64;
            if selected.contains(&bits) {
                weight_selected[e] += c as f64;
            }
        }
    }
    let histogram = (0..=n)
        .map(|e| HistogramRow {
            excitations: e as u32,
            weight_selected: weight_selected[e] / total,
            weight_all: weight_all[e] / total,
        })
        .collect();
    Ok(StudyDerived { rows, full_reference, histogram })
}

pub fn cmd_mitigation_study(
    spec: &ExperimentSpec,
    k_values: &[usize],
    out_dir: &Path,
) -> Result<RunSummary> {
    spec.validate()?;
    if k_values.is_empty() {
        bail!("at least one truncation size is required");
    }
    let mut sorted = k_values.to_vec();
    sorted.sort_unstable();
    let started = Instant::now();
    let device = load_device(&spec.device_path)?;
    let (plan, grid) = resolve_plan(spec, &device)?;
    let noise_warnings = build_noise(spec, &device, &plan)?.fill_warnings.clone();
    let exec = execute(SweepKind::Mqc, spec, &device, &plan, &grid)?;
    std::fs::create_dir_all(out_dir)?;
    let data = persist_execution(out_dir, &exec, plan.num_qubits())?;
    let derived = derive_study(spec, &device, &plan, &grid, &exec, &sorted)?;

    let mut study_csv = String::from("k,i_zero,i_zero_stderr,i_top,i_top_stderr\n");
    for row in derived.rows.iter().chain(derived.full_reference.iter()) {
        study_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.k,
            row.i_zero,
            csv_opt(row.i_zero_stderr),
            row.i_top,
            csv_opt(row.i_top_stderr)
        ));
    }
    write_atomic(&out_dir.join("study.csv"), &study_csv)?;
    let mut hist_csv = String::from("excitations,weight_selected,weight_all\n");
    for row in &derived.histogram {
        hist_csv.push_str(&format!(
            "{},{},{}\n",
            row.excitations, row.weight_selected, row.weight_all
        ));
    }
    write_atomic(&out_dir.join("histogram.csv"), &hist_csv)?;

    let derived_value = serde_json::to_value(&derived)?;
    let manifest = Manifest {
        tool_version: TOOL_VERSION,
        command: "mitigation-study",
        spec,
        plan: PlanSnapshot::of(&plan),
        grid: &grid,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        fill_warnings: noise_warnings,
        data,
        derived: derived_value.clone(),
    };
    let manifest_path = write_manifest(out_dir, &manifest)?;
    Ok(RunSummary { out_dir: out_dir.to_path_buf(), manifest_path, derived: derived_value })
}

/// Result of replaying a stored record.
pub struct ReplayReport {
    pub command: String,
    pub matches: bool,
    pub differences: Vec<String>,
}

/// Recompute every derived quantity from the persisted counts and compare
/// against the stored manifest, within 1e-12 on numeric fields. An optional
/// mitigation override recomputes under a different correction mode, in
/// which case divergence is the expected outcome.
pub fn cmd_replay(
    record_dir: &Path,
    mitigation_override: Option<MitigationMode>,
) -> Result<ReplayReport> {
    let manifest = read_manifest(record_dir)?;
    let command = manifest
        .get("command")
        .and_then(Value::as_str)
        .context("manifest missing command")?
        .to_string();
    let mut spec: ExperimentSpec =
        serde_json::from_value(manifest.get("spec").context("manifest missing spec")?.clone())?;
    if let Some(mode) = mitigation_override {
        spec.mitigation = mode;
    }
    let data: DataFiles =
        serde_json::from_value(manifest.get("data").context("manifest missing data")?.clone())?;
    let plan_snapshot: PlanSnapshot =
        serde_json::from_value(manifest.get("plan").context("manifest missing plan")?.clone())?;
    let plan = EntanglingPlan::new(plan_snapshot.qubits, plan_snapshot.cx_moments)
        .map_err(|e| anyhow::anyhow!("stored plan invalid: {e}"))?;
    let grid = phi_grid(plan.num_qubits()).map_err(|e| anyhow::anyhow!("{e}"))?;
    let device = load_device(&spec.device_path)?;
    let exec = load_execution(record_dir, &data)?;

    let recomputed: Value = match command.as_str() {
        "ghz-mqc" => {
            let (derived, _) = derive_ghz(&spec, &device, &plan, &grid, &exec)?;
            serde_json::to_value(&derived)?
        }
        "parity" => {
            let derived = derive_parity(&spec, &device, &plan, &grid, &exec)?;
            serde_json::to_value(&derived)?
        }
        "mitigation-study" => {
            let stored_rows = manifest
                .get("derived")
                .and_then(|d| d.get("rows"))
                .and_then(Value::as_array)
                .context("stored study rows missing")?;
            let k_values: Vec<usize> = stored_rows
                .iter()
                .filter_map(|r| r.get("k").and_then(Value::as_u64))
                .map(|k| k as usize)
                .collect();
            let derived = derive_study(&spec, &device, &plan, &grid, &exec, &k_values)?;
            serde_json::to_value(&derived)?
        }
        other => bail!("unknown command '{other}' in manifest"),
    };

    let stored = manifest.get("derived").context("manifest missing derived outputs")?;
    let mut differences = Vec::new();
    compare_json(stored, &recomputed, 1e-12, "derived", &mut differences);
    Ok(ReplayReport { command, matches: differences.is_empty(), differences })
}

//! Config ingestion: the device description file and the experiment spec.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mqc_sim::circuits::{DeviceModel, EdgeParams, QubitParams};

#[derive(Debug, Deserialize)]
struct DeviceFile {
    #[serde(default)]
    entangling_order: Vec<usize>,
    qubits: Vec<QubitEntry>,
    edges: Vec<EdgeEntry>,
}

#[derive(Debug, Deserialize)]
struct QubitEntry {
    index: usize,
    frequency_ghz: f64,
    t1_us: f64,
    t2_us: f64,
    readout_fidelity: f64,
    error_1q: f64,
    duration_1q_ns: f64,
}

#[derive(Debug, Deserialize)]
struct EdgeEntry {
    qubits: [usize; 2],
    error_2q: f64,
    duration_2q_ns: f64,
}

/// A loaded device plus the preferred qubit ordering for auto-planned runs.
#[derive(Debug, Clone)]
pub struct LoadedDevice {
    pub model: DeviceModel,
    pub entangling_order: Vec<usize>,
}

pub fn load_device(path: &Path) -> Result<LoadedDevice> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading device config {}", path.display()))?;
    let file: DeviceFile = toml::from_str(&text)
        .with_context(|| format!("parsing device config {}", path.display()))?;
    let n = file.qubits.len();
    let mut slots: Vec<Option<QubitParams>> = vec![None; n];
    for q in &file.qubits {
        if q.index >= n {
            bail!("qubit index {} out of range for {} qubits", q.index, n);
        }
        if slots[q.index].is_some() {
            bail!("duplicate qubit index {}", q.index);
        }
        slots[q.index] = Some(QubitParams {
            frequency_ghz: q.frequency_ghz,
            t1_us: q.t1_us,
            t2_us: q.t2_us,
            readout_fidelity: q.readout_fidelity,
            error_1q: q.error_1q,
            duration_1q_ns: q.duration_1q_ns,
        });
    }
    let qubits: Vec<QubitParams> = slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| anyhow::anyhow!("missing qubit index {i}")))
        .collect::<Result<_>>()?;
    let mut model = DeviceModel::new(qubits).map_err(|e| anyhow::anyhow!("{e}"))?;
    for e in &file.edges {
        model
            .add_edge(
                e.qubits[0],
                e.qubits[1],
                EdgeParams { error_2q: e.error_2q, duration_2q_ns: e.duration_2q_ns },
            )
            .map_err(|err| anyhow::anyhow!("{err}"))?;
    }
    let entangling_order = if file.entangling_order.is_empty() {
        (0..n).collect()
    } else {
        file.entangling_order
    };
    for &q in &entangling_order {
        if q >= n {
            bail!("entangling_order references qubit {q} beyond the device");
        }
    }
    Ok(LoadedDevice { model, entangling_order })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantArg {
    Ghz,
    Star,
    Complete,
}

impl VariantArg {
    pub fn to_variant(self) -> mqc_sim::circuits::MqcVariant {
        match self {
            VariantArg::Ghz => mqc_sim::circuits::MqcVariant::Ghz,
            VariantArg::Star => mqc_sim::circuits::MqcVariant::StarGraph,
            VariantArg::Complete => mqc_sim::circuits::MqcVariant::CompleteGraph,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "k")]
pub enum MitigationMode {
    None,
    Full,
    Truncated(usize),
    Tensored,
}

impl MitigationMode {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "none" => Ok(MitigationMode::None),
            "full" => Ok(MitigationMode::Full),
            "tensored" => Ok(MitigationMode::Tensored),
            other => {
                if let Some(k) = other.strip_prefix("truncated:") {
                    let k: usize = k.parse().context("truncated mitigation size")?;
                    if k == 0 {
                        bail!("truncated mitigation requires k >= 1");
                    }
                    Ok(MitigationMode::Truncated(k))
                } else {
                    bail!("unknown mitigation mode '{other}' (none|full|truncated:K|tensored)")
                }
            }
        }
    }
}

/// Which noise processes the run simulates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseFlags {
    pub gates: bool,
    pub idle: bool,
    pub readout: bool,
    pub drift_sigma: f64,
}

impl NoiseFlags {
    pub fn any(&self) -> bool {
        self.gates || self.idle || self.readout || self.drift_sigma > 0.0
    }

    pub fn toggles(&self) -> mqc_sim::noise::NoiseToggles {
        mqc_sim::noise::NoiseToggles {
            gate_errors: self.gates,
            idle: self.idle,
            drift_sigma: self.drift_sigma,
            readout: self.readout,
        }
    }
}

/// Everything one run needs; snapshotted verbatim into the run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub device_path: PathBuf,
    /// Explicit physical qubits (root first); overrides `num_qubits`.
    pub qubits: Option<Vec<usize>>,
    /// Prefix length of the device's entangling order.
    pub num_qubits: Option<usize>,
    pub variant: VariantArg,
    pub refocus: bool,
    pub shots: u64,
    pub repetitions: u64,
    pub seed: u64,
    pub mitigation: MitigationMode,
    pub noise: NoiseFlags,
    /// Use exact outcome probabilities instead of sampling; requires a
    /// noiseless configuration and disables mitigation.
    pub exact: bool,
    /// Shots per prepared basis state when building calibration matrices;
    /// zero means exact calibration entries.
    pub calibration_shots: u64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            bail!("shots must be at least 1");
        }
        if self.repetitions == 0 {
            bail!("repetitions must be at least 1");
        }
        if self.qubits.is_none() && self.num_qubits.is_none() {
            bail!("either a qubit list or a qubit count is required");
        }
        if let Some(n) = self.num_qubits {
            if n == 0 {
                bail!("qubit count must be at least 1");
            }
        }
        if self.exact && self.noise.any() {
            bail!("exact probabilities require all noise disabled");
        }
        if self.exact && self.mitigation != MitigationMode::None {
            bail!("exact probabilities produce no counts to mitigate");
        }
        Ok(())
    }

    /// Resolve the physical qubit list for this run.
    pub fn resolve_qubits(&self, device: &LoadedDevice) -> Result<Vec<usize>> {
        if let Some(list) = &self.qubits {
            return Ok(list.clone());
        }
        let n = self.num_qubits.expect("validated");
        if n > device.entangling_order.len() {
            bail!(
                "requested {n} qubits but the device entangling order lists {}",
                device.entangling_order.len()
            );
        }
        Ok(device.entangling_order[..n].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_config_matches_preset() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/device20.toml");
        let loaded = load_device(&path).unwrap();
        assert_eq!(loaded.model, mqc_sim::presets::example_20q());
        assert_eq!(
            loaded.entangling_order,
            mqc_sim::presets::example_20q_entangling_order().to_vec()
        );
    }

    #[test]
    fn mitigation_mode_parsing() {
        assert_eq!(MitigationMode::parse("none").unwrap(), MitigationMode::None);
        assert_eq!(MitigationMode::parse("full").unwrap(), MitigationMode::Full);
        assert_eq!(
            MitigationMode::parse("truncated:256").unwrap(),
            MitigationMode::Truncated(256)
        );
        assert_eq!(MitigationMode::parse("tensored").unwrap(), MitigationMode::Tensored);
        assert!(MitigationMode::parse("truncated:0").is_err());
        assert!(MitigationMode::parse("bogus").is_err());
    }
}

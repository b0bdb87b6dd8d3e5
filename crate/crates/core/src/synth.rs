//! Synthetic plants with a known fault origin.
//!
//! Devices are chained through streams (`device -Output-> stream -Output->
//! device`), and each device carries a handful of measured variables linked
//! by `State` / `State of`. Data come from a linear-Gaussian structural
//! model: a device's latent state is a weighted sum of the mean deviation of
//! its upstream devices' variables plus noise, and each variable is a scaled
//! copy of its device's latent state plus noise. A shift injected on a
//! variable therefore also moves everything downstream of it.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::DataMatrix;
use crate::kgraph::{
    EntityDecl, EntityKind, GraphDocument, GraphError, KnowledgeGraph, RelationDecl, TripleDecl,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid plant spec: {0}")]
    Spec(String),
    #[error("invalid fault injection: {0}")]
    Injection(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationParams {
    pub d: f64,
    pub o: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub n_devices: usize,
    /// Inclusive bounds on outgoing streams per device.
    pub streams_per_device: (usize, usize),
    /// Inclusive bounds on measured variables per device.
    pub variables_per_device: (usize, usize),
    pub state: RelationParams,
    pub output: RelationParams,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for PlantSpec {
    fn default() -> Self {
        Self {
            n_devices: 3,
            streams_per_device: (1, 1),
            variables_per_device: (2, 2),
            state: RelationParams { d: 1.0, o: 1 },
            output: RelationParams { d: 3.0, o: 5 },
            noise_scale: 1.0,
            seed: 0,
        }
    }
}

impl PlantSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Spec(m.to_string()));
        if self.n_devices < 1 {
            return bad("n_devices must be >= 1");
        }
        let (smin, smax) = self.streams_per_device;
        let (vmin, vmax) = self.variables_per_device;
        if smin < 1 || smax < smin {
            return bad("streams_per_device must satisfy 1 <= min <= max");
        }
        if vmin < 1 || vmax < vmin {
            return bad("variables_per_device must satisfy 1 <= min <= max");
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return bad("noise_scale must be positive");
        }
        for r in [self.state, self.output] {
            if !(r.d >= 0.0 && r.d.is_finite()) || r.o < 0 {
                return bad("relation parameters must be nonnegative");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableModel {
    pub id: String,
    pub mean: f64,
    pub loading: f64,
    pub noise_sd: f64,
    /// Stationary standard deviation under normal operation.
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceModel {
    pub id: String,
    /// `(upstream device index, weight)`; upstream indices are always lower.
    pub inputs: Vec<(usize, f64)>,
    pub latent_sd: f64,
    pub variables: Vec<VariableModel>,
}

/// The structural model behind a generated plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    pub devices: Vec<DeviceModel>,
}

impl PlantModel {
    pub fn columns(&self) -> Vec<String> {
        self.devices
            .iter()
            .flat_map(|d| d.variables.iter().map(|v| v.id.clone()))
            .collect()
    }

    pub fn variable(&self, id: &str) -> Option<&VariableModel> {
        self.devices.iter().flat_map(|d| &d.variables).find(|v| v.id == id)
    }

    /// Device id owning variable `id`.
    pub fn owner(&self, id: &str) -> Option<&str> {
        self.devices
            .iter()
            .find(|d| d.variables.iter().any(|v| v.id == id))
            .map(|d| d.id.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Step,
    Drift,
    RandomVariation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultInjection {
    /// A variable id, or a device id for a common-mode shift on all its variables.
    pub root: String,
    pub kind: FaultKind,
    /// In multiples of each affected variable's normal standard deviation.
    pub magnitude: f64,
    pub start: usize,
    pub duration: usize,
}

pub fn device_id(i: usize) -> String {
    format!("dev{}", i + 1)
}

pub fn stream_id(i: usize) -> String {
    format!("s{}", i + 1)
}

pub fn generate_plant(spec: &PlantSpec) -> Result<(KnowledgeGraph, PlantModel), SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_devices;

    let mut entities = Vec::new();
    let mut triples = Vec::new();
    let mut devices: Vec<DeviceModel> = Vec::with_capacity(n);

    for i in 0..n {
        entities.push(EntityDecl {
            id: device_id(i),
            kind: EntityKind::Device,
            label: format!("Device {}", i + 1),
            column: None,
        });
        let k = rng.gen_range(spec.variables_per_device.0..=spec.variables_per_device.1);
        let mut variables = Vec::with_capacity(k);
        for j in 0..k {
            let id = format!("v{}_{}", i + 1, j + 1);
            entities.push(EntityDecl {
                id: id.clone(),
                kind: EntityKind::Variable,
                label: id.clone(),
                column: Some(id.clone()),
            });
            triples.push(TripleDecl(device_id(i), "State".into(), id.clone()));
            triples.push(TripleDecl(id.clone(), "State of".into(), device_id(i)));
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            variables.push(VariableModel {
                id,
                mean: rng.gen_range(-5.0..5.0),
                loading: sign * rng.gen_range(0.5..1.5),
                noise_sd: spec.noise_scale * rng.gen_range(0.5..1.0),
                sd: 0.0,
            });
        }
        devices.push(DeviceModel {
            id: device_id(i),
            inputs: Vec::new(),
            latent_sd: spec.noise_scale * rng.gen_range(0.5..1.0),
            variables,
        });
    }

    let mut n_streams = 0;
    for i in 0..n {
        let k = rng.gen_range(spec.streams_per_device.0..=spec.streams_per_device.1);
        for s in 0..k {
            let target = if s == 0 && i + 1 < n {
                Some(i + 1)
            } else if s > 0 && i + 2 < n && rng.gen_bool(0.5) {
                Some(rng.gen_range(i + 2..n))
            } else {
                None
            };
            let sid = stream_id(n_streams);
            n_streams += 1;
            entities.push(EntityDecl {
                id: sid.clone(),
                kind: EntityKind::Stream,
                label: format!("Stream {n_streams}"),
                column: None,
            });
            triples.push(TripleDecl(device_id(i), "Output".into(), sid.clone()));
            if let Some(t) = target {
                triples.push(TripleDecl(sid, "Output".into(), device_id(t)));
                let w = rng.gen_range(0.5..0.9);
                devices[t].inputs.push((i, w));
            }
        }
    }

    fill_stationary_sd(&mut devices);

    let doc = GraphDocument {
        name: Some(format!("synth-{}", spec.seed)),
        entities,
        relations: vec![
            RelationDecl { name: "State".into(), d: spec.state.d, o: spec.state.o },
            RelationDecl { name: "State of".into(), d: spec.state.d, o: spec.state.o },
            RelationDecl { name: "Output".into(), d: spec.output.d, o: spec.output.o },
        ],
        triples,
    };
    let graph = KnowledgeGraph::from_document(doc)?;
    Ok((graph, PlantModel { devices }))
}

/// Expresses each quantity as a linear combination of the independent noise
/// sources and reads off its variance.
fn fill_stationary_sd(devices: &mut [DeviceModel]) {
    let n_sources = devices.len() + devices.iter().map(|d| d.variables.len()).sum::<usize>();
    let mut var_coef: Vec<Vec<Vec<f64>>> = Vec::with_capacity(devices.len());
    let mut next = devices.len();
    for (i, dev) in devices.iter().enumerate() {
        let mut z = vec![0.0; n_sources];
        z[i] = dev.latent_sd;
        for &(u, w) in &dev.inputs {
            let ups: &Vec<Vec<f64>> = &var_coef[u];
            let k = ups.len() as f64;
            for c in ups {
                for (a, b) in z.iter_mut().zip(c) {
                    *a += w * b / k;
                }
            }
        }
        let mut coefs = Vec::with_capacity(dev.variables.len());
        for v in &dev.variables {
            let mut c: Vec<f64> = z.iter().map(|a| v.loading * a).collect();
            c[next] = v.noise_sd;
            next += 1;
            coefs.push(c);
        }
        var_coef.push(coefs);
    }
    for (dev, coefs) in devices.iter_mut().zip(var_coef) {
        for (v, c) in dev.variables.iter_mut().zip(coefs) {
            v.sd = c.iter().map(|a| a * a).sum::<f64>().sqrt();
        }
    }
}

fn shift_profile(kind: FaultKind, t: usize, inj: &FaultInjection, rng: &mut ChaCha8Rng) -> f64 {
    if t < inj.start || t >= inj.start + inj.duration {
        return 0.0;
    }
    match kind {
        FaultKind::Step => 1.0,
        FaultKind::Drift => (t - inj.start + 1) as f64 / inj.duration as f64,
        FaultKind::RandomVariation => rng.sample(StandardNormal),
    }
}

pub fn simulate(
    model: &PlantModel,
    m: usize,
    injection: Option<&FaultInjection>,
    seed: u64,
) -> Result<DataMatrix, SynthError> {
    if m < 1 {
        return Err(SynthError::Injection("sample count must be >= 1".into()));
    }
    // per variable: fault scale in units, keyed by (device, variable) position
    let mut targets: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    if let Some(inj) = injection {
        if !(inj.magnitude > 0.0 && inj.magnitude.is_finite()) {
            return Err(SynthError::Injection("magnitude must be positive".into()));
        }
        if inj.duration == 0 || inj.start + inj.duration > m {
            return Err(SynthError::Injection(format!(
                "window [{}, {}) does not fit in {m} samples",
                inj.start,
                inj.start + inj.duration
            )));
        }
        for (di, dev) in model.devices.iter().enumerate() {
            for (vi, v) in dev.variables.iter().enumerate() {
                if dev.id == inj.root || v.id == inj.root {
                    targets.insert((di, vi), inj.magnitude * v.sd);
                }
            }
        }
        if targets.is_empty() {
            return Err(SynthError::Injection(format!(
                "root `{}` is neither a device nor a variable of this plant",
                inj.root
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let columns = model.columns();
    let mut values = DMatrix::zeros(m, columns.len());
    let mut dev_mean_dev = vec![0.0; model.devices.len()];
    for t in 0..m {
        let shift = injection.map(|inj| shift_profile(inj.kind, t, inj, &mut rng));
        let mut col = 0;
        for (di, dev) in model.devices.iter().enumerate() {
            let mut z = dev.latent_sd * std_normal.sample(&mut rng);
            for &(u, w) in &dev.inputs {
                z += w * dev_mean_dev[u];
            }
            let mut sum_dev = 0.0;
            for (vi, v) in dev.variables.iter().enumerate() {
                let mut y = v.loading * z + v.noise_sd * std_normal.sample(&mut rng);
                if let (Some(s), Some(scale)) = (shift, targets.get(&(di, vi))) {
                    y += s * scale;
                }
                sum_dev += y;
                values[(t, col)] = v.mean + y;
                col += 1;
            }
            dev_mean_dev[di] = sum_dev / dev.variables.len() as f64;
        }
    }
    DataMatrix::new(columns, values).map_err(|e| SynthError::Spec(e.to_string()))
}

//! Model and ticket files, canonical JSON, and synthetic targets.
//!
//! Files are canonical JSON: object keys sorted, floats written with 17
//! significant digits in exponent form, integers as integers. Saving the
//! result of a load reproduces the input bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::init::InitPlan;
use crate::manifest::ConstructionManifest;
use crate::netcore::{Domain, Layer, Matrix, Network, Role};
use crate::rng::{self, StreamTag};
use crate::ticket::{LayerMask, Ticket};

pub const FORMAT: &str = "ticketforge/1";

/// Writes `v` as canonical JSON.
pub fn to_canonical_string(v: &Value) -> Result<String> {
    let mut out = String::new();
    write_value(v, &mut out)?;
    Ok(out)
}

/// Serializes `v` as canonical JSON.
pub fn canonical<T: Serialize>(v: &T) -> Result<String> {
    to_canonical_string(&serde_json::to_value(v)?)
}

fn write_value(v: &Value, out: &mut String) -> Result<()> {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_u64() {
                write!(out, "{i}").unwrap();
            } else if let Some(i) = n.as_i64() {
                write!(out, "{i}").unwrap();
            } else {
                let f = n.as_f64().ok_or_else(|| Error::Format(format!("unsupported number {n}")))?;
                if !f.is_finite() {
                    return Err(Error::Format(format!("non-finite number {f}")));
                }
                write!(out, "{f:.16e}").unwrap();
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s)?),
        Value::Array(a) => {
            out.push('[');
            for (i, x) in a.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(x, out)?;
            }
            out.push(']');
        }
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k)?);
                out.push(':');
                write_value(&m[k], out)?;
            }
            out.push('}');
        }
    }
    Ok(())
}

fn check_format(format: &Option<String>) -> Result<()> {
    match format.as_deref() {
        None | Some(FORMAT) => Ok(()),
        Some(other) => Err(Error::Format(format!("unsupported format `{other}`"))),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: Activation,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    #[serde(default)]
    format: Option<String>,
    layers: Vec<LayerFile>,
    #[serde(default)]
    domain: Option<Domain>,
}

/// Canonical JSON of a network.
pub fn model_to_string(net: &Network) -> Result<String> {
    let file = ModelFile {
        format: Some(FORMAT.to_string()),
        layers: net
            .layers()
            .iter()
            .map(|l| LayerFile {
                weights: l.weights.to_rows(),
                bias: l.bias.clone(),
                activation: l.activation,
            })
            .collect(),
        domain: Some(net.domain().clone()),
    };
    Ok(canonical(&file)? + "\n")
}

/// Parses a model file as a target network. A missing domain means the
/// unit box `[-1, 1]^{n_0}`.
pub fn model_from_str(s: &str) -> Result<Network> {
    let file: ModelFile = serde_json::from_str(s)?;
    check_format(&file.format)?;
    let layers = file
        .layers
        .into_iter()
        .map(|l| Layer::new(Matrix::from_rows(&l.weights)?, l.bias, l.activation))
        .collect::<Result<Vec<_>>>()?;
    let n0 = layers.first().map_or(0, Layer::inputs);
    let domain = file.domain.unwrap_or_else(|| Domain::unit(n0));
    Network::new(layers, domain, Role::Target)
}

pub fn save_model(path: &Path, net: &Network) -> Result<()> {
    fs::write(path, model_to_string(net)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Network> {
    model_from_str(&fs::read_to_string(path)?)
}

/// Packs bits least significant first and encodes them as base64.
pub fn encode_bits(bits: &[bool]) -> String {
    let mut bytes = vec![0u8; bits.len().div_ceil(8)];
    for (i, _) in bits.iter().enumerate().filter(|(_, b)| **b) {
        bytes[i / 8] |= 1 << (i % 8);
    }
    STANDARD.encode(bytes)
}

pub fn decode_bits(s: &str, len: usize) -> Result<Vec<bool>> {
    let bytes = STANDARD.decode(s).map_err(|e| Error::Format(format!("bad base64 mask: {e}")))?;
    if bytes.len() != len.div_ceil(8) {
        return Err(Error::Format(format!("mask holds {} bytes, expected {}", bytes.len(), len.div_ceil(8))));
    }
    let bits: Vec<bool> = (0..len).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
    if (len..bytes.len() * 8).any(|i| bytes[i / 8] >> (i % 8) & 1 == 1) {
        return Err(Error::Format("mask has bits set past its end".into()));
    }
    Ok(bits)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskFile {
    rows: usize,
    cols: usize,
    weights: String,
    bias: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TicketFile {
    format: String,
    source_seed: u64,
    source_arch: Vec<usize>,
    init_plan: InitPlan,
    masks: Vec<MaskFile>,
    scales: Vec<f64>,
    #[serde(default)]
    manifest: Option<ConstructionManifest>,
}

/// Canonical JSON of a ticket. The source is stored through its init plan,
/// so tickets without one cannot be saved.
pub fn ticket_to_string(t: &Ticket) -> Result<String> {
    let plan = t
        .init_plan
        .clone()
        .ok_or_else(|| Error::Format("ticket has no init plan to regenerate its source".into()))?;
    let file = TicketFile {
        format: FORMAT.to_string(),
        source_seed: plan.seed,
        source_arch: plan.arch(),
        init_plan: plan,
        masks: t
            .masks
            .iter()
            .map(|m| MaskFile {
                rows: m.rows,
                cols: m.cols,
                weights: encode_bits(&m.weights),
                bias: encode_bits(&m.bias),
            })
            .collect(),
        scales: t.scales.clone(),
        manifest: t.manifest.clone(),
    };
    Ok(canonical(&file)? + "\n")
}

/// Parses a ticket file and regenerates its source network.
pub fn ticket_from_str(s: &str) -> Result<Ticket> {
    let file: TicketFile = serde_json::from_str(s)?;
    check_format(&Some(file.format.clone()))?;
    if file.source_seed != file.init_plan.seed || file.source_arch != file.init_plan.arch() {
        return Err(Error::Format("source seed or architecture disagrees with the init plan".into()));
    }
    let source = file.init_plan.build()?;
    let masks = file
        .masks
        .iter()
        .map(|m| {
            Ok(LayerMask {
                rows: m.rows,
                cols: m.cols,
                weights: decode_bits(&m.weights, m.rows * m.cols)?,
                bias: decode_bits(&m.bias, m.rows)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = Ticket::new(source, masks, file.scales)?;
    t.init_plan = Some(file.init_plan);
    t.manifest = file.manifest;
    Ok(t)
}

pub fn save_ticket(path: &Path, t: &Ticket) -> Result<()> {
    fs::write(path, ticket_to_string(t)?)?;
    Ok(())
}

pub fn load_ticket(path: &Path) -> Result<Ticket> {
    ticket_from_str(&fs::read_to_string(path)?)
}

/// Random target on the unit box with parameters `U[-1, 1]`, each zeroed
/// with probability `sparsity`. The output layer uses `output` if given.
pub fn gen_target(
    arch: &[usize],
    activation: Activation,
    output: Option<Activation>,
    sparsity: f64,
    seed: u64,
) -> Result<Network> {
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::Config(format!("sparsity {sparsity} outside [0, 1]")));
    }
    if arch.len() < 2 || arch.contains(&0) {
        return Err(Error::Shape(format!("invalid architecture {arch:?}")));
    }
    let depth = arch.len() - 1;
    let mut layers = Vec::with_capacity(depth);
    for l in 0..depth {
        let (rows, cols) = (arch[l + 1], arch[l]);
        let mut w = Matrix::zeros(rows, cols);
        let mut bias = vec![0.0; rows];
        for i in 0..rows {
            let mut ws = rng::stream(seed, StreamTag::TargetWeight, l as u64 + 1, i as u64);
            let mut bs = rng::stream(seed, StreamTag::TargetBias, l as u64 + 1, i as u64);
            let mut ms = rng::stream(seed, StreamTag::TargetMask, l as u64 + 1, i as u64);
            for j in 0..cols {
                let v = rng::symmetric(&mut ws, 1.0);
                w[(i, j)] = if rng::unit(&mut ms) < sparsity { 0.0 } else { v };
            }
            let b = rng::symmetric(&mut bs, 1.0);
            bias[i] = if rng::unit(&mut ms) < sparsity { 0.0 } else { b };
        }
        let act = if l + 1 == depth { output.unwrap_or(activation) } else { activation };
        layers.push(Layer::new(w, bias, act)?);
    }
    Network::new(layers, Domain::unit(arch[0]), Role::Target)
}

//! Line-delimited JSON files for instances, datasets and models.
//!
//! Every reader is strict: unknown fields are rejected, every invariant of the
//! core types is re-checked, and errors name the offending line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use trajalloc_core::allocnet::{AllocModel, Dense};
use trajalloc_core::corridor::{stop_targets, CorridorSequence, HPolytope, Point};
use trajalloc_core::dataset::DatasetRecord;
use trajalloc_core::qp_builder::ProblemInstance;

pub const MODEL_FORMAT: &str = "trajalloc-model/1";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{0}")]
    Format(String),
}

fn file_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::File {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorridorJson {
    pub normals: Vec<[f64; 3]>,
    pub offsets: Vec<f64>,
}

/// One planning instance.
///
/// `q0` and `qf` are `3 × κ`: row = axis, column = derivative order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceJson {
    pub kappa: usize,
    pub degree: usize,
    pub corridors: Vec<CorridorJson>,
    pub q0: Vec<Vec<f64>>,
    pub qf: Vec<Vec<f64>>,
    pub d_m: Vec<f64>,
    pub n_res: usize,
    pub w_t: f64,
}

/// A dataset line: the instance fields plus the labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordJson {
    pub kappa: usize,
    pub degree: usize,
    pub corridors: Vec<CorridorJson>,
    pub q0: Vec<Vec<f64>>,
    pub qf: Vec<Vec<f64>>,
    pub d_m: Vec<f64>,
    pub n_res: usize,
    pub w_t: f64,
    pub t_ref: Vec<f64>,
    pub s_bar: Vec<f64>,
    pub feasible: bool,
}

fn states_to_json(q: &[Point]) -> Vec<Vec<f64>> {
    (0..3)
        .map(|axis| q.iter().map(|d| d[axis]).collect())
        .collect()
}

fn states_from_json(q: &[Vec<f64>], kappa: usize, name: &str) -> Result<Vec<Point>, String> {
    if q.len() != 3 || q.iter().any(|row| row.len() != kappa) {
        return Err(format!("{name} must be a 3 × {kappa} matrix"));
    }
    Ok((0..kappa).map(|k| [q[0][k], q[1][k], q[2][k]]).collect())
}

impl InstanceJson {
    pub fn from_instance(inst: &ProblemInstance) -> Self {
        InstanceJson {
            kappa: inst.kappa(),
            degree: inst.degree(),
            corridors: inst
                .corridors()
                .polytopes()
                .iter()
                .map(|p| CorridorJson {
                    normals: p.normals().to_vec(),
                    offsets: p.offsets().to_vec(),
                })
                .collect(),
            q0: states_to_json(inst.q0()),
            qf: states_to_json(inst.qf()),
            d_m: inst.d_m().to_vec(),
            n_res: inst.n_res(),
            w_t: inst.w_t(),
        }
    }

    pub fn to_instance(&self) -> Result<ProblemInstance, String> {
        if self.kappa != 3 && self.kappa != 4 {
            return Err(format!("kappa must be 3 or 4, got {}", self.kappa));
        }
        if self.degree != 2 * self.kappa - 1 {
            return Err(format!(
                "degree must be {} for kappa {}",
                2 * self.kappa - 1,
                self.kappa
            ));
        }
        if self.corridors.is_empty() {
            return Err("corridors must not be empty".into());
        }
        let mut polys = Vec::with_capacity(self.corridors.len());
        for (i, c) in self.corridors.iter().enumerate() {
            for n in &c.normals {
                let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                if !((norm - 1.0).abs() <= 1e-9) {
                    return Err(format!("corridor {i}: normal {n:?} is not unit length"));
                }
            }
            let p = HPolytope::new(c.normals.clone(), c.offsets.clone())
                .map_err(|e| format!("corridor {i}: {e}"))?;
            if !p.is_bounded_solid() {
                return Err(format!("corridor {i}: polytope is empty or unbounded"));
            }
            polys.push(p);
        }
        let seq = CorridorSequence::new(polys).map_err(|e| e.to_string())?;
        let q0 = states_from_json(&self.q0, self.kappa, "q0")?;
        let qf = states_from_json(&self.qf, self.kappa, "qf")?;
        ProblemInstance::new(
            seq,
            q0,
            qf,
            self.d_m.clone(),
            self.n_res,
            self.w_t,
            self.kappa,
        )
        .map_err(|e| e.to_string())
    }
}

impl RecordJson {
    pub fn from_record(rec: &DatasetRecord) -> Self {
        let i = InstanceJson::from_instance(&rec.instance);
        RecordJson {
            kappa: i.kappa,
            degree: i.degree,
            corridors: i.corridors,
            q0: i.q0,
            qf: i.qf,
            d_m: i.d_m,
            n_res: i.n_res,
            w_t: i.w_t,
            t_ref: rec.t_ref.clone(),
            s_bar: rec.padded.stop_targets().to_vec(),
            feasible: rec.feasible,
        }
    }

    fn instance_part(&self) -> InstanceJson {
        InstanceJson {
            kappa: self.kappa,
            degree: self.degree,
            corridors: self.corridors.clone(),
            q0: self.q0.clone(),
            qf: self.qf.clone(),
            d_m: self.d_m.clone(),
            n_res: self.n_res,
            w_t: self.w_t,
        }
    }

    /// `M_max` is the length of `s_bar`.
    pub fn to_record(&self, f_max: usize) -> Result<DatasetRecord, String> {
        let instance = self.instance_part().to_instance()?;
        let m = instance.num_segments();
        let m_max = self.s_bar.len();
        if m_max < m {
            return Err(format!("s_bar has {m_max} entries for {m} corridors"));
        }
        if self.s_bar != stop_targets(m, m_max) {
            return Err("s_bar does not match the corridor count".into());
        }
        DatasetRecord::new(instance, self.t_ref.clone(), self.feasible, f_max, m_max)
            .map_err(|e| e.to_string())
    }
}

fn write_lines<T: Serialize>(path: &Path, items: impl Iterator<Item = T>) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| file_err(path, e))?);
    for item in items {
        let line = serde_json::to_string(&item).map_err(|e| IoError::Format(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| file_err(path, e))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}

/// Parses non-blank lines with `parse`, attaching 1-based line numbers.
pub fn parse_lines<T>(
    text: impl BufRead,
    mut parse: impl FnMut(&str) -> Result<T, String>,
) -> Result<Vec<T>, IoError> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.map_err(|e| IoError::Line {
            line: k + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse(&line).map_err(|message| IoError::Line {
            line: k + 1,
            message,
        })?);
    }
    Ok(out)
}

fn read_lines<T>(
    path: &Path,
    parse: impl FnMut(&str) -> Result<T, String>,
) -> Result<Vec<T>, IoError> {
    let f = File::open(path).map_err(|e| file_err(path, e))?;
    parse_lines(BufReader::new(f), parse)
}

pub fn parse_instance(line: &str) -> Result<ProblemInstance, String> {
    serde_json::from_str::<InstanceJson>(line)
        .map_err(|e| e.to_string())?
        .to_instance()
}

pub fn parse_record(line: &str, f_max: usize) -> Result<DatasetRecord, String> {
    serde_json::from_str::<RecordJson>(line)
        .map_err(|e| e.to_string())?
        .to_record(f_max)
}

pub fn write_instances(path: &Path, instances: &[ProblemInstance]) -> Result<(), IoError> {
    write_lines(path, instances.iter().map(InstanceJson::from_instance))
}

pub fn read_instances(path: &Path) -> Result<Vec<ProblemInstance>, IoError> {
    read_lines(path, parse_instance)
}

pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> Result<(), IoError> {
    write_lines(path, records.iter().map(RecordJson::from_record))
}

pub fn read_dataset(path: &Path, f_max: usize) -> Result<Vec<DatasetRecord>, IoError> {
    let records = read_lines(path, |l| parse_record(l, f_max))?;
    if let Some(first) = records.first() {
        let m_max = first.padded.m_max();
        if let Some(k) = records.iter().position(|r| r.padded.m_max() != m_max) {
            return Err(IoError::Format(format!(
                "record {} has s_bar length {} but the first has {m_max}",
                k + 1,
                records[k].padded.m_max()
            )));
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerJson {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Settings the model was trained with, kept for reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub w_f: f64,
    pub w_t: f64,
    pub w_s: f64,
    pub lambda_p: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelJson {
    pub format: String,
    pub m_max: usize,
    pub f_max: usize,
    pub kappa: usize,
    /// Divisor applied to offsets and boundary states.
    pub position_scale: f64,
    pub training: TrainingMeta,
    pub layers: Vec<LayerJson>,
}

impl ModelJson {
    pub fn new(model: &AllocModel, training: TrainingMeta) -> Self {
        ModelJson {
            format: MODEL_FORMAT.into(),
            m_max: model.m_max(),
            f_max: model.f_max(),
            kappa: model.kappa(),
            position_scale: model.position_scale(),
            training,
            layers: model
                .layers()
                .iter()
                .map(|l| LayerJson {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weights: l.weights.clone(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<AllocModel, String> {
        if self.format != MODEL_FORMAT {
            return Err(format!("unsupported model format {:?}", self.format));
        }
        let layers = self
            .layers
            .iter()
            .map(|l| Dense {
                inputs: l.inputs,
                outputs: l.outputs,
                weights: l.weights.clone(),
                bias: l.bias.clone(),
            })
            .collect();
        AllocModel::from_parts(
            self.m_max,
            self.f_max,
            self.kappa,
            self.position_scale,
            layers,
        )
        .map_err(|e| e.to_string())
    }
}

pub fn write_model(path: &Path, model: &ModelJson) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(model).map_err(|e| IoError::Format(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| file_err(path, e))
}

pub fn read_model(path: &Path) -> Result<(AllocModel, ModelJson), IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let json: ModelJson = serde_json::from_str(&text).map_err(|e| IoError::Line {
        line: e.line(),
        message: e.to_string(),
    })?;
    let model = json.to_model().map_err(IoError::Format)?;
    Ok((model, json))
}

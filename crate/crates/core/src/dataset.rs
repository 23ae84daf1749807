//! Synthetic labelled instances for training and benchmarking.

use alloc::vec::Vec;

use crate::clock::NoClock;
use crate::corridor::{generate_corridor_sequence, pad, GeneratorConfig, PaddedCorridorTensor};
use crate::error::{invalid, Result};
use crate::qp_builder::ProblemInstance;
use crate::qp_solver::QpSettings;
use crate::time_opt::{reference_time, scale_to_feasible};

/// One labelled instance.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub instance: ProblemInstance,
    pub padded: PaddedCorridorTensor,
    /// Reference allocation `t̄`, rescued by scaling when that succeeded.
    pub t_ref: Vec<f64>,
    /// QP status at `t̄` was optimal.
    pub feasible: bool,
}

impl DatasetRecord {
    /// Validates `t_ref` against the instance and pads the corridors.
    pub fn new(
        instance: ProblemInstance,
        t_ref: Vec<f64>,
        feasible: bool,
        f_max: usize,
        m_max: usize,
    ) -> Result<Self> {
        instance.check_durations(&t_ref)?;
        let padded = pad(instance.corridors(), f_max, m_max)?;
        Ok(DatasetRecord {
            instance,
            padded,
            t_ref,
            feasible,
        })
    }

    pub fn num_segments(&self) -> usize {
        self.instance.num_segments()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub generator: GeneratorConfig,
    pub kappa: usize,
    /// `[v_max, a_max(, j_max)]`.
    pub d_m: Vec<f64>,
    pub n_res: usize,
    pub w_t: f64,
    pub f_max: usize,
    pub scale_factor: f64,
    pub scale_cap: usize,
    pub qp: QpSettings,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            generator: GeneratorConfig::default(),
            kappa: 3,
            d_m: alloc::vec![4.0, 6.0],
            n_res: 20,
            w_t: 17.5,
            f_max: 6,
            scale_factor: 1.2,
            scale_cap: 10,
            qp: QpSettings::default(),
        }
    }
}

impl DatasetConfig {
    pub fn m_max(&self) -> usize {
        self.generator.m_max
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if self.kappa != 3 && self.kappa != 4 {
            return Err(invalid("kappa must be 3 or 4"));
        }
        if self.d_m.len() != self.kappa - 1 {
            return Err(invalid("d_m must hold kappa-1 bounds"));
        }
        if self.f_max < 6 || self.f_max > crate::F_MAX_LIMIT {
            return Err(invalid("f_max must be within [6, 50] for box corridors"));
        }
        Ok(())
    }
}

/// Seed of record `index` under dataset seed `seed` (SplitMix64 finalizer),
/// so records can be generated independently and in any order.
pub fn record_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Record `index` of the dataset with seed `seed`.
pub fn generate_record(seed: u64, index: u64, cfg: &DatasetConfig) -> Result<DatasetRecord> {
    let g = generate_corridor_sequence(record_seed(seed, index), &cfg.generator)?;
    let instance = ProblemInstance::rest_to_rest(
        g.corridors.clone(),
        g.start(),
        g.goal(),
        cfg.d_m.clone(),
        cfg.n_res,
        cfg.w_t,
        cfg.kappa,
    )?;
    let t_ref = reference_time(&instance);
    let rescue = scale_to_feasible(
        &instance,
        &t_ref,
        cfg.scale_factor,
        cfg.scale_cap,
        &cfg.qp,
        &NoClock,
    )?;
    let (t_ref, feasible) = match rescue {
        Some(r) => (r.evaluation.durations, true),
        None => (t_ref, false),
    };
    DatasetRecord::new(instance, t_ref, feasible, cfg.f_max, cfg.m_max())
}

pub fn generate_dataset(
    seed: u64,
    count: usize,
    cfg: &DatasetConfig,
) -> Result<Vec<DatasetRecord>> {
    cfg.validate()?;
    (0..count as u64)
        .map(|i| generate_record(seed, i, cfg))
        .collect()
}

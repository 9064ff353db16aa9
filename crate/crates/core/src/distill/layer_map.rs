use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerMapStrategy {
    /// Iteration `l` aligns with teacher layer `l`; needs equal depths.
    Identity,
    /// Iteration `l` aligns with teacher layer `ceil(l * L_t / L_s)`.
    #[default]
    UniformStride,
}

impl std::str::FromStr for LayerMapStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "uniform_stride" | "uniform-stride" => Ok(Self::UniformStride),
            other => Err(Error::config(format!("unknown layer map strategy {other:?}"))),
        }
    }
}

/// Student iteration to teacher layer mapping, 1-based and strictly
/// increasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMap {
    pub student_iterations: usize,
    pub teacher_layers: usize,
    pub mapping: Vec<usize>,
}

impl LayerMap {
    pub fn new(student_iterations: usize, teacher_layers: usize, mapping: Vec<usize>) -> Result<Self> {
        if mapping.len() != student_iterations {
            return Err(Error::config(format!(
                "layer map has {} entries for {student_iterations} iterations",
                mapping.len()
            )));
        }
        if mapping.iter().any(|&m| m == 0 || m > teacher_layers) {
            return Err(Error::config(format!("layer map {mapping:?} out of range 1..={teacher_layers}")));
        }
        if mapping.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!("layer map {mapping:?} is not strictly increasing")));
        }
        Ok(LayerMap { student_iterations, teacher_layers, mapping })
    }

    /// 0-based teacher layer for 0-based iteration `l`.
    pub fn teacher_index(&self, l: usize) -> usize {
        self.mapping[l] - 1
    }
}

pub fn build_layer_map(student_iterations: usize, teacher_layers: usize, strategy: LayerMapStrategy) -> Result<LayerMap> {
    if student_iterations == 0 || student_iterations > teacher_layers {
        return Err(Error::config(format!(
            "cannot map {student_iterations} iterations onto {teacher_layers} teacher layers"
        )));
    }
    let mapping = match strategy {
        LayerMapStrategy::Identity => {
            if student_iterations != teacher_layers {
                return Err(Error::config(format!(
                    "identity map needs equal depths, got {student_iterations} and {teacher_layers}"
                )));
            }
            (1..=student_iterations).collect()
        }
        LayerMapStrategy::UniformStride => {
            (1..=student_iterations).map(|l| (l * teacher_layers).div_ceil(student_iterations)).collect()
        }
    };
    LayerMap::new(student_iterations, teacher_layers, mapping)
}

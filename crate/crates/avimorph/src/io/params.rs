//! Per-instance alignment/fit records: pose parameters, optional shape
//! coefficients and diagnostics. JSON float arrays round-trip exactly
//! (shortest-representation printing).

use super::{atomic_write, json_from_str, json_to_vec};
use crate::error::Result;
use crate::mesh::PoseParams;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParamsRecord {
    pub id: String,
    pub species: String,
    pub theta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub gamma: [f64; 3],
    pub kappa: [f64; 2],
    pub beta: Option<Vec<f64>>,
    pub failed: bool,
    pub pck05: f64,
    pub iou: f64,
    pub final_objective: f64,
}

impl ParamsRecord {
    pub fn pose(&self) -> PoseParams {
        PoseParams {
            theta: self.theta.clone(),
            alpha: self.alpha.clone(),
            gamma: self.gamma,
            kappa: self.kappa,
        }
    }
}

pub fn save_params(path: &Path, record: &ParamsRecord) -> Result<()> {
    atomic_write(path, &json_to_vec(path, record)?)
}

pub fn load_params(path: &Path) -> Result<ParamsRecord> {
    let text = super::read_to_string(path)?;
    json_from_str(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let rec = ParamsRecord {
            id: "x".into(),
            species: "sp".into(),
            theta: vec![0.1, -1.0 / 3.0, 2e-17],
            alpha: vec![1.0000000001],
            gamma: [0.0, -0.0, 9.25],
            kappa: [1.5, 0.75],
            beta: Some(vec![0.125]),
            failed: false,
            pck05: 0.98,
            iou: 2.0 / 3.0,
            final_objective: 1.2345678901234567,
        };
        save_params(&path, &rec).unwrap();
        let back = load_params(&path).unwrap();
        assert_eq!(rec, back);
        assert_eq!(back.iou.to_bits(), (2.0f64 / 3.0).to_bits());
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::mtlr::SurvivalLabel;
use crate::tensor::Tensor;

pub const LEADS: usize = 12;
pub const INPUT_LEN: usize = 4096;
/// Raw acquisitions: 10 s at 500 Hz.
pub const RAW_LEN: usize = 5000;
pub const SAMPLE_RATE_HZ: f64 = 500.0;
/// Tabular inputs: sex and standardized age.
pub const TABULAR_FEATURES: usize = 2;

/// Everything about an ECG acquisition except its voltages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub patient_id: String,
    pub episode_id: String,
    /// Order of the acquisition within its episode.
    pub acquisition_index: usize,
    pub age: f64,
    pub sex: u8,
    pub label_covid: Option<bool>,
    pub survival: Option<SurvivalLabel>,
    pub source_labels: Option<Vec<bool>>,
}

impl RecordMeta {
    pub fn validate(&self) -> Result<()> {
        if !(self.age >= 18.0) || !self.age.is_finite() {
            return Err(Error::Data(format!(
                "record of patient {}: age {} below 18 or not finite",
                self.patient_id, self.age
            )));
        }
        if self.sex > 1 {
            return Err(Error::Data(format!(
                "record of patient {}: sex must be 0 or 1, got {}",
                self.patient_id, self.sex
            )));
        }
        Ok(())
    }

    /// `[sex, (age - 65) / 15]`.
    pub fn tabular(&self) -> [f64; TABULAR_FEATURES] {
        [f64::from(self.sex), (self.age - 65.0) / 15.0]
    }

    /// True when the event was observed within `days`; censored records count as negative.
    pub fn died_within(&self, days: f64) -> Option<bool> {
        self.survival.map(|s| !s.censored && s.time <= days)
    }
}

/// One preprocessed 12-lead ECG with its patient attributes and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub meta: RecordMeta,
    /// `[12, 4096]` millivolts.
    pub voltages: Tensor,
}

impl EcgRecord {
    pub fn new(meta: RecordMeta, voltages: Tensor) -> Result<Self> {
        meta.validate()?;
        voltages.expect_shape(&[LEADS, INPUT_LEN], "ECG voltages")?;
        voltages.check_finite("ECG voltages")?;
        Ok(Self { meta, voltages })
    }
}

/// Removes each lead's mean, then crops or right-pads with zeros to 4096 samples.
pub fn preprocess(raw: &Tensor) -> Result<Tensor> {
    raw.expect_rank(2, "raw ECG")?;
    if raw.dim(0) != LEADS {
        return Err(shape_err!("raw ECG has {} leads, expected {LEADS}", raw.dim(0)));
    }
    let n = raw.dim(1);
    let mut out = vec![0.0; LEADS * INPUT_LEN];
    for (lead, dst) in raw.data().chunks(n).zip(out.chunks_mut(INPUT_LEN)) {
        let mean = lead.iter().sum::<f64>() / n as f64;
        for (d, v) in dst.iter_mut().zip(lead) {
            *d = v - mean;
        }
    }
    Tensor::new(vec![LEADS, INPUT_LEN], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_leads_become_zero() {
        let raw = Tensor::filled(&[LEADS, RAW_LEN], 3.0);
        let out = preprocess(&raw).unwrap();
        assert_eq!(out.shape(), &[LEADS, INPUT_LEN]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_input_is_zero_padded() {
        let data: Vec<f64> = (0..LEADS * 4000).map(|i| ((i % 4000) as f64 * 0.01).sin()).collect();
        let out = preprocess(&Tensor::new(vec![LEADS, 4000], data).unwrap()).unwrap();
        for lead in out.data().chunks(INPUT_LEN) {
            assert!(lead[4000..].iter().all(|&v| v == 0.0));
            assert!(lead[..4000].iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn zero_mean_full_length_is_identity() {
        let data: Vec<f64> = (0..LEADS * INPUT_LEN)
            .map(|i| if i % 2 == 0 { 0.5 } else { -0.5 })
            .collect();
        let raw = Tensor::new(vec![LEADS, INPUT_LEN], data).unwrap();
        assert_eq!(preprocess(&raw).unwrap(), raw);
    }

    #[test]
    fn wrong_lead_count_fails() {
        assert!(preprocess(&Tensor::zeros(&[11, 100])).is_err());
    }
}

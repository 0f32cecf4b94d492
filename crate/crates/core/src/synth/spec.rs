use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Generative parameters of a synthetic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub n_patients: usize,
    /// Mean of the geometric number of ECGs per patient (support 1, 2, ...).
    pub ecgs_per_patient_mean: f64,
    /// Probability that an ECG after a patient's first opens a new episode.
    pub new_episode_prob: f64,
    /// Fraction of patients with a positive diagnosis.
    pub prevalence: f64,
    /// Every patient is positive (a cohort of diagnosed patients).
    pub positive_only: bool,
    /// Marginal probability of death within 30 days, before censoring.
    pub mortality_rate_30d: f64,
    pub n_source_labels: usize,
    /// Per-code patient prevalence.
    pub source_label_rate: f64,
    /// ST offset (mV) added to the anterior leads of positive patients.
    pub effect_size: f64,
    /// Scale of the per-code morphology changes.
    pub code_effect: f64,
    /// Log-hazard per standard deviation of the prognostic latent factors.
    pub hazard_coef: f64,
    pub weibull_shape: f64,
    /// White measurement noise (mV).
    pub noise_sd: f64,
    /// Exponential loss-to-follow-up rate per day.
    pub censor_rate: f64,
    /// Administrative end of follow-up (days).
    pub followup_days: f64,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_patients: 1000,
            ecgs_per_patient_mean: 2.0,
            new_episode_prob: 0.3,
            prevalence: 0.0624,
            positive_only: false,
            mortality_rate_30d: 0.1179,
            n_source_labels: 16,
            source_label_rate: 0.12,
            effect_size: 0.12,
            code_effect: 3.0,
            hazard_coef: 1.0,
            weibull_shape: 0.8,
            noise_sd: 0.05,
            censor_rate: 0.001,
            followup_days: 365.0,
            seed: 0,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("cohort spec: {what}")))
            }
        };
        check(self.n_patients >= 2, "n_patients must be at least 2")?;
        check(
            self.ecgs_per_patient_mean >= 1.0 && self.ecgs_per_patient_mean.is_finite(),
            "ecgs_per_patient_mean must be >= 1",
        )?;
        check((0.0..=1.0).contains(&self.new_episode_prob), "new_episode_prob outside [0, 1]")?;
        check(unit(self.prevalence), "prevalence outside (0, 1)")?;
        check(unit(self.mortality_rate_30d), "mortality_rate_30d outside (0, 1)")?;
        check(unit(self.source_label_rate), "source_label_rate outside (0, 1)")?;
        check(self.n_source_labels <= super::generate::CODE_EFFECTS, "at most 16 source labels")?;
        check(self.effect_size.is_finite() && self.code_effect.is_finite(), "effect sizes must be finite")?;
        check(self.hazard_coef.is_finite() && self.hazard_coef >= 0.0, "hazard_coef must be >= 0")?;
        check(self.weibull_shape > 0.0 && self.weibull_shape.is_finite(), "weibull_shape must be > 0")?;
        check(self.noise_sd >= 0.0 && self.noise_sd.is_finite(), "noise_sd must be >= 0")?;
        check(self.censor_rate >= 0.0 && self.censor_rate.is_finite(), "censor_rate must be >= 0")?;
        check(self.followup_days > 30.0 && self.followup_days.is_finite(), "followup_days must exceed 30")?;
        Ok(())
    }
}

//! Gaussian-bump beat morphology, patient latent state and survival draws.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::spec::CohortSpec;
use crate::error::Result;
use crate::model::{preprocess, LEADS, RAW_LEN, SAMPLE_RATE_HZ};
use crate::mtlr::SurvivalLabel;
use crate::rng::{rng_for, Rng};
use crate::tensor::Tensor;

pub const CODE_EFFECTS: usize = 16;

/// Leads V2-V4, where a positive diagnosis raises the ST segment.
pub const DIAGNOSIS_LEADS: [usize; 3] = [7, 8, 9];
/// Source code for anterior ST elevation; also assigned when a diagnosis raises the anterior ST segment.
pub const ANTERIOR_ST_CODE: usize = 3;

const AGE_HAZARD: f64 = 0.3;
/// Log-hazard shift for diagnosed patients.
const POSITIVE_HAZARD: f64 = 0.7;

// Lead order: I, II, III, aVR, aVL, aVF, V1..V6.
const P_GAIN: [f64; LEADS] = [0.5, 1.0, 0.5, -0.8, 0.2, 0.7, 0.3, 0.5, 0.5, 0.5, 0.5, 0.5];
const Q_GAIN: [f64; LEADS] = [0.3, 0.3, 0.3, 0.0, 0.3, 0.3, 0.0, 0.0, 0.0, 0.3, 0.6, 0.6];
const R_GAIN: [f64; LEADS] = [0.6, 1.0, 0.5, -0.6, 0.3, 0.7, 0.2, 0.4, 0.7, 1.1, 1.2, 1.0];
const S_GAIN: [f64; LEADS] = [0.3, 0.6, 0.6, 0.0, 0.3, 0.6, 3.0, 3.6, 2.4, 1.5, 0.6, 0.3];
const T_GAIN: [f64; LEADS] = [0.5, 0.8, 0.3, -0.5, 0.2, 0.5, -0.1, 0.6, 0.8, 0.8, 0.7, 0.5];

/// Latent state of one synthetic patient; every record of the patient derives from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientState {
    /// `z[0]` T-wave amplitude, `z[1]` QRS width and height, `z[2]` heart rate, `z[3]` electrical axis.
    pub z: [f64; 4],
    pub age: f64,
    pub sex: u8,
    pub positive: bool,
    pub codes: Vec<bool>,
    pub survival: SurvivalLabel,
    pub lead_gain: [f64; LEADS],
}

/// One Gaussian bump: centre and width in seconds relative to the R peak, amplitude per lead.
struct Wave {
    centre: f64,
    sigma: f64,
    amp: [f64; LEADS],
}

fn scaled(gain: &[f64; LEADS], a: f64) -> [f64; LEADS] {
    gain.map(|g| g * a)
}

fn on_leads(leads: &[usize], a: f64) -> [f64; LEADS] {
    let mut amp = [0.0; LEADS];
    for &l in leads {
        amp[l] = a;
    }
    amp
}

fn standard_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Linear log-hazard of a patient before the baseline scale.
fn log_hazard(z: &[f64; 4], age: f64, positive: bool, spec: &CohortSpec) -> f64 {
    spec.hazard_coef * (z[0] + z[1] + z[2]) / 3f64.sqrt()
        + AGE_HAZARD * (age - 60.0) / 15.0
        + if positive { POSITIVE_HAZARD } else { 0.0 }
}

/// `lambda` with `E[1 - exp(-lambda e^eta)] = mortality_rate_30d` over the cohort's
/// log-hazard distribution (normal approximation, trapezoidal quadrature).
pub(crate) fn calibrate_baseline(spec: &CohortSpec) -> f64 {
    let sd = (spec.hazard_coef.powi(2) + AGE_HAZARD.powi(2)).sqrt();
    let positive_share = if spec.positive_only { 1.0 } else { spec.prevalence };
    let nodes: Vec<(f64, f64)> = (0..=400)
        .map(|i| {
            let u = -8.0 + 16.0 * i as f64 / 400.0;
            (u * sd, (-0.5 * u * u).exp())
        })
        .collect();
    let norm: f64 = nodes.iter().map(|n| n.1).sum();
    let rate = |log_lambda: f64| {
        let mut acc = 0.0;
        for &(eta, w) in &nodes {
            let f = |e: f64| 1.0 - (-(log_lambda + e).exp()).exp();
            acc += w * ((1.0 - positive_share) * f(eta) + positive_share * f(eta + POSITIVE_HAZARD));
        }
        acc / norm
    };
    let (mut lo, mut hi) = (-30.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < spec.mortality_rate_30d {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

pub(crate) fn draw_patient(spec: &CohortSpec, index: usize, lambda: f64) -> PatientState {
    let mut rng = rng_for(spec.seed, &[1, index as u64]);
    let z = [(); 4].map(|_| standard_normal(&mut rng));
    let age = (60.0 + 15.0 * standard_normal(&mut rng)).clamp(18.0, 95.0);
    let sex = u8::from(rng.random_bool(0.5));
    let positive = spec.positive_only || rng.random_bool(spec.prevalence);
    let codes = (0..spec.n_source_labels)
        .map(|_| rng.random_bool(spec.source_label_rate))
        .collect();
    let lead_gain = [(); LEADS].map(|_| (0.15 * standard_normal(&mut rng)).exp());

    // Weibull with cumulative hazard H(t) = lambda e^eta (t / 30)^k.
    let eta = log_hazard(&z, age, positive, spec);
    let k = spec.weibull_shape;
    let e: f64 = -(1.0 - rng.random::<f64>()).ln();
    let event = 30.0 * (e / (lambda * eta.exp())).powf(1.0 / k);
    let dropout = if spec.censor_rate > 0.0 {
        -(1.0 - rng.random::<f64>()).ln() / spec.censor_rate
    } else {
        f64::INFINITY
    };
    let censor = dropout.min(spec.followup_days);
    let (time, censored) = if event <= censor { (event, false) } else { (censor, true) };
    // whole days, at least one
    let survival = SurvivalLabel {
        time: time.ceil().max(1.0),
        censored,
    };
    PatientState {
        z,
        age: (age * 10.0).round() / 10.0,
        sex,
        positive,
        codes,
        survival,
        lead_gain,
    }
}

/// Source labels of a patient: the drawn codes, with anterior ST elevation also
/// coded when the diagnosis raises the anterior ST segment.
pub(crate) fn source_labels(p: &PatientState, spec: &CohortSpec) -> Vec<bool> {
    let mut labels = p.codes.clone();
    if p.positive && spec.effect_size != 0.0 {
        if let Some(code) = labels.get_mut(ANTERIOR_ST_CODE) {
            *code = true;
        }
    }
    labels
}

/// Beat template of a patient, with the record's amplitude and rate jitter applied.
fn beat_waves(p: &PatientState, spec: &CohortSpec, rr: f64, amp_jitter: f64) -> Vec<Wave> {
    let c = spec.code_effect;
    let has = |k: usize| p.codes.get(k).copied().unwrap_or(false);
    let width = (1.0 + 0.15 * p.z[1]).clamp(0.6, 1.6) * if has(6) { 1.0 + 0.4 * c } else { 1.0 };
    let r_amp = (1.0 + 0.2 * p.z[1]).max(0.3);
    let t_amp = 0.3 * (1.0 - 0.35 * p.z[0]);
    let qt = 0.28 * rr.sqrt();

    let mut gain = p.lead_gain;
    // electrical axis: rotate limb-lead emphasis between I/aVL and III/aVF
    for (l, w) in [(0, 1.0), (4, 1.0), (2, -1.0), (5, -1.0)] {
        gain[l] *= (1.0 + 0.2 * w * p.z[3]).max(0.2);
    }
    if has(10) {
        gain.iter_mut().for_each(|g| *g *= 1.0 - 0.4 * c.min(2.0));
    }
    let mul = |a: &[f64; LEADS]| {
        let mut out = *a;
        for (o, g) in out.iter_mut().zip(&gain) {
            *o *= g * amp_jitter;
        }
        out
    };

    let mut r_gain = R_GAIN;
    if has(5) {
        r_gain[6] += 0.8 * c;
    }
    if has(14) {
        r_gain[0] += 0.4 * c;
        r_gain[5] -= 0.5 * c;
        r_gain[1] -= 0.3 * c;
    }
    let mut t_gain = T_GAIN;
    if has(4) {
        for l in 6..=9 {
            t_gain[l] = -t_gain[l].abs() * c;
        }
    }
    if has(11) {
        for l in DIAGNOSIS_LEADS {
            t_gain[l] *= 1.0 + 0.8 * c;
        }
    }
    let mut q_amp = scaled(&Q_GAIN, -0.12);
    if has(7) {
        for l in [1, 2, 5] {
            q_amp[l] -= 0.3 * c;
        }
    }

    let mut waves = vec![
        Wave {
            centre: if has(9) { -0.24 } else { -0.16 },
            sigma: 0.022,
            amp: scaled(&P_GAIN, if has(8) { 0.15 * (1.0 - c).max(0.0) } else { 0.15 }),
        },
        Wave {
            centre: -0.035 * width,
            sigma: 0.008 * width,
            amp: q_amp,
        },
        Wave {
            centre: 0.0,
            sigma: 0.011 * width,
            amp: scaled(&r_gain, r_amp),
        },
        Wave {
            centre: 0.035 * width,
            sigma: 0.009 * width,
            amp: scaled(&S_GAIN, -0.1 * r_amp),
        },
        Wave {
            centre: qt,
            sigma: 0.05,
            amp: scaled(&t_gain, t_amp),
        },
    ];

    // ST-segment offsets: diagnosis plus the ST codes
    let mut st = [0.0; LEADS];
    if p.positive {
        for l in DIAGNOSIS_LEADS {
            st[l] += spec.effect_size;
        }
    }
    let st_codes: [(usize, &[usize], f64); 5] = [
        (0, &[6, 7, 8], 0.12),
        (1, &[9, 10, 11], -0.10),
        (2, &[1, 2, 5], 0.10),
        (ANTERIOR_ST_CODE, &DIAGNOSIS_LEADS, 0.10),
        (15, &[0, 4], -0.10),
    ];
    for (code, leads, a) in st_codes {
        if has(code) {
            for &l in leads {
                st[l] += a;
            }
        }
    }
    if st.iter().any(|&v| v != 0.0) {
        waves.push(Wave {
            centre: 0.11,
            sigma: 0.035,
            amp: st,
        });
    }
    if has(12) {
        waves.push(Wave {
            centre: qt + 0.17,
            sigma: 0.03,
            amp: on_leads(&[7, 8], 0.1 * c),
        });
    }
    if has(13) {
        waves.push(Wave {
            centre: 0.025 * width,
            sigma: 0.006,
            amp: on_leads(&[10, 11], 0.3 * c),
        });
    }
    for w in &mut waves {
        w.amp = mul(&w.amp);
    }
    waves
}

/// Raw `[12, 5000]` acquisition for record `record` of patient `patient`.
pub(crate) fn render_raw(p: &PatientState, spec: &CohortSpec, patient: usize, record: usize) -> Result<Tensor> {
    let mut rng = rng_for(spec.seed, &[2, patient as u64, record as u64]);
    let fs = SAMPLE_RATE_HZ;
    let hr = (70.0 + 10.0 * p.z[2]).clamp(45.0, 120.0) * (1.0 + 0.03 * standard_normal(&mut rng));
    let rr = 60.0 / hr;
    let amp_jitter = 1.0 + 0.05 * standard_normal(&mut rng);
    let waves = beat_waves(p, spec, rr, amp_jitter);

    // template over [-0.3 s, 0.8 s] around the R peak
    let (pre, post) = ((0.3 * fs) as usize, (0.8 * fs) as usize);
    let span = pre + post;
    let mut template = vec![0.0; LEADS * span];
    for w in &waves {
        let c = pre as f64 + w.centre * fs;
        let s = w.sigma * fs;
        let lo = (c - 5.0 * s).floor().max(0.0) as usize;
        let hi = ((c + 5.0 * s).ceil() as usize).min(span);
        for i in lo..hi {
            let d = (i as f64 - c) / s;
            let g = (-0.5 * d * d).exp();
            for l in 0..LEADS {
                template[l * span + i] += w.amp[l] * g;
            }
        }
    }

    let mut raw = vec![0.0; LEADS * RAW_LEN];
    let mut t = rng.random::<f64>() * rr - 0.3;
    while t < RAW_LEN as f64 / fs + 0.3 {
        let beat_amp = 1.0 + 0.02 * standard_normal(&mut rng);
        let start = (t * fs).round() as isize - pre as isize;
        for l in 0..LEADS {
            let dst = &mut raw[l * RAW_LEN..(l + 1) * RAW_LEN];
            let src = &template[l * span..(l + 1) * span];
            for (i, v) in src.iter().enumerate() {
                let pos = start + i as isize;
                if pos >= 0 && (pos as usize) < RAW_LEN {
                    dst[pos as usize] += v * beat_amp;
                }
            }
        }
        t += rr * (1.0 + 0.03 * standard_normal(&mut rng));
    }

    for lead in raw.chunks_mut(RAW_LEN) {
        let freq = 0.15 + 0.25 * rng.random::<f64>();
        let phase = std::f64::consts::TAU * rng.random::<f64>();
        let wander = 0.1 * rng.random::<f64>();
        // baseline wander by phasor rotation
        let (step_sin, step_cos) = (std::f64::consts::TAU * freq / fs).sin_cos();
        let (mut sin, mut cos) = phase.sin_cos();
        for v in lead.iter_mut() {
            *v += wander * sin;
            (sin, cos) = (sin * step_cos + cos * step_sin, cos * step_cos - sin * step_sin);
            if spec.noise_sd > 0.0 {
                *v += spec.noise_sd * standard_normal(&mut rng);
            }
        }
    }
    Tensor::new(vec![LEADS, RAW_LEN], raw)
}

/// Preprocessed `[12, 4096]` voltages of one record.
pub(crate) fn render(p: &PatientState, spec: &CohortSpec, patient: usize, record: usize) -> Result<Tensor> {
    preprocess(&render_raw(p, spec, patient, record)?)
}

/// Mean ST-segment voltage over V2-V4 relative to the PR baseline, averaged over
/// detected beats: a fixed linear probe of the planted diagnosis signal.
pub fn st_probe_score(voltages: &Tensor) -> f64 {
    let len = voltages.dim(1);
    let fs = SAMPLE_RATE_HZ;
    // QRS energy: absolute slopes of the box-smoothed leads, summed over leads
    const SMOOTH: usize = 10;
    let mut energy = vec![0.0; len];
    for lead in voltages.data().chunks(len) {
        let mut prefix = vec![0.0; len + 1];
        for (i, v) in lead.iter().enumerate() {
            prefix[i + 1] = prefix[i] + v;
        }
        for i in SMOOTH..len {
            energy[i - SMOOTH / 2] += (prefix[i + 1] - 2.0 * prefix[i + 1 - SMOOTH / 2] + prefix[i + 1 - SMOOTH]).abs();
        }
    }
    let max = energy.iter().cloned().fold(0.0, f64::max);
    let refractory = (0.3 * fs) as usize;
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < len {
        if energy[i] > 0.5 * max {
            let end = (i + (0.05 * fs) as usize).min(len);
            let best = (i..end).max_by(|&a, &b| energy[a].total_cmp(&energy[b])).unwrap_or(i);
            peaks.push(best);
            i = best + refractory;
        } else {
            i += 1;
        }
    }
    let window = |centre: usize, from: f64, to: f64| -> Option<(usize, usize)> {
        let a = centre as isize + (from * fs) as isize;
        let b = centre as isize + (to * fs) as isize;
        (a >= 0 && (b as usize) < len).then_some((a as usize, b as usize))
    };
    let mut total = 0.0;
    let mut count = 0;
    for &pk in &peaks {
        let (Some(st), Some(base)) = (window(pk, 0.08, 0.14), window(pk, -0.10, -0.06)) else {
            continue;
        };
        for l in DIAGNOSIS_LEADS {
            let lead = &voltages.data()[l * len..(l + 1) * len];
            let mean = |(a, b): (usize, usize)| lead[a..b].iter().sum::<f64>() / (b - a) as f64;
            total += mean(st) - mean(base);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

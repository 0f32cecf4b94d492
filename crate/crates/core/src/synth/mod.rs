//! Deterministic synthetic ECG cohorts.
//!
//! A cohort is a list of record metadata plus a voltage store. Synthetic
//! voltages are regenerated on demand from the cohort spec, so a cohort of tens
//! of thousands of ECGs costs only its metadata in memory. On disk a cohort is
//! a directory with `manifest.json` and, optionally, `voltages.bin`
//! (little-endian f64 blocks of `[12, 4096]` in manifest order).

mod generate;
mod spec;

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use generate::{st_probe_score, PatientState, CODE_EFFECTS, DIAGNOSIS_LEADS};
pub use spec::CohortSpec;

use crate::error::{Error, Result};
use crate::model::{EcgRecord, RecordMeta, INPUT_LEN, LEADS};
use crate::rng::rng_for;
use crate::tensor::Tensor;

pub const GENERATOR_VERSION: u32 = 1;
pub const MANIFEST_FORMAT: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const VOLTAGES_FILE: &str = "voltages.bin";

const BLOCK_VALUES: usize = LEADS * INPUT_LEN;
const BLOCK_BYTES: usize = BLOCK_VALUES * 8;

/// One record of a cohort and where its voltages come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    #[serde(flatten)]
    pub meta: RecordMeta,
    /// Generator coordinates: patient index and the record's index within the patient.
    pub patient_index: usize,
    pub record_index: usize,
    /// Block index in the backing voltage file or memory store.
    pub offset: usize,
}

#[derive(Debug, Clone)]
enum Store {
    Synthetic { spec: CohortSpec, lambda: f64 },
    File { path: PathBuf },
    Memory(Arc<Vec<Tensor>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoltageStore {
    /// Voltages in `voltages.bin`.
    File,
    /// No voltage file; voltages are regenerated from the spec echo.
    Synthetic,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    generator_version: u32,
    spec: Option<CohortSpec>,
    voltage_store: VoltageStore,
    records: Vec<Entry>,
}

/// Which holdout ECGs a task is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSelection {
    /// First ECG of every episode.
    Diagnosis,
    /// First ECG of one randomly chosen positive episode per positive patient.
    Mortality,
}

#[derive(Debug, Clone)]
pub struct Cohort {
    /// Generating spec; `None` for cohorts assembled from existing records.
    pub spec: Option<CohortSpec>,
    pub generator_version: u32,
    entries: Vec<Entry>,
    store: Store,
}

impl Cohort {
    pub fn generate(spec: &CohortSpec) -> Result<Self> {
        spec.validate()?;
        let lambda = generate::calibrate_baseline(spec);
        let per_patient: Vec<Vec<Entry>> = (0..spec.n_patients)
            .into_par_iter()
            .map(|p| patient_entries(spec, p, lambda))
            .collect();
        let mut entries: Vec<Entry> = per_patient.into_iter().flatten().collect();
        for (i, e) in entries.iter_mut().enumerate() {
            e.offset = i;
        }
        Ok(Self {
            spec: Some(spec.clone()),
            generator_version: GENERATOR_VERSION,
            entries,
            store: Store::Synthetic {
                spec: spec.clone(),
                lambda,
            },
        })
    }

    /// In-memory cohort from existing records.
    pub fn from_records(records: Vec<EcgRecord>) -> Result<Self> {
        let mut entries = Vec::with_capacity(records.len());
        let mut voltages = Vec::with_capacity(records.len());
        let mut patients: HashMap<String, (usize, usize)> = HashMap::new();
        for (i, r) in records.into_iter().enumerate() {
            let next = patients.len();
            let slot = patients.entry(r.meta.patient_id.clone()).or_insert((next, 0));
            entries.push(Entry {
                meta: r.meta,
                patient_index: slot.0,
                record_index: slot.1,
                offset: i,
            });
            slot.1 += 1;
            voltages.push(r.voltages);
        }
        Ok(Self {
            spec: None,
            generator_version: GENERATOR_VERSION,
            entries,
            store: Store::Memory(Arc::new(voltages)),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn meta(&self, i: usize) -> &RecordMeta {
        &self.entries[i].meta
    }

    pub fn metas(&self) -> impl DoubleEndedIterator<Item = &RecordMeta> + ExactSizeIterator {
        self.entries.iter().map(|e| &e.meta)
    }

    /// Distinct patient ids in order of first appearance.
    pub fn patient_ids(&self) -> Vec<&str> {
        let mut seen = std::collections::HashSet::new();
        self.entries
            .iter()
            .map(|e| e.meta.patient_id.as_str())
            .filter(|id| seen.insert(*id))
            .collect()
    }

    /// Fraction of patients with a positive diagnosis label.
    pub fn positive_patient_fraction(&self) -> f64 {
        let mut by_patient: BTreeMap<&str, bool> = BTreeMap::new();
        for e in &self.entries {
            let pos = by_patient.entry(&e.meta.patient_id).or_insert(false);
            *pos |= e.meta.label_covid == Some(true);
        }
        let n = by_patient.len().max(1);
        by_patient.values().filter(|&&p| p).count() as f64 / n as f64
    }

    /// Preprocessed `[12, 4096]` voltages of record `i`.
    pub fn voltages(&self, i: usize) -> Result<Tensor> {
        let e = self
            .entries
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("record {i} out of range ({} records)", self.len())))?;
        match &self.store {
            Store::Synthetic { spec, lambda } => {
                let state = generate::draw_patient(spec, e.patient_index, *lambda);
                generate::render(&state, spec, e.patient_index, e.record_index)
            }
            Store::Memory(v) => v
                .get(e.offset)
                .cloned()
                .ok_or_else(|| Error::Data(format!("memory store has no block {}", e.offset))),
            Store::File { path } => read_block(path, e.offset),
        }
    }

    pub fn record(&self, i: usize) -> Result<EcgRecord> {
        EcgRecord::new(self.entries[i].meta.clone(), self.voltages(i)?)
    }

    /// Materializes the given records, rendering in parallel.
    pub fn records(&self, indices: &[usize]) -> Result<Vec<EcgRecord>> {
        indices.par_iter().map(|&i| self.record(i)).collect()
    }

    /// Copy with every record's voltages rendered into memory; later reads
    /// skip regeneration. Costs `len * 12 * 4096 * 8` bytes.
    pub fn materialize(&self) -> Result<Self> {
        let all: Vec<usize> = (0..self.len()).collect();
        let voltages: Vec<Tensor> = all.par_iter().map(|&i| self.voltages(i)).collect::<Result<_>>()?;
        let mut entries = self.entries.clone();
        for (i, e) in entries.iter_mut().enumerate() {
            e.offset = i;
        }
        Ok(Self {
            spec: self.spec.clone(),
            generator_version: self.generator_version,
            entries,
            store: Store::Memory(Arc::new(voltages)),
        })
    }

    /// Sub-cohort sharing this cohort's voltage store.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            spec: self.spec.clone(),
            generator_version: self.generator_version,
            entries: indices.iter().map(|&i| self.entries[i].clone()).collect(),
            store: self.store.clone(),
        }
    }

    /// Writes the cohort directory. With [`VoltageStore::Synthetic`] only the
    /// manifest is written and voltages are regenerated on load.
    pub fn save(&self, dir: &Path, store: VoltageStore) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut records = self.entries.clone();
        match store {
            VoltageStore::Synthetic => {
                if !matches!(self.store, Store::Synthetic { .. }) {
                    return Err(Error::InvalidArgument(
                        "only generated cohorts can be saved without voltages".into(),
                    ));
                }
            }
            VoltageStore::File => {
                let path = dir.join(VOLTAGES_FILE);
                let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
                let mut w = BufWriter::new(file);
                for (chunk_start, chunk) in (0..self.len()).collect::<Vec<_>>().chunks(64).enumerate() {
                    let blocks: Vec<Tensor> = chunk.par_iter().map(|&i| self.voltages(i)).collect::<Result<_>>()?;
                    for (j, block) in blocks.iter().enumerate() {
                        let mut bytes = Vec::with_capacity(BLOCK_BYTES);
                        for v in block.data() {
                            bytes.extend_from_slice(&v.to_le_bytes());
                        }
                        w.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
                        records[chunk_start * 64 + j].offset = chunk_start * 64 + j;
                    }
                }
                w.flush().map_err(|e| Error::io(&path, e))?;
            }
        }
        let manifest = Manifest {
            format_version: MANIFEST_FORMAT,
            generator_version: self.generator_version,
            spec: self.spec.clone(),
            voltage_store: store,
            records,
        };
        let path = dir.join(MANIFEST_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &manifest)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_reader(BufReader::new(file))?;
        if manifest.format_version != MANIFEST_FORMAT {
            return Err(Error::Data(format!(
                "{}: manifest format {} unsupported (expected {MANIFEST_FORMAT})",
                path.display(),
                manifest.format_version
            )));
        }
        for e in &manifest.records {
            e.meta.validate()?;
        }
        let store = match manifest.voltage_store {
            VoltageStore::File => {
                let vpath = dir.join(VOLTAGES_FILE);
                let len = std::fs::metadata(&vpath).map_err(|e| Error::io(&vpath, e))?.len();
                let expected = (manifest.records.len() * BLOCK_BYTES) as u64;
                if len != expected {
                    return Err(Error::Data(format!(
                        "{}: {len} bytes, expected {expected} for {} records",
                        vpath.display(),
                        manifest.records.len()
                    )));
                }
                Store::File { path: vpath }
            }
            VoltageStore::Synthetic => {
                let spec = manifest
                    .spec
                    .clone()
                    .ok_or_else(|| Error::Data("synthetic voltage store requires a spec echo".into()))?;
                if manifest.generator_version != GENERATOR_VERSION {
                    return Err(Error::Data(format!(
                        "cohort was generated by generator version {}, this build regenerates version {GENERATOR_VERSION}",
                        manifest.generator_version
                    )));
                }
                spec.validate()?;
                let lambda = generate::calibrate_baseline(&spec);
                Store::Synthetic { spec, lambda }
            }
        };
        Ok(Self {
            spec: manifest.spec,
            generator_version: manifest.generator_version,
            entries: manifest.records,
            store,
        })
    }
}

fn read_block(path: &Path, offset: usize) -> Result<Tensor> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    file.seek(SeekFrom::Start((offset * BLOCK_BYTES) as u64))
        .map_err(|e| Error::io(path, e))?;
    let mut bytes = vec![0u8; BLOCK_BYTES];
    file.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
    let data = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(vec![LEADS, INPUT_LEN], data)
}

fn patient_entries(spec: &CohortSpec, p: usize, lambda: f64) -> Vec<Entry> {
    let state = generate::draw_patient(spec, p, lambda);
    let mut rng = rng_for(spec.seed, &[3, p as u64]);
    let stop = 1.0 / spec.ecgs_per_patient_mean;
    let mut n = 1;
    while n < 64 && !rng.random_bool(stop) {
        n += 1;
    }
    let patient_id = format!("P{}-{p:06}", spec.seed);
    let mut episode = 0;
    let mut acquisition = 0;
    (0..n)
        .map(|r| {
            if r > 0 {
                if rng.random_bool(spec.new_episode_prob) {
                    episode += 1;
                    acquisition = 0;
                } else {
                    acquisition += 1;
                }
            }
            Entry {
                meta: RecordMeta {
                    patient_id: patient_id.clone(),
                    episode_id: format!("{patient_id}-E{episode}"),
                    acquisition_index: acquisition,
                    age: state.age,
                    sex: state.sex,
                    label_covid: Some(state.positive),
                    survival: Some(state.survival),
                    source_labels: Some(generate::source_labels(&state, spec)),
                },
                patient_index: p,
                record_index: r,
                offset: 0,
            }
        })
        .collect()
}

/// Patient-level random split; returns `(dev, holdout)`.
pub fn split_by_patient(cohort: &Cohort, dev_fraction: f64, seed: u64) -> Result<(Cohort, Cohort)> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("dev_fraction {dev_fraction} outside (0, 1)")));
    }
    let (dev, rest) = patient_split_indices(cohort, dev_fraction, seed)?;
    Ok((cohort.subset(&dev), cohort.subset(&rest)))
}

/// Record indices of a patient-level split; the first part holds `round(fraction * patients)`
/// patients, clamped so both parts are non-empty.
pub fn patient_split_indices(cohort: &Cohort, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut ids = cohort.patient_ids();
    if ids.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "a patient split needs at least 2 patients, got {}",
            ids.len()
        )));
    }
    ids.shuffle(&mut rng_for(seed, &[0x5b17]));
    let take = ((fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    let first: std::collections::HashSet<&str> = ids[..take].iter().copied().collect();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (i, e) in cohort.entries.iter().enumerate() {
        if first.contains(e.meta.patient_id.as_str()) {
            a.push(i);
        } else {
            b.push(i);
        }
    }
    Ok((a, b))
}

/// Indices of the evaluation ECGs of `holdout`, in cohort order.
pub fn select_eval_ecgs(holdout: &Cohort, selection: EvalSelection, seed: u64) -> Result<Vec<usize>> {
    if holdout.is_empty() {
        return Err(Error::InvalidArgument("empty holdout".into()));
    }
    // first ECG (minimum acquisition index, then cohort order) per episode
    let mut first: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for (i, e) in holdout.entries.iter().enumerate() {
        let key = (e.meta.patient_id.as_str(), e.meta.episode_id.as_str());
        match first.get(&key) {
            Some(&j) if holdout.entries[j].meta.acquisition_index <= e.meta.acquisition_index => {}
            _ => {
                first.insert(key, i);
            }
        }
    }
    let mut chosen: Vec<usize> = match selection {
        EvalSelection::Diagnosis => first.into_values().collect(),
        EvalSelection::Mortality => {
            let mut by_patient: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for ((patient, _), i) in first {
                if holdout.entries[i].meta.label_covid == Some(true) {
                    by_patient.entry(patient).or_default().push(i);
                }
            }
            if by_patient.is_empty() {
                return Err(Error::Data("mortality evaluation needs at least one positive patient".into()));
            }
            by_patient
                .into_iter()
                .map(|(patient, episodes)| {
                    let key = crate::rng::derive_seed(seed, &[hash_id(patient)]);
                    episodes[(key % episodes.len() as u64) as usize]
                })
                .collect()
        }
    };
    chosen.sort_unstable();
    Ok(chosen)
}

/// Stable FNV-1a hash of an id, for per-patient random streams.
fn hash_id(id: &str) -> u64 {
    id.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

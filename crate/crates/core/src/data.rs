//! Multi-center adverse-event count datasets.
//!
//! The on-disk layout is a comma-separated file with the header
//! `site_id,patient_id,ae_count` and one row per patient.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

pub const HEADER: &str = "site_id,patient_id,ae_count";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DataError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("line {line}: expected header `{HEADER}`, found `{found}`")]
    BadHeader { line: usize, found: String },
    #[error("line {line}: expected 3 columns, found {found}")]
    ColumnCount { line: usize, found: usize },
    #[error("line {line}: ae_count `{value}` is not a non-negative integer")]
    BadCount { line: usize, value: String },
    #[error("line {line}: negative ae_count {value}")]
    NegativeCount { line: usize, value: i64 },
    #[error("line {line}: empty {field}")]
    EmptyField { line: usize, field: &'static str },
    #[error("line {line}: duplicate patient_id `{patient_id}` (first seen on line {first_line})")]
    DuplicatePatient {
        line: usize,
        patient_id: String,
        first_line: usize,
    },
    #[error("dataset has no patient rows")]
    Empty,
}

/// Input formats understood by [`load_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DatasetFormat {
    /// `site_id,patient_id,ae_count` with a header row.
    #[default]
    Csv,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub site_id: String,
    pub ae_count: u32,
}

/// Immutable collection of patient records grouped by site.
///
/// Sites are ordered by first appearance in the record list; every site
/// holds at least one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<PatientRecord>,
    site_ids: Vec<String>,
    site_members: Vec<Vec<usize>>,
    site_of_record: Vec<usize>,
}

/// Per-site sufficient statistics for the Poisson likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteStats {
    pub n_patients: usize,
    pub total_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub n_patients: usize,
    pub n_sites: usize,
    pub mean_site_size: f64,
    pub min_site_size: usize,
    pub max_site_size: usize,
    pub min_count: u32,
    pub max_count: u32,
}

impl Dataset {
    /// Builds a dataset, enforcing global `patient_id` uniqueness.
    pub fn from_records(records: Vec<PatientRecord>) -> Result<Self, DataError> {
        if records.is_empty() {
            return Err(DataError::Empty);
        }
        let mut seen: HashMap<&str, usize> = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if let Some(&first) = seen.get(r.patient_id.as_str()) {
                return Err(DataError::DuplicatePatient {
                    line: i + 1,
                    patient_id: r.patient_id.clone(),
                    first_line: first + 1,
                });
            }
            seen.insert(&r.patient_id, i);
        }
        Ok(Self::index(records))
    }

    fn index(records: Vec<PatientRecord>) -> Self {
        let mut site_ids = Vec::new();
        let mut site_members: Vec<Vec<usize>> = Vec::new();
        let mut lookup: HashMap<String, usize> = HashMap::new();
        let mut site_of_record = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            let idx = *lookup.entry(r.site_id.clone()).or_insert_with(|| {
                site_ids.push(r.site_id.clone());
                site_members.push(Vec::new());
                site_ids.len() - 1
            });
            site_members[idx].push(i);
            site_of_record.push(idx);
        }
        Self {
            records,
            site_ids,
            site_members,
            site_of_record,
        }
    }

    pub fn records(&self) -> &[PatientRecord] {
        &self.records
    }

    pub fn n_patients(&self) -> usize {
        self.records.len()
    }

    pub fn n_sites(&self) -> usize {
        self.site_ids.len()
    }

    pub fn site_ids(&self) -> &[String] {
        &self.site_ids
    }

    /// Record indices belonging to site `site`.
    pub fn site_members(&self, site: usize) -> &[usize] {
        &self.site_members[site]
    }

    /// Site index of record `record`.
    pub fn site_of(&self, record: usize) -> usize {
        self.site_of_record[record]
    }

    pub fn site_index(&self, site_id: &str) -> Option<usize> {
        self.site_ids.iter().position(|s| s == site_id)
    }

    pub fn site_size(&self, site: usize) -> usize {
        self.site_members[site].len()
    }

    pub fn site_stats(&self) -> Vec<SiteStats> {
        self.site_members
            .iter()
            .map(|members| SiteStats {
                n_patients: members.len(),
                total_count: members
                    .iter()
                    .map(|&i| u64::from(self.records[i].ae_count))
                    .sum(),
            })
            .collect()
    }

    /// New dataset restricted to the given site ids, preserving record order.
    ///
    /// Returns `None` when no record matches.
    pub fn subset_sites<S: AsRef<str>>(&self, site_ids: &[S]) -> Option<Dataset> {
        let keep: HashSet<&str> = site_ids.iter().map(|s| s.as_ref()).collect();
        let records: Vec<PatientRecord> = self
            .records
            .iter()
            .filter(|r| keep.contains(r.site_id.as_str()))
            .cloned()
            .collect();
        if records.is_empty() {
            None
        } else {
            Some(Self::index(records))
        }
    }

    pub fn summary(&self) -> DatasetSummary {
        summarize(self)
    }
}

pub fn summarize(dataset: &Dataset) -> DatasetSummary {
    let sizes = dataset.site_members.iter().map(Vec::len);
    let counts = dataset.records.iter().map(|r| r.ae_count);
    let n_patients = dataset.n_patients();
    let n_sites = dataset.n_sites();
    DatasetSummary {
        n_patients,
        n_sites,
        mean_site_size: n_patients as f64 / n_sites as f64,
        min_site_size: sizes.clone().min().unwrap_or(0),
        max_site_size: sizes.max().unwrap_or(0),
        min_count: counts.clone().min().unwrap_or(0),
        max_count: counts.max().unwrap_or(0),
    }
}

impl fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} patients, {} sites", self.n_patients, self.n_sites)?;
        writeln!(
            f,
            "site size: mean {:.2}, range {}-{}",
            self.mean_site_size, self.min_site_size, self.max_site_size
        )?;
        write!(f, "AE count range: {}-{}", self.min_count, self.max_count)
    }
}

impl DatasetSummary {
    /// `key=value` lines, one per field.
    pub fn to_key_values(&self) -> String {
        format!(
            "n_patients={}\nn_sites={}\nmean_site_size={}\nmin_site_size={}\nmax_site_size={}\nmin_count={}\nmax_count={}\n",
            self.n_patients,
            self.n_sites,
            self.mean_site_size,
            self.min_site_size,
            self.max_site_size,
            self.min_count,
            self.max_count
        )
    }
}

/// Parses dataset text. Line numbers in errors are 1-based file lines.
pub fn parse_dataset(text: &str) -> Result<Dataset, DataError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut lines = text.split('\n').enumerate().map(|(i, l)| {
        (i + 1, l.strip_suffix('\r').unwrap_or(l))
    });

    let (line_no, header) = lines.next().unwrap_or((1, ""));
    if header.trim() != HEADER {
        return Err(DataError::BadHeader {
            line: line_no,
            found: header.to_string(),
        });
    }

    let mut records = Vec::new();
    let mut first_seen: HashMap<String, usize> = HashMap::new();
    let mut pending_blank: Option<usize> = None;
    for (line, raw) in lines {
        if raw.trim().is_empty() {
            pending_blank.get_or_insert(line);
            continue;
        }
        // Blank lines are only tolerated at the end of the file.
        if let Some(blank) = pending_blank {
            return Err(DataError::ColumnCount {
                line: blank,
                found: 0,
            });
        }
        let cols: Vec<&str> = raw.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(DataError::ColumnCount {
                line,
                found: cols.len(),
            });
        }
        let (site_id, patient_id, count) = (cols[0], cols[1], cols[2]);
        if site_id.is_empty() {
            return Err(DataError::EmptyField {
                line,
                field: "site_id",
            });
        }
        if patient_id.is_empty() {
            return Err(DataError::EmptyField {
                line,
                field: "patient_id",
            });
        }
        let ae_count = match count.parse::<i64>() {
            Ok(v) if v < 0 => return Err(DataError::NegativeCount { line, value: v }),
            Ok(v) => u32::try_from(v).map_err(|_| DataError::BadCount {
                line,
                value: count.to_string(),
            })?,
            Err(_) => {
                return Err(DataError::BadCount {
                    line,
                    value: count.to_string(),
                })
            }
        };
        if let Some(&first_line) = first_seen.get(patient_id) {
            return Err(DataError::DuplicatePatient {
                line,
                patient_id: patient_id.to_string(),
                first_line,
            });
        }
        first_seen.insert(patient_id.to_string(), line);
        records.push(PatientRecord {
            patient_id: patient_id.to_string(),
            site_id: site_id.to_string(),
            ae_count,
        });
    }
    if records.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(Dataset::index(records))
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    match format {
        DatasetFormat::Csv => parse_dataset(&text),
    }
}

pub fn write_dataset<W: Write>(dataset: &Dataset, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{HEADER}")?;
    for r in &dataset.records {
        writeln!(out, "{},{},{}", r.site_id, r.patient_id, r.ae_count)?;
    }
    Ok(())
}

pub fn dataset_to_string(dataset: &Dataset) -> String {
    let mut buf = Vec::new();
    write_dataset(dataset, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("dataset fields are UTF-8")
}

/// Draws a synthetic dataset from the hierarchical model: one rate per site
/// from `Gamma(alpha, beta)` and Poisson counts given the rate. Sites are
/// named `S001..`, patients `S001-P01..`.
pub fn simulate_dataset(site_sizes: &[usize], params: &crate::model::HyperParams, seed: u64) -> Result<Dataset, DataError> {
    use rand_distr::{Distribution, Poisson};
    let mut rng = crate::rng::stream(seed, &[0x73696d]);
    let mut records = Vec::new();
    for (s, &n) in site_sizes.iter().enumerate() {
        let lambda = crate::sampler::sample_gamma(params.alpha(), params.beta(), &mut rng);
        let pois = Poisson::new(lambda).expect("positive rate");
        for p in 0..n {
            records.push(PatientRecord {
                patient_id: format!("S{:03}-P{:02}", s + 1, p + 1),
                site_id: format!("S{:03}", s + 1),
                ae_count: pois.sample(&mut rng) as u32,
            });
        }
    }
    Dataset::from_records(records)
}

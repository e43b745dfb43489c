//! Labelled record collections: CSV ingestion, train/validation splitting,
//! minority oversampling and a synthetic generator with a known oracle.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{
    bin_duration, expected_duration_range, AssessmentManifest, DurationBin, EncodeError, Encoder, EncoderConfig,
    FeatureVector, Label, RawRecord, FEATURE_LEN, N_QUESTIONS, SUSPECT_MIN_CORRECT,
};
use crate::ipdetector::IpAddress;
use crate::numerics::{Prng, Tensor};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("line {line}, column {column:?}: {message}")]
    Field { line: u64, column: String, message: String },
    #[error("line {line}: {source}")]
    Record { line: u64, source: EncodeError },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot augment: no suspected samples")]
    NoSuspected,
    #[error("train fraction {0} outside (0, 1)")]
    Fraction(f64),
    #[error("suspected prior {0} outside [0, 1]")]
    Prior(f64),
    #[error("sample {0} has no raw record to write")]
    MissingRaw(usize),
    #[error("synthetic generation impossible: {0}")]
    Synth(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Synthetic,
    Augmented,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: FeatureVector,
    pub label: Label,
    /// Absent for augmented samples, whose bits no longer match any row.
    pub raw: Option<RawRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub provenance: Provenance,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, provenance: Provenance, samples: Vec<Sample>) -> Self {
        Self {
            name: name.into(),
            provenance,
            samples,
        }
    }

    /// Encodes and labels raw records.
    pub fn from_records(
        name: impl Into<String>,
        provenance: Provenance,
        records: Vec<RawRecord>,
        encoder: &Encoder,
    ) -> Result<Self, EncodeError> {
        let samples = records
            .into_iter()
            .map(|r| {
                let (features, label) = encoder.encode(&r)?;
                Ok(Sample {
                    features,
                    label,
                    raw: Some(r),
                })
            })
            .collect::<Result<_, EncodeError>>()?;
        Ok(Self::new(name, provenance, samples))
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample counts indexed by class.
    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for s in &self.samples {
            counts[s.label.index()] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Features as an `n × 23` matrix.
    pub fn features(&self) -> Tensor {
        let data = self.samples.iter().flat_map(|s| s.features.to_f64()).collect();
        Tensor::from_raw(vec![self.samples.len(), FEATURE_LEN], data)
    }

    fn subset(&self, name: String, idx: &[usize]) -> Dataset {
        Dataset::new(
            name,
            self.provenance,
            idx.iter().map(|&i| self.samples[i].clone()).collect(),
        )
    }
}

const COLUMNS_AFTER_SCORES: [&str; 3] = ["total_score", "minutes", "ip"];

fn header() -> Vec<String> {
    let mut h = vec!["candidate_id".to_string()];
    h.extend((1..=N_QUESTIONS).map(|i| format!("q{i}")));
    h.extend(COLUMNS_AFTER_SCORES.iter().map(|s| s.to_string()));
    h.push("set_id".into());
    h
}

/// Reads a CSV export; each row is validated, encoded and labelled.
pub fn load_csv(path: impl AsRef<Path>, encoder: &Encoder) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_csv(file, name, encoder)
}

pub fn read_csv(reader: impl Read, name: impl Into<String>, encoder: &Encoder) -> Result<Dataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |col: &str| -> Result<usize, DatasetError> {
        headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| DatasetError::MissingColumn(col.to_string()))
    };
    let wanted = header();
    let set_col = headers.iter().position(|h| h == "set_id");
    let cols: Vec<usize> = wanted[..wanted.len() - 1]
        .iter()
        .map(|c| find(c))
        .collect::<Result<_, _>>()?;

    let mut samples = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |k: usize| row.get(cols[k]).unwrap_or("");
        let int = |k: usize| -> Result<u32, DatasetError> {
            field(k).parse().map_err(|_| DatasetError::Field {
                line,
                column: wanted[k].clone(),
                message: format!("expected a non-negative integer, got {:?}", field(k)),
            })
        };
        let mut q_scores = [0u32; N_QUESTIONS];
        for (q, s) in q_scores.iter_mut().enumerate() {
            *s = int(q + 1)?;
        }
        let ip: IpAddress = field(N_QUESTIONS + 3).parse().map_err(|e| DatasetError::Field {
            line,
            column: "ip".into(),
            message: format!("{e}"),
        })?;
        let set_id = set_col
            .and_then(|c| row.get(c))
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        let raw = RawRecord {
            candidate_id: field(0).to_string(),
            q_scores,
            total_score: int(N_QUESTIONS + 1)?,
            minutes: int(N_QUESTIONS + 2)?,
            ip,
            set_id,
        };
        let (features, label) = encoder
            .encode(&raw)
            .map_err(|source| DatasetError::Record { line, source })?;
        samples.push(Sample {
            features,
            label,
            raw: Some(raw),
        });
    }
    Ok(Dataset::new(name, Provenance::Real, samples))
}

/// Writes the raw rows; every sample must carry one.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let mut buf = Vec::new();
    write_csv_to(ds, &mut buf)?;
    let path = path.as_ref();
    crate::io::write_atomic(path, &buf).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_csv_to(ds: &Dataset, writer: impl Write) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header())?;
    for (i, s) in ds.samples.iter().enumerate() {
        let r = s.raw.as_ref().ok_or(DatasetError::MissingRaw(i))?;
        let mut row = vec![r.candidate_id.clone()];
        row.extend(r.q_scores.iter().map(u32::to_string));
        row.push(r.total_score.to_string());
        row.push(r.minutes.to_string());
        row.push(r.ip.to_string());
        row.push(r.set_id.clone().unwrap_or_default());
        w.write_record(row)?;
    }
    w.flush().map_err(|e| DatasetError::Csv(e.into()))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl SplitSpec {
    /// 80:20, stratified.
    pub fn standard(seed: u64) -> Self {
        Self {
            train_fraction: 0.8,
            seed,
            stratified: true,
        }
    }
}

/// `⌊fraction · n⌋`, tolerant of binary rounding (0.8 · 95 must give 76).
fn floor_share(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) + 1e-9).floor() as usize
}

/// Seeded partition into `⌊f·n⌋` training and the remaining validation samples.
/// Stratification allots each class its proportional share of the training
/// size by largest remainder.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset), DatasetError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(DatasetError::Fraction(spec.train_fraction));
    }
    let n = ds.len();
    let n_train = floor_share(spec.train_fraction, n);
    let mut rng = Prng::new(spec.seed);
    let mut train = Vec::with_capacity(n_train);
    let mut val = Vec::with_capacity(n - n_train);

    if spec.stratified && n > 0 {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); 2];
        for (i, s) in ds.samples.iter().enumerate() {
            by_class[s.label.index()].push(i);
        }
        let quotas: Vec<f64> = by_class
            .iter()
            .map(|c| c.len() as f64 * n_train as f64 / n as f64)
            .collect();
        let mut take: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
        let mut order: Vec<usize> = (0..by_class.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - take[a] as f64;
            let rb = quotas[b] - take[b] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let mut missing = n_train - take.iter().sum::<usize>();
        for &k in order.iter().cycle() {
            if missing == 0 {
                break;
            }
            if take[k] < by_class[k].len() {
                take[k] += 1;
                missing -= 1;
            }
        }
        for (class, idx) in by_class.iter_mut().enumerate() {
            rng.shuffle(idx);
            train.extend_from_slice(&idx[..take[class]]);
            val.extend_from_slice(&idx[take[class]..]);
        }
        rng.shuffle(&mut train);
        rng.shuffle(&mut val);
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut idx);
        train.extend_from_slice(&idx[..n_train]);
        val.extend_from_slice(&idx[n_train..]);
    }
    Ok((
        ds.subset(format!("{}/train", ds.name), &train),
        ds.subset(format!("{}/validation", ds.name), &val),
    ))
}

/// Appends perturbed copies of suspected samples until both classes have the
/// same count. Each copy may gain or lose one correct answer (never dropping
/// below the suspicion threshold) and may swap short and long duration.
pub fn augment_minority(train: &Dataset, seed: u64) -> Result<Dataset, DatasetError> {
    let suspects: Vec<&Sample> = train.samples.iter().filter(|s| s.label == Label::Suspected).collect();
    if suspects.is_empty() {
        return Err(DatasetError::NoSuspected);
    }
    let [normal, suspected] = train.class_counts();
    let mut out = train.clone();
    if suspected >= normal {
        return Ok(out);
    }
    let mut rng = Prng::new(seed);
    for _ in suspected..normal {
        let mut fv = suspects[rng.index(suspects.len())].features;
        if rng.bernoulli(0.5) {
            let q = rng.index(N_QUESTIONS);
            if !fv.is_correct(q) {
                fv.set_answer(q, true);
            } else if fv.correct_count() > SUSPECT_MIN_CORRECT {
                fv.set_answer(q, false);
            }
        }
        if rng.bernoulli(0.25) {
            fv.set_bin(match fv.duration_bin() {
                DurationBin::Short => DurationBin::Long,
                _ => DurationBin::Short,
            });
        }
        debug_assert_eq!(crate::encoder::label_record(&fv), Label::Suspected);
        out.samples.push(Sample {
            features: fv,
            label: Label::Suspected,
            raw: None,
        });
    }
    out.provenance = Provenance::Augmented;
    out.name = format!("{}+aug", train.name);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub suspected_prior: f64,
    pub seed: u64,
    pub manifest: AssessmentManifest,
    pub encoder: EncoderConfig,
}

/// Inclusive minute ranges that land in each bin, or `None` when a bin is
/// unreachable with whole minutes.
fn minute_ranges(manifest: &AssessmentManifest, cfg: &EncoderConfig) -> [Option<(u32, u32)>; 3] {
    let range = expected_duration_range(manifest);
    let slow_edge = (cfg.slow_factor * f64::from(range.1) / 60.0).floor() as u32;
    let search_hi = slow_edge.saturating_mul(2).max(4) + 2;
    let mut found: [Option<(u32, u32)>; 3] = [None; 3];
    for m in 1..=search_hi {
        let slot = match bin_duration(m, range, cfg) {
            DurationBin::Short => 0,
            DurationBin::Normal => 1,
            DurationBin::Long => 2,
        };
        found[slot] = Some(found[slot].map_or((m, m), |(lo, _)| (lo, m)));
    }
    found
}

/// Random records whose labels are a deterministic function of correct-count
/// and duration bin: normal rows have 8-17 correct answers and a normal
/// duration, suspected rows 18-20 correct and a short or long duration.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset, DatasetError> {
    if !(0.0..=1.0).contains(&spec.suspected_prior) {
        return Err(DatasetError::Prior(spec.suspected_prior));
    }
    let encoder = Encoder::new(spec.manifest.clone(), spec.encoder);
    let [short, normal, long] = minute_ranges(&spec.manifest, &spec.encoder);
    let normal = normal.ok_or_else(|| DatasetError::Synth("no whole-minute time is normal".into()))?;
    let abnormal: Vec<(u32, u32)> = [short, long].into_iter().flatten().collect();
    if abnormal.is_empty() && spec.suspected_prior > 0.0 {
        return Err(DatasetError::Synth("no whole-minute time is short or long".into()));
    }
    let max_total = spec.manifest.max_total();
    let mut rng = Prng::new(spec.seed);
    let mut records = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let suspected = rng.bernoulli(spec.suspected_prior);
        let (k, minutes_range) = if suspected {
            (18 + rng.index(3), abnormal[rng.index(abnormal.len())])
        } else {
            (8 + rng.index(10), normal)
        };
        let minutes = minutes_range.0 + rng.uniform(u64::from(minutes_range.1 - minutes_range.0 + 1)) as u32;
        let mut order: Vec<usize> = (0..N_QUESTIONS).collect();
        rng.shuffle(&mut order);
        let mut q_scores = [0u32; N_QUESTIONS];
        for (rank, &q) in order.iter().enumerate() {
            let max = spec.manifest.questions()[q].max_score;
            q_scores[q] = if rank < k {
                max
            } else {
                rng.uniform(u64::from(max)) as u32
            };
        }
        let sum: u32 = q_scores.iter().sum();
        let total_score = ((100 * u64::from(sum) + u64::from(max_total) / 2) / u64::from(max_total)) as u32;
        let ip = IpAddress::new(10, rng.index(4) as u8, rng.index(256) as u8, 1 + rng.index(254) as u8);
        records.push(RawRecord {
            candidate_id: format!("syn-{i:05}"),
            q_scores,
            total_score,
            minutes,
            ip,
            set_id: None,
        });
    }
    let ds = Dataset::from_records(
        format!("synthetic-{}", spec.seed),
        Provenance::Synthetic,
        records,
        &encoder,
    )
    .map_err(|e| DatasetError::Synth(e.to_string()))?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Difficulty;

    fn synth(n: usize, prior: f64, seed: u64) -> Dataset {
        generate_synthetic(&SynthSpec {
            n,
            suspected_prior: prior,
            seed,
            manifest: AssessmentManifest::uniform(Difficulty::Easy, 5).unwrap(),
            encoder: EncoderConfig::default(),
        })
        .unwrap()
    }

    #[test]
    fn split_sizes() {
        let ds = synth(95, 0.3, 1);
        let (t, v) = split(&ds, &SplitSpec::standard(3)).unwrap();
        assert_eq!((t.len(), v.len()), (76, 19));
    }

    #[test]
    fn minute_ranges_for_easy_manifest() {
        let r = minute_ranges(
            &AssessmentManifest::uniform(Difficulty::Easy, 5).unwrap(),
            &EncoderConfig::default(),
        );
        assert_eq!(r[0], Some((1, 1)));
        assert_eq!(r[1], Some((2, 10)));
        assert_eq!(r[2].unwrap().0, 11);
    }

    #[test]
    fn synthetic_prior() {
        assert!(synth(0, 0.5, 1).is_empty());
        let ds = synth(1000, 0.5, 42);
        let frac = ds.class_counts()[1] as f64 / 1000.0;
        assert!((0.46..=0.54).contains(&frac), "{frac}");
    }
}

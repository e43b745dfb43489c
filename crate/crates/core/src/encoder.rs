//! One-hot behavioural features from assessment records.
//!
//! A record becomes 23 bits: one correctness bit per question followed by a
//! one-hot duration bin ordered `(long, normal, short)`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ipdetector::IpAddress;

pub const N_QUESTIONS: usize = 20;
pub const FEATURE_LEN: usize = N_QUESTIONS + 3;
/// 90% of 20 questions.
pub const SUSPECT_MIN_CORRECT: usize = 18;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("manifest must list exactly {N_QUESTIONS} questions, found {0}")]
    QuestionCount(usize),
    #[error("question {question} has max_score 0")]
    ZeroMaxScore { question: usize },
    #[error("q{question} score {score} exceeds its maximum {max}")]
    ScoreExceedsMax { question: usize, score: u32, max: u32 },
    #[error("completion time must be at least one minute")]
    ZeroMinutes,
    #[error("total score {0} outside 0..=100")]
    TotalOutOfRange(u32),
    #[error("invalid feature bits: {0}")]
    Bits(String),
    #[error("cannot read manifest {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed manifest: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Moderate,
    Advanced,
}

impl Difficulty {
    /// Typical answering time for one question, in seconds.
    pub fn seconds_range(self) -> (u32, u32) {
        match self {
            Difficulty::Easy => (10, 20),
            Difficulty::Moderate => (30, 40),
            Difficulty::Advanced => (60, 120),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionSpec {
    pub difficulty: Difficulty,
    pub max_score: u32,
}

/// Difficulty and maximum score of each of the 20 questions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<QuestionSpec>", into = "Vec<QuestionSpec>")]
pub struct AssessmentManifest {
    questions: Vec<QuestionSpec>,
}

impl TryFrom<Vec<QuestionSpec>> for AssessmentManifest {
    type Error = EncodeError;

    fn try_from(questions: Vec<QuestionSpec>) -> Result<Self, EncodeError> {
        Self::new(questions)
    }
}

impl From<AssessmentManifest> for Vec<QuestionSpec> {
    fn from(m: AssessmentManifest) -> Self {
        m.questions
    }
}

impl AssessmentManifest {
    pub fn new(questions: Vec<QuestionSpec>) -> Result<Self, EncodeError> {
        if questions.len() != N_QUESTIONS {
            return Err(EncodeError::QuestionCount(questions.len()));
        }
        if let Some(q) = questions.iter().position(|q| q.max_score == 0) {
            return Err(EncodeError::ZeroMaxScore { question: q + 1 });
        }
        Ok(Self { questions })
    }

    /// Twenty questions of one difficulty and score.
    pub fn uniform(difficulty: Difficulty, max_score: u32) -> Result<Self, EncodeError> {
        Self::new(vec![QuestionSpec { difficulty, max_score }; N_QUESTIONS])
    }

    pub fn from_json(text: &str) -> Result<Self, EncodeError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EncodeError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| EncodeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn questions(&self) -> &[QuestionSpec] {
        &self.questions
    }

    pub fn max_total(&self) -> u32 {
        self.questions.iter().map(|q| q.max_score).sum()
    }
}

/// One row of an LMS assessment export.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawRecord {
    pub candidate_id: String,
    pub q_scores: [u32; N_QUESTIONS],
    pub total_score: u32,
    pub minutes: u32,
    pub ip: IpAddress,
    pub set_id: Option<String>,
}

impl RawRecord {
    pub fn validate(&self) -> Result<(), EncodeError> {
        if self.minutes == 0 {
            return Err(EncodeError::ZeroMinutes);
        }
        if self.total_score > 100 {
            return Err(EncodeError::TotalOutOfRange(self.total_score));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Suspected,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Normal, Label::Suspected];

    /// Class index; `normal` is 0 everywhere.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Suspected => "suspected",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "normal" => Ok(Label::Normal),
            "suspected" => Ok(Label::Suspected),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// Position of the completion time relative to the expected range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DurationBin {
    Short,
    Normal,
    Long,
}

impl DurationBin {
    /// Offset of this bin's bit within the three duration bits.
    pub fn bit_offset(self) -> usize {
        match self {
            DurationBin::Long => 0,
            DurationBin::Normal => 1,
            DurationBin::Short => 2,
        }
    }

    pub fn is_abnormal(self) -> bool {
        self != DurationBin::Normal
    }
}

/// Fast/slow cut-offs as multiples of the expected range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Short iff elapsed seconds < `fast_factor · min_seconds`.
    pub fast_factor: f64,
    /// Long iff elapsed seconds > `slow_factor · max_seconds`.
    pub slow_factor: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            fast_factor: 0.5,
            slow_factor: 1.5,
        }
    }
}

/// The 23-bit encoding of one record.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureVector {
    bits: [u8; FEATURE_LEN],
}

impl FeatureVector {
    pub fn new(correct: [bool; N_QUESTIONS], bin: DurationBin) -> Self {
        let mut bits = [0u8; FEATURE_LEN];
        for (b, &c) in bits.iter_mut().zip(&correct) {
            *b = c as u8;
        }
        bits[N_QUESTIONS + bin.bit_offset()] = 1;
        Self { bits }
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self, EncodeError> {
        if bits.len() != FEATURE_LEN {
            return Err(EncodeError::Bits(format!(
                "expected {FEATURE_LEN} bits, got {}",
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(EncodeError::Bits("bits must be 0 or 1".into()));
        }
        let duration: u8 = bits[N_QUESTIONS..].iter().sum();
        if duration != 1 {
            return Err(EncodeError::Bits("duration bits must be one-hot".into()));
        }
        let mut out = [0u8; FEATURE_LEN];
        out.copy_from_slice(bits);
        Ok(Self { bits: out })
    }

    pub fn bits(&self) -> &[u8; FEATURE_LEN] {
        &self.bits
    }

    pub fn is_correct(&self, question: usize) -> bool {
        self.bits[question] == 1
    }

    pub fn correct_count(&self) -> usize {
        self.bits[..N_QUESTIONS].iter().filter(|&&b| b == 1).count()
    }

    pub fn duration_bin(&self) -> DurationBin {
        match self.bits[N_QUESTIONS..].iter().position(|&b| b == 1) {
            Some(0) => DurationBin::Long,
            Some(1) => DurationBin::Normal,
            _ => DurationBin::Short,
        }
    }

    pub(crate) fn set_answer(&mut self, question: usize, correct: bool) {
        self.bits[question] = correct as u8;
    }

    pub(crate) fn set_bin(&mut self, bin: DurationBin) {
        self.bits[N_QUESTIONS..].fill(0);
        self.bits[N_QUESTIONS + bin.bit_offset()] = 1;
    }

    pub fn to_f64(&self) -> [f64; FEATURE_LEN] {
        self.bits.map(f64::from)
    }
}

impl fmt::Debug for FeatureVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let answers: String = self.bits[..N_QUESTIONS].iter().map(|b| char::from(b'0' + b)).collect();
        let tail: String = self.bits[N_QUESTIONS..].iter().map(|b| char::from(b'0' + b)).collect();
        write!(f, "FeatureVector({answers}|{tail})")
    }
}

/// Expected completion window in seconds: per-question bounds summed.
pub fn expected_duration_range(manifest: &AssessmentManifest) -> (u32, u32) {
    manifest.questions().iter().fold((0, 0), |(lo, hi), q| {
        let (a, b) = q.difficulty.seconds_range();
        (lo + a, hi + b)
    })
}

/// Classifies a completion time; equality with either cut-off counts as normal.
pub fn bin_duration(minutes: u32, range: (u32, u32), cfg: &EncoderConfig) -> DurationBin {
    let elapsed = 60.0 * f64::from(minutes);
    if elapsed < cfg.fast_factor * f64::from(range.0) {
        DurationBin::Short
    } else if elapsed > cfg.slow_factor * f64::from(range.1) {
        DurationBin::Long
    } else {
        DurationBin::Normal
    }
}

/// A question counts as correct only with full marks.
pub fn encode_record(
    rec: &RawRecord,
    manifest: &AssessmentManifest,
    cfg: &EncoderConfig,
) -> Result<FeatureVector, EncodeError> {
    rec.validate()?;
    let mut correct = [false; N_QUESTIONS];
    for (i, (&score, q)) in rec.q_scores.iter().zip(manifest.questions()).enumerate() {
        if score > q.max_score {
            return Err(EncodeError::ScoreExceedsMax {
                question: i + 1,
                score,
                max: q.max_score,
            });
        }
        correct[i] = score == q.max_score;
    }
    let bin = bin_duration(rec.minutes, expected_duration_range(manifest), cfg);
    Ok(FeatureVector::new(correct, bin))
}

/// Suspected iff at least 18 of 20 answers are correct and the duration bin is
/// short or long.
pub fn label_record(fv: &FeatureVector) -> Label {
    if fv.correct_count() >= SUSPECT_MIN_CORRECT && fv.duration_bin().is_abnormal() {
        Label::Suspected
    } else {
        Label::Normal
    }
}

/// A manifest bundled with its duration cut-offs.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub manifest: AssessmentManifest,
    pub config: EncoderConfig,
}

impl Encoder {
    pub fn new(manifest: AssessmentManifest, config: EncoderConfig) -> Self {
        Self { manifest, config }
    }

    pub fn encode(&self, rec: &RawRecord) -> Result<(FeatureVector, Label), EncodeError> {
        let fv = encode_record(rec, &self.manifest, &self.config)?;
        Ok((fv, label_record(&fv)))
    }

    pub fn range(&self) -> (u32, u32) {
        expected_duration_range(&self.manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn easy() -> AssessmentManifest {
        AssessmentManifest::uniform(Difficulty::Easy, 5).unwrap()
    }

    fn record(scores: [u32; N_QUESTIONS], minutes: u32) -> RawRecord {
        RawRecord {
            candidate_id: "c1".into(),
            total_score: scores.iter().sum::<u32>().min(100),
            q_scores: scores,
            minutes,
            ip: "175.116.139.44".parse().unwrap(),
            set_id: None,
        }
    }

    fn fv(correct: usize, bin: DurationBin) -> FeatureVector {
        let mut c = [false; N_QUESTIONS];
        c[..correct].iter_mut().for_each(|b| *b = true);
        FeatureVector::new(c, bin)
    }

    #[test]
    fn duration_ranges() {
        assert_eq!(expected_duration_range(&easy()), (200, 400));
        let mut qs = vec![
            QuestionSpec {
                difficulty: Difficulty::Easy,
                max_score: 5
            };
            10
        ];
        qs.extend(vec![
            QuestionSpec {
                difficulty: Difficulty::Advanced,
                max_score: 5
            };
            10
        ]);
        assert_eq!(
            expected_duration_range(&AssessmentManifest::new(qs).unwrap()),
            (700, 1400)
        );
        assert!(matches!(
            AssessmentManifest::new(vec![]),
            Err(EncodeError::QuestionCount(0))
        ));
    }

    #[test]
    fn binning_thresholds() {
        let cfg = EncoderConfig::default();
        assert_eq!(bin_duration(13, (200, 400), &cfg), DurationBin::Long);
        // 60 s == 0.5 * 120 s sits exactly on the fast cut-off
        assert_eq!(bin_duration(1, (120, 400), &cfg), DurationBin::Normal);
        // 600 s == 1.5 * 400 s sits exactly on the slow cut-off
        assert_eq!(bin_duration(10, (200, 400), &cfg), DurationBin::Normal);
        assert_eq!(bin_duration(1, (700, 1400), &cfg), DurationBin::Short);
    }

    #[test]
    fn encodes_full_marks_and_bins() {
        let v = encode_record(&record([5; N_QUESTIONS], 13), &easy(), &EncoderConfig::default()).unwrap();
        assert_eq!(v.correct_count(), 20);
        assert_eq!(&v.bits()[20..], &[1, 0, 0]);

        let zero = encode_record(&record([0; N_QUESTIONS], 5), &easy(), &EncoderConfig::default()).unwrap();
        let mut expected = [0u8; FEATURE_LEN];
        expected[21] = 1;
        assert_eq!(zero.bits(), &expected);

        let mut bad = [5; N_QUESTIONS];
        bad[3] = 6;
        let err = encode_record(&record(bad, 5), &easy(), &EncoderConfig::default()).unwrap_err();
        assert!(matches!(
            err,
            EncodeError::ScoreExceedsMax {
                question: 4,
                score: 6,
                max: 5
            }
        ));
    }

    #[test]
    fn labelling_rule() {
        assert_eq!(label_record(&fv(19, DurationBin::Short)), Label::Suspected);
        assert_eq!(label_record(&fv(18, DurationBin::Long)), Label::Suspected);
        assert_eq!(label_record(&fv(19, DurationBin::Normal)), Label::Normal);
        assert_eq!(label_record(&fv(10, DurationBin::Short)), Label::Normal);
        assert_eq!(label_record(&fv(17, DurationBin::Short)), Label::Normal);
    }

    #[test]
    fn bits_validation() {
        let good = fv(3, DurationBin::Normal);
        assert_eq!(FeatureVector::from_bits(good.bits()).unwrap(), good);
        let mut two_bins = *good.bits();
        two_bins[20] = 1;
        assert!(FeatureVector::from_bits(&two_bins).is_err());
        assert!(FeatureVector::from_bits(&[0; 22]).is_err());
    }

    #[test]
    fn manifest_json() {
        let json = r#"[{"difficulty":"easy","max_score":5}]"#;
        assert!(matches!(AssessmentManifest::from_json(json), Err(EncodeError::Json(_))));
        let full = serde_json::to_string(&easy()).unwrap();
        assert_eq!(AssessmentManifest::from_json(&full).unwrap(), easy());
        assert!(AssessmentManifest::from_json(&full.replace("easy", "hard")).is_err());
    }
}

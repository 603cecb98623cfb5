//! Company / call / exchange records, dataset I/O and validation, feature
//! standardisation and dataset splitting.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

pub const CALL_HISTORY_MONTHS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExpertType {
    Competitor,
    Customer,
    FormerExec,
    IndustryCons,
    Partner,
}

impl ExpertType {
    pub const ALL: [ExpertType; 5] = [
        ExpertType::Competitor,
        ExpertType::Customer,
        ExpertType::FormerExec,
        ExpertType::IndustryCons,
        ExpertType::Partner,
    ];
}

impl fmt::Display for ExpertType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExpertType::Competitor => "Competitor",
            ExpertType::Customer => "Customer",
            ExpertType::FormerExec => "FormerExec",
            ExpertType::IndustryCons => "IndustryCons",
            ExpertType::Partner => "Partner",
        };
        f.write_str(s)
    }
}

/// One question/answer pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    #[serde(rename = "q", default)]
    pub question_text: Option<String>,
    #[serde(rename = "a", default)]
    pub answer_text: Option<String>,
    #[serde(default)]
    pub q_emb: Option<Vec<f64>>,
    #[serde(default)]
    pub a_emb: Option<Vec<f64>>,
}

impl Exchange {
    pub fn is_embedded(&self) -> bool {
        self.q_emb.is_some() && self.a_emb.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Call {
    pub call_id: String,
    #[serde(rename = "date")]
    pub call_date: NaiveDate,
    pub expert_type: ExpertType,
    pub exchanges: Vec<Exchange>,
}

/// Structured company covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub age_months: f64,
    pub founders_count: f64,
    pub rounds: f64,
    pub raised_funding_musd: f64,
    pub investor_count: f64,
    pub active_products: f64,
    pub it_spend_musd: f64,
    pub calls_last_24m: Vec<u32>,
    pub hq: String,
    pub trademark_class: String,
}

impl FeatureVector {
    const SCALAR_NAMES: [&'static str; 7] = [
        "age_months",
        "founders_count",
        "rounds",
        "raised_funding_musd",
        "investor_count",
        "active_products",
        "it_spend_musd",
    ];

    fn scalars(&self) -> [f64; 7] {
        [
            self.age_months,
            self.founders_count,
            self.rounds,
            self.raised_funding_musd,
            self.investor_count,
            self.active_products,
            self.it_spend_musd,
        ]
    }

    /// All continuous coordinates in manifest order, before any transform.
    fn continuous(&self) -> Vec<f64> {
        let mut v = self.scalars().to_vec();
        v.extend(self.calls_last_24m.iter().map(|&c| c as f64));
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompanyRecord {
    pub company_id: String,
    pub label: u8,
    pub outcome_date: NaiveDate,
    pub features: FeatureVector,
    pub calls: Vec<Call>,
}

impl CompanyRecord {
    pub fn is_embedded(&self) -> bool {
        self.calls.iter().all(|c| c.exchanges.iter().all(Exchange::is_embedded))
    }

    /// Embedding width, if any embedding is present.
    pub fn d_emb(&self) -> Option<usize> {
        self.calls
            .iter()
            .flat_map(|c| &c.exchanges)
            .flat_map(|x| [x.q_emb.as_ref(), x.a_emb.as_ref()])
            .flatten()
            .map(Vec::len)
            .next()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, message: String| Error::Validation {
            company_id: self.company_id.clone(),
            field: field.to_string(),
            message,
        };
        if self.label > 1 {
            return Err(fail("label", format!("expected 0 or 1, got {}", self.label)));
        }
        if self.calls.is_empty() {
            return Err(fail("calls", "at least one call is required".into()));
        }
        for (name, v) in FeatureVector::SCALAR_NAMES.iter().zip(self.features.scalars()) {
            if !v.is_finite() || v < 0.0 {
                return Err(fail(&format!("features.{name}"), format!("must be a non-negative number, got {v}")));
            }
        }
        if self.features.calls_last_24m.len() != CALL_HISTORY_MONTHS {
            return Err(fail(
                "features.calls_last_24m",
                format!("expected {CALL_HISTORY_MONTHS} entries, got {}", self.features.calls_last_24m.len()),
            ));
        }
        let d_emb = self.d_emb();
        for (l, call) in self.calls.iter().enumerate() {
            if l > 0 && call.call_date <= self.calls[l - 1].call_date {
                return Err(fail(
                    &format!("calls[{l}].date"),
                    "calls must be strictly ordered by date".into(),
                ));
            }
            if call.exchanges.is_empty() {
                return Err(fail(&format!("calls[{l}].exchanges"), "a call needs at least one exchange".into()));
            }
            for (k, x) in call.exchanges.iter().enumerate() {
                let sides = [
                    ("q", &x.question_text, &x.q_emb),
                    ("a", &x.answer_text, &x.a_emb),
                ];
                for (side, text, emb) in sides {
                    let field = format!("calls[{l}].exchanges[{k}].{side}");
                    if text.is_none() && emb.is_none() {
                        return Err(fail(&field, "needs text or an embedding".into()));
                    }
                    if let Some(e) = emb {
                        if Some(e.len()) != d_emb || e.is_empty() {
                            return Err(fail(&format!("{field}_emb"), "inconsistent embedding width".into()));
                        }
                        if e.iter().any(|v| !v.is_finite()) {
                            return Err(fail(&format!("{field}_emb"), "non-finite embedding value".into()));
                        }
                    }
                }
            }
        }
        let last = self.calls.last().expect("non-empty").call_date;
        if self.outcome_date < last {
            return Err(fail(
                "outcome_date",
                format!("outcome date {} precedes last call {last}", self.outcome_date),
            ));
        }
        Ok(())
    }
}

/// Read and validate a JSONL dataset. Blank lines are skipped.
pub fn parse_dataset(path: impl AsRef<Path>) -> Result<Vec<CompanyRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_dataset(reader: impl BufRead) -> Result<Vec<CompanyRecord>> {
    let mut out = Vec::new();
    let mut d_emb: Option<(usize, String)> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<dataset>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CompanyRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        record.validate()?;
        if let Some(d) = record.d_emb() {
            match &d_emb {
                Some((expected, first)) if *expected != d => {
                    return Err(Error::Validation {
                        company_id: record.company_id.clone(),
                        field: "calls.exchanges.q_emb".into(),
                        message: format!("embedding width {d} differs from {expected} used by {first}"),
                    })
                }
                None => d_emb = Some((d, record.company_id.clone())),
                _ => {}
            }
        }
        out.push(record);
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn write_dataset(path: impl AsRef<Path>, records: &[CompanyRecord]) -> Result<()> {
    fsutil::write_atomic(path, &to_jsonl(records)?)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    fsutil::write_atomic(path, &to_jsonl(items)?)
}

/// Read any JSONL file of one serde type; errors carry the line number.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub log1p: bool,
    pub constant: bool,
}

/// Frozen feature transform fitted on training records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerManifest {
    pub d_e: usize,
    pub d_emb: Option<usize>,
    pub continuous: Vec<CoordinateStats>,
    pub hq_vocab: Vec<String>,
    pub trademark_vocab: Vec<String>,
}

const VARIANCE_FLOOR: f64 = 1e-12;

impl ScalerManifest {
    pub fn fit(train: &[CompanyRecord]) -> Result<Self> {
        let Some(first) = train.first() else {
            return Err(Error::invalid("cannot fit a scaler on an empty training set"));
        };
        let mut names: Vec<String> = FeatureVector::SCALAR_NAMES.iter().map(|s| s.to_string()).collect();
        names.extend((0..CALL_HISTORY_MONTHS).map(|m| format!("calls_last_24m[{m}]")));
        let log1p = |i: usize| i == 3 || i == 6;
        let n = train.len() as f64;
        let rows: Vec<Vec<f64>> = train.iter().map(|r| r.features.continuous()).collect();
        let continuous = names
            .into_iter()
            .enumerate()
            .map(|(i, name)| {
                let col = rows.iter().map(|r| if log1p(i) { r[i].ln_1p() } else { r[i] });
                let mean = col.clone().sum::<f64>() / n;
                let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let constant = var < VARIANCE_FLOOR;
                CoordinateStats {
                    name,
                    mean,
                    std: if constant { 1.0 } else { var.sqrt() },
                    log1p: log1p(i),
                    constant,
                }
            })
            .collect::<Vec<_>>();
        let hq_vocab: Vec<String> = train
            .iter()
            .map(|r| r.features.hq.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let trademark_vocab: Vec<String> = train
            .iter()
            .map(|r| r.features.trademark_class.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(Self {
            d_e: continuous.len() + hq_vocab.len() + trademark_vocab.len(),
            d_emb: first.d_emb(),
            continuous,
            hq_vocab,
            trademark_vocab,
        })
    }

    /// Standardised feature vector `e`. Unseen categories map to all-zero one-hots.
    pub fn transform(&self, f: &FeatureVector) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.d_e);
        for (stats, raw) in self.continuous.iter().zip(f.continuous()) {
            let v = if stats.log1p { raw.ln_1p() } else { raw };
            out.push(if stats.constant { 0.0 } else { (v - stats.mean) / stats.std });
        }
        out.extend(self.hq_vocab.iter().map(|h| if *h == f.hq { 1.0 } else { 0.0 }));
        out.extend(
            self.trademark_vocab
                .iter()
                .map(|t| if *t == f.trademark_class { 1.0 } else { 0.0 }),
        );
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fsutil::write_atomic(path, &serde_json::to_vec_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Fit on `train`, transform every record of `all`.
pub fn standardize_features(train: &[CompanyRecord], all: &[CompanyRecord]) -> Result<(Vec<Vec<f64>>, ScalerManifest)> {
    let manifest = ScalerManifest::fit(train)?;
    let features = all.iter().map(|r| manifest.transform(&r.features)).collect();
    Ok((features, manifest))
}

/// One call in model-ready form.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCall {
    pub expert_type: ExpertType,
    /// Days from this call to the outcome date; only the training constraint reads it.
    pub gap_days: f64,
    pub questions: Vec<Vec<f64>>,
    pub answers: Vec<Vec<f64>>,
}

impl PreparedCall {
    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }
}

/// One company in model-ready form: embedded exchanges plus standardised features.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCompany {
    pub company_id: String,
    pub label: u8,
    pub features: Vec<f64>,
    pub calls: Vec<PreparedCall>,
}

impl PreparedCompany {
    pub fn from_record(record: &CompanyRecord, scaler: &ScalerManifest) -> Result<Self> {
        let mut calls = Vec::with_capacity(record.calls.len());
        for (l, call) in record.calls.iter().enumerate() {
            let mut questions = Vec::with_capacity(call.exchanges.len());
            let mut answers = Vec::with_capacity(call.exchanges.len());
            for (k, x) in call.exchanges.iter().enumerate() {
                match (&x.q_emb, &x.a_emb) {
                    (Some(q), Some(a)) => {
                        questions.push(q.clone());
                        answers.push(a.clone());
                    }
                    _ => {
                        return Err(Error::Validation {
                            company_id: record.company_id.clone(),
                            field: format!("calls[{l}].exchanges[{k}]"),
                            message: "exchange is not embedded; run ingest first".into(),
                        })
                    }
                }
            }
            calls.push(PreparedCall {
                expert_type: call.expert_type,
                gap_days: (record.outcome_date - call.call_date).num_days() as f64,
                questions,
                answers,
            });
        }
        Ok(Self {
            company_id: record.company_id.clone(),
            label: record.label,
            features: scaler.transform(&record.features),
            calls,
        })
    }

    /// The first `calls` calls only.
    pub fn prefix(&self, calls: usize) -> Self {
        Self {
            calls: self.calls[..calls.min(self.calls.len())].to_vec(),
            ..self.clone()
        }
    }

    pub fn d_emb(&self) -> usize {
        self.calls[0].questions[0].len()
    }
}

pub fn prepare_all(records: &[CompanyRecord], scaler: &ScalerManifest) -> Result<Vec<PreparedCompany>> {
    records.iter().map(|r| PreparedCompany::from_record(r, scaler)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub valid_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
    pub stratify: bool,
    /// Order by last call date instead of shuffling: earliest companies train.
    #[serde(default)]
    pub temporal: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.8,
            valid_frac: 0.1,
            test_frac: 0.1,
            seed: 0,
            stratify: true,
            temporal: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

/// Partition records. Validation and test sizes are `floor(n·frac)`; train takes the rest.
pub fn split_dataset(records: &[CompanyRecord], spec: &SplitSpec) -> Result<Split<CompanyRecord>> {
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    let order: Vec<NaiveDate> = records
        .iter()
        .map(|r| r.calls.last().map(|c| c.call_date).unwrap_or(r.outcome_date))
        .collect();
    let idx = split_indices(&labels, &order, spec)?;
    let pick = |ix: &[usize]| ix.iter().map(|&i| records[i].clone()).collect();
    Ok(Split {
        train: pick(&idx.train),
        valid: pick(&idx.valid),
        test: pick(&idx.test),
    })
}

pub(crate) fn split_indices(labels: &[u8], dates: &[NaiveDate], spec: &SplitSpec) -> Result<Split<usize>> {
    let n = labels.len();
    if n < 3 {
        return Err(Error::invalid("splitting needs at least 3 records"));
    }
    let fr = [spec.train_frac, spec.valid_frac, spec.test_frac];
    if fr.iter().any(|f| !(*f > 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions {fr:?} must be positive and sum to 1")));
    }
    let n_valid = (n as f64 * spec.valid_frac + 1e-9).floor() as usize;
    let n_test = (n as f64 * spec.test_frac + 1e-9).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let (mut valid, mut test, mut train);
    if spec.temporal {
        let mut all: Vec<usize> = (0..n).collect();
        all.sort_by_key(|&i| (dates[i], i));
        let n_train = n - n_valid - n_test;
        train = all[..n_train].to_vec();
        valid = all[n_train..n_train + n_valid].to_vec();
        test = all[n_train + n_valid..].to_vec();
    } else if spec.stratify {
        let mut pos: Vec<usize> = (0..n).filter(|&i| labels[i] == 1).collect();
        let mut neg: Vec<usize> = (0..n).filter(|&i| labels[i] != 1).collect();
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let p = pos.len();
        let take = |size: usize, pos: &mut Vec<usize>, neg: &mut Vec<usize>| {
            let want = (p as f64 * size as f64 / n as f64).round() as usize;
            let k_pos = want.min(pos.len()).min(size).max(size.saturating_sub(neg.len()));
            let mut out: Vec<usize> = pos.drain(..k_pos).collect();
            out.extend(neg.drain(..size - k_pos));
            out
        };
        valid = take(n_valid, &mut pos, &mut neg);
        test = take(n_test, &mut pos, &mut neg);
        train = pos;
        train.extend(neg);
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        valid = all[..n_valid].to_vec();
        test = all[n_valid..n_valid + n_test].to_vec();
        train = all[n_valid + n_test..].to_vec();
    }
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, valid, test })
}

#[cfg(test)]
mod tests {
    use std::io::Cursor;

    use super::*;

    pub(crate) fn minimal_json(id: &str, call_date: &str, outcome: &str) -> String {
        format!(
            r#"{{"company_id":"{id}","label":1,"outcome_date":"{outcome}","features":{{"age_months":12,"founders_count":2,"rounds":1,"raised_funding_musd":0,"investor_count":3,"active_products":1,"it_spend_musd":0.5,"calls_last_24m":[0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,1],"hq":"Berlin","trademark_class":"9"}},"calls":[{{"call_id":"c1","date":"{call_date}","expert_type":"Customer","exchanges":[{{"q":null,"a":null,"q_emb":[0.1,0.2],"a_emb":[0.3,0.4]}}]}}]}}"#
        )
    }

    #[test]
    fn empty_input_is_empty_dataset() {
        assert!(read_dataset(Cursor::new("")).unwrap().is_empty());
    }

    #[test]
    fn minimal_record_parses() {
        let recs = read_dataset(Cursor::new(minimal_json("a", "2020-01-01", "2021-01-01"))).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].calls.len(), 1);
        assert_eq!(recs[0].calls[0].exchanges[0].a_emb.as_deref(), Some(&[0.3, 0.4][..]));
        assert_eq!(recs[0].d_emb(), Some(2));
    }

    #[test]
    fn call_after_outcome_names_company() {
        let err = read_dataset(Cursor::new(minimal_json("late-co", "2022-01-01", "2021-01-01"))).unwrap_err();
        match err {
            Error::Validation { company_id, field, .. } => {
                assert_eq!(company_id, "late-co");
                assert_eq!(field, "outcome_date");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{}\n{{not json\n", minimal_json("a", "2020-01-01", "2021-01-01"));
        match read_dataset(Cursor::new(text)).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unordered_calls_rejected() {
        let mut r = read_dataset(Cursor::new(minimal_json("a", "2020-01-01", "2021-01-01")))
            .unwrap()
            .remove(0);
        let mut second = r.calls[0].clone();
        second.call_date = r.calls[0].call_date;
        r.calls.push(second);
        assert!(matches!(r.validate(), Err(Error::Validation { .. })));
    }

    fn record_with(age: f64, funding: f64) -> CompanyRecord {
        let mut r = read_dataset(Cursor::new(minimal_json("a", "2020-01-01", "2021-01-01")))
            .unwrap()
            .remove(0);
        r.features.age_months = age;
        r.features.raised_funding_musd = funding;
        r
    }

    #[test]
    fn single_training_record_standardizes_to_zero() {
        let r = record_with(10.0, 3.0);
        let (feats, m) = standardize_features(std::slice::from_ref(&r), std::slice::from_ref(&r)).unwrap();
        assert!(m.continuous.iter().all(|c| c.constant));
        assert!(feats[0][..31].iter().all(|&v| v == 0.0));
        // one-hots survive
        assert_eq!(&feats[0][31..], &[1.0, 1.0]);
    }

    #[test]
    fn two_point_z_scores() {
        let train = vec![record_with(0.0, 0.0), record_with(2.0, 0.0)];
        let (feats, m) = standardize_features(&train, &train).unwrap();
        assert_eq!(feats[0][0], -1.0);
        assert_eq!(feats[1][0], 1.0);
        // funding of zero stays zero through log1p, and is constant here
        assert_eq!(m.continuous[3].mean, 0.0);
        assert!(m.continuous[3].log1p);
    }

    #[test]
    fn empty_training_set_rejected() {
        assert!(standardize_features(&[], &[]).is_err());
    }

    fn dates(n: usize) -> Vec<NaiveDate> {
        (0..n)
            .map(|i| NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(i as u64))
            .collect()
    }

    #[test]
    fn ten_records_split_8_1_1() {
        let labels = vec![0u8; 10];
        let spec = SplitSpec {
            train_frac: 0.8,
            valid_frac: 0.1,
            test_frac: 0.1,
            seed: 4,
            stratify: false,
            temporal: false,
        };
        let s = split_indices(&labels, &dates(10), &spec).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s, split_indices(&labels, &dates(10), &spec).unwrap());
    }

    #[test]
    fn stratified_counts_within_one_of_proportional() {
        let labels = vec![1, 1, 1, 1, 1, 1, 0, 0, 0, 0];
        let spec = SplitSpec {
            train_frac: 0.5,
            valid_frac: 0.25,
            test_frac: 0.25,
            seed: 9,
            stratify: true,
            temporal: false,
        };
        let s = split_indices(&labels, &dates(10), &spec).unwrap();
        for part in [&s.train, &s.valid, &s.test] {
            let pos = part.iter().filter(|&&i| labels[i] == 1).count() as f64;
            let proportional = 6.0 * part.len() as f64 / 10.0;
            assert!((pos - proportional).abs() <= 1.0, "{pos} vs {proportional}");
        }
    }

    #[test]
    fn bad_fractions_rejected() {
        let spec = SplitSpec {
            train_frac: 0.5,
            valid_frac: 0.3,
            test_frac: 0.3,
            ..SplitSpec::default()
        };
        assert!(split_indices(&[0, 1, 0], &dates(3), &spec).is_err());
    }

    #[test]
    fn temporal_split_trains_on_earliest() {
        let spec = SplitSpec {
            temporal: true,
            ..SplitSpec::default()
        };
        let s = split_indices(&[0; 10], &dates(10), &spec).unwrap();
        assert_eq!(s.train, (0..8).collect::<Vec<_>>());
        assert_eq!(s.test, vec![9]);
    }
}

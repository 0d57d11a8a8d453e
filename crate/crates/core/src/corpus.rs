//! Text ingestion: tokenisation, vocabulary, binary bag-of-words encoding and
//! chronological splitting, plus a synthetic corpus whose adversarial class
//! drifts toward the benign class over time.
//!
//! Corpus files are UTF-8 TSV with columns `timestamp<TAB>label<TAB>text`,
//! where the timestamp is an ISO-8601 date.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::objectives::BowDataset;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub timestamp: NaiveDate,
    pub label: u8,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawCorpus {
    pub records: Vec<Record>,
}

impl RawCorpus {
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let loc = || format!("line {}", lineno + 1);
            let mut cols = line.splitn(3, '\t');
            let (ts, label, body) = match (cols.next(), cols.next(), cols.next()) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                (Some(a), Some(b), None) => (a, b, ""),
                _ => {
                    return Err(Error::Parse {
                        location: loc(),
                        message: "expected timestamp<TAB>label<TAB>text".into(),
                    })
                }
            };
            let timestamp = NaiveDate::parse_from_str(ts.trim(), "%Y-%m-%d").map_err(|e| Error::Parse {
                location: loc(),
                message: format!("bad date {ts:?}: {e}"),
            })?;
            let label = match label.trim() {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::Parse {
                        location: loc(),
                        message: format!("label must be 0 or 1, got {other:?}"),
                    })
                }
            };
            records.push(Record {
                timestamp,
                label,
                text: body.to_string(),
            });
        }
        Ok(Self { records })
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(out, "{}\t{}\t{}", r.timestamp.format("%Y-%m-%d"), r.label, r.text);
        }
        out
    }
}

/// Lowercase and split on every run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// One token per line; blank lines and `#` comments are skipped.
pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

pub fn read_stopwords(path: &Path) -> Result<HashSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_stopwords(&text))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CountMode {
    /// Number of training documents containing the token.
    #[default]
    DocumentFrequency,
    /// Total number of occurrences.
    TokenCount,
}

impl std::str::FromStr for CountMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "df" | "document" | "document_frequency" => Ok(Self::DocumentFrequency),
            "tf" | "token" | "token_count" => Ok(Self::TokenCount),
            _ => Err(Error::Config(format!("unknown count mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pub words: Vec<String>,
    pub counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_ranked(words: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        if words.len() != counts.len() {
            return Err(Error::dim("vocabulary counts", words.len(), counts.len()));
        }
        if words.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Ok(Self { words, counts, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// `word<TAB>count` per line, in rank order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (w, c) in self.words.iter().zip(&self.counts) {
            let _ = writeln!(out, "{w}\t{c}");
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut words = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let (w, c) = line.split_once('\t').ok_or_else(|| Error::Parse {
                location: format!("vocabulary line {}", i + 1),
                message: "expected word<TAB>count".into(),
            })?;
            words.push(w.to_string());
            counts.push(c.trim().parse().map_err(|_| Error::Parse {
                location: format!("vocabulary line {}", i + 1),
                message: format!("bad count {c:?}"),
            })?);
        }
        Self::from_ranked(words, counts)
    }
}

/// Top `q_target` tokens of the training records, ranked by descending count
/// with lexicographic tie-breaks.
pub fn build_vocabulary(
    train: &[Record],
    stopwords: &HashSet<String>,
    q_target: usize,
    mode: CountMode,
) -> Result<Vocabulary> {
    if q_target == 0 {
        return Err(Error::InvalidArgument("q_target must be >= 1".into()));
    }
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for r in train {
        let tokens = tokenize(&r.text).into_iter().filter(|t| !stopwords.contains(t));
        match mode {
            CountMode::TokenCount => {
                for t in tokens {
                    *counts.entry(t).or_default() += 1;
                }
            }
            CountMode::DocumentFrequency => {
                let seen: HashSet<String> = tokens.collect();
                for t in seen {
                    *counts.entry(t).or_default() += 1;
                }
            }
        }
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(q_target);
    let (words, counts) = ranked.into_iter().unzip();
    Vocabulary::from_ranked(words, counts)
}

/// Binary presence of each vocabulary word; timestamps become days since CE.
pub fn encode(records: &[Record], vocab: &Vocabulary) -> Result<BowDataset> {
    let q = vocab.len();
    let mut x = DMatrix::zeros(records.len(), q);
    for (i, r) in records.iter().enumerate() {
        for t in tokenize(&r.text) {
            if let Some(j) = vocab.index_of(&t) {
                x[(i, j)] = 1.0;
            }
        }
    }
    let y = records.iter().map(|r| r.label).collect();
    let ts = records
        .iter()
        .map(|r| i64::from(r.timestamp.num_days_from_ce()))
        .collect();
    BowDataset::new(x, y)?.with_timestamps(ts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PeriodGrouping {
    #[default]
    Year,
    Month,
}

impl PeriodGrouping {
    pub fn key(&self, d: NaiveDate) -> String {
        match self {
            PeriodGrouping::Year => format!("{:04}", d.year()),
            PeriodGrouping::Month => format!("{:04}-{:02}", d.year(), d.month()),
        }
    }
}

impl std::str::FromStr for PeriodGrouping {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "year" => Ok(Self::Year),
            "month" => Ok(Self::Month),
            _ => Err(Error::Config(format!("unknown period grouping {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_size: usize,
    pub period: PeriodGrouping,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_size: 2000,
            period: PeriodGrouping::Year,
        }
    }
}

/// Records split into the earliest `train_size` rows and later calendar
/// periods (ordered by period key).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordSplit {
    pub train: Vec<Record>,
    pub tests: BTreeMap<String, Vec<Record>>,
}

pub fn chronological_split(records: &[Record], spec: SplitSpec) -> Result<RecordSplit> {
    if records.len() < spec.train_size {
        return Err(Error::InsufficientRecords {
            required: spec.train_size,
            available: records.len(),
        });
    }
    let mut sorted = records.to_vec();
    sorted.sort_by_key(|r| r.timestamp);
    let rest = sorted.split_off(spec.train_size);
    let mut tests: BTreeMap<String, Vec<Record>> = BTreeMap::new();
    for r in rest {
        tests.entry(spec.period.key(r.timestamp)).or_default().push(r);
    }
    Ok(RecordSplit {
        train: sorted,
        tests,
    })
}

/// Encoded training set and per-period test sets sharing one vocabulary.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub vocab: Vocabulary,
    pub train: BowDataset,
    pub tests: Vec<(String, BowDataset)>,
}

impl PreparedData {
    pub fn q(&self) -> usize {
        self.vocab.len()
    }
}

pub fn prepare(
    corpus: &RawCorpus,
    split: SplitSpec,
    stopwords: &HashSet<String>,
    q_target: usize,
    mode: CountMode,
) -> Result<PreparedData> {
    let parts = chronological_split(&corpus.records, split)?;
    let vocab = build_vocabulary(&parts.train, stopwords, q_target, mode)?;
    let train = encode(&parts.train, &vocab)?;
    let tests = parts
        .tests
        .iter()
        .map(|(k, recs)| Ok((k.clone(), encode(recs, &vocab)?)))
        .collect::<Result<_>>()?;
    Ok(PreparedData { vocab, train, tests })
}

/// Header `n q`, then one row per sample: `q` space-separated 0/1 values
/// followed by the label.
pub fn dataset_to_text(data: &BowDataset) -> String {
    let mut out = format!("{} {}\n", data.n(), data.q());
    for i in 0..data.n() {
        for j in 0..data.q() {
            out.push(if data.x[(i, j)] == 1.0 { '1' } else { '0' });
            out.push(' ');
        }
        out.push(if data.y[i] == 1 { '1' } else { '0' });
        out.push('\n');
    }
    out
}

pub fn dataset_from_text(text: &str) -> Result<BowDataset> {
    let mut lines = text.lines();
    let bad = |loc: String, msg: &str| Error::Parse {
        location: loc,
        message: msg.to_string(),
    };
    let header = lines.next().ok_or_else(|| bad("header".into(), "missing header"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad("header".into(), "expected `n q`")))
        .collect::<Result<_>>()?;
    let [n, q] = dims[..] else {
        return Err(bad("header".into(), "expected `n q`"));
    };
    let mut x = DMatrix::zeros(n, q);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let loc = format!("row {}", i + 1);
        let line = lines.next().ok_or_else(|| bad(loc.clone(), "missing row"))?;
        let vals: Vec<u8> = line
            .split_whitespace()
            .map(|t| match t {
                "0" => Ok(0),
                "1" => Ok(1),
                _ => Err(bad(loc.clone(), "entries must be 0 or 1")),
            })
            .collect::<Result<_>>()?;
        if vals.len() != q + 1 {
            return Err(Error::dim("dataset row width", q + 1, vals.len()));
        }
        for j in 0..q {
            x[(i, j)] = f64::from(vals[j]);
        }
        y.push(vals[q]);
    }
    BowDataset::new(x, y)
}

/// Parameters of the synthetic drifting corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub q: usize,
    pub n_train: usize,
    pub n_per_period: usize,
    pub periods: usize,
    /// Fraction of the way class-1 feature rates move toward class-0 rates by
    /// the final period.
    pub drift_strength: f64,
    /// Probability that a row belongs to class 1.
    pub class1_fraction: f64,
    pub start_year: i32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            q: 50,
            n_train: 2000,
            n_per_period: 500,
            periods: 4,
            drift_strength: 0.6,
            class1_fraction: 0.5,
            start_year: 2000,
        }
    }
}

/// Filler tokens sprinkled into synthetic text; listed in the bundled
/// stopword file.
pub const SYNTH_FILLERS: [&str; 4] = ["the", "and", "of", "to"];

/// Synthetic corpus with known per-class Bernoulli feature rates.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub class0_rates: Vec<f64>,
    pub class1_rates: Vec<f64>,
    pub corpus: RawCorpus,
    /// True binary features of every record, in feature order `w000..`.
    pub features: Vec<Vec<u8>>,
}

impl SynthCorpus {
    pub fn feature_word(j: usize) -> String {
        format!("w{j:03}")
    }

    /// Drift position of test period `k` (0-based): 0 for the first, 1 for the
    /// last.
    pub fn period_drift(&self, k: usize) -> f64 {
        if self.config.periods <= 1 {
            1.0
        } else {
            k as f64 / (self.config.periods - 1) as f64
        }
    }

    /// Class-1 rates at drift position `tau` in `[0,1]`.
    pub fn class1_rates_at(&self, tau: f64) -> Vec<f64> {
        let s = self.config.drift_strength * tau;
        self.class1_rates
            .iter()
            .zip(&self.class0_rates)
            .map(|(p1, p0)| p1 + s * (p0 - p1))
            .collect()
    }

    /// Datasets built from the true features, skipping text processing.
    pub fn datasets(&self) -> Result<(BowDataset, Vec<(String, BowDataset)>)> {
        let c = &self.config;
        let labels: Vec<u8> = self.corpus.records.iter().map(|r| r.label).collect();
        let train = BowDataset::from_rows(&self.features[..c.n_train], labels[..c.n_train].to_vec())?;
        let mut tests = Vec::new();
        for k in 0..c.periods {
            let lo = c.n_train + k * c.n_per_period;
            let hi = lo + c.n_per_period;
            let ds = BowDataset::from_rows(&self.features[lo..hi], labels[lo..hi].to_vec())?;
            tests.push((format!("{:04}", c.start_year + 1 + k as i32), ds));
        }
        Ok((train, tests))
    }
}

pub fn synth_drift_corpus(config: &SynthConfig) -> Result<SynthCorpus> {
    if config.q == 0 || config.n_train == 0 || config.n_per_period == 0 {
        return Err(Error::InvalidArgument(
            "synthetic corpus needs q, n_train and n_per_period >= 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&config.drift_strength) || !(0.0..=1.0).contains(&config.class1_fraction) {
        return Err(Error::InvalidArgument(
            "drift_strength and class1_fraction must lie in [0,1]".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // A third of the features lean toward class 1, a third toward class 0,
    // the rest are shared noise.
    let mut class0_rates = Vec::with_capacity(config.q);
    let mut class1_rates = Vec::with_capacity(config.q);
    for j in 0..config.q {
        let base = rng.gen_range(0.03..0.25);
        let lift = rng.gen_range(0.15..0.35);
        let (p0, p1): (f64, f64) = match j % 3 {
            0 => (base, base + lift),
            1 => (base + lift, base),
            _ => (base, base + rng.gen_range(-0.02..0.02)),
        };
        class0_rates.push(p0);
        class1_rates.push(p1.clamp(0.01, 0.95));
    }

    let mut synth = SynthCorpus {
        config: config.clone(),
        class0_rates,
        class1_rates,
        corpus: RawCorpus::default(),
        features: Vec::new(),
    };

    let emit = |rng: &mut ChaCha8Rng, year: i32, count: usize, rates1: &[f64], synth: &mut SynthCorpus| {
        let mut days: Vec<u32> = (0..count).map(|_| rng.gen_range(0..365)).collect();
        days.sort_unstable();
        for day in days {
            let label = u8::from(rng.gen_bool(config.class1_fraction));
            let rates = if label == 1 { rates1 } else { &synth.class0_rates[..] };
            let row: Vec<u8> = rates.iter().map(|&p| u8::from(rng.gen_bool(p))).collect();
            let mut words: Vec<String> = Vec::new();
            for (j, &bit) in row.iter().enumerate() {
                if bit == 1 {
                    words.push(SynthCorpus::feature_word(j));
                }
                if rng.gen_bool(0.05) {
                    words.push(SYNTH_FILLERS[j % SYNTH_FILLERS.len()].to_string());
                }
            }
            let date = NaiveDate::from_yo_opt(year, day + 1).expect("day within year");
            synth.corpus.records.push(Record {
                timestamp: date,
                label,
                text: words.join(" "),
            });
            synth.features.push(row);
        }
    };

    let base_rates = synth.class1_rates.clone();
    emit(&mut rng, config.start_year, config.n_train, &base_rates, &mut synth);
    for k in 0..config.periods {
        let rates = synth.class1_rates_at(synth.period_drift(k));
        emit(&mut rng, config.start_year + 1 + k as i32, config.n_per_period, &rates, &mut synth);
    }
    Ok(synth)
}

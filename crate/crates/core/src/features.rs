//! Pooled utterance features, teacher prediction tables, splitting and batching.
//!
//! Feature file (UTF-8, line oriented):
//!
//! ```text
//! # dim=<D> classes=<N> name=<string>
//! <id>\t<label or ->\t<v1> <v2> ... <vD>
//! ```
//!
//! Teacher prediction file:
//!
//! ```text
//! # classes=<N>
//! <id>\t<p1> <p2> ... <pN>
//! ```
//!
//! Blank lines are ignored. Every rejected input reports the offending line.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::policy::ProbDistribution;
use crate::rng::{self, stream_rng};

/// Number of categories when a file does not say otherwise.
pub const DEFAULT_NUM_CLASSES: usize = 6;

/// Absolute deviation of a teacher row sum from 1 that is silently renormalized.
pub const TEACHER_SUM_TOLERANCE: f64 = 1e-6;

/// One utterance: a pooled feature vector with an optional gold label.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceSample {
    pub id: String,
    pub features: Vec<f64>,
    pub label: Option<usize>,
    pub corpus: String,
}

/// An ordered collection of samples sharing one feature dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    dim: usize,
    num_classes: usize,
    samples: Vec<UtteranceSample>,
}

impl Dataset {
    /// Builds a dataset, checking widths, finiteness, label range and id uniqueness.
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        num_classes: usize,
        samples: Vec<UtteranceSample>,
    ) -> Result<Self> {
        if dim == 0 || num_classes == 0 {
            return Err(Error::InvalidArgument(
                "dataset dim and classes must be at least 1".into(),
            ));
        }
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if s.features.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    actual: s.features.len(),
                    context: "sample feature width",
                });
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "sample `{}` has a non-finite feature",
                    s.id
                )));
            }
            if let Some(l) = s.label {
                if l >= num_classes {
                    return Err(Error::InvalidArgument(format!(
                        "sample `{}` label {l} out of range for {num_classes} classes",
                        s.id
                    )));
                }
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate sample id `{}`", s.id)));
            }
        }
        Ok(Self {
            name: name.into(),
            dim,
            num_classes,
            samples,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn samples(&self) -> &[UtteranceSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// True when every sample carries a gold label.
    pub fn is_fully_labeled(&self) -> bool {
        self.samples.iter().all(|s| s.label.is_some())
    }

    /// View that exposes ids and features but never labels.
    pub fn unlabeled(&self) -> UnlabeledView<'_> {
        UnlabeledView { dataset: self }
    }

    /// Copy of this dataset with labels replaced by `f(index, label)`.
    pub fn map_labels(&self, mut f: impl FnMut(usize, Option<usize>) -> Option<usize>) -> Result<Self> {
        let samples = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| UtteranceSample {
                label: f(i, s.label),
                ..s.clone()
            })
            .collect();
        Self::new(self.name.clone(), self.dim, self.num_classes, samples)
    }

    fn subset(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            dim: self.dim,
            num_classes: self.num_classes,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Map from sample id to its features.
    pub fn feature_index(&self) -> HashMap<&str, &[f64]> {
        self.samples
            .iter()
            .map(|s| (s.id.as_str(), s.features.as_slice()))
            .collect()
    }
}

/// Label-free view of a dataset, handed to the unsupervised stage.
#[derive(Debug, Clone, Copy)]
pub struct UnlabeledView<'a> {
    dataset: &'a Dataset,
}

impl<'a> UnlabeledView<'a> {
    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dataset.dim
    }

    pub fn num_classes(&self) -> usize {
        self.dataset.num_classes
    }

    pub fn name(&self) -> &'a str {
        &self.dataset.name
    }

    pub fn id(&self, index: usize) -> &'a str {
        &self.dataset.samples[index].id
    }

    pub fn features(&self, index: usize) -> &'a [f64] {
        &self.dataset.samples[index].features
    }
}

/// Teacher distributions keyed by sample id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TeacherPredictionTable {
    num_classes: usize,
    rows: HashMap<String, ProbDistribution>,
}

impl TeacherPredictionTable {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            rows: HashMap::new(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn insert(&mut self, id: impl Into<String>, dist: ProbDistribution) -> Result<()> {
        if dist.len() != self.num_classes {
            return Err(Error::Dimension {
                expected: self.num_classes,
                actual: dist.len(),
                context: "teacher distribution width",
            });
        }
        self.rows.insert(id.into(), dist);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&ProbDistribution> {
        self.rows
            .get(id)
            .ok_or_else(|| Error::MissingTeacher(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses `# key=value key=value` into a map; `line_no` is used for errors.
fn parse_header(path: &Path, line_no: usize, line: &str) -> Result<BTreeMap<String, String>> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::parse(path, line_no, "expected header line starting with `#`"))?;
    let mut map = BTreeMap::new();
    for token in body.split_whitespace() {
        let (k, v) = token
            .split_once('=')
            .ok_or_else(|| Error::parse(path, line_no, format!("malformed header field `{token}`")))?;
        map.insert(k.to_string(), v.to_string());
    }
    Ok(map)
}

fn header_usize(
    path: &Path,
    line_no: usize,
    header: &BTreeMap<String, String>,
    key: &str,
) -> Result<Option<usize>> {
    header
        .get(key)
        .map(|v| {
            v.parse::<usize>()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| Error::parse(path, line_no, format!("header `{key}` must be a positive integer, got `{v}`")))
        })
        .transpose()
}

fn parse_floats(path: &Path, line_no: usize, text: &str, expected: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(expected);
    for tok in text.split_whitespace() {
        let v: f64 = tok
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("`{tok}` is not a number")))?;
        if !v.is_finite() {
            return Err(Error::parse(path, line_no, format!("non-finite value `{tok}`")));
        }
        out.push(v);
    }
    if out.len() != expected {
        return Err(Error::parse(
            path,
            line_no,
            format!("expected {expected} values, found {}", out.len()),
        ));
    }
    Ok(out)
}

/// Numbered, non-blank lines with trailing `\r` removed.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Reads a feature file.
pub fn load_feature_file(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    parse_feature_text(path, &text)
}

/// Parses feature-file text; `path` only labels errors.
pub fn parse_feature_text(path: &Path, text: &str) -> Result<Dataset> {
    let mut lines = content_lines(text);
    let (hline, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing header line"))?;
    let header_map = parse_header(path, hline, header)?;
    let dim = header_usize(path, hline, &header_map, "dim")?
        .ok_or_else(|| Error::parse(path, hline, "header lacks `dim`"))?;
    let classes = header_usize(path, hline, &header_map, "classes")?.unwrap_or(DEFAULT_NUM_CLASSES);
    let name = header_map.get("name").cloned().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });

    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, line) in lines {
        let mut fields = line.split('\t');
        let (Some(id), Some(label), Some(values), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(Error::parse(path, line_no, "expected 3 tab-separated fields"));
        };
        let id = id.trim();
        if id.is_empty() {
            return Err(Error::parse(path, line_no, "empty sample id"));
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::parse(path, line_no, format!("duplicate sample id `{id}`")));
        }
        let label = match label.trim() {
            "-" => None,
            l => {
                let v: usize = l
                    .parse()
                    .map_err(|_| Error::parse(path, line_no, format!("bad label `{l}`")))?;
                if v >= classes {
                    return Err(Error::parse(
                        path,
                        line_no,
                        format!("label {v} out of range for {classes} classes"),
                    ));
                }
                Some(v)
            }
        };
        let features = parse_floats(path, line_no, values, dim)?;
        samples.push(UtteranceSample {
            id: id.to_string(),
            features,
            label,
            corpus: name.clone(),
        });
    }
    Dataset::new(name, dim, classes, samples)
}

/// Renders a dataset in the feature file format. Values round-trip exactly.
pub fn format_feature_file(dataset: &Dataset) -> Result<String> {
    if dataset.name.chars().any(char::is_whitespace) || dataset.name.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "dataset name `{}` must be a single non-empty token",
            dataset.name
        )));
    }
    let mut out = format!(
        "# dim={} classes={} name={}\n",
        dataset.dim, dataset.num_classes, dataset.name
    );
    for s in &dataset.samples {
        out.push_str(&s.id);
        out.push('\t');
        match s.label {
            Some(l) => write!(out, "{l}").unwrap(),
            None => out.push('-'),
        }
        out.push('\t');
        push_values(&mut out, &s.features);
        out.push('\n');
    }
    Ok(out)
}

fn push_values(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{v:e}").unwrap();
    }
}

pub fn write_feature_file(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_feature_file(dataset)?).map_err(|e| Error::io(path, e))
}

/// Reads a teacher prediction file, renormalizing rows within [`TEACHER_SUM_TOLERANCE`].
pub fn load_teacher_predictions(path: impl AsRef<Path>) -> Result<TeacherPredictionTable> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    parse_teacher_text(path, &text)
}

pub fn parse_teacher_text(path: &Path, text: &str) -> Result<TeacherPredictionTable> {
    let mut lines = content_lines(text);
    let (hline, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing header line"))?;
    let header_map = parse_header(path, hline, header)?;
    let classes = header_usize(path, hline, &header_map, "classes")?
        .ok_or_else(|| Error::parse(path, hline, "header lacks `classes`"))?;

    let mut table = TeacherPredictionTable::new(classes);
    for (line_no, line) in lines {
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, line_no, "expected `<id>\\t<p1> ... <pN>`"))?;
        let id = id.trim();
        if table.rows.contains_key(id) {
            return Err(Error::parse(path, line_no, format!("duplicate sample id `{id}`")));
        }
        let mut probs = parse_floats(path, line_no, values, classes)?;
        if probs.iter().any(|&p| p < 0.0) {
            return Err(Error::parse(path, line_no, format!("row `{id}` has a negative probability")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > TEACHER_SUM_TOLERANCE {
            return Err(Error::parse(
                path,
                line_no,
                format!("row `{id}` sums to {sum}, not 1"),
            ));
        }
        probs.iter_mut().for_each(|p| *p /= sum);
        let dist = ProbDistribution::new(probs)
            .map_err(|e| Error::parse(path, line_no, format!("row `{id}`: {e}")))?;
        table.rows.insert(id.to_string(), dist);
    }
    Ok(table)
}

/// Renders a teacher table; rows are sorted by id for reproducible output.
pub fn format_teacher_predictions(table: &TeacherPredictionTable) -> String {
    let mut out = format!("# classes={}\n", table.num_classes);
    let mut ids: Vec<&String> = table.rows.keys().collect();
    ids.sort();
    for id in ids {
        out.push_str(id);
        out.push('\t');
        push_values(&mut out, table.rows[id].probs());
        out.push('\n');
    }
    out
}

pub fn write_teacher_predictions(table: &TeacherPredictionTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_teacher_predictions(table)).map_err(|e| Error::io(path, e))
}

/// Deterministic split into `(first, second)` where `first` holds
/// `round(fraction * len)` samples.
///
/// Samples are stratified by label (unlabeled samples form their own
/// stratum); per-stratum quotas use largest remainders so the total is exact.
/// Both parts keep the input order.
pub fn split_half(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty dataset".into()));
    }

    // Strata keyed by label; `None` sorts first.
    let mut strata: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        strata.entry(s.label).or_default().push(i);
    }

    let total = (fraction * dataset.len() as f64).round() as usize;
    let mut quotas: Vec<(usize, f64)> = strata
        .values()
        .map(|members| {
            let exact = fraction * members.len() as f64;
            (exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.0).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].1.total_cmp(&quotas[a].1).then(a.cmp(&b)));
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        quotas[k].0 += 1;
    }

    let mut rng = stream_rng(seed, rng::STREAM_SPLIT);
    let mut first = Vec::with_capacity(total);
    let mut second = Vec::with_capacity(dataset.len() - total);
    for (members, (quota, _)) in strata.into_values().zip(quotas) {
        let mut shuffled = members;
        shuffled.shuffle(&mut rng);
        first.extend_from_slice(&shuffled[..quota]);
        second.extend_from_slice(&shuffled[quota..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    Ok((dataset.subset(&first), dataset.subset(&second)))
}

/// Shuffled minibatches of sample indices for one epoch.
///
/// Full batches have `batch_size` members; a trailing remainder is kept when
/// it has at least two members (group statistics need two) and dropped when it
/// is a singleton.
pub fn make_batches(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "batch size must be at least 2, got {batch_size}"
        )));
    }
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = stream_rng(seed, rng::STREAM_BATCHES_BASE.wrapping_add(epoch));
    order.shuffle(&mut rng);
    Ok(order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect())
}

//! Synthetic multimodal datasets and their on-disk form.
//!
//! # Generator
//!
//! All draws come from [`SimRng`] with `stream::DATASET`, in this order:
//!
//! 1. Centroids, modality f then s: `classes x dim` standard normals
//!    (class-major), centered on their mean, then scaled so the closest pair
//!    of centroids is `class_separation` apart. The within-class noise is
//!    unit variance, so `class_separation` is distance over sigma.
//! 2. For each of the labeled, unlabeled and test sets, in that order: a slot
//!    list with round-robin class labels (the unlabeled set first reserves
//!    `round(noise_fraction * m)` noise slots), shuffled with Fisher-Yates.
//! 3. For each slot, in order: class slots draw `feat_f = mu_f[y] + N(0, I)`,
//!    then a Bernoulli(`modality_correlation`) draw; on failure the s class is
//!    `below(classes)`; then `feat_s = mu_s[y_s] + N(0, I)`. Noise slots draw
//!    both modalities from the background `N(0, b^2 I)` with
//!    `b^2 = 1 + mean(centroid coordinate^2)` for that modality, i.e. an
//!    isotropic Gaussian with the class mixture's second moment. They carry
//!    no label.
//!
//! Ids are consecutive: labeled first, then unlabeled, then test.
//!
//! # Files
//!
//! A dataset directory holds `meta.json` plus `labeled.csv`,
//! `unlabeled.csv` and `test.csv`, each with the header
//! `id,label,is_noise,f_0..f_{df-1},s_0..s_{ds-1}`. `label` is `-1` when no
//! label is known; in `unlabeled.csv` it carries the hidden ground truth used
//! only for evaluation. `is_noise` is `0` or `1`. Floats use the shortest
//! representation that parses back to the same value.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, SimRng};
use crate::types::{LabeledSet, Sample, SampleError, Schema, SizeModel, UnlabeledSet};

pub const META_FILE: &str = "meta.json";
pub const LABELED_FILE: &str = "labeled.csv";
pub const UNLABELED_FILE: &str = "unlabeled.csv";
pub const TEST_FILE: &str = "test.csv";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Error, Debug)]
pub enum DataError {
    #[error("invalid dataset spec: {field}: {message}")]
    SpecInvalid { field: &'static str, message: String },
    #[error("{path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{file}:{line}: {field}: {message}")]
    SchemaViolation {
        file: String,
        line: usize,
        field: String,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

/// Parameters of a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub classes: usize,
    pub dim_f: usize,
    pub dim_s: usize,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_test: usize,
    /// Closest centroid pair distance over within-class sigma.
    pub class_separation: f64,
    /// Probability that modality s comes from the sample's own class.
    pub modality_correlation: f64,
    /// Fraction of the unlabeled set that is background noise.
    pub noise_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub size: SizeModel,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |field, message: String| Err(DataError::SpecInvalid { field, message });
        if self.classes < 2 {
            return bad("classes", format!("must be at least 2, got {}", self.classes));
        }
        if self.dim_f == 0 {
            return bad("dim_f", "must be positive".into());
        }
        if self.dim_s == 0 {
            return bad("dim_s", "must be positive".into());
        }
        for (field, n) in [
            ("n_labeled", self.n_labeled),
            ("n_unlabeled", self.n_unlabeled),
            ("n_test", self.n_test),
        ] {
            if n < self.classes {
                return bad(field, format!("must be at least classes ({}), got {n}", self.classes));
            }
        }
        if !(self.class_separation > 0.0 && self.class_separation <= 100.0) {
            return bad(
                "class_separation",
                format!("must be in (0, 100], got {}", self.class_separation),
            );
        }
        if !(0.0..=1.0).contains(&self.modality_correlation) {
            return bad(
                "modality_correlation",
                format!("must be in [0, 1], got {}", self.modality_correlation),
            );
        }
        if !(0.0..1.0).contains(&self.noise_fraction) {
            return bad(
                "noise_fraction",
                format!("must be in [0, 1), got {}", self.noise_fraction),
            );
        }
        Ok(())
    }

    pub fn schema(&self) -> Schema {
        Schema {
            classes: self.classes,
            dim_f: self.dim_f,
            dim_s: self.dim_s,
            size: self.size,
        }
    }
}

/// Initial labeled set, unlabeled pool and held-out test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub labeled: LabeledSet,
    pub unlabeled: UnlabeledSet,
    pub test: LabeledSet,
}

struct Modal {
    centroids: Vec<Vec<f64>>,
    background_sigma: f64,
}

impl Modal {
    fn draw(rng: &mut SimRng, classes: usize, dim: usize, separation: f64) -> Self {
        let mut centroids: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..dim).map(|_| rng.normal()).collect())
            .collect();
        let mean: Vec<f64> = (0..dim)
            .map(|d| centroids.iter().map(|c| c[d]).sum::<f64>() / classes as f64)
            .collect();
        for c in centroids.iter_mut() {
            for (v, m) in c.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        let mut closest = f64::INFINITY;
        for i in 0..classes {
            for j in i + 1..classes {
                let d2: f64 = centroids[i]
                    .iter()
                    .zip(&centroids[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                closest = closest.min(d2.sqrt());
            }
        }
        let scale = separation / closest;
        for c in centroids.iter_mut() {
            c.iter_mut().for_each(|v| *v *= scale);
        }
        let sq: f64 = centroids.iter().flatten().map(|v| v * v).sum();
        let rms = (sq / (classes * dim) as f64).sqrt();
        Self {
            centroids,
            background_sigma: (1.0 + rms * rms).sqrt(),
        }
    }

    fn around(&self, rng: &mut SimRng, class: usize) -> Vec<f64> {
        self.centroids[class].iter().map(|m| m + rng.normal()).collect()
    }

    fn background(&self, rng: &mut SimRng, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| self.background_sigma * rng.normal()).collect()
    }
}

fn slots(rng: &mut SimRng, classes: usize, clean: usize, noise: usize) -> Vec<Option<usize>> {
    let mut out: Vec<Option<usize>> = (0..clean).map(|i| Some(i % classes)).collect();
    out.extend(std::iter::repeat_n(None, noise));
    rng.shuffle(&mut out);
    out
}

/// Draws a dataset from `spec`; bit-for-bit reproducible per seed.
pub fn generate(spec: &SynthSpec) -> Result<Dataset, DataError> {
    spec.validate()?;
    let schema = spec.schema();
    let mut rng = SimRng::new(spec.seed, stream::DATASET);
    let modal_f = Modal::draw(&mut rng, spec.classes, spec.dim_f, spec.class_separation);
    let modal_s = Modal::draw(&mut rng, spec.classes, spec.dim_s, spec.class_separation);

    let n_noise = (spec.noise_fraction * spec.n_unlabeled as f64).round() as usize;
    let plans = [
        slots(&mut rng, spec.classes, spec.n_labeled, 0),
        slots(&mut rng, spec.classes, spec.n_unlabeled - n_noise, n_noise),
        slots(&mut rng, spec.classes, spec.n_test, 0),
    ];

    let mut next_id = 0u64;
    let mut sets: Vec<Vec<Sample>> = Vec::with_capacity(3);
    for plan in plans {
        let mut samples = Vec::with_capacity(plan.len());
        for slot in plan {
            let sample = match slot {
                Some(y) => {
                    let f = modal_f.around(&mut rng, y);
                    let y_s = if rng.bernoulli(spec.modality_correlation) {
                        y
                    } else {
                        rng.below(spec.classes as u64) as usize
                    };
                    let s = modal_s.around(&mut rng, y_s);
                    Sample::new(next_id, f, s, Some(y), false, &schema)
                }
                None => {
                    let f = modal_f.background(&mut rng, spec.dim_f);
                    let s = modal_s.background(&mut rng, spec.dim_s);
                    Sample::new(next_id, f, s, None, true, &schema)
                }
            }
            .expect("generated sample matches schema");
            samples.push(sample);
            next_id += 1;
        }
        sets.push(samples);
    }
    let test = sets.pop().unwrap();
    let unlabeled = sets.pop().unwrap();
    let labeled = sets.pop().unwrap();
    Ok(Dataset {
        schema,
        labeled: LabeledSet::from_ground_truth(schema, labeled).expect("labeled slots carry labels"),
        unlabeled: UnlabeledSet::new(schema, unlabeled).expect("ids are unique"),
        test: LabeledSet::from_ground_truth(schema, test).expect("test slots carry labels"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format_version: u32,
    classes: usize,
    dim_f: usize,
    dim_s: usize,
    header_bytes: u64,
    bytes_per_value: u64,
}

pub fn csv_header(schema: &Schema) -> String {
    let mut h = String::from("id,label,is_noise");
    for i in 0..schema.dim_f {
        write!(h, ",f_{i}").unwrap();
    }
    for i in 0..schema.dim_s {
        write!(h, ",s_{i}").unwrap();
    }
    h
}

/// Canonical CSV text for a list of (sample, label) rows.
pub fn to_csv<'a>(schema: &Schema, rows: impl IntoIterator<Item = (&'a Sample, Option<usize>)>) -> String {
    let mut out = csv_header(schema);
    out.push('\n');
    for (s, label) in rows {
        let label = label.map_or(-1, |l| l as i64);
        write!(out, "{},{},{}", s.id(), label, u8::from(s.is_noise())).unwrap();
        for v in s.feat_f().iter().chain(s.feat_s()) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<(), DataError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Writes `dataset` into directory `dir` (created if missing).
pub fn save(dataset: &Dataset, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let s = &dataset.schema;
    let meta = Meta {
        format_version: FORMAT_VERSION,
        classes: s.classes,
        dim_f: s.dim_f,
        dim_s: s.dim_s,
        header_bytes: s.size.header_bytes,
        bytes_per_value: s.size.bytes_per_value,
    };
    let mut meta_json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    meta_json.push('\n');
    write_file(&dir.join(META_FILE), &meta_json)?;
    write_file(
        &dir.join(LABELED_FILE),
        &to_csv(s, dataset.labeled.iter().map(|(x, y)| (x, Some(y)))),
    )?;
    write_file(
        &dir.join(UNLABELED_FILE),
        &to_csv(s, dataset.unlabeled.samples().iter().map(|x| (x, x.true_label()))),
    )?;
    write_file(
        &dir.join(TEST_FILE),
        &to_csv(s, dataset.test.iter().map(|(x, y)| (x, Some(y)))),
    )?;
    Ok(())
}

struct Row {
    sample: Sample,
    label: Option<usize>,
}

fn parse_csv(file: &str, text: &str, schema: &Schema) -> Result<Vec<Row>, DataError> {
    let violation = |line: usize, field: &str, message: String| DataError::SchemaViolation {
        file: file.to_string(),
        line,
        field: field.to_string(),
        message,
    };
    let mut lines = text.lines().enumerate();
    let expected = csv_header(schema);
    match lines.next() {
        Some((_, h)) if h == expected => {}
        Some((_, h)) => {
            return Err(violation(
                1,
                "header",
                format!("expected `{expected}`, found `{}`", truncate(h)),
            ))
        }
        None => return Err(violation(1, "header", "missing header".into())),
    }
    let columns = 3 + schema.dim_f + schema.dim_s;
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != columns {
            return Err(violation(
                line_no,
                "row",
                format!("expected {columns} columns, found {}", cells.len()),
            ));
        }
        let id: u64 = cells[0]
            .parse()
            .map_err(|_| violation(line_no, "id", format!("`{}` is not a non-negative integer", cells[0])))?;
        let raw_label: i64 = cells[1]
            .parse()
            .map_err(|_| violation(line_no, "label", format!("`{}` is not an integer", cells[1])))?;
        let label = match raw_label {
            -1 => None,
            l if l >= 0 && (l as usize) < schema.classes => Some(l as usize),
            l => {
                return Err(violation(
                    line_no,
                    "label",
                    format!("{l} outside [0, {}) (or -1 for none)", schema.classes),
                ))
            }
        };
        let is_noise = match cells[2] {
            "0" => false,
            "1" => true,
            other => return Err(violation(line_no, "is_noise", format!("`{other}` is not 0 or 1"))),
        };
        let mut values = Vec::with_capacity(columns - 3);
        for (j, cell) in cells[3..].iter().enumerate() {
            let name = if j < schema.dim_f {
                format!("f_{j}")
            } else {
                format!("s_{}", j - schema.dim_f)
            };
            let v: f64 = cell
                .parse()
                .map_err(|_| violation(line_no, &name, format!("`{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(violation(line_no, &name, "value is not finite".into()));
            }
            values.push(v);
        }
        let feat_s = values.split_off(schema.dim_f);
        let sample = Sample::new(id, values, feat_s, label, is_noise, schema)
            .map_err(|e| violation(line_no, "row", e.to_string()))?;
        rows.push(Row { sample, label });
    }
    Ok(rows)
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(60) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn read_rows(dir: &Path, file: &str, schema: &Schema) -> Result<Vec<Row>, DataError> {
    let path = dir.join(file);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    parse_csv(file, &text, schema)
}

fn labeled_from_rows(file: &str, schema: Schema, rows: Vec<Row>) -> Result<LabeledSet, DataError> {
    let mut samples = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for (i, row) in rows.into_iter().enumerate() {
        let label = row.label.ok_or_else(|| DataError::SchemaViolation {
            file: file.to_string(),
            line: i + 2,
            field: "label".into(),
            message: "labeled rows need a label in [0, classes)".into(),
        })?;
        samples.push(row.sample);
        labels.push(label);
    }
    LabeledSet::new(schema, samples, labels).map_err(|e| sample_violation(file, e))
}

fn sample_violation(file: &str, e: SampleError) -> DataError {
    DataError::SchemaViolation {
        file: file.to_string(),
        line: 0,
        field: "id".into(),
        message: e.to_string(),
    }
}

/// Reads a dataset directory written by [`save`].
pub fn load(dir: &Path) -> Result<Dataset, DataError> {
    let meta_path = dir.join(META_FILE);
    let meta_text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: Meta = serde_json::from_str(&meta_text).map_err(|e| DataError::SchemaViolation {
        file: META_FILE.into(),
        line: e.line(),
        field: "meta".into(),
        message: e.to_string(),
    })?;
    if meta.format_version != FORMAT_VERSION {
        return Err(DataError::SchemaViolation {
            file: META_FILE.into(),
            line: 0,
            field: "format_version".into(),
            message: format!("unsupported version {}", meta.format_version),
        });
    }
    if meta.classes < 2 || meta.dim_f == 0 || meta.dim_s == 0 {
        return Err(DataError::SchemaViolation {
            file: META_FILE.into(),
            line: 0,
            field: "meta".into(),
            message: "classes must be >= 2 and dimensions positive".into(),
        });
    }
    let schema = Schema {
        classes: meta.classes,
        dim_f: meta.dim_f,
        dim_s: meta.dim_s,
        size: SizeModel {
            header_bytes: meta.header_bytes,
            bytes_per_value: meta.bytes_per_value,
        },
    };
    let labeled = labeled_from_rows(LABELED_FILE, schema, read_rows(dir, LABELED_FILE, &schema)?)?;
    let unlabeled = UnlabeledSet::new(
        schema,
        read_rows(dir, UNLABELED_FILE, &schema)?
            .into_iter()
            .map(|r| r.sample)
            .collect(),
    )
    .map_err(|e| sample_violation(UNLABELED_FILE, e))?;
    let test = labeled_from_rows(TEST_FILE, schema, read_rows(dir, TEST_FILE, &schema)?)?;

    let mut ids = std::collections::HashSet::new();
    for (file, s) in labeled
        .samples()
        .iter()
        .map(|s| (LABELED_FILE, s))
        .chain(unlabeled.samples().iter().map(|s| (UNLABELED_FILE, s)))
        .chain(test.samples().iter().map(|s| (TEST_FILE, s)))
    {
        if !ids.insert(s.id()) {
            return Err(sample_violation(file, SampleError::DuplicateId(s.id())));
        }
    }
    Ok(Dataset {
        schema,
        labeled,
        unlabeled,
        test,
    })
}

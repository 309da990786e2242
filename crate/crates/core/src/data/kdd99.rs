//! KDD99 tabular ingestion: one-hot categorical encoding, min-max
//! normalization fitted on the training split, and the anomaly label
//! convention used by the energy-based detection lineage (records labeled
//! "normal" are the anomaly class, ~20% of the 10%-subset).

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{MegError, Result};
use crate::rng;

/// Which raw label value counts as the anomaly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyLabelConvention {
    /// "normal."-labeled traffic is the anomaly class (DSEBM/DAGMM lineage).
    #[default]
    NormalIsAnomaly,
    /// Attack-labeled traffic is the anomaly class.
    AttackIsAnomaly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Kdd99Options {
    pub convention: AnomalyLabelConvention,
    pub split_seed: u64,
    pub train_fraction: f64,
}

impl Default for Kdd99Options {
    fn default() -> Self {
        Kdd99Options {
            convention: AnomalyLabelConvention::NormalIsAnomaly,
            split_seed: 0,
            train_fraction: 0.5,
        }
    }
}

/// One source column: numeric columns carry their training-split min/max,
/// categorical ones their category vocabulary in first-appearance order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnDescriptor {
    Numeric { name: String, min: f64, max: f64 },
    Categorical { name: String, categories: Vec<String> },
}

impl ColumnDescriptor {
    pub fn name(&self) -> &str {
        match self {
            ColumnDescriptor::Numeric { name, .. } | ColumnDescriptor::Categorical { name, .. } => {
                name
            }
        }
    }

    /// Number of feature columns this source column expands into.
    pub fn width(&self) -> usize {
        match self {
            ColumnDescriptor::Numeric { .. } => 1,
            ColumnDescriptor::Categorical { categories, .. } => categories.len(),
        }
    }
}

/// Source columns in original file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSchema {
    pub columns: Vec<ColumnDescriptor>,
}

impl TabularSchema {
    pub fn feature_width(&self) -> usize {
        self.columns.iter().map(ColumnDescriptor::width).sum()
    }
}

#[derive(Debug, Clone)]
pub struct TabularDataset {
    pub train: Array2<f32>,
    pub train_labels: Vec<bool>,
    pub test: Array2<f32>,
    pub test_labels: Vec<bool>,
    pub schema: TabularSchema,
    pub rows_read: usize,
    pub rows_skipped: usize,
}

impl TabularDataset {
    /// Training rows not labeled anomalous; the energy trains on these.
    pub fn train_inliers(&self) -> Array2<f32> {
        let keep: Vec<usize> =
            (0..self.train.nrows()).filter(|&i| !self.train_labels[i]).collect();
        let mut out = Array2::zeros((keep.len(), self.train.ncols()));
        for (row, &src) in keep.iter().enumerate() {
            out.row_mut(row).assign(&self.train.row(src));
        }
        out
    }

    pub fn anomaly_rate_test(&self) -> f64 {
        if self.test_labels.is_empty() {
            return 0.0;
        }
        self.test_labels.iter().filter(|&&l| l).count() as f64 / self.test_labels.len() as f64
    }
}

/// The 41 KDD99 feature columns; positions 1-3 are categorical.
const KDD_COLUMNS: [(&str, bool); 41] = [
    ("duration", false),
    ("protocol_type", true),
    ("service", true),
    ("flag", true),
    ("src_bytes", false),
    ("dst_bytes", false),
    ("land", false),
    ("wrong_fragment", false),
    ("urgent", false),
    ("hot", false),
    ("num_failed_logins", false),
    ("logged_in", false),
    ("num_compromised", false),
    ("root_shell", false),
    ("su_attempted", false),
    ("num_root", false),
    ("num_file_creations", false),
    ("num_shells", false),
    ("num_access_files", false),
    ("num_outbound_cmds", false),
    ("is_host_login", false),
    ("is_guest_login", false),
    ("count", false),
    ("srv_count", false),
    ("serror_rate", false),
    ("srv_serror_rate", false),
    ("rerror_rate", false),
    ("srv_rerror_rate", false),
    ("same_srv_rate", false),
    ("srv_diff_host_rate", false),
    ("diff_srv_rate", false),
    ("dst_host_count", false),
    ("dst_host_srv_count", false),
    ("dst_host_same_srv_rate", false),
    ("dst_host_diff_srv_rate", false),
    ("dst_host_same_src_port_rate", false),
    ("dst_host_srv_diff_host_rate", false),
    ("dst_host_serror_rate", false),
    ("dst_host_srv_serror_rate", false),
    ("dst_host_rerror_rate", false),
    ("dst_host_srv_rerror_rate", false),
];

struct RawRows {
    /// Numeric values per row (38 columns, file order).
    numeric: Vec<Vec<f64>>,
    /// Category index per row, per categorical column (3 columns).
    categorical: Vec<[u32; 3]>,
    labels: Vec<bool>,
    vocabs: [Vec<String>; 3],
    rows_read: usize,
    rows_skipped: usize,
}

fn parse_raw<R: Read>(reader: R, convention: AnomalyLabelConvention) -> Result<RawRows> {
    let mut csv = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut numeric = Vec::new();
    let mut categorical = Vec::new();
    let mut labels = Vec::new();
    let mut vocabs: [Vec<String>; 3] = Default::default();
    let mut vocab_index: [HashMap<String, u32>; 3] = Default::default();
    let mut rows_read = 0usize;
    let mut rows_skipped = 0usize;

    for record in csv.records() {
        let record =
            record.map_err(|e| MegError::Ingestion(format!("unreadable CSV record: {e}")))?;
        rows_read += 1;
        if record.len() != KDD_COLUMNS.len() + 1 {
            rows_skipped += 1;
            continue;
        }
        let mut nums = Vec::with_capacity(38);
        let mut cats = [0u32; 3];
        let mut cat_slot = 0usize;
        let mut ok = true;
        for (idx, (_, is_cat)) in KDD_COLUMNS.iter().enumerate() {
            let field = record[idx].trim();
            if *is_cat {
                let slot = cat_slot;
                cat_slot += 1;
                let id = match vocab_index[slot].get(field) {
                    Some(&id) => id,
                    None => {
                        let id = vocabs[slot].len() as u32;
                        vocabs[slot].push(field.to_string());
                        vocab_index[slot].insert(field.to_string(), id);
                        id
                    }
                };
                cats[slot] = id;
            } else {
                match field.parse::<f64>() {
                    Ok(v) if v.is_finite() => nums.push(v),
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
        }
        if !ok {
            rows_skipped += 1;
            continue;
        }
        let raw_label = record[KDD_COLUMNS.len()].trim().trim_end_matches('.');
        let is_normal = raw_label.eq_ignore_ascii_case("normal");
        labels.push(match convention {
            AnomalyLabelConvention::NormalIsAnomaly => is_normal,
            AnomalyLabelConvention::AttackIsAnomaly => !is_normal,
        });
        numeric.push(nums);
        categorical.push(cats);
    }

    if rows_read == 0 {
        return Err(MegError::Ingestion("KDD99 file holds no records".to_string()));
    }
    if rows_skipped as f64 > 0.001 * rows_read as f64 {
        return Err(MegError::Ingestion(format!(
            "{rows_skipped} of {rows_read} rows malformed, above the 0.1% tolerance"
        )));
    }
    Ok(RawRows { numeric, categorical, labels, vocabs, rows_read, rows_skipped })
}

/// Ingests the KDDCUP99 10%-subset CSV: one-hot encodes the three categorical
/// columns (vocabulary in first-appearance order, expanded in place so the
/// source column order is preserved), min-max normalizes numeric columns on
/// the training split, and splits train/test by the recorded seed.
pub fn load_kdd99(path: &Path, opts: &Kdd99Options) -> Result<TabularDataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| MegError::Ingestion(format!("cannot open KDD99 file {path:?}: {e}")))?;
    load_kdd99_from(file, opts)
}

pub fn load_kdd99_from<R: Read>(reader: R, opts: &Kdd99Options) -> Result<TabularDataset> {
    if !(opts.train_fraction > 0.0 && opts.train_fraction < 1.0) {
        return Err(MegError::config("train_fraction must lie strictly between 0 and 1"));
    }
    let raw = parse_raw(reader, opts.convention)?;
    let n = raw.numeric.len();
    if n < 2 {
        return Err(MegError::Ingestion("need at least 2 usable rows".to_string()));
    }

    // Assemble features in source column order, categoricals expanded in
    // place.
    let widths: Vec<usize> = {
        let mut cat_slot = 0;
        KDD_COLUMNS
            .iter()
            .map(|(_, is_cat)| {
                if *is_cat {
                    let w = raw.vocabs[cat_slot].len();
                    cat_slot += 1;
                    w
                } else {
                    1
                }
            })
            .collect()
    };
    let total_width: usize = widths.iter().sum();
    let mut features = Array2::<f32>::zeros((n, total_width));
    for row in 0..n {
        let mut out_col = 0usize;
        let mut num_slot = 0usize;
        let mut cat_slot = 0usize;
        for (col, (_, is_cat)) in KDD_COLUMNS.iter().enumerate() {
            if *is_cat {
                let id = raw.categorical[row][cat_slot] as usize;
                features[[row, out_col + id]] = 1.0;
                cat_slot += 1;
            } else {
                features[[row, out_col]] = raw.numeric[row][num_slot] as f32;
                num_slot += 1;
            }
            out_col += widths[col];
        }
    }

    // Disjoint, exhaustive split with the recorded seed.
    let mut order: Vec<usize> = (0..n).collect();
    let mut split_rng = rng::stream(opts.split_seed, rng::streams::DATA_BUILD);
    order.shuffle(&mut split_rng);
    let n_train = ((n as f64) * opts.train_fraction).round() as usize;
    let n_train = n_train.clamp(1, n - 1);
    let (train_idx, test_idx) = order.split_at(n_train);

    let gather = |idx: &[usize]| -> (Array2<f32>, Vec<bool>) {
        let mut m = Array2::zeros((idx.len(), total_width));
        let mut l = Vec::with_capacity(idx.len());
        for (row, &src) in idx.iter().enumerate() {
            m.row_mut(row).assign(&features.row(src));
            l.push(raw.labels[src]);
        }
        (m, l)
    };
    let (mut train, train_labels) = gather(train_idx);
    let (mut test, test_labels) = gather(test_idx);

    // Min-max on the training split; constant columns collapse to zero.
    let mut mins = vec![f64::INFINITY; total_width];
    let mut maxs = vec![f64::NEG_INFINITY; total_width];
    for row in train.rows() {
        for (j, &v) in row.iter().enumerate() {
            mins[j] = mins[j].min(v as f64);
            maxs[j] = maxs[j].max(v as f64);
        }
    }
    let normalize = |m: &mut Array2<f32>| {
        for mut row in m.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let range = maxs[j] - mins[j];
                *v = if range > 0.0 {
                    ((((*v as f64) - mins[j]) / range).clamp(0.0, 1.0)) as f32
                } else {
                    0.0
                };
            }
        }
    };
    normalize(&mut train);
    normalize(&mut test);

    // Schema in source order with the fitted statistics.
    let mut columns = Vec::with_capacity(KDD_COLUMNS.len());
    let mut out_col = 0usize;
    let mut cat_slot = 0usize;
    for (col, (name, is_cat)) in KDD_COLUMNS.iter().enumerate() {
        if *is_cat {
            columns.push(ColumnDescriptor::Categorical {
                name: (*name).to_string(),
                categories: raw.vocabs[cat_slot].clone(),
            });
            cat_slot += 1;
        } else {
            columns.push(ColumnDescriptor::Numeric {
                name: (*name).to_string(),
                min: mins[out_col],
                max: maxs[out_col],
            });
        }
        out_col += widths[col];
    }

    Ok(TabularDataset {
        train,
        train_labels,
        test,
        test_labels,
        schema: TabularSchema { columns },
        rows_read: raw.rows_read,
        rows_skipped: raw.rows_skipped,
    })
}

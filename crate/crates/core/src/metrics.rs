//! Sampling quality, hash separation and plot-ready CSV files.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{FeatureMatrix, Label};
use crate::fmt::hex_bits;
use crate::hashindex::OccupancyReport;
use crate::klsh::HashCode;
use crate::sampler::{total_variance, SampleResult};
use crate::{format_f64, Error, Result};

/// Above this many codes, [`hamming_separation`] samples pairs instead of
/// visiting all of them.
pub const EXHAUSTIVE_PAIR_LIMIT: usize = 2000;
pub const SAMPLED_PAIRS: usize = 100_000;

/// Selected-over-all variance for one group of rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceRatio {
    /// Unclamped; a subset can spread more than the whole.
    pub ratio: f64,
    /// The group has zero variance, so `ratio` is reported as 1.
    pub zero_variance: bool,
    pub selected: usize,
    pub total: usize,
}

impl VarianceRatio {
    fn compute(all: &[&[f64]], selected: &[&[f64]]) -> Self {
        let whole = total_variance(all.iter().copied());
        let (ratio, zero_variance) = if whole == 0.0 {
            (1.0, true)
        } else {
            (total_variance(selected.iter().copied()) / whole, false)
        };
        Self {
            ratio,
            zero_variance,
            selected: selected.len(),
            total: all.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub global: VarianceRatio,
    /// One entry per label present in the corpus, in [`Label::ALL`] order.
    pub per_class: Vec<(Label, VarianceRatio)>,
    pub retention: f64,
}

impl VarianceReport {
    pub fn global_ratio(&self) -> f64 {
        self.global.ratio
    }
}

/// `labels[i]` is the label of `features.row(i)`.
pub fn variance_report(result: &SampleResult, features: &FeatureMatrix, labels: &[Label]) -> Result<VarianceReport> {
    if labels.len() != features.len() {
        return Err(Error::Contract(format!(
            "{} labels for {} feature rows",
            labels.len(),
            features.len()
        )));
    }
    let mut picked = vec![false; features.len()];
    for &id in &result.selected {
        let i = features
            .index_of(id)
            .ok_or_else(|| Error::Contract(format!("selected patch {id} has no feature row")))?;
        picked[i] = true;
    }
    let group = |keep: &dyn Fn(usize) -> bool| {
        let all: Vec<&[f64]> = (0..features.len()).filter(|&i| keep(i)).map(|i| features.row(i)).collect();
        let sel: Vec<&[f64]> = (0..features.len())
            .filter(|&i| keep(i) && picked[i])
            .map(|i| features.row(i))
            .collect();
        VarianceRatio::compute(&all, &sel)
    };
    let global = group(&|_| true);
    let per_class = Label::ALL
        .into_iter()
        .filter(|l| labels.contains(l))
        .map(|l| (l, group(&|i| labels[i] == l)))
        .collect();
    let retention = if features.is_empty() {
        1.0
    } else {
        result.selected.len() as f64 / features.len() as f64
    };
    Ok(VarianceReport {
        global,
        per_class,
        retention,
    })
}

/// Mean and population standard deviation of Hamming distances over a set
/// of pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStats {
    pub pairs: u64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct PairSums {
    pairs: u64,
    sum: u64,
    sum_sq: u64,
}

impl PairSums {
    fn add(&mut self, d: u32) {
        self.pairs += 1;
        self.sum += u64::from(d);
        self.sum_sq += u64::from(d * d);
    }

    fn merge(self, o: Self) -> Self {
        Self {
            pairs: self.pairs + o.pairs,
            sum: self.sum + o.sum,
            sum_sq: self.sum_sq + o.sum_sq,
        }
    }

    fn stats(self) -> Option<PairStats> {
        if self.pairs == 0 {
            return None;
        }
        let n = u128::from(self.pairs);
        let (s, q) = (u128::from(self.sum), u128::from(self.sum_sq));
        // n² var = n Σd² − (Σd)², exact in integers.
        let scaled_var = n * q - s * s;
        Some(PairStats {
            pairs: self.pairs,
            mean: s as f64 / n as f64,
            std: (scaled_var as f64).sqrt() / n as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationStats {
    /// Every pair was visited rather than a seeded sample.
    pub exhaustive: bool,
    pub intra: Option<PairStats>,
    /// Absent when only one class is present.
    pub inter: Option<PairStats>,
}

/// Pairwise Hamming distances split by whether the two codes share a label.
/// `seed` only matters above [`EXHAUSTIVE_PAIR_LIMIT`] codes.
pub fn hamming_separation(codes: &[HashCode], labels: &[Label], seed: u64) -> Result<SeparationStats> {
    if labels.len() != codes.len() {
        return Err(Error::Contract(format!("{} labels for {} codes", labels.len(), codes.len())));
    }
    if let Some(first) = codes.first() {
        if codes.iter().any(|c| c.len() != first.len()) {
            return Err(Error::Contract("codes differ in length".into()));
        }
    }
    let n = codes.len();
    let exhaustive = n <= EXHAUSTIVE_PAIR_LIMIT;
    let (intra, inter) = if exhaustive {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let (mut intra, mut inter) = (PairSums::default(), PairSums::default());
                for j in i + 1..n {
                    let d = codes[i].hamming(&codes[j]);
                    if labels[i] == labels[j] { intra.add(d) } else { inter.add(d) }
                }
                (intra, inter)
            })
            .reduce(
                || (PairSums::default(), PairSums::default()),
                |a, b| (a.0.merge(b.0), a.1.merge(b.1)),
            )
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut intra, mut inter) = (PairSums::default(), PairSums::default());
        for _ in 0..SAMPLED_PAIRS {
            let i = rng.gen_range(0..n);
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let d = codes[i].hamming(&codes[j]);
            if labels[i] == labels[j] { intra.add(d) } else { inter.add(d) }
        }
        (intra, inter)
    };
    let classes = Label::ALL.iter().filter(|l| labels.contains(l)).count();
    Ok(SeparationStats {
        exhaustive,
        intra: intra.stats(),
        inter: if classes >= 2 { inter.stats() } else { None },
    })
}

/// A report that can be written as a CSV with a fixed header.
pub trait PlotCsv {
    fn header(&self) -> &'static [&'static str];
    fn rows(&self) -> Vec<Vec<String>>;
}

pub fn emit_plot_csv(report: &dyn PlotCsv, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(report.header()).map_err(csv_err)?;
    for row in report.rows() {
        w.write_record(&row).map_err(csv_err)?;
    }
    let buf = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn metric(name: impl Into<String>, value: String) -> Vec<String> {
    vec![name.into(), value]
}

impl PlotCsv for VarianceReport {
    fn header(&self) -> &'static [&'static str] {
        &["metric", "value"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let mut rows = vec![
            metric("global_ratio", format_f64(self.global.ratio)),
            metric("global_zero_variance", u8::from(self.global.zero_variance).to_string()),
            metric("retention", format_f64(self.retention)),
            metric("selected", self.global.selected.to_string()),
            metric("total", self.global.total.to_string()),
        ];
        for (label, r) in &self.per_class {
            rows.push(metric(format!("ratio_{label}"), format_f64(r.ratio)));
            rows.push(metric(format!("zero_variance_{label}"), u8::from(r.zero_variance).to_string()));
            rows.push(metric(format!("selected_{label}"), r.selected.to_string()));
            rows.push(metric(format!("total_{label}"), r.total.to_string()));
        }
        rows
    }
}

impl PlotCsv for SeparationStats {
    fn header(&self) -> &'static [&'static str] {
        &["metric", "value"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let mut rows = vec![metric("exhaustive", u8::from(self.exhaustive).to_string())];
        for (name, stats) in [("intra", self.intra), ("inter", self.inter)] {
            if let Some(s) = stats {
                rows.push(metric(format!("{name}_pairs"), s.pairs.to_string()));
                rows.push(metric(format!("{name}_mean"), format_f64(s.mean)));
                rows.push(metric(format!("{name}_std"), format_f64(s.std)));
            }
        }
        rows
    }
}

impl PlotCsv for OccupancyReport {
    fn header(&self) -> &'static [&'static str] {
        &["size", "count"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.histogram
            .iter()
            .map(|(size, count)| vec![size.to_string(), count.to_string()])
            .collect()
    }
}

/// Per-bucket rows of a [`SampleResult`]. `level` and `variance_ratio` are
/// empty for the cap sampler.
pub struct BucketSummary<'a>(pub &'a SampleResult);

impl PlotCsv for BucketSummary<'_> {
    fn header(&self) -> &'static [&'static str] {
        &["bucket_key_hex", "size", "level", "variance_ratio", "selected"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.0
            .per_bucket
            .iter()
            .map(|b| {
                vec![
                    hex_bits(b.key, self.0.prefix_len),
                    b.size.to_string(),
                    b.level.map(|l| l.to_string()).unwrap_or_default(),
                    b.variance_ratio.map(format_f64).unwrap_or_default(),
                    b.selected.to_string(),
                ]
            })
            .collect()
    }
}

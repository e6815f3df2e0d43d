use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::Tensor;
use crate::{Error, Result};

/// Label value written for unlabeled rows.
pub const UNLABELED: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    P,
    Q,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::P => "P",
            Domain::Q => "Q",
        })
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "P" => Ok(Domain::P),
            "Q" => Ok(Domain::Q),
            other => Err(format!("unknown domain tag {other:?}")),
        }
    }
}

/// Raw inputs of one domain with partially observed labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub domain: Domain,
    /// `n × d_in`
    pub features: Tensor,
    pub labels: Vec<Option<usize>>,
}

impl DatasetSplit {
    pub fn new(domain: Domain, features: Tensor, labels: Vec<Option<usize>>) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows for {} labels",
                features.shape().first().copied().unwrap_or(0),
                labels.len()
            )));
        }
        Ok(DatasetSplit {
            domain,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// One more than the largest observed label.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().flatten().max().map_or(0, |m| m + 1)
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i].is_some())
            .collect()
    }

    pub fn subset(&self, idx: &[usize]) -> DatasetSplit {
        DatasetSplit {
            domain: self.domain,
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Hides labels so that exactly `⌈alpha·n⌉` rows stay labeled, allocated
/// across classes by largest remainder and drawn uniformly within a class.
pub fn mask_labels(split: &DatasetSplit, alpha: f64, seed: u64) -> Result<DatasetSplit> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParam(format!(
            "alpha = {alpha} outside (0, 1)"
        )));
    }
    let n = split.len();
    let target = ((alpha * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let k = split.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, l) in split.labels.iter().enumerate() {
        if let Some(c) = l {
            by_class[*c].push(i);
        }
    }
    let available: usize = by_class.iter().map(Vec::len).sum();
    if target > available {
        return Err(Error::InvalidParam(format!(
            "cannot keep {target} labels out of {available} labeled rows"
        )));
    }
    // quotas relative to the labeled pool
    let share = target as f64 / available.max(1) as f64;
    let exact: Vec<f64> = by_class.iter().map(|c| share * c.len() as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|x| (x + 1e-9).floor() as usize).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - quota[a] as f64, exact[b] - quota[b] as f64);
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut missing = target - quota.iter().sum::<usize>();
    for &c in order.iter().cycle().take(k * 2) {
        if missing == 0 {
            break;
        }
        if quota[c] < by_class[c].len() {
            quota[c] += 1;
            missing -= 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = vec![None; n];
    for (c, idx) in by_class.iter_mut().enumerate() {
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(quota[c]) {
            labels[i] = Some(c);
        }
    }
    DatasetSplit::new(split.domain, split.features.clone(), labels)
}

/// Writes `domain,label,f0,…` rows for every split in order.
pub fn write_csv(path: &Path, splits: &[&DatasetSplit]) -> Result<()> {
    let d = splits.first().map_or(0, |s| s.dim());
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut header = vec!["domain".to_string(), "label".to_string()];
    header.extend((0..d).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(|e| csv_io(path, e))?;
    for s in splits {
        if s.dim() != d {
            return Err(Error::Dimension(
                "splits differ in feature dimension".into(),
            ));
        }
        for i in 0..s.len() {
            let mut rec = vec![
                s.domain.to_string(),
                s.labels[i].map_or(UNLABELED, |c| c as i64).to_string(),
            ];
            rec.extend(s.features.row(i).iter().map(|x| x.to_string()));
            w.write_record(&rec).map_err(|e| csv_io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.into(),
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

/// Reads a dataset file and groups rows by domain (P first).
pub fn read_csv(path: &Path) -> Result<Vec<DatasetSplit>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let header = r.headers().map_err(|e| csv_io(path, e))?.clone();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.into(),
        line,
        message,
    };
    if header.len() < 2 || &header[0] != "domain" || &header[1] != "label" {
        return Err(parse_err(1, "header must start with domain,label".into()));
    }
    for (j, name) in header.iter().skip(2).enumerate() {
        if name != format!("f{j}") {
            return Err(parse_err(1, format!("unexpected column {name:?}")));
        }
    }
    let d = header.len() - 2;
    let mut groups: Vec<(Domain, Vec<f64>, Vec<Option<usize>>)> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_io(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != d + 2 {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", d + 2, rec.len()),
            ));
        }
        let domain: Domain = rec[0].parse().map_err(|m| parse_err(line, m))?;
        let label: i64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad label {:?}", &rec[1])))?;
        let label = match label {
            UNLABELED => None,
            l if l >= 0 => Some(l as usize),
            l => return Err(parse_err(line, format!("label {l} below -1"))),
        };
        let mut row = Vec::with_capacity(d);
        for f in rec.iter().skip(2) {
            let x: f64 = f
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("bad number {f:?}")))?;
            if !x.is_finite() {
                return Err(parse_err(line, format!("non-finite value {f:?}")));
            }
            row.push(x);
        }
        match groups.iter_mut().find(|g| g.0 == domain) {
            Some(g) => {
                g.1.extend(row);
                g.2.push(label);
            }
            None => groups.push((domain, row, vec![label])),
        }
    }
    groups.sort_by_key(|g| g.0);
    groups
        .into_iter()
        .map(|(domain, data, labels)| {
            let n = labels.len();
            DatasetSplit::new(domain, Tensor::matrix(n, d, data)?, labels)
        })
        .collect()
}

/// Reads a file holding a single domain.
pub fn load_csv(path: &Path) -> Result<DatasetSplit> {
    let mut splits = read_csv(path)?;
    match splits.len() {
        1 => Ok(splits.pop().expect("one split")),
        0 => Err(Error::Parse {
            path: path.into(),
            line: 1,
            message: "no data rows".into(),
        }),
        _ => Err(Error::Contract(format!(
            "{} holds both domains; use read_csv",
            path.display()
        ))),
    }
}

/// Reads a file holding both domains and returns `(P, Q)`.
pub fn load_domains(path: &Path) -> Result<(DatasetSplit, DatasetSplit)> {
    let mut splits = read_csv(path)?.into_iter();
    match (splits.next(), splits.next()) {
        (Some(p), Some(q)) if p.domain == Domain::P && q.domain == Domain::Q => Ok((p, q)),
        _ => Err(Error::Contract(format!(
            "{} must contain rows for both domains P and Q",
            path.display()
        ))),
    }
}

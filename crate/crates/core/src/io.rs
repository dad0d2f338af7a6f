//! Landmark CSV files, label files, matrix dumps and run configuration.
//!
//! Landmark files have the header `case_id,object_label,point_index,x,y[,z]`
//! with one row per landmark, sorted by case, object and point index.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ajive::JointRankPolicy;
use crate::error::{Error, Result};
use crate::inference::{default_lambda_grid, HoldoutConfig, Loss, Protocol, DEFAULT_N_PERM};
use crate::pipeline::NeujiveConfig;
use crate::pns::FitOptions;
use crate::preshape::LandmarkConfig;
use crate::sphere::UnitVector;

/// Reads every landmark configuration in a CSV stream, ordered by
/// `(case_id, object_label)`. Every configuration must carry the same
/// point-index set. Geometry is not validated here.
pub fn read_landmarks<R: Read>(reader: R) -> Result<Vec<LandmarkConfig>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let expected = ["case_id", "object_label", "point_index", "x", "y"];
    let dim = match headers.len() {
        5 => 2,
        6 if headers[5] == "z" => 3,
        _ => 0,
    };
    if dim == 0 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::Parse(format!(
            "landmark header must be case_id,object_label,point_index,x,y[,z]; got {}",
            headers.join(",")
        )));
    }
    let mut groups: BTreeMap<(String, String), BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let index: usize = rec[2]
            .parse()
            .map_err(|_| Error::Parse(format!("line {row}: bad point_index {:?}", &rec[2])))?;
        let coords = (3..3 + dim)
            .map(|i| {
                rec[i]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse(format!("line {row}: bad coordinate {:?}", &rec[i])))
            })
            .collect::<Result<Vec<f64>>>()?;
        let points = groups.entry((rec[0].to_owned(), rec[1].to_owned())).or_default();
        if points.insert(index, coords).is_some() {
            return Err(Error::Parse(format!(
                "line {row}: duplicate point {index} for case {} object {}",
                &rec[0], &rec[1]
            )));
        }
    }
    let mut reference: Option<BTreeSet<usize>> = None;
    let mut out = Vec::with_capacity(groups.len());
    for ((case_id, object_label), points) in groups {
        let keys: BTreeSet<usize> = points.keys().copied().collect();
        match &reference {
            None => reference = Some(keys),
            Some(r) if *r != keys => {
                return Err(Error::CaseMismatch(format!(
                    "case {case_id} object {object_label} has a different set of point indices"
                )))
            }
            Some(_) => {}
        }
        let rows: Vec<f64> = points.into_values().flatten().collect();
        out.push(LandmarkConfig {
            points: DMatrix::from_row_slice(rows.len() / dim, dim, &rows),
            case_id,
            object_label,
        });
    }
    if out.is_empty() {
        return Err(Error::Parse("landmark file has no rows".into()));
    }
    Ok(out)
}

pub fn read_landmarks_path(path: &Path) -> Result<Vec<LandmarkConfig>> {
    read_landmarks(std::fs::File::open(path)?)
}

/// Writes configurations in sorted order. All must share one ambient dimension.
pub fn write_landmarks<W: Write>(writer: W, configs: &[LandmarkConfig]) -> Result<()> {
    let dim = configs.first().map_or(2, |c| c.points.ncols());
    if let Some(c) = configs.iter().find(|c| c.points.ncols() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: c.points.ncols(),
        });
    }
    let mut order: Vec<&LandmarkConfig> = configs.iter().collect();
    order.sort_by(|a, b| (&a.case_id, &a.object_label).cmp(&(&b.case_id, &b.object_label)));
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["case_id", "object_label", "point_index", "x", "y"];
    if dim == 3 {
        header.push("z");
    }
    w.write_record(&header)?;
    for c in order {
        for (i, row) in c.points.row_iter().enumerate() {
            let mut rec = vec![c.case_id.clone(), c.object_label.clone(), i.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_landmarks_path(path: &Path, configs: &[LandmarkConfig]) -> Result<()> {
    write_landmarks(std::fs::File::create(path)?, configs)
}

/// Splits configurations into blocks by object label (sorted by label), each
/// listing cases in the same order. Every case must have every object.
pub fn group_blocks(configs: Vec<LandmarkConfig>) -> Result<Vec<Vec<LandmarkConfig>>> {
    let mut by_object: BTreeMap<String, Vec<LandmarkConfig>> = BTreeMap::new();
    for c in configs {
        by_object.entry(c.object_label.clone()).or_default().push(c);
    }
    let mut blocks: Vec<Vec<LandmarkConfig>> = by_object.into_values().collect();
    for b in &mut blocks {
        b.sort_by(|a, c| a.case_id.cmp(&c.case_id));
    }
    let ids: Vec<&str> = blocks[0].iter().map(|c| c.case_id.as_str()).collect();
    for b in &blocks[1..] {
        if b.len() != ids.len() || b.iter().zip(&ids).any(|(c, id)| c.case_id != *id) {
            return Err(Error::CaseMismatch(format!(
                "object {} is not present for exactly the cases of object {}",
                b[0].object_label, blocks[0][0].object_label
            )));
        }
    }
    Ok(blocks)
}

/// Reads a configuration as one point on a sphere: its coordinates flattened
/// row by row and normalized.
pub fn to_direction(c: &LandmarkConfig) -> Result<UnitVector> {
    let flat: Vec<f64> = c.points.transpose().as_slice().to_vec();
    UnitVector::normalize(nalgebra::DVector::from_vec(flat))
}

/// Writes points on a sphere in landmark format, one object per block.
pub fn directions_to_configs(blocks: &[Vec<UnitVector>], case_ids: &[String]) -> Result<Vec<LandmarkConfig>> {
    let mut out = Vec::new();
    for (k, b) in blocks.iter().enumerate() {
        if b.len() != case_ids.len() {
            return Err(Error::CaseMismatch(format!(
                "block {k} has {} points for {} case ids",
                b.len(),
                case_ids.len()
            )));
        }
        for (p, id) in b.iter().zip(case_ids) {
            let d = p.dim();
            let cols = if d % 3 == 0 { 3 } else if d % 2 == 0 { 2 } else { d };
            out.push(LandmarkConfig {
                points: DMatrix::from_row_slice(d / cols, cols, p.coords().as_slice()),
                case_id: id.clone(),
                object_label: format!("block{k}"),
            });
        }
    }
    Ok(out)
}

/// Reads a `case_id,label` file with binary labels.
pub fn read_labels<R: Read>(reader: R) -> Result<BTreeMap<String, u8>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "case_id" || &headers[1] != "label" {
        return Err(Error::Parse("label header must be case_id,label".into()));
    }
    let mut out = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let label = match &rec[1] {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::Parse(format!("line {}: label {other:?} is not 0 or 1", line + 2))),
        };
        if out.insert(rec[0].to_owned(), label).is_some() {
            return Err(Error::Parse(format!("line {}: duplicate case {}", line + 2, &rec[0])));
        }
    }
    Ok(out)
}

/// Labels in the order of `case_ids`.
pub fn labels_for(map: &BTreeMap<String, u8>, case_ids: &[String]) -> Result<Vec<u8>> {
    case_ids
        .iter()
        .map(|id| {
            map.get(id)
                .copied()
                .ok_or_else(|| Error::CaseMismatch(format!("no label for case {id}")))
        })
        .collect()
}

pub fn write_labels<W: Write>(writer: W, case_ids: &[String], labels: &[u8]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["case_id", "label"])?;
    for (id, l) in case_ids.iter().zip(labels) {
        w.write_record([id.as_str(), &l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a `p x n` matrix with one row per case: `case_id,<prefix>0,...`.
pub fn write_case_matrix<W: Write>(writer: W, prefix: &str, case_ids: &[String], m: &DMatrix<f64>) -> Result<()> {
    if m.ncols() != case_ids.len() {
        return Err(Error::CaseMismatch(format!(
            "{} columns for {} case ids",
            m.ncols(),
            case_ids.len()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["case_id".to_owned()];
    header.extend((0..m.nrows()).map(|i| format!("{prefix}{i}")));
    w.write_record(&header)?;
    for (j, id) in case_ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(m.column(j).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `(index, value)` rows under the given column names.
pub fn write_series<W: Write>(writer: W, names: [&str; 2], values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(names)?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Serializes to pretty JSON with shortest round-trip floats.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Run configuration file: the pipeline settings plus inference settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub initial_ranks: Option<Vec<usize>>,
    pub joint_rank_policy: JointRankPolicy,
    pub pns_levels: Option<Vec<usize>>,
    pub seed: Option<u64>,
    pub align: bool,
    pub pns: FitOptions,
    pub n_perm: usize,
    pub n_rounds: usize,
    pub test_fraction: f64,
    pub inner_folds: usize,
    pub lambda_grid: Vec<f64>,
    /// Initial ranks tried by the classification harness; empty uses the
    /// pipeline's own choice.
    pub rank_grid: Vec<usize>,
    pub loss: Loss,
    pub protocol: Protocol,
}

impl Default for RunConfig {
    fn default() -> Self {
        let n = NeujiveConfig::default();
        let h = HoldoutConfig::default();
        RunConfig {
            initial_ranks: n.initial_ranks,
            joint_rank_policy: n.joint_rank_policy,
            pns_levels: n.pns_levels,
            seed: None,
            align: n.align,
            pns: n.pns,
            n_perm: DEFAULT_N_PERM,
            n_rounds: h.n_rounds,
            test_fraction: h.test_fraction,
            inner_folds: h.inner_folds,
            lambda_grid: default_lambda_grid(),
            rank_grid: Vec::new(),
            loss: h.loss,
            protocol: Protocol::Transductive,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "test_fraction {} must lie in (0, 1)",
                self.test_fraction
            )));
        }
        if self.lambda_grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidConfig("lambda_grid values must be positive".into()));
        }
        if self.rank_grid.contains(&0) {
            return Err(Error::InvalidConfig("rank_grid values must be at least 1".into()));
        }
        Ok(())
    }

    /// Pipeline settings; `fallback_seed` applies when the file names none.
    pub fn neujive(&self, fallback_seed: u64) -> NeujiveConfig {
        NeujiveConfig {
            initial_ranks: self.initial_ranks.clone(),
            joint_rank_policy: self.joint_rank_policy,
            pns_levels: self.pns_levels.clone(),
            seed: self.seed.unwrap_or(fallback_seed),
            align: self.align,
            pns: self.pns,
        }
    }

    pub fn holdout(&self, fallback_seed: u64) -> HoldoutConfig {
        HoldoutConfig {
            n_rounds: self.n_rounds,
            test_fraction: self.test_fraction,
            inner_folds: self.inner_folds,
            lambda_grid: self.lambda_grid.clone(),
            seed: self.seed.unwrap_or(fallback_seed),
            loss: self.loss,
        }
    }
}

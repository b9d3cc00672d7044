//! Column-oriented samples with CSV persistence.
//!
//! A [`Dataset`] stores one matrix per node, all with the same row count.
//! On disk it is a CSV file plus a JSON sidecar carrying node roles; float
//! cells use 17 significant digits so round-trips are bit-exact.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{NodeId, NodeRole};

/// Reserved header name for the environment label column.
const ENV_HEADER: &str = "e";

/// Errors for dataset construction and persistence.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("sidecar: {0}")]
    Sidecar(#[from] serde_json::Error),
    #[error("dataset has no rows")]
    Empty,
    #[error("dataset has no columns")]
    NoColumns,
    #[error("column `{0}` has {1} rows, expected {2}")]
    RowCountMismatch(NodeId, usize, usize),
    #[error("column `{0}` has zero width")]
    ZeroWidth(NodeId),
    #[error("roles and columns disagree on `{0}`")]
    RoleMismatch(NodeId),
    #[error("treatment value {0} at row {1} is not 0 or 1")]
    NonBinaryTreatment(f64, usize),
    #[error("no column with role `{0}`")]
    MissingRole(NodeRole),
    #[error("multiple columns with role `{0}`")]
    DuplicateRole(NodeRole),
    #[error("unknown column `{0}`")]
    UnknownColumn(NodeId),
    #[error("column `{0}` requested twice")]
    DuplicateColumn(NodeId),
    #[error("missing values at rows {0:?}")]
    MissingValues(Vec<usize>),
    #[error("unparseable value {value:?} at row {row}, column {column}")]
    BadValue {
        value: String,
        row: usize,
        column: String,
    },
    #[error("malformed header column {0:?}")]
    BadHeader(String),
    #[error("header does not match sidecar: {0}")]
    SidecarMismatch(String),
    #[error("environment column: {0}")]
    BadEnvironment(String),
}

/// Environment labels attached to a dataset, one label per row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvColumn {
    pub labels: Vec<u32>,
    pub num_envs: u32,
}

/// Addresses one scalar column inside a stacked design matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnRef {
    pub node: NodeId,
    pub component: usize,
}

/// Samples keyed by node id; every matrix has `n` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    n: usize,
    columns: BTreeMap<NodeId, DMatrix<f64>>,
    roles: BTreeMap<NodeId, NodeRole>,
    env: Option<EnvColumn>,
}

impl Dataset {
    /// Builds a dataset, checking row counts, widths, role coverage, and
    /// that every treatment column is 0/1 valued.
    pub fn new(
        columns: BTreeMap<NodeId, DMatrix<f64>>,
        roles: BTreeMap<NodeId, NodeRole>,
    ) -> Result<Self, DataError> {
        let Some(n) = columns.values().next().map(DMatrix::nrows) else {
            return Err(DataError::NoColumns);
        };
        if n == 0 {
            return Err(DataError::Empty);
        }
        for (id, m) in &columns {
            if m.nrows() != n {
                return Err(DataError::RowCountMismatch(id.clone(), m.nrows(), n));
            }
            if m.ncols() == 0 {
                return Err(DataError::ZeroWidth(id.clone()));
            }
        }
        for id in roles.keys() {
            if !columns.contains_key(id) {
                return Err(DataError::RoleMismatch(id.clone()));
            }
        }
        for id in columns.keys() {
            match roles.get(id) {
                None => return Err(DataError::RoleMismatch(id.clone())),
                Some(NodeRole::Environment) => {
                    return Err(DataError::BadEnvironment(format!(
                        "column `{id}` has the environment role; use set_env"
                    )))
                }
                Some(_) => {}
            }
        }
        for (id, role) in &roles {
            if *role == NodeRole::Treatment {
                for (row, v) in columns[id].iter().enumerate() {
                    if *v != 0.0 && *v != 1.0 {
                        return Err(DataError::NonBinaryTreatment(*v, row));
                    }
                }
            }
        }
        Ok(Self {
            n,
            columns,
            roles,
            env: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Column ids in sorted order.
    pub fn ids(&self) -> impl Iterator<Item = &NodeId> {
        self.columns.keys()
    }

    pub fn role(&self, id: &NodeId) -> Result<NodeRole, DataError> {
        self.roles
            .get(id)
            .copied()
            .ok_or_else(|| DataError::UnknownColumn(id.clone()))
    }

    pub fn dim(&self, id: &NodeId) -> Result<usize, DataError> {
        self.column(id).map(DMatrix::ncols)
    }

    pub fn column(&self, id: &NodeId) -> Result<&DMatrix<f64>, DataError> {
        self.columns
            .get(id)
            .ok_or_else(|| DataError::UnknownColumn(id.clone()))
    }

    /// Feature column ids in sorted order.
    pub fn feature_ids(&self) -> Vec<NodeId> {
        self.roles
            .iter()
            .filter(|(_, r)| **r == NodeRole::Feature)
            .map(|(id, _)| id.clone())
            .collect()
    }

    fn unique_role(&self, role: NodeRole) -> Result<&NodeId, DataError> {
        let mut found = None;
        for (id, r) in &self.roles {
            if *r == role {
                if found.is_some() {
                    return Err(DataError::DuplicateRole(role));
                }
                found = Some(id);
            }
        }
        found.ok_or(DataError::MissingRole(role))
    }

    pub fn treatment_id(&self) -> Result<&NodeId, DataError> {
        self.unique_role(NodeRole::Treatment)
    }

    pub fn outcome_id(&self) -> Result<&NodeId, DataError> {
        self.unique_role(NodeRole::Outcome)
    }

    /// First component of the treatment column.
    pub fn treatment_values(&self) -> Result<Vec<f64>, DataError> {
        let t = self.treatment_id()?.clone();
        Ok(self.column(&t)?.column(0).iter().copied().collect())
    }

    /// Row indices of the treated and control arms, in order.
    pub fn arm_rows(&self) -> Result<(Vec<usize>, Vec<usize>), DataError> {
        let t = self.treatment_values()?;
        let mut treated = Vec::new();
        let mut control = Vec::new();
        for (i, v) in t.iter().enumerate() {
            if *v == 1.0 {
                treated.push(i);
            } else {
                control.push(i);
            }
        }
        Ok((treated, control))
    }

    pub fn env(&self) -> Option<&EnvColumn> {
        self.env.as_ref()
    }

    /// Attaches per-row environment labels.
    pub fn set_env(&mut self, env: EnvColumn) -> Result<(), DataError> {
        if env.labels.len() != self.n {
            return Err(DataError::BadEnvironment(format!(
                "{} labels for {} rows",
                env.labels.len(),
                self.n
            )));
        }
        if env.num_envs < 2 {
            return Err(DataError::BadEnvironment(
                "need at least two environments".into(),
            ));
        }
        if let Some(bad) = env.labels.iter().find(|&&l| l >= env.num_envs) {
            return Err(DataError::BadEnvironment(format!(
                "label {bad} outside 0..{}",
                env.num_envs
            )));
        }
        let reserved = NodeId::new(ENV_HEADER).expect("static id");
        if self.columns.contains_key(&reserved) {
            return Err(DataError::BadEnvironment(format!(
                "column id `{ENV_HEADER}` collides with the environment header"
            )));
        }
        self.env = Some(env);
        Ok(())
    }

    pub fn clear_env(&mut self) {
        self.env = None;
    }

    /// Copies the given rows into a new dataset, keeping roles and labels.
    ///
    /// Panics if a row index is out of range.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let columns = self
            .columns
            .iter()
            .map(|(id, m)| (id.clone(), m.select_rows(rows.iter())))
            .collect();
        let env = self.env.as_ref().map(|e| EnvColumn {
            labels: rows.iter().map(|&i| e.labels[i]).collect(),
            num_envs: e.num_envs,
        });
        Dataset {
            n: rows.len(),
            columns: columns,
            roles: self.roles.clone(),
            env,
        }
    }

    /// Stacks the named columns left to right, in the order given.
    pub fn design_matrix(
        &self,
        ids: &[NodeId],
    ) -> Result<(DMatrix<f64>, Vec<ColumnRef>), DataError> {
        let mut seen = BTreeSet::new();
        let mut width = 0;
        for id in ids {
            if !seen.insert(id) {
                return Err(DataError::DuplicateColumn(id.clone()));
            }
            width += self.dim(id)?;
        }
        let mut out = DMatrix::zeros(self.n, width);
        let mut refs = Vec::with_capacity(width);
        let mut offset = 0;
        for id in ids {
            let m = self.column(id)?;
            out.view_mut((0, offset), (self.n, m.ncols())).copy_from(m);
            for component in 0..m.ncols() {
                refs.push(ColumnRef {
                    node: id.clone(),
                    component,
                });
            }
            offset += m.ncols();
        }
        Ok((out, refs))
    }

    fn header(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (id, m) in &self.columns {
            if m.ncols() == 1 {
                out.push(id.as_str().to_string());
            } else {
                for k in 0..m.ncols() {
                    out.push(format!("{id}__{k}"));
                }
            }
        }
        if self.env.is_some() {
            out.push(ENV_HEADER.to_string());
        }
        out
    }

    /// Writes the CSV file and its role sidecar next to it.
    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(self.header())?;
        let mut record = Vec::new();
        for i in 0..self.n {
            record.clear();
            for m in self.columns.values() {
                for k in 0..m.ncols() {
                    record.push(format!("{:.16e}", m[(i, k)]));
                }
            }
            if let Some(env) = &self.env {
                record.push(env.labels[i].to_string());
            }
            writer.write_record(&record)?;
        }
        writer.flush().map_err(csv::Error::from)?;
        let sidecar = Sidecar {
            roles: self.roles.clone(),
            num_envs: self.env.as_ref().map(|e| e.num_envs),
        };
        fs::write(
            sidecar_path(path),
            serde_json::to_string_pretty(&sidecar)?,
        )?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    roles: BTreeMap<NodeId, NodeRole>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_envs: Option<u32>,
}

/// Path of the JSON sidecar belonging to a CSV file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("roles.json")
}

/// Splits a header cell into its node id and optional component index.
fn parse_header(cell: &str) -> Result<(NodeId, Option<usize>), DataError> {
    let bad = || DataError::BadHeader(cell.to_string());
    match cell.split_once("__") {
        None => Ok((NodeId::new(cell).map_err(|_| bad())?, None)),
        Some((name, suffix)) => {
            let component = suffix.parse::<usize>().map_err(|_| bad())?;
            Ok((NodeId::new(name).map_err(|_| bad())?, Some(component)))
        }
    }
}

/// Loads a dataset written by [`Dataset::write_csv`], restoring roles and
/// environment labels from the sidecar.
pub fn load_dataset_csv(path: &Path) -> Result<Dataset, DataError> {
    let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() {
        return Err(DataError::NoColumns);
    }

    // Group header cells into nodes; `e` is only legal as the last cell.
    let mut groups: Vec<(NodeId, usize)> = Vec::new();
    let mut env_present = false;
    for (pos, cell) in headers.iter().enumerate() {
        if cell == ENV_HEADER {
            if pos + 1 != headers.len() {
                return Err(DataError::BadHeader(cell.clone()));
            }
            env_present = true;
            continue;
        }
        let (id, component) = parse_header(cell)?;
        match (groups.last_mut(), component) {
            (Some((last, width)), Some(k)) if *last == id => {
                if k != *width {
                    return Err(DataError::BadHeader(cell.clone()));
                }
                *width += 1;
            }
            (_, Some(0)) | (_, None) => {
                if groups.iter().any(|(g, _)| g == &id) {
                    return Err(DataError::BadHeader(cell.clone()));
                }
                groups.push((id, 1));
            }
            _ => return Err(DataError::BadHeader(cell.clone())),
        }
    }

    let group_ids: BTreeSet<&NodeId> = groups.iter().map(|(id, _)| id).collect();
    for id in sidecar.roles.keys() {
        if !group_ids.contains(id) {
            return Err(DataError::SidecarMismatch(format!(
                "role for absent column `{id}`"
            )));
        }
    }
    for id in &group_ids {
        if !sidecar.roles.contains_key(*id) {
            return Err(DataError::SidecarMismatch(format!(
                "column `{id}` has no role"
            )));
        }
    }
    if env_present && sidecar.num_envs.is_none() {
        return Err(DataError::SidecarMismatch(
            "environment column without num_envs".into(),
        ));
    }
    if !env_present && sidecar.num_envs.is_some() {
        return Err(DataError::SidecarMismatch(
            "num_envs without environment column".into(),
        ));
    }

    let mut cells: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    let mut missing: Vec<usize> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let mut parsed = Vec::with_capacity(record.len());
        let value_cells = record.len() - usize::from(env_present);
        for (col, raw) in record.iter().take(value_cells).enumerate() {
            let trimmed = raw.trim();
            if trimmed.is_empty() {
                missing.push(row);
                parsed.push(f64::NAN);
                continue;
            }
            let value = trimmed.parse::<f64>().map_err(|_| DataError::BadValue {
                value: raw.to_string(),
                row,
                column: headers[col].clone(),
            })?;
            parsed.push(value);
        }
        if env_present {
            let raw = record.get(value_cells).unwrap_or("");
            let trimmed = raw.trim();
            if trimmed.is_empty() {
                missing.push(row);
                labels.push(0);
            } else {
                labels.push(trimmed.parse::<u32>().map_err(|_| DataError::BadValue {
                    value: raw.to_string(),
                    row,
                    column: ENV_HEADER.to_string(),
                })?);
            }
        }
        cells.push(parsed);
    }
    if !missing.is_empty() {
        missing.dedup();
        return Err(DataError::MissingValues(missing));
    }
    if cells.is_empty() {
        return Err(DataError::Empty);
    }

    let n = cells.len();
    let mut columns = BTreeMap::new();
    let mut offset = 0;
    for (id, width) in &groups {
        let m = DMatrix::from_fn(n, *width, |i, j| cells[i][offset + j]);
        columns.insert(id.clone(), m);
        offset += width;
    }
    let mut dataset = Dataset::new(columns, sidecar.roles)?;
    if env_present {
        dataset.set_env(EnvColumn {
            labels,
            num_envs: sidecar.num_envs.expect("checked above"),
        })?;
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::node_id;

    fn sample() -> Dataset {
        let mut columns = BTreeMap::new();
        columns.insert(
            node_id("x1"),
            DMatrix::from_row_slice(3, 1, &[0.1, -2.5, 1.0 / 3.0]),
        );
        columns.insert(
            node_id("x2"),
            DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0e-17]),
        );
        columns.insert(node_id("t"), DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 1.0]));
        columns.insert(
            node_id("y"),
            DMatrix::from_row_slice(3, 1, &[2.25, -0.5, 9.0]),
        );
        let roles = [
            (node_id("x1"), NodeRole::Feature),
            (node_id("x2"), NodeRole::Feature),
            (node_id("t"), NodeRole::Treatment),
            (node_id("y"), NodeRole::Outcome),
        ]
        .into_iter()
        .collect();
        Dataset::new(columns, roles).unwrap()
    }

    #[test]
    fn construction_checks_consistency() {
        let mut columns = BTreeMap::new();
        columns.insert(node_id("a"), DMatrix::from_row_slice(2, 1, &[1.0, 2.0]));
        columns.insert(node_id("b"), DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]));
        let roles: BTreeMap<NodeId, NodeRole> = [
            (node_id("a"), NodeRole::Feature),
            (node_id("b"), NodeRole::Feature),
        ]
        .into_iter()
        .collect();
        assert!(matches!(
            Dataset::new(columns, roles.clone()),
            Err(DataError::RowCountMismatch(_, 3, 2))
        ));
        let one: BTreeMap<NodeId, DMatrix<f64>> =
            [(node_id("a"), DMatrix::from_row_slice(2, 1, &[1.0, 2.0]))]
                .into_iter()
                .collect();
        assert!(matches!(
            Dataset::new(one, roles),
            Err(DataError::RoleMismatch(_))
        ));
        assert!(matches!(
            Dataset::new(BTreeMap::new(), BTreeMap::new()),
            Err(DataError::NoColumns)
        ));
    }

    #[test]
    fn non_binary_treatment_rejected() {
        let columns: BTreeMap<NodeId, DMatrix<f64>> =
            [(node_id("t"), DMatrix::from_row_slice(2, 1, &[0.0, 0.5]))]
                .into_iter()
                .collect();
        let roles = [(node_id("t"), NodeRole::Treatment)].into_iter().collect();
        assert!(matches!(
            Dataset::new(columns, roles),
            Err(DataError::NonBinaryTreatment(v, 1)) if v == 0.5
        ));
    }

    #[test]
    fn arm_rows_partition_samples() {
        let data = sample();
        let (treated, control) = data.arm_rows().unwrap();
        assert_eq!(treated, vec![1, 2]);
        assert_eq!(control, vec![0]);
    }

    #[test]
    fn design_matrix_stacks_in_request_order() {
        let data = sample();
        let (m, refs) = data
            .design_matrix(&[node_id("x2"), node_id("x1")])
            .unwrap();
        assert_eq!(m.ncols(), 3);
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(0, 2)], 0.1);
        assert_eq!(
            refs,
            vec![
                ColumnRef { node: node_id("x2"), component: 0 },
                ColumnRef { node: node_id("x2"), component: 1 },
                ColumnRef { node: node_id("x1"), component: 0 },
            ]
        );
        assert!(matches!(
            data.design_matrix(&[node_id("x1"), node_id("x1")]),
            Err(DataError::DuplicateColumn(_))
        ));
    }

    #[test]
    fn subset_keeps_roles_and_labels() {
        let mut data = sample();
        data.set_env(EnvColumn { labels: vec![0, 2, 1], num_envs: 3 }).unwrap();
        let sub = data.subset(&[2, 0]);
        assert_eq!(sub.n(), 2);
        assert_eq!(sub.column(&node_id("x1")).unwrap()[(0, 0)], 1.0 / 3.0);
        assert_eq!(sub.env().unwrap().labels, vec![1, 0]);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let mut data = sample();
        data.set_env(EnvColumn { labels: vec![2, 0, 1], num_envs: 3 }).unwrap();
        data.write_csv(&path).unwrap();
        let back = load_dataset_csv(&path).unwrap();
        assert_eq!(data, back);
    }

    #[test]
    fn csv_round_trip_without_env() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plain.csv");
        let data = sample();
        data.write_csv(&path).unwrap();
        assert_eq!(load_dataset_csv(&path).unwrap(), data);
    }

    #[test]
    fn missing_values_are_reported_with_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gaps.csv");
        fs::write(&path, "x1,y\n1.0,2.0\n,3.0\n4.0,\n").unwrap();
        fs::write(
            sidecar_path(&path),
            r#"{"roles":{"x1":"feature","y":"outcome"}}"#,
        )
        .unwrap();
        match load_dataset_csv(&path) {
            Err(DataError::MissingValues(rows)) => assert_eq!(rows, vec![1, 2]),
            other => panic!("expected missing-value error, got {other:?}"),
        }
    }

    #[test]
    fn empty_and_garbage_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        fs::write(&path, "x1,y\n").unwrap();
        fs::write(
            sidecar_path(&path),
            r#"{"roles":{"x1":"feature","y":"outcome"}}"#,
        )
        .unwrap();
        assert!(matches!(load_dataset_csv(&path), Err(DataError::Empty)));
        fs::write(&path, "x1,y\nob,2.0\n").unwrap();
        assert!(matches!(
            load_dataset_csv(&path),
            Err(DataError::BadValue { row: 0, .. })
        ));
    }

    #[test]
    fn sidecar_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mismatch.csv");
        fs::write(&path, "x1,y\n1.0,2.0\n").unwrap();
        fs::write(sidecar_path(&path), r#"{"roles":{"x1":"feature"}}"#).unwrap();
        assert!(matches!(
            load_dataset_csv(&path),
            Err(DataError::SidecarMismatch(_))
        ));
        fs::write(
            sidecar_path(&path),
            r#"{"roles":{"x1":"feature","y":"outcome","zz":"feature"}}"#,
        )
        .unwrap();
        assert!(matches!(
            load_dataset_csv(&path),
            Err(DataError::SidecarMismatch(_))
        ));
    }

    #[test]
    fn split_headers_must_be_contiguous() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.csv");
        fs::write(&path, "x2__0,x1,x2__1\n1.0,2.0,3.0\n").unwrap();
        fs::write(
            sidecar_path(&path),
            r#"{"roles":{"x1":"feature","x2":"feature"}}"#,
        )
        .unwrap();
        assert!(matches!(
            load_dataset_csv(&path),
            Err(DataError::BadHeader(_))
        ));
    }

    #[test]
    fn env_header_must_be_last_and_described() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("env.csv");
        fs::write(&path, "e,x1\n0,1.0\n").unwrap();
        fs::write(sidecar_path(&path), r#"{"roles":{"x1":"feature"}}"#).unwrap();
        assert!(matches!(
            load_dataset_csv(&path),
            Err(DataError::BadHeader(_))
        ));
        fs::write(&path, "x1,e\n1.0,0\n").unwrap();
        assert!(matches!(
            load_dataset_csv(&path),
            Err(DataError::SidecarMismatch(_))
        ));
    }
}

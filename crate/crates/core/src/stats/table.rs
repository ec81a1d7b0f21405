//! Column-oriented data table with continuous and categorical variables.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Continuous(Vec<f64>),
    /// `levels[0]` is the reference level under treatment coding.
    Categorical { levels: Vec<String>, codes: Vec<usize> },
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Continuous(v) => v.len(),
            Column::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A single predictor value used for prediction.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Level(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataTable {
    n_rows: Option<usize>,
    columns: BTreeMap<String, Column>,
}

impl DataTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows.unwrap_or(0)
    }

    fn check_len(&mut self, name: &str, len: usize) -> Result<()> {
        match self.n_rows {
            Some(n) if n != len => Err(Error::Config(format!(
                "column `{name}` has {len} rows, table has {n}"
            ))),
            _ => {
                self.n_rows = Some(len);
                Ok(())
            }
        }
    }

    pub fn add_continuous(&mut self, name: &str, values: Vec<f64>) -> Result<&mut Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::DegenerateInput(format!(
                "non-finite value in `{name}` at row {i}"
            )));
        }
        self.check_len(name, values.len())?;
        self.columns.insert(name.to_string(), Column::Continuous(values));
        Ok(self)
    }

    /// Add a factor with an explicit level order. Values outside `levels`
    /// are rejected.
    pub fn add_categorical<S: AsRef<str>>(
        &mut self,
        name: &str,
        levels: &[&str],
        values: &[S],
    ) -> Result<&mut Self> {
        let codes = values
            .iter()
            .map(|v| {
                let v = v.as_ref();
                levels.iter().position(|l| *l == v).ok_or_else(|| Error::UnknownLevel {
                    factor: name.to_string(),
                    level: v.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.check_len(name, codes.len())?;
        self.columns.insert(
            name.to_string(),
            Column::Categorical {
                levels: levels.iter().map(|s| s.to_string()).collect(),
                codes,
            },
        );
        Ok(self)
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .get(name)
            .ok_or_else(|| Error::Lookup(format!("no column named `{name}`")))
    }

    pub fn continuous(&self, name: &str) -> Result<&[f64]> {
        match self.column(name)? {
            Column::Continuous(v) => Ok(v),
            Column::Categorical { .. } => Err(Error::Formula(format!(
                "`{name}` is categorical but a numeric column is required"
            ))),
        }
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_lengths_and_unknown_levels() {
        let mut t = DataTable::new();
        t.add_continuous("x", vec![1.0, 2.0]).unwrap();
        assert!(t.add_continuous("y", vec![1.0]).is_err());
        let err = t.add_categorical("e", &["Real", "AR"], &["Real", "MR"]).unwrap_err();
        assert_eq!(err.kind(), "unknown_level");
        t.add_categorical("e", &["Real", "AR"], &["AR", "Real"]).unwrap();
        assert_eq!(t.n_rows(), 2);
        assert!(t.continuous("e").is_err());
        assert!(t.column("nope").is_err());
    }
}

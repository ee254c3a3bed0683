//! Per-step training trace and its CSV form.
//!
//! Header: `step,loss_<name>...,w_<name>...,gamma,total`. Floats carry nine
//! significant digits.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("empty trace file")]
    Empty,
    #[error("line 1: header must start with 'step' and contain loss_<name> columns")]
    Header,
    #[error("line {line}: expected {expected} fields, found {found}")]
    FieldCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: cannot parse '{value}' in column '{column}'")]
    Value {
        line: usize,
        column: String,
        value: String,
    },
    #[error("line {line}: step {step} does not increase")]
    StepOrder { line: usize, step: u64 },
}

/// Formats with nine significant digits.
pub fn fmt9(x: f64) -> String {
    format!("{x:.8e}")
}

/// Rounds to what [`fmt9`] prints.
pub fn quantize9(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    fmt9(x).parse().expect("formatted float parses")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub losses: Vec<f64>,
    pub weights: Vec<f64>,
    pub gamma: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceLog {
    pub names: Vec<String>,
    pub rows: Vec<TraceRow>,
}

impl TraceLog {
    pub fn new(names: Vec<String>) -> Self {
        Self {
            names,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: TraceRow) {
        debug_assert_eq!(row.losses.len(), self.names.len());
        debug_assert!(self.rows.last().is_none_or(|r| r.step < row.step));
        self.rows.push(row);
    }

    pub fn header(&self) -> String {
        let mut cols = vec!["step".to_string()];
        cols.extend(self.names.iter().map(|n| format!("loss_{n}")));
        cols.extend(self.names.iter().map(|n| format!("w_{n}")));
        cols.push("gamma".into());
        cols.push("total".into());
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for r in &self.rows {
            let mut fields = vec![r.step.to_string()];
            fields.extend(r.losses.iter().map(|&v| fmt9(v)));
            fields.extend(r.weights.iter().map(|&v| fmt9(v)));
            fields.push(fmt9(r.gamma));
            fields.push(fmt9(r.total));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    /// Column `i` of the losses.
    pub fn loss_column(&self, i: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.losses[i]).collect()
    }

    pub fn weight_column(&self, i: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.weights[i]).collect()
    }
}

/// Loss columns read back from a CSV that has at least `step` and
/// `loss_<name>` columns; other columns are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTable {
    pub names: Vec<String>,
    pub steps: Vec<u64>,
    pub losses: Vec<Vec<f64>>,
}

pub fn parse_loss_table(text: &str) -> Result<LossTable, TraceError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(TraceError::Empty)?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"step") {
        return Err(TraceError::Header);
    }
    let loss_cols: Vec<(usize, String)> = cols
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.strip_prefix("loss_").map(|n| (i, n.to_string())))
        .collect();
    if loss_cols.is_empty() {
        return Err(TraceError::Header);
    }

    let mut table = LossTable {
        names: loss_cols.iter().map(|(_, n)| n.clone()).collect(),
        steps: Vec::new(),
        losses: Vec::new(),
    };
    for (idx, line) in lines {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(TraceError::FieldCount {
                line: line_no,
                expected: cols.len(),
                found: fields.len(),
            });
        }
        let step: u64 = fields[0].parse().map_err(|_| TraceError::Value {
            line: line_no,
            column: "step".into(),
            value: fields[0].into(),
        })?;
        if table.steps.last().is_some_and(|&prev| step <= prev) {
            return Err(TraceError::StepOrder {
                line: line_no,
                step,
            });
        }
        let row = loss_cols
            .iter()
            .map(|(i, name)| {
                fields[*i].parse::<f64>().map_err(|_| TraceError::Value {
                    line: line_no,
                    column: format!("loss_{name}"),
                    value: fields[*i].into(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        table.steps.push(step);
        table.losses.push(row);
    }
    Ok(table)
}

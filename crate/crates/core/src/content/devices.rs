use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Result, StoreError};

/// A typed device characteristic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttributeValue {
    Number { value: f64, unit: String },
    Bool(bool),
    Text(String),
}

impl AttributeValue {
    pub fn number(value: f64, unit: impl Into<String>) -> Self {
        AttributeValue::Number { value, unit: unit.into() }
    }

    fn as_number(&self) -> Option<(f64, &str)> {
        match self {
            AttributeValue::Number { value, unit } => Some((*value, unit)),
            _ => None,
        }
    }
}

/// Characteristics of a catalog device, keyed by attribute name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub item_id: String,
    pub attributes: BTreeMap<String, AttributeValue>,
}

impl DeviceSpec {
    pub(crate) fn validate(&self) -> Result<()> {
        for (name, value) in &self.attributes {
            if name.trim().is_empty() {
                return Err(StoreError::InvalidAttribute("empty attribute name".into()));
            }
            if let AttributeValue::Number { value, unit } = value {
                if unit.trim().is_empty() {
                    return Err(StoreError::InvalidAttribute(format!("{name}: numeric value without unit")));
                }
                if !value.is_finite() {
                    return Err(StoreError::InvalidAttribute(format!("{name}: non-finite value")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cell {
    Absent,
    Value(AttributeValue),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub attribute: String,
    pub numeric: bool,
    /// One cell per device column.
    pub cells: Vec<Cell>,
    /// Column indices holding the row maximum (numeric rows only).
    pub max: Vec<usize>,
    /// Column indices holding the row minimum (numeric rows only).
    pub min: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    /// Device item ids, one per column, in request order.
    pub devices: Vec<String>,
    pub titles: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

/// Lays out the comparison: numeric rows first, then the rest, each group
/// alphabetical. A row is numeric when every present value is a number.
/// Extremes are flagged only between at least two present values sharing a
/// unit and differing in magnitude.
pub(crate) fn build_table(specs: &[(String, String, &DeviceSpec)]) -> ComparisonTable {
    let mut names: Vec<&String> = specs.iter().flat_map(|(_, _, s)| s.attributes.keys()).collect();
    names.sort();
    names.dedup();

    let mut rows: Vec<ComparisonRow> = names
        .into_iter()
        .map(|name| {
            let cells: Vec<Cell> = specs
                .iter()
                .map(|(_, _, s)| match s.attributes.get(name) {
                    Some(v) => Cell::Value(v.clone()),
                    None => Cell::Absent,
                })
                .collect();
            let present: Vec<(usize, &AttributeValue)> = cells
                .iter()
                .enumerate()
                .filter_map(|(i, c)| match c {
                    Cell::Value(v) => Some((i, v)),
                    Cell::Absent => None,
                })
                .collect();
            let numbers: Vec<(usize, f64, &str)> = present
                .iter()
                .filter_map(|(i, v)| v.as_number().map(|(x, u)| (*i, x, u)))
                .collect();
            let numeric = !present.is_empty() && numbers.len() == present.len();
            let (mut max, mut min) = (Vec::new(), Vec::new());
            let same_unit = numbers.windows(2).all(|w| w[0].2 == w[1].2);
            if numeric && numbers.len() >= 2 && same_unit {
                let hi = numbers.iter().map(|n| n.1).fold(f64::NEG_INFINITY, f64::max);
                let lo = numbers.iter().map(|n| n.1).fold(f64::INFINITY, f64::min);
                if hi > lo {
                    max = numbers.iter().filter(|n| n.1 == hi).map(|n| n.0).collect();
                    min = numbers.iter().filter(|n| n.1 == lo).map(|n| n.0).collect();
                }
            }
            ComparisonRow { attribute: name.clone(), numeric, cells, max, min }
        })
        .collect();
    // stable: alphabetical order survives within each group
    rows.sort_by_key(|r| !r.numeric);

    ComparisonTable {
        devices: specs.iter().map(|(id, _, _)| id.clone()).collect(),
        titles: specs.iter().map(|(_, t, _)| t.clone()).collect(),
        rows,
    }
}

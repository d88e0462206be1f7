use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    Numerical,
    Categorical,
}

/// One timestamped observation. Timestamps are hours since ICU admission.
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub feature_id: String,
    pub kind: EventKind,
    /// Present for numerical events only.
    pub value: Option<f64>,
    pub timestamp: f64,
}

impl Event {
    pub fn numerical(feature_id: impl Into<String>, value: f64, timestamp: f64) -> Self {
        Event { feature_id: feature_id.into(), kind: EventKind::Numerical, value: Some(value), timestamp }
    }

    pub fn categorical(feature_id: impl Into<String>, timestamp: f64) -> Self {
        Event { feature_id: feature_id.into(), kind: EventKind::Categorical, value: None, timestamp }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timestamp.is_finite() && self.timestamp >= 0.0) {
            return Err(Error::Contract(format!("event {} has timestamp {}", self.feature_id, self.timestamp)));
        }
        match (self.kind, self.value) {
            (EventKind::Numerical, Some(v)) if v.is_finite() => Ok(()),
            (EventKind::Categorical, None) => Ok(()),
            _ => Err(Error::Contract(format!("event {} has kind {:?} with value {:?}", self.feature_id, self.kind, self.value))),
        }
    }
}

/// Study-design windows shared by every stay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StudyDesign {
    /// Feature history before the index time.
    pub t1_hours: f64,
    /// Blackout after the index time during which nothing is collected.
    pub t2_hours: f64,
}

impl Default for StudyDesign {
    fn default() -> Self {
        // 30 frames of 4 hours; 48 h culture turnaround.
        StudyDesign { t1_hours: 120.0, t2_hours: 48.0 }
    }
}

/// One ICU stay.
#[derive(Clone, Debug, PartialEq)]
pub struct CohortRecord {
    pub stay_id: String,
    pub admission_year: i32,
    pub events: Vec<Event>,
    /// Blood-culture collection time, hours since admission.
    pub index_time: f64,
    pub label: u8,
    pub t1_hours: f64,
    pub t2_hours: f64,
}

impl CohortRecord {
    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::Contract(format!("stay {} has label {}", self.stay_id, self.label)));
        }
        if !(self.index_time.is_finite() && self.index_time >= 0.0) {
            return Err(Error::Contract(format!("stay {} has index time {}", self.stay_id, self.index_time)));
        }
        self.events.iter().try_for_each(Event::validate)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NumericalFeature {
    pub id: String,
    pub min: f64,
    pub max: f64,
}

/// Column layout of the model input: `k` numerical features followed by `m`
/// categorical codes. Column meaning is positional, so order is part of the schema.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSchema {
    numerical: Vec<NumericalFeature>,
    categorical: Vec<String>,
    code_group_map: Option<BTreeMap<String, String>>,
    num_index: HashMap<String, usize>,
    cat_index: HashMap<String, usize>,
}

impl FeatureSchema {
    pub fn new(
        numerical: Vec<NumericalFeature>,
        categorical: Vec<String>,
        code_group_map: Option<BTreeMap<String, String>>,
    ) -> Result<Self> {
        let mut num_index = HashMap::new();
        for (i, f) in numerical.iter().enumerate() {
            if !(f.min < f.max) {
                return Err(Error::Schema(format!("feature {} has range ({}, {})", f.id, f.min, f.max)));
            }
            if num_index.insert(f.id.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate feature {}", f.id)));
            }
        }
        let mut cat_index = HashMap::new();
        for (i, c) in categorical.iter().enumerate() {
            if num_index.contains_key(c) || cat_index.insert(c.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate feature {c}")));
            }
        }
        if let Some(map) = &code_group_map {
            if let Some((raw, group)) = map.iter().find(|(_, g)| !cat_index.contains_key(*g)) {
                return Err(Error::Schema(format!("code map sends {raw} to unknown group {group}")));
            }
        }
        Ok(FeatureSchema { numerical, categorical, code_group_map, num_index, cat_index })
    }

    /// Number of numerical features, `k`.
    pub fn k(&self) -> usize {
        self.numerical.len()
    }

    /// Number of categorical codes, `m`.
    pub fn m(&self) -> usize {
        self.categorical.len()
    }

    /// Row width `l = k + m`.
    pub fn l(&self) -> usize {
        self.k() + self.m()
    }

    pub fn numerical(&self) -> &[NumericalFeature] {
        &self.numerical
    }

    pub fn categorical(&self) -> &[String] {
        &self.categorical
    }

    pub fn code_group_map(&self) -> Option<&BTreeMap<String, String>> {
        self.code_group_map.as_ref()
    }

    pub fn numerical_index(&self, id: &str) -> Option<usize> {
        self.num_index.get(id).copied()
    }

    pub fn categorical_index(&self, id: &str) -> Option<usize> {
        self.cat_index.get(id).copied()
    }

    /// Feature id of column `col` (numerical columns first).
    pub fn column_name(&self, col: usize) -> &str {
        if col < self.k() {
            &self.numerical[col].id
        } else {
            &self.categorical[col - self.k()]
        }
    }

    /// Maps a raw categorical code to its group; codes absent from the table map to themselves.
    pub fn group_code<'a>(&'a self, raw: &'a str) -> &'a str {
        self.code_group_map.as_ref().and_then(|m| m.get(raw)).map(String::as_str).unwrap_or(raw)
    }

    /// The schema restricted to the numerical features at `keep` (in that order).
    pub fn with_numerical_subset(&self, keep: &[usize]) -> Result<Self> {
        let numerical = keep.iter().map(|&i| self.numerical[i].clone()).collect();
        Self::new(numerical, self.categorical.clone(), self.code_group_map.clone())
    }
}

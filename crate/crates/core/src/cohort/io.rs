//! Text formats for cohorts, schemas, code-group tables and ground-truth sidecars.
//!
//! The cohort line grammar is documented in `docs/cohort-format.md`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::cohort::frames::TimeframeTensor;
use crate::cohort::record::{CohortRecord, Event, EventKind, FeatureSchema, NumericalFeature, StudyDesign};
use crate::error::{Error, Result};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_num<T: std::str::FromStr>(field: &str, what: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    field.trim().parse().map_err(|e| Error::Parse { line, message: format!("{what} `{field}`: {e}") })
}

/// Parses one cohort line without schema checks.
pub fn parse_cohort_line(text: &str, line: usize, design: StudyDesign) -> Result<CohortRecord> {
    let fields: Vec<&str> = text.split('|').collect();
    if fields.len() != 5 {
        return Err(Error::Parse { line, message: format!("expected 5 `|`-separated fields, found {}", fields.len()) });
    }
    let stay_id = fields[0].trim();
    if stay_id.is_empty() {
        return Err(Error::Parse { line, message: "empty stay_id".into() });
    }
    let admission_year = parse_num(fields[1], "admission_year", line)?;
    let index_time: f64 = parse_num(fields[2], "index_time", line)?;
    let label: u8 = parse_num(fields[3], "label", line)?;
    if label > 1 {
        return Err(Error::Parse { line, message: format!("label must be 0 or 1, got {label}") });
    }
    let mut events = Vec::new();
    for tuple in fields[4].split(';').map(str::trim).filter(|t| !t.is_empty()) {
        let parts: Vec<&str> = tuple.split(',').map(str::trim).collect();
        let [id, kind, value, ts] = parts[..] else {
            return Err(Error::Parse { line, message: format!("event `{tuple}` needs 4 comma-separated parts") });
        };
        if id.is_empty() {
            return Err(Error::Parse { line, message: format!("event `{tuple}` has an empty feature id") });
        }
        let timestamp = parse_num(ts, "timestamp", line)?;
        let event = match kind {
            "n" => Event::numerical(id, parse_num(value, "value", line)?, timestamp),
            "c" if value.is_empty() => Event::categorical(id, timestamp),
            "c" => return Err(Error::Parse { line, message: format!("categorical event `{tuple}` carries a value") }),
            other => return Err(Error::Parse { line, message: format!("unknown event kind `{other}`") }),
        };
        event.validate().map_err(|e| Error::Parse { line, message: e.to_string() })?;
        events.push(event);
    }
    let record = CohortRecord {
        stay_id: stay_id.to_string(),
        admission_year,
        events,
        index_time,
        label,
        t1_hours: design.t1_hours,
        t2_hours: design.t2_hours,
    };
    record.validate().map_err(|e| Error::Parse { line, message: e.to_string() })?;
    Ok(record)
}

/// Maps raw codes through the schema's group table and rejects unknown features.
pub fn conform_to_schema(mut record: CohortRecord, schema: &FeatureSchema) -> Result<CohortRecord> {
    for e in &mut record.events {
        match e.kind {
            EventKind::Numerical => {
                if schema.numerical_index(&e.feature_id).is_none() {
                    return Err(Error::Schema(format!("stay {}: unknown numerical feature {}", record.stay_id, e.feature_id)));
                }
            }
            EventKind::Categorical => {
                let group = schema.group_code(&e.feature_id).to_string();
                if schema.categorical_index(&group).is_none() {
                    return Err(Error::Schema(format!("stay {}: unknown code {}", record.stay_id, e.feature_id)));
                }
                e.feature_id = group;
            }
        }
    }
    Ok(record)
}

pub fn parse_cohort(text: &str, schema: &FeatureSchema, design: StudyDesign) -> Result<Vec<CohortRecord>> {
    content_lines(text).map(|(line, l)| conform_to_schema(parse_cohort_line(l, line, design)?, schema)).collect()
}

/// Reads a cohort file, one stay per line.
pub fn load_cohort(path: &Path, schema: &FeatureSchema, design: StudyDesign) -> Result<Vec<CohortRecord>> {
    parse_cohort(&read(path)?, schema, design)
}

pub fn format_cohort_line(r: &CohortRecord) -> String {
    let mut s = format!("{}|{}|{}|{}|", r.stay_id, r.admission_year, r.index_time, r.label);
    for (i, e) in r.events.iter().enumerate() {
        if i > 0 {
            s.push(';');
        }
        match e.kind {
            EventKind::Numerical => write!(s, "{},n,{},{}", e.feature_id, e.value.unwrap_or(f64::NAN), e.timestamp),
            EventKind::Categorical => write!(s, "{},c,,{}", e.feature_id, e.timestamp),
        }
        .expect("writing to a String");
    }
    s
}

pub fn save_cohort(path: &Path, records: &[CohortRecord]) -> Result<()> {
    let mut text = String::from("# stay_id|admission_year|index_time|label|feature_id,kind,value,timestamp;...\n");
    for r in records {
        text.push_str(&format_cohort_line(r));
        text.push('\n');
    }
    write(path, &text)
}

/// Parses a schema table. `base_dir` resolves a relative `code_group_map` path.
pub fn parse_schema(text: &str, base_dir: Option<&Path>) -> Result<FeatureSchema> {
    let mut numerical = Vec::new();
    let mut categorical = Vec::new();
    let mut map = None;
    for (line, l) in content_lines(text) {
        let f: Vec<&str> = l.split_whitespace().collect();
        match f[..] {
            ["numerical", id, min, max] => numerical.push(NumericalFeature {
                id: id.to_string(),
                min: parse_num(min, "min", line)?,
                max: parse_num(max, "max", line)?,
            }),
            ["categorical", code] => categorical.push(code.to_string()),
            ["code_group_map", path] => {
                let p = PathBuf::from(path);
                let p = match base_dir {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p,
                };
                map = Some(load_code_map(&p)?);
            }
            _ => return Err(Error::Parse { line, message: format!("unrecognized schema entry `{l}`") }),
        }
    }
    FeatureSchema::new(numerical, categorical, map)
}

pub fn load_schema(path: &Path) -> Result<FeatureSchema> {
    parse_schema(&read(path)?, path.parent())
}

/// Writes the schema; when it has a code map, the table goes to `code_map_file`
/// next to the schema and is referenced by relative path.
pub fn save_schema(path: &Path, schema: &FeatureSchema, code_map_file: &str) -> Result<()> {
    let mut text = String::from("# numerical <id> <min> <max> | categorical <code> | code_group_map <path>\n");
    for f in schema.numerical() {
        text.push_str(&format!("numerical {} {} {}\n", f.id, f.min, f.max));
    }
    for c in schema.categorical() {
        text.push_str(&format!("categorical {c}\n"));
    }
    if let Some(map) = schema.code_group_map() {
        let map_path = path.parent().unwrap_or(Path::new(".")).join(code_map_file);
        save_code_map(&map_path, map)?;
        text.push_str(&format!("code_group_map {code_map_file}\n"));
    }
    write(path, &text)
}

/// `raw_code group` per line.
pub fn load_code_map(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = read(path)?;
    let mut map = BTreeMap::new();
    for (line, l) in content_lines(&text) {
        let f: Vec<&str> = l.split_whitespace().collect();
        let [raw, group] = f[..] else {
            return Err(Error::Parse { line, message: format!("expected `raw_code group`, got `{l}`") });
        };
        map.insert(raw.to_string(), group.to_string());
    }
    Ok(map)
}

pub fn save_code_map(path: &Path, map: &BTreeMap<String, String>) -> Result<()> {
    let mut text = String::from("# raw_code group\n");
    for (raw, group) in map {
        text.push_str(&format!("{raw} {group}\n"));
    }
    write(path, &text)
}

/// One row of the synthetic ground-truth sidecar.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub stay_id: String,
    pub bayes_score: f64,
    pub label: u8,
}

/// Sidecar: a `# signal_features: a,b` header, then `stay_id<TAB>bayes_score<TAB>label`.
pub fn save_ground_truth(path: &Path, rows: &[GroundTruth], signal_features: &[String]) -> Result<()> {
    let mut text = format!("# signal_features: {}\n# stay_id\tbayes_score\tlabel\n", signal_features.join(","));
    for r in rows {
        text.push_str(&format!("{}\t{}\t{}\n", r.stay_id, r.bayes_score, r.label));
    }
    write(path, &text)
}

pub fn load_ground_truth(path: &Path) -> Result<(Vec<GroundTruth>, Vec<String>)> {
    let text = read(path)?;
    let signal = text
        .lines()
        .find_map(|l| l.strip_prefix("# signal_features:"))
        .map(|s| s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect())
        .unwrap_or_default();
    let mut rows = Vec::new();
    for (line, l) in content_lines(&text) {
        let f: Vec<&str> = l.split('\t').collect();
        let [id, score, label] = f[..] else {
            return Err(Error::Parse { line, message: format!("expected 3 tab-separated fields, got `{l}`") });
        };
        rows.push(GroundTruth {
            stay_id: id.to_string(),
            bayes_score: parse_num(score, "bayes_score", line)?,
            label: parse_num(label, "label", line)?,
        });
    }
    Ok((rows, signal))
}

fn bits(v: &[bool]) -> String {
    v.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

fn parse_bits(s: &str, n: usize, what: &str, line: usize) -> Result<Vec<bool>> {
    let out: Vec<bool> = s.chars().filter_map(|c| match c {
        '0' => Some(false),
        '1' => Some(true),
        _ => None,
    }).collect();
    if out.len() != n || s.len() != n {
        return Err(Error::Parse { line, message: format!("{what} must be {n} characters of 0/1, got `{s}`") });
    }
    Ok(out)
}

/// Tensor cache: a `# k m p_max` header, then per stay
/// `stay_id<TAB>label<TAB>year<TAB>pad_bits<TAB>missing_bits<TAB>v,v,...`.
/// Values are written in shortest round-trip form, so loading is lossless.
pub fn save_tensors(path: &Path, tensors: &[TimeframeTensor]) -> Result<()> {
    let (k, m, p) = tensors.first().map_or((0, 0, 0), |t| (t.k, t.m, t.p_max()));
    let mut text = format!("# {k} {m} {p}\n");
    for t in tensors {
        if (t.k, t.m, t.p_max()) != (k, m, p) {
            return Err(Error::Shape(format!("stay {} does not match the cache shape", t.stay_id)));
        }
        let values: Vec<String> = t.values.iter().map(f32::to_string).collect();
        let _ = writeln!(
            text,
            "{}\t{}\t{}\t{}\t{}\t{}",
            t.stay_id,
            t.label,
            t.admission_year,
            bits(&t.pad_mask),
            bits(&t.missing),
            values.join(",")
        );
    }
    write(path, &text)
}

pub fn load_tensors(path: &Path) -> Result<Vec<TimeframeTensor>> {
    let text = read(path)?;
    let header = text.lines().next().and_then(|l| l.strip_prefix('#')).unwrap_or("");
    let dims: Vec<usize> = header.split_whitespace().filter_map(|x| x.parse().ok()).collect();
    let [k, m, p] = dims[..] else {
        return Err(Error::Parse { line: 1, message: "missing `# k m p_max` header".into() });
    };
    let mut out = Vec::new();
    for (line, l) in content_lines(&text) {
        let f: Vec<&str> = l.split('\t').collect();
        let [id, label, year, pad, missing, values] = f[..] else {
            return Err(Error::Parse { line, message: "expected 6 tab-separated fields".into() });
        };
        let values: Vec<f32> = values.split(',').map(|v| parse_num(v, "value", line)).collect::<Result<_>>()?;
        if values.len() != p * (k + m) {
            return Err(Error::Parse { line, message: format!("expected {} values, got {}", p * (k + m), values.len()) });
        }
        out.push(TimeframeTensor {
            stay_id: id.to_string(),
            label: parse_num(label, "label", line)?,
            admission_year: parse_num(year, "admission_year", line)?,
            k,
            m,
            values,
            pad_mask: parse_bits(pad, p, "pad mask", line)?,
            missing: parse_bits(missing, k, "missing mask", line)?,
        });
    }
    Ok(out)
}

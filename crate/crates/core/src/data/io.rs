//! Whitespace-separated ASCII point files.

use std::fmt::Write as _;
use std::path::Path;

use super::PointCloud;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Column {
    X,
    Y,
    Z,
    Label,
    /// A predicted label, read only by [`read_predictions`].
    Prediction,
    Attr(String),
    Ignore,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnSchema {
    pub columns: Vec<Column>,
}

const HEADER_PREFIX: &str = "#cols:";

impl ColumnSchema {
    /// Parses column names such as `x y z intensity label`. `label` and
    /// `true_label` name the label column, `pred_label` a prediction, `_`
    /// skips a column; any other name is an attribute.
    pub fn parse(spec: &str) -> Result<Self> {
        let columns: Vec<Column> = spec
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| match t {
                "x" => Column::X,
                "y" => Column::Y,
                "z" => Column::Z,
                "label" | "true_label" => Column::Label,
                "pred_label" | "pred" => Column::Prediction,
                "_" => Column::Ignore,
                other => Column::Attr(other.to_string()),
            })
            .collect();
        let schema = Self { columns };
        schema.validate()?;
        Ok(schema)
    }

    pub fn xyz() -> Self {
        Self {
            columns: vec![Column::X, Column::Y, Column::Z],
        }
    }

    pub fn xyz_label() -> Self {
        Self {
            columns: vec![Column::X, Column::Y, Column::Z, Column::Label],
        }
    }

    pub fn predictions() -> Self {
        Self {
            columns: vec![Column::X, Column::Y, Column::Z, Column::Label, Column::Prediction],
        }
    }

    fn validate(&self) -> Result<()> {
        let count = |c: &Column| self.columns.iter().filter(|x| *x == c).count();
        for c in [Column::X, Column::Y, Column::Z] {
            if count(&c) != 1 {
                return Err(Error::invalid(format!("schema needs exactly one {c:?} column")));
            }
        }
        if count(&Column::Label) > 1 || count(&Column::Prediction) > 1 {
            return Err(Error::invalid("schema has more than one label column"));
        }
        Ok(())
    }

    pub fn header(&self) -> String {
        let names: Vec<&str> = self
            .columns
            .iter()
            .map(|c| match c {
                Column::X => "x",
                Column::Y => "y",
                Column::Z => "z",
                Column::Label => "label",
                Column::Prediction => "pred_label",
                Column::Attr(n) => n,
                Column::Ignore => "_",
            })
            .collect();
        format!("{HEADER_PREFIX} {}", names.join(" "))
    }

    fn attr_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter_map(|c| match c {
                Column::Attr(n) => Some(n.clone()),
                _ => None,
            })
            .collect()
    }
}

struct Parsed {
    cloud: PointCloud,
    predictions: Vec<Option<usize>>,
}

fn parse_label(tok: &str, line: usize, classes: Option<usize>) -> Result<Option<usize>> {
    let v: i64 = tok.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid label '{tok}'"),
    })?;
    match v {
        -1 => Ok(None),
        v if v < 0 => Err(Error::Parse {
            line,
            message: format!("negative label {v}"),
        }),
        v => {
            let v = v as usize;
            if classes.is_some_and(|c| v >= c) {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown label id {v} (expected < {})", classes.unwrap()),
                });
            }
            Ok(Some(v))
        }
    }
}

fn parse_text(text: &str, schema: Option<&ColumnSchema>, classes: Option<usize>) -> Result<Parsed> {
    let mut schema = schema.cloned();
    let mut xyz = Vec::new();
    let mut attrs = Vec::new();
    let mut labels: Vec<Option<usize>> = Vec::new();
    let mut predictions = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if let Some(rest) = trimmed.strip_prefix(HEADER_PREFIX) {
            if schema.is_none() {
                schema = Some(ColumnSchema::parse(rest)?);
            }
            continue;
        }
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        let schema = match &schema {
            Some(s) => s,
            None => {
                schema = Some(match toks.len() {
                    3 => ColumnSchema::xyz(),
                    4 => ColumnSchema::xyz_label(),
                    n => {
                        return Err(Error::Parse {
                            line,
                            message: format!("{n} columns without a '{HEADER_PREFIX}' header or schema"),
                        })
                    }
                });
                schema.as_ref().unwrap()
            }
        };
        if toks.len() != schema.columns.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} columns, found {}", schema.columns.len(), toks.len()),
            });
        }
        let mut p = [0.0; 3];
        let mut label = None;
        for (col, tok) in schema.columns.iter().zip(&toks) {
            let num = || -> Result<f64> {
                let v: f64 = tok.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("invalid number '{tok}'"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        message: format!("non-finite value '{tok}'"),
                    });
                }
                Ok(v)
            };
            match col {
                Column::X => p[0] = num()?,
                Column::Y => p[1] = num()?,
                Column::Z => p[2] = num()?,
                Column::Attr(_) => attrs.push(num()?),
                Column::Label => label = parse_label(tok, line, classes)?,
                Column::Prediction => predictions.push(parse_label(tok, line, classes)?),
                Column::Ignore => {}
            }
        }
        if schema.columns.contains(&Column::Label) {
            if !labels.is_empty() && labels[0].is_some() != label.is_some() {
                return Err(Error::Parse {
                    line,
                    message: "mix of labeled (>= 0) and unlabeled (-1) points".into(),
                });
            }
            labels.push(label);
        }
        xyz.push(p);
    }
    let schema = schema.unwrap_or_else(ColumnSchema::xyz);
    if xyz.is_empty() {
        return Err(Error::invalid("no points in input"));
    }
    let labels = if labels.first().is_some_and(Option::is_some) {
        Some(labels.into_iter().map(Option::unwrap).collect())
    } else {
        None
    };
    let cloud = PointCloud::new(xyz, labels)?.with_attrs(schema.attr_names(), attrs)?;
    Ok(Parsed { cloud, predictions })
}

/// Reads a point file. An explicit `schema` takes precedence over a
/// `#cols:` header; without either, 3 columns mean `x y z` and 4 mean
/// `x y z label`. Label `-1` marks an unlabeled point; labels at or above
/// `classes` are rejected.
pub fn parse_points(path: impl AsRef<Path>, schema: Option<&ColumnSchema>, classes: Option<usize>) -> Result<PointCloud> {
    parse_points_str(&std::fs::read_to_string(path)?, schema, classes)
}

pub fn parse_points_str(text: &str, schema: Option<&ColumnSchema>, classes: Option<usize>) -> Result<PointCloud> {
    Ok(parse_text(text, schema, classes)?.cloud)
}

/// Writes a point file with a `#cols:` header.
pub fn write_points(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, points_to_string(cloud))?;
    Ok(())
}

pub fn points_to_string(cloud: &PointCloud) -> String {
    let mut columns = vec![Column::X, Column::Y, Column::Z];
    columns.extend(cloud.attr_names.iter().cloned().map(Column::Attr));
    if cloud.labels.is_some() {
        columns.push(Column::Label);
    }
    let mut out = ColumnSchema { columns }.header();
    out.push('\n');
    for (i, p) in cloud.xyz.iter().enumerate() {
        write!(out, "{} {} {}", p[0], p[1], p[2]).unwrap();
        for a in cloud.attr_row(i) {
            write!(out, " {a}").unwrap();
        }
        if let Some(l) = &cloud.labels {
            write!(out, " {}", l[i]).unwrap();
        }
        out.push('\n');
    }
    out
}

/// `x y z true_label pred_label` per point, `-1` for a missing true label.
pub fn write_predictions(cloud: &PointCloud, pred: &[usize], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, predictions_to_string(cloud, pred)?)?;
    Ok(())
}

pub fn predictions_to_string(cloud: &PointCloud, pred: &[usize]) -> Result<String> {
    if pred.len() != cloud.len() {
        return Err(Error::shape(
            "write_predictions",
            format!("{} predictions for {} points", pred.len(), cloud.len()),
        ));
    }
    let mut out = String::new();
    for (i, (p, y)) in cloud.xyz.iter().zip(pred).enumerate() {
        let truth = cloud.labels.as_ref().map_or(-1, |l| l[i] as i64);
        writeln!(out, "{} {} {} {truth} {y}", p[0], p[1], p[2]).unwrap();
    }
    Ok(out)
}

/// Reads a predictions file back into a cloud and its predicted labels.
pub fn read_predictions(path: impl AsRef<Path>) -> Result<(PointCloud, Vec<usize>)> {
    let parsed = parse_text(&std::fs::read_to_string(path)?, Some(&ColumnSchema::predictions()), None)?;
    let pred = parsed
        .predictions
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            p.ok_or(Error::Parse {
                line: i + 1,
                message: "missing predicted label".into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((parsed.cloud, pred))
}

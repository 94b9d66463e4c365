use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points in meters with optional per-point attributes and class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub xyz: Vec<[f64; 3]>,
    /// Attribute column names, e.g. `intensity`, `return`.
    pub attr_names: Vec<String>,
    /// Row-major `[N × attr_names.len()]`.
    pub attrs: Vec<f64>,
    pub labels: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(xyz: Vec<[f64; 3]>, labels: Option<Vec<usize>>) -> Result<Self> {
        let cloud = Self {
            xyz,
            attr_names: Vec::new(),
            attrs: Vec::new(),
            labels,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn with_attrs(mut self, names: Vec<String>, attrs: Vec<f64>) -> Result<Self> {
        self.attr_names = names;
        self.attrs = attrs;
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.xyz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xyz.is_empty()
    }

    pub fn attr_width(&self) -> usize {
        self.attr_names.len()
    }

    pub fn attr_row(&self, i: usize) -> &[f64] {
        let w = self.attr_width();
        &self.attrs[i * w..(i + 1) * w]
    }

    pub fn validate(&self) -> Result<()> {
        if self.xyz.is_empty() {
            return Err(Error::invalid("point cloud is empty"));
        }
        if let Some(i) = self.xyz.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("coordinates of point {i}")));
        }
        if self.attrs.len() != self.len() * self.attr_width() {
            return Err(Error::shape("point cloud", "attribute array size"));
        }
        if let Some(l) = &self.labels {
            if l.len() != self.len() {
                return Err(Error::shape("point cloud", format!("{} labels for {} points", l.len(), self.len())));
            }
        }
        Ok(())
    }

    pub fn check_labels(&self, classes: usize) -> Result<()> {
        if let Some(&bad) = self.labels.iter().flatten().find(|&&l| l >= classes) {
            return Err(Error::Index {
                op: "labels",
                index: bad,
                len: classes,
            });
        }
        Ok(())
    }

    /// The cloud restricted to `indices`, in that order (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let w = self.attr_width();
        PointCloud {
            xyz: indices.iter().map(|&i| self.xyz[i]).collect(),
            attr_names: self.attr_names.clone(),
            attrs: indices.iter().flat_map(|&i| self.attrs[i * w..(i + 1) * w].iter().copied()).collect(),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Label histogram over `classes` bins.
    pub fn histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        for &l in self.labels.iter().flatten() {
            if l < classes {
                h[l] += 1;
            }
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassMap {
    names: Vec<String>,
}

impl ClassMap {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::invalid("a class map needs at least 2 classes"));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::invalid(format!("duplicate class name '{n}'")));
            }
        }
        Ok(Self { names })
    }

    /// `class0 .. class{C-1}`.
    pub fn numbered(count: usize) -> Result<Self> {
        Self::new((0..count).map(|i| format!("class{i}")).collect())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl std::str::FromStr for ClassMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::new(s.split(',').map(|n| n.trim().to_string()).collect())
    }
}

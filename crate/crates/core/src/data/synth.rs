//! Labeled synthetic outdoor scenes built from simple primitives.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ClassMap, PointCloud};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primitive {
    Ground,
    Building,
    Pole,
    Wire,
    Vegetation,
}

impl Primitive {
    pub const ALL: [Primitive; 5] = [
        Primitive::Ground,
        Primitive::Building,
        Primitive::Pole,
        Primitive::Wire,
        Primitive::Vegetation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Ground => "ground",
            Primitive::Building => "building",
            Primitive::Pole => "pole",
            Primitive::Wire => "wire",
            Primitive::Vegetation => "vegetation",
        }
    }

    /// Share of the point budget before renormalising over the requested mix.
    fn share(self) -> f64 {
        match self {
            Primitive::Ground => 0.40,
            Primitive::Building => 0.25,
            Primitive::Pole => 0.08,
            Primitive::Wire => 0.07,
            Primitive::Vegetation => 0.20,
        }
    }
}

impl std::str::FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Primitive::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown primitive '{s}'")))
    }
}

/// Scene recipe. Class ids follow the order of `classes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: Vec<Primitive>,
    /// Side length of the square scene in meters.
    pub extent: f64,
    /// Points per square meter.
    pub density: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// All five primitives on a 30 m square with about `points` points.
    pub fn with_points(points: usize, seed: u64) -> Self {
        let extent = 30.0;
        Self {
            classes: Primitive::ALL.to_vec(),
            extent,
            density: points as f64 / (extent * extent),
            seed,
        }
    }

    pub fn point_count(&self) -> usize {
        (self.density * self.extent * self.extent).round() as usize
    }

    pub fn class_map(&self) -> Result<ClassMap> {
        ClassMap::new(self.classes.iter().map(|c| c.name().to_string()).collect())
    }
}

struct Footprint {
    center: [f64; 2],
    half: [f64; 2],
}

impl Footprint {
    fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.center[0]).abs() <= self.half[0] && (y - self.center[1]).abs() <= self.half[1]
    }
}

pub fn synth_scene(spec: &SynthSpec) -> Result<PointCloud> {
    if !(spec.extent > 0.0 && spec.extent.is_finite()) {
        return Err(Error::invalid("scene extent must be positive"));
    }
    if spec.classes.is_empty() {
        return Err(Error::invalid("scene needs at least one primitive"));
    }
    for (i, c) in spec.classes.iter().enumerate() {
        if spec.classes[..i].contains(c) {
            return Err(Error::invalid(format!("primitive '{}' listed twice", c.name())));
        }
    }
    let total = spec.point_count();
    if total == 0 {
        return Err(Error::invalid("density and extent give zero points"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let e = spec.extent;
    let noise = Normal::new(0.0, 0.03).unwrap();

    let share_sum: f64 = spec.classes.iter().map(|c| c.share()).sum();
    let mut budget: Vec<usize> = spec
        .classes
        .iter()
        .map(|c| (total as f64 * c.share() / share_sum).floor() as usize)
        .collect();
    budget[0] += total - budget.iter().sum::<usize>();

    let buildings: Vec<Footprint> = if spec.classes.contains(&Primitive::Building) {
        (0..2)
            .map(|b| Footprint {
                center: [e * (0.25 + 0.5 * b as f64), e * rng.random_range(0.3..0.7)],
                half: [e * rng.random_range(0.08..0.14), e * rng.random_range(0.08..0.14)],
            })
            .collect()
    } else {
        Vec::new()
    };
    let heights: Vec<f64> = buildings.iter().map(|_| rng.random_range(6.0..12.0)).collect();
    let poles: Vec<[f64; 2]> = (0..3)
        .map(|p| [e * (0.1 + 0.4 * p as f64), e * rng.random_range(0.05..0.15)])
        .collect();
    let pole_height = 8.0;

    let mut xyz = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for (class_id, (&prim, &count)) in spec.classes.iter().zip(&budget).enumerate() {
        for _ in 0..count {
            let p = match prim {
                Primitive::Ground => loop {
                    let (x, y) = (rng.random_range(0.0..e), rng.random_range(0.0..e));
                    if !buildings.iter().any(|b| b.contains(x, y)) {
                        let z = 0.2 * (x / e * TAU).sin() * (y / e * TAU).cos() + noise.sample(&mut rng);
                        break [x, y, z];
                    }
                },
                Primitive::Building => {
                    let b = rng.random_range(0..buildings.len());
                    let (f, h) = (&buildings[b], heights[b]);
                    if rng.random_bool(0.7) {
                        let x = f.center[0] + rng.random_range(-f.half[0]..f.half[0]);
                        let y = f.center[1] + rng.random_range(-f.half[1]..f.half[1]);
                        [x, y, h + noise.sample(&mut rng)]
                    } else {
                        let t = rng.random_range(-1.0..1.0);
                        let (x, y) = match rng.random_range(0..4) {
                            0 => (f.center[0] - f.half[0], f.center[1] + t * f.half[1]),
                            1 => (f.center[0] + f.half[0], f.center[1] + t * f.half[1]),
                            2 => (f.center[0] + t * f.half[0], f.center[1] - f.half[1]),
                            _ => (f.center[0] + t * f.half[0], f.center[1] + f.half[1]),
                        };
                        [x + noise.sample(&mut rng), y + noise.sample(&mut rng), rng.random_range(0.0..h)]
                    }
                }
                Primitive::Pole => {
                    let c = poles[rng.random_range(0..poles.len())];
                    let a = rng.random_range(0.0..TAU);
                    let r = 0.15;
                    [c[0] + r * a.cos(), c[1] + r * a.sin(), rng.random_range(0.0..pole_height)]
                }
                Primitive::Wire => {
                    let s = rng.random_range(0..poles.len() - 1);
                    let (a, b) = (poles[s], poles[s + 1]);
                    let t: f64 = rng.random_range(0.0..1.0);
                    let sag = 1.0 * 4.0 * t * (1.0 - t);
                    [
                        a[0] + t * (b[0] - a[0]),
                        a[1] + t * (b[1] - a[1]) + noise.sample(&mut rng),
                        pole_height - 0.3 - sag + noise.sample(&mut rng),
                    ]
                }
                Primitive::Vegetation => {
                    let k = rng.random_range(0..4u32);
                    let cx = e * (0.15 + 0.23 * k as f64);
                    let cy = e * 0.88;
                    let spread = Normal::new(0.0, 1.3).unwrap();
                    [
                        cx + spread.sample(&mut rng),
                        cy + spread.sample(&mut rng),
                        (3.5 + spread.sample(&mut rng)).max(0.6),
                    ]
                }
            };
            xyz.push(p);
            labels.push(class_id);
        }
    }
    PointCloud::new(xyz, Some(labels))
}

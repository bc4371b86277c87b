//! Three-arm spiral data and its CSV persistence.
//!
//! Class `j` follows the arm `theta = 4 j + 4 r + eps`, with the radius `r`
//! running linearly from 0 to 1 along the arm and `eps ~ N(0, noise_sd^2)`.
//! Points are `(r sin theta, r cos theta)`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Angular offset between consecutive arms, and angular sweep along one arm.
pub const ARM_TURN: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub x: [f64; 2],
    pub y: usize,
}

/// An immutable labeled point set with a fixed class count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<LabeledPoint>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(points: Vec<LabeledPoint>, num_classes: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if num_classes == 0 {
            return Err(Error::invalid("num_classes", "must be positive"));
        }
        for (i, p) in points.iter().enumerate() {
            if p.y >= num_classes {
                return Err(Error::Parse {
                    location: format!("point {i}"),
                    reason: format!("label {} >= C={num_classes}", p.y),
                });
            }
            if !p.x.iter().all(|v| v.is_finite()) {
                return Err(Error::Parse {
                    location: format!("point {i}"),
                    reason: "non-finite coordinate".into(),
                });
            }
        }
        Ok(Self {
            points,
            num_classes,
        })
    }

    pub fn points(&self) -> &[LabeledPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        2
    }

    pub fn labels(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.y).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for p in &self.points {
            counts[p.y] += 1;
        }
        counts
    }

    /// Writes the dataset as `x0,x1,label` rows under a `C=<n>` header.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = format!("x0,x1,label,C={}\n", self.num_classes);
        for p in &self.points {
            // `{:e}` with Rust's shortest round-trip formatting is exact for f64.
            writeln!(out, "{:e},{:e},{}", p.x[0], p.x[1], p.y).unwrap();
        }
        out
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text)
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::EmptyDataset)?;
        let num_classes = parse_header(header)?;

        let mut points = Vec::new();
        for (lineno, line) in lines {
            let row = lineno + 1;
            let bad = |reason: String| Error::Parse {
                location: format!("row {row}"),
                reason,
            };
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(bad(format!("expected 3 columns, found {}", cols.len())));
            }
            let mut x = [0.0; 2];
            for (slot, col) in x.iter_mut().zip(&cols[..2]) {
                *slot = col
                    .parse::<f64>()
                    .map_err(|_| bad(format!("non-numeric coordinate `{col}`")))?;
                if !slot.is_finite() {
                    return Err(bad(format!("non-finite coordinate `{col}`")));
                }
            }
            let y: usize = cols[2]
                .parse()
                .map_err(|_| bad(format!("invalid label `{}`", cols[2])))?;
            if y >= num_classes {
                return Err(bad(format!("label {y} >= C={num_classes}")));
            }
            points.push(LabeledPoint { x, y });
        }
        if points.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            points,
            num_classes,
        })
    }
}

fn parse_header(header: &str) -> Result<usize> {
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let bad = |reason: &str| Error::Parse {
        location: "header".into(),
        reason: reason.into(),
    };
    if cols.len() != 4 || cols[..3] != ["x0", "x1", "label"] {
        return Err(bad("expected `x0,x1,label,C=<num_classes>`"));
    }
    let c = cols[3]
        .strip_prefix("C=")
        .and_then(|v| v.parse::<usize>().ok())
        .ok_or_else(|| bad("malformed class count"))?;
    if c == 0 {
        return Err(bad("class count must be positive"));
    }
    Ok(c)
}

/// Generates `n_per_class` points on each of `num_classes` spiral arms.
pub fn generate_spiral(
    n_per_class: usize,
    num_classes: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::invalid("n_per_class", "must be >= 1"));
    }
    if num_classes < 2 {
        return Err(Error::invalid("num_classes", "must be >= 2"));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::invalid("noise_sd", "must be finite and >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd).expect("validated sd");
    let mut points = Vec::with_capacity(n_per_class * num_classes);
    for class in 0..num_classes {
        for i in 0..n_per_class {
            let r = if n_per_class == 1 {
                0.0
            } else {
                i as f64 / (n_per_class - 1) as f64
            };
            let eps = if noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let theta = ARM_TURN * class as f64 + ARM_TURN * r + eps;
            points.push(LabeledPoint {
                x: [r * theta.sin(), r * theta.cos()],
                y: class,
            });
        }
    }
    Dataset::new(points, num_classes)
}

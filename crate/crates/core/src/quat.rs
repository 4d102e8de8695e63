//! Quaternion scalars and component-planar quaternion vectors.
//!
//! Every matrix acting on graph signals here is real, so a quaternion vector
//! is stored as four real planes (`w`, `x`, `y`, `z`) and a real matrix acts
//! on each plane independently.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A quaternion `w + x i + y j + z k`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const ZERO: Quaternion = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    pub const ONE: Quaternion = Quaternion::new(1.0, 0.0, 0.0, 0.0);
    pub const I: Quaternion = Quaternion::new(0.0, 1.0, 0.0, 0.0);
    pub const J: Quaternion = Quaternion::new(0.0, 0.0, 1.0, 0.0);
    pub const K: Quaternion = Quaternion::new(0.0, 0.0, 0.0, 1.0);

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    pub const fn from_real(w: f64) -> Self {
        Quaternion::new(w, 0.0, 0.0, 0.0)
    }

    /// Hamilton product `self * rhs`.
    pub fn qmul(self, rhs: Quaternion) -> Quaternion {
        let (a0, a1, a2, a3) = (self.w, self.x, self.y, self.z);
        let (b0, b1, b2, b3) = (rhs.w, rhs.x, rhs.y, rhs.z);
        // Pairwise grouping keeps conj(a b) == conj(b) conj(a) bit-exact.
        Quaternion {
            w: (a0 * b0 - a1 * b1) - (a2 * b2 + a3 * b3),
            x: (a0 * b1 + a1 * b0) + (a2 * b3 - a3 * b2),
            y: (a0 * b2 + a2 * b0) + (a3 * b1 - a1 * b3),
            z: (a0 * b3 + a3 * b0) + (a1 * b2 - a2 * b1),
        }
    }

    pub fn conj(self) -> Quaternion {
        Quaternion::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn norm_sqr(self) -> f64 {
        self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn norm(self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(self, s: f64) -> Quaternion {
        Quaternion::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }
}

impl From<[f64; 4]> for Quaternion {
    fn from(c: [f64; 4]) -> Self {
        Quaternion::new(c[0], c[1], c[2], c[3])
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;
    fn mul(self, rhs: Quaternion) -> Quaternion {
        self.qmul(rhs)
    }
}

impl Add for Quaternion {
    type Output = Quaternion;
    fn add(self, rhs: Quaternion) -> Quaternion {
        Quaternion::new(self.w + rhs.w, self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Quaternion {
    type Output = Quaternion;
    fn sub(self, rhs: Quaternion) -> Quaternion {
        Quaternion::new(self.w - rhs.w, self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;
    fn neg(self) -> Quaternion {
        Quaternion::new(-self.w, -self.x, -self.y, -self.z)
    }
}

impl fmt::Display for Quaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} + {}i + {}j + {}k", self.w, self.x, self.y, self.z)
    }
}

/// A quaternion-valued vector over `n` vertices, stored as four real planes.
#[derive(Debug, Clone, PartialEq)]
pub struct QSignal {
    planes: [DVector<f64>; 4],
}

impl QSignal {
    pub fn zeros(n: usize) -> Self {
        QSignal {
            planes: std::array::from_fn(|_| DVector::zeros(n)),
        }
    }

    pub fn from_planes(planes: [DVector<f64>; 4]) -> Result<Self> {
        let n = planes[0].len();
        if n == 0 {
            return Err(Error::InvalidParameter("signal must have at least one entry".into()));
        }
        for p in &planes[1..] {
            if p.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "QSignal planes",
                    expected: n,
                    got: p.len(),
                });
            }
        }
        Ok(QSignal { planes })
    }

    pub fn from_entries(entries: &[Quaternion]) -> Result<Self> {
        let planes = std::array::from_fn(|c| {
            DVector::from_iterator(entries.len(), entries.iter().map(|q| q.to_array()[c]))
        });
        QSignal::from_planes(planes)
    }

    /// Signal whose scalar plane is `w` and imaginary planes are zero.
    pub fn from_real(w: DVector<f64>) -> Self {
        let n = w.len();
        QSignal {
            planes: [w, DVector::zeros(n), DVector::zeros(n), DVector::zeros(n)],
        }
    }

    pub fn len(&self) -> usize {
        self.planes[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self, c: usize) -> &DVector<f64> {
        &self.planes[c]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut DVector<f64> {
        &mut self.planes[c]
    }

    pub fn planes(&self) -> &[DVector<f64>; 4] {
        &self.planes
    }

    pub fn into_planes(self) -> [DVector<f64>; 4] {
        self.planes
    }

    pub fn entry(&self, v: usize) -> Quaternion {
        Quaternion::new(
            self.planes[0][v],
            self.planes[1][v],
            self.planes[2][v],
            self.planes[3][v],
        )
    }

    pub fn set_entry(&mut self, v: usize, q: Quaternion) {
        for (c, val) in q.to_array().into_iter().enumerate() {
            self.planes[c][v] = val;
        }
    }

    pub fn entries(&self) -> Vec<Quaternion> {
        (0..self.len()).map(|v| self.entry(v)).collect()
    }

    /// The scalar plane promoted to a quaternion signal.
    pub fn real_part(&self) -> QSignal {
        QSignal::from_real(self.planes[0].clone())
    }

    /// The `i`, `j`, `k` planes.
    pub fn imag_components(&self) -> [&DVector<f64>; 3] {
        [&self.planes[1], &self.planes[2], &self.planes[3]]
    }

    /// Applies a real matrix to each of the four planes.
    pub fn apply_real_matrix(&self, a: &DMatrix<f64>) -> Result<QSignal> {
        if a.ncols() != self.len() {
            return Err(Error::DimensionMismatch {
                context: "apply_real_matrix",
                expected: a.ncols(),
                got: self.len(),
            });
        }
        Ok(QSignal {
            planes: std::array::from_fn(|c| a * &self.planes[c]),
        })
    }

    /// Euclidean norm over all `4n` real components.
    pub fn qnorm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.planes.iter().map(|p| p.norm_squared()).sum()
    }

    pub fn scale(&self, s: f64) -> QSignal {
        QSignal {
            planes: std::array::from_fn(|c| &self.planes[c] * s),
        }
    }

    pub fn add(&self, other: &QSignal) -> Result<QSignal> {
        self.check_len(other, "QSignal add")?;
        Ok(QSignal {
            planes: std::array::from_fn(|c| &self.planes[c] + &other.planes[c]),
        })
    }

    pub fn sub(&self, other: &QSignal) -> Result<QSignal> {
        self.check_len(other, "QSignal sub")?;
        Ok(QSignal {
            planes: std::array::from_fn(|c| &self.planes[c] - &other.planes[c]),
        })
    }

    /// Entry-wise Hamilton product `self[v] * other[v]`.
    pub fn hadamard_qmul(&self, other: &QSignal) -> Result<QSignal> {
        self.check_len(other, "QSignal hadamard_qmul")?;
        let entries: Vec<Quaternion> = (0..self.len())
            .map(|v| self.entry(v) * other.entry(v))
            .collect();
        QSignal::from_entries(&entries)
    }

    pub fn is_finite(&self) -> bool {
        self.planes.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    fn check_len(&self, other: &QSignal, context: &'static str) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(())
    }

    /// Writes one row per vertex with header `w,x,y,z`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        wtr.write_record(["w", "x", "y", "z"])
            .map_err(|e| Error::csv(path, e))?;
        for q in self.entries() {
            wtr.write_record(q.to_array().iter().map(|v| format!("{v:?}")))
                .map_err(|e| Error::csv(path, e))?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<QSignal> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let headers = rdr.headers().map_err(|e| Error::csv(path, e))?;
        if headers.iter().collect::<Vec<_>>() != ["w", "x", "y", "z"] {
            return Err(Error::format(path, "expected header w,x,y,z"));
        }
        let mut entries = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let mut c = [0.0; 4];
            for (k, field) in rec.iter().enumerate().take(4) {
                c[k] = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::format(path, format!("bad number '{field}'")))?;
            }
            if rec.len() != 4 {
                return Err(Error::format(path, "expected 4 columns per row"));
            }
            entries.push(Quaternion::from(c));
        }
        QSignal::from_entries(&entries).map_err(|_| Error::format(path, "empty signal"))
    }
}

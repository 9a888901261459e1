use crate::error::{Error, Result};

pub type Rotation = [[f64; 3]; 3];

const TOL: f64 = 1e-5;

pub const IDENTITY: Rotation = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Per-frame head rotations relative to the first frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationSequence {
    matrices: Vec<Rotation>,
}

fn det(r: &Rotation) -> f64 {
    r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
}

fn orthonormality_error(r: &Rotation) -> f64 {
    let mut worst = 0f64;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - want).abs());
        }
    }
    worst
}

impl RotationSequence {
    pub fn new(matrices: Vec<Rotation>) -> Result<Self> {
        if matrices.is_empty() {
            return Err(Error::Invalid("rotation sequence is empty".into()));
        }
        for (t, r) in matrices.iter().enumerate() {
            let e = orthonormality_error(r);
            if !(e <= TOL) {
                return Err(Error::Invalid(format!("rotation {t}: |R^T R - I|_inf = {e:e}")));
            }
            let d = det(r);
            if !((d - 1.0).abs() <= TOL) {
                return Err(Error::Invalid(format!("rotation {t}: det = {d}")));
            }
        }
        let first = &matrices[0];
        let off = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| (first[i][j] - IDENTITY[i][j]).abs())
            .fold(0f64, f64::max);
        if off > TOL {
            return Err(Error::Invalid("first rotation must be the identity".into()));
        }
        Ok(Self { matrices })
    }

    /// Static head: identity for every frame.
    pub fn identity(n: usize) -> Self {
        Self {
            matrices: vec![IDENTITY; n.max(1)],
        }
    }

    /// Rotation about the vertical axis by `angles[t]` radians, re-expressed
    /// relative to frame 0.
    pub fn from_yaw(angles: &[f64]) -> Result<Self> {
        let a0 = angles.first().copied().unwrap_or(0.0);
        let m = angles
            .iter()
            .map(|a| {
                let (s, c) = (a - a0).sin_cos();
                [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
            })
            .collect();
        Self::new(m)
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn matrices(&self) -> &[Rotation] {
        &self.matrices
    }

    /// Row-major `T × 9` values.
    pub fn flatten(&self) -> Vec<f32> {
        self.matrices
            .iter()
            .flat_map(|r| r.iter().flat_map(|row| row.iter().map(|&v| v as f32)))
            .collect()
    }
}

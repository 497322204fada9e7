//! Lattice points, jump sets and directions.
//!
//! Sites live in `Z^d` for `d <= MAX_DIM`; unused trailing coordinates are
//! kept at zero so that `Site` stays `Copy` and hashable without allocation.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, Neg, Sub};

use crate::error::{Result, RwreError};

pub const MAX_DIM: usize = 3;

/// Maximum number of moves in a jump set: `2 * MAX_DIM` unit steps plus hold.
pub const MAX_MOVES: usize = 2 * MAX_DIM + 1;

#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Site(pub [i64; MAX_DIM]);

impl Site {
    pub const ORIGIN: Site = Site([0; MAX_DIM]);

    pub fn new(coords: &[i64]) -> Site {
        assert!(coords.len() <= MAX_DIM, "at most {MAX_DIM} coordinates");
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Site(c)
    }

    pub fn on_axis(dim_index: usize, value: i64) -> Site {
        let mut c = [0; MAX_DIM];
        c[dim_index] = value;
        Site(c)
    }

    #[inline]
    pub fn l1(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).sum()
    }

    #[inline]
    pub fn linf(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    #[inline]
    pub fn dot_int(&self, l: &[i64]) -> i64 {
        self.0.iter().zip(l).map(|(a, b)| a * b).sum()
    }

    #[inline]
    pub fn dot(&self, l: &[f64]) -> f64 {
        self.0.iter().zip(l).map(|(a, b)| *a as f64 * b).sum()
    }

    pub fn coords(&self, dim: usize) -> &[i64] {
        &self.0[..dim]
    }
}

impl Add for Site {
    type Output = Site;
    #[inline]
    fn add(self, o: Site) -> Site {
        Site([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Site {
    type Output = Site;
    #[inline]
    fn sub(self, o: Site) -> Site {
        Site([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Neg for Site {
    type Output = Site;
    fn neg(self) -> Site {
        Site([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.0[0], self.0[1], self.0[2])
    }
}

/// The ordered set of admissible jumps: `+e_1, -e_1, +e_2, -e_2, ...`, then
/// optionally the zero move. Move `2j` is `+e_{j+1}` and `2j + 1` is its
/// opposite, so `opposite(i) == i ^ 1` for non-hold moves.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JumpSet {
    pub dim: usize,
    pub include_hold: bool,
}

impl JumpSet {
    pub fn new(dim: usize, include_hold: bool) -> Result<JumpSet> {
        if dim == 0 || dim > MAX_DIM {
            return Err(RwreError::config(format!("dimension must be in 1..={MAX_DIM}, got {dim}")));
        }
        Ok(JumpSet { dim, include_hold })
    }

    #[inline]
    pub fn len(&self) -> usize {
        2 * self.dim + usize::from(self.include_hold)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn hold_index(&self) -> Option<usize> {
        self.include_hold.then_some(2 * self.dim)
    }

    #[inline]
    pub fn is_hold(&self, idx: usize) -> bool {
        self.include_hold && idx == 2 * self.dim
    }

    #[inline]
    pub fn opposite(&self, idx: usize) -> usize {
        if self.is_hold(idx) {
            idx
        } else {
            idx ^ 1
        }
    }

    #[inline]
    pub fn vector(&self, idx: usize) -> Site {
        if self.is_hold(idx) {
            return Site::ORIGIN;
        }
        let axis = idx / 2;
        Site::on_axis(axis, if idx % 2 == 0 { 1 } else { -1 })
    }

    pub fn vectors(&self) -> Vec<Site> {
        (0..self.len()).map(|i| self.vector(i)).collect()
    }

    pub fn with_hold(&self) -> JumpSet {
        JumpSet { dim: self.dim, include_hold: true }
    }

    pub fn without_hold(&self) -> JumpSet {
        JumpSet { dim: self.dim, include_hold: false }
    }

    /// Index of the move `+e_{axis}` (`sign > 0`) or `-e_{axis}`.
    pub fn axis_move(&self, axis: usize, sign: i64) -> usize {
        2 * axis + usize::from(sign < 0)
    }

    pub fn label(&self, idx: usize) -> String {
        if self.is_hold(idx) {
            "0".to_string()
        } else {
            format!("{}e{}", if idx % 2 == 0 { "+" } else { "-" }, idx / 2 + 1)
        }
    }
}

/// A direction in which heights `X . l` are measured.
///
/// Integer directions (with gcd 1) give exact integer heights. Real
/// directions are normalized to the unit sphere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Direction {
    Integer(Vec<i64>),
    Real(Vec<f64>),
}

impl Direction {
    pub fn axis(dim: usize, axis: usize, sign: i64) -> Direction {
        let mut v = vec![0; dim];
        v[axis] = sign.signum();
        Direction::Integer(v)
    }

    pub fn integer(v: Vec<i64>) -> Result<Direction> {
        if v.iter().all(|&c| c == 0) {
            return Err(RwreError::config("direction must be non-zero"));
        }
        let g = v.iter().fold(0i64, |g, &c| gcd(g, c.abs()));
        if g != 1 {
            return Err(RwreError::config(format!("integer direction {v:?} must have gcd 1")));
        }
        Ok(Direction::Integer(v))
    }

    pub fn real(v: Vec<f64>) -> Result<Direction> {
        let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(RwreError::config("direction must be non-zero and finite"));
        }
        Ok(Direction::Real(v.into_iter().map(|c| c / n).collect()))
    }

    pub fn dim(&self) -> usize {
        match self {
            Direction::Integer(v) => v.len(),
            Direction::Real(v) => v.len(),
        }
    }

    #[inline]
    pub fn height(&self, x: Site) -> f64 {
        match self {
            Direction::Integer(v) => x.dot_int(v) as f64,
            Direction::Real(v) => x.dot(v),
        }
    }

    pub fn negated(&self) -> Direction {
        match self {
            Direction::Integer(v) => Direction::Integer(v.iter().map(|c| -c).collect()),
            Direction::Real(v) => Direction::Real(v.iter().map(|c| -c).collect()),
        }
    }

    /// The direction as a unit vector of reals.
    pub fn unit(&self) -> Vec<f64> {
        match self {
            Direction::Integer(v) => {
                let n = (v.iter().map(|c| (c * c) as f64).sum::<f64>()).sqrt();
                v.iter().map(|&c| c as f64 / n).collect()
            }
            Direction::Real(v) => v.clone(),
        }
    }

    /// `Some(axis, sign)` when the direction is a signed coordinate vector.
    pub fn as_axis(&self) -> Option<(usize, i64)> {
        match self {
            Direction::Integer(v) => {
                let nz: Vec<usize> = (0..v.len()).filter(|&i| v[i] != 0).collect();
                (nz.len() == 1 && v[nz[0]].abs() == 1).then(|| (nz[0], v[nz[0]]))
            }
            Direction::Real(_) => None,
        }
    }
}

pub fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jump_set_layout() {
        let j = JumpSet::new(2, true).unwrap();
        assert_eq!(j.len(), 5);
        let v = j.vectors();
        for (i, a) in v.iter().enumerate() {
            if !j.is_hold(i) {
                assert_eq!(a.l1(), 1);
                assert_eq!(j.vector(j.opposite(i)), -*a);
            }
            for b in &v[i + 1..] {
                assert_ne!(a, b);
            }
        }
        assert_eq!(v[4], Site::ORIGIN);
        assert_eq!(j.label(3), "-e2");
    }

    #[test]
    fn direction_validation() {
        assert!(Direction::integer(vec![2, 4]).is_err());
        assert!(Direction::integer(vec![0, 0]).is_err());
        let d = Direction::integer(vec![1, 2]).unwrap();
        assert_eq!(d.height(Site::new(&[3, -1])), 1.0);
        assert_eq!(Direction::axis(2, 1, -1).as_axis(), Some((1, -1)));
        let r = Direction::real(vec![3.0, 4.0]).unwrap();
        assert!((r.height(Site::new(&[1, 1])) - 1.4).abs() < 1e-15);
    }
}

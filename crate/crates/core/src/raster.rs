//! Dense row-major 2-D grids.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Raster<S> {
    height: usize,
    width: usize,
    data: Vec<S>,
}

impl<S: Copy> Raster<S> {
    pub fn from_vec(height: usize, width: usize, data: Vec<S>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape("raster dimensions must be positive"));
        }
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "expected {}x{} = {} values, got {}",
                height,
                width,
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: S) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    /// Value at `(i, j)` or `None` outside the grid (signed coordinates).
    #[inline]
    pub fn get_signed(&self, i: isize, j: isize) -> Option<S> {
        if i < 0 || j < 0 || i as usize >= self.height || j as usize >= self.width {
            None
        } else {
            Some(self.data[i as usize * self.width + j as usize])
        }
    }

    pub fn map<T: Copy>(&self, f: impl Fn(S) -> T) -> Raster<T> {
        Raster {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_dims<T>(&self, other: &Raster<T>) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn ensure_same_dims<T>(&self, other: &Raster<T>, what: &str) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }
}

impl<S: Scalar> Raster<S> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, S::zero())
    }

    pub fn cast<T: Scalar>(&self) -> Raster<T> {
        self.map(|v| T::lit(v.as_f64()))
    }

    pub fn mean(&self) -> S {
        self.data.iter().copied().sum::<S>() / S::from_usize_lossy(self.data.len())
    }

    pub fn max_abs_diff(&self, other: &Raster<S>) -> S {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(S::zero(), S::max)
    }
}

impl<S> Index<(usize, usize)> for Raster<S> {
    type Output = S;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.width + j]
    }
}

impl<S> IndexMut<(usize, usize)> for Raster<S> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.width + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        assert!(Raster::from_vec(2, 2, vec![0.0_f64; 3]).is_err());
    }

    #[test]
    fn indexing_is_row_major() {
        let r = Raster::from_fn(2, 3, |i, j| (i * 10 + j) as f64);
        assert_eq!(r[(1, 2)], 12.0);
        assert_eq!(r.as_slice()[5], 12.0);
        assert_eq!(r.get_signed(-1, 0), None);
        assert_eq!(r.get_signed(1, 0), Some(10.0));
    }
}

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major real-valued raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

/// Per-pixel network output in `[0, 1]`.
pub type ProbMap<T> = Grid<T>;

impl<T: Scalar> Grid<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "{} values for a {width}x{height} grid",
                data.len()
            )));
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn at(&self, col: usize, row: usize) -> T {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn at_mut(&mut self, col: usize, row: usize) -> &mut T {
        &mut self.data[row * self.width + col]
    }

    /// `side`×`side` window with its top-left corner at `(left, top)`.
    pub fn crop(&self, left: usize, top: usize, side: usize) -> Grid<T> {
        let mut data = Vec::with_capacity(side * side);
        for row in top..top + side {
            let start = row * self.width + left;
            data.extend_from_slice(&self.data[start..start + side]);
        }
        Grid {
            width: side,
            height: side,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Grid<T> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

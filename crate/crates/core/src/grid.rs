//! Dense row-major image lattice with interleaved channels.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// An `height × width × channels` tensor stored row-major, channel-fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid2D<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid2D<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "grid dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::Shape("grid size overflows".into()))?;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// A grid with every element set to `value`.
    ///
    /// Panics if a dimension is zero.
    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty grid");
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Builds a grid by evaluating `f(row, col, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty grid");
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self {
            height,
            width,
            channels,
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
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of pixels (`height × width`).
    #[inline]
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// True when both grids live on the same `height × width` lattice.
    pub fn same_lattice<U>(&self, other: &Grid2D<U>) -> bool {
        self.height == other.height && self.width == other.width
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> T {
        self.data[self.index(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: T) {
        let i = self.index(row, col, ch);
        self.data[i] = value;
    }

    /// Channel vector of the pixel with linear index `pixel`.
    #[inline]
    pub fn pixel(&self, pixel: usize) -> &[T] {
        &self.data[pixel * self.channels..(pixel + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, pixel: usize) -> &mut [T] {
        let c = self.channels;
        &mut self.data[pixel * c..(pixel + 1) * c]
    }

    /// Linear pixel index to `(row, col)`.
    #[inline]
    pub fn coords(&self, pixel: usize) -> (usize, usize) {
        (pixel / self.width, pixel % self.width)
    }

    /// One channel as a single-channel grid.
    pub fn channel(&self, ch: usize) -> Grid2D<T> {
        assert!(ch < self.channels, "channel {ch} out of range");
        let data = self.data.iter().skip(ch).step_by(self.channels).copied().collect();
        Grid2D {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Grid2D<U> {
        Grid2D {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    /// Stacks single-channel grids into one multi-channel grid.
    pub fn stack(layers: &[Grid2D<T>]) -> Result<Grid2D<T>> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero layers".into()))?;
        for (i, layer) in layers.iter().enumerate() {
            if !layer.same_lattice(first) || layer.channels != 1 {
                return Err(Error::Shape(format!(
                    "layer {i} is {:?}, expected {}x{}x1",
                    layer.shape(),
                    first.height,
                    first.width
                )));
            }
        }
        let l = layers.len();
        let mut data = Vec::with_capacity(first.pixels() * l);
        for p in 0..first.pixels() {
            data.extend(layers.iter().map(|g| g.data[p]));
        }
        Grid2D::new(first.height, first.width, l, data)
    }
}

impl<S: Scalar> Grid2D<S> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, S::zero())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts every element to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Grid2D<U> {
        self.map(|v| U::lit(v.as_f64()))
    }

    /// Largest absolute element-wise difference; `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &Grid2D<S>) -> Option<S> {
        if self.shape() != other.shape() {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .fold(S::zero(), |m, (&a, &b)| m.max((a - b).abs())),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Grid2D::new(0, 2, 1, Vec::<f64>::new()).is_err());
        assert!(Grid2D::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Grid2D::new(2, 2, 1, vec![0.0; 4]).is_ok());
    }

    #[test]
    fn index_is_channel_fastest() {
        let g = Grid2D::new(3, 4, 5, (0..60).map(|v| v as f64).collect()).unwrap();
        assert_eq!(g.get(1, 2, 3), 33.0);
        assert_eq!(g.pixel(6), &[30.0, 31.0, 32.0, 33.0, 34.0]);
        assert_eq!(g.coords(6), (1, 2));
    }

    #[test]
    fn channel_and_stack_are_inverse() {
        let g = Grid2D::from_fn(2, 3, 2, |r, c, ch| (r * 10 + c * 2 + ch) as f64);
        let layers = vec![g.channel(0), g.channel(1)];
        assert_eq!(Grid2D::stack(&layers).unwrap(), g);
    }
}

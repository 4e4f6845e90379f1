//! Row-major 2-D grids for images and label maps, and right-angle rotations.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const NUM_CLASSES: usize = 3;
/// Background outside the wafer disc and alignment markers.
pub const CLASS_BACKGROUND: u8 = 0;
pub const CLASS_IN_SPEC: u8 = 1;
pub const CLASS_DEFECT: u8 = 2;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// Brightness image with values in `[0, 1]`.
pub type Image = Grid<f32>;
/// Per-pixel class indices.
pub type LabelMap = Grid<u8>;

impl<T: Copy> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Other(alloc::format!(
                "grid data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.width + c] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Rotates clockwise by `angle` degrees; a pixel at `(r, c)` moves to `(c, H-1-r)` per quarter turn.
    pub fn rotated(&self, angle: u32) -> Result<Self> {
        let turns = quarter_turns(angle)?;
        if turns % 2 == 1 && self.height != self.width {
            return Err(Error::NonSquare {
                angle,
                height: self.height,
                width: self.width,
            });
        }
        Ok(rotate_plane(&self.data, self.height, self.width, turns).into_grid())
    }

    /// Pads bottom/right up to a square with `fill`.
    pub fn padded_square(&self, fill: T) -> Self {
        let side = self.height.max(self.width);
        let mut out = Self::filled(side, side, fill);
        for r in 0..self.height {
            out.data[r * side..r * side + self.width]
                .copy_from_slice(&self.data[r * self.width..(r + 1) * self.width]);
        }
        out
    }
}

impl LabelMap {
    /// Pixel count per class; values outside `0..NUM_CLASSES` are ignored.
    pub fn class_histogram(&self) -> [usize; NUM_CLASSES] {
        let mut h = [0; NUM_CLASSES];
        for &v in &self.data {
            if (v as usize) < NUM_CLASSES {
                h[v as usize] += 1;
            }
        }
        h
    }

    pub fn validate(&self) -> Result<()> {
        match self.data.iter().position(|&v| v as usize >= NUM_CLASSES) {
            Some(index) => Err(Error::LabelRange {
                value: self.data[index],
                index,
                classes: NUM_CLASSES,
            }),
            None => Ok(()),
        }
    }

    /// One-hot tensor of shape `(1, NUM_CLASSES, H, W)`.
    pub fn one_hot<T: Scalar>(&self) -> Result<Tensor<T>> {
        self.validate()?;
        let shape = Shape::new(1, NUM_CLASSES, self.height, self.width);
        let mut t = Tensor::zeros(shape);
        let plane = self.height * self.width;
        for (i, &v) in self.data.iter().enumerate() {
            t.data_mut()[v as usize * plane + i] = T::one();
        }
        Ok(t)
    }
}

impl Image {
    /// `(1, 1, H, W)` tensor view of the image.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::from_f64(v as f64)).collect();
        Tensor::from_vec(Shape::new(1, 1, self.height, self.width), data)
            .expect("grid length matches")
    }
}

pub(crate) struct RotatedPlane<T> {
    pub data: Vec<T>,
    pub height: usize,
    pub width: usize,
}

impl<T> RotatedPlane<T> {
    fn into_grid(self) -> Grid<T> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data,
        }
    }
}

/// Number of clockwise quarter turns for an angle in degrees.
pub fn quarter_turns(angle: u32) -> Result<u32> {
    if angle % 90 != 0 {
        return Err(Error::Angle(angle));
    }
    Ok((angle / 90) % 4)
}

pub(crate) fn rotate_plane<T: Copy>(src: &[T], h: usize, w: usize, turns: u32) -> RotatedPlane<T> {
    let (oh, ow) = if turns % 2 == 1 { (w, h) } else { (h, w) };
    let mut data = Vec::with_capacity(src.len());
    // Inverse map: for each output pixel find the source pixel.
    for r in 0..oh {
        for c in 0..ow {
            let (sr, sc) = match turns % 4 {
                0 => (r, c),
                1 => (h - 1 - c, r),
                2 => (h - 1 - r, w - 1 - c),
                _ => (c, w - 1 - r),
            };
            data.push(src[sr * w + sc]);
        }
    }
    RotatedPlane {
        data,
        height: oh,
        width: ow,
    }
}

/// Rotates every plane of a tensor clockwise by `angle` degrees.
pub fn rotate_tensor<T: Scalar>(t: &Tensor<T>, angle: u32) -> Result<Tensor<T>> {
    let turns = quarter_turns(angle)?;
    let s = t.shape();
    if turns % 2 == 1 && s.h != s.w {
        return Err(Error::NonSquare {
            angle,
            height: s.h,
            width: s.w,
        });
    }
    if turns == 0 {
        return Ok(t.clone());
    }
    let mut data = Vec::with_capacity(s.len());
    for n in 0..s.n {
        for c in 0..s.c {
            data.extend(rotate_plane(t.plane(n, c), s.h, s.w, turns).data);
        }
    }
    let (oh, ow) = if turns % 2 == 1 {
        (s.w, s.h)
    } else {
        (s.h, s.w)
    };
    Tensor::from_vec(Shape::new(s.n, s.c, oh, ow), data)
}

/// Maps a pixel coordinate through a clockwise rotation of an `h x w` grid.
pub fn rotate_coord(r: usize, c: usize, h: usize, w: usize, angle: u32) -> Result<(usize, usize)> {
    let turns = quarter_turns(angle)?;
    let (mut r, mut c, mut h, mut w) = (r, c, h, w);
    for _ in 0..turns {
        (r, c) = (c, h - 1 - r);
        (h, w) = (w, h);
    }
    Ok((r, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_turn_coordinate_map() {
        let mut g = LabelMap::filled(5, 5, CLASS_IN_SPEC);
        g.set(1, 3, CLASS_DEFECT);
        let r = g.rotated(90).unwrap();
        assert_eq!(r.get(3, 5 - 1 - 1), CLASS_DEFECT);
        assert_eq!(rotate_coord(1, 3, 5, 5, 90).unwrap(), (3, 3));
        assert_eq!(r.class_histogram(), g.class_histogram());
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let g = Grid::from_vec(3, 3, (0u8..9).collect()).unwrap();
        let mut r = g.clone();
        for _ in 0..4 {
            r = r.rotated(90).unwrap();
        }
        assert_eq!(r, g);
        assert_eq!(g.rotated(180).unwrap().rotated(180).unwrap(), g);
        assert_eq!(
            g.rotated(270).unwrap(),
            g.rotated(90).unwrap().rotated(180).unwrap()
        );
    }

    #[test]
    fn non_square_rules() {
        let g = Grid::from_vec(2, 3, (0u8..6).collect()).unwrap();
        assert!(matches!(g.rotated(90), Err(Error::NonSquare { .. })));
        assert_eq!(g.rotated(180).unwrap().data(), &[5, 4, 3, 2, 1, 0]);
        assert!(matches!(g.rotated(45), Err(Error::Angle(45))));
        let p = g.padded_square(0);
        assert_eq!(p.dims(), (3, 3));
        assert_eq!(p.data(), &[0, 1, 2, 3, 4, 5, 0, 0, 0]);
    }

    #[test]
    fn one_hot_channels() {
        let g = Grid::from_vec(1, 3, alloc::vec![0u8, 2, 1]).unwrap();
        let t = g.one_hot::<f32>().unwrap();
        assert_eq!(
            (t.at(0, 0, 0, 1), t.at(0, 1, 0, 1), t.at(0, 2, 0, 1)),
            (0.0, 0.0, 1.0)
        );
        let bad = Grid::from_vec(1, 1, alloc::vec![3u8]).unwrap();
        assert!(bad.one_hot::<f32>().is_err());
    }
}

//! Binary masks and their bounding boxes.

use serde::{Deserialize, Serialize};

use crate::error::{DatasetError, Result};
use crate::label::PixelBox;

/// Row-major binary mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(DatasetError::Invalid(format!("mask of {height}x{width} needs {} pixels, got {}", height * width, data.len())));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![false; height * width] }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }
}

/// Tightest pixel-inclusive box around the foreground.
pub fn mask_to_bbox(mask: &Mask) -> Result<PixelBox> {
    let mut acc: Option<(usize, usize, usize, usize)> = None;
    for (i, _) in mask.data.iter().enumerate().filter(|(_, &on)| on) {
        let (r, c) = (i / mask.width, i % mask.width);
        acc = Some(match acc {
            None => (c, r, c, r),
            Some((x0, y0, x1, y1)) => (x0.min(c), y0.min(r), x1.max(c), y1.max(r)),
        });
    }
    let (x0, y0, x1, y1) = acc.ok_or(DatasetError::EmptyMask)?;
    let u = |v: usize| u32::try_from(v).map_err(|_| DatasetError::Invalid("mask too large".into()));
    Ok(PixelBox::new(u(x0)?, u(y0)?, u(x1)?, u(y1)?))
}

/// Solid rectangle covering `b` on a `height x width` grid.
pub fn rasterize(b: &PixelBox, height: usize, width: usize) -> Result<Mask> {
    if !b.is_ordered() || b.x_right as usize >= width || b.y_bottom as usize >= height {
        return Err(DatasetError::Invalid(format!("box {:?} does not fit a {height}x{width} grid", b.as_array())));
    }
    let mut m = Mask::zeros(height, width);
    for r in b.y_top as usize..=b.y_bottom as usize {
        for c in b.x_left as usize..=b.x_right as usize {
            m.data[r * width + c] = true;
        }
    }
    Ok(m)
}

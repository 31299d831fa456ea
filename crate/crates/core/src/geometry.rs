//! Patch tiling, conditioning windows and patch read/write.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Top-left corner of a patch.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Origin {
    pub row: usize,
    pub col: usize,
}

impl Origin {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// K×K patches laid out at a fixed stride, row-major. The last row and
/// column of patches are clamped against the image border so every pixel
/// is covered.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    height: usize,
    width: usize,
    k: usize,
    stride: usize,
    origins: Vec<Origin>,
}

fn axis_positions(dim: usize, k: usize, stride: usize) -> Vec<usize> {
    let last = dim - k;
    let mut pos: Vec<usize> = (0..=last).step_by(stride).collect();
    if pos.last() != Some(&last) {
        pos.push(last);
    }
    pos
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, k: usize, stride: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidGeometry("patch size must be at least 1".into()));
        }
        if k > height || k > width {
            return Err(Error::InvalidGeometry(format!(
                "patch size {k} exceeds image {height}x{width}"
            )));
        }
        if stride == 0 || stride > k {
            return Err(Error::InvalidGeometry(format!(
                "stride must be in 1..={k}, got {stride}"
            )));
        }
        let rows = axis_positions(height, k, stride);
        let cols = axis_positions(width, k, stride);
        let origins = rows
            .iter()
            .flat_map(|&r| cols.iter().map(move |&c| Origin::new(r, c)))
            .collect();
        Ok(Self { height, width, k, stride, origins })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn patch_size(&self) -> usize {
        self.k
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn origins(&self) -> &[Origin] {
        &self.origins
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Number of patches covering each pixel, row-major.
    pub fn coverage(&self) -> Vec<u32> {
        let mut counts = alloc::vec![0u32; self.height * self.width];
        for o in &self.origins {
            for r in o.row..o.row + self.k {
                for c in o.col..o.col + self.k {
                    counts[r * self.width + c] += 1;
                }
            }
        }
        counts
    }
}

/// Builds the patch grid for an image of the given size.
pub fn build_patch_grid(height: usize, width: usize, k: usize, stride: usize) -> Result<PatchGrid> {
    PatchGrid::new(height, width, k, stride)
}

/// The 3K×3K neighbourhood of a patch, reflect-padded at the image border.
///
/// The centre K×K block is the hidden patch. Its original bytes are kept in
/// `values`; samplers must treat them as masked.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextWindow {
    k: usize,
    channels: usize,
    origin: Origin,
    values: Vec<u8>,
    /// Window pixels whose source pixel lies in the hidden patch: the centre
    /// plus any reflected copies of it near the image border.
    hidden: Vec<bool>,
}

/// Reflects an index into `0..n` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

impl ContextWindow {
    pub fn from_raw(k: usize, channels: usize, origin: Origin, values: Vec<u8>) -> Result<Self> {
        let side = 3 * k;
        if k == 0 || values.len() != side * side * channels {
            return Err(Error::InvalidArgument(format!(
                "context for K={k} with {channels} channels needs {} bytes, got {}",
                side * side * channels,
                values.len()
            )));
        }
        let hidden = (0..side * side)
            .map(|i| (k..2 * k).contains(&(i / side)) && (k..2 * k).contains(&(i % side)))
            .collect();
        Ok(Self { k, channels, origin, values, hidden })
    }

    pub fn patch_size(&self) -> usize {
        self.k
    }

    /// Window side length, 3K.
    pub fn side(&self) -> usize {
        3 * self.k
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Origin of the hidden patch in the source image.
    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[u8] {
        let o = (row * self.side() + col) * self.channels;
        &self.values[o..o + self.channels]
    }

    /// Whether window pixel `(row, col)` lies in the hidden centre patch.
    pub fn is_masked(&self, row: usize, col: usize) -> bool {
        (self.k..2 * self.k).contains(&row) && (self.k..2 * self.k).contains(&col)
    }

    /// Whether window pixel `(row, col)` was copied from the hidden patch,
    /// either directly or through border reflection. Conditioning must
    /// ignore these pixels.
    pub fn is_hidden(&self, row: usize, col: usize) -> bool {
        self.hidden[row * self.side() + col]
    }

    /// The original bytes of the hidden patch.
    pub fn center_patch(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.k * self.k * self.channels);
        for r in self.k..2 * self.k {
            for c in self.k..2 * self.k {
                out.extend_from_slice(self.pixel(r, c));
            }
        }
        out
    }
}

/// Cuts the 3K×3K window centred on the patch at `origin`.
pub fn extract_context(image: &Image, origin: Origin, k: usize) -> Result<ContextWindow> {
    check_patch_inside(image, origin, k)?;
    let side = 3 * k;
    let ch = image.channels();
    let mut values = Vec::with_capacity(side * side * ch);
    let mut hidden = Vec::with_capacity(side * side);
    let top = origin.row as isize - k as isize;
    let left = origin.col as isize - k as isize;
    let rows = origin.row..origin.row + k;
    let cols = origin.col..origin.col + k;
    for r in 0..side as isize {
        let src_r = reflect(top + r, image.height());
        for c in 0..side as isize {
            let src_c = reflect(left + c, image.width());
            values.extend_from_slice(image.pixel(src_r, src_c));
            hidden.push(rows.contains(&src_r) && cols.contains(&src_c));
        }
    }
    Ok(ContextWindow { k, channels: ch, origin, values, hidden })
}

fn check_patch_inside(image: &Image, origin: Origin, k: usize) -> Result<()> {
    if k == 0 || origin.row + k > image.height() || origin.col + k > image.width() {
        return Err(Error::InvalidGeometry(format!(
            "{k}x{k} patch at ({}, {}) does not fit in {}x{} image",
            origin.row,
            origin.col,
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

/// Copies the K×K×C patch at `origin`.
pub fn read_patch(image: &Image, origin: Origin, k: usize) -> Result<Vec<u8>> {
    check_patch_inside(image, origin, k)?;
    let ch = image.channels();
    let mut out = Vec::with_capacity(k * k * ch);
    for r in origin.row..origin.row + k {
        let start = image.offset(r, origin.col);
        out.extend_from_slice(&image.data()[start..start + k * ch]);
    }
    Ok(out)
}

/// Overwrites the patch at `origin` in place.
pub fn write_patch(image: &mut Image, origin: Origin, k: usize, values: &[u8]) -> Result<()> {
    check_patch_inside(image, origin, k)?;
    let ch = image.channels();
    if values.len() != k * k * ch {
        return Err(Error::InvalidArgument(format!(
            "{k}x{k}x{ch} patch needs {} bytes, got {}",
            k * k * ch,
            values.len()
        )));
    }
    for (i, row) in values.chunks_exact(k * ch).enumerate() {
        let r = origin.row + i;
        for (j, px) in row.chunks_exact(ch).enumerate() {
            image.pixel_mut(r, origin.col + j).copy_from_slice(px);
        }
    }
    Ok(())
}

/// Returns a copy of `image` with the patch at `origin` replaced.
pub fn apply_patch(image: &Image, origin: Origin, k: usize, values: &[u8]) -> Result<Image> {
    let mut out = image.clone();
    write_patch(&mut out, origin, k, values)?;
    Ok(out)
}

/// Spreads one value per patch over its pixels. Pixels covered by several
/// patches receive the mean of those values.
pub fn accumulate_patch_values(grid: &PatchGrid, per_patch: &[f64]) -> Result<Vec<f64>> {
    if per_patch.len() != grid.len() {
        return Err(Error::InvalidArgument(format!(
            "grid has {} patches, got {} values",
            grid.len(),
            per_patch.len()
        )));
    }
    let (h, w, k) = (grid.height, grid.width, grid.k);
    let mut sums = alloc::vec![0.0f64; h * w];
    let mut counts = alloc::vec![0u32; h * w];
    for (o, &v) in grid.origins.iter().zip(per_patch) {
        for r in o.row..o.row + k {
            for c in o.col..o.col + k {
                sums[r * w + c] += v;
                counts[r * w + c] += 1;
            }
        }
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| if n == 1 { s } else { s / f64::from(n) })
        .collect())
}

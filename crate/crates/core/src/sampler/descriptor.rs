use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ContextWindow;

/// Summary of the unmasked ring of a context window.
///
/// The 3K×3K window is split into `grid × grid` equal cells; each cell
/// outside the centre patch contributes the mean of its visible pixels, per
/// channel. Pixels reflected from the hidden patch are not visible; a cell
/// with none visible takes the mean of the whole visible ring (or mid-gray
/// when nothing is visible). `grid = 1` gives a single ring mean, `grid = 3` the eight
/// neighbouring K×K blocks. Quantized descriptors use `levels` bins.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorConfig {
    pub grid: usize,
    pub levels: usize,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self { grid: 3, levels: 4 }
    }
}

impl DescriptorConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.grid == 0 || (3 * k) % self.grid != 0 {
            return Err(Error::InvalidArgument(format!(
                "descriptor grid {} must divide the window side {}",
                self.grid,
                3 * k
            )));
        }
        if !(1..=256).contains(&self.levels) {
            return Err(Error::InvalidArgument(format!(
                "quantization levels must be in 1..=256, got {}",
                self.levels
            )));
        }
        Ok(())
    }

    /// `(cell_row, cell_col)` of cells containing unmasked pixels.
    fn cells(&self, k: usize) -> Vec<(usize, usize)> {
        let cell = 3 * k / self.grid;
        let mut out = Vec::new();
        for i in 0..self.grid {
            for j in 0..self.grid {
                let rows = i * cell..(i + 1) * cell;
                let cols = j * cell..(j + 1) * cell;
                let inside = rows.start >= k && rows.end <= 2 * k && cols.start >= k && cols.end <= 2 * k;
                if !inside {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Descriptor length: ring cells times channels.
    pub fn len(&self, k: usize, channels: usize) -> usize {
        self.cells(k).len() * channels
    }

    /// Cell means in byte units, cell-major then channel.
    pub fn describe(&self, context: &ContextWindow) -> Vec<f64> {
        let k = context.patch_size();
        let ch = context.channels();
        let cell = 3 * k / self.grid;
        let cells = self.cells(k);
        let mut stats: Vec<(Vec<u64>, u64)> = Vec::with_capacity(cells.len());
        let mut ring = (alloc::vec![0u64; ch], 0u64);
        for &(i, j) in &cells {
            let mut sums = alloc::vec![0u64; ch];
            let mut count = 0u64;
            for r in i * cell..(i + 1) * cell {
                for c in j * cell..(j + 1) * cell {
                    if context.is_hidden(r, c) {
                        continue;
                    }
                    count += 1;
                    for (s, &v) in sums.iter_mut().zip(context.pixel(r, c)) {
                        *s += u64::from(v);
                    }
                }
            }
            for (t, s) in ring.0.iter_mut().zip(&sums) {
                *t += s;
            }
            ring.1 += count;
            stats.push((sums, count));
        }
        let fallback: Vec<f64> = if ring.1 == 0 {
            alloc::vec![127.5; ch]
        } else {
            ring.0.iter().map(|&s| s as f64 / ring.1 as f64).collect()
        };
        let mut out = Vec::with_capacity(cells.len() * ch);
        for (sums, count) in stats {
            if count == 0 {
                out.extend_from_slice(&fallback);
            } else {
                out.extend(sums.into_iter().map(|s| s as f64 / count as f64));
            }
        }
        out
    }

    /// Bins each mean into `levels` equal-width intervals over `[0, 256)`.
    pub fn quantize(&self, means: &[f64]) -> Vec<u8> {
        means
            .iter()
            .map(|&m| {
                let q = libm::floor(m * self.levels as f64 / 256.0) as usize;
                q.min(self.levels - 1) as u8
            })
            .collect()
    }

    pub fn key(&self, context: &ContextWindow) -> Vec<u8> {
        self.quantize(&self.describe(context))
    }
}

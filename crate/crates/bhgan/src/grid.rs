//! Side-by-side image panels.

use std::path::Path;

use bhgan_core::dataset::IMAGE_SIZE;
use bhgan_core::ImageGray;

use crate::error::Result;
use crate::image_io::write_gray;
use crate::pgm::Gray8;

/// Width in pixels of the white separator between panels.
pub const GUTTER: usize = 4;

/// Lay out rows of equally many 128x128 panels with gutters between them.
pub fn panel_grid(rows: &[Vec<&ImageGray>]) -> Gray8 {
    let cols = rows.first().map_or(0, Vec::len);
    let width = cols * IMAGE_SIZE + cols.saturating_sub(1) * GUTTER;
    let height = rows.len() * IMAGE_SIZE + rows.len().saturating_sub(1) * GUTTER;
    let mut data = vec![255u8; width * height];
    for (ri, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), cols, "ragged panel grid");
        for (ci, img) in row.iter().enumerate() {
            let bytes = img.to_bytes();
            let (y0, x0) = (ri * (IMAGE_SIZE + GUTTER), ci * (IMAGE_SIZE + GUTTER));
            for (r, src) in bytes.chunks_exact(IMAGE_SIZE).enumerate() {
                let start = (y0 + r) * width + x0;
                data[start..start + IMAGE_SIZE].copy_from_slice(src);
            }
        }
    }
    Gray8 { width, height, data }
}

/// Cut panel `index` out of a single-row grid.
pub fn panel(grid: &Gray8, index: usize) -> Vec<u8> {
    let x0 = index * (IMAGE_SIZE + GUTTER);
    grid.data.chunks_exact(grid.width).take(IMAGE_SIZE).flat_map(|row| &row[x0..x0 + IMAGE_SIZE]).copied().collect()
}

/// gapped | baseline | model | truth, written as one image.
pub fn render_comparison(
    gapped: &ImageGray,
    baseline: &ImageGray,
    model: &ImageGray,
    truth: &ImageGray,
    path: &Path,
) -> Result<()> {
    write_gray(&panel_grid(&[vec![gapped, baseline, model, truth]]), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let a = ImageGray::constant(-1.0).unwrap();
        let b = ImageGray::constant(1.0).unwrap();
        let g = panel_grid(&[vec![&a, &b, &a, &b]]);
        assert_eq!((g.width, g.height), (4 * 128 + 3 * GUTTER, 128));
        assert_eq!(panel(&g, 0), a.to_bytes());
        assert_eq!(panel(&g, 3), b.to_bytes());
        let two = panel_grid(&[vec![&a, &b, &a], vec![&b, &a, &b]]);
        assert_eq!((two.width, two.height), (3 * 128 + 2 * GUTTER, 2 * 128 + GUTTER));
    }
}

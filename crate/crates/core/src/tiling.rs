//! Row-major tiling of tiles into square grids.

use std::ops::Range;

use ndarray::{s, Array2, Array4, ArrayView2, ArrayView4};

use crate::error::{Error, Result};
use crate::grid::GridId;

/// Normalised multi-temporal reflectance of one grid.
#[derive(Debug, Clone)]
pub struct ImageStack {
    pub grid: GridId,
    /// `T × H × W × C`, values in `[0, 1]`.
    pub data: Array4<f32>,
    /// `false` for windows without any scene.
    pub validity: Vec<bool>,
}

/// Pixel extent of one grid inside its tile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridCell {
    pub row: usize,
    pub col: usize,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

/// Splits an `h × w` tile into `per_side × per_side` equal grids.
pub fn grid_layout(h: usize, w: usize, per_side: usize) -> Result<Vec<GridCell>> {
    if per_side == 0
        || !h.is_multiple_of(per_side)
        || !w.is_multiple_of(per_side)
        || h == 0
        || w == 0
    {
        return Err(Error::Shape(format!(
            "{h}×{w} tile does not divide into {per_side}×{per_side} grids"
        )));
    }
    let (gh, gw) = (h / per_side, w / per_side);
    let mut cells = Vec::with_capacity(per_side * per_side);
    for row in 0..per_side {
        for col in 0..per_side {
            cells.push(GridCell {
                row,
                col,
                rows: row * gh..(row + 1) * gh,
                cols: col * gw..(col + 1) * gw,
            });
        }
    }
    Ok(cells)
}

/// Cuts a normalised tile stack into named grids.
pub fn split_grids(
    tile_id: &str,
    year: i32,
    stack: ArrayView4<'_, f32>,
    validity: &[bool],
    per_side: usize,
) -> Result<Vec<ImageStack>> {
    let (t, h, w, _) = stack.dim();
    if validity.len() != t {
        return Err(Error::Shape(format!(
            "{} validity flags for {t} windows",
            validity.len()
        )));
    }
    Ok(grid_layout(h, w, per_side)?
        .into_iter()
        .map(|cell| ImageStack {
            grid: GridId::new(tile_id, year, cell.row, cell.col),
            data: stack
                .slice(s![.., cell.rows.clone(), cell.cols.clone(), ..])
                .to_owned(),
            validity: validity.to_vec(),
        })
        .collect())
}

/// Cuts a tile-sized label raster into named grids.
pub fn split_labels(
    tile_id: &str,
    year: i32,
    labels: ArrayView2<'_, u8>,
    per_side: usize,
) -> Result<Vec<(GridId, Array2<u8>)>> {
    let (h, w) = labels.dim();
    Ok(grid_layout(h, w, per_side)?
        .into_iter()
        .map(|cell| {
            (
                GridId::new(tile_id, year, cell.row, cell.col),
                labels
                    .slice(s![cell.rows.clone(), cell.cols.clone()])
                    .to_owned(),
            )
        })
        .collect())
}

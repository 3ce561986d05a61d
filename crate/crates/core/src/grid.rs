//! Coarse satellite-tile lattice over a planar search area.
//!
//! Positions live in a local planar frame: meters east (`x`) and north (`y`)
//! of the grid origin, which is the south-west corner of tile `(0, 0)`.
//! Rows grow northwards, columns eastwards. Each cell is half-open
//! `[low, high)` on both axes, so a point on a shared edge belongs to the tile
//! with the larger index and the tiles partition the footprint exactly.

use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GeoPoint {
    pub x: f64,
    pub y: f64,
}

impl GeoPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        GeoPoint { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: GeoPoint) -> f64 {
        (*self - other).norm()
    }
}

impl Add<Offset> for GeoPoint {
    type Output = GeoPoint;

    fn add(self, rhs: Offset) -> GeoPoint {
        GeoPoint::new(self.x + rhs.dx, self.y + rhs.dy)
    }
}

impl Sub for GeoPoint {
    type Output = Offset;

    fn sub(self, rhs: GeoPoint) -> Offset {
        Offset::new(self.x - rhs.x, self.y - rhs.y)
    }
}

/// Planar displacement in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Offset {
    pub dx: f64,
    pub dy: f64,
}

impl Offset {
    pub const fn new(dx: f64, dy: f64) -> Self {
        Offset { dx, dy }
    }

    pub fn norm(&self) -> f64 {
        self.dx.hypot(self.dy)
    }
}

impl Add for Offset {
    type Output = Offset;

    fn add(self, rhs: Offset) -> Offset {
        Offset::new(self.dx + rhs.dx, self.dy + rhs.dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileIndex {
    pub row: usize,
    pub col: usize,
}

impl TileIndex {
    pub const fn new(row: usize, col: usize) -> Self {
        TileIndex { row, col }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairClass {
    Positive,
    SemiPositive,
    Negative,
}

/// Serialized grid definition; validated into a [`TileGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(default)]
    pub origin: GeoPoint,
    pub tile_size_m: f64,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct TileGrid {
    origin: GeoPoint,
    tile_size: f64,
    rows: usize,
    cols: usize,
}

impl TryFrom<GridSpec> for TileGrid {
    type Error = Error;

    fn try_from(spec: GridSpec) -> Result<Self> {
        TileGrid::new(spec.origin, spec.tile_size_m, spec.rows, spec.cols)
    }
}

impl From<TileGrid> for GridSpec {
    fn from(grid: TileGrid) -> Self {
        GridSpec {
            origin: grid.origin,
            tile_size_m: grid.tile_size,
            rows: grid.rows,
            cols: grid.cols,
        }
    }
}

impl TileGrid {
    /// Chicago-style spacing: 640 px at 0.1 m/px.
    pub const CHICAGO_TILE_M: f64 = 64.0;
    pub const SINGAPORE_TILE_M: f64 = 90.0;

    pub fn new(origin: GeoPoint, tile_size: f64, rows: usize, cols: usize) -> Result<Self> {
        if !origin.is_finite() {
            return Err(Error::config("grid origin must be finite"));
        }
        if !(tile_size.is_finite() && tile_size > 0.0) {
            return Err(Error::config(format!(
                "tile size must be positive, got {tile_size}"
            )));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::config(format!(
                "grid needs at least one row and column, got {rows}x{cols}"
            )));
        }
        Ok(TileGrid {
            origin,
            tile_size,
            rows,
            cols,
        })
    }

    /// Grid anchored at the local origin.
    pub fn square(tile_size: f64, rows: usize, cols: usize) -> Result<Self> {
        Self::new(GeoPoint::default(), tile_size, rows, cols)
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    pub fn tile_size(&self) -> f64 {
        self.tile_size
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn num_tiles(&self) -> usize {
        self.rows * self.cols
    }

    pub fn width(&self) -> f64 {
        self.cols as f64 * self.tile_size
    }

    pub fn height(&self) -> f64 {
        self.rows as f64 * self.tile_size
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        self.tile_of(p).is_ok()
    }

    /// Row-major position of `k` in per-tile arrays.
    pub fn linear(&self, k: TileIndex) -> usize {
        k.row * self.cols + k.col
    }

    pub fn from_linear(&self, i: usize) -> TileIndex {
        TileIndex::new(i / self.cols, i % self.cols)
    }

    pub fn check_index(&self, k: TileIndex) -> Result<()> {
        if k.row < self.rows && k.col < self.cols {
            Ok(())
        } else {
            Err(Error::InvalidIndex {
                row: k.row,
                col: k.col,
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    pub fn tile_of(&self, p: GeoPoint) -> Result<TileIndex> {
        self.linear_tile_of(p)
            .map(|i| self.from_linear(i))
            .ok_or(Error::OutOfBounds(p))
    }

    /// Row-major tile number containing `p`, or `None` outside the footprint.
    /// This is the per-particle lookup in the filter's hot loop.
    #[inline]
    pub fn linear_tile_of(&self, p: GeoPoint) -> Option<usize> {
        let u = (p.x - self.origin.x) / self.tile_size;
        let v = (p.y - self.origin.y) / self.tile_size;
        // Negated comparisons also reject NaN.
        if !(u >= 0.0 && v >= 0.0) {
            return None;
        }
        let col = u.floor();
        let row = v.floor();
        if col >= self.cols as f64 || row >= self.rows as f64 {
            return None;
        }
        Some(row as usize * self.cols + col as usize)
    }

    pub fn tile_center(&self, k: TileIndex) -> Result<GeoPoint> {
        self.check_index(k)?;
        Ok(GeoPoint::new(
            self.origin.x + (k.col as f64 + 0.5) * self.tile_size,
            self.origin.y + (k.row as f64 + 0.5) * self.tile_size,
        ))
    }

    /// Positive when `p` sits in the central box of tile `k` (within a quarter
    /// tile of the center on both axes), semi-positive elsewhere in the tile,
    /// negative outside it.
    pub fn classify_pair(&self, k: TileIndex, p: GeoPoint) -> Result<PairClass> {
        let center = self.tile_center(k)?;
        match self.tile_of(p) {
            Ok(owner) if owner == k => {
                let quarter = self.tile_size / 4.0;
                let d = p - center;
                if d.dx.abs() < quarter && d.dy.abs() < quarter {
                    Ok(PairClass::Positive)
                } else {
                    Ok(PairClass::SemiPositive)
                }
            }
            _ => Ok(PairClass::Negative),
        }
    }

    pub fn area_km2(&self) -> f64 {
        self.num_tiles() as f64 * self.tile_size * self.tile_size / 1e6
    }

    /// Clamp a point into the footprint (just inside the open upper edges).
    pub fn clamp(&self, p: GeoPoint) -> GeoPoint {
        let max_x = self.origin.x + self.width();
        let max_y = self.origin.y + self.height();
        GeoPoint::new(
            p.x.clamp(self.origin.x, max_x.next_down()),
            p.y.clamp(self.origin.y, max_y.next_down()),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chicago() -> TileGrid {
        TileGrid::square(64.0, 256, 256).unwrap()
    }

    #[test]
    fn tile_of_interior_boundary_and_outside() {
        let g = chicago();
        assert_eq!(g.tile_of(GeoPoint::new(10.0, 10.0)).unwrap(), TileIndex::new(0, 0));
        assert_eq!(g.tile_of(GeoPoint::new(64.0, 0.0)).unwrap(), TileIndex::new(0, 1));
        assert!(matches!(
            g.tile_of(GeoPoint::new(-1.0, 5.0)),
            Err(Error::OutOfBounds(_))
        ));
        // Upper edges are open.
        assert!(g.tile_of(GeoPoint::new(g.width(), 5.0)).is_err());
        assert!(g.tile_of(GeoPoint::new(f64::NAN, 5.0)).is_err());
    }

    #[test]
    fn tile_centers() {
        let g = TileGrid::square(64.0, 4, 4).unwrap();
        assert_eq!(g.tile_center(TileIndex::new(0, 0)).unwrap(), GeoPoint::new(32.0, 32.0));
        assert_eq!(g.tile_center(TileIndex::new(1, 1)).unwrap(), GeoPoint::new(96.0, 96.0));
        let s = TileGrid::square(90.0, 16, 16).unwrap();
        assert_eq!(
            s.tile_center(TileIndex::new(15, 15)).unwrap(),
            GeoPoint::new(1395.0, 1395.0)
        );
        assert!(matches!(
            s.tile_center(TileIndex::new(16, 0)),
            Err(Error::InvalidIndex { .. })
        ));
    }

    #[test]
    fn pair_classes() {
        let g = TileGrid::square(64.0, 4, 4).unwrap();
        let k = TileIndex::new(0, 0);
        assert_eq!(g.classify_pair(k, GeoPoint::new(32.0, 32.0)).unwrap(), PairClass::Positive);
        assert_eq!(g.classify_pair(k, GeoPoint::new(60.0, 60.0)).unwrap(), PairClass::SemiPositive);
        assert_eq!(g.classify_pair(k, GeoPoint::new(100.0, 32.0)).unwrap(), PairClass::Negative);
        // Quarter-offset edge of the central box is already semi-positive.
        assert_eq!(g.classify_pair(k, GeoPoint::new(48.0, 32.0)).unwrap(), PairClass::SemiPositive);
        assert_eq!(g.classify_pair(k, GeoPoint::new(-5.0, 32.0)).unwrap(), PairClass::Negative);
    }

    #[test]
    fn areas() {
        assert!((chicago().area_km2() - 268.435456).abs() < 1e-9);
        let s = TileGrid::square(90.0, 16, 16).unwrap();
        assert!((s.area_km2() - 2.0736).abs() < 1e-12);
        let one = TileGrid::square(64.0, 1, 1).unwrap();
        assert!((one.area_km2() - 0.004096).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TileGrid::square(0.0, 4, 4).is_err());
        assert!(TileGrid::square(-3.0, 4, 4).is_err());
        assert!(TileGrid::square(64.0, 0, 4).is_err());
        let bad: std::result::Result<TileGrid, _> =
            serde_json::from_str(r#"{"tile_size_m": 64.0, "rows": 0, "cols": 3}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn clamp_lands_inside() {
        let g = TileGrid::square(64.0, 2, 3).unwrap();
        let p = g.clamp(GeoPoint::new(1e6, -1e6));
        assert_eq!(g.tile_of(p).unwrap(), TileIndex::new(0, 2));
    }

    fn arb_grid() -> impl Strategy<Value = TileGrid> {
        (1.0f64..200.0, 1usize..40, 1usize..40, -1e4f64..1e4, -1e4f64..1e4).prop_map(
            |(size, rows, cols, ox, oy)| {
                TileGrid::new(GeoPoint::new(ox, oy), size, rows, cols).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn center_round_trips(grid in arb_grid(), r in 0usize..40, c in 0usize..40) {
            let k = TileIndex::new(r % grid.rows(), c % grid.cols());
            prop_assert_eq!(grid.tile_of(grid.tile_center(k).unwrap()).unwrap(), k);
        }

        #[test]
        fn in_bounds_points_have_one_owner(grid in arb_grid(), u in 0.0f64..1.0, v in 0.0f64..1.0) {
            let p = GeoPoint::new(
                grid.origin().x + u * grid.width(),
                grid.origin().y + v * grid.height(),
            );
            prop_assume!(grid.contains(p));
            let owner = grid.tile_of(p).unwrap();
            for i in 0..grid.num_tiles() {
                let k = grid.from_linear(i);
                let class = grid.classify_pair(k, p).unwrap();
                if k == owner {
                    prop_assert_ne!(class, PairClass::Negative);
                } else {
                    prop_assert_eq!(class, PairClass::Negative);
                }
            }
        }

        #[test]
        fn area_is_sum_of_tiles(grid in arb_grid()) {
            let tile_km2 = grid.tile_size() * grid.tile_size() / 1e6;
            let total: f64 = (0..grid.num_tiles()).map(|_| tile_km2).sum();
            prop_assert!((grid.area_km2() - total).abs() <= 1e-9 * total.max(1.0));
        }
    }
}

use std::path::Path as FsPath;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GeoPoint, Offset, TileGrid};
use crate::rng::{stream, stream_rng};

/// Mean Earth radius used for the equirectangular waypoint projection.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Ground-truth trajectory, one waypoint per measurement step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    waypoints: Vec<GeoPoint>,
}

impl Path {
    pub fn new(grid: &TileGrid, waypoints: Vec<GeoPoint>) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::config(format!(
                "a path needs at least 2 waypoints, got {}",
                waypoints.len()
            )));
        }
        if let Some((i, p)) = waypoints.iter().enumerate().find(|(_, p)| !grid.contains(**p)) {
            return Err(Error::config(format!(
                "waypoint {i} at ({:.1}, {:.1}) lies outside the grid",
                p.x, p.y
            )));
        }
        Ok(Path { waypoints })
    }

    pub fn waypoints(&self) -> &[GeoPoint] {
        &self.waypoints
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn displacements(&self) -> impl Iterator<Item = Offset> + '_ {
        self.waypoints.windows(2).map(|w| w[1] - w[0])
    }

    pub fn length_m(&self) -> f64 {
        self.displacements().map(|d| d.norm()).sum()
    }
}

/// Correlated random walk: the heading drifts by `N(0, turn_sigma)` radians
/// per step and every segment is exactly `step_length_m` long. A step that
/// would leave the grid has its offending heading component mirrored.
pub fn generate_path(
    grid: &TileGrid,
    num_steps: usize,
    step_length_m: f64,
    turn_sigma: f64,
    seed: u64,
) -> Result<Path> {
    if num_steps < 2 {
        return Err(Error::config(format!("num_steps must be >= 2, got {num_steps}")));
    }
    let half_span = grid.width().min(grid.height()) / 2.0;
    if !(step_length_m > 0.0 && step_length_m < half_span) {
        return Err(Error::config(format!(
            "step length {step_length_m} m must be positive and below half the grid span ({half_span} m)"
        )));
    }
    if !(turn_sigma.is_finite() && turn_sigma >= 0.0) {
        return Err(Error::config(format!("turn_sigma must be >= 0, got {turn_sigma}")));
    }

    let mut rng = stream_rng(seed, stream::PATH, 0);
    let o = grid.origin();
    let start = GeoPoint::new(
        o.x + grid.width() * rng.random_range(0.25..0.75),
        o.y + grid.height() * rng.random_range(0.25..0.75),
    );
    let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let turn = Normal::new(0.0, turn_sigma).expect("turn_sigma checked");

    let (x_hi, y_hi) = (o.x + grid.width(), o.y + grid.height());
    let mut waypoints = Vec::with_capacity(num_steps);
    waypoints.push(start);
    let mut p = start;
    for _ in 1..num_steps {
        heading += turn.sample(&mut rng);
        let (mut dx, mut dy) = (step_length_m * heading.cos(), step_length_m * heading.sin());
        if p.x + dx < o.x || p.x + dx >= x_hi {
            dx = -dx;
        }
        if p.y + dy < o.y || p.y + dy >= y_hi {
            dy = -dy;
        }
        heading = dy.atan2(dx);
        p = p + Offset::new(dx, dy);
        waypoints.push(p);
    }
    Path::new(grid, waypoints)
}

/// Noisy displacement per path segment: the true displacement plus per-axis
/// Gaussian noise with standard deviation `noise_frac * |displacement|`.
pub fn synth_odometry(path: &Path, noise_frac: f64, seed: u64) -> Result<Vec<Offset>> {
    if !(noise_frac.is_finite() && noise_frac >= 0.0) {
        return Err(Error::config(format!("odometry noise must be >= 0, got {noise_frac}")));
    }
    Ok(path
        .displacements()
        .enumerate()
        .map(|(i, d)| {
            if noise_frac == 0.0 {
                return d;
            }
            let mut rng = stream_rng(seed, stream::ODOMETRY, i as u64);
            let s = noise_frac * d.norm();
            let nx: f64 = StandardNormal.sample(&mut rng);
            let ny: f64 = StandardNormal.sample(&mut rng);
            d + Offset::new(s * nx, s * ny)
        })
        .collect())
}

/// Latitude/longitude of the grid origin, for waypoint files in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoOrigin {
    pub lat: f64,
    pub lon: f64,
}

impl GeoOrigin {
    /// Equirectangular projection: x east, y north, meters from the origin.
    pub fn project(&self, lat: f64, lon: f64) -> Offset {
        let phi0 = self.lat.to_radians();
        Offset::new(
            EARTH_RADIUS_M * (lon - self.lon).to_radians() * phi0.cos(),
            EARTH_RADIUS_M * (lat - self.lat).to_radians(),
        )
    }
}

/// Reads a waypoint CSV with an `x,y` (meters) or `lat,lon` (degrees) header.
pub fn read_waypoints(
    path: &FsPath,
    grid: &TileGrid,
    geo_origin: Option<GeoOrigin>,
) -> Result<Path> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    let geographic = match cols.as_slice() {
        ["x", "y"] => false,
        ["lat", "lon"] => true,
        _ => {
            return Err(Error::format(
                path,
                format!("expected header `x,y` or `lat,lon`, got `{}`", cols.join(",")),
            ))
        }
    };
    let origin = match (geographic, geo_origin) {
        (true, None) => {
            return Err(Error::config(
                "lat,lon waypoints need `geo_origin` in the scenario config",
            ))
        }
        (_, o) => o,
    };

    let mut waypoints = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let field = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::format(path, format!("row {}: bad number", line + 2)))
        };
        let (a, b) = (field(0)?, field(1)?);
        let p = match origin {
            Some(o) if geographic => grid.origin() + o.project(a, b),
            _ => GeoPoint::new(a, b),
        };
        waypoints.push(p);
    }
    Path::new(grid, waypoints)
}

fn csv_error(path: &FsPath, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::io(path, source),
            _ => unreachable!(),
        }
    } else {
        Error::format(path, e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn chicago() -> TileGrid {
        TileGrid::square(TileGrid::CHICAGO_TILE_M, 256, 256).unwrap()
    }

    #[test]
    fn two_steps_is_one_segment() {
        let p = generate_path(&chicago(), 2, 250.0, 0.3, 1).unwrap();
        assert_eq!(p.len(), 2);
        assert!((p.length_m() - 250.0).abs() < 1e-9);
    }

    #[test]
    fn generation_is_deterministic() {
        let g = chicago();
        assert_eq!(generate_path(&g, 50, 250.0, 0.3, 4).unwrap(), generate_path(&g, 50, 250.0, 0.3, 4).unwrap());
        assert_ne!(generate_path(&g, 50, 250.0, 0.3, 4).unwrap(), generate_path(&g, 50, 250.0, 0.3, 5).unwrap());
    }

    #[test]
    fn c2_scale_path() {
        let p = generate_path(&chicago(), 104, 350.0, 0.3, 2).unwrap();
        assert_eq!(p.len(), 104);
        assert!((p.length_m() / 1000.0 - 36.0).abs() < 0.5, "{}", p.length_m());
    }

    #[test]
    fn reflection_keeps_path_in_small_grid() {
        let g = TileGrid::square(64.0, 8, 8).unwrap();
        for seed in 0..20 {
            let p = generate_path(&g, 200, 200.0, 1.0, seed).unwrap();
            for d in p.displacements() {
                assert!((d.norm() - 200.0).abs() < 1e-9);
            }
        }
        assert!(generate_path(&g, 10, 300.0, 0.1, 0).is_err());
        assert!(generate_path(&g, 1, 100.0, 0.1, 0).is_err());
    }

    #[test]
    fn zero_noise_odometry_is_exact() {
        let p = generate_path(&chicago(), 20, 250.0, 0.3, 8).unwrap();
        let odo = synth_odometry(&p, 0.0, 1).unwrap();
        assert_eq!(odo, p.displacements().collect::<Vec<_>>());
        assert_eq!(synth_odometry(&p, 0.05, 3).unwrap(), synth_odometry(&p, 0.05, 3).unwrap());
    }

    #[test]
    fn dead_reckoning_drift_grows_like_sqrt_t() {
        // Straight path of 40 steps of 100 m, noise 5%: per-step std 5 m per
        // axis, so the 2-D RMS drift after t steps is 5 * sqrt(2 t).
        let g = TileGrid::square(64.0, 100, 100).unwrap();
        let wp: Vec<GeoPoint> = (0..41).map(|i| GeoPoint::new(100.0 + 100.0 * i as f64, 3000.0)).collect();
        let path = Path::new(&g, wp).unwrap();
        let truth: Vec<Offset> = path.displacements().collect();
        let runs = 1000;
        let mut sq = [0.0f64; 40];
        for seed in 0..runs {
            let odo = synth_odometry(&path, 0.05, seed).unwrap();
            let (mut ex, mut ey) = (0.0, 0.0);
            for t in 0..40 {
                ex += odo[t].dx - truth[t].dx;
                ey += odo[t].dy - truth[t].dy;
                sq[t] += ex * ex + ey * ey;
            }
        }
        for t in [0usize, 9, 39] {
            let rms = (sq[t] / runs as f64).sqrt();
            let want = 5.0 * (2.0 * (t + 1) as f64).sqrt();
            assert!((rms / want - 1.0).abs() < 0.08, "t={t}: {rms} vs {want}");
        }
    }

    #[test]
    fn reads_xy_and_latlon_waypoints() {
        let g = chicago();
        let dir = tempfile::tempdir().unwrap();
        let xy = dir.path().join("xy.csv");
        std::fs::File::create(&xy).unwrap().write_all(b"x,y\n100,200\n350.5,200\n").unwrap();
        let p = read_waypoints(&xy, &g, None).unwrap();
        assert_eq!(p.waypoints(), &[GeoPoint::new(100.0, 200.0), GeoPoint::new(350.5, 200.0)]);

        let ll = dir.path().join("ll.csv");
        std::fs::File::create(&ll).unwrap().write_all(b"lat,lon\n41.8800,-87.6300\n41.8809,-87.6300\n").unwrap();
        assert!(read_waypoints(&ll, &g, None).is_err());
        let origin = GeoOrigin { lat: 41.87, lon: -87.64 };
        let p = read_waypoints(&ll, &g, Some(origin)).unwrap();
        let north = p.waypoints()[1].y - p.waypoints()[0].y;
        // 0.0009 degrees of latitude is about 100 m.
        assert!((north - 100.08).abs() < 0.1, "{north}");

        let bad = dir.path().join("bad.csv");
        std::fs::File::create(&bad).unwrap().write_all(b"a,b\n1,2\n").unwrap();
        assert!(matches!(read_waypoints(&bad, &g, None), Err(Error::Format { .. })));
        assert!(matches!(read_waypoints(&dir.path().join("none.csv"), &g, None), Err(Error::Io { .. })));
    }

    #[test]
    fn out_of_grid_waypoints_rejected() {
        let g = TileGrid::square(64.0, 2, 2).unwrap();
        assert!(Path::new(&g, vec![GeoPoint::new(1.0, 1.0), GeoPoint::new(200.0, 1.0)]).is_err());
    }
}

//! Grid geometry, synthetic coastline, and the buoy network.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound of the coastal zone, in km from the nearest land pixel.
pub const COASTAL_MAX_KM: f64 = 25.0;
/// Lower bound of the open-sea zone, in km.
pub const OPEN_SEA_MIN_KM: f64 = 76.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub spacing_km: f64,
}

impl Grid {
    pub fn new(height: usize, width: usize, spacing_km: f64) -> Result<Self> {
        if height < 8 || width < 8 {
            return Err(Error::invalid(format!("grid {height}x{width} is too small (minimum 8x8)")));
        }
        if !(spacing_km > 0.0 && spacing_km.is_finite()) {
            return Err(Error::invalid(format!("grid spacing must be positive, got {spacing_km}")));
        }
        Ok(Self { height, width, spacing_km })
    }

    /// `(north-south, east-west)` extent in km.
    pub fn extent_km(&self) -> (f64, f64) {
        (self.height as f64 * self.spacing_km, self.width as f64 * self.spacing_km)
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Column profile of the land boundary: pixel `(i, j)` is land iff
/// `j < base_col + amplitude * sin(2π i / wavelength_rows)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoastlineSpec {
    pub base_col: f64,
    pub amplitude: f64,
    pub wavelength_rows: f64,
}

impl CoastlineSpec {
    pub fn straight(col: f64) -> Self {
        Self { base_col: col, amplitude: 0.0, wavelength_rows: 1.0 }
    }

    pub fn boundary(&self, row: usize) -> f64 {
        if self.amplitude == 0.0 {
            return self.base_col;
        }
        self.base_col + self.amplitude * (std::f64::consts::TAU * row as f64 / self.wavelength_rows).sin()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandSeaMask {
    grid: Grid,
    land: Array2<bool>,
    coast_distance_km: Array2<f64>,
}

impl LandSeaMask {
    /// Build a mask from an explicit land raster, computing coast distances.
    pub fn from_land(grid: Grid, land: Array2<bool>) -> Result<Self> {
        if land.dim() != (grid.height, grid.width) {
            return Err(Error::Shape(format!("land raster {:?} vs grid {}x{}", land.dim(), grid.height, grid.width)));
        }
        let n_land = land.iter().filter(|&&l| l).count();
        if n_land == 0 {
            return Err(Error::invalid("coastline leaves no land pixel"));
        }
        if n_land == land.len() {
            return Err(Error::invalid("coastline leaves no sea pixel"));
        }
        let d2 = squared_distance_to_land(&land);
        let coast_distance_km = Array2::from_shape_fn(land.dim(), |(i, j)| {
            if land[[i, j]] {
                0.0
            } else {
                (d2[[i, j]].sqrt() - 1.0) * grid.spacing_km
            }
        });
        Ok(Self { grid, land, coast_distance_km })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn land(&self) -> &Array2<bool> {
        &self.land
    }

    pub fn is_land(&self, row: usize, col: usize) -> bool {
        self.land[[row, col]]
    }

    /// Distance to the nearest land pixel, zero for land and for sea pixels
    /// touching land.
    pub fn coast_distance_km(&self) -> &Array2<f64> {
        &self.coast_distance_km
    }

    pub fn land_fraction(&self) -> f64 {
        self.land.iter().filter(|&&l| l).count() as f64 / self.land.len() as f64
    }

    pub fn n_sea(&self) -> usize {
        self.land.iter().filter(|&&l| !l).count()
    }

    /// Sea indicator as 0/1 values in row-major order.
    pub fn sea_indicator(&self) -> Vec<f64> {
        self.land.iter().map(|&l| if l { 0.0 } else { 1.0 }).collect()
    }
}

pub fn synth_landsea(grid: Grid, spec: &CoastlineSpec) -> Result<LandSeaMask> {
    let land = Array2::from_shape_fn((grid.height, grid.width), |(i, j)| (j as f64) < spec.boundary(i));
    LandSeaMask::from_land(grid, land)
}

/// Exact squared Euclidean distance (in pixels) from every pixel to the
/// nearest `true` pixel, by two passes of the lower-envelope transform.
fn squared_distance_to_land(land: &Array2<bool>) -> Array2<f64> {
    let (h, w) = land.dim();
    let inf = ((h * h + w * w) as f64) * 4.0;
    let mut d = Array2::from_shape_fn((h, w), |(i, j)| if land[[i, j]] { 0.0 } else { inf });
    let mut buf = Vec::new();
    for j in 0..w {
        buf.clear();
        buf.extend((0..h).map(|i| d[[i, j]]));
        let out = envelope_1d(&buf);
        for i in 0..h {
            d[[i, j]] = out[i];
        }
    }
    for i in 0..h {
        buf.clear();
        buf.extend((0..w).map(|j| d[[i, j]]));
        let out = envelope_1d(&buf);
        for j in 0..w {
            d[[i, j]] = out[j];
        }
    }
    d
}

fn envelope_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let meet = |q: usize, p: usize| {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf))
    };
    for q in 1..n {
        let mut s = meet(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = meet(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut out = vec![0.0; n];
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *o = dq * dq + f[v[k]];
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Zone {
    Coastal,
    NearSea,
    OpenSea,
}

impl Zone {
    pub const ALL: [Zone; 3] = [Zone::Coastal, Zone::NearSea, Zone::OpenSea];

    pub fn classify(coast_distance_km: f64) -> Zone {
        if coast_distance_km < COASTAL_MAX_KM {
            Zone::Coastal
        } else if coast_distance_km < OPEN_SEA_MIN_KM {
            Zone::NearSea
        } else {
            Zone::OpenSea
        }
    }

    /// Number of buoys of this zone in the default network.
    pub fn default_count(self) -> usize {
        match self {
            Zone::Coastal => 4,
            Zone::NearSea => 4,
            Zone::OpenSea => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Zone::Coastal => "Coastal",
            Zone::NearSea => "NearSea",
            Zone::OpenSea => "OpenSea",
        }
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Zone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Zone::ALL
            .into_iter()
            .find(|z| z.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown zone {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Buoy {
    pub id: u32,
    pub row: usize,
    pub col: usize,
    pub zone: Zone,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuoyNetwork {
    buoys: Vec<Buoy>,
}

impl BuoyNetwork {
    /// Validate a buoy list against a mask.
    pub fn new(buoys: Vec<Buoy>, landsea: &LandSeaMask) -> Result<Self> {
        let g = landsea.grid();
        let mut ids = std::collections::HashSet::new();
        for b in &buoys {
            if b.row >= g.height || b.col >= g.width {
                return Err(Error::invalid(format!("buoy {} at ({}, {}) is off the grid", b.id, b.row, b.col)));
            }
            if landsea.is_land(b.row, b.col) {
                return Err(Error::invalid(format!("buoy {} at ({}, {}) sits on land", b.id, b.row, b.col)));
            }
            if !ids.insert(b.id) {
                return Err(Error::invalid(format!("duplicate buoy id {}", b.id)));
            }
            let expected = Zone::classify(landsea.coast_distance_km()[[b.row, b.col]]);
            if expected != b.zone {
                return Err(Error::invalid(format!("buoy {} labelled {} but lies in {}", b.id, b.zone, expected)));
            }
        }
        Ok(Self { buoys })
    }

    pub fn buoys(&self) -> &[Buoy] {
        &self.buoys
    }

    pub fn len(&self) -> usize {
        self.buoys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buoys.is_empty()
    }

    /// Row-major pixel indices `row * width + col`.
    pub fn pixel_indices(&self, width: usize) -> Vec<usize> {
        self.buoys.iter().map(|b| b.row * width + b.col).collect()
    }

    /// Sub-network of the buoys accepted by `keep`.
    pub fn filtered(&self, keep: impl Fn(&Buoy) -> bool) -> BuoyNetwork {
        BuoyNetwork { buoys: self.buoys.iter().copied().filter(|b| keep(b)).collect() }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["id", "row", "col", "zone"]).map_err(|e| csv_err(path, e))?;
        for b in &self.buoys {
            w.write_record([b.id.to_string(), b.row.to_string(), b.col.to_string(), b.zone.to_string()])
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, landsea: &LandSeaMask) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
        if header.iter().collect::<Vec<_>>() != ["id", "row", "col", "zone"] {
            return Err(Error::format(path, format!("unexpected header {header:?}")));
        }
        let mut buoys = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let parse = |k: usize| -> Result<usize> {
                rec[k].parse().map_err(|_| Error::format(path, format!("bad integer {:?}", &rec[k])))
            };
            buoys.push(Buoy { id: parse(0)? as u32, row: parse(1)?, col: parse(2)?, zone: rec[3].parse()? });
        }
        Self::new(buoys, landsea)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

/// Stratified placement of the default 13-buoy network.
///
/// Each zone gets its buoys on evenly spaced rows (staggered between zones,
/// with a seeded one-row jitter); within a row the buoy goes to the sea pixel
/// whose coast distance is closest to the zone's centerline.
pub fn default_buoys(landsea: &LandSeaMask, seed: u64) -> Result<BuoyNetwork> {
    let g = landsea.grid();
    let dist = landsea.coast_distance_km();
    let max_dist = dist.iter().cloned().fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buoys = Vec::new();
    let mut taken = std::collections::HashSet::new();
    for (zi, zone) in Zone::ALL.into_iter().enumerate() {
        let target = match zone {
            Zone::Coastal => 0.5 * COASTAL_MAX_KM,
            Zone::NearSea => 0.5 * (COASTAL_MAX_KM + OPEN_SEA_MIN_KM),
            Zone::OpenSea => 0.5 * (OPEN_SEA_MIN_KM + max_dist),
        };
        let n = zone.default_count();
        for k in 0..n {
            let frac = (k as f64 + 0.25 + 0.25 * zi as f64) / n as f64;
            let jitter: i64 = rng.random_range(-1..=1);
            let base_row = ((frac * g.height as f64) as i64 + jitter).clamp(0, g.height as i64 - 1) as usize;
            let pick = (0..g.height)
                .map(|off| {
                    // Scan outwards from the nominal row until the zone is reachable there.
                    let up = off % 2 == 0;
                    let step = off.div_ceil(2) as i64;
                    let r = base_row as i64 + if up { step } else { -step };
                    r.rem_euclid(g.height as i64) as usize
                })
                .find_map(|r| {
                    (0..g.width)
                        .filter(|&c| !landsea.is_land(r, c) && Zone::classify(dist[[r, c]]) == zone && !taken.contains(&(r, c)))
                        .min_by(|&a, &b| (dist[[r, a]] - target).abs().total_cmp(&(dist[[r, b]] - target).abs()))
                        .map(|c| (r, c))
                });
            let (row, col) = pick.ok_or_else(|| Error::invalid(format!("no {zone} pixel available for buoy placement")))?;
            taken.insert((row, col));
            buoys.push(Buoy { id: buoys.len() as u32 + 1, row, col, zone });
        }
    }
    BuoyNetwork::new(buoys, landsea)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_distance(land: &Array2<bool>, i: usize, j: usize) -> f64 {
        let mut best = f64::INFINITY;
        for ((a, b), &l) in land.indexed_iter() {
            if l {
                let d = ((a as f64 - i as f64).powi(2) + (b as f64 - j as f64).powi(2)).sqrt();
                best = best.min(d);
            }
        }
        best
    }

    pub(crate) fn wavy() -> CoastlineSpec {
        CoastlineSpec { base_col: 16.0, amplitude: 3.0, wavelength_rows: 64.0 }
    }

    #[test]
    fn grid_extent_and_bounds() {
        let g = Grid::new(64, 64, 3.0).unwrap();
        assert_eq!(g.extent_km(), (192.0, 192.0));
        let big = Grid::new(215, 215, 3.0).unwrap();
        assert!((big.extent_km().0 - 645.0).abs() < 1e-9);
        assert!(Grid::new(4, 64, 3.0).is_err());
        assert!(Grid::new(64, 64, 0.0).is_err());
    }

    #[test]
    fn straight_coast_fraction_and_rays() {
        let g = Grid::new(64, 64, 3.0).unwrap();
        let m = synth_landsea(g, &CoastlineSpec::straight(16.0)).unwrap();
        assert!((m.land_fraction() - 0.25).abs() < 1e-12);
        let d = m.coast_distance_km();
        for i in 0..64 {
            assert_eq!(d[[i, 16]], 0.0);
            for j in 17..64 {
                assert!(d[[i, j]] >= d[[i, j - 1]]);
                assert!((d[[i, j]] - (j - 16) as f64 * 3.0).abs() < 1e-9);
            }
        }
        assert!(synth_landsea(g, &CoastlineSpec::straight(0.0)).is_err());
        assert!(synth_landsea(g, &CoastlineSpec::straight(80.0)).is_err());
    }

    #[test]
    fn transform_matches_brute_force() {
        let g = Grid::new(40, 48, 3.0).unwrap();
        let m = synth_landsea(g, &CoastlineSpec { base_col: 12.0, amplitude: 4.0, wavelength_rows: 17.0 }).unwrap();
        for ((i, j), &l) in m.land().indexed_iter() {
            let expect = if l { 0.0 } else { (brute_distance(m.land(), i, j) - 1.0) * 3.0 };
            assert!((m.coast_distance_km()[[i, j]] - expect).abs() < 1e-9, "({i},{j})");
        }
    }

    #[test]
    fn wavy_coast_ten_columns_out() {
        let g = Grid::new(64, 64, 3.0).unwrap();
        let m = synth_landsea(g, &wavy()).unwrap();
        // Near the crest and trough of the wave the coast is locally straight.
        for i in (14..19).chain(46..51) {
            let first_sea = (0..64).find(|&j| !m.is_land(i, j)).unwrap();
            let d = m.coast_distance_km()[[i, first_sea + 10]];
            let oracle = (brute_distance(m.land(), i, first_sea + 10) - 1.0) * 3.0;
            assert!((d - oracle).abs() < 1e-9);
            assert!((d - 30.0).abs() <= 3.0, "row {i}: {d}");
        }
    }

    #[test]
    fn default_network_layout() {
        let g = Grid::new(64, 64, 3.0).unwrap();
        let m = synth_landsea(g, &wavy()).unwrap();
        let net = default_buoys(&m, 7).unwrap();
        assert_eq!(net.len(), 13);
        for z in Zone::ALL {
            assert_eq!(net.buoys().iter().filter(|b| b.zone == z).count(), z.default_count());
        }
        for b in net.buoys() {
            assert!(!m.is_land(b.row, b.col));
            assert_eq!(Zone::classify(m.coast_distance_km()[[b.row, b.col]]), b.zone);
        }
        assert_eq!(net, default_buoys(&m, 7).unwrap());
    }

    #[test]
    fn buoy_csv_round_trip() {
        let g = Grid::new(64, 64, 3.0).unwrap();
        let m = synth_landsea(g, &wavy()).unwrap();
        let net = default_buoys(&m, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("buoys.csv");
        net.write_csv(&p).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("id,row,col,zone\n"));
        assert_eq!(BuoyNetwork::read_csv(&p, &m).unwrap(), net);
    }

    #[test]
    fn rejects_bad_buoys() {
        let g = Grid::new(16, 16, 10.0).unwrap();
        let m = synth_landsea(g, &CoastlineSpec::straight(4.0)).unwrap();
        let on_land = Buoy { id: 1, row: 0, col: 0, zone: Zone::Coastal };
        assert!(BuoyNetwork::new(vec![on_land], &m).is_err());
        let mislabelled = Buoy { id: 1, row: 0, col: 4, zone: Zone::OpenSea };
        assert!(BuoyNetwork::new(vec![mislabelled], &m).is_err());
        let ok = Buoy { id: 1, row: 0, col: 4, zone: Zone::Coastal };
        assert!(BuoyNetwork::new(vec![ok, ok], &m).is_err());
    }
}

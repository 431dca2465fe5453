//! Fixed-radius neighbor queries over static point sets.
//!
//! Points are bucketed into a lat/lon grid whose cells are at least one
//! query radius wide. Entries are stored sorted by cell key, so a query
//! scans a handful of contiguous runs (one per grid row it touches) and
//! confirms each candidate with the exact haversine distance.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Display;
use std::hash::Hash;

use thiserror::Error;

use crate::geo::{haversine_distance, GeoPoint, EARTH_RADIUS_M, METERS_PER_DEGREE};
use crate::par::{self, Parallelism};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndexError {
    #[error("duplicate id in index input: {0}")]
    DuplicateId(String),
    #[error("radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("query radius {requested} m exceeds the index maximum of {max} m")]
    RadiusExceedsMax { requested: f64, max: f64 },
}

/// One query hit.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor<I> {
    pub id: I,
    pub distance_m: f64,
}

/// Immutable grid index over `(GeoPoint, id)` entries.
#[derive(Debug, Clone)]
pub struct PointIndex<I> {
    keys: Vec<u64>,
    points: Vec<GeoPoint>,
    ids: Vec<I>,
    max_radius_m: f64,
    lat_step: f64,
    lon_step: f64,
    lon_cells: i64,
}

// Slack on query extents, in degrees; keeps rounding in the cell math from
// dropping a point that sits exactly on the radius.
const EXTENT_SLACK_DEG: f64 = 1e-9;

impl<I> PointIndex<I>
where
    I: Clone + Eq + Hash + Ord + Display,
{
    /// Builds an index able to answer queries up to `max_radius_m`.
    ///
    /// Layout depends only on the input order, so identical inputs give
    /// identical indexes.
    pub fn build(
        entries: impl IntoIterator<Item = (GeoPoint, I)>,
        max_radius_m: f64,
    ) -> Result<Self, IndexError> {
        if !(max_radius_m.is_finite() && max_radius_m > 0.0) {
            return Err(IndexError::InvalidRadius(max_radius_m));
        }
        let entries: Vec<(GeoPoint, I)> = entries.into_iter().collect();
        {
            let mut seen = HashSet::with_capacity(entries.len());
            for (_, id) in &entries {
                if !seen.insert(id) {
                    return Err(IndexError::DuplicateId(id.to_string()));
                }
            }
        }

        let lat_step = (max_radius_m / METERS_PER_DEGREE).min(180.0);
        let max_abs_lat = entries
            .iter()
            .map(|(p, _)| p.lat().abs())
            .fold(0.0_f64, f64::max);
        let cos_lat = max_abs_lat.to_radians().cos();
        let min_lon_step = if cos_lat > 1e-12 { lat_step / cos_lat } else { 360.0 };
        let lon_cells = ((360.0 / min_lon_step).floor() as i64).max(1);
        let lon_step = 360.0 / lon_cells as f64;

        let mut index = PointIndex {
            keys: Vec::new(),
            points: Vec::new(),
            ids: Vec::new(),
            max_radius_m,
            lat_step,
            lon_step,
            lon_cells,
        };
        let mut keyed: Vec<(u64, usize)> = entries
            .iter()
            .enumerate()
            .map(|(i, (p, _))| (index.cell_key(index.row_of(p.lat()), index.col_of(p.lon())), i))
            .collect();
        keyed.sort_unstable();
        index.keys = keyed.iter().map(|&(k, _)| k).collect();
        index.points = keyed.iter().map(|&(_, i)| entries[i].0).collect();
        index.ids = keyed.iter().map(|&(_, i)| entries[i].1.clone()).collect();
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max_radius(&self) -> f64 {
        self.max_radius_m
    }

    /// All stored entries in storage order.
    pub fn entries(&self) -> impl Iterator<Item = (&GeoPoint, &I)> {
        self.points.iter().zip(self.ids.iter())
    }

    fn row_of(&self, lat: f64) -> i64 {
        ((lat + 90.0) / self.lat_step).floor() as i64
    }

    fn col_of(&self, lon: f64) -> i64 {
        (((lon + 180.0) / self.lon_step).floor() as i64).rem_euclid(self.lon_cells)
    }

    fn cell_key(&self, row: i64, col: i64) -> u64 {
        ((row as u64) << 32) | (col as u64)
    }

    fn check_radius(&self, radius_m: f64) -> Result<(), IndexError> {
        if !(radius_m.is_finite() && radius_m > 0.0) {
            return Err(IndexError::InvalidRadius(radius_m));
        }
        if radius_m > self.max_radius_m {
            return Err(IndexError::RadiusExceedsMax {
                requested: radius_m,
                max: self.max_radius_m,
            });
        }
        Ok(())
    }

    /// Calls `visit(position, distance)` for every entry within `radius_m`
    /// (inclusive). Positions index into storage order.
    fn visit_within(&self, center: GeoPoint, radius_m: f64, mut visit: impl FnMut(usize, f64)) {
        if self.points.is_empty() {
            return;
        }
        let theta = radius_m / EARTH_RADIUS_M;
        let dlat = theta.to_degrees() + EXTENT_SLACK_DEG;
        let row_lo = self.row_of((center.lat() - dlat).max(-90.0));
        let row_hi = self.row_of((center.lat() + dlat).min(90.0));

        // Longitude half-width of the spherical cap around the center.
        let phi = center.lat().to_radians();
        let cap_reaches_pole = center.lat().abs() + dlat >= 90.0;
        let ratio = theta.sin() / phi.cos();
        let col_ranges: Vec<(i64, i64)> = if cap_reaches_pole || ratio >= 1.0 {
            vec![(0, self.lon_cells - 1)]
        } else {
            let dlon = ratio.asin().to_degrees() + EXTENT_SLACK_DEG;
            let lo = ((center.lon() - dlon + 180.0) / self.lon_step).floor() as i64;
            let hi = ((center.lon() + dlon + 180.0) / self.lon_step).floor() as i64;
            if hi - lo + 1 >= self.lon_cells {
                vec![(0, self.lon_cells - 1)]
            } else {
                let (lo_w, hi_w) = (lo.rem_euclid(self.lon_cells), hi.rem_euclid(self.lon_cells));
                if lo_w <= hi_w {
                    vec![(lo_w, hi_w)]
                } else {
                    vec![(0, hi_w), (lo_w, self.lon_cells - 1)]
                }
            }
        };

        for row in row_lo..=row_hi {
            for &(c_lo, c_hi) in &col_ranges {
                let k_lo = self.cell_key(row, c_lo);
                let k_hi = self.cell_key(row, c_hi);
                let start = self.keys.partition_point(|&k| k < k_lo);
                let end = start + self.keys[start..].partition_point(|&k| k <= k_hi);
                for pos in start..end {
                    let d = haversine_distance(center, self.points[pos]);
                    if d <= radius_m {
                        visit(pos, d);
                    }
                }
            }
        }
    }

    /// Ids within `radius_m` of `center` (inclusive), sorted by (distance, id).
    pub fn radius_query(&self, center: GeoPoint, radius_m: f64) -> Result<Vec<Neighbor<I>>, IndexError> {
        self.check_radius(radius_m)?;
        let mut hits = Vec::new();
        self.visit_within(center, radius_m, |pos, d| {
            hits.push(Neighbor {
                id: self.ids[pos].clone(),
                distance_m: d,
            })
        });
        hits.sort_by(|a, b| a.distance_m.total_cmp(&b.distance_m).then_with(|| a.id.cmp(&b.id)));
        Ok(hits)
    }

    /// Number of entries within the radius.
    pub fn radius_count(&self, center: GeoPoint, radius_m: f64) -> Result<usize, IndexError> {
        self.check_radius(radius_m)?;
        let mut n = 0;
        self.visit_within(center, radius_m, |_, _| n += 1);
        Ok(n)
    }

    /// Group counts of the in-radius ids by `key_of`.
    pub fn radius_count_by_key<K, F>(
        &self,
        center: GeoPoint,
        radius_m: f64,
        key_of: F,
    ) -> Result<BTreeMap<K, usize>, IndexError>
    where
        K: Ord,
        F: Fn(&I) -> K,
    {
        self.check_radius(radius_m)?;
        let mut counts = BTreeMap::new();
        self.visit_within(center, radius_m, |pos, _| {
            *counts.entry(key_of(&self.ids[pos])).or_insert(0) += 1;
        });
        Ok(counts)
    }

    /// Unsorted ids within the radius, in storage order.
    pub fn ids_within(&self, center: GeoPoint, radius_m: f64) -> Result<Vec<I>, IndexError> {
        self.check_radius(radius_m)?;
        let mut out = Vec::new();
        self.visit_within(center, radius_m, |pos, _| out.push(self.ids[pos].clone()));
        Ok(out)
    }
}

impl<I> PointIndex<I>
where
    I: Clone + Eq + Hash + Ord + Display + Send + Sync,
{
    /// One [`radius_query`](Self::radius_query) per center, in center order.
    pub fn query_many(
        &self,
        centers: &[GeoPoint],
        radius_m: f64,
        mode: Parallelism,
    ) -> Result<Vec<Vec<Neighbor<I>>>, IndexError> {
        self.check_radius(radius_m)?;
        par::try_map_slice(centers, mode, |&c| self.radius_query(c, radius_m))
    }

    /// One [`radius_count`](Self::radius_count) per center, in center order.
    pub fn count_many(
        &self,
        centers: &[GeoPoint],
        radius_m: f64,
        mode: Parallelism,
    ) -> Result<Vec<usize>, IndexError> {
        self.check_radius(radius_m)?;
        par::try_map_slice(centers, mode, |&c| self.radius_count(c, radius_m))
    }
}

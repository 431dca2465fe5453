//! Geometric primitives on WGS84 coordinates.
//!
//! Distances are great-circle distances on a sphere of mean Earth radius.
//! Polygon tests are planar in (lon, lat) degree space, which is accurate
//! for city-scale regions away from the poles and the antimeridian.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Meters spanned by one degree of latitude on the sphere.
pub const METERS_PER_DEGREE: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("latitude out of range: {0}")]
    LatitudeOutOfRange(f64),
    #[error("longitude out of range: {0}")]
    LongitudeOutOfRange(f64),
    #[error("ring has {0} distinct vertices, need at least 3")]
    TooFewVertices(usize),
}

/// A validated WGS84 coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint", into = "RawPoint")]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = GeoError;
    fn try_from(raw: RawPoint) -> Result<Self, GeoError> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl From<GeoPoint> for RawPoint {
    fn from(p: GeoPoint) -> Self {
        RawPoint { lat: p.lat, lon: p.lon }
    }
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::LatitudeOutOfRange(lat));
        }
        if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::LongitudeOutOfRange(lon));
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Total order on (lat, lon); used to canonicalize argument order.
    fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.lat
            .total_cmp(&other.lat)
            .then(self.lon.total_cmp(&other.lon))
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lat, self.lon)
    }
}

/// Great-circle distance in meters (haversine formula).
///
/// Arguments are put in a canonical order first, so the result is bitwise
/// symmetric.
pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let (a, b) = if a.canonical_cmp(&b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    };
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let s_phi = (dphi * 0.5).sin();
    let s_lambda = (dlambda * 0.5).sin();
    let h = s_phi * s_phi + phi1.cos() * phi2.cos() * s_lambda * s_lambda;
    2.0 * EARTH_RADIUS_M * h.clamp(0.0, 1.0).sqrt().asin()
}

/// Axis-aligned bounds in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    /// Bounds of a non-empty point set; `None` when empty.
    pub fn of_points<'a>(points: impl IntoIterator<Item = &'a GeoPoint>) -> Option<Self> {
        let mut iter = points.into_iter();
        let first = iter.next()?;
        let mut bbox = BoundingBox {
            min_lat: first.lat,
            max_lat: first.lat,
            min_lon: first.lon,
            max_lon: first.lon,
        };
        for p in iter {
            bbox.min_lat = bbox.min_lat.min(p.lat);
            bbox.max_lat = bbox.max_lat.max(p.lat);
            bbox.min_lon = bbox.min_lon.min(p.lon);
            bbox.max_lon = bbox.max_lon.max(p.lon);
        }
        Some(bbox)
    }

    /// Inclusive containment.
    pub fn contains(&self, p: &GeoPoint) -> bool {
        p.lat >= self.min_lat && p.lat <= self.max_lat && p.lon >= self.min_lon && p.lon <= self.max_lon
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            min_lat: self.min_lat.min(other.min_lat),
            max_lat: self.max_lat.max(other.max_lat),
            min_lon: self.min_lon.min(other.min_lon),
            max_lon: self.max_lon.max(other.max_lon),
        }
    }
}

/// A polygon with an implicitly closed exterior ring and optional holes.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    exterior: Vec<GeoPoint>,
    holes: Vec<Vec<GeoPoint>>,
}

impl Polygon {
    /// Builds a polygon. A closing vertex equal to the first one is dropped;
    /// every ring must keep at least three distinct vertices.
    pub fn new(exterior: Vec<GeoPoint>, holes: Vec<Vec<GeoPoint>>) -> Result<Self, GeoError> {
        let exterior = open_ring(exterior)?;
        let holes = holes.into_iter().map(open_ring).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { exterior, holes })
    }

    pub fn exterior(&self) -> &[GeoPoint] {
        &self.exterior
    }

    pub fn holes(&self) -> &[Vec<GeoPoint>] {
        &self.holes
    }

    pub fn rings(&self) -> impl Iterator<Item = &[GeoPoint]> {
        std::iter::once(self.exterior.as_slice()).chain(self.holes.iter().map(Vec::as_slice))
    }
}

fn open_ring(mut ring: Vec<GeoPoint>) -> Result<Vec<GeoPoint>, GeoError> {
    while ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    let mut distinct: Vec<(u64, u64)> = ring
        .iter()
        .map(|p| (p.lat.to_bits(), p.lon.to_bits()))
        .collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(GeoError::TooFewVertices(distinct.len()));
    }
    Ok(ring)
}

/// Tight bounds over the exterior ring.
pub fn polygon_bbox(poly: &Polygon) -> BoundingBox {
    BoundingBox::of_points(poly.exterior.iter()).expect("polygon rings are non-empty")
}

/// Inside-test with boundary points counted as inside.
///
/// Even-odd rule on (x = lon, y = lat). A point on any ring edge, holes
/// included, is inside.
pub fn point_in_polygon(p: GeoPoint, poly: &Polygon) -> bool {
    if poly.rings().any(|ring| on_ring_boundary(p, ring)) {
        return true;
    }
    if !ring_contains(p, &poly.exterior) {
        return false;
    }
    !poly.holes.iter().any(|hole| ring_contains(p, hole))
}

fn edges(ring: &[GeoPoint]) -> impl Iterator<Item = (GeoPoint, GeoPoint)> + '_ {
    ring.iter()
        .zip(ring.iter().cycle().skip(1))
        .map(|(a, b)| (*a, *b))
}

fn on_segment(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> bool {
    let cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
    cross == 0.0
        && p.lon >= a.lon.min(b.lon)
        && p.lon <= a.lon.max(b.lon)
        && p.lat >= a.lat.min(b.lat)
        && p.lat <= a.lat.max(b.lat)
}

fn on_ring_boundary(p: GeoPoint, ring: &[GeoPoint]) -> bool {
    edges(ring).any(|(a, b)| on_segment(p, a, b))
}

fn ring_contains(p: GeoPoint, ring: &[GeoPoint]) -> bool {
    let (x, y) = (p.lon, p.lat);
    let mut inside = false;
    for (a, b) in edges(ring) {
        if (a.lat > y) != (b.lat > y) {
            let x_cross = (b.lon - a.lon) * (y - a.lat) / (b.lat - a.lat) + a.lon;
            if x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

fn orientation(a: GeoPoint, b: GeoPoint, c: GeoPoint) -> f64 {
    (b.lon - a.lon) * (c.lat - a.lat) - (b.lat - a.lat) * (c.lon - a.lon)
}

fn segments_intersect(a: GeoPoint, b: GeoPoint, c: GeoPoint, d: GeoPoint) -> bool {
    let o1 = orientation(a, b, c);
    let o2 = orientation(a, b, d);
    let o3 = orientation(c, d, a);
    let o4 = orientation(c, d, b);
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
        && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0))
    {
        return true;
    }
    (o1 == 0.0 && on_segment(c, a, b))
        || (o2 == 0.0 && on_segment(d, a, b))
        || (o3 == 0.0 && on_segment(a, c, d))
        || (o4 == 0.0 && on_segment(b, c, d))
}

/// True when no two non-adjacent edges of the (implicitly closed) ring touch.
///
/// Quadratic in the vertex count.
pub fn ring_is_simple(ring: &[GeoPoint]) -> bool {
    let n = ring.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        if a == b {
            return false;
        }
        for j in (i + 1)..n {
            // adjacent edges share a vertex by construction
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (c, d) = (ring[j], ring[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Fixture tuples are (x, y) = (lon, lat).
    fn xy(x: f64, y: f64) -> GeoPoint {
        GeoPoint::new(y, x).unwrap()
    }

    fn unit_square() -> Polygon {
        Polygon::new(vec![xy(0., 0.), xy(0., 1.), xy(1., 1.), xy(1., 0.)], vec![]).unwrap()
    }

    #[test]
    fn construction_rejects_out_of_range() {
        assert_eq!(GeoPoint::new(91.0, 0.0), Err(GeoError::LatitudeOutOfRange(91.0)));
        assert!(GeoPoint::new(0.0, -180.5).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
        assert!(GeoPoint::new(-90.0, 180.0).is_ok());
    }

    #[test]
    fn haversine_examples() {
        let p = GeoPoint::new(40.7, -74.0).unwrap();
        assert_eq!(haversine_distance(p, p), 0.0);

        // oracle: R * (pi / 180)
        let one_degree = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        assert!((one_degree - 111_194.9).abs() < 0.1);
        let d = haversine_distance(xy(0., 0.), GeoPoint::new(1.0, 0.0).unwrap());
        assert!((d - one_degree).abs() < 1e-6, "{d}");

        // oracle: pi * R
        let d = haversine_distance(GeoPoint::new(0., 0.).unwrap(), GeoPoint::new(0., 180.).unwrap());
        assert!((d - 20_015_086.8).abs() < 1.0, "{d}");
        assert!((d - std::f64::consts::PI * EARTH_RADIUS_M).abs() < 1e-6);
    }

    #[test]
    fn haversine_symmetric_and_triangle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut random_point = || {
            GeoPoint::new(rng.random_range(-89.0..89.0), rng.random_range(-179.0..179.0)).unwrap()
        };
        for _ in 0..2000 {
            let (a, b, c) = (random_point(), random_point(), random_point());
            let ab = haversine_distance(a, b);
            assert_eq!(ab.to_bits(), haversine_distance(b, a).to_bits());
            let ac = haversine_distance(a, c);
            let cb = haversine_distance(c, b);
            assert!(ab <= (ac + cb) * (1.0 + 1e-6) + 1e-6);
        }
    }

    #[test]
    fn square_membership() {
        let sq = unit_square();
        assert!(point_in_polygon(xy(0.5, 0.5), &sq));
        assert!(!point_in_polygon(xy(2.0, 2.0), &sq));
        // boundary convention: inclusive
        assert!(point_in_polygon(xy(0.0, 0.5), &sq));
        assert!(point_in_polygon(xy(1.0, 1.0), &sq));
        assert!(point_in_polygon(xy(0.5, 0.0), &sq));
    }

    #[test]
    fn holes_exclude_interior_but_keep_boundary() {
        let hole = vec![xy(0.25, 0.25), xy(0.75, 0.25), xy(0.75, 0.75), xy(0.25, 0.75)];
        let poly = Polygon::new(unit_square().exterior().to_vec(), vec![hole]).unwrap();
        assert!(!point_in_polygon(xy(0.5, 0.5), &poly));
        assert!(point_in_polygon(xy(0.25, 0.5), &poly));
        assert!(point_in_polygon(xy(0.1, 0.1), &poly));
    }

    #[test]
    fn closing_vertex_dropped_and_degenerate_rejected() {
        let closed = Polygon::new(
            vec![xy(0., 0.), xy(1., 0.), xy(1., 1.), xy(0., 0.)],
            vec![],
        )
        .unwrap();
        assert_eq!(closed.exterior().len(), 3);
        assert_eq!(
            Polygon::new(vec![xy(0., 0.), xy(1., 0.), xy(0., 0.)], vec![]),
            Err(GeoError::TooFewVertices(2))
        );
    }

    #[test]
    fn bbox_examples() {
        assert_eq!(
            polygon_bbox(&unit_square()),
            BoundingBox { min_lat: 0., max_lat: 1., min_lon: 0., max_lon: 1. }
        );
        let tri = Polygon::new(vec![xy(0., 0.), xy(2., 0.), xy(1., 3.)], vec![]).unwrap();
        assert_eq!(
            polygon_bbox(&tri),
            BoundingBox { min_lat: 0., max_lat: 3., min_lon: 0., max_lon: 2. }
        );
    }

    /// Random star-shaped n-gon around (0, 0) in degree space.
    fn random_ngon(rng: &mut ChaCha8Rng, n: usize) -> Polygon {
        let ring = (0..n)
            .map(|i| {
                let theta = std::f64::consts::TAU * (i as f64 + rng.random_range(0.0..0.8)) / n as f64;
                let r = rng.random_range(0.2..1.0);
                xy(r * theta.cos(), r * theta.sin())
            })
            .collect();
        Polygon::new(ring, vec![]).unwrap()
    }

    #[test]
    fn bbox_contains_every_vertex() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for _ in 0..100 {
            let poly = random_ngon(&mut rng, 50);
            let bbox = polygon_bbox(&poly);
            assert!(poly.exterior().iter().all(|v| bbox.contains(v)));
        }
    }

    /// Independent crossing-number oracle: counts edges crossed by the
    /// rightward ray using orientation signs instead of an intercept.
    fn oracle_even_odd(p: GeoPoint, ring: &[GeoPoint]) -> bool {
        let n = ring.len();
        let mut crossings = 0usize;
        for i in 0..n {
            let a = ring[i];
            let b = ring[(i + 1) % n];
            let upward = a.lat <= p.lat && b.lat > p.lat;
            let downward = b.lat <= p.lat && a.lat > p.lat;
            let side = (b.lon - a.lon) * (p.lat - a.lat) - (p.lon - a.lon) * (b.lat - a.lat);
            if (upward && side > 0.0) || (downward && side < 0.0) {
                crossings += 1;
            }
        }
        crossings % 2 == 1
    }

    #[test]
    fn matches_ray_cast_oracle_on_random_12gon() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let poly = random_ngon(&mut rng, 12);
            for _ in 0..1000 {
                let p = xy(rng.random_range(-1.1..1.1), rng.random_range(-1.1..1.1));
                assert_eq!(
                    point_in_polygon(p, &poly),
                    oracle_even_odd(p, poly.exterior()),
                    "disagree at {p}"
                );
            }
        }
    }

    #[test]
    fn simple_ring_detection() {
        assert!(ring_is_simple(unit_square().exterior()));
        let bowtie = [xy(0., 0.), xy(1., 1.), xy(1., 0.), xy(0., 1.)];
        assert!(!ring_is_simple(&bowtie));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            assert!(ring_is_simple(random_ngon(&mut rng, 30).exterior()));
        }
    }
}

//! Attaching context to trees and sensors: taxonomy attributes, the per-region
//! pollen score, nearby complaints and the tree stock around each sensor.

use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Datelike, Utc};
use serde::Serialize;
use thiserror::Error;

use crate::geo::{haversine_distance, GeoPoint};
use crate::index::{IndexError, PointIndex};
use crate::ingest::{
    normalize_species, ComplaintCategory, ComplaintRecord, LotDensity, Region, Season, SensorObservation,
    Severity, SpeciesAttributes, TreeRecord,
};
use crate::par::{self, Parallelism};

pub const DEFAULT_BUFFER_M: f64 = 100.0;

/// Integers up to this bound convert to f64 exactly.
const F64_EXACT_INT: u64 = 1 << 53;

/// Sensor records sharing an id may drift by GPS noise; beyond this they are
/// treated as different sites.
const SENSOR_SITE_TOLERANCE_M: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnrichError {
    #[error("species '{0}' appears more than once in the taxonomy")]
    DuplicateTaxonomy(String),
    #[error("buffer radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("sensor '{id}' reported from locations {distance_m:.1} m apart")]
    InconsistentSensor { id: String, distance_m: f64 },
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinedTree {
    pub tree: TreeRecord,
    pub attributes: SpeciesAttributes,
}

impl JoinedTree {
    /// Alive and at or above the severity threshold.
    pub fn is_severe(&self, threshold: Severity) -> bool {
        self.tree.is_alive() && self.attributes.severity >= threshold
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CoverageReport {
    pub trees: usize,
    pub matched_trees: usize,
    pub taxonomy_rows: usize,
    /// Species with no taxonomy row, with their tree counts.
    pub missing_species: BTreeMap<String, usize>,
}

/// Pairs every tree with its species attributes.
///
/// Trees whose species has no row get [`SpeciesAttributes::unknown`] and are
/// tallied in the coverage report. Output keeps the input order.
pub fn join_taxonomy(
    trees: &[TreeRecord],
    taxonomy: &[SpeciesAttributes],
) -> Result<(Vec<JoinedTree>, CoverageReport), EnrichError> {
    let mut table: HashMap<String, &SpeciesAttributes> = HashMap::with_capacity(taxonomy.len());
    for row in taxonomy {
        let key = normalize_species(&row.species);
        if table.insert(key.clone(), row).is_some() {
            return Err(EnrichError::DuplicateTaxonomy(key));
        }
    }
    let mut report = CoverageReport { trees: trees.len(), taxonomy_rows: taxonomy.len(), ..Default::default() };
    let joined = trees
        .iter()
        .map(|tree| {
            let key = normalize_species(&tree.species);
            let attributes = match table.get(&key) {
                Some(row) => {
                    report.matched_trees += 1;
                    SpeciesAttributes { species: key, ..(*row).clone() }
                }
                None => {
                    *report.missing_species.entry(key.clone()).or_insert(0) += 1;
                    SpeciesAttributes::unknown(&key)
                }
            };
            JoinedTree { tree: tree.clone(), attributes }
        })
        .collect();
    Ok((joined, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PollenImpactScore {
    pub region_id: String,
    pub alive_trees: u64,
    pub severe_trees: u64,
    pub total_population: u64,
    pub vulnerable_population: u64,
    pub severe_ratio: f64,
    pub vulnerable_ratio: f64,
    /// `severe_ratio * vulnerable_ratio`, rounded once.
    pub score: f64,
    /// No alive trees or no residents; every ratio is reported as 0.
    pub degenerate: bool,
}

/// Share of alive trees at or above `threshold` times the share of
/// vulnerable residents. Dead trees and stumps are ignored entirely.
///
/// The score is rounded once from `(severe·vulnerable) / (alive·population)`
/// whenever both products are exact in an f64, so it is the nearest double
/// to the exact rational product.
pub fn pollen_impact<'a>(
    region: &Region,
    trees: impl IntoIterator<Item = &'a JoinedTree>,
    threshold: Severity,
) -> PollenImpactScore {
    let (mut alive, mut severe) = (0u64, 0u64);
    for t in trees {
        if t.tree.is_alive() {
            alive += 1;
            if t.attributes.severity >= threshold {
                severe += 1;
            }
        }
    }
    let degenerate = alive == 0 || region.total_population == 0;
    let (severe_ratio, vulnerable_ratio, score) = if degenerate {
        (0.0, 0.0, 0.0)
    } else {
        let severe_ratio = severe as f64 / alive as f64;
        let vulnerable_ratio = region.vulnerable_population as f64 / region.total_population as f64;
        let score = match (severe.checked_mul(region.vulnerable_population), alive.checked_mul(region.total_population)) {
            (Some(num), Some(den)) if den <= F64_EXACT_INT => num as f64 / den as f64,
            _ => severe_ratio * vulnerable_ratio,
        };
        (severe_ratio, vulnerable_ratio, score)
    };
    PollenImpactScore {
        region_id: region.region_id.clone(),
        alive_trees: alive,
        severe_trees: severe,
        total_population: region.total_population,
        vulnerable_population: region.vulnerable_population,
        severe_ratio,
        vulnerable_ratio,
        score,
        degenerate,
    }
}

/// Year and season a complaint was filed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Period {
    pub year: i32,
    pub season: Season,
}

impl Period {
    /// December is counted with the following year's winter.
    pub fn of(ts: &DateTime<Utc>) -> Period {
        let season = Season::of_timestamp(ts);
        let year = if ts.month() == 12 { ts.year() + 1 } else { ts.year() };
        Period { year, season }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ComplaintBucket {
    pub category: ComplaintCategory,
    pub period: Option<Period>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationOptions {
    pub radius_m: f64,
    /// Inclusive lower bound on the complaint timestamp.
    pub from: Option<DateTime<Utc>>,
    /// Exclusive upper bound.
    pub until: Option<DateTime<Utc>>,
    pub by_period: bool,
}

impl Default for AssociationOptions {
    fn default() -> Self {
        AssociationOptions { radius_m: DEFAULT_BUFFER_M, from: None, until: None, by_period: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnrichedTree {
    pub tree: TreeRecord,
    pub attributes: SpeciesAttributes,
    pub nearby_complaints: BTreeMap<ComplaintBucket, usize>,
    pub buffer_radius_m: f64,
}

impl EnrichedTree {
    /// Complaints of `category` summed over periods.
    pub fn count(&self, category: ComplaintCategory) -> usize {
        self.nearby_complaints.iter().filter(|(k, _)| k.category == category).map(|(_, n)| n).sum()
    }

    pub fn total(&self) -> usize {
        self.nearby_complaints.values().sum()
    }
}

fn check_radius(radius_m: f64) -> Result<(), EnrichError> {
    if radius_m.is_finite() && radius_m > 0.0 {
        Ok(())
    } else {
        Err(EnrichError::InvalidRadius(radius_m))
    }
}

/// Index over positions into `points`.
pub fn position_index<T>(
    items: &[T],
    location: impl Fn(&T) -> GeoPoint,
    max_radius_m: f64,
) -> Result<PointIndex<usize>, IndexError> {
    PointIndex::build(items.iter().enumerate().map(|(i, t)| (location(t), i)), max_radius_m)
}

/// Counts the complaints inside each tree's buffer, by category (and by
/// period when requested). A complaint may count toward many trees.
///
/// `index` must hold positions into `complaints`. Output is sorted by
/// tree id.
pub fn associate_complaints(
    trees: &[JoinedTree],
    complaints: &[ComplaintRecord],
    index: &PointIndex<usize>,
    opts: &AssociationOptions,
    mode: Parallelism,
) -> Result<Vec<EnrichedTree>, EnrichError> {
    check_radius(opts.radius_m)?;
    let mut order: Vec<&JoinedTree> = trees.iter().collect();
    order.sort_by(|a, b| a.tree.tree_id.cmp(&b.tree.tree_id));
    let bucket_of = |pos: &usize| -> Option<ComplaintBucket> {
        let c = &complaints[*pos];
        if opts.from.is_some_and(|t| c.created < t) || opts.until.is_some_and(|t| c.created >= t) {
            return None;
        }
        let period = opts.by_period.then(|| Period::of(&c.created));
        Some(ComplaintBucket { category: c.category, period })
    };
    par::try_map_slice(&order, mode, |jt| {
        let nearby_complaints = index
            .radius_count_by_key(jt.tree.location, opts.radius_m, bucket_of)?
            .into_iter()
            .filter_map(|(k, n)| k.map(|k| (k, n)))
            .collect();
        Ok(EnrichedTree {
            tree: jt.tree.clone(),
            attributes: jt.attributes.clone(),
            nearby_complaints,
            buffer_radius_m: opts.radius_m,
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensorSite {
    pub sensor_id: String,
    pub location: GeoPoint,
}

/// Distinct sites among the observations, sorted by id.
pub fn sensor_sites(observations: &[SensorObservation]) -> Result<Vec<SensorSite>, EnrichError> {
    let mut sites: BTreeMap<&str, GeoPoint> = BTreeMap::new();
    for obs in observations {
        let first = *sites.entry(obs.sensor_id.as_str()).or_insert(obs.location);
        let d = haversine_distance(first, obs.location);
        if d > SENSOR_SITE_TOLERANCE_M {
            return Err(EnrichError::InconsistentSensor { id: obs.sensor_id.clone(), distance_m: d });
        }
    }
    Ok(sites.into_iter().map(|(id, location)| SensorSite { sensor_id: id.to_string(), location }).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensorContext {
    pub sensor_id: String,
    pub location: GeoPoint,
    /// Every census record in the buffer, whatever its status.
    pub total_trees: usize,
    pub species_count: usize,
    pub trees_by_species: BTreeMap<String, usize>,
    /// Alive trees at or above the severity threshold.
    pub severe_allergen_trees: usize,
    /// Summed floor area of lots whose point falls in the buffer, sq ft.
    pub floor_area_within: f64,
    pub buffer_radius_m: f64,
}

pub struct SensorInputs<'a> {
    pub trees: &'a [JoinedTree],
    /// Positions into `trees`.
    pub tree_index: &'a PointIndex<usize>,
    pub lots: &'a [LotDensity],
    /// Positions into `lots`.
    pub lot_index: &'a PointIndex<usize>,
}

/// Tree stock and built floor area around each sensor site.
pub fn sensor_context(
    sites: &[SensorSite],
    inputs: &SensorInputs<'_>,
    radius_m: f64,
    threshold: Severity,
    mode: Parallelism,
) -> Result<Vec<SensorContext>, EnrichError> {
    check_radius(radius_m)?;
    let mut order: Vec<&SensorSite> = sites.iter().collect();
    order.sort_by(|a, b| a.sensor_id.cmp(&b.sensor_id));
    par::try_map_slice(&order, mode, |site| {
        let mut trees_by_species = BTreeMap::new();
        let mut severe = 0;
        let mut hits = inputs.tree_index.ids_within(site.location, radius_m)?;
        hits.sort_unstable();
        for &pos in &hits {
            let jt = &inputs.trees[pos];
            *trees_by_species.entry(jt.attributes.species.clone()).or_insert(0) += 1;
            if jt.is_severe(threshold) {
                severe += 1;
            }
        }
        // summed in position order so the float total is reproducible
        let mut lots = inputs.lot_index.ids_within(site.location, radius_m)?;
        lots.sort_unstable();
        let floor_area_within = lots.iter().map(|&i| inputs.lots[i].floor_area).sum();
        Ok(SensorContext {
            sensor_id: site.sensor_id.clone(),
            location: site.location,
            total_trees: hits.len(),
            species_count: trees_by_species.len(),
            trees_by_species,
            severe_allergen_trees: severe,
            floor_area_within,
            buffer_radius_m: radius_m,
        })
    })
}

/// Alive, allergenic and active in `season`.
pub fn is_seasonally_active(tree: &JoinedTree, season: Season) -> bool {
    tree.tree.is_alive() && tree.attributes.allergic_pollen && tree.attributes.active_seasons.contains(season)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeasonalFlag {
    pub tree_id: String,
    pub location: GeoPoint,
    pub species: String,
    pub active: bool,
}

/// Per-tree allergen activity for one season, sorted by tree id.
pub fn seasonal_activity(trees: &[JoinedTree], season: Season) -> Vec<SeasonalFlag> {
    let mut flags: Vec<SeasonalFlag> = trees
        .iter()
        .map(|t| SeasonalFlag {
            tree_id: t.tree.tree_id.clone(),
            location: t.tree.location,
            species: t.attributes.species.clone(),
            active: is_seasonally_active(t, season),
        })
        .collect();
    flags.sort_by(|a, b| a.tree_id.cmp(&b.tree_id));
    flags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::METERS_PER_DEGREE;
    use crate::ingest::{RegionKind, SeasonSet, TreeStatus};
    use chrono::TimeZone;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn tree(id: &str, species: &str, at: GeoPoint, status: TreeStatus) -> TreeRecord {
        TreeRecord {
            tree_id: id.into(),
            location: at,
            species: species.into(),
            dbh: 10.0,
            status,
            nta_id: "BK01".into(),
            zip: "11201".into(),
        }
    }

    fn attrs(species: &str, severity: Severity, seasons: &[Season]) -> SpeciesAttributes {
        SpeciesAttributes {
            species: species.into(),
            allergic_pollen: severity != Severity::None,
            severity,
            active_seasons: seasons.iter().copied().collect(),
        }
    }

    fn region(total: u64, vulnerable: u64) -> Region {
        Region {
            region_id: "r".into(),
            kind: RegionKind::Zip,
            name: None,
            borough: None,
            geometry: vec![],
            total_population: total,
            vulnerable_population: vulnerable,
            asthma_ed_rate: None,
            asthma_ed_visits: None,
            pm25: None,
        }
    }

    fn joined(n_alive: usize, n_high: usize) -> Vec<JoinedTree> {
        (0..n_alive)
            .map(|i| {
                let sev = if i < n_high { Severity::High } else { Severity::Low };
                JoinedTree {
                    tree: tree(&format!("t{i}"), "x", pt(40.7, -74.0), TreeStatus::Alive),
                    attributes: attrs("x", sev, &[Season::Spring]),
                }
            })
            .collect()
    }

    #[test]
    fn join_pairs_and_reports_gaps() {
        let trees = vec![
            tree("1", "honey locust", pt(40.7, -74.0), TreeStatus::Alive),
            tree("2", "ginkgo", pt(40.7, -74.0), TreeStatus::Alive),
            tree("3", "Ginkgo ", pt(40.7, -74.0), TreeStatus::Dead),
        ];
        let tax = vec![attrs("honey locust", Severity::High, &[Season::Spring])];
        let (joined, report) = join_taxonomy(&trees, &tax).unwrap();
        assert_eq!(joined.len(), 3);
        assert_eq!(joined[0].attributes.severity, Severity::High);
        assert!(joined[0].attributes.allergic_pollen);
        assert_eq!(joined[1].attributes, SpeciesAttributes::unknown("ginkgo"));
        assert_eq!(report.missing_species, BTreeMap::from([("ginkgo".to_string(), 2)]));
        assert_eq!(report.matched_trees, 1);
    }

    #[test]
    fn join_rejects_duplicate_taxonomy() {
        let tax = vec![attrs("oak", Severity::Low, &[]), attrs("Oak", Severity::High, &[])];
        assert_eq!(join_taxonomy(&[], &tax).unwrap_err(), EnrichError::DuplicateTaxonomy("oak".into()));
    }

    #[test]
    fn pollen_score_hand_example() {
        let trees = joined(120, 30);
        let s = pollen_impact(&region(10_000, 2_500), &trees, Severity::High);
        assert_eq!(s.severe_ratio, 0.25);
        assert_eq!(s.vulnerable_ratio, 0.25);
        assert_eq!(s.score, 0.0625);
        assert!(!s.degenerate);
    }

    #[test]
    fn pollen_score_edges() {
        let none = pollen_impact(&region(100, 50), &joined(10, 0), Severity::High);
        assert_eq!(none.score, 0.0);
        let all = pollen_impact(&region(100, 100), &joined(10, 10), Severity::High);
        assert_eq!(all.score, 1.0);
        let empty = pollen_impact(&region(100, 50), &[], Severity::High);
        assert!(empty.degenerate);
        assert_eq!(empty.score, 0.0);
        let unpopulated = pollen_impact(&region(0, 0), &joined(5, 5), Severity::High);
        assert!(unpopulated.degenerate);
        assert_eq!(unpopulated.score, 0.0);
    }

    #[test]
    fn dead_trees_do_not_count() {
        let mut trees = joined(4, 2);
        trees.push(JoinedTree {
            tree: tree("dead", "x", pt(40.7, -74.0), TreeStatus::Dead),
            attributes: attrs("x", Severity::High, &[]),
        });
        let s = pollen_impact(&region(10, 5), &trees, Severity::High);
        assert_eq!((s.alive_trees, s.severe_trees), (4, 2));
    }

    #[test]
    fn threshold_moderate_widens_severe() {
        let mut trees = joined(4, 1);
        trees[3].attributes.severity = Severity::Moderate;
        let high = pollen_impact(&region(10, 5), &trees, Severity::High);
        let moderate = pollen_impact(&region(10, 5), &trees, Severity::Moderate);
        assert_eq!(high.severe_trees, 1);
        assert_eq!(moderate.severe_trees, 2);
    }

    #[test]
    fn adding_severe_tree_raises_score() {
        let r = region(1000, 300);
        let mut trees = joined(9, 3);
        let before = pollen_impact(&r, &trees, Severity::High).score;
        trees.push(JoinedTree {
            tree: tree("new", "x", pt(40.7, -74.0), TreeStatus::Alive),
            attributes: attrs("x", Severity::High, &[]),
        });
        assert!(pollen_impact(&r, &trees, Severity::High).score > before);
    }

    fn complaint(id: &str, at: GeoPoint, category: ComplaintCategory, y: i32, m: u32) -> ComplaintRecord {
        ComplaintRecord {
            complaint_id: id.into(),
            location: at,
            created: Utc.with_ymd_and_hms(y, m, 15, 12, 0, 0).unwrap(),
            category,
            zip: "11201".into(),
            borough: "brooklyn".into(),
        }
    }

    #[test]
    fn complaint_on_the_buffer_edge_counts() {
        let origin = pt(40.7, -74.0);
        // due north along a meridian the distance is R * dlat; step back
        // by ulps until rounding lands on or inside 100 m
        let mut lat = 40.7 + 100.0 / METERS_PER_DEGREE;
        while haversine_distance(origin, pt(lat, -74.0)) > 100.0 {
            lat = f64::from_bits(lat.to_bits() - 1);
        }
        let edge = pt(lat, -74.0);
        assert!(haversine_distance(origin, edge) > 100.0 - 1e-9);
        let far = pt(40.7 + 150.0 / METERS_PER_DEGREE, -74.0);
        let complaints = vec![
            complaint("a", edge, ComplaintCategory::DeadTree, 2015, 5),
            complaint("b", far, ComplaintCategory::DeadTree, 2015, 5),
        ];
        let idx = position_index(&complaints, |c| c.location, 100.0).unwrap();
        let trees = vec![JoinedTree {
            tree: tree("t", "x", origin, TreeStatus::Alive),
            attributes: SpeciesAttributes::unknown("x"),
        }];
        let out = associate_complaints(&trees, &complaints, &idx, &AssociationOptions::default(), Parallelism::Sequential)
            .unwrap();
        assert_eq!(out[0].count(ComplaintCategory::DeadTree), 1);
        assert_eq!(out[0].count(ComplaintCategory::Overgrown), 0);
    }

    #[test]
    fn lonely_tree_has_no_complaints() {
        let complaints = vec![complaint("a", pt(40.8, -74.0), ComplaintCategory::Other, 2015, 5)];
        let idx = position_index(&complaints, |c| c.location, 100.0).unwrap();
        let trees = vec![JoinedTree {
            tree: tree("t", "x", pt(40.7, -74.0), TreeStatus::Alive),
            attributes: SpeciesAttributes::unknown("x"),
        }];
        let out = associate_complaints(&trees, &complaints, &idx, &AssociationOptions::default(), Parallelism::Sequential)
            .unwrap();
        assert_eq!(out[0].total(), 0);
    }

    #[test]
    fn association_rejects_bad_radius() {
        let idx = position_index::<ComplaintRecord>(&[], |c| c.location, 100.0).unwrap();
        for r in [0.0, -1.0, f64::NAN] {
            let opts = AssociationOptions { radius_m: r, ..Default::default() };
            assert!(matches!(
                associate_complaints(&[], &[], &idx, &opts, Parallelism::Sequential),
                Err(EnrichError::InvalidRadius(_))
            ));
        }
    }

    #[test]
    fn association_matches_scan_with_filters() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let spot = |rng: &mut ChaCha8Rng| pt(40.70 + rng.random_range(0.0..0.01), -74.0 + rng.random_range(0.0..0.01));
        let cats = ComplaintCategory::ALL;
        let complaints: Vec<ComplaintRecord> = (0..200)
            .map(|i| {
                let p = spot(&mut rng);
                let cat = cats[rng.random_range(0..cats.len())];
                complaint(&format!("c{i}"), p, cat, rng.random_range(2011..2016), rng.random_range(1..13))
            })
            .collect();
        let mut trees: Vec<JoinedTree> = (0..300)
            .map(|i| JoinedTree {
                tree: tree(&format!("t{i:03}"), "x", spot(&mut rng), TreeStatus::Alive),
                attributes: SpeciesAttributes::unknown("x"),
            })
            .collect();
        let idx = position_index(&complaints, |c| c.location, 200.0).unwrap();
        let opts = AssociationOptions {
            radius_m: 120.0,
            from: Some(Utc.with_ymd_and_hms(2012, 1, 1, 0, 0, 0).unwrap()),
            until: Some(Utc.with_ymd_and_hms(2015, 1, 1, 0, 0, 0).unwrap()),
            by_period: true,
        };
        let seq = associate_complaints(&trees, &complaints, &idx, &opts, Parallelism::Sequential).unwrap();
        trees.reverse();
        let par = associate_complaints(&trees, &complaints, &idx, &opts, Parallelism::Parallel).unwrap();
        assert_eq!(seq, par);
        for et in &seq {
            let mut want: BTreeMap<ComplaintBucket, usize> = BTreeMap::new();
            for c in &complaints {
                let in_time = c.created >= opts.from.unwrap() && c.created < opts.until.unwrap();
                if in_time && haversine_distance(et.tree.location, c.location) <= opts.radius_m {
                    let key = ComplaintBucket { category: c.category, period: Some(Period::of(&c.created)) };
                    *want.entry(key).or_insert(0) += 1;
                }
            }
            assert_eq!(et.nearby_complaints, want, "{}", et.tree.tree_id);
        }
        assert!(seq.windows(2).all(|w| w[0].tree.tree_id < w[1].tree.tree_id));
    }

    #[test]
    fn december_belongs_to_next_winter() {
        let ts = Utc.with_ymd_and_hms(2014, 12, 20, 0, 0, 0).unwrap();
        assert_eq!(Period::of(&ts), Period { year: 2015, season: Season::Winter });
        let ts = Utc.with_ymd_and_hms(2015, 2, 1, 0, 0, 0).unwrap();
        assert_eq!(Period::of(&ts), Period { year: 2015, season: Season::Winter });
    }

    fn lot(id: &str, at: GeoPoint, area: f64) -> LotDensity {
        LotDensity { lot_id: id.into(), location: at, floor_area: area, land_use: String::new() }
    }

    #[test]
    fn sensor_context_small_cases() {
        let s = pt(40.7, -74.0);
        let near = |m: f64| pt(40.7 + m / METERS_PER_DEGREE, -74.0);
        let mk = |id: &str, sp: &str, at| JoinedTree {
            tree: tree(id, sp, at, TreeStatus::Alive),
            attributes: attrs(sp, if sp == "a" { Severity::High } else { Severity::None }, &[]),
        };
        let trees = vec![mk("1", "a", near(10.0)), mk("2", "a", near(50.0)), mk("3", "b", near(90.0)), mk("4", "b", near(300.0))];
        let lots = vec![lot("l1", near(20.0), 1000.0), lot("l2", near(500.0), 5.0)];
        let tree_index = position_index(&trees, |t| t.tree.location, 100.0).unwrap();
        let lot_index = position_index(&lots, |l| l.location, 100.0).unwrap();
        let inputs = SensorInputs { trees: &trees, tree_index: &tree_index, lots: &lots, lot_index: &lot_index };
        let sites = vec![
            SensorSite { sensor_id: "s1".into(), location: s },
            SensorSite { sensor_id: "s0".into(), location: pt(40.9, -73.9) },
        ];
        let out = sensor_context(&sites, &inputs, 100.0, Severity::High, Parallelism::Sequential).unwrap();
        assert_eq!(out[0].sensor_id, "s0");
        assert_eq!((out[0].total_trees, out[0].species_count), (0, 0));
        let c = &out[1];
        assert_eq!(c.total_trees, 3);
        assert_eq!(c.species_count, 2);
        assert_eq!(c.trees_by_species, BTreeMap::from([("a".to_string(), 2), ("b".to_string(), 1)]));
        assert_eq!(c.severe_allergen_trees, 2);
        assert_eq!(c.floor_area_within, 1000.0);
    }

    #[test]
    fn sensor_context_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(162);
        let species = ["a", "b", "c", "d", "e"];
        let spot = |rng: &mut ChaCha8Rng| pt(40.70 + rng.random_range(0.0..0.02), -74.0 + rng.random_range(0.0..0.02));
        let trees: Vec<JoinedTree> = (0..2000)
            .map(|i| {
                let sp = species[rng.random_range(0..species.len())];
                let status = if rng.random_bool(0.9) { TreeStatus::Alive } else { TreeStatus::Dead };
                let sev = Severity::ALL[rng.random_range(0..4)];
                JoinedTree { tree: tree(&i.to_string(), sp, spot(&mut rng), status), attributes: attrs(sp, sev, &[]) }
            })
            .collect();
        let lots: Vec<LotDensity> = (0..500).map(|i| lot(&i.to_string(), spot(&mut rng), rng.random_range(0.0..1e5))).collect();
        let sites: Vec<SensorSite> =
            (0..162).map(|i| SensorSite { sensor_id: format!("s{i:03}"), location: spot(&mut rng) }).collect();
        let tree_index = position_index(&trees, |t| t.tree.location, 100.0).unwrap();
        let lot_index = position_index(&lots, |l| l.location, 100.0).unwrap();
        let inputs = SensorInputs { trees: &trees, tree_index: &tree_index, lots: &lots, lot_index: &lot_index };
        let out = sensor_context(&sites, &inputs, 100.0, Severity::Moderate, Parallelism::Parallel).unwrap();
        assert_eq!(out.len(), 162);
        for (ctx, site) in out.iter().zip(&sites) {
            let inside: Vec<&JoinedTree> =
                trees.iter().filter(|t| haversine_distance(site.location, t.tree.location) <= 100.0).collect();
            let mut by_species = BTreeMap::new();
            for t in &inside {
                *by_species.entry(t.attributes.species.clone()).or_insert(0) += 1;
            }
            let severe = inside.iter().filter(|t| t.is_severe(Severity::Moderate)).count();
            let area: f64 = lots
                .iter()
                .filter(|l| haversine_distance(site.location, l.location) <= 100.0)
                .map(|l| l.floor_area)
                .sum();
            assert_eq!(ctx.sensor_id, site.sensor_id);
            assert_eq!(ctx.total_trees, inside.len());
            assert_eq!(ctx.trees_by_species, by_species);
            assert_eq!(ctx.species_count, ctx.trees_by_species.len());
            assert_eq!(ctx.severe_allergen_trees, severe);
            assert!((ctx.floor_area_within - area).abs() <= 1e-9 * area.max(1.0));
        }
    }

    #[test]
    fn sensor_sites_are_distinct() {
        let obs = |id: &str, at| SensorObservation { sensor_id: id.into(), location: at, year: 2010, season: Season::Summer, pm25: 9.0 };
        let sites = sensor_sites(&[obs("b", pt(40.7, -74.0)), obs("a", pt(40.8, -74.0)), obs("b", pt(40.7, -74.0))]).unwrap();
        assert_eq!(sites.iter().map(|s| s.sensor_id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert!(matches!(
            sensor_sites(&[obs("a", pt(40.7, -74.0)), obs("a", pt(40.71, -74.0))]),
            Err(EnrichError::InconsistentSensor { .. })
        ));
    }

    #[test]
    fn seasonal_flags() {
        let oak = JoinedTree {
            tree: tree("2", "oak", pt(40.7, -74.0), TreeStatus::Alive),
            attributes: attrs("oak", Severity::High, &[Season::Spring]),
        };
        let ginkgo = JoinedTree {
            tree: tree("1", "ginkgo", pt(40.7, -74.0), TreeStatus::Alive),
            attributes: SpeciesAttributes { active_seasons: SeasonSet::from_iter(Season::ALL.iter().copied()), ..attrs("ginkgo", Severity::None, &[]) },
        };
        let mut dead_oak = oak.clone();
        dead_oak.tree.tree_id = "3".into();
        dead_oak.tree.status = TreeStatus::Dead;
        let trees = vec![oak, ginkgo, dead_oak];
        for season in Season::ALL {
            let flags = seasonal_activity(&trees, *season);
            assert_eq!(flags.iter().map(|f| f.tree_id.as_str()).collect::<Vec<_>>(), ["1", "2", "3"]);
            assert!(!flags[0].active);
            assert_eq!(flags[1].active, *season == Season::Spring);
            assert!(!flags[2].active);
        }
    }
}

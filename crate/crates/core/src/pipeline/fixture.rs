//! Seeded synthetic mini-city: every input dataset, a run config, a
//! ground-truth summary and a small regression fixture with known t values.
//!
//! The city is a 3×3 grid of 0.01° cells. Each cell is one ZIP and one NTA;
//! each grid column is one UHF district; each grid row is one borough.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::{TimeZone, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{OutputSink, PipelineError, Stage};
use crate::geo::{haversine_distance, GeoPoint, Polygon, METERS_PER_DEGREE};
use crate::ingest::{
    write_complaints, write_lots, write_regions, write_sensors, write_taxonomy, write_trees, ComplaintCategory,
    ComplaintRecord, LotDensity, Region, RegionKind, Season, SensorObservation, Severity, SpeciesAttributes,
    TreeRecord, TreeStatus,
};

const ORIGIN_LAT: f64 = 40.70;
const ORIGIN_LON: f64 = -74.00;
const CELL_DEG: f64 = 0.01;
const GRID: usize = 3;
const POINT_MARGIN_DEG: f64 = 0.0005;
const SENSOR_MARGIN_DEG: f64 = 0.0015;
const BUFFER_M: f64 = 100.0;

const BOROUGHS: [(&str, &str); GRID] = [("Brooklyn", "BK"), ("Queens", "QN"), ("Manhattan", "MN")];

/// (species, weight, allergic, severity, active seasons)
const SPECIES: [(&str, u32, bool, Severity, &[Season]); 10] = [
    ("honeylocust", 14, true, Severity::Moderate, &[Season::Spring]),
    ("callery pear", 12, true, Severity::Low, &[Season::Spring]),
    ("london planetree", 12, true, Severity::High, &[Season::Spring]),
    ("pin oak", 10, true, Severity::High, &[Season::Spring]),
    ("littleleaf linden", 8, true, Severity::Moderate, &[Season::Summer]),
    ("japanese zelkova", 8, true, Severity::Low, &[Season::Spring]),
    ("american linden", 7, true, Severity::Moderate, &[Season::Summer]),
    ("american elm", 6, true, Severity::High, &[Season::Winter, Season::Spring]),
    ("ginkgo", 7, false, Severity::None, &[]),
    ("red maple", 8, true, Severity::Moderate, &[Season::Winter, Season::Spring]),
];

const LAND_USES: [&str; 5] = ["residential", "commercial", "mixed", "industrial", "public"];

/// Predictor names of the regression fixture and the t statistic each is
/// built to have. The middle two sit either side of p = 0.05.
pub const FIT_T_VALUES: [(&str, f64); 4] =
    [("honeylocust", 3.2), ("callery_pear", 2.2), ("american_elm", 1.9), ("pin_oak", 0.8)];

const FIT_OUTCOME: &str = "asthma_index";
const FIT_INTERCEPT: f64 = 1.5;
const FIT_ROWS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixtureSizes {
    /// Tree rows including the planted defects.
    pub trees: usize,
    pub complaints: usize,
    pub sensors: usize,
    pub lots: usize,
    /// Share of the species list present in the taxonomy.
    pub taxonomy_coverage: f64,
}

impl Default for FixtureSizes {
    fn default() -> Self {
        FixtureSizes { trees: 500, complaints: 50, sensors: 12, lots: 200, taxonomy_coverage: 0.8 }
    }
}

/// What the generator put where, for cross-checking pipeline output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSummary {
    pub seed: u64,
    pub sizes: FixtureSizes,
    pub tree_rows: usize,
    pub valid_trees: usize,
    /// 1-based file lines (header is line 1) of the rows built to be rejected.
    pub defect_lines: Vec<u64>,
    pub trees_by_zip: BTreeMap<String, usize>,
    pub trees_by_nta: BTreeMap<String, usize>,
    pub trees_by_uhf: BTreeMap<String, usize>,
    pub trees_unassigned: usize,
    pub complaints_by_zip: BTreeMap<String, usize>,
    pub complaints_unassigned: usize,
    pub sensor_sites: usize,
    pub sensor_observations: usize,
    pub lots: usize,
    pub taxonomy_species: Vec<String>,
    pub missing_species: Vec<String>,
    pub files: Vec<String>,
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn round_to(x: f64, places: i32) -> f64 {
    let f = 10f64.powi(places);
    (x * f).round() / f
}

fn pt(lat: f64, lon: f64) -> GeoPoint {
    GeoPoint::new(round6(lat), round6(lon)).expect("fixture coordinates are in range")
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    row: usize,
    col: usize,
}

impl Cell {
    fn all() -> impl Iterator<Item = Cell> {
        (0..GRID * GRID).map(|i| Cell { row: i / GRID, col: i % GRID })
    }

    fn index(self) -> usize {
        self.row * GRID + self.col
    }

    fn lat_range(self) -> (f64, f64) {
        let lo = ORIGIN_LAT + CELL_DEG * self.row as f64;
        (lo, lo + CELL_DEG)
    }

    fn lon_range(self) -> (f64, f64) {
        let lo = ORIGIN_LON + CELL_DEG * self.col as f64;
        (lo, lo + CELL_DEG)
    }

    fn zip(self) -> String {
        format!("112{:02}", self.index() + 1)
    }

    fn nta(self) -> String {
        format!("{}{:02}", BOROUGHS[self.row].1, self.col + 1)
    }

    fn uhf(self) -> String {
        format!("{}", 201 + self.col)
    }

    fn borough(self) -> &'static str {
        BOROUGHS[self.row].0
    }

    fn polygon(self) -> Polygon {
        let (a, b) = self.lat_range();
        let (c, d) = self.lon_range();
        Polygon::new(vec![pt(a, c), pt(a, d), pt(b, d), pt(b, c)], Vec::new()).expect("cell is a square")
    }

    fn sample(self, rng: &mut ChaCha8Rng, margin: f64) -> GeoPoint {
        let (a, b) = self.lat_range();
        let (c, d) = self.lon_range();
        pt(rng.random_range(a + margin..b - margin), rng.random_range(c + margin..d - margin))
    }

    /// A point within `max_m` of `center`, pulled back inside this cell.
    fn near(self, rng: &mut ChaCha8Rng, center: GeoPoint, max_m: f64) -> GeoPoint {
        let d = rng.random_range(0.0..max_m);
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let dlat = d * theta.cos() / METERS_PER_DEGREE;
        let dlon = d * theta.sin() / (METERS_PER_DEGREE * center.lat().to_radians().cos());
        let (a, b) = self.lat_range();
        let (c, e) = self.lon_range();
        let lat = (center.lat() + dlat).clamp(a + POINT_MARGIN_DEG, b - POINT_MARGIN_DEG);
        let lon = (center.lon() + dlon).clamp(c + POINT_MARGIN_DEG, e - POINT_MARGIN_DEG);
        pt(lat, lon)
    }
}

fn random_cell(rng: &mut ChaCha8Rng) -> Cell {
    let i = rng.random_range(0..GRID * GRID);
    Cell { row: i / GRID, col: i % GRID }
}

/// Standard normal draw (Box–Muller).
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn to_bytes(label: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<(), String>) -> Result<Vec<u8>, PipelineError> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| PipelineError::stage(Stage::Output, label, e))?;
    Ok(buf)
}

struct Sites {
    cells: Vec<Cell>,
    points: Vec<GeoPoint>,
}

/// Writes the fixture file set into `out_dir`. The same seed and sizes
/// always give byte-identical files.
pub fn gen_fixture(seed: u64, sizes: &FixtureSizes, out_dir: &Path) -> Result<FixtureSummary, PipelineError> {
    let invalid = |m: &str| PipelineError::config(out_dir, m);
    if !(0.0..=1.0).contains(&sizes.taxonomy_coverage) {
        return Err(invalid("taxonomy_coverage must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sink = OutputSink::new(out_dir);

    // sensor sites come first so trees and lots can cluster around them
    let sites = {
        let cells: Vec<Cell> = (0..sizes.sensors).map(|i| Cell { row: (i % 9) / GRID, col: i % GRID }).collect();
        let points = cells.iter().map(|c| c.sample(&mut rng, SENSOR_MARGIN_DEG)).collect();
        Sites { cells, points }
    };

    let defects = sizes.trees.min(3);
    let valid_trees = sizes.trees - defects;
    let species_pick = WeightedIndex::new(SPECIES.iter().map(|s| s.1)).expect("positive weights");
    let mut trees = Vec::with_capacity(valid_trees);
    let mut tree_cells: Vec<Option<Cell>> = Vec::with_capacity(valid_trees);
    for i in 0..valid_trees {
        let roll: f64 = rng.random();
        let (cell, location) = if roll < 0.02 {
            // north of the grid: inside no region
            let (c, d) = (ORIGIN_LON, ORIGIN_LON + CELL_DEG * GRID as f64);
            let top = ORIGIN_LAT + CELL_DEG * GRID as f64;
            (None, pt(rng.random_range(top + 0.001..top + 0.009), rng.random_range(c..d)))
        } else if roll < 0.32 && !sites.points.is_empty() {
            let s = rng.random_range(0..sites.points.len());
            let cell = sites.cells[s];
            (Some(cell), cell.near(&mut rng, sites.points[s], 75.0))
        } else {
            let cell = random_cell(&mut rng);
            (Some(cell), cell.sample(&mut rng, POINT_MARGIN_DEG))
        };
        let status_roll: f64 = rng.random();
        let (status, dbh) = if status_roll < 0.90 {
            (TreeStatus::Alive, round_to(rng.random_range(2.0..36.0), 1))
        } else if status_roll < 0.96 {
            (TreeStatus::Dead, round_to(rng.random_range(2.0..30.0), 1))
        } else {
            (TreeStatus::Stump, 0.0)
        };
        let species = SPECIES[species_pick.sample(&mut rng)].0.to_string();
        trees.push(TreeRecord {
            tree_id: format!("T{:06}", i + 1),
            location,
            species,
            dbh,
            status,
            nta_id: cell.map_or_else(|| "XX99".to_string(), Cell::nta),
            zip: cell.map_or_else(|| "10000".to_string(), Cell::zip),
        });
        tree_cells.push(cell);
    }

    let mut tree_bytes = to_bytes("trees.csv", |b| write_trees(&trees, b).map_err(|e| e.to_string()))?;
    let defect_rows: [[&str; 8]; 3] = [
        ["T900001", "91.0", "-73.99", "pin oak", "10", "alive", "BK01", "11201"],
        ["T900002", "40.705", "-73.995", "pin oak", "-3", "alive", "BK01", "11201"],
        ["T900003", "40.705", "-73.995", "pin oak", "10", "sick", "BK01", "11201"],
    ];
    {
        let mut w = csv::Writer::from_writer(&mut tree_bytes);
        for row in &defect_rows[..defects] {
            w.write_record(row).map_err(|e| PipelineError::stage(Stage::Output, "trees.csv", e))?;
        }
        w.flush().map_err(|e| PipelineError::stage(Stage::Output, "trees.csv", e))?;
    }
    let defect_lines: Vec<u64> = (0..defects).map(|i| (valid_trees + i) as u64 + 2).collect();
    sink.put("trees.csv", &tree_bytes)?;

    let covered = (sizes.taxonomy_coverage * SPECIES.len() as f64).round() as usize;
    let taxonomy: Vec<SpeciesAttributes> = SPECIES[..covered]
        .iter()
        .map(|&(name, _, allergic, severity, seasons)| SpeciesAttributes {
            species: name.to_string(),
            allergic_pollen: allergic,
            severity,
            active_seasons: seasons.iter().copied().collect(),
        })
        .collect();
    sink.put("taxonomy.csv", &to_bytes("taxonomy.csv", |b| write_taxonomy(&taxonomy, b).map_err(|e| e.to_string()))?)?;

    let in_grid: Vec<usize> = (0..trees.len()).filter(|&i| tree_cells[i].is_some()).collect();
    let category_pick = WeightedIndex::new([3u32, 3, 3, 2, 1]).expect("positive weights");
    let categories = [
        ComplaintCategory::DeadTree,
        ComplaintCategory::DamagedTree,
        ComplaintCategory::Overgrown,
        ComplaintCategory::NewTreeRequest,
        ComplaintCategory::Other,
    ];
    let t0 = Utc.with_ymd_and_hms(2010, 1, 1, 0, 0, 0).unwrap().timestamp();
    let t1 = Utc.with_ymd_and_hms(2017, 1, 1, 0, 0, 0).unwrap().timestamp();
    let mut complaints = Vec::with_capacity(sizes.complaints);
    let mut complaints_by_zip: BTreeMap<String, usize> = Cell::all().map(|c| (c.zip(), 0)).collect();
    for i in 0..sizes.complaints {
        let (cell, location) = if !in_grid.is_empty() && rng.random_bool(0.6) {
            let t = in_grid[rng.random_range(0..in_grid.len())];
            let cell = tree_cells[t].expect("filtered to in-grid trees");
            (cell, cell.near(&mut rng, trees[t].location, 50.0))
        } else {
            let cell = random_cell(&mut rng);
            (cell, cell.sample(&mut rng, POINT_MARGIN_DEG))
        };
        let created = Utc.timestamp_opt(rng.random_range(t0..t1), 0).unwrap();
        *complaints_by_zip.get_mut(&cell.zip()).expect("every cell has a zip") += 1;
        complaints.push(ComplaintRecord {
            complaint_id: format!("C{:05}", i + 1),
            location,
            created,
            category: categories[category_pick.sample(&mut rng)],
            zip: cell.zip(),
            borough: cell.borough().to_string(),
        });
    }
    sink.put(
        "complaints.csv",
        &to_bytes("complaints.csv", |b| write_complaints(&complaints, b).map_err(|e| e.to_string()))?,
    )?;

    let mut lots = Vec::with_capacity(sizes.lots);
    for i in 0..sizes.lots {
        let location = if !sites.points.is_empty() && rng.random_bool(0.3) {
            let s = rng.random_range(0..sites.points.len());
            sites.cells[s].near(&mut rng, sites.points[s], 90.0)
        } else {
            random_cell(&mut rng).sample(&mut rng, POINT_MARGIN_DEG)
        };
        lots.push(LotDensity {
            lot_id: format!("L{:05}", i + 1),
            location,
            floor_area: rng.random_range(500.0..80_000.0_f64).round(),
            land_use: LAND_USES[rng.random_range(0..LAND_USES.len())].to_string(),
        });
    }
    sink.put("lots.csv", &to_bytes("lots.csv", |b| write_lots(&lots, b).map_err(|e| e.to_string()))?)?;

    let season_effect = |s: Season| match s {
        Season::Winter => 1.5,
        Season::Spring => 0.0,
        Season::Summer => 2.0,
        Season::Fall => -0.5,
    };
    let mut sensors = Vec::new();
    for (s, &site) in sites.points.iter().enumerate() {
        let near_trees = trees.iter().filter(|t| haversine_distance(site, t.location) <= BUFFER_M).count();
        let near_floor: f64 =
            lots.iter().filter(|l| haversine_distance(site, l.location) <= BUFFER_M).map(|l| l.floor_area).sum();
        for year in 2009..=2013 {
            for &season in Season::ALL {
                let pm25 = 12.0 - 0.03 * near_trees as f64 + 0.000_01 * near_floor + season_effect(season)
                    - 0.25 * f64::from(year - 2009)
                    + 0.6 * normal(&mut rng);
                sensors.push(SensorObservation {
                    sensor_id: format!("S{:02}", s + 1),
                    location: site,
                    year,
                    season,
                    pm25: round_to(pm25.max(1.0), 3),
                });
            }
        }
    }
    sink.put("sensors.csv", &to_bytes("sensors.csv", |b| write_sensors(&sensors, b).map_err(|e| e.to_string()))?)?;

    let mut trees_by_zip: BTreeMap<String, usize> = Cell::all().map(|c| (c.zip(), 0)).collect();
    let mut trees_by_nta: BTreeMap<String, usize> = Cell::all().map(|c| (c.nta(), 0)).collect();
    let mut trees_by_uhf: BTreeMap<String, usize> = Cell::all().map(|c| (c.uhf(), 0)).collect();
    for cell in tree_cells.iter().flatten() {
        *trees_by_zip.get_mut(&cell.zip()).unwrap() += 1;
        *trees_by_nta.get_mut(&cell.nta()).unwrap() += 1;
        *trees_by_uhf.get_mut(&cell.uhf()).unwrap() += 1;
    }
    let trees_unassigned = tree_cells.iter().filter(|c| c.is_none()).count();

    struct CellStats {
        population: u64,
        vulnerable: u64,
        visits: f64,
        pm25: f64,
    }
    let stats: Vec<CellStats> = Cell::all()
        .map(|c| {
            let population = rng.random_range(20_000..60_000u64);
            let vulnerable = (population as f64 * rng.random_range(0.15..0.35)).round() as u64;
            let n = trees_by_zip[&c.zip()] as f64;
            let visits = (2.0 + 0.45 * n.ln_1p() + 0.15 * normal(&mut rng)).exp().round().max(1.0);
            CellStats { population, vulnerable, visits, pm25: round_to(rng.random_range(8.0..12.0), 2) }
        })
        .collect();
    let rate = |visits: f64, population: u64| round_to(visits / population as f64 * 10_000.0, 2);
    let cell_region = |c: Cell, kind: RegionKind, id: String| {
        let s = &stats[c.index()];
        Region {
            name: Some(format!("{} {id}", kind.as_str().to_uppercase())),
            region_id: id,
            kind,
            borough: Some(c.borough().to_string()),
            geometry: vec![c.polygon()],
            total_population: s.population,
            vulnerable_population: s.vulnerable,
            asthma_ed_rate: Some(rate(s.visits, s.population)),
            asthma_ed_visits: Some(s.visits),
            pm25: Some(s.pm25),
        }
    };
    let zips: Vec<Region> = Cell::all().map(|c| cell_region(c, RegionKind::Zip, c.zip())).collect();
    let ntas: Vec<Region> = Cell::all().map(|c| cell_region(c, RegionKind::Nta, c.nta())).collect();
    let uhfs: Vec<Region> = (0..GRID)
        .map(|col| {
            let cells: Vec<Cell> = (0..GRID).map(|row| Cell { row, col }).collect();
            let population = cells.iter().map(|c| stats[c.index()].population).sum();
            let visits = cells.iter().map(|c| stats[c.index()].visits).sum();
            let pm25 = cells.iter().map(|c| stats[c.index()].pm25).sum::<f64>() / GRID as f64;
            let id = cells[0].uhf();
            Region {
                name: Some(format!("UHF {id}")),
                region_id: id,
                kind: RegionKind::Uhf,
                borough: None,
                geometry: cells.iter().map(|c| c.polygon()).collect(),
                total_population: population,
                vulnerable_population: cells.iter().map(|c| stats[c.index()].vulnerable).sum(),
                asthma_ed_rate: Some(rate(visits, population)),
                asthma_ed_visits: Some(visits),
                pm25: Some(round_to(pm25, 2)),
            }
        })
        .collect();
    for (file, regions) in [("regions_zip.geojson", &zips), ("regions_nta.geojson", &ntas), ("regions_uhf.geojson", &uhfs)] {
        sink.put(file, &to_bytes(file, |b| write_regions(regions, b).map_err(|e| e.to_string()))?)?;
    }

    sink.put("run.toml", run_toml(seed, valid_trees > 0, !sensors.is_empty()).as_bytes())?;
    let (table, spec) = fit_fixture();
    sink.put("fit_table.csv", table.as_bytes())?;
    sink.put("fit_spec.toml", spec.as_bytes())?;

    let mut files: Vec<String> = sink.hashes().keys().cloned().collect();
    files.push("truth.json".into());
    let summary = FixtureSummary {
        seed,
        sizes: *sizes,
        tree_rows: sizes.trees,
        valid_trees,
        defect_lines,
        trees_by_zip,
        trees_by_nta,
        trees_by_uhf,
        trees_unassigned,
        complaints_by_zip,
        complaints_unassigned: 0,
        sensor_sites: sites.points.len(),
        sensor_observations: sensors.len(),
        lots: lots.len(),
        taxonomy_species: taxonomy.iter().map(|t| t.species.clone()).collect(),
        missing_species: SPECIES[covered..].iter().map(|s| s.0.to_string()).collect(),
        files,
    };
    let mut json = serde_json::to_vec_pretty(&summary).map_err(|e| PipelineError::stage(Stage::Output, "truth.json", e))?;
    json.push(b'\n');
    sink.put("truth.json", &json)?;
    Ok(summary)
}

fn run_toml(seed: u64, with_trees: bool, with_sensors: bool) -> String {
    let mut s = format!(
        r#"output_dir = "out"
seed = {seed}
buffer_radius_m = 100.0
severity_threshold = "high"
species_threshold = 4.0
species_region_kind = "zip"
pollen_region_kind = "nta"
parallelism = "parallel"

[complaint_window]
by_period = true

[datasets]
trees = "trees.csv"
taxonomy = "taxonomy.csv"
complaints = "complaints.csv"
sensors = "sensors.csv"
lots = "lots.csv"

[datasets.regions]
zip = "regions_zip.geojson"
nta = "regions_nta.geojson"
uhf = "regions_uhf.geojson"
"#
    );
    if with_trees {
        s.push_str(
            r#"
[[models]]
name = "asthma_trees"
region_kind = "zip"
outcome = "ln(asthma_ed_visits)"
predictors = ["ln1p(tree_total)", "ln1p(severe_trees)"]

[[correlations]]
name = "allergen_asthma"
region_kind = "zip"
x = "severe_ratio"
y = "asthma_ed_rate"
"#,
        );
    }
    if with_trees && with_sensors {
        s.push_str(
            r#"
[[models]]
name = "pm25_panel"
kind = "panel"
outcome = "pm25"
predictors = ["total_trees", "ln1p(floor_area_within)"]
group = "season"
"#,
        );
    }
    s
}

/// 32 rows built from a Sylvester–Hadamard matrix. Columns 1..=4 are the
/// predictors and column 5 the residual, so X'X = 32·I, the residual is
/// orthogonal to X, and with e'e = 27 (σ² = 1 on 27 df) every slope's t
/// statistic is exactly `β·√32`.
fn fit_fixture() -> (String, String) {
    let h = |i: usize, j: usize| if (i & j).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
    let resid_scale = (27.0f64 / FIT_ROWS as f64).sqrt();
    let root_n = (FIT_ROWS as f64).sqrt();
    let mut table = String::from("id,");
    table.push_str(FIT_OUTCOME);
    for (name, _) in FIT_T_VALUES {
        let _ = write!(table, ",{name}");
    }
    table.push('\n');
    for i in 0..FIT_ROWS {
        let mut y = FIT_INTERCEPT + resid_scale * h(i, 5);
        for (j, (_, t)) in FIT_T_VALUES.iter().enumerate() {
            y += t / root_n * h(i, j + 1);
        }
        let _ = write!(table, "r{:02},{y}", i + 1);
        for j in 0..FIT_T_VALUES.len() {
            let _ = write!(table, ",{}", h(i, j + 1));
        }
        table.push('\n');
    }
    let predictors: Vec<String> = FIT_T_VALUES.iter().map(|(n, _)| format!("\"{n}\"")).collect();
    let spec = format!("name = \"fixture_fit\"\noutcome = \"{FIT_OUTCOME}\"\npredictors = [{}]\n", predictors.join(", "));
    (table, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ols_fit, DesignMatrix};

    #[test]
    fn regression_fixture_has_designed_t_values() {
        let (table, _) = fit_fixture();
        let mut rdr = csv::Reader::from_reader(table.as_bytes());
        let rows: Vec<Vec<f64>> = rdr
            .records()
            .map(|r| r.unwrap().iter().skip(1).map(|v| v.parse().unwrap()).collect())
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let cols: Vec<Vec<f64>> = (1..=4).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        let names = FIT_T_VALUES.iter().map(|(n, _)| n.to_string()).collect();
        let fit = ols_fit(&DesignMatrix::new(names, cols, true).unwrap(), &y).unwrap();
        assert_eq!(fit.df_resid, 27);
        for (name, t) in FIT_T_VALUES {
            let c = fit.coefficient(name).unwrap();
            assert!((c.t_stat - t).abs() < 1e-9, "{name}: {}", c.t_stat);
        }
        // sum of t² over 4 slopes, with σ² = 1
        assert!((fit.f_stat - 19.33 / 4.0).abs() < 1e-9);
    }

    #[test]
    fn cells_tile_the_grid() {
        let ids: Vec<String> = Cell::all().map(Cell::zip).collect();
        assert_eq!(ids.first().unwrap(), "11201");
        assert_eq!(ids.last().unwrap(), "11209");
        let c = Cell { row: 2, col: 1 };
        assert_eq!(c.nta(), "MN02");
        assert_eq!(c.uhf(), "202");
    }
}

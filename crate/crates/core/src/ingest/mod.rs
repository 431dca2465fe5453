//! Parsing and validation of the input datasets.
//!
//! Every parser returns [`Parsed`]: valid records plus a [`RowError`] for each
//! rejected row, so `rows_in == records.len() + errors.len()` always holds.
//! Whole-file failures are limited to I/O errors, empty input, missing
//! required columns, and (for boundaries) unparseable JSON.

mod fetch;
mod geojson;
mod records;
mod table;

use std::collections::HashSet;
use std::io::{Read, Write};

use chrono::{TimeZone, Utc};
use serde::Serialize;
use thiserror::Error;

pub use fetch::{fetch_dataset, sha256_hex, FetchError, FetchOutcome, FetchStatus};
pub use geojson::{
    geometry_value, parse_regions, point_geometry, region_properties, write_features, write_regions,
    FeatureProperties,
};
pub use records::{
    normalize_species, ComplaintCategory, ComplaintRecord, LotDensity, Region, RegionKind, Season,
    SeasonSet, SensorObservation, Severity, SpeciesAttributes, TreeRecord, TreeStatus,
};
pub use table::{format_timestamp, parse_timestamp, Parsed, RowError};

use table::{optional, read_table, required, ColumnSpec};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{dataset}: read failed: {source}")]
    Io {
        dataset: &'static str,
        #[source]
        source: std::io::Error,
    },
    #[error("{dataset}: input is empty (header row required)")]
    EmptyInput { dataset: &'static str },
    #[error("{dataset}: missing required column(s): {}", columns.join(", "))]
    MissingColumns {
        dataset: &'static str,
        columns: Vec<String>,
    },
    #[error("{dataset}: malformed input: {message}")]
    Malformed {
        dataset: &'static str,
        message: String,
    },
}

/// Dataset kinds accepted by `canopy ingest`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Trees,
    Complaints,
    Taxonomy,
    Regions,
    Sensors,
    Lots,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 6] = [
        DatasetKind::Trees,
        DatasetKind::Complaints,
        DatasetKind::Taxonomy,
        DatasetKind::Regions,
        DatasetKind::Sensors,
        DatasetKind::Lots,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::Trees => "trees",
            DatasetKind::Complaints => "complaints",
            DatasetKind::Taxonomy => "taxonomy",
            DatasetKind::Regions => "regions",
            DatasetKind::Sensors => "sensors",
            DatasetKind::Lots => "lots",
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        DatasetKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown dataset kind '{s}'"))
    }
}

/// Row accounting for one parsed file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub dataset: DatasetKind,
    pub rows_in: usize,
    pub records: usize,
    pub row_errors: Vec<RowError>,
}

impl ValidationReport {
    pub fn of<T>(dataset: DatasetKind, parsed: &Parsed<T>) -> Self {
        ValidationReport {
            dataset,
            rows_in: parsed.rows_in,
            records: parsed.records.len(),
            row_errors: parsed.errors.clone(),
        }
    }

    pub fn is_conserved(&self) -> bool {
        self.rows_in == self.records + self.row_errors.len()
    }
}

/// Parses any dataset kind and returns only its validation report.
pub fn validate<R: Read>(kind: DatasetKind, input: R) -> Result<ValidationReport, IngestError> {
    Ok(match kind {
        DatasetKind::Trees => ValidationReport::of(kind, &parse_trees(input)?),
        DatasetKind::Complaints => ValidationReport::of(kind, &parse_complaints(input)?),
        DatasetKind::Taxonomy => ValidationReport::of(kind, &parse_taxonomy(input)?),
        DatasetKind::Regions => ValidationReport::of(kind, &parse_regions(input, None)?),
        DatasetKind::Sensors => ValidationReport::of(kind, &parse_sensors(input)?),
        DatasetKind::Lots => ValidationReport::of(kind, &parse_lots(input)?),
    })
}

const TREE_COLUMNS: &[ColumnSpec] = &[
    required("tree_id", &[]),
    required("latitude", &["lat"]),
    required("longitude", &["lon", "lng"]),
    required("species", &["spc_common"]),
    required("dbh", &["tree_dbh"]),
    required("status", &[]),
    required("nta_id", &["nta"]),
    required("zip", &["zipcode", "postcode"]),
];

fn check_zip(zip: &str) -> Result<(), String> {
    if zip.len() == 5 && zip.bytes().all(|b| b.is_ascii_digit()) {
        Ok(())
    } else {
        Err(format!("zip: expected 5 digits, got '{zip}'"))
    }
}

/// Street-tree census rows.
pub fn parse_trees<R: Read>(input: R) -> Result<Parsed<TreeRecord>, IngestError> {
    let mut seen = HashSet::new();
    read_table(input, "trees", TREE_COLUMNS, |row| {
        let tree_id = row.non_empty("tree_id")?.to_string();
        let location = row.location()?;
        let species = normalize_species(row.text("species")?);
        let status: TreeStatus = row.parse("status")?;
        let dbh = match row.text("dbh")? {
            "" if status != TreeStatus::Alive => 0.0,
            _ => row.f64("dbh")?,
        };
        if status == TreeStatus::Alive && dbh <= 0.0 {
            return Err(format!("dbh: must be positive for a live tree, got {dbh}"));
        }
        if dbh < 0.0 {
            return Err(format!("dbh: negative value {dbh}"));
        }
        if status == TreeStatus::Alive && species.is_empty() {
            return Err("species: missing value".into());
        }
        let nta_id = row.non_empty("nta_id")?.to_string();
        let zip = row.non_empty("zip")?.to_string();
        check_zip(&zip)?;
        if !seen.insert(tree_id.clone()) {
            return Err(format!("duplicate tree_id '{tree_id}'"));
        }
        Ok(TreeRecord { tree_id, location, species, dbh, status, nta_id, zip })
    })
}

pub fn write_trees<W: Write>(records: &[TreeRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TREE_COLUMNS.iter().map(|c| c.name))?;
    for t in records {
        w.write_record([
            t.tree_id.clone(),
            t.location.lat().to_string(),
            t.location.lon().to_string(),
            t.species.clone(),
            t.dbh.to_string(),
            t.status.to_string(),
            t.nta_id.clone(),
            t.zip.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const COMPLAINT_COLUMNS: &[ColumnSpec] = &[
    required("complaint_id", &["unique_key"]),
    required("latitude", &["lat"]),
    required("longitude", &["lon", "lng"]),
    required("created", &["created_date"]),
    required("category", &["complaint_type"]),
    optional("zip", &["incident_zip"]),
    optional("borough", &[]),
];

fn earliest_complaint() -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2010, 1, 1, 0, 0, 0).unwrap()
}

/// 311 tree complaints. `created` must fall in [2010-01-01, now].
pub fn parse_complaints<R: Read>(input: R) -> Result<Parsed<ComplaintRecord>, IngestError> {
    let mut seen = HashSet::new();
    let now = Utc::now();
    read_table(input, "complaints", COMPLAINT_COLUMNS, |row| {
        let complaint_id = row.non_empty("complaint_id")?.to_string();
        let location = row.location()?;
        let created = parse_timestamp(row.non_empty("created")?).map_err(|e| format!("created: {e}"))?;
        if created < earliest_complaint() || created > now {
            return Err(format!("created: {} outside [2010-01-01, now]", format_timestamp(&created)));
        }
        let category = row.parse("category")?;
        let zip = row.text("zip")?.to_string();
        let borough = row.text("borough")?.to_string();
        if !seen.insert(complaint_id.clone()) {
            return Err(format!("duplicate complaint_id '{complaint_id}'"));
        }
        Ok(ComplaintRecord { complaint_id, location, created, category, zip, borough })
    })
}

pub fn write_complaints<W: Write>(records: &[ComplaintRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COMPLAINT_COLUMNS.iter().map(|c| c.name))?;
    for c in records {
        w.write_record([
            c.complaint_id.clone(),
            c.location.lat().to_string(),
            c.location.lon().to_string(),
            format_timestamp(&c.created),
            c.category.to_string(),
            c.zip.clone(),
            c.borough.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const TAXONOMY_COLUMNS: &[ColumnSpec] = &[
    required("species", &["tree_species"]),
    required("allergic_pollen", &[]),
    required("severity", &["allergen_severity"]),
    required("active_seasons", &["active_season"]),
];

fn parse_flag(s: &str) -> Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Ok(true),
        "0" | "false" | "no" | "n" => Ok(false),
        _ => Err(format!("allergic_pollen: expected 1/0, got '{s}'")),
    }
}

/// Species attribute table. Seasons are separated by `;`, `|`, `/` or spaces.
pub fn parse_taxonomy<R: Read>(input: R) -> Result<Parsed<SpeciesAttributes>, IngestError> {
    let mut seen = HashSet::new();
    read_table(input, "taxonomy", TAXONOMY_COLUMNS, |row| {
        let species = normalize_species(row.non_empty("species")?);
        let allergic_pollen = parse_flag(row.non_empty("allergic_pollen")?)?;
        let severity: Severity = row.parse("severity")?;
        let active_seasons = row
            .text("active_seasons")?
            .split(|c: char| c == ';' || c == '|' || c == '/' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(str::parse::<Season>)
            .collect::<Result<SeasonSet, _>>()?;
        if severity == Severity::None && allergic_pollen {
            return Err("severity 'none' contradicts allergic_pollen = 1".into());
        }
        if allergic_pollen && active_seasons.is_empty() {
            return Err("allergic species needs at least one active season".into());
        }
        if !seen.insert(species.clone()) {
            return Err(format!("duplicate species '{species}'"));
        }
        Ok(SpeciesAttributes { species, allergic_pollen, severity, active_seasons })
    })
}

pub fn write_taxonomy<W: Write>(records: &[SpeciesAttributes], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TAXONOMY_COLUMNS.iter().map(|c| c.name))?;
    for s in records {
        w.write_record([
            s.species.clone(),
            u8::from(s.allergic_pollen).to_string(),
            s.severity.to_string(),
            s.active_seasons.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const SENSOR_COLUMNS: &[ColumnSpec] = &[
    required("sensor_id", &["site_id"]),
    required("latitude", &["lat"]),
    required("longitude", &["lon", "lng"]),
    required("year", &[]),
    required("season", &[]),
    required("pm25", &["pm2.5", "pm_25"]),
];

/// Seasonal PM2.5 readings; `(sensor_id, year, season)` must be unique.
pub fn parse_sensors<R: Read>(input: R) -> Result<Parsed<SensorObservation>, IngestError> {
    let mut seen = HashSet::new();
    read_table(input, "sensors", SENSOR_COLUMNS, |row| {
        let sensor_id = row.non_empty("sensor_id")?.to_string();
        let location = row.location()?;
        let year = row.i32("year")?;
        let season: Season = row.parse("season")?;
        let pm25 = row.f64("pm25")?;
        if pm25 <= 0.0 {
            return Err(format!("pm25: must be positive, got {pm25}"));
        }
        if !seen.insert((sensor_id.clone(), year, season)) {
            return Err(format!("duplicate observation ({sensor_id}, {year}, {season})"));
        }
        Ok(SensorObservation { sensor_id, location, year, season, pm25 })
    })
}

pub fn write_sensors<W: Write>(records: &[SensorObservation], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SENSOR_COLUMNS.iter().map(|c| c.name))?;
    for s in records {
        w.write_record([
            s.sensor_id.clone(),
            s.location.lat().to_string(),
            s.location.lon().to_string(),
            s.year.to_string(),
            s.season.to_string(),
            s.pm25.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const LOT_COLUMNS: &[ColumnSpec] = &[
    required("lot_id", &["bbl"]),
    required("latitude", &["lat"]),
    required("longitude", &["lon", "lng"]),
    required("floor_area", &["bldgarea"]),
    optional("land_use", &["landuse"]),
];

/// Tax-lot centroids with built floor area.
pub fn parse_lots<R: Read>(input: R) -> Result<Parsed<LotDensity>, IngestError> {
    let mut seen = HashSet::new();
    read_table(input, "lots", LOT_COLUMNS, |row| {
        let lot_id = row.non_empty("lot_id")?.to_string();
        let location = row.location()?;
        let floor_area = row.f64("floor_area")?;
        if floor_area < 0.0 {
            return Err(format!("floor_area: negative value {floor_area}"));
        }
        let land_use = row.text("land_use")?.to_string();
        if !seen.insert(lot_id.clone()) {
            return Err(format!("duplicate lot_id '{lot_id}'"));
        }
        Ok(LotDensity { lot_id, location, floor_area, land_use })
    })
}

pub fn write_lots<W: Write>(records: &[LotDensity], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOT_COLUMNS.iter().map(|c| c.name))?;
    for l in records {
        w.write_record([
            l.lot_id.clone(),
            l.location.lat().to_string(),
            l.location.lon().to_string(),
            l.floor_area.to_string(),
            l.land_use.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TREE_HEADER: &str = "tree_id,latitude,longitude,species,dbh,status,nta_id,zip\n";

    #[test]
    fn header_only_yields_nothing() {
        let p = parse_trees(TREE_HEADER.as_bytes()).unwrap();
        assert!(p.records.is_empty() && p.errors.is_empty());
        assert_eq!(p.rows_in, 0);
    }

    #[test]
    fn empty_stream_is_whole_file_error() {
        assert!(matches!(parse_trees(&b""[..]), Err(IngestError::EmptyInput { .. })));
    }

    #[test]
    fn latitude_out_of_range_is_row_error() {
        let input = format!("{TREE_HEADER}t1,91.0,-74.0,Honey Locust,10,alive,BK09,11201\n");
        let p = parse_trees(input.as_bytes()).unwrap();
        assert!(p.records.is_empty());
        assert_eq!(p.errors.len(), 1);
        assert!(p.errors[0].reason.contains("latitude out of range"), "{:?}", p.errors);
        assert_eq!(p.errors[0].line, 2);
    }

    #[test]
    fn missing_column_names_it() {
        let err = parse_trees("tree_id,latitude,longitude,species,dbh,status,zip\n".as_bytes()).unwrap_err();
        match err {
            IngestError::MissingColumns { columns, .. } => assert_eq!(columns, vec!["nta_id"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn census_aliases_and_normalization() {
        let input = "tree_id,tree_dbh,status,spc_common,nta,zipcode,latitude,longitude\n\
                     180683,3,Alive,  Red   Maple ,QN17,11375,40.72309177,-73.84421522\n\
                     200540,0,Stump,,QN49,11357,40.79411067,-73.81867946\n";
        let p = parse_trees(input.as_bytes()).unwrap();
        assert!(p.is_clean(), "{:?}", p.errors);
        assert_eq!(p.records[0].species, "red maple");
        assert_eq!(p.records[1].status, TreeStatus::Stump);
    }

    #[test]
    fn tree_row_defects() {
        let input = format!(
            "{TREE_HEADER}a,40.7,-74.0,oak,0,alive,BK09,11201\n\
             b,40.7,-74.0,oak,5,sleeping,BK09,11201\n\
             c,40.7,-74.0,oak,5,alive,BK09,1120\n\
             d,40.7,-74.0,oak,5,alive,BK09\n\
             e,40.7,-74.0,oak,5,alive,BK09,11201\n\
             e,40.7,-74.0,oak,5,alive,BK09,11201\n"
        );
        let p = parse_trees(input.as_bytes()).unwrap();
        assert_eq!(p.records.len(), 1);
        let lines: Vec<u64> = p.errors.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![2, 3, 4, 5, 7]);
        assert_eq!(p.rows_in, 6);
    }

    #[test]
    fn taxonomy_direct_mapping() {
        let input = "species, allergic_pollen, severity, active_seasons\nhoney locust, 1, high, spring\n";
        let p = parse_taxonomy(input.as_bytes()).unwrap();
        assert!(p.is_clean(), "{:?}", p.errors);
        let s = &p.records[0];
        assert_eq!(s.species, "honey locust");
        assert!(s.allergic_pollen);
        assert_eq!(s.severity, Severity::High);
        assert_eq!(s.active_seasons, [Season::Spring].into_iter().collect());
    }

    #[test]
    fn taxonomy_invariants() {
        let input = "species,allergic_pollen,severity,active_seasons\n\
                     a,1,none,spring\n\
                     b,1,low,\n\
                     c,0,none,\n\
                     c,0,none,\n";
        let p = parse_taxonomy(input.as_bytes()).unwrap();
        assert_eq!(p.records.len(), 1);
        assert_eq!(p.errors.len(), 3);
    }

    #[test]
    fn complaint_window_and_categories() {
        let input = "complaint_id,latitude,longitude,created,category,zip,borough\n\
                     1,40.7,-74.0,2009-12-31T23:59:59Z,dead_tree,11201,BROOKLYN\n\
                     2,40.7,-74.0,2015-06-01 10:00:00,Dead Tree,11201,BROOKLYN\n\
                     3,40.7,-74.0,2015-06-01 10:00:00,pothole,11201,BROOKLYN\n";
        let p = parse_complaints(input.as_bytes()).unwrap();
        assert_eq!(p.records.len(), 1);
        assert_eq!(p.records[0].category, ComplaintCategory::DeadTree);
        assert_eq!(p.errors.len(), 2);
    }

    #[test]
    fn sensors_unique_per_cell() {
        let input = "sensor_id,latitude,longitude,year,season,pm25\n\
                     s1,40.7,-74.0,2010,winter,10.5\n\
                     s1,40.7,-74.0,2010,winter,11.0\n\
                     s1,40.7,-74.0,2010,summer,-1\n";
        let p = parse_sensors(input.as_bytes()).unwrap();
        assert_eq!((p.records.len(), p.errors.len()), (1, 2));
    }

    #[test]
    fn invalid_utf8_field_is_row_error() {
        let mut input = b"lot_id,latitude,longitude,floor_area,land_use\n".to_vec();
        input.extend_from_slice(b"l\xff,40.7,-74.0,100,01\n");
        let p = parse_lots(&input[..]).unwrap();
        assert_eq!(p.errors.len(), 1);
        assert!(p.errors[0].reason.contains("UTF-8"));
    }

    #[test]
    fn dataset_kind_round_trip() {
        for k in DatasetKind::ALL {
            assert_eq!(k.as_str().parse::<DatasetKind>(), Ok(k));
        }
    }
}

//! Regional roll-ups, the species selection rule and regression-ready tables.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enrich::{pollen_impact, JoinedTree, PollenImpactScore, SensorContext};
use crate::geo::{point_in_polygon, polygon_bbox, BoundingBox, GeoPoint, Polygon};
use crate::ingest::{ComplaintCategory, ComplaintRecord, Region, RegionKind, SensorObservation, Severity};
use crate::par::{self, Parallelism};

pub const DEFAULT_SPECIES_THRESHOLD: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregateError {
    #[error("unknown column '{column}'; available: {}", available.join(", "))]
    UnknownColumn { column: String, available: Vec<String> },
    #[error("column '{0}' listed more than once")]
    DuplicateColumn(String),
    #[error("cannot parse column expression '{0}'")]
    BadExpression(String),
    #[error("model table: {0}")]
    Table(String),
}

/// Point-in-region lookup over one set of regions.
///
/// Regions are tried in ascending id order, so a point on a shared boundary
/// goes to the lexicographically lowest id.
pub struct RegionLocator<'a> {
    regions: Vec<(&'a Region, BoundingBox, Vec<(BoundingBox, &'a Polygon)>)>,
}

impl<'a> RegionLocator<'a> {
    pub fn new(regions: &'a [Region]) -> Self {
        let mut sorted: Vec<&Region> = regions.iter().collect();
        sorted.sort_by(|a, b| a.region_id.cmp(&b.region_id));
        let regions = sorted
            .into_iter()
            .filter_map(|r| {
                let parts: Vec<(BoundingBox, &Polygon)> = r.geometry.iter().map(|p| (polygon_bbox(p), p)).collect();
                let outer = parts.iter().map(|(b, _)| *b).reduce(|a, b| a.union(&b))?;
                Some((r, outer, parts))
            })
            .collect();
        RegionLocator { regions }
    }

    /// Position (in id order) of the region containing `p`.
    fn locate_pos(&self, p: GeoPoint) -> Option<usize> {
        self.regions.iter().position(|(_, outer, parts)| {
            outer.contains(&p) && parts.iter().any(|(b, poly)| b.contains(&p) && point_in_polygon(p, poly))
        })
    }

    pub fn locate(&self, p: GeoPoint) -> Option<&'a Region> {
        self.locate_pos(p).map(|i| self.regions[i].0)
    }

    /// Regions in id order.
    pub fn regions(&self) -> impl Iterator<Item = &'a Region> + '_ {
        self.regions.iter().map(|(r, _, _)| *r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment<I> {
    pub assigned: BTreeMap<I, String>,
    pub unassigned: Vec<I>,
}

/// Maps each point id to the region containing it.
pub fn assign_regions<I: Ord + Clone + Send + Sync>(
    points: &[(I, GeoPoint)],
    regions: &[Region],
    mode: Parallelism,
) -> Assignment<I> {
    let locator = RegionLocator::new(regions);
    let found = par::map_slice(points, mode, |(_, p)| locator.locate(*p).map(|r| r.region_id.clone()));
    let mut out = Assignment { assigned: BTreeMap::new(), unassigned: Vec::new() };
    for ((id, _), region) in points.iter().zip(found) {
        match region {
            Some(r) => {
                out.assigned.insert(id.clone(), r);
            }
            None => out.unassigned.push(id.clone()),
        }
    }
    out.unassigned.sort();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionAggregate {
    pub region_id: String,
    pub kind: RegionKind,
    pub name: Option<String>,
    pub borough: Option<String>,
    /// Every census record in the region, whatever its status.
    pub tree_total: usize,
    pub trees_by_species: BTreeMap<String, usize>,
    pub complaints_by_category: BTreeMap<ComplaintCategory, usize>,
    pub pollen: PollenImpactScore,
    pub asthma_ed_rate: Option<f64>,
    pub asthma_ed_visits: Option<f64>,
    pub pm25: Option<f64>,
}

impl RegionAggregate {
    pub fn complaints_total(&self) -> usize {
        self.complaints_by_category.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rollup {
    /// Sorted by region id.
    pub aggregates: Vec<RegionAggregate>,
    pub trees_in: usize,
    pub trees_unassigned: usize,
    pub complaints_in: usize,
    pub complaints_unassigned: usize,
}

impl Rollup {
    /// Every input landed in exactly one region or the unassigned tally.
    pub fn is_conserved(&self) -> bool {
        let trees: usize = self.aggregates.iter().map(|a| a.tree_total).sum();
        let complaints: usize = self.aggregates.iter().map(|a| a.complaints_total()).sum();
        trees + self.trees_unassigned == self.trees_in && complaints + self.complaints_unassigned == self.complaints_in
    }
}

/// Rolls trees and complaints up to `regions` and scores each region.
pub fn aggregate_by_region(
    trees: &[JoinedTree],
    complaints: &[ComplaintRecord],
    regions: &[Region],
    threshold: Severity,
    mode: Parallelism,
) -> Rollup {
    let locator = RegionLocator::new(regions);
    let ordered: Vec<&Region> = locator.regions().collect();
    let tree_home = par::map_slice(trees, mode, |t| locator.locate_pos(t.tree.location));
    let complaint_home = par::map_slice(complaints, mode, |c| locator.locate_pos(c.location));

    let mut members: Vec<Vec<&JoinedTree>> = vec![Vec::new(); ordered.len()];
    let mut trees_unassigned = 0;
    for (t, home) in trees.iter().zip(&tree_home) {
        match home {
            Some(i) => members[*i].push(t),
            None => trees_unassigned += 1,
        }
    }
    let mut by_category: Vec<BTreeMap<ComplaintCategory, usize>> = vec![BTreeMap::new(); ordered.len()];
    let mut complaints_unassigned = 0;
    for (c, home) in complaints.iter().zip(&complaint_home) {
        match home {
            Some(i) => *by_category[*i].entry(c.category).or_insert(0) += 1,
            None => complaints_unassigned += 1,
        }
    }

    let aggregates = ordered
        .iter()
        .zip(members)
        .zip(by_category)
        .map(|((region, inside), complaints_by_category)| {
            let mut trees_by_species = BTreeMap::new();
            for t in &inside {
                *trees_by_species.entry(t.attributes.species.clone()).or_insert(0) += 1;
            }
            RegionAggregate {
                region_id: region.region_id.clone(),
                kind: region.kind,
                name: region.name.clone(),
                borough: region.borough.clone(),
                tree_total: inside.len(),
                trees_by_species,
                complaints_by_category,
                pollen: pollen_impact(region, inside.iter().copied(), threshold),
                asthma_ed_rate: region.asthma_ed_rate,
                asthma_ed_visits: region.asthma_ed_visits,
                pm25: region.pm25,
            }
        })
        .collect();
    Rollup {
        aggregates,
        trees_in: trees.len(),
        trees_unassigned,
        complaints_in: complaints.len(),
        complaints_unassigned,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoroughAggregate {
    pub borough: String,
    pub complaints_by_category: BTreeMap<ComplaintCategory, usize>,
    pub total: usize,
}

/// Complaint counts by the borough named on each record. Records with no
/// borough are grouped under `unspecified`.
pub fn aggregate_by_borough(complaints: &[ComplaintRecord]) -> Vec<BoroughAggregate> {
    let mut groups: BTreeMap<String, BTreeMap<ComplaintCategory, usize>> = BTreeMap::new();
    for c in complaints {
        let name = c.borough.trim().to_lowercase();
        let key = if name.is_empty() { "unspecified".to_string() } else { name };
        *groups.entry(key).or_default().entry(c.category).or_insert(0) += 1;
    }
    groups
        .into_iter()
        .map(|(borough, complaints_by_category)| BoroughAggregate {
            total: complaints_by_category.values().sum(),
            borough,
            complaints_by_category,
        })
        .collect()
}

/// How regions lacking a species enter its median.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedianMode {
    /// Absent means a count of zero.
    #[default]
    ZerosIncluded,
    /// Only regions where the species occurs.
    PresentOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectedSpecies {
    pub species: String,
    pub median: f64,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 { values[mid] } else { (values[mid - 1] + values[mid]) / 2.0 })
}

/// Species whose median per-region count is strictly above `threshold`,
/// by descending median then name.
pub fn select_species(aggregates: &[RegionAggregate], threshold: f64, mode: MedianMode) -> Vec<SelectedSpecies> {
    let species: BTreeSet<&str> =
        aggregates.iter().flat_map(|a| a.trees_by_species.keys().map(String::as_str)).collect();
    let mut out: Vec<SelectedSpecies> = species
        .into_iter()
        .filter_map(|sp| {
            let mut counts: Vec<f64> = aggregates
                .iter()
                .filter_map(|a| match (a.trees_by_species.get(sp), mode) {
                    (Some(&n), _) => Some(n as f64),
                    (None, MedianMode::ZerosIncluded) => Some(0.0),
                    (None, MedianMode::PresentOnly) => None,
                })
                .collect();
            let m = median(&mut counts)?;
            (m > threshold).then(|| SelectedSpecies { species: sp.to_string(), median: m })
        })
        .collect();
    out.sort_by(|a, b| b.median.total_cmp(&a.median).then_with(|| a.species.cmp(&b.species)));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// Natural log; rows with a non-positive value are dropped.
    Ln,
    /// ln(1 + x).
    Ln1p,
}

/// A source column with a transform, written `ln(x)`, `ln1p(x)` or `x`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ColumnExpr {
    pub transform: Transform,
    pub source: String,
}

impl ColumnExpr {
    pub fn new(transform: Transform, source: impl Into<String>) -> Self {
        ColumnExpr { transform, source: source.into() }
    }

    /// Applies the transform; `None` when undefined (ln of x ≤ 0).
    pub fn apply(&self, x: f64) -> Option<f64> {
        let v = match self.transform {
            Transform::Identity => x,
            Transform::Ln if x > 0.0 => x.ln(),
            Transform::Ln => return None,
            Transform::Ln1p if x > -1.0 => x.ln_1p(),
            Transform::Ln1p => return None,
        };
        v.is_finite().then_some(v)
    }
}

impl fmt::Display for ColumnExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.transform {
            Transform::Identity => f.write_str(&self.source),
            Transform::Ln => write!(f, "ln({})", self.source),
            Transform::Ln1p => write!(f, "ln1p({})", self.source),
        }
    }
}

impl FromStr for ColumnExpr {
    type Err = AggregateError;

    fn from_str(s: &str) -> Result<Self, AggregateError> {
        let s = s.trim();
        let bad = || AggregateError::BadExpression(s.to_string());
        let wrapped = |prefix: &str| s.strip_prefix(prefix).and_then(|r| r.strip_suffix(')')).map(str::trim);
        let (transform, source) = if let Some(inner) = wrapped("ln1p(") {
            (Transform::Ln1p, inner)
        } else if let Some(inner) = wrapped("ln(") {
            (Transform::Ln, inner)
        } else {
            (Transform::Identity, s)
        };
        if source.is_empty() || source.contains(['(', ')']) {
            return Err(bad());
        }
        Ok(ColumnExpr::new(transform, source))
    }
}

impl Serialize for ColumnExpr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ColumnExpr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Outcome and predictors of a model table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub outcome: ColumnExpr,
    #[serde(default)]
    pub predictors: Vec<ColumnExpr>,
    /// Appends `species:<name>` under this transform for every selected
    /// species not already listed.
    #[serde(default)]
    pub species_predictors: Option<Transform>,
}

impl TableSpec {
    /// Log asthma ED visits on total trees and six species counts.
    pub fn asthma_species() -> Self {
        let mut predictors = vec![ColumnExpr::new(Transform::Ln1p, "tree_total")];
        for sp in [
            "american linden",
            "callery pear",
            "american elm",
            "japanese zelkova",
            "littleleaf linden",
            "honeylocust",
        ] {
            predictors.push(ColumnExpr::new(Transform::Ln1p, format!("species:{sp}")));
        }
        TableSpec { outcome: ColumnExpr::new(Transform::Ln, "asthma_ed_visits"), predictors, species_predictors: None }
    }

    /// Predictors with the selected species appended when requested.
    pub fn resolved_predictors(&self, selected: &[SelectedSpecies]) -> Vec<ColumnExpr> {
        let mut out = self.predictors.clone();
        if let Some(t) = self.species_predictors {
            for s in selected {
                let expr = ColumnExpr::new(t, format!("species:{}", s.species));
                if !out.contains(&expr) {
                    out.push(expr);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DroppedRow {
    pub id: String,
    pub reason: String,
}

/// Regression-ready table: one outcome, named predictors, optional groups.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTable {
    pub outcome: String,
    pub predictors: Vec<String>,
    pub ids: Vec<String>,
    pub groups: Option<Vec<String>>,
    pub y: Vec<f64>,
    /// Column-major predictor values.
    pub x: Vec<Vec<f64>>,
    pub dropped: Vec<DroppedRow>,
}

impl ModelTable {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        if name == self.outcome {
            return Some(&self.y);
        }
        self.predictors.iter().position(|p| p == name).map(|i| self.x[i].as_slice())
    }

    /// Columns: `id`, `group` when present, the outcome, then predictors.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string()];
        if self.groups.is_some() {
            header.push("group".into());
        }
        header.push(self.outcome.clone());
        header.extend(self.predictors.iter().cloned());
        w.write_record(&header)?;
        for (r, id) in self.ids.iter().enumerate() {
            let mut row = vec![id.clone()];
            if let Some(g) = &self.groups {
                row.push(g[r].clone());
            }
            row.push(self.y[r].to_string());
            row.extend(self.x.iter().map(|c| c[r].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a table written by [`write_csv`](Self::write_csv), taking the
    /// outcome and predictors named in the arguments.
    pub fn read_csv<R: Read>(input: R, outcome: &str, predictors: &[String]) -> Result<Self, AggregateError> {
        let terr = |m: String| AggregateError::Table(m);
        let mut rdr = csv::Reader::from_reader(input);
        let header: Vec<String> = rdr.headers().map_err(|e| terr(e.to_string()))?.iter().map(str::to_string).collect();
        let find = |name: &str| -> Result<usize, AggregateError> {
            header.iter().position(|h| h == name).ok_or_else(|| AggregateError::UnknownColumn {
                column: name.to_string(),
                available: header.iter().filter(|h| *h != "id" && *h != "group").cloned().collect(),
            })
        };
        let id_col = header.iter().position(|h| h == "id").ok_or_else(|| terr("missing 'id' column".into()))?;
        let group_col = header.iter().position(|h| h == "group");
        let y_col = find(outcome)?;
        let mut seen = HashSet::new();
        let mut x_cols = Vec::new();
        for p in predictors {
            if !seen.insert(p.as_str()) || p == outcome {
                return Err(AggregateError::DuplicateColumn(p.clone()));
            }
            x_cols.push(find(p)?);
        }
        let mut table = ModelTable {
            outcome: outcome.to_string(),
            predictors: predictors.to_vec(),
            ids: Vec::new(),
            groups: group_col.map(|_| Vec::new()),
            y: Vec::new(),
            x: vec![Vec::new(); predictors.len()],
            dropped: Vec::new(),
        };
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| terr(e.to_string()))?;
            let num = |c: usize| -> Result<f64, AggregateError> {
                let raw = rec.get(c).unwrap_or("");
                raw.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| terr(format!("line {}: column '{}' is not a finite number: '{raw}'", line + 2, header[c])))
            };
            table.y.push(num(y_col)?);
            for (slot, &c) in table.x.iter_mut().zip(&x_cols) {
                slot.push(num(c)?);
            }
            table.ids.push(rec.get(id_col).unwrap_or("").to_string());
            if let (Some(g), Some(c)) = (table.groups.as_mut(), group_col) {
                g.push(rec.get(c).unwrap_or("").to_string());
            }
        }
        Ok(table)
    }
}

/// Named numeric inputs available to a table row.
trait RowSource {
    fn id(&self) -> String;
    fn value(&self, source: &str) -> Option<Option<f64>>;
}

impl<T: RowSource> RowSource for &T {
    fn id(&self) -> String {
        (*self).id()
    }

    fn value(&self, source: &str) -> Option<Option<f64>> {
        (*self).value(source)
    }
}

const REGION_SOURCES: &[&str] = &[
    "tree_total",
    "alive_trees",
    "severe_trees",
    "severe_ratio",
    "vulnerable_ratio",
    "pollen_score",
    "total_population",
    "vulnerable_population",
    "complaints_total",
    "asthma_ed_visits",
    "asthma_ed_rate",
    "pm25",
];

impl RowSource for RegionAggregate {
    fn id(&self) -> String {
        self.region_id.clone()
    }

    /// Outer `None` for an unknown source, inner `None` for a missing value.
    fn value(&self, source: &str) -> Option<Option<f64>> {
        if let Some(sp) = source.strip_prefix("species:") {
            return Some(Some(self.trees_by_species.get(sp).copied().unwrap_or(0) as f64));
        }
        if let Some(cat) = source.strip_prefix("complaints:") {
            let cat: ComplaintCategory = cat.parse().ok()?;
            return Some(Some(self.complaints_by_category.get(&cat).copied().unwrap_or(0) as f64));
        }
        let v = match source {
            "tree_total" => Some(self.tree_total as f64),
            "alive_trees" => Some(self.pollen.alive_trees as f64),
            "severe_trees" => Some(self.pollen.severe_trees as f64),
            "severe_ratio" => Some(self.pollen.severe_ratio),
            "vulnerable_ratio" => Some(self.pollen.vulnerable_ratio),
            "pollen_score" => Some(self.pollen.score),
            "total_population" => Some(self.pollen.total_population as f64),
            "vulnerable_population" => Some(self.pollen.vulnerable_population as f64),
            "complaints_total" => Some(self.complaints_total() as f64),
            "asthma_ed_visits" => self.asthma_ed_visits,
            "asthma_ed_rate" => self.asthma_ed_rate,
            "pm25" => self.pm25,
            _ => return None,
        };
        Some(v)
    }
}

fn available(fixed: &[&str]) -> Vec<String> {
    let mut out: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
    out.push("species:<name>".into());
    if fixed.contains(&"tree_total") {
        out.extend(ComplaintCategory::ALL.iter().map(|c| format!("complaints:{c}")));
    }
    out
}

fn build_rows<S: RowSource>(
    rows: &[(S, Option<String>)],
    outcome: &ColumnExpr,
    predictors: &[ColumnExpr],
    fixed_sources: &[&str],
) -> Result<ModelTable, AggregateError> {
    let mut seen = HashSet::new();
    for e in std::iter::once(outcome).chain(predictors) {
        let name = e.to_string();
        if !seen.insert(name.clone()) {
            return Err(AggregateError::DuplicateColumn(name));
        }
        let known = e.source.starts_with("species:")
            || (fixed_sources.contains(&"tree_total")
                && e.source.strip_prefix("complaints:").is_some_and(|c| c.parse::<ComplaintCategory>().is_ok()))
            || fixed_sources.contains(&e.source.as_str());
        if !known {
            return Err(AggregateError::UnknownColumn { column: e.source.clone(), available: available(fixed_sources) });
        }
    }
    let with_groups = rows.iter().any(|(_, g)| g.is_some());
    let mut table = ModelTable {
        outcome: outcome.to_string(),
        predictors: predictors.iter().map(ToString::to_string).collect(),
        ids: Vec::new(),
        groups: with_groups.then(Vec::new),
        y: Vec::new(),
        x: vec![Vec::new(); predictors.len()],
        dropped: Vec::new(),
    };
    'rows: for (row, group) in rows {
        let mut values = Vec::with_capacity(predictors.len() + 1);
        for e in std::iter::once(outcome).chain(predictors) {
            let raw = row.value(&e.source).flatten();
            let reason = match raw.map(|v| e.apply(v)) {
                Some(Some(v)) => {
                    values.push(v);
                    continue;
                }
                None => format!("missing {}", e.source),
                Some(None) => format!("{e} undefined for {}", raw.unwrap_or(f64::NAN)),
            };
            table.dropped.push(DroppedRow { id: row.id(), reason });
            continue 'rows;
        }
        table.ids.push(row.id());
        if let Some(g) = table.groups.as_mut() {
            g.push(group.clone().unwrap_or_default());
        }
        table.y.push(values[0]);
        for (col, v) in table.x.iter_mut().zip(&values[1..]) {
            col.push(*v);
        }
    }
    Ok(table)
}

/// One row per region aggregate, in aggregate order.
pub fn build_model_table(
    aggregates: &[RegionAggregate],
    spec: &TableSpec,
    selected: &[SelectedSpecies],
) -> Result<ModelTable, AggregateError> {
    let rows: Vec<(&RegionAggregate, Option<String>)> = aggregates.iter().map(|a| (a, None)).collect();
    build_rows(&rows, &spec.outcome, &spec.resolved_predictors(selected), REGION_SOURCES)
}

/// Fixed-effect grouping of sensor observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelGroup {
    #[default]
    Season,
    Year,
    YearSeason,
    Sensor,
}

impl FromStr for PanelGroup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "season" => Ok(PanelGroup::Season),
            "year" => Ok(PanelGroup::Year),
            "year_season" => Ok(PanelGroup::YearSeason),
            "sensor" => Ok(PanelGroup::Sensor),
            other => Err(format!("unknown panel group '{other}' (season, year, year_season, sensor)")),
        }
    }
}

struct SensorRow<'a> {
    obs: &'a SensorObservation,
    ctx: Option<&'a SensorContext>,
}

const SENSOR_SOURCES: &[&str] =
    &["pm25", "total_trees", "species_count", "severe_allergen_trees", "floor_area_within", "year"];

impl RowSource for SensorRow<'_> {
    fn id(&self) -> String {
        format!("{}/{}/{}", self.obs.sensor_id, self.obs.year, self.obs.season)
    }

    fn value(&self, source: &str) -> Option<Option<f64>> {
        if let Some(sp) = source.strip_prefix("species:") {
            return Some(self.ctx.map(|c| c.trees_by_species.get(sp).copied().unwrap_or(0) as f64));
        }
        let v = match source {
            "pm25" => Some(self.obs.pm25),
            "year" => Some(f64::from(self.obs.year)),
            "total_trees" => self.ctx.map(|c| c.total_trees as f64),
            "species_count" => self.ctx.map(|c| c.species_count as f64),
            "severe_allergen_trees" => self.ctx.map(|c| c.severe_allergen_trees as f64),
            "floor_area_within" => self.ctx.map(|c| c.floor_area_within),
            _ => return None,
        };
        Some(v)
    }
}

/// One row per sensor observation, sorted by (sensor, year, season), with
/// predictors drawn from the sensor's context.
pub fn build_panel_table(
    observations: &[SensorObservation],
    contexts: &[SensorContext],
    outcome: &ColumnExpr,
    predictors: &[ColumnExpr],
    group: PanelGroup,
) -> Result<ModelTable, AggregateError> {
    let by_id: BTreeMap<&str, &SensorContext> = contexts.iter().map(|c| (c.sensor_id.as_str(), c)).collect();
    let mut obs: Vec<&SensorObservation> = observations.iter().collect();
    obs.sort_by(|a, b| (&a.sensor_id, a.year, a.season).cmp(&(&b.sensor_id, b.year, b.season)));
    let rows: Vec<(SensorRow, Option<String>)> = obs
        .into_iter()
        .map(|o| {
            let g = match group {
                PanelGroup::Season => o.season.to_string(),
                PanelGroup::Year => o.year.to_string(),
                PanelGroup::YearSeason => format!("{}-{}", o.year, o.season),
                PanelGroup::Sensor => o.sensor_id.clone(),
            };
            (SensorRow { obs: o, ctx: by_id.get(o.sensor_id.as_str()).copied() }, Some(g))
        })
        .collect();
    build_rows(&rows, outcome, predictors, SENSOR_SOURCES)
}

/// Delimited aggregates: fixed columns, then one column per complaint
/// category and per species seen in any region.
pub fn write_aggregates<W: Write>(aggregates: &[RegionAggregate], out: W) -> csv::Result<()> {
    let species: BTreeSet<&str> =
        aggregates.iter().flat_map(|a| a.trees_by_species.keys().map(String::as_str)).collect();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "region_id",
        "kind",
        "name",
        "borough",
        "tree_total",
        "alive_trees",
        "severe_trees",
        "severe_ratio",
        "vulnerable_ratio",
        "pollen_score",
        "degenerate",
        "total_population",
        "vulnerable_population",
        "asthma_ed_rate",
        "asthma_ed_visits",
        "pm25",
    ]
    .map(String::from)
    .to_vec();
    header.extend(ComplaintCategory::ALL.iter().map(|c| format!("complaints:{c}")));
    header.extend(species.iter().map(|s| format!("species:{s}")));
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for a in aggregates {
        let mut row = vec![
            a.region_id.clone(),
            a.kind.to_string(),
            a.name.clone().unwrap_or_default(),
            a.borough.clone().unwrap_or_default(),
            a.tree_total.to_string(),
            a.pollen.alive_trees.to_string(),
            a.pollen.severe_trees.to_string(),
            a.pollen.severe_ratio.to_string(),
            a.pollen.vulnerable_ratio.to_string(),
            a.pollen.score.to_string(),
            a.pollen.degenerate.to_string(),
            a.pollen.total_population.to_string(),
            a.pollen.vulnerable_population.to_string(),
            opt(a.asthma_ed_rate),
            opt(a.asthma_ed_visits),
            opt(a.pm25),
        ];
        row.extend(
            ComplaintCategory::ALL.iter().map(|c| a.complaints_by_category.get(c).copied().unwrap_or(0).to_string()),
        );
        row.extend(species.iter().map(|s| a.trees_by_species.get(*s).copied().unwrap_or(0).to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_boroughs<W: Write>(boroughs: &[BoroughAggregate], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["borough".to_string()];
    header.extend(ComplaintCategory::ALL.iter().map(|c| c.to_string()));
    header.push("total".into());
    w.write_record(&header)?;
    for b in boroughs {
        let mut row = vec![b.borough.clone()];
        row.extend(
            ComplaintCategory::ALL.iter().map(|c| b.complaints_by_category.get(c).copied().unwrap_or(0).to_string()),
        );
        row.push(b.total.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

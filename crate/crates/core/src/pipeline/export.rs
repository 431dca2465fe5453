//! Artifact writers: delimited tables and GeoJSON layers for each stage.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use super::run::{Aggregated, CorrelationResult, Enriched, FitOutput};
use super::{OutputSink, PipelineError, Stage};
use crate::aggregate::{write_aggregates, write_boroughs, ModelTable, RegionAggregate};
use crate::enrich::{seasonal_activity, SensorContext};
use crate::ingest::{
    geometry_value, point_geometry, region_properties, write_features, ComplaintCategory, FeatureProperties, Region,
    RegionKind, Season, ValidationReport,
};

fn csv_bytes(
    path: &str,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<Vec<u8>, PipelineError> {
    let fail = |e: csv::Error| PipelineError::stage(Stage::Output, path, e);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(&row).map_err(fail)?;
    }
    w.into_inner().map_err(|e| PipelineError::stage(Stage::Output, path, e))
}

fn put_csv(
    sink: &mut OutputSink,
    path: &str,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), PipelineError> {
    let bytes = csv_bytes(path, header, rows)?;
    sink.put(path, &bytes)
}

fn put_with<F>(sink: &mut OutputSink, path: &str, write: F) -> Result<(), PipelineError>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), String>,
{
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| PipelineError::stage(Stage::Output, path, e))?;
    sink.put(path, &buf)
}

fn put_features(
    sink: &mut OutputSink,
    path: &str,
    features: impl IntoIterator<Item = (Value, FeatureProperties)>,
) -> Result<(), PipelineError> {
    put_with(sink, path, |buf| write_features(features, buf).map_err(|e| e.to_string()))
}

/// `ingest/validation.csv` and `ingest/row_errors.csv`.
pub fn write_ingest_outputs(
    sink: &mut OutputSink,
    reports: &BTreeMap<String, ValidationReport>,
) -> Result<(), PipelineError> {
    put_csv(
        sink,
        "ingest/validation.csv",
        &["dataset", "rows_in", "records", "row_errors"],
        reports.iter().map(|(label, r)| {
            vec![label.clone(), r.rows_in.to_string(), r.records.to_string(), r.row_errors.len().to_string()]
        }),
    )?;
    put_csv(
        sink,
        "ingest/row_errors.csv",
        &["dataset", "line", "reason"],
        reports
            .iter()
            .flat_map(|(label, r)| r.row_errors.iter().map(move |e| vec![label.clone(), e.line.to_string(), e.reason.clone()])),
    )
}

/// Per-tree exports: attributes, complaint counts, seasonal activity and
/// taxonomy coverage.
pub fn write_enrich_outputs(sink: &mut OutputSink, enriched: &Enriched, by_period: bool) -> Result<(), PipelineError> {
    let mut header: Vec<String> = [
        "tree_id",
        "latitude",
        "longitude",
        "species",
        "status",
        "dbh",
        "nta_id",
        "zip",
        "allergic_pollen",
        "severity",
        "buffer_radius_m",
    ]
    .map(String::from)
    .to_vec();
    header.extend(ComplaintCategory::ALL.iter().map(|c| format!("complaints:{c}")));
    header.push("complaints_total".into());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = enriched.trees.iter().map(|t| {
        let mut row = vec![
            t.tree.tree_id.clone(),
            t.tree.location.lat().to_string(),
            t.tree.location.lon().to_string(),
            t.attributes.species.clone(),
            t.tree.status.to_string(),
            t.tree.dbh.to_string(),
            t.tree.nta_id.clone(),
            t.tree.zip.clone(),
            t.attributes.allergic_pollen.to_string(),
            t.attributes.severity.to_string(),
            t.buffer_radius_m.to_string(),
        ];
        row.extend(ComplaintCategory::ALL.iter().map(|&c| t.count(c).to_string()));
        row.push(t.total().to_string());
        row
    });
    put_csv(sink, "enrich/trees.csv", &header_refs, rows)?;

    put_features(
        sink,
        "enrich/trees.geojson",
        enriched.trees.iter().map(|t| {
            let mut props = FeatureProperties::new();
            props.insert("tree_id".into(), json!(t.tree.tree_id));
            props.insert("species".into(), json!(t.attributes.species));
            props.insert("status".into(), json!(t.tree.status.as_str()));
            props.insert("severity".into(), json!(t.attributes.severity.as_str()));
            props.insert("allergic_pollen".into(), json!(t.attributes.allergic_pollen));
            for &c in ComplaintCategory::ALL {
                props.insert(format!("complaints:{c}"), json!(t.count(c)));
            }
            props.insert("complaints_total".into(), json!(t.total()));
            (point_geometry(t.tree.location), props)
        }),
    )?;

    if by_period {
        let rows = enriched.trees.iter().flat_map(|t| {
            t.nearby_complaints.iter().filter_map(|(bucket, n)| {
                let p = bucket.period?;
                Some(vec![
                    t.tree.tree_id.clone(),
                    p.year.to_string(),
                    p.season.to_string(),
                    bucket.category.to_string(),
                    n.to_string(),
                ])
            })
        });
        put_csv(sink, "enrich/tree_complaints_by_period.csv", &["tree_id", "year", "season", "category", "count"], rows)?;
    }

    let per_season: Vec<_> = Season::ALL.iter().map(|&s| seasonal_activity(&enriched.joined, s)).collect();
    let mut header = vec!["tree_id", "species"];
    header.extend(Season::ALL.iter().map(|s| s.as_str()));
    let rows = (0..enriched.joined.len()).map(|i| {
        let mut row = vec![per_season[0][i].tree_id.clone(), per_season[0][i].species.clone()];
        row.extend(per_season.iter().map(|flags| flags[i].active.to_string()));
        row
    });
    put_csv(sink, "enrich/seasonal_activity.csv", &header, rows)?;

    let c = &enriched.coverage;
    let mut rows = vec![
        vec!["summary".to_string(), "trees".into(), c.trees.to_string()],
        vec!["summary".into(), "matched_trees".into(), c.matched_trees.to_string()],
        vec!["summary".into(), "taxonomy_rows".into(), c.taxonomy_rows.to_string()],
    ];
    rows.extend(c.missing_species.iter().map(|(sp, n)| vec!["missing_species".into(), sp.clone(), n.to_string()]));
    put_csv(sink, "enrich/taxonomy_coverage.csv", &["section", "key", "value"], rows)
}

/// Tree stock and floor area around each sensor site.
pub fn write_sensor_outputs(sink: &mut OutputSink, contexts: &[SensorContext]) -> Result<(), PipelineError> {
    let species: Vec<&str> = {
        let mut all: Vec<&str> =
            contexts.iter().flat_map(|c| c.trees_by_species.keys().map(String::as_str)).collect();
        all.sort_unstable();
        all.dedup();
        all
    };
    let mut header: Vec<String> = [
        "sensor_id",
        "latitude",
        "longitude",
        "buffer_radius_m",
        "total_trees",
        "species_count",
        "severe_allergen_trees",
        "floor_area_within",
    ]
    .map(String::from)
    .to_vec();
    header.extend(species.iter().map(|s| format!("species:{s}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = contexts.iter().map(|c| {
        let mut row = vec![
            c.sensor_id.clone(),
            c.location.lat().to_string(),
            c.location.lon().to_string(),
            c.buffer_radius_m.to_string(),
            c.total_trees.to_string(),
            c.species_count.to_string(),
            c.severe_allergen_trees.to_string(),
            c.floor_area_within.to_string(),
        ];
        row.extend(species.iter().map(|s| c.trees_by_species.get(*s).copied().unwrap_or(0).to_string()));
        row
    });
    put_csv(sink, "enrich/sensor_context.csv", &header_refs, rows)?;
    put_features(
        sink,
        "enrich/sensor_context.geojson",
        contexts.iter().map(|c| {
            let mut props = FeatureProperties::new();
            props.insert("sensor_id".into(), json!(c.sensor_id));
            props.insert("total_trees".into(), json!(c.total_trees));
            props.insert("species_count".into(), json!(c.species_count));
            props.insert("severe_allergen_trees".into(), json!(c.severe_allergen_trees));
            props.insert("floor_area_within".into(), json!(c.floor_area_within));
            (point_geometry(c.location), props)
        }),
    )
}

/// `score/pollen_<kind>.csv` and a polygon layer carrying the score.
pub fn write_pollen_outputs(
    sink: &mut OutputSink,
    kind: RegionKind,
    aggregates: &[RegionAggregate],
    regions: &[Region],
) -> Result<(), PipelineError> {
    let rows = aggregates.iter().map(|a| {
        let p = &a.pollen;
        vec![
            a.region_id.clone(),
            p.alive_trees.to_string(),
            p.severe_trees.to_string(),
            p.total_population.to_string(),
            p.vulnerable_population.to_string(),
            p.severe_ratio.to_string(),
            p.vulnerable_ratio.to_string(),
            p.score.to_string(),
            p.degenerate.to_string(),
        ]
    });
    put_csv(
        sink,
        &format!("score/pollen_{kind}.csv"),
        &[
            "region_id",
            "alive_trees",
            "severe_trees",
            "total_population",
            "vulnerable_population",
            "severe_ratio",
            "vulnerable_ratio",
            "score",
            "degenerate",
        ],
        rows,
    )?;
    let by_id: BTreeMap<&str, &Region> = regions.iter().map(|r| (r.region_id.as_str(), r)).collect();
    let features = aggregates.iter().filter_map(|a| {
        let region = by_id.get(a.region_id.as_str())?;
        let mut props = region_properties(region);
        props.insert("alive_trees".into(), json!(a.pollen.alive_trees));
        props.insert("severe_trees".into(), json!(a.pollen.severe_trees));
        props.insert("pollen_score".into(), json!(a.pollen.score));
        props.insert("degenerate".into(), json!(a.pollen.degenerate));
        Some((geometry_value(&region.geometry), props))
    });
    put_features(sink, &format!("score/pollen_{kind}.geojson"), features)
}

/// Per-kind roll-ups, borough complaint counts and the selected species.
pub fn write_aggregate_outputs(sink: &mut OutputSink, aggregated: &Aggregated) -> Result<(), PipelineError> {
    for (kind, rollup) in &aggregated.rollups {
        put_with(sink, &format!("aggregate/{kind}.csv"), |buf| {
            write_aggregates(&rollup.aggregates, buf).map_err(|e| e.to_string())
        })?;
    }
    put_with(sink, "aggregate/boroughs.csv", |buf| {
        write_boroughs(&aggregated.boroughs, buf).map_err(|e| e.to_string())
    })?;
    put_csv(
        sink,
        "aggregate/selected_species.csv",
        &["species", "median"],
        aggregated.selected.iter().map(|s| vec![s.species.clone(), s.median.to_string()]),
    )
}

/// `tables/<name>.csv` and the rows left out of it.
pub fn write_table_outputs(sink: &mut OutputSink, name: &str, table: &ModelTable) -> Result<(), PipelineError> {
    put_with(sink, &format!("tables/{name}.csv"), |buf| table.write_csv(buf).map_err(|e| e.to_string()))?;
    put_csv(
        sink,
        &format!("tables/{name}_dropped.csv"),
        &["id", "reason"],
        table.dropped.iter().map(|d| vec![d.id.clone(), d.reason.clone()]),
    )
}

/// Text report, delimited coefficients and, for panel fits, group effects.
pub fn write_fit_outputs(sink: &mut OutputSink, name: &str, fit: &FitOutput) -> Result<(), PipelineError> {
    sink.put(&format!("fits/{name}.txt"), fit.text.as_bytes())?;
    sink.put(&format!("fits/{name}.csv"), fit.csv.as_bytes())?;
    if let Some(effects) = &fit.group_effects {
        put_csv(
            sink,
            &format!("fits/{name}_group_effects.csv"),
            &["group", "effect"],
            effects.iter().map(|(g, v)| vec![g.clone(), v.to_string()]),
        )?;
    }
    Ok(())
}

pub fn write_correlations(
    sink: &mut OutputSink,
    correlations: &BTreeMap<String, CorrelationResult>,
) -> Result<(), PipelineError> {
    put_csv(
        sink,
        "fits/correlations.csv",
        &["name", "region_kind", "x", "y", "n", "dropped_rows", "r", "r2"],
        correlations.iter().map(|(name, c)| {
            vec![
                name.clone(),
                c.region_kind.to_string(),
                c.x.clone(),
                c.y.clone(),
                c.n.to_string(),
                c.dropped_rows.to_string(),
                c.r.to_string(),
                c.r2.to_string(),
            ]
        }),
    )
}

//! Stage functions and the whole-run driver.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::config::{ModelKind, ModelSpec, RunConfig};
use super::export;
use super::{OutputSink, PipelineError, Stage};
use crate::aggregate::{
    aggregate_by_borough, build_model_table, build_panel_table, select_species, BoroughAggregate,
    ModelTable, Rollup, SelectedSpecies, TableSpec,
};
use crate::enrich::{
    associate_complaints, join_taxonomy, position_index, sensor_context, sensor_sites, AssociationOptions,
    CoverageReport, EnrichedTree, JoinedTree, SensorContext, SensorInputs, SensorSite,
};
use crate::ingest::{
    parse_complaints, parse_lots, parse_regions, parse_sensors, parse_taxonomy, parse_trees, ComplaintRecord,
    DatasetKind, IngestError, LotDensity, Parsed, Region, RegionKind, SensorObservation, SpeciesAttributes,
    TreeRecord, ValidationReport,
};
use crate::stats::{
    correlation_report, ols_fit, panel_fit, render_csv, render_text, DesignMatrix, PanelData, RegressionResult,
    ReportOptions,
};

/// Parsed inputs plus one validation report per file, keyed by the
/// dataset label (`trees`, `regions.zip`, ...).
#[derive(Debug, Clone, Default)]
pub struct Inputs {
    pub trees: Vec<TreeRecord>,
    pub taxonomy: Vec<SpeciesAttributes>,
    pub regions: BTreeMap<RegionKind, Vec<Region>>,
    pub complaints: Vec<ComplaintRecord>,
    pub sensors: Vec<SensorObservation>,
    pub lots: Vec<LotDensity>,
    pub reports: BTreeMap<String, ValidationReport>,
}

fn read_file<T>(
    path: &Path,
    label: &str,
    kind: DatasetKind,
    reports: &mut BTreeMap<String, ValidationReport>,
    parse: impl FnOnce(BufReader<File>) -> Result<Parsed<T>, IngestError>,
) -> Result<Vec<T>, PipelineError> {
    let context = path.display().to_string();
    let file = File::open(path).map_err(|e| PipelineError::stage(Stage::Ingest, context.clone(), e))?;
    let parsed = parse(BufReader::new(file)).map_err(|e| PipelineError::stage(Stage::Ingest, context, e))?;
    reports.insert(label.to_string(), ValidationReport::of(kind, &parsed));
    Ok(parsed.records)
}

/// Parses every configured file. Rejected rows are reported, not fatal.
pub fn ingest(cfg: &RunConfig) -> Result<Inputs, PipelineError> {
    let d = &cfg.datasets;
    let mut inputs = Inputs::default();
    let reports = &mut inputs.reports;
    inputs.trees = read_file(&d.trees, "trees", DatasetKind::Trees, reports, parse_trees)?;
    inputs.taxonomy = read_file(&d.taxonomy, "taxonomy", DatasetKind::Taxonomy, reports, parse_taxonomy)?;
    for (&kind, path) in &d.regions {
        let label = format!("regions.{kind}");
        let mut regions = read_file(path, &label, DatasetKind::Regions, reports, |r| parse_regions(r, Some(kind)))?;
        // the file's slot in the config decides its kind
        for r in &mut regions {
            r.kind = kind;
        }
        inputs.regions.insert(kind, regions);
    }
    if let Some(p) = &d.complaints {
        inputs.complaints = read_file(p, "complaints", DatasetKind::Complaints, reports, parse_complaints)?;
    }
    if let Some(p) = &d.sensors {
        inputs.sensors = read_file(p, "sensors", DatasetKind::Sensors, reports, parse_sensors)?;
    }
    if let Some(p) = &d.lots {
        inputs.lots = read_file(p, "lots", DatasetKind::Lots, reports, parse_lots)?;
    }
    Ok(inputs)
}

#[derive(Debug, Clone)]
pub struct Enriched {
    pub joined: Vec<JoinedTree>,
    pub coverage: CoverageReport,
    /// Sorted by tree id.
    pub trees: Vec<EnrichedTree>,
    pub sites: Vec<SensorSite>,
    /// Sorted by sensor id.
    pub contexts: Vec<SensorContext>,
}

pub fn enrich(cfg: &RunConfig, inputs: &Inputs) -> Result<Enriched, PipelineError> {
    let fail = |context: &str, e: &dyn std::fmt::Display| PipelineError::stage(Stage::Enrich, context, e);
    let radius = cfg.buffer_radius_m;
    let mode = cfg.parallelism;
    let (joined, coverage) = join_taxonomy(&inputs.trees, &inputs.taxonomy).map_err(|e| fail("taxonomy", &e))?;

    let complaint_index =
        position_index(&inputs.complaints, |c| c.location, radius).map_err(|e| fail("complaints", &e))?;
    let window = &cfg.complaint_window;
    let opts = AssociationOptions { radius_m: radius, from: window.from, until: window.until, by_period: window.by_period };
    let trees = associate_complaints(&joined, &inputs.complaints, &complaint_index, &opts, mode)
        .map_err(|e| fail("complaints", &e))?;

    let sites = sensor_sites(&inputs.sensors).map_err(|e| fail("sensors", &e))?;
    let contexts = if sites.is_empty() {
        Vec::new()
    } else {
        let tree_index = position_index(&joined, |t| t.tree.location, radius).map_err(|e| fail("trees", &e))?;
        let lot_index = position_index(&inputs.lots, |l| l.location, radius).map_err(|e| fail("lots", &e))?;
        let sensor_inputs =
            SensorInputs { trees: &joined, tree_index: &tree_index, lots: &inputs.lots, lot_index: &lot_index };
        sensor_context(&sites, &sensor_inputs, radius, cfg.severity_threshold, mode).map_err(|e| fail("sensors", &e))?
    };
    Ok(Enriched { joined, coverage, trees, sites, contexts })
}

#[derive(Debug, Clone)]
pub struct Aggregated {
    pub rollups: BTreeMap<RegionKind, Rollup>,
    pub boroughs: Vec<BoroughAggregate>,
    /// Chosen on the `species_region_kind` roll-up.
    pub selected: Vec<SelectedSpecies>,
}

pub fn aggregate(cfg: &RunConfig, inputs: &Inputs, enriched: &Enriched) -> Result<Aggregated, PipelineError> {
    let rollups: BTreeMap<RegionKind, Rollup> = inputs
        .regions
        .iter()
        .map(|(&kind, regions)| {
            let rollup = crate::aggregate::aggregate_by_region(
                &enriched.joined,
                &inputs.complaints,
                regions,
                cfg.severity_threshold,
                cfg.parallelism,
            );
            (kind, rollup)
        })
        .collect();
    let species_rollup = rollups.get(&cfg.species_region_kind).ok_or_else(|| {
        PipelineError::stage(Stage::Aggregate, "species selection", format!("no {} regions", cfg.species_region_kind))
    })?;
    let selected = select_species(&species_rollup.aggregates, cfg.species_threshold, cfg.median_mode);
    Ok(Aggregated { rollups, boroughs: aggregate_by_borough(&inputs.complaints), selected })
}

/// Builds the regression table a model entry describes.
pub fn build_table(
    spec: &ModelSpec,
    inputs: &Inputs,
    enriched: &Enriched,
    aggregated: &Aggregated,
) -> Result<ModelTable, PipelineError> {
    let fail = |e: &dyn std::fmt::Display| PipelineError::stage(Stage::Aggregate, format!("table {}", spec.name), e);
    match spec.kind {
        ModelKind::Ols => {
            let rollup = aggregated
                .rollups
                .get(&spec.region_kind)
                .ok_or_else(|| fail(&format!("no {} regions loaded", spec.region_kind)))?;
            build_model_table(&rollup.aggregates, &spec.table_spec(), &aggregated.selected).map_err(|e| fail(&e))
        }
        ModelKind::Panel => {
            build_panel_table(&inputs.sensors, &enriched.contexts, &spec.outcome, &spec.predictors, spec.group)
                .map_err(|e| fail(&e))
        }
    }
}

/// Reads a table written by the `table` stage. For specs that append the
/// selected species, every non-outcome column is taken as a predictor.
pub fn load_table(spec: &ModelSpec, path: &Path) -> Result<ModelTable, PipelineError> {
    let context = path.display().to_string();
    let fail = |e: &dyn std::fmt::Display| PipelineError::stage(Stage::Fit, context.clone(), e);
    let outcome = spec.outcome.to_string();
    let predictors: Vec<String> = if spec.species_predictors.is_some() {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| fail(&e))?;
        rdr.headers()
            .map_err(|e| fail(&e))?
            .iter()
            .filter(|h| !matches!(*h, "id" | "group") && *h != outcome)
            .map(str::to_string)
            .collect()
    } else {
        spec.predictors.iter().map(ToString::to_string).collect()
    };
    let file = File::open(path).map_err(|e| fail(&e))?;
    ModelTable::read_csv(BufReader::new(file), &outcome, &predictors).map_err(|e| fail(&e))
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub result: RegressionResult,
    /// Panel fits only.
    pub group_effects: Option<BTreeMap<String, f64>>,
    pub text: String,
    pub csv: String,
}

fn group_label(spec: &ModelSpec) -> &'static str {
    match spec.group {
        crate::aggregate::PanelGroup::Season => "season",
        crate::aggregate::PanelGroup::Year => "year",
        crate::aggregate::PanelGroup::YearSeason => "year_season",
        crate::aggregate::PanelGroup::Sensor => "sensor",
    }
}

pub fn fit_table(spec: &ModelSpec, table: &ModelTable) -> Result<FitOutput, PipelineError> {
    let fail = |e: &dyn std::fmt::Display| PipelineError::stage(Stage::Fit, format!("model {}", spec.name), e);
    let mut opts = ReportOptions::new(table.outcome.clone());
    let (result, group_effects) = match spec.kind {
        ModelKind::Ols => {
            let x = DesignMatrix::new(table.predictors.clone(), table.x.clone(), spec.intercept).map_err(|e| fail(&e))?;
            (ols_fit(&x, &table.y).map_err(|e| fail(&e))?, None)
        }
        ModelKind::Panel => {
            let groups = table.groups.clone().ok_or_else(|| fail(&"table has no group column"))?;
            let data = PanelData { names: table.predictors.clone(), columns: table.x.clone(), groups, y: table.y.clone() };
            let fit = panel_fit(&data).map_err(|e| fail(&e))?;
            opts.fixed_effect = Some((group_label(spec).to_string(), fit.groups));
            (fit.fit, Some(fit.group_effects))
        }
    };
    let text = render_text(&result, &opts);
    let csv = render_csv(&result, &opts);
    Ok(FitOutput { result, group_effects, text, csv })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RollupSummary {
    pub regions: usize,
    pub trees_in: usize,
    pub trees_unassigned: usize,
    pub complaints_in: usize,
    pub complaints_unassigned: usize,
    pub conserved: bool,
}

impl From<&Rollup> for RollupSummary {
    fn from(r: &Rollup) -> Self {
        RollupSummary {
            regions: r.aggregates.len(),
            trees_in: r.trees_in,
            trees_unassigned: r.trees_unassigned,
            complaints_in: r.complaints_in,
            complaints_unassigned: r.complaints_unassigned,
            conserved: r.is_conserved(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub kind: ModelKind,
    pub outcome: String,
    pub n: usize,
    pub k: usize,
    pub dropped_rows: usize,
    pub r2: f64,
    pub adjusted_r2: f64,
    pub f_stat: f64,
    pub f_p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationResult {
    pub region_kind: RegionKind,
    pub x: String,
    pub y: String,
    pub n: usize,
    pub dropped_rows: usize,
    pub r: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnrichSummary {
    pub trees: usize,
    pub trees_with_complaints: usize,
    pub complaint_links: usize,
    pub sensor_sites: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub ingest: BTreeMap<String, ValidationReport>,
    pub coverage: CoverageReport,
    pub enrich: EnrichSummary,
    pub rollups: BTreeMap<String, RollupSummary>,
    pub selected_species: Vec<SelectedSpecies>,
    pub models: BTreeMap<String, ModelSummary>,
    pub correlations: BTreeMap<String, CorrelationResult>,
    /// Relative path to SHA-256 of every artifact except the report itself.
    pub outputs: BTreeMap<String, String>,
    /// Wall time per stage; left out of the written report.
    #[serde(skip)]
    pub timing: Vec<(Stage, Duration)>,
}

fn correlation(
    spec: &super::config::CorrelationSpec,
    aggregated: &Aggregated,
) -> Result<CorrelationResult, PipelineError> {
    let fail = |e: &dyn std::fmt::Display| PipelineError::stage(Stage::Fit, format!("correlation {}", spec.name), e);
    let rollup = aggregated
        .rollups
        .get(&spec.region_kind)
        .ok_or_else(|| fail(&format!("no {} regions loaded", spec.region_kind)))?;
    let table_spec = TableSpec { outcome: spec.y.clone(), predictors: vec![spec.x.clone()], species_predictors: None };
    let table = build_model_table(&rollup.aggregates, &table_spec, &[]).map_err(|e| fail(&e))?;
    let c = correlation_report(&table.x[0], &table.y).map_err(|e| fail(&e))?;
    Ok(CorrelationResult {
        region_kind: spec.region_kind,
        x: spec.x.to_string(),
        y: spec.y.to_string(),
        n: c.n,
        dropped_rows: table.dropped.len(),
        r: c.r,
        r2: c.r2,
    })
}

fn timed<T>(timing: &mut Vec<(Stage, Duration)>, stage: Stage, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    timing.push((stage, start.elapsed()));
    out
}

/// Runs every stage in order and writes all artifacts under the configured
/// output directory, finishing with `run_report.json`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunReport, PipelineError> {
    let mut timing = Vec::new();
    let mut sink = OutputSink::new(&cfg.output_dir);

    let inputs = timed(&mut timing, Stage::Ingest, || ingest(cfg))?;
    export::write_ingest_outputs(&mut sink, &inputs.reports)?;

    let enriched = timed(&mut timing, Stage::Enrich, || enrich(cfg, &inputs))?;
    export::write_enrich_outputs(&mut sink, &enriched, cfg.complaint_window.by_period)?;
    export::write_sensor_outputs(&mut sink, &enriched.contexts)?;

    let aggregated = timed(&mut timing, Stage::Aggregate, || aggregate(cfg, &inputs, &enriched))?;
    export::write_aggregate_outputs(&mut sink, &aggregated)?;
    let pollen_kind = cfg.pollen_region_kind;
    export::write_pollen_outputs(
        &mut sink,
        pollen_kind,
        &aggregated.rollups[&pollen_kind].aggregates,
        &inputs.regions[&pollen_kind],
    )?;

    let mut models = BTreeMap::new();
    let mut correlations = BTreeMap::new();
    timed(&mut timing, Stage::Fit, || -> Result<(), PipelineError> {
        for spec in &cfg.models {
            let table = build_table(spec, &inputs, &enriched, &aggregated)?;
            export::write_table_outputs(&mut sink, &spec.name, &table)?;
            let fit = fit_table(spec, &table)?;
            export::write_fit_outputs(&mut sink, &spec.name, &fit)?;
            let r = &fit.result;
            models.insert(
                spec.name.clone(),
                ModelSummary {
                    kind: spec.kind,
                    outcome: table.outcome.clone(),
                    n: r.n,
                    k: r.k,
                    dropped_rows: table.dropped.len(),
                    r2: r.r2,
                    adjusted_r2: r.adjusted_r2,
                    f_stat: r.f_stat,
                    f_p_value: r.f_p_value,
                },
            );
        }
        for spec in &cfg.correlations {
            correlations.insert(spec.name.clone(), correlation(spec, &aggregated)?);
        }
        if !correlations.is_empty() {
            export::write_correlations(&mut sink, &correlations)?;
        }
        Ok(())
    })?;

    let enrich_summary = EnrichSummary {
        trees: enriched.trees.len(),
        trees_with_complaints: enriched.trees.iter().filter(|t| t.total() > 0).count(),
        complaint_links: enriched.trees.iter().map(EnrichedTree::total).sum(),
        sensor_sites: enriched.sites.len(),
    };
    let mut report = RunReport {
        ingest: inputs.reports,
        coverage: enriched.coverage,
        enrich: enrich_summary,
        rollups: aggregated.rollups.iter().map(|(k, r)| (k.to_string(), r.into())).collect(),
        selected_species: aggregated.selected,
        models,
        correlations,
        outputs: sink.hashes().clone(),
        timing: Vec::new(),
    };
    let mut json = serde_json::to_vec_pretty(&report)
        .map_err(|e| PipelineError::stage(Stage::Output, "run_report.json", e))?;
    json.push(b'\n');
    sink.put("run_report.json", &json)?;
    report.timing = timing;
    Ok(report)
}


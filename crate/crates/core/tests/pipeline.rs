use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use canopy_core::ingest::RegionKind;
use canopy_core::pipeline::{gen_fixture, run_pipeline, FixtureSizes, FixtureSummary, PipelineError, RunConfig, Stage};
use canopy_core::Parallelism;

fn fixture(dir: &Path, seed: u64) -> FixtureSummary {
    gen_fixture(seed, &FixtureSizes::default(), dir).unwrap()
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn fixture_is_deterministic_per_seed() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    fixture(a.path(), 42);
    fixture(b.path(), 42);
    fixture(c.path(), 43);
    assert_eq!(read_tree(a.path()), read_tree(b.path()));
    assert_ne!(read_tree(a.path())["trees.csv"], read_tree(c.path())["trees.csv"]);
}

#[test]
fn empty_fixture_files_are_valid() {
    let dir = tempfile::tempdir().unwrap();
    let sizes = FixtureSizes { trees: 0, complaints: 0, sensors: 0, lots: 0, ..FixtureSizes::default() };
    let truth = gen_fixture(7, &sizes, dir.path()).unwrap();
    assert_eq!(truth.valid_trees, 0);
    assert!(truth.defect_lines.is_empty());
    let cfg = RunConfig::load(&dir.path().join("run.toml")).unwrap();
    let report = run_pipeline(&cfg).unwrap();
    assert_eq!(report.ingest["trees"].rows_in, 0);
    assert!(report.models.is_empty());
}

#[test]
fn pipeline_counts_match_generator_truth() {
    let dir = tempfile::tempdir().unwrap();
    let truth = fixture(dir.path(), 42);
    let cfg = RunConfig::load(&dir.path().join("run.toml")).unwrap();
    let report = run_pipeline(&cfg).unwrap();

    let trees = &report.ingest["trees"];
    assert_eq!(trees.rows_in, truth.tree_rows);
    assert_eq!(trees.records, truth.valid_trees);
    let lines: Vec<u64> = trees.row_errors.iter().map(|e| e.line).collect();
    assert_eq!(lines, truth.defect_lines);
    for r in report.ingest.values() {
        assert!(r.is_conserved());
    }
    assert_eq!(report.ingest["sensors"].records, truth.sensor_observations);
    assert_eq!(report.enrich.sensor_sites, truth.sensor_sites);

    let missing: Vec<&String> = report.coverage.missing_species.keys().collect();
    let expected: Vec<&String> = truth.missing_species.iter().collect();
    assert_eq!(missing, expected);

    let rollup_counts = |kind: &str| -> BTreeMap<String, usize> {
        let text = fs::read_to_string(cfg.output_dir.join("aggregate").join(format!("{kind}.csv"))).unwrap();
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let h = rdr.headers().unwrap().clone();
        let id = h.iter().position(|c| c == "region_id").unwrap();
        let total = h.iter().position(|c| c == "tree_total").unwrap();
        rdr.records().map(|r| {
            let r = r.unwrap();
            (r[id].to_string(), r[total].parse().unwrap())
        })
        .collect()
    };
    assert_eq!(rollup_counts("zip"), truth.trees_by_zip);
    assert_eq!(rollup_counts("nta"), truth.trees_by_nta);
    assert_eq!(rollup_counts("uhf"), truth.trees_by_uhf);
    for kind in [RegionKind::Zip, RegionKind::Nta, RegionKind::Uhf] {
        let s = &report.rollups[kind.as_str()];
        assert!(s.conserved);
        assert_eq!(s.trees_unassigned, truth.trees_unassigned);
        assert_eq!(s.complaints_unassigned, truth.complaints_unassigned);
    }

    let zip_complaints: usize = truth.complaints_by_zip.values().sum();
    assert_eq!(report.rollups["zip"].complaints_in, zip_complaints);
    assert!(report.models.contains_key("asthma_trees"));
    assert!(report.models.contains_key("pm25_panel"));
    assert!(report.correlations.contains_key("allergen_asthma"));

    // every file the report lists exists with the recorded hash
    for (rel, hash) in &report.outputs {
        let bytes = fs::read(cfg.output_dir.join(rel)).unwrap();
        assert_eq!(&canopy_core::ingest::sha256_hex(&bytes), hash, "{rel}");
    }
}

#[test]
fn sequential_and_parallel_outputs_agree() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), 42);
    let mut cfg = RunConfig::load(&dir.path().join("run.toml")).unwrap();
    cfg.parallelism = Parallelism::Sequential;
    cfg.output_dir = dir.path().join("seq");
    let seq = run_pipeline(&cfg).unwrap();
    cfg.parallelism = Parallelism::Parallel;
    cfg.output_dir = dir.path().join("par");
    let par = run_pipeline(&cfg).unwrap();
    assert_eq!(seq.outputs, par.outputs);
    assert_eq!(read_tree(&dir.path().join("seq")), read_tree(&dir.path().join("par")));
}

#[test]
fn deleted_outputs_are_reproduced() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), 42);
    let cfg = RunConfig::load(&dir.path().join("run.toml")).unwrap();
    run_pipeline(&cfg).unwrap();
    let before = read_tree(&cfg.output_dir);
    fs::remove_dir_all(cfg.output_dir.join("fits")).unwrap();
    fs::remove_dir_all(cfg.output_dir.join("tables")).unwrap();
    run_pipeline(&cfg).unwrap();
    assert_eq!(read_tree(&cfg.output_dir), before);
}

#[test]
fn missing_input_names_stage_and_path() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), 1);
    fs::remove_file(dir.path().join("trees.csv")).unwrap();
    let cfg = RunConfig::load(&dir.path().join("run.toml")).unwrap();
    match run_pipeline(&cfg).unwrap_err() {
        PipelineError::Stage { stage, context, .. } => {
            assert_eq!(stage, Stage::Ingest);
            assert!(context.ends_with("trees.csv"), "{context}");
        }
        other => panic!("unexpected {other}"),
    }
}

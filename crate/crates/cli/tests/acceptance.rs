//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slidecad::detect::{
    extract_components, load_regions, propose_regions, scan, Connectivity, Heatmap, RegionProposal, ScanConfig,
};
use slidecad::evaluate::{
    cohen_kappa, evaluate_run, reported_accuracy, stratified_kfold, EvalLevel, MetricsReport, Scheme, TruthIndex,
};
use slidecad::explain::{compute_cam, rank_features, stump_fit};
use slidecad::inference::{FeatureMaps, FeatureTable, LinearModel, SignatureBackend};
use slidecad::pipeline::collect_labels;
use slidecad::pyramid::{read_metadata, LevelInfo, Slide, SlideMetadata};
use slidecad::synth::{generate_with, GroundTruth, LesionShape, LesionSpec, SynthSpec};
use slidecad::{ClassLabel, Execution, PhysicalCalibration};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)*));
        }
    };
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_slidecad"))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = bin().args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "slidecad {} exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// Shared 30-slide noise-free cohort; the determinism check reuses its run.
struct Cohort {
    _tmp: tempfile::TempDir,
    slides: PathBuf,
    runs: PathBuf,
    config: PathBuf,
    synth_secs: f64,
    run_secs: f64,
}

// Level 0 is 1 µm/px. Detection uses 0.128 mm cells at level 0 and
// classification samples 256 px patches at level 1.
const COHORT_CONFIG: &str = r#"{
  "detection": {"level_mpp_target": 1.0, "patch_size": 128, "stride": 128},
  "classification": {"level_mpp_target": 2.0, "patch_size": 256}
}"#;

fn build_cohort() -> Result<Cohort, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let slides = tmp.path().join("slides");
    let runs = tmp.path().join("runs_j1");
    let config = tmp.path().join("config.json");
    fs::write(&config, COHORT_CONFIG).map_err(|e| e.to_string())?;
    let t = Instant::now();
    cli(&["synth", "--jobs", "1", "--out", p(&slides)])?;
    let synth_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    cli(&["run", p(&slides), "--config", p(&config), "--jobs", "1", "--out", p(&runs)])?;
    let run_secs = t.elapsed().as_secs_f64();
    Ok(Cohort {
        _tmp: tmp,
        slides,
        runs,
        config,
        synth_secs,
        run_secs,
    })
}

fn metric_fixtures() -> Outcome {
    let cases = [
        (73671, 82487, 0.893),
        (66128, 82487, 0.802),
        (2331, 2489, 0.937),
        (2267, 2489, 0.911),
        (102, 109, 0.936),
        (99, 109, 0.908),
        (75, 77, 0.974),
        (73, 77, 0.948),
    ];
    for (c, t, want) in cases {
        let got = reported_accuracy(c, t).map_err(|e| e.to_string())?;
        ensure!(got == want, "accuracy({c}, {t}) = {got}, expected {want}");
    }
    Ok(format!("{} table entries exact", cases.len()))
}

fn end_to_end(cohort: &Cohort) -> Outcome {
    let metrics_dir = cohort.runs.parent().unwrap().join("metrics");
    cli(&[
        "eval",
        "--runs",
        p(&cohort.runs),
        "--truth",
        p(&cohort.slides),
        "--level",
        "slide",
        "--out",
        p(&metrics_dir),
    ])?;
    let report: MetricsReport =
        serde_json::from_str(&fs::read_to_string(metrics_dir.join("metrics.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    ensure!(report.overall.total == 30, "expected 30 slides, scored {}", report.overall.total);
    ensure!(
        report.overall.accuracy == 1.0,
        "slide accuracy {} ({}/{})",
        report.overall.accuracy,
        report.overall.correct,
        report.overall.total
    );

    let (mut large, mut found, mut small) = (0, 0, 0);
    for entry in fs::read_dir(&cohort.slides).map_err(|e| e.to_string())? {
        let slide_dir = entry.map_err(|e| e.to_string())?.path();
        let id = slide_dir.file_name().unwrap().to_string_lossy().into_owned();
        let run = cohort.runs.join(&id);
        let meta = read_metadata(&slide_dir).map_err(|e| e.to_string())?;
        let truth = GroundTruth::load(&slide_dir).map_err(|e| e.to_string())?;
        let index = TruthIndex::new(&truth.lesions, meta.width0).map_err(|e| e.to_string())?;
        let heatmap = Heatmap::load(&run).map_err(|e| e.to_string())?;
        let regions = load_regions(&run).map_err(|e| e.to_string())?;
        let footprints = regions
            .iter()
            .map(|r| r.footprint(&heatmap, &meta))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let matched: BTreeSet<usize> = footprints.iter().filter_map(|f| index.best_lesion(f)).collect();
        for (i, lesion) in truth.lesions.iter().enumerate() {
            let size = lesion.size_mm(&meta.calibration);
            if size >= 1.2 {
                large += 1;
                ensure!(matched.contains(&i), "{id}: lesion {i} ({size:.3} mm) has no proposal");
                found += 1;
            } else if size <= 0.8 {
                small += 1;
                let touching = footprints.iter().filter(|f| index.overlap(i, f) > 0).count();
                ensure!(touching == 0, "{id}: {size:.3} mm lesion {i} overlaps {touching} proposals");
            }
        }
    }
    ensure!(large >= 30 && small > 0, "cohort too small: {large} large, {small} small lesions");
    ensure!(
        cohort.run_secs < 60.0,
        "pipeline took {:.1} s single-threaded",
        cohort.run_secs
    );
    Ok(format!(
        "slide accuracy 1.000 (30/30); recall {found}/{large} lesions >= 1.2 mm; 0 proposals on {small} lesions <= 0.8 mm; \
         pipeline {:.1} s, generation {:.1} s (1 thread)",
        cohort.run_secs, cohort.synth_secs
    ))
}

fn voting_robustness() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let slides = tmp.path().join("slides");
    let runs = tmp.path().join("runs");
    let cohort = tmp.path().join("cohort.json");
    let config = tmp.path().join("config.json");
    fs::write(
        &cohort,
        r#"{"texture_noise": 0.2, "noise_grain_px": 256, "lesions_per_slide": 2, "decoys_per_slide": 0, "seed": 11}"#,
    )
    .map_err(|e| e.to_string())?;
    fs::write(
        &config,
        r#"{"detection": {"level_mpp_target": 1.0, "patch_size": 128, "stride": 128},
            "classification": {"level_mpp_target": 2.0, "patch_size": 256, "density": 2.0}}"#,
    )
    .map_err(|e| e.to_string())?;
    cli(&["synth", "--cohort", p(&cohort), "--out", p(&slides)])?;
    cli(&["run", p(&slides), "--config", p(&config), "--out", p(&runs)])?;
    let score = |level| -> Result<MetricsReport, String> {
        let (pred, truth) = collect_labels(&runs, &slides, level).map_err(|e| e.to_string())?;
        evaluate_run(&pred, &truth, level, Scheme::ThreeClass).map_err(|e| e.to_string())
    };
    let patch = score(EvalLevel::Patch)?;
    let region = score(EvalLevel::Region)?;
    ensure!(patch.overall.total >= 1000, "only {} patches", patch.overall.total);
    ensure!(region.overall.total >= 60, "only {} regions", region.overall.total);
    // Cross-multiplied to compare the exact ratios.
    let region_wins = region.overall.correct as u128 * patch.overall.total as u128
        > patch.overall.correct as u128 * region.overall.total as u128;
    let detail = format!(
        "region {}/{} vs patch {}/{}",
        region.overall.correct, region.overall.total, patch.overall.correct, patch.overall.total
    );
    ensure!(region_wins, "no voting gain: {detail}");
    Ok(detail)
}

/// Exhaustive search over thresholds at every observed value plus one below
/// the minimum, both polarities, counted directly from the decision rule.
fn brute_stump(a: &[f64], y: &[bool]) -> usize {
    let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
    let mut best = 0;
    for &t in a.iter().chain(std::iter::once(&(lo - 1.0))) {
        for pol in [1.0, -1.0] {
            let correct = a.iter().zip(y).filter(|(&v, &l)| (pol * (v - t) > 0.0) == l).count();
            best = best.max(correct);
        }
    }
    best
}

fn stump_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x57);
    let mut fits = 0;
    for d in 0..200 {
        let n = rng.random_range(2..=64);
        let f = rng.random_range(1..=16);
        let discrete = rng.random_bool(0.5);
        let rows: Vec<Vec<f32>> = (0..n)
            .map(|_| {
                (0..f)
                    .map(|_| {
                        if discrete {
                            rng.random_range(0..6) as f32
                        } else {
                            rng.random_range(-3.0f32..3.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let labels: Vec<ClassLabel> = (0..n)
            .map(|_| ClassLabel::from_index(rng.random_range(0..3)).unwrap())
            .collect();
        let target = ClassLabel::from_index(rng.random_range(0..3)).unwrap();
        let y: Vec<bool> = labels.iter().map(|&l| l == target).collect();
        let mut oracle = Vec::with_capacity(f);
        for j in 0..f {
            let col: Vec<f64> = rows.iter().map(|r| f64::from(r[j])).collect();
            let s = stump_fit(&col, &y).map_err(|e| e.to_string())?;
            let want = brute_stump(&col, &y);
            ensure!(
                s.accuracy == want as f64 / n as f64,
                "dataset {d} feature {j}: stump {} vs oracle {}/{n}",
                s.accuracy,
                want
            );
            fits += 1;
            oracle.push((want, j));
        }
        oracle.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let k = rng.random_range(1..=f + 2);
        let expect: Vec<usize> = oracle.iter().take(k).map(|o| o.1).collect();
        let table = FeatureTable::from_rows(&rows)
            .and_then(|t| t.with_labels(labels))
            .map_err(|e| e.to_string())?;
        let ranked = rank_features(&table, target, k).map_err(|e| e.to_string())?.indices();
        ensure!(ranked == expect, "dataset {d}: ranking {ranked:?} vs oracle {expect:?}");
    }
    Ok(format!("200 datasets, {fits} stump fits and 200 rankings match the oracle"))
}

fn published_weight_model() -> LinearModel {
    const ROWS: [(usize, [f64; 3]); 11] = [
        (1134, [0.081, -0.051, -0.045]),
        (1833, [0.053, -0.018, -0.04]),
        (685, [0.048, -0.037, -0.014]),
        (1815, [-0.029, 0.087, -0.05]),
        (1956, [0.008, 0.016, -0.046]),
        (1402, [0.006, 0.034, -0.021]),
        (1819, [-0.0408, 0.0487, 0.0028]),
        (1261, [-0.013, -0.02, 0.031]),
        (1344, [-0.023, -0.029, 0.085]),
        (1180, [-0.025, -0.023, 0.026]),
        (107, [-0.043, 0.022, 0.046]),
    ];
    let mut m = LinearModel::zeros(2048);
    for (i, w) in ROWS {
        m.w[i] = w;
    }
    m
}

fn cam_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xCA);
    for inst in 0..100 {
        let (k, h, w) = (rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(1..=8));
        let data: Vec<f32> = (0..k * h * w).map(|_| rng.random_range(0.0f32..4.0)).collect();
        let maps = FeatureMaps::new(k, h, w, data.clone()).map_err(|e| e.to_string())?;
        let mut model = LinearModel::zeros(k);
        for row in &mut model.w {
            *row = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        }
        let class = ClassLabel::from_index(rng.random_range(0..3)).unwrap();
        let cam = compute_cam(&maps, &model, class, 16).map_err(|e| e.to_string())?;
        for y in 0..h {
            for x in 0..w {
                let mut sum = 0.0;
                for c in 0..k {
                    sum += model.w[c][class.index()] * f64::from(data[c * h * w + y * w + x]);
                }
                let got = cam.raw[y * w + x];
                ensure!((got - sum).abs() <= 1e-6, "instance {inst} ({y},{x}): {got} vs {sum}");
            }
        }
    }
    let model = published_weight_model();
    let mut data = vec![0f32; 2048 * 4 * 4];
    data[1134 * 16..1135 * 16].fill(1.0);
    let maps = FeatureMaps::new(2048, 4, 4, data).map_err(|e| e.to_string())?;
    let mut signs = Vec::new();
    for class in ClassLabel::ALL {
        let cam = compute_cam(&maps, &model, class, 32).map_err(|e| e.to_string())?;
        let positive = cam.raw.iter().all(|&v| v > 0.0);
        let negative = cam.raw.iter().all(|&v| v < 0.0);
        let want_positive = class == ClassLabel::NonCarcinoma;
        ensure!(
            if want_positive { positive } else { negative },
            "channel 1134 raw CAM for {class} has the wrong sign: {:?}",
            &cam.raw[..1]
        );
        signs.push(format!("{class} {:+.3}", cam.raw[0]));
    }
    Ok(format!("100 random instances within 1e-6; channel 1134: {}", signs.join(", ")))
}

fn kappa() -> Outcome {
    let k = |a: &[u8], b: &[u8]| cohen_kappa(a, b).map_err(|e| e.to_string());
    ensure!(k(&[0, 1, 2, 2, 1], &[0, 1, 2, 2, 1])? == 1.0, "identical sequences");
    let k0 = k(&[0, 0, 1, 1], &[0, 1, 0, 1])?;
    ensure!(k0.abs() <= 1e-12, "expected 0.0, got {k0}");
    let k5 = k(&[0, 0, 0, 1], &[0, 0, 1, 1])?;
    ensure!((k5 - 0.5).abs() <= 1e-12, "expected 0.5, got {k5}");
    let mut rng = ChaCha8Rng::seed_from_u64(0x4A);
    for i in 0..100 {
        let n = rng.random_range(1..=50);
        let a: Vec<u8> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let b: Vec<u8> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let (ab, ba) = (k(&a, &b)?, k(&b, &a)?);
        ensure!(ab == ba, "pair {i}: {ab} vs {ba}");
    }
    Ok("identical 1.0, examples 0.0 and 0.5, 100 symmetric pairs".into())
}

fn folds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF0);
    for c in 0..100 {
        let n = rng.random_range(2..=80);
        let labels: BTreeMap<String, ClassLabel> = (0..n)
            .map(|i| (format!("s{i:03}"), ClassLabel::from_index(rng.random_range(0..3)).unwrap()))
            .collect();
        let k = rng.random_range(2..=n.min(10));
        let plan = stratified_kfold(&labels, k, rng.random()).map_err(|e| e.to_string())?;
        ensure!(plan.folds.len() == k, "cohort {c}: {} folds for k={k}", plan.folds.len());
        let mut seen = BTreeSet::new();
        for fold in &plan.folds {
            for id in fold {
                ensure!(seen.insert(id.clone()), "cohort {c}: {id} appears twice");
            }
        }
        ensure!(seen.len() == n, "cohort {c}: {} of {n} slides assigned", seen.len());
        for class in ClassLabel::ALL {
            let sizes: Vec<usize> = plan
                .folds
                .iter()
                .map(|f| f.iter().filter(|id| labels[*id] == class).count())
                .collect();
            let spread = sizes.iter().max().unwrap() - sizes.iter().min().unwrap();
            ensure!(spread <= 1, "cohort {c}: {class} fold sizes {sizes:?}");
        }
    }
    Ok("100 cohorts disjoint, covering, per-class spread <= 1".into())
}

fn tree(root: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = fs::read(&path).map_err(|e| e.to_string())?;
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), bytes);
            }
        }
    }
    Ok(out)
}

fn determinism(cohort: &Cohort) -> Outcome {
    let runs8 = cohort.runs.parent().unwrap().join("runs_j8");
    cli(&["run", p(&cohort.slides), "--config", p(&cohort.config), "--jobs", "8", "--out", p(&runs8)])?;
    let (a, b) = (tree(&cohort.runs)?, tree(&runs8)?);
    ensure!(
        a.keys().eq(b.keys()),
        "file sets differ: {} vs {} files",
        a.len(),
        b.len()
    );
    for (path, bytes) in &a {
        ensure!(bytes == &b[path], "{} differs between --jobs 1 and --jobs 8", path.display());
    }
    let total: usize = a.values().map(Vec::len).sum();
    Ok(format!("{} files ({total} bytes) byte-identical", a.len()))
}

fn metadata(w: usize, mpp: f64, downsamples: &[u32]) -> SlideMetadata {
    SlideMetadata {
        slide_id: "fixture".into(),
        width0: w,
        height0: w,
        calibration: PhysicalCalibration::isotropic(mpp).unwrap(),
        tile_size: 512,
        levels: downsamples
            .iter()
            .enumerate()
            .map(|(i, &d)| LevelInfo {
                index: i,
                downsample: d,
                width: w.div_ceil(d as usize),
                height: w.div_ceil(d as usize),
            })
            .collect(),
    }
}

fn block(cols: usize, rows: usize) -> Vec<(usize, usize)> {
    (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).collect()
}

fn kept_lesions(regions: &[RegionProposal], heatmap: &Heatmap, meta: &SlideMetadata, index: &TruthIndex) -> Vec<usize> {
    let mut kept: Vec<usize> = regions
        .iter()
        .filter_map(|r| index.best_lesion(&r.footprint(heatmap, meta).ok()?))
        .collect();
    kept.sort_unstable();
    kept.dedup();
    kept
}

fn size_filter() -> Outcome {
    // 0.25 µm/px: 4200 px = 1.05 mm kept, 3900 px = 0.975 mm dropped,
    // scanned at level 0 (100 px cells) and at downsample 4 (25 px cells).
    let meta = metadata(10_000, 0.25, &[1, 2, 4]);
    for (level, cell) in [(0usize, 100usize), (2, 25)] {
        let heatmap = Heatmap {
            level,
            stride: cell,
            patch_size: cell,
            rows: 100,
            cols: 100,
            grid: vec![0.0; 10_000],
        };
        for (cols, keep) in [(42, true), (39, false)] {
            let kept = propose_regions(&[block(cols, 8)], &heatmap, &meta, 1.0).map_err(|e| e.to_string())?;
            ensure!(
                kept.len() == usize::from(keep),
                "level {level}: {cols}-cell bbox ({} mm) kept = {}",
                cols as f64 * 0.025,
                kept.len()
            );
        }
    }

    // One synthetic slide scanned at three levels with the same physical cell.
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let lesion = |class, cx, cy, a: f64, b: f64| LesionSpec {
        shape: LesionShape::Ellipse,
        class,
        center: (cx, cy),
        axes: (a, b),
        texture_noise: 0.0,
    };
    let spec = SynthSpec {
        slide_id: "sizes".into(),
        seed: 5,
        width: 4096,
        height: 4096,
        mpp: 1.0,
        lesions: vec![
            lesion(ClassLabel::Idc, 1000.0, 1000.0, 750.0, 650.0),
            lesion(ClassLabel::Dcis, 3000.0, 1000.0, 700.0, 700.0),
            lesion(ClassLabel::NonCarcinoma, 1000.0, 3000.0, 400.0, 350.0),
            lesion(ClassLabel::Dcis, 3000.0, 3000.0, 350.0, 350.0),
        ],
        noise_grain_px: 1,
        tile_size: 512,
    };
    let (meta, truth) = generate_with(&spec, tmp.path(), Execution::default()).map_err(|e| e.to_string())?;
    let slide = Slide::open(tmp.path()).map_err(|e| e.to_string())?;
    let index = TruthIndex::new(&truth.lesions, meta.width0).map_err(|e| e.to_string())?;
    let sizes: Vec<f64> = truth.lesions.iter().map(|l| l.size_mm(&meta.calibration)).collect();
    let expected: Vec<usize> = (0..sizes.len()).filter(|&i| sizes[i] >= 1.2).collect();
    for (level, cell) in [(0usize, 128usize), (1, 64), (2, 32)] {
        let cfg = ScanConfig {
            level,
            patch_size: cell,
            stride: cell,
            tissue_filter: true,
        };
        let heatmap = scan(&slide, &SignatureBackend::default(), &cfg).map_err(|e| e.to_string())?;
        let comps = extract_components(&heatmap, 0.5, Connectivity::Eight);
        let regions = propose_regions(&comps, &heatmap, &meta, 1.0).map_err(|e| e.to_string())?;
        let kept = kept_lesions(&regions, &heatmap, &meta, &index);
        ensure!(
            kept == expected,
            "level {level}: kept lesions {kept:?}, expected {expected:?} (sizes {sizes:?})"
        );
    }
    Ok(format!(
        "1.05 mm kept, 0.975 mm dropped at downsample 1 and 4; lesions {:?} mm give the same decisions at levels 0-2",
        sizes.iter().map(|s| (s * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    ))
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = t.elapsed().as_secs_f64();
    match &outcome {
        Ok(detail) => println!("PASS  {name} [{secs:.1}s]: {detail}"),
        Err(detail) => println!("FAIL  {name} [{secs:.1}s]: {detail}"),
    }
    outcome.is_ok()
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful for this target.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut ok = true;
    ok &= run("metric arithmetic fixtures", metric_fixtures);
    let mut cohort = None;
    ok &= run("end-to-end synthetic cohort", || {
        let c = build_cohort()?;
        let outcome = end_to_end(&c);
        cohort = Some(c);
        outcome
    });
    ok &= run("voting robustness under texture noise", voting_robustness);
    ok &= run("stump oracle equivalence", stump_oracle);
    ok &= run("CAM correctness", cam_correctness);
    ok &= run("Cohen's kappa", kappa);
    ok &= run("fold-plan properties", folds);
    ok &= run("determinism across --jobs", || {
        determinism(cohort.as_ref().ok_or("the shared cohort could not be built")?)
    });
    ok &= run("size-filter unit correctness", size_filter);
    if !ok {
        std::process::exit(1);
    }
}

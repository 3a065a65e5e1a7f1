use std::collections::BTreeMap;

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use scenekg_core::fixtures::{fixture_set, FixtureInput};
use scenekg_core::ingestion::{ingest_scene, DetectionDocument, DetectionRecord, FusionConfig};
use scenekg_core::model::{QName, Scene};
use scenekg_core::par::Execution;
use scenekg_core::reasoner::{run_cp_suite, SuiteOptions, Target};
use scenekg_core::rules::RulePack;
use scenekg_core::taxonomy::TBox;
use scenekg_core::validator::{run_sweep, SweepContext, SweepSpec, TableOracle};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn grid_scene(n: usize, tbox: &TBox) -> Scene {
    const LABELS: [&str; 8] = ["car", "pedestrian", "bicycle", "truck", "stop sign", "crosswalk", "lane", "wheel"];
    let side = (n as f64).sqrt().ceil() as usize;
    let cell = 1.0 / side as f64;
    let records = (0..n)
        .map(|i| DetectionRecord {
            detector: "bench".into(),
            label_text: LABELS[(i * 5 + i / side) % LABELS.len()].into(),
            mapped_concept: None,
            bbox: [(i % side) as f64 * cell, (i / side) as f64 * cell, cell * 0.9, cell * 0.9],
            mask_area: None,
            confidence: 0.6 + (i % 4) as f64 / 10.0,
            logits: None,
            dominant_color: Some([(i * 31 % 256) as u8, 128, (i * 7 % 256) as u8]),
            depth_hint: Some(3.0 + (i % 11) as f64),
            track_id: None,
            extra: BTreeMap::new(),
        })
        .collect();
    let doc = DetectionDocument {
        scene_id: QName::parse("traf:bench").unwrap(),
        time_position: 0.0,
        frame_ref: "bench.png".into(),
        records,
    };
    ingest_scene(&doc, &FusionConfig::default(), tbox).unwrap().scene
}

fn cp_suite(c: &mut Criterion) {
    let tbox = TBox::shipped();
    let pack = RulePack::shipped(&tbox);
    let mut group = c.benchmark_group("cp_suite");
    for n in [25, 100, 400] {
        let scene = grid_scene(n, &tbox);
        for (name, exec) in MODES {
            let opts = SuiteOptions {
                exec,
                ..SuiteOptions::default()
            };
            group.bench_with_input(BenchmarkId::new(name, n), &scene, |b, s| {
                b.iter(|| run_cp_suite(&pack, Target::Scene(black_box(s)), &tbox, opts))
            });
        }
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let tbox = TBox::shipped();
    let pack = RulePack::shipped(&tbox);
    let fixture = fixture_set(0).into_iter().find(|f| f.name == "adversarial_patch").unwrap();
    let FixtureInput::Scene(doc) = &fixture.input else { unreachable!() };
    let scene = ingest_scene(doc, &fixture.config, &tbox).unwrap().scene;
    let oracle = TableOracle::parse("0:0.05,0.30:0.60").unwrap();
    let spec = SweepSpec {
        target: QName::parse("truck_1").unwrap(),
        occluder: Some(QName::parse("car_3").unwrap()),
        from: 0.05,
        to: 0.80,
        step: 0.05,
    };
    let mut group = c.benchmark_group("sweep");
    for (name, exec) in MODES {
        let ctx = SweepContext {
            tbox: &tbox,
            pack: &pack,
            cfg: &fixture.config,
            oracle: &oracle,
            exec,
        };
        group.bench_function(name, |b| b.iter(|| run_sweep(black_box(&scene), &spec, &ctx).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, cp_suite, sweep);
criterion_main!(benches);

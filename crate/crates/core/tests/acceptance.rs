//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero on any FAIL.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use common::{brute_force, brute_force_projected, Facts};
use scenekg_core::fixtures::{fixture_set, Fixture, FixtureInput};
use scenekg_core::ingestion::{
    ingest_scenario, ingest_scene, rebuild_assertions, DetectionDocument, DetectionRecord, FusionConfig,
};
use scenekg_core::model::{Assertion, DataValue, QName, Scenario, Scene};
use scenekg_core::owlxml::{export_owl, export_scenario, import_owl, import_scenario, ImportMode, OwlError};
use scenekg_core::par::Execution;
use scenekg_core::reasoner::{
    check_consistency, dl_query, evaluate_rule, parse_class_expression, realize, run_cp_suite, scenario_assertions,
    CpReport, FindingCategory, MaterializedGraph, SuiteOptions, Target, WorldAssumption,
};
use scenekg_core::rules::{parse_pack, RulePack};
use scenekg_core::taxonomy::TBox;
use scenekg_core::validator::{
    apply_modification, apply_verdicts, occlusion_rate, run_sweep, DetectorOracle, Modification, SweepContext,
    SweepReport, SweepSpec, TableOracle,
};

type Outcome = Result<String, String>;

fn q(s: &str) -> QName {
    QName::parse(s).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(started: Instant, budget: Duration, what: &str) -> Result<Duration, String> {
    let took = started.elapsed();
    ensure(took < budget, || format!("{what} took {took:?}, budget {budget:?}"))?;
    Ok(took)
}

enum Built {
    Scene(Scene),
    Scenario(Scenario),
}

impl Built {
    fn target(&self) -> Target<'_> {
        match self {
            Built::Scene(s) => Target::Scene(s),
            Built::Scenario(s) => Target::Scenario(s),
        }
    }

    /// Assertions and named individuals the rules run over.
    fn facts(&self, tbox: &TBox) -> (Vec<Assertion>, BTreeSet<QName>) {
        match self {
            Built::Scene(s) => (s.assertions.clone(), s.individuals.iter().map(|i| i.id.clone()).collect()),
            Built::Scenario(s) => scenario_assertions(s, tbox),
        }
    }
}

fn build(f: &Fixture, tbox: &TBox) -> Built {
    match &f.input {
        FixtureInput::Scene(doc) => Built::Scene(ingest_scene(doc, &f.config, tbox).unwrap().scene),
        FixtureInput::Scenario(doc) => {
            Built::Scenario(ingest_scenario(doc, &f.config, tbox, Execution::Parallel).unwrap().0)
        }
    }
}

fn suite(pack: &RulePack, target: Target<'_>, tbox: &TBox, exec: Execution) -> CpReport {
    run_cp_suite(pack, target, tbox, SuiteOptions { exec, ..SuiteOptions::default() })
}

/// Compares the reasoner with the brute-force matcher on one graph, both on
/// full body bindings and on the projected matches.
fn agree(pack: &RulePack, tbox: &TBox, assertions: &[Assertion], individuals: &BTreeSet<QName>) -> Result<(), String> {
    let graph = MaterializedGraph::new(Arc::new(tbox.clone()), assertions.iter().cloned(), individuals.iter().cloned());
    let facts = Facts::new(tbox, assertions, individuals.iter().cloned());
    for rule in &pack.rules {
        let got: BTreeSet<BTreeMap<String, String>> = evaluate_rule(rule, &graph)
            .iter()
            .map(|b| b.values.iter().map(|(k, v)| (k.clone(), v.key_text())).collect())
            .collect();
        let want = brute_force(rule, &facts);
        ensure(got == want, || format!("{}: reasoner {got:?} vs brute force {want:?}", rule.id))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn rule_pack_fidelity() -> Outcome {
    let started = Instant::now();
    let tbox = TBox::shipped();
    let pack = RulePack::shipped(&tbox);
    for id in ["CP_0001", "CP_0002", "CP_0003", "CP_0004", "CP_0005"] {
        ensure(pack.get(id).is_some(), || format!("{id} missing from the shipped pack"))?;
    }
    for f in fixture_set(0) {
        let built = build(&f, &tbox);
        let (assertions, individuals) = built.facts(&tbox);
        ensure(individuals.len() <= 20, || format!("{}: {} individuals", f.name, individuals.len()))?;
        let report = suite(&pack, built.target(), &tbox, Execution::Parallel);
        let facts = Facts::new(&tbox, &assertions, individuals.iter().cloned());
        for rule in &pack.rules {
            let reported: BTreeSet<BTreeMap<String, String>> = report
                .rule(&rule.id)
                .unwrap()
                .matches
                .iter()
                .map(|m| m.bindings.iter().map(|(k, v)| (k.trim_start_matches('?').to_owned(), v.clone())).collect())
                .collect();
            let brute = brute_force_projected(rule, &facts);
            ensure(reported == brute, || {
                format!("{} {}: report {reported:?} vs brute force {brute:?}", f.name, rule.id)
            })?;
            let selected: BTreeSet<String> = reported.iter().flat_map(|m| m.values().cloned()).collect();
            let intended: BTreeSet<String> = f.intended.get(&rule.id).into_iter().flatten().cloned().collect();
            ensure(selected == intended, || {
                format!("{} {}: fired on {selected:?}, intended {intended:?}", f.name, rule.id)
            })?;
        }
        agree(&pack, &tbox, &assertions, &individuals).map_err(|e| format!("{}: {e}", f.name))?;
    }
    let took = within(started, Duration::from_secs(10), "fixture pass")?;
    Ok(format!("6 fixtures x {} rules, {took:.2?}", pack.rules.len()))
}

// Random graphs over the vocabulary the shipped pack uses. Each data role
// draws from values of one type, with no two values of a role equal, so a
// value bound by one atom is never ambiguous between `1` and `1.0`.

const CONCEPTS: &[&str] = &[
    "l4_d:Pedestrian",
    "l4_d:Stroller",
    "l4_d:Vulnerable_Road_User",
    "l4_d:Bicycle",
    "l1_c:Crossing_Site",
    "l1_c:Driveable_Lane",
    "l4_d:Passenger_Car",
    "l4_d:SUV",
    "l4_d:Truck",
    "l4_d:Vehicle",
    "l4_d:Vehicle_Wheel",
    "l4_d:Traffic_Sign",
    "l4_d:Stop_Sign",
    "traf:Scene",
];

const OBJECT_ROLES: &[&str] = &[
    "phys:is_near",
    "phys:is_in_proximity",
    "phys:is_part_of",
    "traf:present_in",
    "traf:absent_in",
    "traf:traffic_model_element_property",
];

fn data_roles() -> Vec<(&'static str, Vec<DataValue>)> {
    let d = |v: f64| DataValue::decimal(v).unwrap();
    vec![
        ("phys:has_color", vec![DataValue::Enum(q("phys:Gray")), DataValue::Enum(q("phys:White"))]),
        ("perc:has_high_occlusion", vec![DataValue::Boolean(true), DataValue::Boolean(false)]),
        ("phys:no_plate", vec![DataValue::Integer(0), DataValue::Integer(1)]),
        ("phys:has_distance", vec![d(42.0), d(50.0), d(49.5), d(75.0), DataValue::Integer(49)]),
        ("phys:is_independent", vec![DataValue::Integer(0), DataValue::Integer(1)]),
        ("phys:part_height_ratio", vec![d(0.6), d(0.1), d(0.15), d(0.5), d(0.3)]),
        ("traf:no_lane_markers", vec![DataValue::Integer(0), DataValue::Integer(1)]),
    ]
}

/// Individual `i` of `n`; indices past `n` name scenes, which enter the
/// graph only through assertions.
fn name(i: usize, n: usize) -> QName {
    match i.checked_sub(n) {
        None => q(&format!("ind_{i}")),
        Some(0) => q("traf:scene1"),
        Some(_) => q("traf:scene2"),
    }
}

type RandomGraph = (Vec<Assertion>, BTreeSet<QName>);

fn random_graph() -> impl Strategy<Value = RandomGraph> {
    let roles = data_roles();
    (1usize..=12)
        .prop_flat_map(move |n| {
            let roles = roles.clone();
            let span = n + 2;
            (
                Just(n),
                prop::collection::vec((0..span, 0..CONCEPTS.len()), n..=4 * n),
                prop::collection::vec((0..span, 0..OBJECT_ROLES.len(), 0..span), n..=5 * n),
                prop::collection::vec((0..n, 0..roles.len(), 0..5usize), n..=5 * n),
                Just(roles),
            )
        })
        .prop_map(|(n, classes, objects, data, roles)| {
            let mut a = Vec::new();
            for (x, c) in classes {
                a.push(Assertion::class(name(x, n), q(CONCEPTS[c])));
            }
            for (s, r, o) in objects {
                a.push(Assertion::object(name(s, n), q(OBJECT_ROLES[r]), name(o, n)));
            }
            for (s, r, v) in data {
                let (role, values) = &roles[r];
                a.push(Assertion::data(name(s, n), q(role), values[v % values.len()].clone()));
            }
            (a, (0..n).map(|i| name(i, n)).collect())
        })
}

fn oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let tbox = TBox::shipped();
    let pack = RulePack::shipped(&tbox);
    let config = Config {
        cases: 500,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let fired = std::cell::Cell::new(0usize);
    runner
        .run(&random_graph(), |(assertions, individuals)| {
            agree(&pack, &tbox, &assertions, &individuals).map_err(TestCaseError::fail)?;
            let g = MaterializedGraph::new(Arc::new(tbox.clone()), assertions.iter().cloned(), individuals);
            fired.set(fired.get() + pack.rules.iter().filter(|r| !evaluate_rule(r, &g).is_empty()).count());
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let took = within(started, Duration::from_secs(60), "500 random scenes")?;
    Ok(format!("500 scenes, {} non-empty rule results, {took:.2?}", fired.get()))
}

fn hybrid_semantics() -> Outcome {
    let tbox = TBox::shipped();
    let f = fixture_set(0).into_iter().find(|f| f.name == "desert_road").unwrap();
    let Built::Scene(scene) = build(&f, &tbox) else { unreachable!() };
    let expr = parse_class_expression("l4_d:Passenger_Car and not (phys:has_part some l4_d:License_Plate)", &tbox)?;
    let g = realize(&scene, &tbox);
    let cwa = dl_query(&expr, &g, WorldAssumption::Cwa);
    let owa = dl_query(&expr, &g, WorldAssumption::Owa);
    ensure(cwa == BTreeSet::from([q("car_1")]), || format!("CWA gave {cwa:?}"))?;
    ensure(owa.is_empty(), || format!("OWA gave {owa:?}"))?;
    Ok("CWA {car_1}, OWA {}".into())
}

fn consistency_findings() -> Outcome {
    let tbox = TBox::shipped();
    for f in fixture_set(0) {
        let report = suite(&RulePack::shipped(&tbox), build(&f, &tbox).target(), &tbox, Execution::Parallel);
        ensure(report.consistency.is_empty(), || format!("{}: {:?}", f.name, report.consistency))?;
    }
    let f = fixture_set(0).into_iter().find(|f| f.name == "desert_road").unwrap();
    let Built::Scene(clean) = build(&f, &tbox) else { unreachable!() };
    let lane = clean
        .assertions
        .iter()
        .find_map(|a| match a {
            Assertion::Class(c) if c.concept == q("l1_c:Driveable_Lane") => Some(c.individual.clone()),
            _ => None,
        })
        .ok_or("desert scene has no lane")?;
    let car = q("car_1");
    let wheels = q("phys:number_of_wheels");
    let cases: Vec<(FindingCategory, Box<dyn Fn(&mut Vec<Assertion>)>)> = vec![
        (
            FindingCategory::Disjointness,
            Box::new(|a| a.push(Assertion::class(car.clone(), q("l4_d:Pedestrian")))),
        ),
        (
            FindingCategory::DomainRange,
            Box::new(|a| a.push(Assertion::data(lane.clone(), wheels.clone(), DataValue::Integer(4)))),
        ),
        (
            FindingCategory::Functional,
            Box::new(|a| a.push(Assertion::data(car.clone(), q("phys:no_plate"), DataValue::Integer(0)))),
        ),
        (
            FindingCategory::Cardinality,
            Box::new(|a| {
                a.retain(|x| !x.key().starts_with("D|phys:number_of_wheels|car_1|"));
                a.push(Assertion::data(car.clone(), wheels.clone(), DataValue::Integer(6)));
            }),
        ),
    ];
    for (category, inject) in cases {
        let mut scene = clean.clone();
        inject(&mut scene.assertions);
        let findings = check_consistency(&realize(&scene, &tbox), &tbox);
        ensure(findings.len() == 1 && findings[0].category == category, || {
            format!("{category}: got {findings:?}")
        })?;
    }
    Ok("4 injected violations, 6 clean fixtures".into())
}

fn owl_round_trip() -> Outcome {
    let tbox = TBox::shipped();
    let pack = RulePack::shipped(&tbox);
    for f in fixture_set(0) {
        match build(&f, &tbox) {
            Built::Scene(scene) => {
                let baseline = suite(&pack, Target::Scene(&scene), &tbox, Execution::Parallel);
                let first = export_owl(&tbox, &scene, &pack).map_err(|e| e.to_string())?;
                let back = import_owl(first.as_bytes(), ImportMode::Strict).map_err(|e| e.to_string())?;
                let again = suite(&back.pack, Target::Scene(&back.scene), &back.tbox, Execution::Parallel);
                ensure(again == baseline, || format!("{}: report differs after import", f.name))?;
                let second = export_owl(&back.tbox, &back.scene, &back.pack).map_err(|e| e.to_string())?;
                ensure(first == second, || format!("{}: second export differs", f.name))?;
            }
            Built::Scenario(scenario) => {
                let baseline = suite(&pack, Target::Scenario(&scenario), &tbox, Execution::Parallel);
                let first = export_scenario(&tbox, &scenario, &pack).map_err(|e| e.to_string())?;
                let docs: BTreeMap<String, String> = first.documents.iter().cloned().collect();
                let load = |name: &str| {
                    docs.get(name)
                        .map(|d| d.as_bytes().to_vec())
                        .ok_or_else(|| OwlError::Malformed(format!("no document {name}")))
                };
                let back = import_scenario(&first.manifest, load, ImportMode::Strict).map_err(|e| e.to_string())?;
                let again = suite(&back.pack, Target::Scenario(&back.scenario), &back.tbox, Execution::Parallel);
                ensure(again == baseline, || format!("{}: report differs after import", f.name))?;
                let second = export_scenario(&back.tbox, &back.scenario, &back.pack).map_err(|e| e.to_string())?;
                ensure(first == second, || format!("{}: second export differs", f.name))?;
            }
        }
    }
    Ok("6 fixtures".into())
}

fn adversarial_scene(tbox: &TBox) -> (Scene, FusionConfig) {
    let f = fixture_set(0).into_iter().find(|f| f.name == "adversarial_patch").unwrap();
    let Built::Scene(scene) = build(&f, tbox) else { unreachable!() };
    (scene, f.config)
}

fn band_spec() -> SweepSpec {
    SweepSpec {
        target: q("truck_1"),
        occluder: Some(q("car_3")),
        from: 0.05,
        to: 0.80,
        step: 0.05,
    }
}

fn band_sweep(exec: Execution) -> SweepReport {
    let tbox = TBox::shipped();
    let pack = RulePack::shipped(&tbox);
    let (scene, cfg) = adversarial_scene(&tbox);
    let oracle = TableOracle::parse("0:0.05,0.30:0.60").unwrap();
    let ctx = SweepContext {
        tbox: &tbox,
        pack: &pack,
        cfg: &cfg,
        oracle: &oracle,
        exec,
    };
    run_sweep(&scene, &band_spec(), &ctx).unwrap()
}

fn sweep_bands() -> Outcome {
    let tbox = TBox::shipped();
    let (scene, cfg) = adversarial_scene(&tbox);
    let oracle = TableOracle::parse("0:0.05,0.30:0.60").map_err(|e| e.to_string())?;
    let report = band_sweep(Execution::Parallel);
    let grid: Vec<f64> = (1..=16).map(|i| i as f64 / 20.0).collect();
    let values: Vec<f64> = report.points.iter().map(|p| p.value).collect();
    ensure(values.len() == grid.len() && values.iter().zip(&grid).all(|(a, b)| (a - b).abs() < 1e-9), || {
        format!("grid {values:?}")
    })?;
    let want: Vec<f64> = grid.iter().copied().filter(|v| *v < 0.051 || (0.299..0.601).contains(v)).collect();
    let detected = report.detected_values();
    ensure(detected.len() == want.len() && detected.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-9), || {
        format!("detected at {detected:?}, want {want:?}")
    })?;

    let part_of = "O|phys:is_part_of|stop_sign_2|truck_1";
    let mut firing = Vec::new();
    for p in &report.points {
        ensure(p.error.is_none(), || format!("{}: {:?}", p.value, p.error))?;
        let m = Modification::Scale {
            individual: q("truck_1"),
            occlusion_rate: p.value,
            occluder: Some(q("car_3")),
        };
        let modified = apply_modification(&scene, &m, &tbox).map_err(|e| e.to_string())?;
        let rate = occlusion_rate(&modified, &q("truck_1")).unwrap_or(0.0);
        let seen = rebuild_assertions(
            &apply_verdicts(&modified, &oracle.detect(&modified).map_err(|e| e.to_string())?),
            &cfg,
            &tbox,
        );
        let attached = seen.assertions.iter().any(|a| a.key() == part_of);
        let expect = rate >= cfg.high_occlusion_threshold && attached;
        let fires = p.fired.iter().any(|r| r == "CP_ADV_SIGN");
        ensure(fires == expect, || {
            format!("{}: CP_ADV_SIGN fired={fires}, occlusion {rate:.3}, attached={attached}", p.value)
        })?;
        if fires {
            firing.push(p.value);
        }
    }
    let stated = [0.50, 0.55, 0.60];
    ensure(firing.len() == 3 && firing.iter().zip(stated).all(|(a, b)| (a - b).abs() < 1e-9), || {
        format!("CP_ADV_SIGN fired at {firing:?}")
    })?;
    Ok(format!("detected {detected:?}, CP_ADV_SIGN at {firing:?}"))
}

fn temporal_cp() -> Outcome {
    let tbox = TBox::shipped();
    let pack = RulePack::shipped(&tbox);
    let mut counts = Vec::new();
    for (name, want) in [("stroller", vec!["stroller_t7"]), ("stroller_control", vec![])] {
        let f = fixture_set(0).into_iter().find(|f| f.name == name).unwrap();
        let report = f.report(&tbox, &pack, Execution::Parallel).map_err(|e| e.to_string())?;
        let got: Vec<&str> = report.rule("CP_0002").unwrap().matches.iter().map(|m| m.bindings["?s"].as_str()).collect();
        ensure(got == want, || format!("{name}: CP_0002 matched {got:?}"))?;
        counts.push(got.len());
    }
    Ok(format!("stroller {} match, control {}", counts[0], counts[1]))
}

const EXTRA_RULES: &str = r#"
pack synthetic 1

rule S01 "Pedestrian near a vehicle"
l4_d:Pedestrian(?p) ^ phys:is_near(?p, ?v) ^ l4_d:Vehicle(?v) -> sqwrl:select(?p)

rule S02 "Bicycle near a vehicle"
l4_d:Bicycle(?b) ^ phys:is_near(?b, ?v) ^ l4_d:Vehicle(?v) -> sqwrl:select(?b)

rule S03 "Wheel on a truck"
l4_d:Vehicle_Wheel(?w) ^ phys:is_part_of(?w, ?t) ^ l4_d:Truck(?t) -> sqwrl:select(?w)

rule S04 "Highly occluded vehicle"
l4_d:Vehicle(?v) ^ perc:has_high_occlusion(?v, true) -> sqwrl:select(?v)

rule S05 "Pedestrian detected with low confidence"
l4_d:Pedestrian(?p) ^ perc:detection_confidence(?p, ?c) ^ swrb:lessThan(?c, 0.6) -> sqwrl:select(?p)

rule S06 "Vehicle left of a pedestrian"
l4_d:Vehicle(?v) ^ phys:is_left_of(?v, ?p) ^ l4_d:Pedestrian(?p) -> sqwrl:select(?v)

rule S07 "Two vehicles close together"
l4_d:Vehicle(?a) ^ phys:is_in_proximity(?a, ?b) ^ l4_d:Vehicle(?b) ^ differentFrom(?a, ?b) -> sqwrl:select(?a)

rule S08 "Object hidden by a truck"
phys:is_occluded_by(?x, ?t) ^ l4_d:Truck(?t) -> sqwrl:select(?x)

rule S09 "Stop sign next to a lane"
l4_d:Stop_Sign(?s) ^ phys:is_near(?s, ?l) ^ l1_c:Driveable_Lane(?l) -> sqwrl:select(?s)

rule S10 "Pedestrian at a crossing"
l4_d:Pedestrian(?p) ^ phys:is_in_proximity(?p, ?c) ^ l1_c:Crossing_Site(?c) -> sqwrl:select(?p)

rule S11 "Car without a plate"
l4_d:Passenger_Car(?c) ^ phys:no_plate(?c, 1) -> sqwrl:select(?c)
"#;

fn twenty_rule_pack(tbox: &TBox) -> RulePack {
    let mut pack = RulePack::shipped(tbox);
    pack.rules.extend(parse_pack(EXTRA_RULES, tbox).unwrap().rules);
    pack
}

/// 100 detections on a 10 x 10 grid, one per cell so none merge.
fn synthetic_document() -> DetectionDocument {
    const LABELS: [&str; 10] =
        ["car", "pedestrian", "bicycle", "truck", "stop sign", "stroller", "crosswalk", "lane", "suv", "wheel"];
    let records = (0..100)
        .map(|i| {
            let (col, row) = ((i % 10) as f64, (i / 10) as f64);
            DetectionRecord {
                detector: "synthetic".into(),
                label_text: LABELS[(i * 7 + i / 10) % LABELS.len()].into(),
                mapped_concept: None,
                bbox: [col * 0.1 + 0.01, row * 0.1 + 0.01, 0.085, 0.085],
                mask_area: None,
                confidence: 0.5 + (i % 5) as f64 / 10.0,
                logits: None,
                dominant_color: Some([(i * 37 % 256) as u8, (i * 91 % 256) as u8, (i * 53 % 256) as u8]),
                depth_hint: Some(5.0 + (i % 13) as f64),
                track_id: None,
                extra: BTreeMap::new(),
            }
        })
        .collect();
    DetectionDocument {
        scene_id: q("traf:synthetic"),
        time_position: 0.0,
        frame_ref: "synthetic.png".into(),
        records,
    }
}

fn performance_budget() -> Outcome {
    let tbox = TBox::shipped();
    let pack = twenty_rule_pack(&tbox);
    ensure(pack.rules.len() == 20, || format!("{} rules", pack.rules.len()))?;
    let doc = synthetic_document();
    let cfg = FusionConfig::default();
    let started = Instant::now();
    let scene = ingest_scene(&doc, &cfg, &tbox).map_err(|e| e.to_string())?.scene;
    let report = suite(&pack, Target::Scene(&scene), &tbox, Execution::Parallel);
    let took = within(started, Duration::from_secs(1), "100-individual pipeline")?;
    ensure(scene.individuals.len() == 100, || format!("{} individuals", scene.individuals.len()))?;
    let fired = report.fired().len();
    Ok(format!("100 individuals, 20 rules ({fired} fired), {took:.2?}"))
}

fn determinism() -> Outcome {
    let tbox = TBox::shipped();
    let pack = RulePack::shipped(&tbox);
    let mut artifacts = 0;
    for f in fixture_set(0) {
        let a = build(&f, &tbox);
        let b = build(&f, &tbox);
        let ra = suite(&pack, a.target(), &tbox, Execution::Parallel).to_json();
        let rb = suite(&pack, b.target(), &tbox, Execution::Sequential).to_json();
        ensure(ra == rb, || format!("{}: report differs between runs", f.name))?;
        let (oa, ob) = match (&a, &b) {
            (Built::Scene(x), Built::Scene(y)) => (
                export_owl(&tbox, x, &pack).map_err(|e| e.to_string())?,
                export_owl(&tbox, y, &pack).map_err(|e| e.to_string())?,
            ),
            (Built::Scenario(x), Built::Scenario(y)) => (
                format!("{:?}", export_scenario(&tbox, x, &pack).map_err(|e| e.to_string())?),
                format!("{:?}", export_scenario(&tbox, y, &pack).map_err(|e| e.to_string())?),
            ),
            _ => unreachable!(),
        };
        ensure(oa == ob, || format!("{}: OWL differs between runs", f.name))?;
        artifacts += 2;
    }
    let sa = band_sweep(Execution::Parallel).to_json();
    let sb = band_sweep(Execution::Sequential).to_json();
    ensure(sa == sb, || "sweep report differs between runs".into())?;
    Ok(format!("{} artifacts", artifacts + 1))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("rule pack fidelity", rule_pack_fidelity),
        ("oracle equivalence", oracle_equivalence),
        ("hybrid semantics", hybrid_semantics),
        ("consistency findings", consistency_findings),
        ("owl round trip", owl_round_trip),
        ("sweep bands", sweep_bands),
        ("temporal cp", temporal_cp),
        ("performance budget", performance_budget),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| (*s).to_owned()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

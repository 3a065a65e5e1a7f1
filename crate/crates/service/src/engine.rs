//! Artifact production shared by the command line and the HTTP API. Both
//! front ends call into here, so identical inputs give identical bytes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use scenekg_core::ingestion::{
    ingest_scenario, ingest_scene, parse_detection_document, parse_scenario_document, FusionConfig, IngestError,
};
use scenekg_core::model::{ModelError, Scenario, Scene};
use scenekg_core::owlxml::{export_owl, export_scenario, OwlError, ScenarioExport};
use scenekg_core::par::Execution;
use scenekg_core::reasoner::{run_cp_suite, CpReport, SuiteOptions, Target};
use scenekg_core::rules::{lint_rule, parse_pack, Diagnostic, RuleError, RulePack};
use scenekg_core::taxonomy::TBox;
use scenekg_core::validator::{run_sweep, DetectorOracle, SweepContext, SweepReport, SweepSpec, ValidatorError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("{line}:{col}: {message}")]
    Json { line: usize, col: usize, message: String },
    #[error("unrecognised document: expected a detection document, a scenario document, a scene or a scenario")]
    UnknownDocument,
    #[error("expected a {expected}, found a {found}")]
    WrongKind { expected: &'static str, found: &'static str },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Owl(#[from] OwlError),
    #[error(transparent)]
    Validator(#[from] ValidatorError),
}

impl EngineError {
    /// 1-based source line, when the error carries one.
    pub fn line(&self) -> Option<usize> {
        match self {
            EngineError::Json { line, .. } => Some(*line),
            EngineError::Rule(e) => rule_error_position(e).map(|(l, _)| l),
            _ => None,
        }
    }
}

/// `(line, col)` of a rule error, looking through `InRule` wrappers.
pub fn rule_error_position(e: &RuleError) -> Option<(usize, usize)> {
    match e {
        RuleError::Syntax { line, col, .. }
        | RuleError::UnknownName { line, col, .. }
        | RuleError::InvalidAtom { line, col, .. } => Some((*line, *col)),
        RuleError::InRule { source, .. } => rule_error_position(source),
        _ => None,
    }
}

/// A scene or scenario after ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum Loaded {
    Scene(Scene),
    Scenario(Scenario),
}

impl Loaded {
    pub fn kind(&self) -> &'static str {
        match self {
            Loaded::Scene(_) => "scene",
            Loaded::Scenario(_) => "scenario",
        }
    }

    pub fn target(&self) -> Target<'_> {
        match self {
            Loaded::Scene(s) => Target::Scene(s),
            Loaded::Scenario(s) => Target::Scenario(s),
        }
    }
}

pub fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serialises");
    s.push('\n');
    s
}

fn json_value(text: &str) -> Result<serde_json::Value, EngineError> {
    serde_json::from_str(text).map_err(|e| EngineError::Json {
        line: e.line(),
        col: e.column(),
        message: e.to_string(),
    })
}

fn decode<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, EngineError> {
    serde_json::from_str(text).map_err(|e| EngineError::Json {
        line: e.line(),
        col: e.column(),
        message: e.to_string(),
    })
}

/// Reads any of the four accepted input shapes. Detection and scenario
/// documents are ingested with `cfg`; already-built scenes and scenarios
/// are validated and taken as they are.
pub fn load(text: &str, cfg: &FusionConfig, tbox: &TBox, exec: Execution) -> Result<(Loaded, Vec<String>), EngineError> {
    let value = json_value(text)?;
    let has = |k: &str| value.get(k).is_some();
    if has("records") {
        let (doc, mut warnings) = parse_detection_document(text)?;
        let ingested = ingest_scene(&doc, cfg, tbox)?;
        warnings.extend(ingested.warnings);
        Ok((Loaded::Scene(ingested.scene), warnings.iter().map(ToString::to_string).collect()))
    } else if has("scenario_id") {
        let (doc, mut warnings) = parse_scenario_document(text)?;
        let (scenario, w) = ingest_scenario(&doc, cfg, tbox, exec)?;
        warnings.extend(w);
        Ok((Loaded::Scenario(scenario), warnings.iter().map(ToString::to_string).collect()))
    } else if has("individuals") {
        let scene: Scene = decode(text)?;
        scene.validate()?;
        Ok((Loaded::Scene(scene), Vec::new()))
    } else if has("scenes") && has("id") {
        let scenario: Scenario = decode(text)?;
        scenario.validate()?;
        Ok((Loaded::Scenario(scenario), Vec::new()))
    } else {
        Err(EngineError::UnknownDocument)
    }
}

pub fn load_config(text: &str) -> Result<FusionConfig, EngineError> {
    json_value(text)?;
    Ok(FusionConfig::from_json(text)?)
}

pub fn load_pack(text: &str, tbox: &TBox) -> Result<RulePack, EngineError> {
    Ok(parse_pack(text, tbox)?)
}

pub fn reason(pack: &RulePack, target: &Loaded, tbox: &TBox) -> CpReport {
    run_cp_suite(pack, target.target(), tbox, SuiteOptions::default())
}

/// Lint diagnostics for every rule, tagged with the rule id, in pack order.
pub fn lint_pack(pack: &RulePack, tbox: &TBox) -> Vec<(String, Diagnostic)> {
    pack.rules
        .iter()
        .flat_map(|r| lint_rule(r, tbox).into_iter().map(|d| (r.id.clone(), d)))
        .collect()
}

pub enum OwlArtifact {
    Scene(String),
    Scenario(ScenarioExport),
}

pub fn export(tbox: &TBox, target: &Loaded, pack: &RulePack) -> Result<OwlArtifact, EngineError> {
    Ok(match target {
        Loaded::Scene(s) => OwlArtifact::Scene(export_owl(tbox, s, pack)?),
        Loaded::Scenario(s) => OwlArtifact::Scenario(export_scenario(tbox, s, pack)?),
    })
}

pub struct SweepInputs<'a> {
    pub tbox: &'a TBox,
    pub pack: &'a RulePack,
    pub cfg: &'a FusionConfig,
    pub oracle: &'a dyn DetectorOracle,
    pub exec: Execution,
}

pub fn sweep(target: &Loaded, spec: &SweepSpec, inputs: &SweepInputs<'_>) -> Result<SweepReport, EngineError> {
    let Loaded::Scene(scene) = target else {
        return Err(EngineError::WrongKind {
            expected: "scene",
            found: "scenario",
        });
    };
    let ctx = SweepContext {
        tbox: inputs.tbox,
        pack: inputs.pack,
        cfg: inputs.cfg,
        oracle: inputs.oracle,
        exec: inputs.exec,
    };
    Ok(run_sweep(scene, spec, &ctx)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use scenekg_core::fixtures::fixture_set;

    #[test]
    fn load_accepts_every_input_shape() {
        let tbox = TBox::shipped();
        let cfg = FusionConfig::default();
        for f in fixture_set(0) {
            let (loaded, _) = load(&f.document_json(), &f.config, &tbox, Execution::Sequential).unwrap();
            let rebuilt = match &loaded {
                Loaded::Scene(s) => pretty(s),
                Loaded::Scenario(s) => pretty(s),
            };
            let (again, warnings) = load(&rebuilt, &cfg, &tbox, Execution::Sequential).unwrap();
            assert_eq!(again, loaded, "{}", f.name);
            assert!(warnings.is_empty());
        }
        assert!(matches!(load("{}", &cfg, &tbox, Execution::Sequential), Err(EngineError::UnknownDocument)));
        let err = load("{\n  \"records\": [,]\n}", &cfg, &tbox, Execution::Sequential).unwrap_err();
        assert_eq!(err.line(), Some(2));
    }

    #[test]
    fn shipped_pack_lints_clean() {
        let tbox = TBox::shipped();
        assert_eq!(lint_pack(&RulePack::shipped(&tbox), &tbox), vec![]);
    }
}

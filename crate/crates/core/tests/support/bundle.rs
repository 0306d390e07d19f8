//! Regenerates the scripted model fixtures and forged suites under
//! `data/bench` from the hand-written inputs there.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use coalition::bench::{
    dedup_fixtures, golden_critique_fixtures, golden_jsonrag_fixtures, CaseScript, PlanVariant, Recorder,
};
use coalition::catalog::ToolCatalog;
use coalition::config::RunConfigFile;
use coalition::eval::load_dataset;
use coalition::forge::{make_critique_suite, make_jsonrag_suite, RagDocument};
use coalition::runtime::FixtureSet;
use coalition::templates::Templates;

pub const CRITIQUE_SEEDS: [u64; 1] = [0];

fn read<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display())))
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn pretty<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).unwrap() + "\n"
}

/// File name and contents for every generated file.
pub fn generate(dir: &Path) -> BTreeMap<&'static str, String> {
    let catalog = Arc::new(ToolCatalog::load(&dir.join("catalog.json")).unwrap());
    let tools = FixtureSet::load(&dir.join("tool_fixtures.json")).unwrap();
    let cases = load_dataset(&dir.join("dataset.json"), Some(&catalog)).unwrap();
    let scripts: BTreeMap<String, CaseScript> = read(&dir.join("script.json"));
    let config = RunConfigFile::parse(&fs::read_to_string(dir.join("config.json")).unwrap(), dir).unwrap();
    let templates = Templates::builtin();
    let recorder = Recorder {
        catalog: Arc::clone(&catalog),
        tools: &tools,
        templates: &templates,
        coalition: &config.coalition,
        preview_len: config.preview_len,
    };

    let critique = make_critique_suite(&cases, &catalog, &CRITIQUE_SEEDS, &templates).unwrap();
    let documents: Vec<RagDocument> = read(&dir.join("rag_documents.json"));
    let jsonrag = make_jsonrag_suite(&documents).unwrap();

    let mut golden = recorder.record(&cases, &scripts, PlanVariant::Golden).unwrap();
    golden.extend(golden_critique_fixtures(&critique.tasks, &catalog, &templates));
    golden.extend(golden_jsonrag_fixtures(&jsonrag, &templates, config.preview_len).unwrap());

    let mut out = BTreeMap::new();
    out.insert("model_fixtures.json", pretty(&dedup_fixtures(golden)));
    for (name, variant) in [
        ("model_fixtures_hallucinated.json", PlanVariant::Hallucinated),
        ("model_fixtures_typo.json", PlanVariant::Typo),
    ] {
        out.insert(
            name,
            pretty(&dedup_fixtures(recorder.record(&cases, &scripts, variant).unwrap())),
        );
    }
    out.insert("critique_suite.json", pretty(&critique));
    out.insert("jsonrag_suite.json", pretty(&jsonrag));
    out
}

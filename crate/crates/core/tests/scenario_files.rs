use std::path::Path;

use dmc_core::scenario::Scenario;

#[test]
fn shipped_scenarios_parse_and_round_trip() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_none_or(|e| e != "toml") {
            continue;
        }
        let loaded = Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let text = loaded.scenario.to_toml_string().unwrap();
        assert_eq!(Scenario::from_toml_str(&text).unwrap(), loaded.scenario, "{}", path.display());
        loaded.spec().unwrap();
        loaded.program().unwrap();
        loaded.normalization().unwrap();
        seen += 1;
    }
    assert_eq!(seen, 7);
}

use speedychain::harness::{run_scenario, Scenario};

#[test]
fn readme_scenario_parses_and_passes() {
    let readme = include_str!("../../../README.md");
    let start = readme.find("```toml\n").expect("toml block") + 8;
    let len = readme[start..].find("```").unwrap();
    let s = Scenario::from_toml(&readme[start..start + len]).unwrap();
    s.validate().unwrap();
    let out = run_scenario(&s).unwrap();
    let failed: Vec<_> = out.failures().collect();
    assert!(out.passed, "{failed:?}");
}

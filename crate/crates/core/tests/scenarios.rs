use std::path::PathBuf;

use ecm_oef::cases;
use ecm_oef::scenario::{load_scenario, save_scenario, Scenario};

fn bundled_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

#[test]
fn shipped_files_match_generators() {
    for (file, sc) in [("micro.json", cases::micro()), ("small.json", cases::small())] {
        let loaded = load_scenario(&bundled_dir().join(file)).unwrap();
        assert_eq!(loaded, sc, "{file} is stale; regenerate with `ecm-oef export`");
    }
}

#[test]
fn bundled_scenarios_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let all: Vec<Scenario> = vec![cases::micro(), cases::small(), cases::cascade(2)];
    for sc in all {
        let path = dir.path().join(format!("{}.json", sc.name));
        save_scenario(&sc, &path).unwrap();
        let once = load_scenario(&path).unwrap();
        save_scenario(&once, &path).unwrap();
        assert_eq!(load_scenario(&path).unwrap(), once);
        assert_eq!(once, sc);
    }
}

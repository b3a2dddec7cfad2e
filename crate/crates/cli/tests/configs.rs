use std::path::Path;

use metabayes_cli::config::ExperimentConfig;

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["table.json", "ordering.json", "width.json"] {
        let cfg = ExperimentConfig::load(&dir.join(name)).unwrap();
        assert!(!cfg.methods().is_empty(), "{name}");
    }
    let table = ExperimentConfig::load(&dir.join("table.json")).unwrap();
    assert_eq!(table.methods().len(), 9);
    assert_eq!(table.datasets().len(), 3);
}

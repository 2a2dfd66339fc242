#![no_main]

use crowdlearn::event_model::io::{assemble, CatalogRecord, EventRecord};
use crowdlearn::kernel::ParameterFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(file) = serde_json::from_slice::<ParameterFile>(data) else { return };
    let catalog = vec![
        CatalogRecord { item: "q0".into(), topics: vec!["a".into()] },
        CatalogRecord { item: "q1".into(), topics: vec!["a".into(), "b".into()] },
    ];
    let events = vec![
        EventRecord::Learn { user: "u0".into(), time: 1.0, item: "q0".into() },
        EventRecord::Contribute { user: "u1".into(), time: 2.0, item: "q1".into(), score: 3.0 },
    ];
    let d = assemble(&catalog, &events, None).expect("fixture assembles");
    if let Ok(p) = file.resolve(&d) {
        assert!(p.check(&d).is_ok());
    }
});

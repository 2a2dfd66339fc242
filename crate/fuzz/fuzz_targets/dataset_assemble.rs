#![no_main]

//! Catalog lines, a NUL byte, then event lines.

use crowdlearn::event_model::io::{assemble, parse_catalog, parse_events};
use crowdlearn::event_model::validate_dataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let (catalog, events) = text.split_once('\0').unwrap_or((text, ""));
    let (Ok(catalog), Ok(events)) = (parse_catalog(catalog), parse_events(events)) else {
        return;
    };
    if let Ok(d) = assemble(&catalog, &events, None) {
        let _ = validate_dataset(&d);
    }
});

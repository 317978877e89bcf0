//! Report deserialization on arbitrary JSON. Anything that parses must
//! re-serialize to a fixed point: serialize, reparse, serialize again,
//! identical bytes. Non-finite floats become JSON null and stop being a
//! report, which is why the inner parse is allowed to fail.

#![no_main]

use driftlab::harness::DriftReport;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(report) = serde_json::from_str::<DriftReport>(text) else { return };
    let once = serde_json::to_string(&report).expect("report serializes");
    if let Ok(again) = serde_json::from_str::<DriftReport>(&once) {
        let twice = serde_json::to_string(&again).expect("report serializes");
        assert_eq!(once, twice);
    }
});

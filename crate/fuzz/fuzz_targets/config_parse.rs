//! Sectioned key-value config parsing on arbitrary text, plus the typed
//! getters that parse numbers out of whatever survived.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = driftlab::config::ConfigFile::parse_str(text) else { return };
    let _ = cfg.get("world", "image_h");
    let _ = cfg.get_usize("world", "image_h", 16);
    let _ = cfg.get_u64("train", "seed", 0);
    let _ = cfg.get_f64("train", "lr", 1e-4);
    let _ = cfg.get_str("eval", "stages", "");
});

//! Checkpoint container decoding on arbitrary bytes. The header is the
//! attack surface: declared shapes, lengths, and counts must never be
//! trusted before validation, so none of these calls may panic or OOM.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = driftlab::checkpoint::decode(data);
    let _ = driftlab::checkpoint::decode_denoiser(data);
    let _ = driftlab::metrics::decode_embedder(data);
});

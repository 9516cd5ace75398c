//! The IDX image parser must reject malformed input with an error, never a
//! panic or an oversized allocation.
#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = smm::data::parse_idx_images(data);
});

#![no_main]

use crowdlearn::likelihood::{decode_design, encode_design};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((key, x)) = decode_design(data) {
        let again = encode_design(&x, key);
        let (_, y) = decode_design(&again).expect("re-encoded cache decodes");
        assert_eq!(x, y);
    }
});

#![no_main]

use libfuzzer_sys::fuzz_target;
use mimnet::pnm;

fuzz_target!(|data: &[u8]| {
    if let Ok(r) = pnm::decode(data) {
        assert_eq!(r.data.len(), r.width * r.height * r.channels);
        let bytes = pnm::encode(&r).expect("decoded raster encodes");
        assert_eq!(pnm::decode(&bytes).expect("re-encoded raster decodes"), r);
    }
});

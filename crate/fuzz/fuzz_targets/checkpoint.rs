#![no_main]

use libfuzzer_sys::fuzz_target;
use mimnet::checkpoint::{read_records, write_records, Checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = read_records(data) {
        let bytes = write_records(&records).expect("records that parsed can be written");
        assert_eq!(read_records(&bytes).expect("rewritten records parse"), records);
    }
    if let Ok(ck) = Checkpoint::decode(data) {
        let bytes = ck.encode().expect("decoded checkpoint encodes");
        assert_eq!(Checkpoint::decode(&bytes).expect("re-encoded checkpoint decodes"), ck);
    }
});

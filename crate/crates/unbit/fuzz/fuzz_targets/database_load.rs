#![no_main]

use libfuzzer_sys::fuzz_target;

// Same contract as the bitstream target: the database container carries a
// trailing CRC over every preceding byte, and any payload that passes it must
// round-trip to an equal in-memory value.
fuzz_target!(|data: &[u8]| {
    let Ok(db) = unbit::database::read_bytes(data) else { return };
    let bytes = unbit::database::write_bytes(&db).expect("decoded database must serialize");
    let again = unbit::database::read_bytes(&bytes).expect("own serialization must decode");
    assert_eq!(again, db, "database round trip changed the value");
});

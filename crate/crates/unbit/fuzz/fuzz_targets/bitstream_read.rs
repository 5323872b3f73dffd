#![no_main]

use libfuzzer_sys::fuzz_target;

// The bitstream container is fully checksummed, so almost every mutation is
// rejected at the CRC gate; the interesting property is that any input that
// does decode re-serializes to bytes that decode to an equal value.
fuzz_target!(|data: &[u8]| {
    let Ok(bs) = unbit::bitstream::read_bytes(data) else { return };
    let bytes = unbit::bitstream::write_bytes(&bs).expect("decoded bitstream must serialize");
    let again = unbit::bitstream::read_bytes(&bytes).expect("own serialization must decode");
    assert_eq!(again, bs, "bitstream round trip changed the value");
});

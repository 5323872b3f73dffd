#![no_main]

use libfuzzer_sys::fuzz_target;

// One byte-oriented target covers both line grammars that share this module:
// the full fabric description and the compact generator spec. Accepted inputs
// must round-trip through their writers to equal values.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };

    if let Ok(fabric) = unbit::fabric_text::parse_fabric(text) {
        let out = unbit::fabric_text::write_fabric(&fabric);
        let again = unbit::fabric_text::parse_fabric(&out).expect("written fabric must parse");
        assert_eq!(again, fabric, "fabric round trip changed the value");
    }

    if let Ok(spec) = unbit::fabric_text::parse_spec(text) {
        let out = unbit::fabric_text::write_spec(&spec);
        let again = unbit::fabric_text::parse_spec(&out).expect("written spec must parse");
        assert_eq!(again, spec, "spec round trip changed the value");
    }
});

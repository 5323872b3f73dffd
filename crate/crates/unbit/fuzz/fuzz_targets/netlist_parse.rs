#![no_main]

use libfuzzer_sys::fuzz_target;

// Anything the netlist parser accepts must survive the canonical round trip:
// write() output is a fixpoint, so parsing it back and re-writing must
// reproduce the same text byte for byte.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(netlist) = unbit::netlist_text::parse(text) else { return };
    let canon = unbit::netlist_text::write(&netlist);
    let again = unbit::netlist_text::parse(&canon).expect("canonical netlist text must parse");
    assert_eq!(unbit::netlist_text::write(&again), canon, "canonical text is not a fixpoint");
});

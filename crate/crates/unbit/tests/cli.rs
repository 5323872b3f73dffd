//! Command-line front end, driven in-process: exit codes, file products,
//! and the documented contract (0 success, 1 domain failure, 2 usage).

mod common;

use std::path::Path;

use unbit::cli;
use unbit::fabric::{generate_fabric, logic_tile_name, Coord, FabricSpec, SliceSpec, SmTypeSpec,
    IOB_SITE, SLICE_SITE};
use unbit::netlist::{FfConfig, Instance, Net, Netlist, PinRef, SiteKind, TruthTable};
use unbit::netlist_text;
use unbit::router::complete_routing;
use unbit::{bitstream, database, fabric_text};

fn run(args: &[&str]) -> i32 {
    cli::run(args.iter().map(|s| s.to_string()))
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

/// Small device the whole file-based flow runs on: 190 PIPs per type covers
/// the generator's connectivity skeleton, so pad-to-pad routes exist.
fn small_spec() -> FabricSpec {
    FabricSpec {
        seed: 11,
        width: 4,
        height: 4,
        types: vec![
            SmTypeSpec { pip_count: 190, sink_count: 37, bit_budget: 12 },
            SmTypeSpec { pip_count: 190, sink_count: 37, bit_budget: 12 },
        ],
        slice: SliceSpec::default(),
        default_fraction: 0.01,
    }
}

/// Identity pipeline pad(0,0) -> LUT -> FF -> pad(w-1,h-1), routed.
fn pipeline_design(fabric: &unbit::fabric::Fabric) -> Netlist {
    let mut nl = Netlist::new("pipeline", &fabric.device_id);
    let far = Coord::new(fabric.width - 1, fabric.height - 1);
    nl.instances.push(Instance::new("pin", SiteKind::Iob, &logic_tile_name(Coord::new(0, 0)), IOB_SITE));
    nl.instances.push(Instance::new("pout", SiteKind::Iob, &logic_tile_name(far), IOB_SITE));
    let mut sl = Instance::new("s", SiteKind::Slice, &logic_tile_name(Coord::new(1, 1)), SLICE_SITE);
    sl.luts.insert(0, TruthTable::identity(fabric.slice.arity, 0));
    sl.ffs.insert(0, FfConfig { used: true, init: false });
    nl.instances.push(sl);
    let mut n0 = Net::new("n_in");
    n0.outpin = Some(PinRef::new("pin", "I"));
    n0.inpins.push(PinRef::new("s", "L0I0"));
    let mut n1 = Net::new("n_d");
    n1.outpin = Some(PinRef::new("s", "L0O"));
    n1.inpins.push(PinRef::new("s", "F0D"));
    let mut n2 = Net::new("n_out");
    n2.outpin = Some(PinRef::new("s", "F0Q"));
    n2.inpins.push(PinRef::new("pout", "O"));
    nl.nets.extend([n0, n1, n2]);
    complete_routing(fabric, &mut nl).expect("pipeline routes");
    nl.canonicalize();
    nl
}

#[test]
fn usage_and_error_exit_codes() {
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["--version"]), 0);
    assert_eq!(run(&["fabric", "gen", "--help"]), 0);
    assert_eq!(run(&[]), 2, "bare invocation is a usage error");
    assert_eq!(run(&["no-such-command"]), 2);
    assert_eq!(run(&["fabric", "gen"]), 2, "missing required source");
    assert_eq!(run(&["reverse", "--output", "x.ubdb"]), 2, "missing --spec");
    assert_eq!(
        run(&["trojan", "correlate", "--input", "x.net", "--pref", "zz"]),
        2,
        "bad hex is a usage error"
    );
    assert_eq!(run(&["fabric", "report", "--fabric", "/nonexistent/f.txt"]), 1);
    assert_eq!(
        run(&["fabric", "report", "--fabric", "f.txt", "--tile", "nope"]),
        2,
        "bad coordinate is a usage error"
    );
    assert_eq!(run(&["selfcheck"]), 0);
}

#[test]
fn file_based_flow_gen_bitgen_reverse_convert_manip() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| s(&dir.path().join(n));
    let spec = small_spec();
    fabric_text::save_spec(&spec, &dir.path().join("family.spec")).unwrap();

    // Generate the public fabric file and re-emit the spec.
    assert_eq!(
        run(&[
            "fabric", "gen",
            "--spec", &p("family.spec"),
            "--fabric-out", &p("fab.txt"),
            "--spec-out", &p("family2.spec"),
        ]),
        0
    );
    let fabric = fabric_text::load_fabric(&dir.path().join("fab.txt")).unwrap();
    assert_eq!(fabric, generate_fabric(&spec).unwrap().0, "fabric file is the generated device");
    assert_eq!(
        fabric_text::load_spec(&dir.path().join("family2.spec")).unwrap(),
        spec,
        "re-emitted spec round-trips"
    );
    assert_eq!(run(&["fabric", "report", "--fabric", &p("fab.txt")]), 0);
    assert_eq!(run(&["fabric", "report", "--fabric", &p("fab.txt"), "--tile", "1,1"]), 0);

    // Vendor flow: encode a routed design and a pipless reference.
    let nl = pipeline_design(&fabric);
    netlist_text::save(&nl, &dir.path().join("design.net")).unwrap();
    netlist_text::save(&Netlist::new("ref", &fabric.device_id), &dir.path().join("ref.net"))
        .unwrap();
    assert_eq!(
        run(&["bitgen", "--spec", &p("family.spec"), "--input", &p("design.net"), "--output", &p("d.bit")]),
        0
    );
    assert_eq!(
        run(&["bitgen", "--spec", &p("family.spec"), "--input", &p("ref.net"), "--output", &p("ref.bit")]),
        0
    );
    // Strict encoding rejects a route whose load is unreached; --force skips
    // the connectivity validation and encodes what is there.
    let mut broken = nl.clone();
    for net in &mut broken.nets {
        if net.name == "n_in" {
            net.pips.remove(0);
        }
    }
    netlist_text::save(&broken, &dir.path().join("broken.net")).unwrap();
    assert_eq!(
        run(&["bitgen", "--spec", &p("family.spec"), "--input", &p("broken.net"), "--output", &p("broken.bit")]),
        1,
        "strict bitgen must reject a loadless route"
    );
    assert_eq!(
        run(&["bitgen", "--spec", &p("family.spec"), "--input", &p("broken.net"), "--output", &p("broken.bit"), "--force"]),
        0
    );

    // Recover the format, then the design.
    assert_eq!(run(&["reverse", "--spec", &p("family.spec"), "--output", &p("fmt.ubdb")]), 0);
    assert_eq!(
        run(&[
            "convert",
            "--db", &p("fmt.ubdb"),
            "--reference", &p("ref.bit"),
            "--input", &p("d.bit"),
            "--output", &p("rec.net"),
        ]),
        0
    );
    let rec = netlist_text::load(&dir.path().join("rec.net")).unwrap();
    assert_eq!(common::pip_set(&rec), common::pip_set(&nl), "recovered routing differs");
    assert_eq!(common::lut_map(&rec), common::lut_map(&nl));
    assert_eq!(common::ff_set(&rec), common::ff_set(&nl));

    // Manipulate: set a pip on a quiet sink, undo it, stream is restored.
    let db = database::load(&dir.path().join("fmt.ubdb")).unwrap();
    let occupied: std::collections::BTreeSet<(String, String)> =
        common::pip_set(&nl).into_iter().map(|(t, _, sk)| (t, sk)).collect();
    let mut target = None;
    'outer: for t in 0..fabric.tiles() {
        let tile = unbit::fabric::sm_tile_name(fabric.coord(t));
        for pip in &fabric.tile_type(t).pips {
            let sink = unbit::fabric::sink_wire_name(pip.sink);
            if !pip.is_default && !occupied.contains(&(tile.clone(), sink.clone())) {
                target = Some((tile, unbit::fabric::src_wire_name(pip.src), sink));
                break 'outer;
            }
        }
    }
    let (tile, src, sink) = target.expect("some unconfigured non-default pip exists");
    let arrow = format!("{tile}:{src}->{sink}");
    assert_eq!(
        run(&["manip", "set-pip", "--db", &p("fmt.ubdb"), "--input", &p("d.bit"), "--output", &p("poked.bit"), &arrow]),
        0
    );
    assert_ne!(
        std::fs::read(dir.path().join("poked.bit")).unwrap(),
        std::fs::read(dir.path().join("d.bit")).unwrap()
    );
    assert_eq!(
        run(&["manip", "unset-pip", "--db", &p("fmt.ubdb"), "--input", &p("poked.bit"), "--output", &p("restored.bit"), &arrow]),
        0
    );
    assert_eq!(
        std::fs::read(dir.path().join("restored.bit")).unwrap(),
        std::fs::read(dir.path().join("d.bit")).unwrap(),
        "set-pip then unset-pip must restore the stream"
    );

    // Rewrite the pipeline LUT and read the new table back off the stream.
    assert_eq!(
        run(&["manip", "rewrite-lut", "--db", &p("fmt.ubdb"), "--input", &p("d.bit"), "--output", &p("rw.bit"), "CLB_X1Y1:SLICE0:LUT0:6996"]),
        0
    );
    let bs = bitstream::load(&dir.path().join("rw.bit")).unwrap();
    let base = bitstream::load(&dir.path().join("d.bit")).unwrap();
    let t = fabric.tile_index(Coord::new(1, 1)) as usize;
    let allowed: std::collections::BTreeSet<u64> = db.lut_bits[t][0].iter().copied().collect();
    for pos in bitstream::diff(&base, &bs).unwrap() {
        assert!(allowed.contains(&pos), "rewrite touched unrelated bit {pos}");
    }
    assert_eq!(
        run(&["convert", "--db", &p("fmt.ubdb"), "--reference", &p("ref.bit"), "--input", &p("rw.bit"), "--output", &p("rw.net"), "--name", "rw"]),
        0
    );
    let rw = netlist_text::load(&dir.path().join("rw.net")).unwrap();
    assert_eq!(rw.design, "rw");
    assert_eq!(common::lut_map(&rw)[&("CLB_X1Y1".to_string(), 0)], 0x6996);
}

#[test]
fn reverse_jobs_flag_is_deterministic_at_file_level() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| s(&dir.path().join(n));
    fabric_text::save_spec(&small_spec(), &dir.path().join("family.spec")).unwrap();

    assert_eq!(run(&["--jobs", "1", "reverse", "--spec", &p("family.spec"), "--output", &p("a.ubdb")]), 0);
    assert_eq!(run(&["--jobs", "8", "reverse", "--spec", &p("family.spec"), "--output", &p("b.ubdb")]), 0);
    assert_eq!(
        std::fs::read(dir.path().join("a.ubdb")).unwrap(),
        std::fs::read(dir.path().join("b.ubdb")).unwrap(),
        "worker count changed the database file"
    );
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("unbit.conf");
    std::fs::write(&cfg, "# defaults for this bench\njobs = 2\nseed = 9\n").unwrap();
    assert_eq!(run(&["--config", &s(&cfg), "selfcheck"]), 0);
    assert_eq!(run(&["--config", "/nonexistent/unbit.conf", "selfcheck"]), 1);
}

#[test]
fn trojan_flow_over_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| s(&dir.path().join(n));
    let key = "2b7e151628aed2a6abf7158809cf4f3c";
    let pref = "000102030405060708090a0b0c0d0e0f";

    let (fabric, _) = generate_fabric(&FabricSpec::desk(7)).unwrap();
    fabric_text::save_fabric(&fabric, &dir.path().join("fab.txt")).unwrap();

    assert_eq!(
        run(&["trojan", "build-target", "--fabric", &p("fab.txt"), "--key", key, "--pref", pref, "--output", &p("victim.net")]),
        0
    );
    assert_eq!(run(&["trojan", "detect", "--input", &p("victim.net")]), 0);
    assert_eq!(run(&["trojan", "correlate", "--input", &p("victim.net"), "--pref", pref]), 0);
    assert_eq!(
        run(&["trojan", "inject", "--fabric", &p("fab.txt"), "--input", &p("victim.net"), "--kst", key, "--pref", pref, "--output", &p("troj.net")]),
        0
    );
    assert_eq!(
        run(&["trojan", "verify", "--input", &p("troj.net"), "--kst", key, "--pref", pref, "--trials", "3"]),
        0,
        "compromised netlist must verify as hijacked"
    );
    assert_eq!(
        run(&["trojan", "verify", "--input", &p("victim.net"), "--kst", key, "--pref", pref, "--trials", "3"]),
        1,
        "clean netlist must not verify as hijacked"
    );

    // A netlist with no chains is a domain failure, not a crash.
    netlist_text::save(&Netlist::new("empty", &fabric.device_id), &dir.path().join("empty.net"))
        .unwrap();
    assert_eq!(run(&["trojan", "detect", "--input", &p("empty.net")]), 1);
}

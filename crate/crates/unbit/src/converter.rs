//! Bitstream to netlist conversion on top of a recovered [`Database`].
//!
//! Extraction is a single ascending scan over the bits where the input
//! differs from a reference bitstream. At each set bit the database names the
//! owning candidates; a routing PIP counts as a candidate only when *all* of
//! its bits are set. Among candidates the one with the most bits wins;
//! over-provisioned encodings make that rule decisive, because a PIP whose
//! bit set contains another's is strictly larger. An equal-cardinality tie
//! can only come from a malformed stream, so both candidates are rejected
//! with a diagnostic rather than guessing. Consumed bits are skipped as the
//! scan advances; LUT and FF bits are credited directly.
//!
//! Extracted PIPs are then grouped by physical wire connectivity into nets:
//! each weakly connected component with a pin-capable root wire becomes a
//! rooted net (driver pin, load pins, pips); rootless components are kept as
//! `dangling_*` nets and flagged. Sink wires with live default routes that no
//! extracted PIP overrides are reported as annotations, not netlist content:
//! they are electrically present in every configuration.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use crate::bitstream::{self, Bitstream, CONFIG_BIT_BASE};
use crate::database::{BitOwner, Database};
use crate::error::{Error, Result};
use crate::fabric::{
    logic_tile_name, sink_wire_name, sm_tile_name, src_wire_name, Fabric, PhysWire, SinkRole,
    SrcRole, IOB_SITE, SLICE_SITE,
};
use crate::netlist::{FfConfig, Instance, Net, Netlist, PinRef, PipRef, SiteKind, TruthTable};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    /// A set bit the database cannot explain. Non-fatal.
    UnknownBit { pos: u64 },
    /// Two full-set candidates of equal cardinality on one sink; both
    /// rejected.
    AmbiguousPip { tile: String, a: (String, String), b: (String, String) },
    /// A connected pip group with no driving pin.
    DanglingNet { name: String },
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Diagnostic::UnknownBit { pos } => write!(f, "UNKNOWN_BIT: set bit {pos} has no owner"),
            Diagnostic::AmbiguousPip { tile, a, b } => write!(
                f,
                "AMBIGUOUS_PIP: {tile} {}->{} and {}->{} are both fully set with equal weight",
                a.0, a.1, b.0, b.1
            ),
            Diagnostic::DanglingNet { name } => {
                write!(f, "DANGLING_NET: {name} has routing but no driver")
            }
        }
    }
}

/// A live default route: (tile, src wire, sink wire) of a default pip whose
/// sink no extracted pip overrides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefaultRoute {
    pub tile: String,
    pub src: String,
    pub sink: String,
}

#[derive(Debug)]
pub struct ConvertOutcome {
    pub netlist: Netlist,
    pub diagnostics: Vec<Diagnostic>,
    pub active_defaults: Vec<DefaultRoute>,
}

struct Extraction {
    /// (tile, pip index) in discovery order.
    pips: Vec<(u32, u32)>,
    luts: BTreeMap<(u32, u8), TruthTable>,
    ffs: BTreeSet<(u32, u8)>,
    diagnostics: Vec<Diagnostic>,
}

fn extract(db: &Database, diff: &[u64]) -> Result<Extraction> {
    let index = db.build_bit_index()?;
    let set: HashSet<u64> = diff.iter().copied().collect();
    let mut consumed: HashSet<u64> = HashSet::new();
    let mut out = Extraction {
        pips: Vec::new(),
        luts: BTreeMap::new(),
        ffs: BTreeSet::new(),
        diagnostics: Vec::new(),
    };

    for &pos in diff {
        if consumed.contains(&pos) {
            continue;
        }
        if pos < CONFIG_BIT_BASE {
            out.diagnostics.push(Diagnostic::UnknownBit { pos });
            consumed.insert(pos);
            continue;
        }
        let owners = index.owners(pos);

        // Routing candidates: owner pips whose whole bit set is present.
        let mut candidates: Vec<(u32, u32, Vec<u64>)> = Vec::new();
        for owner in owners {
            if let BitOwner::Pip { tile, pip } = *owner {
                let bits = db.pip_positions(tile, pip);
                if bits.iter().all(|b| set.contains(b)) {
                    candidates.push((tile, pip, bits));
                }
            }
        }
        if !candidates.is_empty() {
            let max = candidates.iter().map(|c| c.2.len()).max().unwrap();
            let mut best: Vec<&(u32, u32, Vec<u64>)> =
                candidates.iter().filter(|c| c.2.len() == max).collect();
            if best.len() > 1 {
                best.sort_by_key(|c| (c.0, c.1));
                let name_of = |c: &(u32, u32, Vec<u64>)| {
                    let tile = &db.tiles[c.0 as usize];
                    let p = &db.types[tile.type_id as usize].pips[c.1 as usize];
                    (src_wire_name(p.src), sink_wire_name(p.sink))
                };
                let coord = crate::fabric::Coord::new(
                    (best[0].0 % db.width as u32) as u16,
                    (best[0].0 / db.width as u32) as u16,
                );
                out.diagnostics.push(Diagnostic::AmbiguousPip {
                    tile: sm_tile_name(coord),
                    a: name_of(best[0]),
                    b: name_of(best[1]),
                });
                consumed.insert(pos);
                continue;
            }
            let (tile, pip, bits) = best[0].clone();
            for b in bits {
                consumed.insert(b);
            }
            out.pips.push((tile, pip));
            continue;
        }

        let mut explained = false;
        for owner in owners {
            match *owner {
                BitOwner::Lut { tile, lut, entry } => {
                    out.luts
                        .entry((tile, lut))
                        .or_insert_with(|| TruthTable::zero(db.slice.arity))
                        .set(entry as u32, true);
                    explained = true;
                }
                BitOwner::Ff { tile, ff } => {
                    out.ffs.insert((tile, ff));
                    explained = true;
                }
                BitOwner::Pip { .. } => {}
            }
            if explained {
                break;
            }
        }
        if !explained {
            out.diagnostics.push(Diagnostic::UnknownBit { pos });
        }
        consumed.insert(pos);
    }
    Ok(out)
}

fn slice_inst_name(fabric: &Fabric, tile: u32) -> String {
    let c = fabric.coord(tile);
    format!("slice_X{}Y{}", c.x, c.y)
}

fn iob_inst_name(fabric: &Fabric, tile: u32) -> String {
    let c = fabric.coord(tile);
    format!("iob_X{}Y{}", c.x, c.y)
}

struct NetBuilder<'a> {
    fabric: &'a Fabric,
    slices: BTreeMap<u32, Instance>,
    iobs: BTreeMap<u32, Instance>,
}

impl<'a> NetBuilder<'a> {
    fn slice(&mut self, tile: u32) -> &mut Instance {
        let fabric = self.fabric;
        self.slices.entry(tile).or_insert_with(|| {
            Instance::new(
                &slice_inst_name(fabric, tile),
                SiteKind::Slice,
                &logic_tile_name(fabric.coord(tile)),
                SLICE_SITE,
            )
        })
    }

    fn iob(&mut self, tile: u32) -> &mut Instance {
        let fabric = self.fabric;
        self.iobs.entry(tile).or_insert_with(|| {
            Instance::new(
                &iob_inst_name(fabric, tile),
                SiteKind::Iob,
                &logic_tile_name(fabric.coord(tile)),
                IOB_SITE,
            )
        })
    }

    /// Driver pin for a root wire, if the wire is pin-capable.
    fn outpin_for(&mut self, wire: PhysWire) -> Option<PinRef> {
        if let PhysWire::LocalSrc(tile, src) = wire {
            match self.fabric.src_role(src) {
                SrcRole::LutOut(i) => {
                    let name = self.slice(tile).name.clone();
                    Some(PinRef::new(&name, &format!("L{i}O")))
                }
                SrcRole::FfOut(i) => {
                    let name = self.slice(tile).name.clone();
                    Some(PinRef::new(&name, &format!("F{i}Q")))
                }
                SrcRole::IobIn => {
                    let name = self.iob(tile).name.clone();
                    Some(PinRef::new(&name, "I"))
                }
                SrcRole::DirIn(_, _) => None,
            }
        } else {
            None
        }
    }

    /// Load pin for a sink wire, if it lands on logic.
    fn inpin_for(&mut self, tile: u32, sink: u16) -> Option<PinRef> {
        match self.fabric.sink_role(sink) {
            SinkRole::LutIn(i, j) => {
                let name = self.slice(tile).name.clone();
                Some(PinRef::new(&name, &format!("L{i}I{j}")))
            }
            SinkRole::FfD(i) => {
                let name = self.slice(tile).name.clone();
                Some(PinRef::new(&name, &format!("F{i}D")))
            }
            SinkRole::IobO => {
                let name = self.iob(tile).name.clone();
                Some(PinRef::new(&name, "O"))
            }
            SinkRole::DirOut(_, _) => None,
        }
    }
}

pub fn convert(
    db: &Database,
    reference: &Bitstream,
    input: &Bitstream,
    design_name: &str,
) -> Result<ConvertOutcome> {
    if input.device_id != db.device_id {
        return Err(Error::Convert(format!(
            "bitstream is for device {:?}, database describes {:?}",
            input.device_id, db.device_id
        )));
    }
    if input.len_bits() != db.total_bits {
        return Err(Error::Convert(format!(
            "bitstream holds {} bits, database expects {}",
            input.len_bits(),
            db.total_bits
        )));
    }
    let diff = bitstream::diff(reference, input)?;
    let mut ex = extract(db, &diff)?;
    let fabric = db.to_fabric();

    // One driver per sink wire; a violation means the stream or database is
    // corrupt beyond netlist repair.
    let mut sink_seen: BTreeMap<(u32, u16), (u32, u32)> = BTreeMap::new();
    for &(tile, pip) in &ex.pips {
        let p = &db.types[db.tiles[tile as usize].type_id as usize].pips[pip as usize];
        if let Some(_prev) = sink_seen.insert((tile, p.sink), (tile, pip)) {
            let c = fabric.coord(tile);
            return Err(Error::Convert(format!(
                "{} sink {} is driven by two extracted pips; refusing to build a netlist",
                sm_tile_name(c),
                sink_wire_name(p.sink)
            )));
        }
    }

    // Union-find over physical wires.
    let mut edges: Vec<(PhysWire, PhysWire, u32, u32)> = Vec::with_capacity(ex.pips.len());
    for &(tile, pip) in &ex.pips {
        let p = &db.types[db.tiles[tile as usize].type_id as usize].pips[pip as usize];
        edges.push((
            fabric.physical_src(tile, p.src),
            fabric.physical_sink(tile, p.sink),
            tile,
            pip,
        ));
    }
    let mut ids: BTreeMap<PhysWire, usize> = BTreeMap::new();
    for (a, b, _, _) in &edges {
        let n = ids.len();
        ids.entry(*a).or_insert(n);
        let n = ids.len();
        ids.entry(*b).or_insert(n);
    }
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (a, b, _, _) in &edges {
        let (ra, rb) = (find(&mut parent, ids[a]), find(&mut parent, ids[b]));
        if ra != rb {
            parent[ra] = rb;
        }
    }

    // Group edges per component, keyed by the smallest wire for determinism.
    let mut components: BTreeMap<PhysWire, Vec<usize>> = BTreeMap::new();
    {
        let mut repr_min: BTreeMap<usize, PhysWire> = BTreeMap::new();
        for (wire, &id) in &ids {
            let root = find(&mut parent, id);
            let entry = repr_min.entry(root).or_insert(*wire);
            if *wire < *entry {
                *entry = *wire;
            }
        }
        for (ei, (a, _, _, _)) in edges.iter().enumerate() {
            let root = find(&mut parent, ids[a]);
            components.entry(repr_min[&root]).or_default().push(ei);
        }
    }

    let mut builder = NetBuilder { fabric: &fabric, slices: BTreeMap::new(), iobs: BTreeMap::new() };

    // Slice configuration first, so instances exist even when unrouted.
    for (&(tile, lut), table) in &ex.luts {
        builder.slice(tile).luts.insert(lut, *table);
    }
    for &(tile, ff) in &ex.ffs {
        builder.slice(tile).ffs.insert(ff, FfConfig { used: true, init: false });
    }

    let mut rooted: Vec<Net> = Vec::new();
    let mut dangling: Vec<Net> = Vec::new();
    for (_, edge_ids) in components {
        let mut sinks: BTreeSet<PhysWire> = BTreeSet::new();
        for &ei in &edge_ids {
            sinks.insert(edges[ei].1);
        }
        let mut roots: BTreeSet<PhysWire> = BTreeSet::new();
        for &ei in &edge_ids {
            if !sinks.contains(&edges[ei].0) {
                roots.insert(edges[ei].0);
            }
        }
        if roots.len() > 1 {
            return Err(Error::Convert(
                "extracted routing merges two drivers into one component".into(),
            ));
        }

        let outpin = roots.iter().next().and_then(|&w| builder.outpin_for(w));
        let mut net = Net::new("");
        net.outpin = outpin;
        for &ei in &edge_ids {
            let (_, _, tile, pip) = edges[ei];
            let p = &db.types[db.tiles[tile as usize].type_id as usize].pips[pip as usize];
            let c = fabric.coord(tile);
            net.pips.push(PipRef::new(
                &sm_tile_name(c),
                &src_wire_name(p.src),
                &sink_wire_name(p.sink),
            ));
            if let Some(pin) = builder.inpin_for(tile, p.sink) {
                net.inpins.push(pin);
            }
        }
        if net.outpin.is_some() {
            rooted.push(net);
        } else {
            dangling.push(net);
        }
    }
    for (i, net) in rooted.iter_mut().enumerate() {
        net.name = format!("net_{i:04}");
    }
    for (i, net) in dangling.iter_mut().enumerate() {
        net.name = format!("dangling_{i:04}");
        ex.diagnostics.push(Diagnostic::DanglingNet { name: net.name.clone() });
    }

    // Live default routes: a default pip whose sink nothing overrides.
    let mut active_defaults = Vec::new();
    for tile in 0..fabric.tiles() {
        let ty = &fabric.types[fabric.placement[tile as usize] as usize];
        let c = fabric.coord(tile);
        for p in &ty.pips {
            if p.is_default && !sink_seen.contains_key(&(tile, p.sink)) {
                active_defaults.push(DefaultRoute {
                    tile: sm_tile_name(c),
                    src: src_wire_name(p.src),
                    sink: sink_wire_name(p.sink),
                });
            }
        }
    }

    let mut netlist = Netlist::new(design_name, &db.device_id);
    netlist.instances.extend(builder.slices.into_values());
    netlist.instances.extend(builder.iobs.into_values());
    netlist.nets.extend(rooted);
    netlist.nets.extend(dangling);
    netlist.canonicalize();

    Ok(ConvertOutcome { netlist, diagnostics: ex.diagnostics, active_defaults })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fabric::{generate_fabric, Coord, Dir, FabricSpec};
    use crate::netlist::SiteKind;
    use crate::re_pipeline::reverse_format;
    use crate::toolchain::{MockToolchain, VendorFlow};

    fn desk_setup() -> (MockToolchain, Database, Bitstream) {
        let (fabric, encoding) = generate_fabric(&FabricSpec::desk(21)).unwrap();
        let tc = MockToolchain::new(fabric, encoding);
        let db = reverse_format(&tc, 4).unwrap().db;
        let empty = Netlist::new("ref", &tc.fabric().device_id);
        let reference = tc.bitgen(&empty, false).unwrap();
        (tc, db, reference)
    }

    /// Two-tile route: pad (0,0) north into FF0 data at (0,1), FF used, LUT1
    /// carrying a table at (3,3).
    fn sample_design(tc: &MockToolchain) -> Netlist {
        let f = tc.fabric();
        let mut nl = Netlist::new("sample", &f.device_id);
        nl.instances.push(Instance::new("pad", SiteKind::Iob, "CLB_X0Y0", IOB_SITE));
        let mut s = Instance::new("ff", SiteKind::Slice, "CLB_X0Y1", SLICE_SITE);
        s.ffs.insert(0, FfConfig { used: true, init: false });
        nl.instances.push(s);
        let mut lone = Instance::new("logic", SiteKind::Slice, "CLB_X3Y3", SLICE_SITE);
        lone.luts.insert(1, TruthTable { arity: 4, bits: 0x6996 });
        nl.instances.push(lone);

        let mut net = Net::new("n");
        net.outpin = Some(PinRef::new("pad", "I"));
        net.inpins.push(PinRef::new("ff", "F0D"));
        let iob_in = f.src_index_of(SrcRole::IobIn);
        let north_out = f.sink_index_of(SinkRole::DirOut(Dir::N, 0));
        let north_in = f.src_index_of(SrcRole::DirIn(Dir::N, 0));
        let ffd = f.sink_index_of(SinkRole::FfD(0));
        net.pips.push(PipRef::new("INT_X0Y0", &format!("W{iob_in}"), &format!("S{north_out}")));
        net.pips.push(PipRef::new("INT_X0Y1", &format!("W{north_in}"), &format!("S{ffd}")));
        nl.nets.push(net);
        nl
    }

    #[test]
    fn recovers_routes_luts_and_ffs() {
        let (tc, db, reference) = desk_setup();
        let nl = sample_design(&tc);
        let bs = tc.bitgen(&nl, false).unwrap();
        let out = convert(&db, &reference, &bs, "recovered").unwrap();
        assert!(out.diagnostics.is_empty(), "{:?}", out.diagnostics);

        let r = &out.netlist;
        assert_eq!(r.nets.len(), 1);
        let net = &r.nets[0];
        assert_eq!(net.name, "net_0000");
        assert_eq!(net.outpin.as_ref().unwrap(), &PinRef::new("iob_X0Y0", "I"));
        assert_eq!(net.inpins, vec![PinRef::new("slice_X0Y1", "F0D")]);
        let mut expect = nl.nets[0].pips.clone();
        expect.sort();
        assert_eq!(net.pips, expect);

        let logic = r.instance("slice_X3Y3").unwrap();
        assert_eq!(logic.luts[&1].bits, 0x6996);
        let ff = r.instance("slice_X0Y1").unwrap();
        assert!(ff.ffs[&0].used);
        out.netlist.validate().unwrap();
    }

    #[test]
    fn conversion_is_idempotent_through_bitgen() {
        let (tc, db, reference) = desk_setup();
        let nl = sample_design(&tc);
        let bs = tc.bitgen(&nl, false).unwrap();
        let out = convert(&db, &reference, &bs, "r1").unwrap();
        // The recovered netlist must regenerate the identical bitstream.
        let bs2 = tc.bitgen(&out.netlist, false).unwrap();
        assert_eq!(bs2, bs);
        let out2 = convert(&db, &reference, &bs2, "r1").unwrap();
        assert_eq!(out2.netlist, out.netlist);
    }

    #[test]
    fn unknown_bit_is_flagged_not_fatal() {
        let (tc, db, reference) = desk_setup();
        let nl = sample_design(&tc);
        let mut bs = tc.bitgen(&nl, false).unwrap();
        // Flip a bit owned by nothing: the very last bit of the stream is
        // padding beyond the last tile region only if total_bits < len;
        // instead use a bit we know is unowned: search for one.
        let idx = db.build_bit_index().unwrap();
        let mut unowned = None;
        for pos in CONFIG_BIT_BASE..db.total_bits {
            if idx.owners(pos).is_empty() {
                unowned = Some(pos);
                break;
            }
        }
        if let Some(pos) = unowned {
            bs.set_bit(pos, true);
            let out = convert(&db, &reference, &bs, "r").unwrap();
            assert!(out
                .diagnostics
                .iter()
                .any(|d| matches!(d, Diagnostic::UnknownBit { pos: p } if *p == pos)));
            assert_eq!(out.netlist.nets.len(), 1);
        }
    }

    #[test]
    fn dangling_route_is_flagged() {
        let (tc, db, reference) = desk_setup();
        let f = tc.fabric();
        // Encode only the second hop of the two-tile route: the DirIn source
        // has no driver, so the component has no pin-capable root.
        let mut nl = sample_design(&tc);
        nl.nets[0].pips.remove(0);
        let bs = tc.bitgen(&nl, true).unwrap();
        let out = convert(&db, &reference, &bs, "r").unwrap();
        assert!(out.diagnostics.iter().any(|d| matches!(d, Diagnostic::DanglingNet { .. })));
        let d = out.netlist.nets.iter().find(|n| n.name.starts_with("dangling")).unwrap();
        assert!(d.outpin.is_none());
        assert_eq!(d.inpins, vec![PinRef::new("slice_X0Y1", "F0D")]);
        let _ = f;
    }

    #[test]
    fn active_defaults_are_annotated() {
        let (tc, db, reference) = desk_setup();
        let empty = Netlist::new("e", &tc.fabric().device_id);
        let bs = tc.bitgen(&empty, false).unwrap();
        let out = convert(&db, &reference, &bs, "r").unwrap();
        // Desk fabric: floor(200 * 0.01) = 2 defaults per type, present in
        // every tile of that type as long as nothing overrides them.
        let per_type: Vec<usize> = tc
            .fabric()
            .types
            .iter()
            .map(|t| t.pips.iter().filter(|p| p.is_default).count())
            .collect();
        let expected: usize = (0..tc.fabric().tiles())
            .map(|t| per_type[tc.fabric().placement[t as usize] as usize])
            .sum();
        assert_eq!(out.active_defaults.len(), expected);
        assert!(expected > 0);
    }

    #[test]
    fn wrong_device_or_size_rejected() {
        let (_tc, db, reference) = desk_setup();
        let other = Bitstream::new("other-device", db.total_bits);
        assert!(convert(&db, &reference, &other, "r").is_err());
        let short = Bitstream::new(&db.device_id, db.total_bits - 8);
        assert!(convert(&db, &reference, &short, "r").is_err());
        let _ = Coord::new(0, 0);
    }

    /// Two fully-set routes of one sink with equal weight cannot be told
    /// apart; the converter must report the tie and recover neither, not
    /// guess. Real databases never hold two identical bit sets, so the tie
    /// is staged by corrupting a copy: one sibling is given the other's
    /// positions.
    #[test]
    fn equal_weight_tie_is_rejected_not_guessed() {
        let (tc, db, reference) = desk_setup();

        let ty0 = &db.types[db.tiles[0].type_id as usize];
        let (a, b) = {
            let mut by_sink: std::collections::BTreeMap<u16, Vec<usize>> = Default::default();
            for (i, p) in ty0.pips.iter().enumerate() {
                if !p.is_default {
                    by_sink.entry(p.sink).or_default().push(i);
                }
            }
            let pair = by_sink.values().find(|v| v.len() >= 2).expect("a shared sink exists");
            (pair[0], pair[1])
        };

        let mut forged = db.clone();
        let type_id = forged.tiles[0].type_id as usize;
        forged.types[type_id].pips[b].distance = forged.types[type_id].pips[a].distance.clone();

        let mut bs = reference.clone();
        for pos in forged.pip_positions(0, a as u32) {
            bs.set_bit(pos, true);
        }
        let out = convert(&forged, &reference, &bs, "tie").unwrap();

        let tile = sm_tile_name(tc.fabric().coord(0));
        let srcs = [
            src_wire_name(forged.types[type_id].pips[a].src),
            src_wire_name(forged.types[type_id].pips[b].src),
        ];
        assert!(!out.diagnostics.is_empty(), "tie produced no diagnostic");
        for d in &out.diagnostics {
            match d {
                Diagnostic::AmbiguousPip { tile: dt, a: da, b: db_ } => {
                    assert_eq!(dt, &tile);
                    assert!(srcs.contains(&da.0) && srcs.contains(&db_.0), "{da:?} {db_:?}");
                }
                other => panic!("expected only tie reports, got {other}"),
            }
        }
        assert!(
            out.netlist.nets.iter().all(|n| n.pips.is_empty()),
            "converter guessed a route for the tied sink"
        );
    }
}

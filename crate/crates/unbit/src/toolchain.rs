//! Mock vendor toolchain: turns a placed-and-routed netlist into a bitstream.
//!
//! This is the only module (outside the generator) that reads the hidden
//! [`EncodingMap`]. Everything downstream treats `bitgen` as a black box and
//! may only look at the public [`Fabric`] plus the bitstreams coming out.
//!
//! Faithfully reproduced vendor behaviors:
//!
//! * Structural checks (names, placement, pip existence, one driver per sink
//!   wire) always run.
//! * `force = false` additionally requires every net to be a fully connected
//!   route: starting from the net's driver pin, its pips must reach every
//!   load pin, and no pip may dangle unreachable. `force = true` skips only
//!   this routing validation.
//! * A net's pips are encoded only when the net has a driver pin and at least
//!   one load pin; otherwise they are silently skipped. Lone nets that merely
//!   claim pips do not reach the device. Downstream tooling leans on this
//!   quirk, so it is part of the contract.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::bitstream::Bitstream;
use crate::error::{Error, Result};
use crate::fabric::{
    parse_logic_tile, parse_sink_wire, parse_sm_tile, parse_src_wire, EncodingMap, Fabric,
    PhysWire, SinkRole, SrcRole, BB_SITE, IOB_SITE, SLICE_SITE,
};
use crate::netlist::{parse_slice_pin, Instance, Net, Netlist, PinRef, SiteKind, SlicePin};

/// The black-box surface the reverse pipeline is allowed to touch.
pub trait VendorFlow: Sync {
    /// Public device documentation.
    fn fabric(&self) -> &Fabric;
    /// Netlist to bitstream.
    fn bitgen(&self, netlist: &Netlist, force: bool) -> Result<Bitstream>;
    /// How many bitstreams this flow has produced so far.
    fn invocations(&self) -> u64;
}

pub struct MockToolchain {
    fabric: Fabric,
    encoding: EncodingMap,
    invocations: AtomicU64,
}

/// A netlist pip resolved against the fabric.
struct BoundPip {
    tile: u32,
    pip: u32,
    src: u16,
    sink: u16,
}

impl MockToolchain {
    pub fn new(fabric: Fabric, encoding: EncodingMap) -> MockToolchain {
        MockToolchain { fabric, encoding, invocations: AtomicU64::new(0) }
    }

    /// Ground-truth accessor for the test harness only; reverse-engineering
    /// code never calls this.
    pub fn encoding(&self) -> &EncodingMap {
        &self.encoding
    }

    fn bind_instance(&self, inst: &Instance) -> Result<u32> {
        let f = &self.fabric;
        let coord = parse_logic_tile(&inst.tile).ok_or_else(|| {
            Error::Bitgen(format!("instance {:?}: bad logic tile name {:?}", inst.name, inst.tile))
        })?;
        if !f.in_grid(coord) {
            return Err(Error::Bitgen(format!(
                "instance {:?}: tile {} outside the {}x{} grid",
                inst.name, inst.tile, f.width, f.height
            )));
        }
        let expected_site = match inst.kind {
            SiteKind::Slice => SLICE_SITE,
            SiteKind::Iob => IOB_SITE,
            SiteKind::Blackbox => BB_SITE,
        };
        if inst.site != expected_site {
            return Err(Error::Bitgen(format!(
                "instance {:?}: {} must sit on site {expected_site}, not {:?}",
                inst.name,
                inst.kind,
                inst.site
            )));
        }
        for (&lut, table) in &inst.luts {
            if lut >= f.slice.luts {
                return Err(Error::Bitgen(format!(
                    "instance {:?}: no LUT{lut} in a {}-LUT slice",
                    inst.name, f.slice.luts
                )));
            }
            if table.arity != f.slice.arity {
                return Err(Error::Bitgen(format!(
                    "instance {:?}: LUT{lut} table has {} inputs, device LUTs have {}",
                    inst.name, table.arity, f.slice.arity
                )));
            }
        }
        for &ff in inst.ffs.keys() {
            if ff >= f.slice.ffs {
                return Err(Error::Bitgen(format!(
                    "instance {:?}: no FF{ff} in a {}-FF slice",
                    inst.name, f.slice.ffs
                )));
            }
        }
        Ok(f.tile_index(coord))
    }

    /// Map a pin reference to the wire it touches on its tile's switch
    /// matrix, or None for black-box pins (they are virtual: black boxes do
    /// not connect to the routing fabric).
    fn pin_wire(&self, inst: &Instance, tile: u32, pin: &PinRef, output: bool) -> Result<Option<PhysWire>> {
        let f = &self.fabric;
        match inst.kind {
            SiteKind::Blackbox => Ok(None),
            SiteKind::Iob => {
                let wire = if output {
                    f.physical_src(tile, f.src_index_of(SrcRole::IobIn))
                } else {
                    f.physical_sink(tile, f.sink_index_of(SinkRole::IobO))
                };
                Ok(Some(wire))
            }
            SiteKind::Slice => {
                let sp = parse_slice_pin(&pin.pin).ok_or_else(|| {
                    Error::Bitgen(format!("instance {:?}: unknown slice pin {:?}", inst.name, pin.pin))
                })?;
                let (ok_range, wire) = match sp {
                    SlicePin::LutOut(i) => (
                        i < f.slice.luts,
                        f.physical_src(tile, f.src_index_of(SrcRole::LutOut(i))),
                    ),
                    SlicePin::FfQ(i) => (
                        i < f.slice.ffs,
                        f.physical_src(tile, f.src_index_of(SrcRole::FfOut(i))),
                    ),
                    SlicePin::LutIn(i, j) => (
                        i < f.slice.luts && j < f.slice.arity,
                        f.physical_sink(tile, f.sink_index_of(SinkRole::LutIn(i, j))),
                    ),
                    SlicePin::FfD(i) => (
                        i < f.slice.ffs,
                        f.physical_sink(tile, f.sink_index_of(SinkRole::FfD(i))),
                    ),
                };
                if !ok_range {
                    return Err(Error::Bitgen(format!(
                        "instance {:?}: pin {} outside slice geometry",
                        inst.name, pin.pin
                    )));
                }
                Ok(Some(wire))
            }
        }
    }

    fn bind_pips(&self, net: &Net) -> Result<Vec<BoundPip>> {
        let f = &self.fabric;
        let mut out = Vec::with_capacity(net.pips.len());
        for pip in &net.pips {
            let coord = parse_sm_tile(&pip.tile).ok_or_else(|| {
                Error::Bitgen(format!("net {:?}: bad switch-matrix tile {:?}", net.name, pip.tile))
            })?;
            if !f.in_grid(coord) {
                return Err(Error::Bitgen(format!(
                    "net {:?}: tile {} outside the grid",
                    net.name, pip.tile
                )));
            }
            let tile = f.tile_index(coord);
            let ty = f.placement[tile as usize];
            let src = parse_src_wire(&pip.src)
                .filter(|&s| s < f.types[ty as usize].source_count)
                .ok_or_else(|| {
                    Error::Bitgen(format!(
                        "net {:?}: no source wire {} in {}",
                        net.name, pip.src, pip.tile
                    ))
                })?;
            let sink = parse_sink_wire(&pip.sink)
                .filter(|&s| s < f.types[ty as usize].sink_count)
                .ok_or_else(|| {
                    Error::Bitgen(format!(
                        "net {:?}: no sink wire {} in {}",
                        net.name, pip.sink, pip.tile
                    ))
                })?;
            let pip_idx = f.pip_index(ty, src, sink).ok_or_else(|| {
                Error::Bitgen(format!(
                    "net {:?}: {} has no pip {} -> {}",
                    net.name, pip.tile, pip.src, pip.sink
                ))
            })?;
            out.push(BoundPip { tile, pip: pip_idx, src, sink });
        }
        Ok(out)
    }

    /// Full route check for one net: from the driver wire, the net's pips
    /// must reach every load wire, and every pip must take part.
    fn check_route(
        &self,
        net: &Net,
        pips: &[BoundPip],
        insts: &BTreeMap<&str, (&Instance, u32)>,
    ) -> Result<()> {
        let f = &self.fabric;
        let driver = match &net.outpin {
            Some(pin) => {
                let (inst, tile) = insts[pin.inst.as_str()];
                self.pin_wire(inst, tile, pin, true)?
            }
            None => {
                if net.inpins.is_empty() && net.pips.is_empty() {
                    return Ok(());
                }
                return Err(Error::Bitgen(format!(
                    "net {:?} has loads or pips but no driver pin",
                    net.name
                )));
            }
        };
        let loads: Vec<(&PinRef, Option<PhysWire>)> = net
            .inpins
            .iter()
            .map(|pin| {
                let (inst, tile) = insts[pin.inst.as_str()];
                Ok((pin, self.pin_wire(inst, tile, pin, false)?))
            })
            .collect::<Result<_>>()?;

        let driver = match driver {
            Some(w) => w,
            None => {
                // Black-box driver: virtual net. It cannot touch the routing
                // fabric, so pips and fabric loads are meaningless here.
                if !net.pips.is_empty() || loads.iter().any(|(_, w)| w.is_some()) {
                    return Err(Error::Bitgen(format!(
                        "net {:?} is driven by a black box and cannot route through the fabric",
                        net.name
                    )));
                }
                return Ok(());
            }
        };

        let mut reached: BTreeSet<PhysWire> = BTreeSet::new();
        reached.insert(driver);
        let mut remaining: Vec<(PhysWire, PhysWire)> = pips
            .iter()
            .map(|p| (f.physical_src(p.tile, p.src), f.physical_sink(p.tile, p.sink)))
            .collect();
        loop {
            let before = remaining.len();
            remaining.retain(|(src, sink)| {
                if reached.contains(src) {
                    reached.insert(*sink);
                    false
                } else {
                    true
                }
            });
            if remaining.len() == before {
                break;
            }
        }
        if let Some((src, sink)) = remaining.first() {
            let _ = (src, sink);
            return Err(Error::Bitgen(format!(
                "net {:?}: {} of its pips are not reachable from the driver",
                net.name,
                remaining.len()
            )));
        }
        for (pin, wire) in loads {
            if let Some(w) = wire {
                if !reached.contains(&w) {
                    return Err(Error::Bitgen(format!(
                        "net {:?}: load {}.{} is not reached by the route",
                        net.name, pin.inst, pin.pin
                    )));
                }
            }
        }
        Ok(())
    }
}

impl VendorFlow for MockToolchain {
    fn fabric(&self) -> &Fabric {
        &self.fabric
    }

    fn bitgen(&self, netlist: &Netlist, force: bool) -> Result<Bitstream> {
        let f = &self.fabric;
        if netlist.device != f.device_id {
            return Err(Error::Bitgen(format!(
                "netlist targets device {:?}, toolchain drives {:?}",
                netlist.device, f.device_id
            )));
        }
        netlist.validate()?;

        let mut insts: BTreeMap<&str, (&Instance, u32)> = BTreeMap::new();
        let mut sites: BTreeSet<(u32, &str)> = BTreeSet::new();
        for inst in &netlist.instances {
            let tile = self.bind_instance(inst)?;
            if !sites.insert((tile, inst.site.as_str())) {
                return Err(Error::Bitgen(format!(
                    "site {} of tile {} holds more than one instance",
                    inst.site, inst.tile
                )));
            }
            insts.insert(inst.name.as_str(), (inst, tile));
        }

        let mut bound: Vec<(usize, Vec<BoundPip>)> = Vec::new();
        for (ni, net) in netlist.nets.iter().enumerate() {
            let pips = self.bind_pips(net)?;
            // Pin existence and geometry are checked even when the pin's wire
            // is irrelevant (virtual black-box pins return None).
            if let Some(pin) = &net.outpin {
                let (inst, tile) = insts[pin.inst.as_str()];
                self.pin_wire(inst, tile, pin, true)?;
            }
            for pin in &net.inpins {
                let (inst, tile) = insts[pin.inst.as_str()];
                self.pin_wire(inst, tile, pin, false)?;
            }
            if !force {
                self.check_route(net, &pips, &insts)?;
            }
            bound.push((ni, pips));
        }

        let mut bs = Bitstream::new(&f.device_id, self.encoding.total_bits);
        for (inst, tile) in insts.values() {
            let tile = *tile as usize;
            for (&lut, table) in &inst.luts {
                for k in 0..table.len() {
                    if table.get(k) {
                        bs.set_bit(self.encoding.lut_bits[tile][lut as usize][k as usize], true);
                    }
                }
            }
            for (&ff, cfg) in &inst.ffs {
                if cfg.used {
                    bs.set_bit(self.encoding.ff_bits[tile][ff as usize], true);
                }
            }
        }
        for (ni, pips) in &bound {
            let net = &netlist.nets[*ni];
            // Encoding eligibility quirk: driver plus at least one load, or
            // the net's pips silently never reach the device.
            if net.outpin.is_none() || net.inpins.is_empty() {
                continue;
            }
            for p in pips {
                for pos in self.encoding.pip_positions(f, p.tile, p.pip) {
                    bs.set_bit(pos, true);
                }
            }
        }
        self.invocations.fetch_add(1, Ordering::Relaxed);
        Ok(bs)
    }

    fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::Relaxed)
    }
}

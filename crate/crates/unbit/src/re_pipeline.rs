//! Black-box recovery of the bitstream format.
//!
//! Inputs: the public device model ([`Fabric`]) and the vendor flow as an
//! oracle (netlist in, bitstream out). Output: a [`Database`] mapping every
//! PIP, LUT bit, and FF usage flag to its configuration bits. The hidden
//! encoding map is never touched; everything is learned from XOR diffs
//! between generated bitstreams.
//!
//! Routing recovery leans on two structural facts:
//!
//! * All switch matrices of one type share an internal bit layout and differ
//!   only by a per-tile base offset. So the per-PIP layout is measured once
//!   per *type* (on a representative tile) and carried to every other tile by
//!   a single anchor measurement there.
//! * PIPs are probed through a minimal design: one driver pad, one load pad,
//!   and a single-pip net, generated with routing validation off. The diff
//!   against a pipless reference isolates exactly the probed PIP's bits; an
//!   empty diff exposes the PIP as a default route.
//!
//! This brings the bitgen count for a W x H device from (tiles x pips) down
//! to sum(pips per type) + (tiles - types) + types: 656 instead of 51200 for
//! the 16x16 two-type desk device.
//!
//! Slice recovery is a separate, plainer sweep: against an empty-device
//! reference, each LUT truth-table entry is probed with a one-hot table and
//! each FF with a lone used flag, one bit per diff.

use rayon::prelude::*;

use crate::bitstream;
use crate::database::{Database, DbPip, DbTile, DbType};
use crate::error::{Error, Result};
use crate::fabric::{logic_tile_name, sm_tile_name, Fabric};
use crate::netlist::{FfConfig, Instance, Net, Netlist, PinRef, PipRef, SiteKind, TruthTable};
use crate::toolchain::VendorFlow;

pub struct ReverseOutcome {
    pub db: Database,
    /// Bitstreams generated by routing recovery.
    pub routing_bitgens: u64,
    /// Bitstreams generated by LUT/FF recovery.
    pub slice_bitgens: u64,
}

/// Bitgens the routing phase needs: one reference per type, one probe per
/// PIP of each type, one anchor probe per remaining tile.
pub fn analytic_routing_budget(fabric: &Fabric) -> u64 {
    let pips: u64 = fabric.types.iter().map(|t| t.pips.len() as u64).sum();
    let types = fabric.types.len() as u64;
    pips + (fabric.tiles() as u64 - types) + types
}

/// The constant carrier design for PIP probes: a pad-to-pad net that confers
/// encoding eligibility (driver plus load) on whatever single pip is under
/// test. Placement does not matter because probes skip routing validation.
fn probe_base(fabric: &Fabric) -> Result<Netlist> {
    let mut nl = Netlist::new("pip_probe", &fabric.device_id);
    let mut net = Net::new("probe");
    if fabric.tiles() >= 2 {
        let (a, b) = (fabric.coord(0), fabric.coord(1));
        nl.instances.push(Instance::new("probe_a", SiteKind::Iob, &logic_tile_name(a), crate::fabric::IOB_SITE));
        nl.instances.push(Instance::new("probe_b", SiteKind::Iob, &logic_tile_name(b), crate::fabric::IOB_SITE));
        net.outpin = Some(PinRef::new("probe_a", "I"));
        net.inpins.push(PinRef::new("probe_b", "O"));
    } else {
        // Single-tile device: drive from the slice into the lone pad.
        if fabric.slice.luts == 0 && fabric.slice.ffs == 0 {
            return Err(Error::Reverse("device too small to host a probe design".into()));
        }
        let t = logic_tile_name(fabric.coord(0));
        nl.instances.push(Instance::new("probe_a", SiteKind::Slice, &t, crate::fabric::SLICE_SITE));
        nl.instances.push(Instance::new("probe_b", SiteKind::Iob, &t, crate::fabric::IOB_SITE));
        let pin = if fabric.slice.luts > 0 { "L0O" } else { "F0Q" };
        net.outpin = Some(PinRef::new("probe_a", pin));
        net.inpins.push(PinRef::new("probe_b", "O"));
    }
    nl.nets.push(net);
    Ok(nl)
}

fn probe_with_pip(base: &Netlist, tile: &str, src: &str, sink: &str) -> Netlist {
    let mut nl = base.clone();
    nl.nets[0].pips.push(PipRef::new(tile, src, sink));
    nl
}

/// dist[i] = pos[i] - ref_pos[min(i, ref_len - 1)], the anchored elementwise
/// form that tolerates PIPs with more or fewer bits than the reference.
fn distances(positions: &[u64], reference: &[u64]) -> Vec<i64> {
    let last = reference.len() - 1;
    positions
        .iter()
        .enumerate()
        .map(|(i, &p)| p as i64 - reference[i.min(last)] as i64)
        .collect()
}

fn recover_routing(
    flow: &dyn VendorFlow,
    pool: &rayon::ThreadPool,
) -> Result<(Vec<DbType>, Vec<DbTile>, u64)> {
    let fabric = flow.fabric();
    let base = probe_base(fabric)?;

    let mut representative: Vec<Option<u32>> = vec![None; fabric.types.len()];
    for tile in 0..fabric.tiles() {
        let ty = fabric.placement[tile as usize] as usize;
        if representative[ty].is_none() {
            representative[ty] = Some(tile);
        }
    }

    let mut db_types = Vec::with_capacity(fabric.types.len());
    let mut tiles: Vec<Option<DbTile>> = vec![None; fabric.tiles() as usize];
    let mut total_bits = 0u64;

    for (tid, ty) in fabric.types.iter().enumerate() {
        let rep = representative[tid].ok_or_else(|| {
            Error::Reverse(format!("switch-matrix type {tid} is never placed, cannot probe it"))
        })?;
        let rep_name = sm_tile_name(fabric.coord(rep));
        let report = fabric.report(fabric.coord(rep));

        let reference_bs = flow.bitgen(&base, true)?;
        total_bits = reference_bs.len_bits();

        // One probe per PIP, in report order.
        let positions: Vec<Vec<u64>> = pool.install(|| {
            report
                .par_iter()
                .map(|(src, sink)| {
                    let probe = probe_with_pip(&base, &rep_name, src, sink);
                    bitstream::diff(&flow.bitgen(&probe, true)?, &reference_bs)
                })
                .collect::<Result<_>>()
        })?;

        let reference_pip = report
            .iter()
            .enumerate()
            .filter(|(i, _)| !positions[*i].is_empty())
            .min_by(|(_, a), (_, b)| a.cmp(b))
            .map(|(i, _)| i)
            .ok_or_else(|| {
                Error::Reverse(format!("type {tid}: every pip diffs empty, nothing to anchor on"))
            })?;
        let ref_pos = positions[reference_pip].clone();

        let mut pips = Vec::with_capacity(report.len());
        for (i, (src_name, sink_name)) in report.iter().enumerate() {
            let src = crate::fabric::parse_src_wire(src_name).ok_or_else(|| {
                Error::Reverse(format!("type {tid}: unparseable source wire {src_name:?} in report"))
            })?;
            let sink = crate::fabric::parse_sink_wire(sink_name).ok_or_else(|| {
                Error::Reverse(format!("type {tid}: unparseable sink wire {sink_name:?} in report"))
            })?;
            let is_default = positions[i].is_empty();
            let distance = if is_default { Vec::new() } else { distances(&positions[i], &ref_pos) };
            pips.push(DbPip { src, sink, is_default, distance });
        }

        // Anchor every other tile of this type with a single probe of the
        // reference PIP.
        let (ref_src, ref_sink) = &report[reference_pip];
        let anchors: Vec<(u32, Vec<u64>)> = pool.install(|| {
            (0..fabric.tiles())
                .into_par_iter()
                .filter(|&t| fabric.placement[t as usize] as usize == tid && t != rep)
                .map(|t| {
                    let name = sm_tile_name(fabric.coord(t));
                    let probe = probe_with_pip(&base, &name, ref_src, ref_sink);
                    let pos = bitstream::diff(&flow.bitgen(&probe, true)?, &reference_bs)?;
                    Ok((t, pos))
                })
                .collect::<Result<_>>()
        })?;
        for (t, pos) in anchors {
            if pos.len() != ref_pos.len() {
                return Err(Error::Reverse(format!(
                    "{}: reference pip shows {} bits, expected {} like its type",
                    sm_tile_name(fabric.coord(t)),
                    pos.len(),
                    ref_pos.len()
                )));
            }
            tiles[t as usize] = Some(DbTile { type_id: tid as u16, reference_pos: pos });
        }
        tiles[rep as usize] = Some(DbTile { type_id: tid as u16, reference_pos: ref_pos });

        db_types.push(DbType {
            sink_count: ty.sink_count,
            source_count: ty.source_count,
            reference_pip: reference_pip as u32,
            pips,
        });
    }

    let tiles: Vec<DbTile> = tiles
        .into_iter()
        .enumerate()
        .map(|(t, tile)| tile.ok_or_else(|| Error::Reverse(format!("tile {t} never anchored"))))
        .collect::<Result<_>>()?;
    Ok((db_types, tiles, total_bits))
}

type SliceBits = (Vec<Vec<Vec<u64>>>, Vec<Vec<u64>>);

fn recover_slices(flow: &dyn VendorFlow, pool: &rayon::ThreadPool) -> Result<SliceBits> {
    let fabric = flow.fabric();
    let empty = Netlist::new("slice_probe", &fabric.device_id);
    let reference_bs = flow.bitgen(&empty, false)?;
    let table_len = fabric.slice.table_len();

    let per_tile: Vec<(Vec<Vec<u64>>, Vec<u64>)> = pool.install(|| {
        (0..fabric.tiles())
            .into_par_iter()
            .map(|tile| {
                let tile_name = logic_tile_name(fabric.coord(tile));
                let single_bit = |inst: Instance| -> Result<u64> {
                    let mut nl = Netlist::new("slice_probe", &fabric.device_id);
                    nl.instances.push(inst);
                    let diff = bitstream::diff(&flow.bitgen(&nl, false)?, &reference_bs)?;
                    if diff.len() != 1 {
                        return Err(Error::Reverse(format!(
                            "{tile_name}: slice probe flipped {} bits, expected exactly 1",
                            diff.len()
                        )));
                    }
                    Ok(diff[0])
                };

                let mut luts = Vec::with_capacity(fabric.slice.luts as usize);
                for lut in 0..fabric.slice.luts {
                    let mut entries = Vec::with_capacity(table_len);
                    for k in 0..table_len {
                        let mut inst = Instance::new(
                            "probe",
                            SiteKind::Slice,
                            &tile_name,
                            crate::fabric::SLICE_SITE,
                        );
                        inst.luts.insert(
                            lut,
                            TruthTable { arity: fabric.slice.arity, bits: 1u64 << k },
                        );
                        entries.push(single_bit(inst)?);
                    }
                    luts.push(entries);
                }
                let mut ffs = Vec::with_capacity(fabric.slice.ffs as usize);
                for ff in 0..fabric.slice.ffs {
                    let mut inst =
                        Instance::new("probe", SiteKind::Slice, &tile_name, crate::fabric::SLICE_SITE);
                    inst.ffs.insert(ff, FfConfig { used: true, init: false });
                    ffs.push(single_bit(inst)?);
                }
                Ok((luts, ffs))
            })
            .collect::<Result<_>>()
    })?;

    let mut lut_bits = Vec::with_capacity(per_tile.len());
    let mut ff_bits = Vec::with_capacity(per_tile.len());
    for (luts, ffs) in per_tile {
        lut_bits.push(luts);
        ff_bits.push(ffs);
    }
    Ok((lut_bits, ff_bits))
}

/// Run the full recovery. `jobs` caps the worker threads; any value produces
/// byte-identical databases because all assembly is index-ordered.
pub fn reverse_format(flow: &dyn VendorFlow, jobs: usize) -> Result<ReverseOutcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Reverse(format!("cannot build worker pool: {e}")))?;

    let before = flow.invocations();
    let (types, tiles, total_bits) = recover_routing(flow, &pool)?;
    let after_routing = flow.invocations();
    let (lut_bits, ff_bits) = recover_slices(flow, &pool)?;
    let after_slices = flow.invocations();

    let fabric = flow.fabric();
    let db = Database {
        device_id: fabric.device_id.clone(),
        width: fabric.width,
        height: fabric.height,
        slice: fabric.slice,
        total_bits,
        types,
        tiles,
        lut_bits,
        ff_bits,
    };
    // Shape and bounds problems are recovery bugs; surface them here rather
    // than at first use.
    db.build_bit_index()?;

    Ok(ReverseOutcome {
        db,
        routing_bitgens: after_routing - before,
        slice_bitgens: after_slices - after_routing,
    })
}

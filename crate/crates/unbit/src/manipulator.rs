//! Direct bitstream edits driven by a recovered [`Database`].
//!
//! The three operations work on the configuration bits alone; no netlist is
//! involved, so they compose with streams produced by any flow. Edits keep
//! the per-sink one-driver invariant: selecting a route clears whatever
//! other route was configured on the same sink, and releasing a route
//! restores the sink to its default state.

use crate::bitstream::Bitstream;
use crate::database::Database;
use crate::error::{Error, Result};
use crate::fabric::{parse_logic_tile, parse_sink_wire, parse_sm_tile, parse_src_wire, Coord};
use crate::netlist::TruthTable;

fn check_target(db: &Database, bs: &Bitstream) -> Result<()> {
    if bs.device_id != db.device_id {
        return Err(Error::Manip(format!(
            "bitstream is for device {:?}, database describes {:?}",
            bs.device_id, db.device_id
        )));
    }
    if bs.len_bits() != db.total_bits {
        return Err(Error::Manip(format!(
            "bitstream holds {} bits, database expects {}",
            bs.len_bits(),
            db.total_bits
        )));
    }
    Ok(())
}

fn tile_index(db: &Database, c: Coord, what: &str) -> Result<u32> {
    if c.x as u16 >= db.width || c.y as u16 >= db.height {
        return Err(Error::Manip(format!(
            "{what} X{}Y{} is outside the {}x{} grid",
            c.x, c.y, db.width, db.height
        )));
    }
    Ok(c.y as u32 * db.width as u32 + c.x as u32)
}

/// Resolve "INT_X..Y..", "W..", "S.." to (tile index, pip index).
fn resolve_pip(db: &Database, tile: &str, src: &str, sink: &str) -> Result<(u32, u32)> {
    let c = parse_sm_tile(tile)
        .ok_or_else(|| Error::Manip(format!("{tile:?} is not a switch tile name")))?;
    let t = tile_index(db, c, "switch tile")?;
    let src = parse_src_wire(src)
        .ok_or_else(|| Error::Manip(format!("{src:?} is not a source wire name")))?;
    let sink = parse_sink_wire(sink)
        .ok_or_else(|| Error::Manip(format!("{sink:?} is not a sink wire name")))?;
    let ty = &db.types[db.tiles[t as usize].type_id as usize];
    let pip = ty
        .pips
        .iter()
        .position(|p| p.src == src && p.sink == sink)
        .ok_or_else(|| Error::Manip(format!("{tile} has no pip W{src}->S{sink}")))?;
    Ok((t, pip as u32))
}

fn fully_set(bs: &Bitstream, bits: &[u64]) -> bool {
    !bits.is_empty() && bits.iter().all(|&b| bs.get_bit(b))
}

/// Select the route `src -> sink` in `tile`. Any other route configured on
/// the same sink is released first. Selecting a default route is the same as
/// releasing the sink entirely. Idempotent.
pub fn set_pip(db: &Database, bs: &mut Bitstream, tile: &str, src: &str, sink: &str) -> Result<()> {
    check_target(db, bs)?;
    let (t, pip) = resolve_pip(db, tile, src, sink)?;
    let ty = &db.types[db.tiles[t as usize].type_id as usize];
    let new_bits = db.pip_positions(t, pip);
    let sink_idx = ty.pips[pip as usize].sink;

    // Release every currently-configured sibling on this sink, keeping any
    // bits the new route shares.
    for (i, p) in ty.pips.iter().enumerate() {
        if i as u32 == pip || p.sink != sink_idx {
            continue;
        }
        let bits = db.pip_positions(t, i as u32);
        if fully_set(bs, &bits) {
            for b in bits {
                if !new_bits.contains(&b) {
                    bs.set_bit(b, false);
                }
            }
        }
    }
    for b in new_bits {
        bs.set_bit(b, true);
    }
    Ok(())
}

/// Release the route `src -> sink` in `tile`, returning the sink to its
/// default state. Errors when that exact route is not currently configured.
pub fn unset_pip(
    db: &Database,
    bs: &mut Bitstream,
    tile: &str,
    src: &str,
    sink: &str,
) -> Result<()> {
    check_target(db, bs)?;
    let (t, pip) = resolve_pip(db, tile, src, sink)?;
    let ty = &db.types[db.tiles[t as usize].type_id as usize];
    let bits = db.pip_positions(t, pip);
    if ty.pips[pip as usize].is_default {
        return Err(Error::Manip(format!(
            "{tile} {src}->{sink} is a default route; it is not held by configuration bits"
        )));
    }
    if !fully_set(bs, &bits) {
        return Err(Error::Manip(format!("{tile} {src}->{sink} is not currently configured")));
    }

    // Bits shared with a configured route on another sink must survive.
    let sink_idx = ty.pips[pip as usize].sink;
    let mut protected: Vec<u64> = Vec::new();
    for t2 in 0..db.tile_count() {
        let ty2 = &db.types[db.tiles[t2 as usize].type_id as usize];
        for (i, p2) in ty2.pips.iter().enumerate() {
            if t2 == t && p2.sink == sink_idx {
                continue;
            }
            let b2 = db.pip_positions(t2, i as u32);
            if fully_set(bs, &b2) {
                protected.extend(b2);
            }
        }
    }
    protected.sort_unstable();
    for b in bits {
        if protected.binary_search(&b).is_err() {
            bs.set_bit(b, false);
        }
    }
    Ok(())
}

/// Replace the truth table of `LUT<lut>` in logic tile `tile`.
pub fn rewrite_lut(
    db: &Database,
    bs: &mut Bitstream,
    tile: &str,
    lut: u8,
    table: &TruthTable,
) -> Result<()> {
    check_target(db, bs)?;
    let c = parse_logic_tile(tile)
        .ok_or_else(|| Error::Manip(format!("{tile:?} is not a logic tile name")))?;
    let t = tile_index(db, c, "logic tile")?;
    if lut >= db.slice.luts {
        return Err(Error::Manip(format!(
            "LUT index {lut} out of range; slices hold {} LUTs",
            db.slice.luts
        )));
    }
    if table.arity != db.slice.arity {
        return Err(Error::Manip(format!(
            "table has arity {}, device LUTs have arity {}",
            table.arity, db.slice.arity
        )));
    }
    let entries = &db.lut_bits[t as usize][lut as usize];
    for (k, &pos) in entries.iter().enumerate() {
        bs.set_bit(pos, table.get(k as u32));
    }
    Ok(())
}

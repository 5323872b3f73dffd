//! The recovered bitstream database: everything the reverse pipeline learns,
//! in a form that lets downstream tools work without the vendor toolchain.
//!
//! Per switch-matrix type the database stores one PIP list in the public
//! report order. Only the type's *reference PIP* carries absolute positions,
//! and those per tile; every other PIP stores distances relative to the
//! reference. This exploits the layout property that same-type matrices are
//! bit-identical up to a per-tile base offset, and it is also the natural
//! shape of the recovery process (one template per PIP on a representative
//! tile, one template per remaining tile).
//!
//! Binary form (`write_bytes`/`read_bytes`), all integers little-endian:
//!
//! ```text
//! magic "UBDB" | version u16
//! dev_len u32 | device_id | width u16 | height u16
//! luts u8 | arity u8 | ffs u8 | total_bits u64
//! type_count u16 | tile_count u32
//! per type:  sink_count u16 | source_count u16 | reference_pip u32
//!            | pip_count u32
//!            per pip: src u16 | sink u16 | flags u8 (bit0 = default)
//!                     | dist_len u8 | dist i64 * dist_len
//! per tile:  type_id u16 | ref_len u8 | pos u64 * ref_len
//! per tile:  per lut: pos u64 * 2^arity
//! per tile:  per ff: pos u64
//! crc32 u32 over every preceding byte
//! ```

use std::collections::HashMap;
use std::path::Path;

use crate::bitstream::CONFIG_BIT_BASE;
use crate::error::{Error, Result};
use crate::fabric::{sm_tile_name, Fabric, PipDef, SliceSpec, SmType};

pub const DB_MAGIC: &[u8; 4] = b"UBDB";
pub const DB_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DbPip {
    pub src: u16,
    pub sink: u16,
    pub is_default: bool,
    /// dist[i] = position[i] - reference_pos[min(i, reference_len - 1)].
    /// Empty for default routes (they own no bits).
    pub distance: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DbType {
    pub sink_count: u16,
    pub source_count: u16,
    /// Index into `pips` of the anchoring reference PIP.
    pub reference_pip: u32,
    pub pips: Vec<DbPip>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DbTile {
    pub type_id: u16,
    /// Absolute bit positions of the reference PIP in this tile, ascending.
    pub reference_pos: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Database {
    pub device_id: String,
    pub width: u16,
    pub height: u16,
    pub slice: SliceSpec,
    /// Size of the configuration bit space (frame bits).
    pub total_bits: u64,
    pub types: Vec<DbType>,
    pub tiles: Vec<DbTile>,
    /// Per tile, per LUT, per truth-table entry: absolute bit position.
    pub lut_bits: Vec<Vec<Vec<u64>>>,
    /// Per tile, per FF: absolute usage-bit position.
    pub ff_bits: Vec<Vec<u64>>,
}

/// What a configuration bit means. One bit can take part in several PIPs of
/// one sink wire, but never in PIPs of different sinks and never in both a
/// PIP and a slice function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitOwner {
    Pip { tile: u32, pip: u32 },
    Lut { tile: u32, lut: u8, entry: u16 },
    Ff { tile: u32, ff: u8 },
}

/// Position -> owners, for the ascending-scan converter.
#[derive(Debug)]
pub struct BitIndex {
    map: HashMap<u64, Vec<BitOwner>>,
}

impl BitIndex {
    pub fn owners(&self, pos: u64) -> &[BitOwner] {
        self.map.get(&pos).map(|v| v.as_slice()).unwrap_or(&[])
    }
}

impl Database {
    pub fn tile_count(&self) -> u32 {
        self.width as u32 * self.height as u32
    }

    /// Absolute positions of `pip` in `tile`, reconstructed from the tile's
    /// reference positions plus the PIP's stored distances.
    pub fn pip_positions(&self, tile: u32, pip: u32) -> Vec<u64> {
        let t = &self.tiles[tile as usize];
        let p = &self.types[t.type_id as usize].pips[pip as usize];
        let last = t.reference_pos.len().saturating_sub(1);
        p.distance
            .iter()
            .enumerate()
            .map(|(i, &d)| (t.reference_pos[i.min(last)] as i64 + d) as u64)
            .collect()
    }

    /// Internal-consistency check plus the bit index build. Extrapolated
    /// positions that escape the configuration space indicate a corrupt or
    /// mismatched database and name the offending switch matrix.
    pub fn build_bit_index(&self) -> Result<BitIndex> {
        self.validate_shape()?;
        let mut map: HashMap<u64, Vec<BitOwner>> = HashMap::new();
        for (tile_idx, tile) in self.tiles.iter().enumerate() {
            let tile_u = tile_idx as u32;
            let ty = &self.types[tile.type_id as usize];
            for pip_idx in 0..ty.pips.len() {
                for pos in self.pip_positions(tile_u, pip_idx as u32) {
                    if pos < CONFIG_BIT_BASE || pos >= self.total_bits {
                        let c = crate::fabric::Coord::new(
                            (tile_u % self.width as u32) as u16,
                            (tile_u / self.width as u32) as u16,
                        );
                        return Err(Error::Format(format!(
                            "database maps pip {pip_idx} of {} to bit {pos}, outside the \
                             configuration space [{CONFIG_BIT_BASE}, {})",
                            sm_tile_name(c),
                            self.total_bits
                        )));
                    }
                    map.entry(pos).or_default().push(BitOwner::Pip { tile: tile_u, pip: pip_idx as u32 });
                }
            }
            for (lut, entries) in self.lut_bits[tile_idx].iter().enumerate() {
                for (entry, &pos) in entries.iter().enumerate() {
                    map.entry(pos)
                        .or_default()
                        .push(BitOwner::Lut { tile: tile_u, lut: lut as u8, entry: entry as u16 });
                }
            }
            for (ff, &pos) in self.ff_bits[tile_idx].iter().enumerate() {
                map.entry(pos).or_default().push(BitOwner::Ff { tile: tile_u, ff: ff as u8 });
            }
        }
        Ok(BitIndex { map })
    }

    fn validate_shape(&self) -> Result<()> {
        let tiles = self.tile_count() as usize;
        if self.tiles.len() != tiles || self.lut_bits.len() != tiles || self.ff_bits.len() != tiles {
            return Err(Error::Format("database tile tables do not match the grid".into()));
        }
        if self.types.is_empty() {
            return Err(Error::Format("database has no switch-matrix types".into()));
        }
        for (i, ty) in self.types.iter().enumerate() {
            let r = ty.reference_pip as usize;
            if r >= ty.pips.len() {
                return Err(Error::Format(format!("type {i}: reference pip out of range")));
            }
            if ty.pips[r].is_default {
                return Err(Error::Format(format!("type {i}: reference pip is a default route")));
            }
            for (pi, p) in ty.pips.iter().enumerate() {
                if p.src >= ty.source_count || p.sink >= ty.sink_count {
                    return Err(Error::Format(format!("type {i}: pip {pi} wires out of range")));
                }
                if p.is_default != p.distance.is_empty() {
                    return Err(Error::Format(format!(
                        "type {i}: pip {pi} default flag disagrees with its distance list"
                    )));
                }
            }
        }
        let table_len = self.slice.table_len();
        for (t, tile) in self.tiles.iter().enumerate() {
            if tile.type_id as usize >= self.types.len() {
                return Err(Error::Format(format!("tile {t}: unknown type id")));
            }
            if tile.reference_pos.is_empty() {
                return Err(Error::Format(format!("tile {t}: empty reference positions")));
            }
            if self.lut_bits[t].len() != self.slice.luts as usize
                || self.lut_bits[t].iter().any(|l| l.len() != table_len)
                || self.ff_bits[t].len() != self.slice.ffs as usize
            {
                return Err(Error::Format(format!("tile {t}: slice bit tables have wrong shape")));
            }
            for &pos in tile
                .reference_pos
                .iter()
                .chain(self.lut_bits[t].iter().flatten())
                .chain(self.ff_bits[t].iter())
            {
                if pos < CONFIG_BIT_BASE || pos >= self.total_bits {
                    return Err(Error::Format(format!(
                        "tile {t}: bit position {pos} outside the configuration space"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Rebuild the public device model from recovered data alone. Everything
    /// the converter and router need (wire roles, pip lists, placement, even
    /// which routes are defaults) is in the database.
    pub fn to_fabric(&self) -> Fabric {
        Fabric {
            device_id: self.device_id.clone(),
            width: self.width,
            height: self.height,
            slice: self.slice,
            types: self
                .types
                .iter()
                .map(|ty| SmType {
                    sink_count: ty.sink_count,
                    source_count: ty.source_count,
                    pips: ty
                        .pips
                        .iter()
                        .map(|p| PipDef { src: p.src, sink: p.sink, is_default: p.is_default })
                        .collect(),
                })
                .collect(),
            placement: self.tiles.iter().map(|t| t.type_id).collect(),
        }
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_bytes(db: &Database) -> Result<Vec<u8>> {
    db.validate_shape()?;
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(DB_MAGIC);
    w.u16(DB_VERSION);
    w.u32(db.device_id.len() as u32);
    w.buf.extend_from_slice(db.device_id.as_bytes());
    w.u16(db.width);
    w.u16(db.height);
    w.u8(db.slice.luts);
    w.u8(db.slice.arity);
    w.u8(db.slice.ffs);
    w.u64(db.total_bits);
    w.u16(db.types.len() as u16);
    w.u32(db.tile_count());
    for ty in &db.types {
        w.u16(ty.sink_count);
        w.u16(ty.source_count);
        w.u32(ty.reference_pip);
        w.u32(ty.pips.len() as u32);
        for p in &ty.pips {
            w.u16(p.src);
            w.u16(p.sink);
            w.u8(p.is_default as u8);
            if p.distance.len() > u8::MAX as usize {
                return Err(Error::Format("pip distance list too long to serialize".into()));
            }
            w.u8(p.distance.len() as u8);
            for &d in &p.distance {
                w.i64(d);
            }
        }
    }
    for tile in &db.tiles {
        w.u16(tile.type_id);
        if tile.reference_pos.len() > u8::MAX as usize {
            return Err(Error::Format("reference position list too long to serialize".into()));
        }
        w.u8(tile.reference_pos.len() as u8);
        for &p in &tile.reference_pos {
            w.u64(p);
        }
    }
    for tile_luts in &db.lut_bits {
        for entries in tile_luts {
            for &p in entries {
                w.u64(p);
            }
        }
    }
    for tile_ffs in &db.ff_bits {
        for &p in tile_ffs {
            w.u64(p);
        }
    }
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    Ok(w.buf)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::Format(format!("truncated database while reading {what}")));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn i64(&mut self, what: &str) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_bytes(data: &[u8]) -> Result<Database> {
    if data.len() < 4 {
        return Err(Error::Format("not a database file".into()));
    }
    let body_end = data.len() - 4;
    let stored = u32::from_le_bytes(data[body_end..].try_into().unwrap());
    let computed = crc32fast::hash(&data[..body_end]);
    if stored != computed {
        return Err(Error::Format(format!(
            "database crc mismatch: stored {stored:08x}, computed {computed:08x}"
        )));
    }
    let mut r = Reader { data: &data[..body_end], pos: 0 };
    if r.take(4, "magic")? != DB_MAGIC {
        return Err(Error::Format("bad magic, not a database file".into()));
    }
    let version = r.u16("version")?;
    if version != DB_VERSION {
        return Err(Error::Format(format!("unsupported database version {version}")));
    }
    let dev_len = r.u32("device id length")? as usize;
    if dev_len > 1024 {
        return Err(Error::Format("unreasonable device id length".into()));
    }
    let device_id = std::str::from_utf8(r.take(dev_len, "device id")?)
        .map_err(|_| Error::Format("device id is not utf-8".into()))?
        .to_string();
    let width = r.u16("width")?;
    let height = r.u16("height")?;
    let slice = SliceSpec { luts: r.u8("luts")?, arity: r.u8("arity")?, ffs: r.u8("ffs")? };
    if width == 0 || height == 0 {
        return Err(Error::Format("database grid is empty".into()));
    }
    if slice.arity == 0 || slice.arity > 6 {
        return Err(Error::Format("database slice arity out of range".into()));
    }
    let total_bits = r.u64("total bits")?;
    let type_count = r.u16("type count")? as usize;
    let tile_count = r.u32("tile count")?;
    if tile_count != width as u32 * height as u32 {
        return Err(Error::Format("tile count disagrees with grid".into()));
    }

    let mut types = Vec::with_capacity(type_count.min(1024));
    for _ in 0..type_count {
        let sink_count = r.u16("sink count")?;
        let source_count = r.u16("source count")?;
        let reference_pip = r.u32("reference pip")?;
        let pip_count = r.u32("pip count")? as usize;
        let mut pips = Vec::with_capacity(pip_count.min(65536));
        for _ in 0..pip_count {
            let src = r.u16("pip src")?;
            let sink = r.u16("pip sink")?;
            let flags = r.u8("pip flags")?;
            if flags > 1 {
                return Err(Error::Format("unknown pip flags".into()));
            }
            let dist_len = r.u8("distance length")? as usize;
            let mut distance = Vec::with_capacity(dist_len);
            for _ in 0..dist_len {
                distance.push(r.i64("distance")?);
            }
            pips.push(DbPip { src, sink, is_default: flags == 1, distance });
        }
        types.push(DbType { sink_count, source_count, reference_pip, pips });
    }

    let mut tiles = Vec::with_capacity(tile_count as usize);
    for _ in 0..tile_count {
        let type_id = r.u16("tile type")?;
        let ref_len = r.u8("reference length")? as usize;
        let mut reference_pos = Vec::with_capacity(ref_len);
        for _ in 0..ref_len {
            reference_pos.push(r.u64("reference position")?);
        }
        tiles.push(DbTile { type_id, reference_pos });
    }

    let table_len = slice.table_len();
    let mut lut_bits = Vec::with_capacity(tile_count as usize);
    for _ in 0..tile_count {
        let mut tile_luts = Vec::with_capacity(slice.luts as usize);
        for _ in 0..slice.luts {
            let mut entries = Vec::with_capacity(table_len);
            for _ in 0..table_len {
                entries.push(r.u64("lut bit")?);
            }
            tile_luts.push(entries);
        }
        lut_bits.push(tile_luts);
    }
    let mut ff_bits = Vec::with_capacity(tile_count as usize);
    for _ in 0..tile_count {
        let mut tile_ffs = Vec::with_capacity(slice.ffs as usize);
        for _ in 0..slice.ffs {
            tile_ffs.push(r.u64("ff bit")?);
        }
        ff_bits.push(tile_ffs);
    }
    if r.pos != r.data.len() {
        return Err(Error::Format("trailing bytes after database".into()));
    }

    let db = Database { device_id, width, height, slice, total_bits, types, tiles, lut_bits, ff_bits };
    db.validate_shape()?;
    Ok(db)
}

pub fn save(db: &Database, path: &Path) -> Result<()> {
    std::fs::write(path, write_bytes(db)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Database> {
    read_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

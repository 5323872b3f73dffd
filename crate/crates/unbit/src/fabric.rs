//! Mock FPGA device model: an island-style grid of switch matrices and logic
//! slices, plus the deterministic generator that invents a device family from
//! a seed.
//!
//! The generator produces two artifacts:
//!
//! * [`Fabric`]: the public device model. Grid shape, switch-matrix types,
//!   their PIP lists (source wire, sink wire pairs), slice geometry, and the
//!   wire topology. This is what a vendor would document, minus the bitstream
//!   encoding.
//! * [`EncodingMap`]: the hidden ground truth. Which configuration bits each
//!   PIP, LUT truth-table entry, and FF usage flag occupies. Only the mock
//!   toolchain and the test harness may look at it; the reverse-engineering
//!   pipeline has to recover it through black-box experiments.
//!
//! Wire names are deliberately opaque (`W3`, `S17`). Their meaning (LUT input,
//! FF data, IOB, or a directional lane to a neighbor tile) is carried by role
//! tables derived from the index, so parsers never interpret names.
//!
//! Encoding structure invariants, all enforced by the generator and checked
//! in tests:
//!
//! * Every sink wire with N candidate sources spends at least ceil(log2 N)
//!   bits per PIP, and at least a quarter of the PIPs on each sink spend
//!   strictly more (over-provisioning, so set-bit counts disambiguate).
//! * Bit sets of distinct PIPs on one sink are distinct; a PIP's set may only
//!   contain another's if it is strictly larger.
//! * Each sink owns a disjoint bit pool, so PIPs on different sinks never
//!   share bits. Within a sink, sharing is common.
//! * All switch matrices of one type have identical internal bit layouts, so
//!   same-type matrices differ only by a per-tile base offset. This is the
//!   distance property the reverse pipeline exploits.
//! * A small fraction of PIPs per type (floor(pip_count * default_fraction))
//!   are default routes and own no bits at all.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::bitstream::CONFIG_BIT_BASE;
use crate::error::{Error, Result};

pub const SLICE_SITE: &str = "SLICE0";
pub const IOB_SITE: &str = "IOB0";
pub const BB_SITE: &str = "BB0";

/// Grid coordinate. Ordering is row-major: (y, x).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Coord {
    pub x: u16,
    pub y: u16,
}

impl Coord {
    pub fn new(x: u16, y: u16) -> Self {
        Coord { x, y }
    }
}

impl PartialOrd for Coord {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Coord {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.y, self.x).cmp(&(other.y, other.x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dir {
    N = 0,
    E = 1,
    S = 2,
    W = 3,
}

pub const DIRS: [Dir; 4] = [Dir::N, Dir::E, Dir::S, Dir::W];

impl Dir {
    pub fn delta(self) -> (i32, i32) {
        match self {
            Dir::N => (0, 1),
            Dir::E => (1, 0),
            Dir::S => (0, -1),
            Dir::W => (-1, 0),
        }
    }

    pub fn index(self) -> u16 {
        self as u16
    }

    pub fn from_index(i: u16) -> Dir {
        DIRS[(i % 4) as usize]
    }
}

/// What a source wire of a switch matrix carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrcRole {
    /// Output of local LUT i.
    LutOut(u8),
    /// Q output of local FF i.
    FfOut(u8),
    /// Input pad of the local IOB site.
    IobIn,
    /// Signal traveling in direction `.0` on lane `.1`, arriving from the
    /// neighbor opposite that direction.
    DirIn(Dir, u16),
}

/// What a sink wire of a switch matrix drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinkRole {
    /// Input j of local LUT i.
    LutIn(u8, u8),
    /// D input of local FF i.
    FfD(u8),
    /// Output pad of the local IOB site.
    IobO,
    /// Wire leaving toward direction `.0` on lane `.1`; becomes the matching
    /// `DirIn` source of the neighbor tile.
    DirOut(Dir, u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceSpec {
    pub luts: u8,
    /// LUT input count; truth tables have 2^arity entries. At most 6.
    pub arity: u8,
    pub ffs: u8,
}

impl SliceSpec {
    pub fn table_len(&self) -> usize {
        1usize << self.arity
    }
}

impl Default for SliceSpec {
    fn default() -> Self {
        SliceSpec { luts: 4, arity: 4, ffs: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmTypeSpec {
    pub pip_count: u32,
    pub sink_count: u16,
    /// Bits available per sink wire for PIP encoding.
    pub bit_budget: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FabricSpec {
    pub seed: u64,
    pub width: u16,
    pub height: u16,
    pub types: Vec<SmTypeSpec>,
    pub slice: SliceSpec,
    pub default_fraction: f64,
}

impl FabricSpec {
    /// Desk-scale device used throughout the test suite: 16x16 grid, two
    /// switch-matrix types of 200 PIPs each, 4 LUTs + 4 FFs per tile.
    pub fn desk(seed: u64) -> Self {
        FabricSpec {
            seed,
            width: 16,
            height: 16,
            types: vec![
                SmTypeSpec { pip_count: 200, sink_count: 37, bit_budget: 12 },
                SmTypeSpec { pip_count: 200, sink_count: 37, bit_budget: 12 },
            ],
            slice: SliceSpec::default(),
            default_fraction: 0.01,
        }
    }

    pub fn tiles(&self) -> u32 {
        self.width as u32 * self.height as u32
    }
}

/// One programmable interconnect point: a (source wire, sink wire) arc.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipDef {
    pub src: u16,
    pub sink: u16,
    /// Default routes are electrically present when no bit is set and have
    /// no encoding of their own.
    pub is_default: bool,
}

/// Public description of one switch-matrix type. Deliberately carries no
/// encoding information (bit budgets live only in the generator spec and the
/// hidden [`EncodingMap`]).
#[derive(Debug, Clone, PartialEq)]
pub struct SmType {
    pub sink_count: u16,
    pub source_count: u16,
    /// Definition order is the stable public order used by reports.
    pub pips: Vec<PipDef>,
}

impl SmType {
    /// Directional lane count (same for sources and sinks).
    pub fn lanes(&self, slice: &SliceSpec) -> u16 {
        let locals = local_sink_count(slice);
        if self.sink_count > locals {
            (self.sink_count - locals).div_ceil(4)
        } else {
            0
        }
    }
}

pub fn local_sink_count(slice: &SliceSpec) -> u16 {
    slice.luts as u16 * slice.arity as u16 + slice.ffs as u16 + 1
}

pub fn local_source_count(slice: &SliceSpec) -> u16 {
    slice.luts as u16 + slice.ffs as u16 + 1
}

/// Public device model.
#[derive(Debug, Clone, PartialEq)]
pub struct Fabric {
    pub device_id: String,
    pub width: u16,
    pub height: u16,
    pub slice: SliceSpec,
    pub types: Vec<SmType>,
    /// Tile index (row-major) -> switch-matrix type id.
    pub placement: Vec<u16>,
}

/// Hidden ground truth: where every configuration bit lives.
///
/// Bit positions are absolute within the bitstream's scan space (header +
/// frames); the first usable config bit sits at [`CONFIG_BIT_BASE`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingMap {
    /// One past the last allocated bit position.
    pub total_bits: u64,
    /// Per tile (row-major): start of that tile's config region.
    pub region_base: Vec<u64>,
    /// Per type, per PIP (definition order): sorted offsets within the tile
    /// region. Empty for default PIPs.
    pub pip_offsets: Vec<Vec<Vec<u32>>>,
    /// Per tile, per LUT: absolute position of each truth-table bit, indexed
    /// by truth-table entry.
    pub lut_bits: Vec<Vec<Vec<u64>>>,
    /// Per tile, per FF: absolute position of the usage bit.
    pub ff_bits: Vec<Vec<u64>>,
}

impl EncodingMap {
    pub fn pip_positions(&self, fabric: &Fabric, tile: u32, pip: u32) -> Vec<u64> {
        let ty = fabric.placement[tile as usize] as usize;
        let base = self.region_base[tile as usize];
        self.pip_offsets[ty][pip as usize].iter().map(|&o| base + o as u64).collect()
    }
}

impl Fabric {
    pub fn tiles(&self) -> u32 {
        self.width as u32 * self.height as u32
    }

    pub fn tile_index(&self, c: Coord) -> u32 {
        c.y as u32 * self.width as u32 + c.x as u32
    }

    pub fn coord(&self, tile: u32) -> Coord {
        Coord::new((tile % self.width as u32) as u16, (tile / self.width as u32) as u16)
    }

    pub fn in_grid(&self, c: Coord) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn type_of(&self, c: Coord) -> u16 {
        self.placement[self.tile_index(c) as usize]
    }

    pub fn tile_type(&self, tile: u32) -> &SmType {
        &self.types[self.placement[tile as usize] as usize]
    }

    pub fn type_id_count(&self) -> u16 {
        self.types.len() as u16
    }

    /// Stable-order PIP name list for one switch matrix. This is the whole
    /// public interface the reverse pipeline gets to see.
    pub fn report(&self, c: Coord) -> Vec<(String, String)> {
        let ty = &self.types[self.type_of(c) as usize];
        ty.pips.iter().map(|p| (src_wire_name(p.src), sink_wire_name(p.sink))).collect()
    }

    pub fn pip_index(&self, type_id: u16, src: u16, sink: u16) -> Option<u32> {
        let ty = &self.types[type_id as usize];
        ty.pips.iter().position(|p| p.src == src && p.sink == sink).map(|i| i as u32)
    }

    pub fn src_role(&self, src: u16) -> SrcRole {
        let l = self.slice.luts as u16;
        let f = self.slice.ffs as u16;
        if src < l {
            SrcRole::LutOut(src as u8)
        } else if src < l + f {
            SrcRole::FfOut((src - l) as u8)
        } else if src == l + f {
            SrcRole::IobIn
        } else {
            let d = src - (l + f + 1);
            SrcRole::DirIn(Dir::from_index(d % 4), d / 4)
        }
    }

    pub fn sink_role(&self, sink: u16) -> SinkRole {
        let la = self.slice.luts as u16 * self.slice.arity as u16;
        let f = self.slice.ffs as u16;
        if sink < la {
            SinkRole::LutIn((sink / self.slice.arity as u16) as u8, (sink % self.slice.arity as u16) as u8)
        } else if sink < la + f {
            SinkRole::FfD((sink - la) as u8)
        } else if sink == la + f {
            SinkRole::IobO
        } else {
            let d = sink - (la + f + 1);
            SinkRole::DirOut(Dir::from_index(d % 4), d / 4)
        }
    }

    pub fn src_index_of(&self, role: SrcRole) -> u16 {
        let l = self.slice.luts as u16;
        let f = self.slice.ffs as u16;
        match role {
            SrcRole::LutOut(i) => i as u16,
            SrcRole::FfOut(i) => l + i as u16,
            SrcRole::IobIn => l + f,
            SrcRole::DirIn(d, lane) => l + f + 1 + lane * 4 + d.index(),
        }
    }

    pub fn sink_index_of(&self, role: SinkRole) -> u16 {
        let la = self.slice.luts as u16 * self.slice.arity as u16;
        let f = self.slice.ffs as u16;
        match role {
            SinkRole::LutIn(i, j) => i as u16 * self.slice.arity as u16 + j as u16,
            SinkRole::FfD(i) => la + i as u16,
            SinkRole::IobO => la + f,
            SinkRole::DirOut(d, lane) => la + f + 1 + lane * 4 + d.index(),
        }
    }
}

/// Canonical identity of a physical wire. Tile-local wires are keyed by their
/// own tile; a directional wire spans two tiles (it is a `DirOut` sink at its
/// origin and a `DirIn` source at the neighbor), so it is keyed by origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PhysWire {
    /// Source wire local to a tile: LUT/FF/IOB output, or a `DirIn` whose
    /// origin tile would be outside the grid (a floating edge stub).
    LocalSrc(u32, u16),
    /// Sink wire local to a tile (LUT input, FF data, IOB output driver).
    LocalSink(u32, u16),
    /// Directional wire: (origin tile, direction index, lane).
    Dir(u32, u16, u16),
}

impl Fabric {
    /// Physical identity of source wire `src` at `tile`.
    pub fn physical_src(&self, tile: u32, src: u16) -> PhysWire {
        if let SrcRole::DirIn(d, lane) = self.src_role(src) {
            let c = self.coord(tile);
            let (dx, dy) = d.delta();
            let (ox, oy) = (c.x as i32 - dx, c.y as i32 - dy);
            if ox >= 0 && oy >= 0 {
                let origin = Coord::new(ox as u16, oy as u16);
                if self.in_grid(origin) {
                    let origin_idx = self.tile_index(origin);
                    let sink = self.sink_index_of(SinkRole::DirOut(d, lane));
                    if sink < self.types[self.placement[origin_idx as usize] as usize].sink_count {
                        return PhysWire::Dir(origin_idx, d.index(), lane);
                    }
                }
            }
        }
        PhysWire::LocalSrc(tile, src)
    }

    /// Physical identity of sink wire `sink` at `tile`.
    pub fn physical_sink(&self, tile: u32, sink: u16) -> PhysWire {
        if let SinkRole::DirOut(d, lane) = self.sink_role(sink) {
            PhysWire::Dir(tile, d.index(), lane)
        } else {
            PhysWire::LocalSink(tile, sink)
        }
    }
}

pub fn src_wire_name(idx: u16) -> String {
    format!("W{idx}")
}

pub fn sink_wire_name(idx: u16) -> String {
    format!("S{idx}")
}

pub fn parse_src_wire(name: &str) -> Option<u16> {
    name.strip_prefix('W')?.parse().ok()
}

pub fn parse_sink_wire(name: &str) -> Option<u16> {
    name.strip_prefix('S')?.parse().ok()
}

pub fn sm_tile_name(c: Coord) -> String {
    format!("INT_X{}Y{}", c.x, c.y)
}

pub fn logic_tile_name(c: Coord) -> String {
    format!("CLB_X{}Y{}", c.x, c.y)
}

fn parse_xy(s: &str) -> Option<Coord> {
    let s = s.strip_prefix('X')?;
    let (x, y) = s.split_once('Y')?;
    Some(Coord::new(x.parse().ok()?, y.parse().ok()?))
}

pub fn parse_sm_tile(name: &str) -> Option<Coord> {
    parse_xy(name.strip_prefix("INT_")?)
}

pub fn parse_logic_tile(name: &str) -> Option<Coord> {
    parse_xy(name.strip_prefix("CLB_")?)
}

/// Deterministic sub-generator: same (seed, tag, a, b) always yields the same
/// stream, independent of call order.
fn subrng(seed: u64, tag: u8, a: u64, b: u64) -> ChaCha20Rng {
    let mut s = [0u8; 32];
    s[0..8].copy_from_slice(&seed.to_le_bytes());
    s[8] = tag;
    s[9] = 0x75; // domain separator for this crate
    s[16..24].copy_from_slice(&a.to_le_bytes());
    s[24..32].copy_from_slice(&b.to_le_bytes());
    ChaCha20Rng::from_seed(s)
}

const TAG_PIPS: u8 = 1;
const TAG_BITS: u8 = 2;
const TAG_SLICE: u8 = 3;
const TAG_DEFAULTS: u8 = 4;

fn ceil_log2(n: u32) -> u32 {
    if n <= 1 {
        0
    } else {
        (n - 1).ilog2() + 1
    }
}

/// Connectivity skeleton: the forced source list for one sink, in priority
/// order. Guarantees a routable fabric for any seed: local LUT->FF feed,
/// same-index FF->next-LUT feed, IOB taps, and directional lanes with
/// straight-through plus lane-rotating turns. Entries whose role does not
/// exist in this geometry are skipped.
fn skeleton_sources(fabric_like: &Fabric, ty: &SmType, sink: u16) -> Vec<u16> {
    let sl = &fabric_like.slice;
    let l = sl.luts as u16;
    let a = sl.arity as u16;
    let f = sl.ffs as u16;
    let lanes = ty.lanes(sl);
    let mut out: Vec<SrcRole> = Vec::new();
    match fabric_like.sink_role(sink) {
        SinkRole::LutIn(i, j) => {
            let (i, j) = (i as u16, j as u16);
            if l > 0 {
                out.push(SrcRole::LutOut(((i + j) % l) as u8));
            }
            if f > 0 {
                out.push(SrcRole::FfOut(((i + j + f - 1) % f) as u8));
            }
            if lanes > 0 {
                let k = i * a + j;
                if j == 0 {
                    for d in DIRS {
                        out.push(SrcRole::DirIn(d, i % lanes));
                    }
                } else {
                    out.push(SrcRole::DirIn(Dir::from_index(k % 4), k % lanes));
                    out.push(SrcRole::DirIn(Dir::from_index((k + 2) % 4), (k + 1) % lanes));
                }
            }
        }
        SinkRole::FfD(i) => {
            let i = i as u16;
            if l > 0 {
                out.push(SrcRole::LutOut((i % l) as u8));
            }
            out.push(SrcRole::IobIn);
            if lanes > 0 {
                for d in DIRS {
                    out.push(SrcRole::DirIn(d, i % lanes));
                }
            }
        }
        SinkRole::IobO => {
            if l > 0 {
                out.push(SrcRole::LutOut(0));
            }
            if f > 0 {
                out.push(SrcRole::FfOut(0));
            }
            if lanes > 0 {
                out.push(SrcRole::DirIn(Dir::N, 0));
                out.push(SrcRole::DirIn(Dir::S, 0));
            }
        }
        SinkRole::DirOut(d, lane) => {
            out.push(SrcRole::DirIn(d, lane));
            out.push(SrcRole::DirIn(Dir::from_index(d.index() + 1), (lane + 1) % lanes));
            out.push(SrcRole::DirIn(Dir::from_index(d.index() + 3), (lane + lanes - 1) % lanes));
            if l > 0 {
                out.push(SrcRole::LutOut((lane % l) as u8));
            }
            if f > 0 {
                out.push(SrcRole::FfOut((lane % f) as u8));
            }
            if lane == 0 {
                out.push(SrcRole::IobIn);
            }
        }
    }
    out.iter()
        .map(|&r| fabric_like.src_index_of(r))
        .filter(|&s| s < ty.source_count)
        .collect()
}

pub fn generate_fabric(spec: &FabricSpec) -> Result<(Fabric, EncodingMap)> {
    if spec.width == 0 || spec.height == 0 {
        return Err(Error::FabricGen("grid must be at least 1x1".into()));
    }
    if spec.types.is_empty() {
        return Err(Error::FabricGen("at least one switch-matrix type required".into()));
    }
    if spec.slice.arity == 0 || spec.slice.arity > 6 {
        return Err(Error::FabricGen("LUT arity must be between 1 and 6".into()));
    }
    if !(0.0..=1.0).contains(&spec.default_fraction) {
        return Err(Error::FabricGen("default_fraction must be in [0, 1]".into()));
    }

    let device_id = format!(
        "mock-{}x{}-t{}-s{:016x}",
        spec.width,
        spec.height,
        spec.types.len(),
        spec.seed
    );

    // Placement first; the skeleton needs roles, which need only the slice
    // spec, so build a shell fabric and fill in types as they are generated.
    let tiles = spec.tiles();
    let placement: Vec<u16> =
        (0..tiles).map(|t| ((t % spec.width as u32 + t / spec.width as u32) % spec.types.len() as u32) as u16).collect();

    let mut fabric = Fabric {
        device_id,
        width: spec.width,
        height: spec.height,
        slice: spec.slice,
        types: Vec::new(),
        placement,
    };

    for (tid, tspec) in spec.types.iter().enumerate() {
        if tspec.sink_count == 0 {
            return Err(Error::FabricGen(format!("type {tid}: sink_count must be positive")));
        }
        if tspec.pip_count < tspec.sink_count as u32 {
            return Err(Error::FabricGen(format!(
                "type {tid}: pip_count {} cannot cover {} sinks",
                tspec.pip_count, tspec.sink_count
            )));
        }
        let locals = local_sink_count(&spec.slice);
        let dir_wires = tspec.sink_count.saturating_sub(locals);
        let source_count = local_source_count(&spec.slice) + dir_wires;
        let mut ty = SmType { sink_count: tspec.sink_count, source_count, pips: Vec::new() };
        if (tspec.pip_count as u64) > tspec.sink_count as u64 * source_count as u64 {
            return Err(Error::FabricGen(format!(
                "type {tid}: pip_count {} exceeds distinct (source, sink) pairs",
                tspec.pip_count
            )));
        }

        // Skeleton, round-robin across sinks so every sink gets its first
        // source before any sink gets its second.
        let forced: Vec<Vec<u16>> =
            (0..ty.sink_count).map(|s| skeleton_sources(&fabric, &ty, s)).collect();
        let mut seen: BTreeSet<(u16, u16)> = BTreeSet::new();
        let max_pass = forced.iter().map(|f| f.len()).max().unwrap_or(0);
        'skeleton: for pass in 0..max_pass {
            for sink in 0..ty.sink_count {
                if let Some(&src) = forced[sink as usize].get(pass) {
                    if seen.insert((src, sink)) {
                        ty.pips.push(PipDef { src, sink, is_default: false });
                        if ty.pips.len() as u32 == tspec.pip_count {
                            break 'skeleton;
                        }
                    }
                }
            }
        }
        let skeleton_len = ty.pips.len();

        // Random fill up to the PIP budget.
        let mut rng = subrng(spec.seed, TAG_PIPS, tid as u64, 0);
        let mut attempts = 0u64;
        while (ty.pips.len() as u32) < tspec.pip_count {
            let src = rng.random_range(0..ty.source_count);
            let sink = rng.random_range(0..ty.sink_count);
            attempts += 1;
            if attempts > tspec.pip_count as u64 * 1000 {
                return Err(Error::FabricGen(format!("type {tid}: PIP fill did not converge")));
            }
            if seen.insert((src, sink)) {
                ty.pips.push(PipDef { src, sink, is_default: false });
            }
        }

        // Defaults come from the random fill, never from the skeleton, so the
        // guaranteed connectivity stays bit-visible.
        let n_default = (tspec.pip_count as f64 * spec.default_fraction).floor() as usize;
        let fill_range: Vec<usize> = (skeleton_len..ty.pips.len()).collect();
        let pool: Vec<usize> = if fill_range.len() >= n_default {
            fill_range
        } else {
            (0..ty.pips.len()).collect()
        };
        let mut drng = subrng(spec.seed, TAG_DEFAULTS, tid as u64, 0);
        let chosen = rand::seq::index::sample(&mut drng, pool.len(), n_default.min(pool.len()));
        for idx in chosen.iter() {
            ty.pips[pool[idx]].is_default = true;
        }

        fabric.types.push(ty);
    }

    let encoding = generate_encoding(spec, &fabric)?;
    Ok((fabric, encoding))
}

fn generate_encoding(spec: &FabricSpec, fabric: &Fabric) -> Result<EncodingMap> {
    // Per type: per-PIP offsets within the tile region.
    let mut pip_offsets: Vec<Vec<Vec<u32>>> = Vec::new();
    for (tid, ty) in fabric.types.iter().enumerate() {
        let budget = spec.types[tid].bit_budget as u32;
        let mut per_pip: Vec<Vec<u32>> = vec![Vec::new(); ty.pips.len()];

        // Group non-default PIPs by sink.
        let mut by_sink: HashMap<u16, Vec<usize>> = HashMap::new();
        for (i, p) in ty.pips.iter().enumerate() {
            if !p.is_default {
                by_sink.entry(p.sink).or_default().push(i);
            }
        }
        let mut sinks: Vec<u16> = by_sink.keys().copied().collect();
        sinks.sort_unstable();

        for sink in sinks {
            let members = &by_sink[&sink];
            let n = members.len() as u32;
            let floor_bits = ceil_log2(n);
            let base_size = floor_bits.max(1);
            if budget < base_size {
                return Err(Error::FabricGen(format!(
                    "type {tid}: bit budget {budget} below ceil(log2({n})) for sink S{sink}"
                )));
            }
            // At least a quarter of each sink's PIPs must spend strictly more
            // than the floor. When base_size already exceeds the floor
            // (single-source sinks), everything qualifies for free.
            let need_over = base_size == floor_bits;
            let n_over = if need_over { (n as usize).div_ceil(4) } else { 0 };
            if need_over && budget < base_size + 1 {
                return Err(Error::FabricGen(format!(
                    "type {tid}: bit budget {budget} cannot over-provision sink S{sink} ({n} sources)"
                )));
            }

            let mut rng = subrng(spec.seed, TAG_BITS, tid as u64, sink as u64);
            let mut order: Vec<usize> = members.clone();
            // Deterministic shuffle to pick which PIPs get extra bits.
            for i in (1..order.len()).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            let mut used: BTreeSet<Vec<u32>> = BTreeSet::new();
            let pool_base = sink as u32 * budget;
            for (rank, &pip_idx) in order.iter().enumerate() {
                let mut size = base_size;
                if rank < n_over {
                    size += 1;
                    if size < budget && rng.random_range(0..4u8) == 0 {
                        size += 1;
                    }
                }
                let size = size.min(budget) as usize;
                let mut ok = false;
                for _ in 0..2000 {
                    let picks = rand::seq::index::sample(&mut rng, budget as usize, size);
                    let mut set: Vec<u32> = picks.iter().map(|p| p as u32).collect();
                    set.sort_unstable();
                    if used.insert(set.clone()) {
                        per_pip[pip_idx] = set.iter().map(|&o| pool_base + o).collect();
                        ok = true;
                        break;
                    }
                }
                if !ok {
                    return Err(Error::FabricGen(format!(
                        "type {tid}: cannot draw {n} distinct bit sets from budget {budget} on sink S{sink}"
                    )));
                }
            }
        }
        pip_offsets.push(per_pip);
    }

    // Region layout: tiles in row-major order, each tile owning its switch
    // matrix block followed by a permuted slice block.
    let table_len = fabric.slice.table_len();
    let slice_bits = fabric.slice.luts as usize * table_len + fabric.slice.ffs as usize;
    let mut region_base = Vec::with_capacity(fabric.tiles() as usize);
    let mut lut_bits = Vec::with_capacity(fabric.tiles() as usize);
    let mut ff_bits = Vec::with_capacity(fabric.tiles() as usize);
    let mut cursor = CONFIG_BIT_BASE;
    for tile in 0..fabric.tiles() {
        let tid = fabric.placement[tile as usize] as usize;
        let ty = &fabric.types[tid];
        region_base.push(cursor);
        let sm_bits = ty.sink_count as u64 * spec.types[tid].bit_budget as u64;
        let slice_base = cursor + sm_bits;

        let c = fabric.coord(tile);
        let mut rng = subrng(spec.seed, TAG_SLICE, c.x as u64, c.y as u64);
        let mut perm: Vec<u64> = (0..slice_bits as u64).collect();
        for i in (1..perm.len()).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }

        let mut tile_luts = Vec::with_capacity(fabric.slice.luts as usize);
        for lut in 0..fabric.slice.luts as usize {
            let mut positions = Vec::with_capacity(table_len);
            for k in 0..table_len {
                positions.push(slice_base + perm[lut * table_len + k]);
            }
            tile_luts.push(positions);
        }
        let mut tile_ffs = Vec::with_capacity(fabric.slice.ffs as usize);
        for ff in 0..fabric.slice.ffs as usize {
            tile_ffs.push(slice_base + perm[fabric.slice.luts as usize * table_len + ff]);
        }
        lut_bits.push(tile_luts);
        ff_bits.push(tile_ffs);

        cursor = slice_base + slice_bits as u64;
    }

    Ok(EncodingMap { total_bits: cursor, region_base, pip_offsets, lut_bits, ff_bits })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> FabricSpec {
        FabricSpec {
            seed: 7,
            width: 2,
            height: 2,
            types: vec![SmTypeSpec { pip_count: 60, sink_count: 25, bit_budget: 8 }],
            slice: SliceSpec { luts: 2, arity: 2, ffs: 2 },
            default_fraction: 0.05,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = FabricSpec::desk(7);
        let (f1, e1) = generate_fabric(&spec).unwrap();
        let (f2, e2) = generate_fabric(&spec).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(e1, e2);
        let (f3, _) = generate_fabric(&FabricSpec::desk(8)).unwrap();
        assert_ne!(f1.types, f3.types);
    }

    #[test]
    fn desk_fabric_default_counts() {
        let (fabric, _) = generate_fabric(&FabricSpec::desk(7)).unwrap();
        for ty in &fabric.types {
            let defaults = ty.pips.iter().filter(|p| p.is_default).count();
            assert_eq!(defaults, 2); // floor(200 * 0.01)
        }
    }

    #[test]
    fn single_pip_fabric_report() {
        let spec = FabricSpec {
            seed: 0,
            width: 1,
            height: 1,
            types: vec![SmTypeSpec { pip_count: 1, sink_count: 1, bit_budget: 4 }],
            slice: SliceSpec::default(),
            default_fraction: 0.01,
        };
        let (fabric, enc) = generate_fabric(&spec).unwrap();
        let report = fabric.report(Coord::new(0, 0));
        assert_eq!(report, vec![("W0".to_string(), "S0".to_string())]);
        // floor(1 * 0.01) = 0 defaults; the PIP owns at least one bit.
        assert!(!fabric.types[0].pips[0].is_default);
        assert!(!enc.pip_offsets[0][0].is_empty());
    }

    #[test]
    fn report_is_stable_and_default_free() {
        let (fabric, _) = generate_fabric(&tiny_spec()).unwrap();
        let r1 = fabric.report(Coord::new(0, 0));
        let r2 = fabric.report(Coord::new(1, 1));
        // Same type on the checkerboard diagonal: identical PIP name sets.
        assert_eq!(fabric.type_of(Coord::new(0, 0)), fabric.type_of(Coord::new(1, 1)));
        assert_eq!(r1, r2);
        assert_eq!(r1.len(), 60);
    }

    #[test]
    fn encoding_sizes_and_overprovisioning() {
        let spec = FabricSpec::desk(7);
        let (fabric, enc) = generate_fabric(&spec).unwrap();
        for (tid, ty) in fabric.types.iter().enumerate() {
            let mut by_sink: HashMap<u16, Vec<usize>> = HashMap::new();
            for (i, p) in ty.pips.iter().enumerate() {
                if !p.is_default {
                    by_sink.entry(p.sink).or_default().push(i);
                }
            }
            let mut over = 0usize;
            let mut total = 0usize;
            for (_sink, members) in &by_sink {
                let floor_bits = ceil_log2(members.len() as u32);
                let mut sets: BTreeSet<Vec<u32>> = BTreeSet::new();
                for &m in members {
                    let bits = &enc.pip_offsets[tid][m];
                    assert!(!bits.is_empty(), "non-default PIP without bits");
                    assert!(bits.len() as u32 >= floor_bits);
                    if bits.len() as u32 > floor_bits {
                        over += 1;
                    }
                    total += 1;
                    assert!(sets.insert(bits.clone()), "duplicate bit set on one sink");
                    // All bits inside the sink's own pool.
                    let pool = members_pool(ty, spec.types[tid].bit_budget, m);
                    for &b in bits {
                        assert!(b >= pool.0 && b < pool.1, "bit outside sink pool");
                    }
                }
            }
            assert!(over * 4 >= total, "under-provisioned type {tid}: {over}/{total}");
        }
    }

    fn members_pool(ty: &SmType, budget: u16, pip: usize) -> (u32, u32) {
        let sink = ty.pips[pip].sink as u32;
        (sink * budget as u32, (sink + 1) * budget as u32)
    }

    #[test]
    fn distance_property_holds_between_same_type_tiles() {
        let (fabric, enc) = generate_fabric(&FabricSpec::desk(7)).unwrap();
        // Tiles (0,0) and (2,0) share type 0 on the checkerboard.
        let a = fabric.tile_index(Coord::new(0, 0));
        let b = fabric.tile_index(Coord::new(2, 0));
        assert_eq!(fabric.placement[a as usize], fabric.placement[b as usize]);
        let pa = enc.pip_positions(&fabric, a, 0);
        let qa = enc.pip_positions(&fabric, a, 5);
        let pb = enc.pip_positions(&fabric, b, 0);
        let qb = enc.pip_positions(&fabric, b, 5);
        let da: Vec<i64> = pa.iter().zip(&qa).map(|(x, y)| *x as i64 - *y as i64).collect();
        let db: Vec<i64> = pb.iter().zip(&qb).map(|(x, y)| *x as i64 - *y as i64).collect();
        assert_eq!(da, db);
    }

    #[test]
    fn rejects_too_small_bit_budget() {
        let mut spec = tiny_spec();
        spec.types[0].bit_budget = 1;
        // 60 PIPs over 25 sinks: some sink has >= 2 sources, needing > 1 bit.
        assert!(matches!(generate_fabric(&spec), Err(Error::FabricGen(_))));
    }

    #[test]
    fn roles_roundtrip() {
        let (fabric, _) = generate_fabric(&FabricSpec::desk(7)).unwrap();
        let ty = &fabric.types[0];
        for s in 0..ty.source_count {
            assert_eq!(fabric.src_index_of(fabric.src_role(s)), s);
        }
        for s in 0..ty.sink_count {
            assert_eq!(fabric.sink_index_of(fabric.sink_role(s)), s);
        }
    }

    #[test]
    fn tile_names_roundtrip() {
        let c = Coord::new(10, 6);
        assert_eq!(sm_tile_name(c), "INT_X10Y6");
        assert_eq!(parse_sm_tile("INT_X10Y6"), Some(c));
        assert_eq!(logic_tile_name(c), "CLB_X10Y6");
        assert_eq!(parse_logic_tile("CLB_X10Y6"), Some(c));
        assert_eq!(parse_sm_tile("CLB_X1Y1"), None);
        assert_eq!(parse_sm_tile("INT_X1"), None);
    }
}

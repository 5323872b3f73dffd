//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use unbit::fabric::{generate_fabric, logic_tile_name, Coord, Fabric, FabricSpec, IOB_SITE, SLICE_SITE};
use unbit::netlist::{FfConfig, Instance, Net, Netlist, PinRef, SiteKind, TruthTable};
use unbit::router;
use unbit::toolchain::MockToolchain;

/// AES-128 rebuilt from field arithmetic alone, sharing no tables with the
/// implementation under test: the S-box comes from brute-force GF(2^8)
/// inversion plus the affine transform, MixColumns from explicit
/// multiplication. Slow and obviously correct.
pub mod oracle {
    fn gf_mul(mut a: u8, mut b: u8) -> u8 {
        let mut acc = 0u8;
        while b != 0 {
            if b & 1 == 1 {
                acc ^= a;
            }
            let high = a & 0x80 != 0;
            a <<= 1;
            if high {
                a ^= 0x1b;
            }
            b >>= 1;
        }
        acc
    }

    fn gf_inv(a: u8) -> u8 {
        if a == 0 {
            return 0;
        }
        (1..=255u8).find(|&b| gf_mul(a, b) == 1).expect("GF(2^8) is a field")
    }

    fn sbox(x: u8) -> u8 {
        let i = gf_inv(x);
        i ^ i.rotate_left(1) ^ i.rotate_left(2) ^ i.rotate_left(3) ^ i.rotate_left(4) ^ 0x63
    }

    fn expand(key: &[u8; 16]) -> [[u8; 16]; 11] {
        let mut w = [[0u8; 4]; 44];
        for i in 0..4 {
            w[i].copy_from_slice(&key[4 * i..4 * i + 4]);
        }
        let mut rcon = 1u8;
        for i in 4..44 {
            let mut t = w[i - 1];
            if i % 4 == 0 {
                t.rotate_left(1);
                for b in &mut t {
                    *b = sbox(*b);
                }
                t[0] ^= rcon;
                rcon = gf_mul(rcon, 2);
            }
            for j in 0..4 {
                w[i][j] = w[i - 4][j] ^ t[j];
            }
        }
        let mut keys = [[0u8; 16]; 11];
        for (r, k) in keys.iter_mut().enumerate() {
            for c in 0..4 {
                k[4 * c..4 * c + 4].copy_from_slice(&w[4 * r + c]);
            }
        }
        keys
    }

    pub fn encrypt(key: &[u8; 16], pt: &[u8; 16]) -> [u8; 16] {
        let keys = expand(key);
        let mut s = *pt;
        for (i, b) in s.iter_mut().enumerate() {
            *b ^= keys[0][i];
        }
        for round in 1..=10 {
            for b in &mut s {
                *b = sbox(*b);
            }
            // ShiftRows on column-major state: row r rotates left by r.
            let mut t = [0u8; 16];
            for c in 0..4 {
                for r in 0..4 {
                    t[4 * c + r] = s[4 * ((c + r) % 4) + r];
                }
            }
            s = t;
            if round < 10 {
                let mut m = [0u8; 16];
                for c in 0..4 {
                    let col = &s[4 * c..4 * c + 4];
                    for r in 0..4 {
                        m[4 * c + r] = gf_mul(col[r], 2)
                            ^ gf_mul(col[(r + 1) % 4], 3)
                            ^ col[(r + 2) % 4]
                            ^ col[(r + 3) % 4];
                    }
                }
                s = m;
            }
            for (i, b) in s.iter_mut().enumerate() {
                *b ^= keys[round][i];
            }
        }
        s
    }
}

/// FIPS-197 appendix C.1.
pub const KAT_KEY: [u8; 16] =
    [0x00, 0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x07, 0x08, 0x09, 0x0a, 0x0b, 0x0c, 0x0d, 0x0e, 0x0f];
pub const KAT_PT: [u8; 16] =
    [0x00, 0x11, 0x22, 0x33, 0x44, 0x55, 0x66, 0x77, 0x88, 0x99, 0xaa, 0xbb, 0xcc, 0xdd, 0xee, 0xff];
pub const KAT_CT: [u8; 16] =
    [0x69, 0xc4, 0xe0, 0xd8, 0x6a, 0x7b, 0x04, 0x30, 0xd8, 0xcd, 0xb7, 0x80, 0x70, 0xb4, 0xc5, 0x5a];

/// FIPS-197 appendix B.
pub const KAT2_KEY: [u8; 16] =
    [0x2b, 0x7e, 0x15, 0x16, 0x28, 0xae, 0xd2, 0xa6, 0xab, 0xf7, 0x15, 0x88, 0x09, 0xcf, 0x4f, 0x3c];
pub const KAT2_PT: [u8; 16] =
    [0x32, 0x43, 0xf6, 0xa8, 0x88, 0x5a, 0x30, 0x8d, 0x31, 0x31, 0x98, 0xa2, 0xe0, 0x37, 0x07, 0x34];
pub const KAT2_CT: [u8; 16] =
    [0x39, 0x25, 0x84, 0x1d, 0x02, 0xdc, 0x09, 0xfb, 0xdc, 0x11, 0x85, 0x97, 0x19, 0x6a, 0x0b, 0x32];

pub fn desk_toolchain(seed: u64) -> MockToolchain {
    let (fabric, encoding) = generate_fabric(&FabricSpec::desk(seed)).expect("desk spec generates");
    MockToolchain::new(fabric, encoding)
}

pub fn rand_block(rng: &mut ChaCha20Rng) -> [u8; 16] {
    let mut b = [0u8; 16];
    rng.fill(&mut b);
    b
}

/// Random placed-and-routed design: input pads feeding LUT+FF pipelines into
/// output pads, plus lone configured LUTs and used FFs that test slice
/// recovery without routing. Uses no default routes (the router never picks
/// them). Random placement sometimes demands a lane shift the hop count
/// cannot deliver, so unroutable candidates are rerolled; the result is
/// still a pure function of the rng state.
pub fn random_netlist(fabric: &Fabric, rng: &mut ChaCha20Rng, name: &str) -> Netlist {
    for _ in 0..50 {
        let mut nl = random_candidate(fabric, rng, name);
        if router::complete_routing(fabric, &mut nl).is_ok() {
            nl.canonicalize();
            nl.validate().expect("random design is valid");
            return nl;
        }
    }
    panic!("no routable candidate in 50 draws; the fabric is too congested for this generator");
}

fn random_candidate(fabric: &Fabric, rng: &mut ChaCha20Rng, name: &str) -> Netlist {
    let arity = fabric.slice.arity;
    let table_len = 1u32 << arity;
    let table_mask = if table_len == 64 { u64::MAX } else { (1u64 << table_len) - 1 };
    let mut nl = Netlist::new(name, &fabric.device_id);

    let mut free: Vec<Coord> = (0..fabric.tiles()).map(|t| fabric.coord(t)).collect();
    let take = |rng: &mut ChaCha20Rng, free: &mut Vec<Coord>| -> Coord {
        free.swap_remove(rng.random_range(0..free.len()))
    };

    let chains = rng.random_range(4..=6usize);
    for k in 0..chains {
        let pad_in = format!("in_{k}");
        let pad_out = format!("out_{k}");
        let sa = format!("sa_{k}");
        let sb = format!("sb_{k}");
        nl.instances.push(Instance::new(
            &pad_in,
            SiteKind::Iob,
            &logic_tile_name(take(rng, &mut free)),
            IOB_SITE,
        ));
        nl.instances.push(Instance::new(
            &pad_out,
            SiteKind::Iob,
            &logic_tile_name(take(rng, &mut free)),
            IOB_SITE,
        ));
        let la = rng.random_range(0..fabric.slice.luts);
        let ja = rng.random_range(0..arity);
        let fa = rng.random_range(0..fabric.slice.ffs);
        let lb = rng.random_range(0..fabric.slice.luts);
        let jb = rng.random_range(0..arity);
        let mut a = Instance::new(&sa, SiteKind::Slice, &logic_tile_name(take(rng, &mut free)), SLICE_SITE);
        a.luts.insert(la, TruthTable { arity, bits: rng.random_range(1..=table_mask) });
        a.ffs.insert(fa, FfConfig { used: true, init: false });
        nl.instances.push(a);
        let mut b = Instance::new(&sb, SiteKind::Slice, &logic_tile_name(take(rng, &mut free)), SLICE_SITE);
        b.luts.insert(lb, TruthTable { arity, bits: rng.random_range(1..=table_mask) });
        nl.instances.push(b);

        let mut n0 = Net::new(&format!("c{k}_pad"));
        n0.outpin = Some(PinRef::new(&pad_in, "I"));
        n0.inpins.push(PinRef::new(&sa, &format!("L{la}I{ja}")));
        nl.nets.push(n0);
        let mut n1 = Net::new(&format!("c{k}_d"));
        n1.outpin = Some(PinRef::new(&sa, &format!("L{la}O")));
        n1.inpins.push(PinRef::new(&sa, &format!("F{fa}D")));
        nl.nets.push(n1);
        let mut n2 = Net::new(&format!("c{k}_q"));
        n2.outpin = Some(PinRef::new(&sa, &format!("F{fa}Q")));
        n2.inpins.push(PinRef::new(&sb, &format!("L{lb}I{jb}")));
        nl.nets.push(n2);
        let mut n3 = Net::new(&format!("c{k}_out"));
        n3.outpin = Some(PinRef::new(&sb, &format!("L{lb}O")));
        n3.inpins.push(PinRef::new(&pad_out, "O"));
        nl.nets.push(n3);
    }

    for k in 0..rng.random_range(1..=3usize) {
        let mut lone =
            Instance::new(&format!("lone_{k}"), SiteKind::Slice, &logic_tile_name(take(rng, &mut free)), SLICE_SITE);
        lone.luts
            .insert(rng.random_range(0..fabric.slice.luts), TruthTable { arity, bits: rng.random_range(1..=table_mask) });
        lone.ffs.insert(rng.random_range(0..fabric.slice.ffs), FfConfig { used: true, init: false });
        nl.instances.push(lone);
    }

    nl
}

/// (tile, lut index) -> truth table bits, for placement-keyed comparison.
pub fn lut_map(nl: &Netlist) -> BTreeMap<(String, u8), u64> {
    let mut map = BTreeMap::new();
    for inst in &nl.instances {
        if inst.kind != SiteKind::Slice {
            continue;
        }
        for (&l, t) in &inst.luts {
            map.insert((inst.tile.clone(), l), t.bits);
        }
    }
    map
}

/// (tile, ff index) of every used flip-flop.
pub fn ff_set(nl: &Netlist) -> BTreeSet<(String, u8)> {
    let mut set = BTreeSet::new();
    for inst in &nl.instances {
        if inst.kind != SiteKind::Slice {
            continue;
        }
        for (&f, cfg) in &inst.ffs {
            if cfg.used {
                set.insert((inst.tile.clone(), f));
            }
        }
    }
    set
}

pub fn pip_set(nl: &Netlist) -> BTreeSet<(String, String, String)> {
    nl.nets
        .iter()
        .flat_map(|n| n.pips.iter())
        .map(|p| (p.tile.clone(), p.src.clone(), p.sink.clone()))
        .collect()
}

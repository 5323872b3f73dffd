//! Placed-and-routed design model.
//!
//! A netlist is a flat list of placed instances plus nets. Each net names the
//! pin that drives it, the pins it feeds, and the switch-matrix pips that
//! carry it. Everything is addressed by name so the text form in
//! [`crate::netlist_text`] round-trips losslessly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};

/// LUT contents, LSB-first by input index: bit k holds the output for the
/// input assignment whose input j equals bit j of k.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TruthTable {
    pub arity: u8,
    pub bits: u64,
}

impl TruthTable {
    pub fn zero(arity: u8) -> TruthTable {
        TruthTable { arity, bits: 0 }
    }

    pub fn constant(arity: u8, value: bool) -> TruthTable {
        let len = 1u32 << arity;
        let bits = if value {
            if len == 64 { u64::MAX } else { (1u64 << len) - 1 }
        } else {
            0
        };
        TruthTable { arity, bits }
    }

    /// Table computing "output = input j".
    pub fn identity(arity: u8, j: u8) -> TruthTable {
        let mut bits = 0u64;
        for k in 0..1u64 << arity {
            if k >> j & 1 == 1 {
                bits |= 1 << k;
            }
        }
        TruthTable { arity, bits }
    }

    pub fn len(&self) -> u32 {
        1u32 << self.arity
    }

    pub fn is_zero(&self) -> bool {
        self.bits == 0
    }

    pub fn get(&self, index: u32) -> bool {
        self.bits >> index & 1 == 1
    }

    pub fn set(&mut self, index: u32, value: bool) {
        if value {
            self.bits |= 1u64 << index;
        } else {
            self.bits &= !(1u64 << index);
        }
    }

    pub fn eval(&self, inputs: &[bool]) -> bool {
        let mut idx = 0u32;
        for (j, &v) in inputs.iter().enumerate() {
            if v {
                idx |= 1 << j;
            }
        }
        self.get(idx)
    }

    /// If the table is exactly "output = input j" for some j, return j.
    pub fn identity_input(&self) -> Option<u8> {
        (0..self.arity).find(|&j| *self == TruthTable::identity(self.arity, j))
    }

    fn nibbles(arity: u8) -> usize {
        ((1usize << arity) + 3) / 4
    }

    /// Hex text, most significant nibble first, fixed width for the arity.
    pub fn to_hex(&self) -> String {
        format!("{:0width$x}", self.bits, width = TruthTable::nibbles(self.arity))
    }

    /// Parse fixed-width hex; the width determines the arity (4*n table bits).
    pub fn from_hex(s: &str) -> Option<TruthTable> {
        if s.is_empty() || s.len() > 16 || !s.len().is_power_of_two() {
            return None;
        }
        let bits = u64::from_str_radix(s, 16).ok()?;
        let table_bits = s.len() * 4;
        let arity = table_bits.trailing_zeros() as u8;
        Some(TruthTable { arity, bits })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FfConfig {
    pub used: bool,
    pub init: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SiteKind {
    Slice,
    Iob,
    Blackbox,
}

impl SiteKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SiteKind::Slice => "SLICE",
            SiteKind::Iob => "IOB",
            SiteKind::Blackbox => "BLACKBOX",
        }
    }

    pub fn from_str(s: &str) -> Option<SiteKind> {
        match s {
            "SLICE" => Some(SiteKind::Slice),
            "IOB" => Some(SiteKind::Iob),
            "BLACKBOX" => Some(SiteKind::Blackbox),
            _ => None,
        }
    }
}

impl fmt::Display for SiteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub name: String,
    pub kind: SiteKind,
    pub tile: String,
    pub site: String,
    pub luts: BTreeMap<u8, TruthTable>,
    pub ffs: BTreeMap<u8, FfConfig>,
    pub model: Option<String>,
}

impl Instance {
    pub fn new(name: &str, kind: SiteKind, tile: &str, site: &str) -> Instance {
        Instance {
            name: name.to_string(),
            kind,
            tile: tile.to_string(),
            site: site.to_string(),
            luts: BTreeMap::new(),
            ffs: BTreeMap::new(),
            model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PinRef {
    pub inst: String,
    pub pin: String,
}

impl PinRef {
    pub fn new(inst: &str, pin: &str) -> PinRef {
        PinRef { inst: inst.to_string(), pin: pin.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PipRef {
    pub tile: String,
    pub src: String,
    pub sink: String,
}

impl PipRef {
    pub fn new(tile: &str, src: &str, sink: &str) -> PipRef {
        PipRef { tile: tile.to_string(), src: src.to_string(), sink: sink.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Net {
    pub name: String,
    pub outpin: Option<PinRef>,
    pub inpins: Vec<PinRef>,
    pub pips: Vec<PipRef>,
}

impl Net {
    pub fn new(name: &str) -> Net {
        Net { name: name.to_string(), outpin: None, inpins: Vec::new(), pips: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Netlist {
    pub design: String,
    pub device: String,
    pub instances: Vec<Instance>,
    pub nets: Vec<Net>,
}

/// Slice pin names: L{i}I{j} LUT input, L{i}O LUT output, F{i}D flip-flop
/// data, F{i}Q flip-flop output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlicePin {
    LutIn(u8, u8),
    LutOut(u8),
    FfD(u8),
    FfQ(u8),
}

pub fn parse_slice_pin(pin: &str) -> Option<SlicePin> {
    let bytes = pin.as_bytes();
    let head = *bytes.first()?;
    let rest = &pin[1..];
    let digits_end = rest.bytes().take_while(|b| b.is_ascii_digit()).count();
    if digits_end == 0 || digits_end > 2 {
        return None;
    }
    let i: u8 = rest[..digits_end].parse().ok()?;
    let tail = &rest[digits_end..];
    match (head, tail) {
        (b'L', "O") => Some(SlicePin::LutOut(i)),
        (b'F', "D") => Some(SlicePin::FfD(i)),
        (b'F', "Q") => Some(SlicePin::FfQ(i)),
        (b'L', _) if tail.starts_with('I') => {
            let j: u8 = tail[1..].parse().ok()?;
            Some(SlicePin::LutIn(i, j))
        }
        _ => None,
    }
}

pub fn slice_pin_name(pin: SlicePin) -> String {
    match pin {
        SlicePin::LutIn(i, j) => format!("L{i}I{j}"),
        SlicePin::LutOut(i) => format!("L{i}O"),
        SlicePin::FfD(i) => format!("F{i}D"),
        SlicePin::FfQ(i) => format!("F{i}Q"),
    }
}

/// IOB pin that drives into the fabric (the pad as an input).
pub const IOB_PIN_IN: &str = "I";
/// IOB pin that receives a signal from the fabric (the pad as an output).
pub const IOB_PIN_OUT: &str = "O";

fn pin_is_output(kind: SiteKind, pin: &str) -> bool {
    match kind {
        SiteKind::Slice => matches!(parse_slice_pin(pin), Some(SlicePin::LutOut(_) | SlicePin::FfQ(_))),
        SiteKind::Iob => pin == IOB_PIN_IN,
        SiteKind::Blackbox => true,
    }
}

fn pin_is_input(kind: SiteKind, pin: &str) -> bool {
    match kind {
        SiteKind::Slice => matches!(parse_slice_pin(pin), Some(SlicePin::LutIn(_, _) | SlicePin::FfD(_))),
        SiteKind::Iob => pin == IOB_PIN_OUT,
        SiteKind::Blackbox => true,
    }
}

impl Netlist {
    pub fn new(design: &str, device: &str) -> Netlist {
        Netlist {
            design: design.to_string(),
            device: device.to_string(),
            instances: Vec::new(),
            nets: Vec::new(),
        }
    }

    pub fn instance(&self, name: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.name == name)
    }

    pub fn instance_mut(&mut self, name: &str) -> Option<&mut Instance> {
        self.instances.iter_mut().find(|i| i.name == name)
    }

    pub fn net(&self, name: &str) -> Option<&Net> {
        self.nets.iter().find(|n| n.name == name)
    }

    pub fn net_mut(&mut self, name: &str) -> Option<&mut Net> {
        self.nets.iter_mut().find(|n| n.name == name)
    }

    /// Sort instances and nets by name and each net's pin and pip lists, so
    /// two equivalent netlists compare equal and write identical text.
    pub fn canonicalize(&mut self) {
        self.instances.sort_by(|a, b| a.name.cmp(&b.name));
        self.nets.sort_by(|a, b| a.name.cmp(&b.name));
        for net in &mut self.nets {
            net.inpins.sort();
            net.pips.sort();
        }
    }

    /// Structural checks that need no fabric: name uniqueness, pin references,
    /// pin directions, kind-appropriate configuration, and the one-driver-per-
    /// sink-wire rule across all nets.
    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for inst in &self.instances {
            if !names.insert(&inst.name) {
                return Err(Error::Validate(format!("duplicate instance name {:?}", inst.name)));
            }
            if inst.kind != SiteKind::Slice && (!inst.luts.is_empty() || !inst.ffs.is_empty()) {
                return Err(Error::Validate(format!(
                    "instance {:?} is a {} but carries slice configuration",
                    inst.name, inst.kind
                )));
            }
            if inst.kind != SiteKind::Blackbox && inst.model.is_some() {
                return Err(Error::Validate(format!(
                    "instance {:?} is a {} but names a model",
                    inst.name, inst.kind
                )));
            }
        }
        let kind_of: BTreeMap<&str, SiteKind> =
            self.instances.iter().map(|i| (i.name.as_str(), i.kind)).collect();

        let mut net_names = BTreeSet::new();
        let mut sink_wires: BTreeMap<(&str, &str), &str> = BTreeMap::new();
        for net in &self.nets {
            if !net_names.insert(&net.name) {
                return Err(Error::Validate(format!("duplicate net name {:?}", net.name)));
            }
            let check_pin = |pin: &PinRef, output: bool| -> Result<()> {
                let kind = *kind_of.get(pin.inst.as_str()).ok_or_else(|| {
                    Error::Validate(format!(
                        "net {:?} references undeclared instance {:?}",
                        net.name, pin.inst
                    ))
                })?;
                let ok = if output { pin_is_output(kind, &pin.pin) } else { pin_is_input(kind, &pin.pin) };
                if !ok {
                    return Err(Error::Validate(format!(
                        "net {:?}: pin {} of {} instance {:?} cannot be used as {}",
                        net.name,
                        pin.pin,
                        kind,
                        pin.inst,
                        if output { "a driver" } else { "a load" }
                    )));
                }
                Ok(())
            };
            if let Some(out) = &net.outpin {
                check_pin(out, true)?;
            }
            let mut seen_pins = BTreeSet::new();
            for inpin in &net.inpins {
                check_pin(inpin, false)?;
                if !seen_pins.insert((inpin.inst.as_str(), inpin.pin.as_str())) {
                    return Err(Error::Validate(format!(
                        "net {:?} lists load {}.{} twice",
                        net.name, inpin.inst, inpin.pin
                    )));
                }
            }
            let mut seen_pips = BTreeSet::new();
            for pip in &net.pips {
                if !seen_pips.insert((pip.tile.as_str(), pip.src.as_str(), pip.sink.as_str())) {
                    return Err(Error::Validate(format!(
                        "net {:?} lists pip {}:{}->{} twice",
                        net.name, pip.tile, pip.src, pip.sink
                    )));
                }
                if let Some(other) = sink_wires.insert((pip.tile.as_str(), pip.sink.as_str()), &net.name)
                {
                    return Err(Error::Validate(format!(
                        "sink wire {} in {} is driven by both net {:?} and net {:?}",
                        pip.sink, pip.tile, other, net.name
                    )));
                }
            }
        }
        Ok(())
    }
}

//! Text forms of the device model.
//!
//! Two distinct files with distinct trust levels:
//!
//! * The **fabric file** (`write_fabric`/`parse_fabric`) is the public device
//!   documentation: grid, slice geometry, switch-matrix types with their PIP
//!   lists and default-route flags, and the tile-type placement. It carries
//!   no bitstream encoding information.
//! * The **family spec file** (`write_spec`/`parse_spec`) is the generator
//!   input: seed, per-type bit budgets, default fraction. Whoever holds it can
//!   regenerate the full device including the hidden encoding, so it plays
//!   the role of the vendor's private data and must stay out of the reverse
//!   pipeline.
//!
//! Both are line-oriented: one directive per line, '#' comments, blank lines
//! ignored.
//!
//! ```text
//! device mock-16x16-t2-s000000000000002a
//! grid 16 16
//! slice luts=4 arity=4 ffs=4
//! type sinks=37 sources=45
//! pip W0 -> S0
//! pip W44 -> S12 default
//! placement 0 0,1,0,1
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fabric::{
    parse_sink_wire, parse_src_wire, sink_wire_name, src_wire_name, Fabric, FabricSpec, PipDef,
    SliceSpec, SmType, SmTypeSpec,
};

pub fn write_fabric(fabric: &Fabric) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "device {}", fabric.device_id);
    let _ = writeln!(out, "grid {} {}", fabric.width, fabric.height);
    let _ = writeln!(
        out,
        "slice luts={} arity={} ffs={}",
        fabric.slice.luts, fabric.slice.arity, fabric.slice.ffs
    );
    for ty in &fabric.types {
        let _ = writeln!(out, "type sinks={} sources={}", ty.sink_count, ty.source_count);
        for pip in &ty.pips {
            let d = if pip.is_default { " default" } else { "" };
            let _ = writeln!(out, "pip {} -> {}{}", src_wire_name(pip.src), sink_wire_name(pip.sink), d);
        }
    }
    for y in 0..fabric.height {
        let row: Vec<String> = (0..fabric.width)
            .map(|x| fabric.placement[y as usize * fabric.width as usize + x as usize].to_string())
            .collect();
        let _ = writeln!(out, "placement {} {}", y, row.join(","));
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines { inner: text.lines().enumerate() }
    }

    /// Next meaningful line as (1-based line number, first word, rest).
    fn next(&mut self) -> Option<(u32, &'a str, &'a str)> {
        for (i, raw) in self.inner.by_ref() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (word, rest) = match line.split_once(char::is_whitespace) {
                Some((w, r)) => (w, r.trim()),
                None => (line, ""),
            };
            return Some((i as u32 + 1, word, rest));
        }
        None
    }
}

fn parse_kv(field: &str, key: &str, line: u32) -> Result<u16> {
    let val = field
        .strip_prefix(key)
        .and_then(|s| s.strip_prefix('='))
        .ok_or_else(|| Error::parse(line, 1, format!("expected {key}=<n>, found {field:?}")))?;
    val.parse().map_err(|_| Error::parse(line, 1, format!("bad number in {field:?}")))
}

fn split_fields<'a, const N: usize>(rest: &'a str, line: u32, what: &str) -> Result<[&'a str; N]> {
    let fields: Vec<&str> = rest.split_whitespace().collect();
    fields
        .try_into()
        .map_err(|_| Error::parse(line, 1, format!("{what} needs exactly {N} fields")))
}

pub fn parse_fabric(text: &str) -> Result<Fabric> {
    let mut lines = Lines::new(text);
    let mut device_id: Option<String> = None;
    let mut grid: Option<(u16, u16)> = None;
    let mut slice: Option<SliceSpec> = None;
    let mut types: Vec<SmType> = Vec::new();
    let mut placement_rows: Vec<(u32, u16, Vec<u16>)> = Vec::new();

    while let Some((ln, word, rest)) = lines.next() {
        match word {
            "device" => {
                if rest.is_empty() || rest.contains(char::is_whitespace) {
                    return Err(Error::parse(ln, 1, "device takes one identifier"));
                }
                if device_id.replace(rest.to_string()).is_some() {
                    return Err(Error::parse(ln, 1, "duplicate device line"));
                }
            }
            "grid" => {
                let [w, h] = split_fields(rest, ln, "grid")?;
                let w: u16 = w.parse().map_err(|_| Error::parse(ln, 1, "bad grid width"))?;
                let h: u16 = h.parse().map_err(|_| Error::parse(ln, 1, "bad grid height"))?;
                if w == 0 || h == 0 {
                    return Err(Error::parse(ln, 1, "grid must be at least 1x1"));
                }
                if grid.replace((w, h)).is_some() {
                    return Err(Error::parse(ln, 1, "duplicate grid line"));
                }
            }
            "slice" => {
                let [l, a, f] = split_fields(rest, ln, "slice")?;
                let spec = SliceSpec {
                    luts: parse_kv(l, "luts", ln)? as u8,
                    arity: parse_kv(a, "arity", ln)? as u8,
                    ffs: parse_kv(f, "ffs", ln)? as u8,
                };
                if spec.arity == 0 || spec.arity > 6 {
                    return Err(Error::parse(ln, 1, "slice arity must be between 1 and 6"));
                }
                if slice.replace(spec).is_some() {
                    return Err(Error::parse(ln, 1, "duplicate slice line"));
                }
            }
            "type" => {
                let [s, src] = split_fields(rest, ln, "type")?;
                types.push(SmType {
                    sink_count: parse_kv(s, "sinks", ln)?,
                    source_count: parse_kv(src, "sources", ln)?,
                    pips: Vec::new(),
                });
            }
            "pip" => {
                let ty = types
                    .last_mut()
                    .ok_or_else(|| Error::parse(ln, 1, "pip before any type line"))?;
                let fields: Vec<&str> = rest.split_whitespace().collect();
                let (wires, is_default) = match fields.as_slice() {
                    [a, "->", b] => ([*a, *b], false),
                    [a, "->", b, "default"] => ([*a, *b], true),
                    _ => return Err(Error::parse(ln, 1, "pip must be '<src> -> <sink> [default]'")),
                };
                let src = parse_src_wire(wires[0])
                    .ok_or_else(|| Error::parse(ln, 1, format!("bad source wire {:?}", wires[0])))?;
                let sink = parse_sink_wire(wires[1])
                    .ok_or_else(|| Error::parse(ln, 1, format!("bad sink wire {:?}", wires[1])))?;
                if src >= ty.source_count || sink >= ty.sink_count {
                    return Err(Error::parse(ln, 1, "pip wire index outside type's wire counts"));
                }
                if ty.pips.iter().any(|p| p.src == src && p.sink == sink) {
                    return Err(Error::parse(ln, 1, "duplicate pip in type"));
                }
                ty.pips.push(PipDef { src, sink, is_default });
            }
            "placement" => {
                let (y_s, ids_s) = rest
                    .split_once(char::is_whitespace)
                    .ok_or_else(|| Error::parse(ln, 1, "placement needs '<row> <ids,...>'"))?;
                let y: u16 = y_s.parse().map_err(|_| Error::parse(ln, 1, "bad placement row"))?;
                let ids: Vec<u16> = ids_s
                    .trim()
                    .split(',')
                    .map(|t| t.trim().parse::<u16>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::parse(ln, 1, "bad type id in placement row"))?;
                placement_rows.push((ln, y, ids));
            }
            other => {
                return Err(Error::parse(ln, 1, format!("unknown directive {other:?}")));
            }
        }
    }

    let device_id = device_id.ok_or_else(|| Error::parse(1, 1, "missing device line"))?;
    let (width, height) = grid.ok_or_else(|| Error::parse(1, 1, "missing grid line"))?;
    let slice = slice.ok_or_else(|| Error::parse(1, 1, "missing slice line"))?;
    if types.is_empty() {
        return Err(Error::parse(1, 1, "no switch-matrix types declared"));
    }

    let mut placement = vec![u16::MAX; width as usize * height as usize];
    for (ln, y, ids) in placement_rows {
        if y >= height {
            return Err(Error::parse(ln, 1, format!("placement row {y} outside grid")));
        }
        if ids.len() != width as usize {
            return Err(Error::parse(ln, 1, format!("placement row {y} needs {width} entries")));
        }
        for (x, &id) in ids.iter().enumerate() {
            if id as usize >= types.len() {
                return Err(Error::parse(ln, 1, format!("placement names unknown type {id}")));
            }
            let cell = &mut placement[y as usize * width as usize + x];
            if *cell != u16::MAX {
                return Err(Error::parse(ln, 1, format!("placement row {y} given twice")));
            }
            *cell = id;
        }
    }
    if placement.contains(&u16::MAX) {
        return Err(Error::parse(1, 1, "placement does not cover the grid"));
    }

    Ok(Fabric { device_id, width, height, slice, types, placement })
}

pub fn write_spec(spec: &FabricSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "seed {}", spec.seed);
    let _ = writeln!(out, "grid {} {}", spec.width, spec.height);
    let _ = writeln!(
        out,
        "slice luts={} arity={} ffs={}",
        spec.slice.luts, spec.slice.arity, spec.slice.ffs
    );
    let _ = writeln!(out, "default_fraction {}", spec.default_fraction);
    for t in &spec.types {
        let _ = writeln!(out, "type pips={} sinks={} budget={}", t.pip_count, t.sink_count, t.bit_budget);
    }
    out
}

pub fn parse_spec(text: &str) -> Result<FabricSpec> {
    let mut lines = Lines::new(text);
    let mut seed: Option<u64> = None;
    let mut grid: Option<(u16, u16)> = None;
    let mut slice: Option<SliceSpec> = None;
    let mut fraction: Option<f64> = None;
    let mut types: Vec<SmTypeSpec> = Vec::new();

    while let Some((ln, word, rest)) = lines.next() {
        match word {
            "seed" => {
                let v: u64 = rest.parse().map_err(|_| Error::parse(ln, 1, "bad seed"))?;
                if seed.replace(v).is_some() {
                    return Err(Error::parse(ln, 1, "duplicate seed line"));
                }
            }
            "grid" => {
                let [w, h] = split_fields(rest, ln, "grid")?;
                let w: u16 = w.parse().map_err(|_| Error::parse(ln, 1, "bad grid width"))?;
                let h: u16 = h.parse().map_err(|_| Error::parse(ln, 1, "bad grid height"))?;
                if grid.replace((w, h)).is_some() {
                    return Err(Error::parse(ln, 1, "duplicate grid line"));
                }
            }
            "slice" => {
                let [l, a, f] = split_fields(rest, ln, "slice")?;
                let spec = SliceSpec {
                    luts: parse_kv(l, "luts", ln)? as u8,
                    arity: parse_kv(a, "arity", ln)? as u8,
                    ffs: parse_kv(f, "ffs", ln)? as u8,
                };
                if slice.replace(spec).is_some() {
                    return Err(Error::parse(ln, 1, "duplicate slice line"));
                }
            }
            "default_fraction" => {
                let v: f64 = rest.parse().map_err(|_| Error::parse(ln, 1, "bad default_fraction"))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::parse(ln, 1, "default_fraction must be in [0, 1]"));
                }
                if fraction.replace(v).is_some() {
                    return Err(Error::parse(ln, 1, "duplicate default_fraction line"));
                }
            }
            "type" => {
                let [p, s, b] = split_fields(rest, ln, "type")?;
                let pips = p
                    .strip_prefix("pips=")
                    .and_then(|v| v.parse::<u32>().ok())
                    .ok_or_else(|| Error::parse(ln, 1, "expected pips=<n>"))?;
                types.push(SmTypeSpec {
                    pip_count: pips,
                    sink_count: parse_kv(s, "sinks", ln)?,
                    bit_budget: parse_kv(b, "budget", ln)?,
                });
            }
            other => {
                return Err(Error::parse(ln, 1, format!("unknown directive {other:?}")));
            }
        }
    }

    Ok(FabricSpec {
        seed: seed.ok_or_else(|| Error::parse(1, 1, "missing seed line"))?,
        width: grid.map(|g| g.0).ok_or_else(|| Error::parse(1, 1, "missing grid line"))?,
        height: grid.map(|g| g.1).unwrap(),
        types: if types.is_empty() {
            return Err(Error::parse(1, 1, "no type lines"));
        } else {
            types
        },
        slice: slice.ok_or_else(|| Error::parse(1, 1, "missing slice line"))?,
        default_fraction: fraction.ok_or_else(|| Error::parse(1, 1, "missing default_fraction"))?,
    })
}

pub fn save_fabric(fabric: &Fabric, path: &Path) -> Result<()> {
    std::fs::write(path, write_fabric(fabric)).map_err(|e| Error::io(path, e))
}

pub fn load_fabric(path: &Path) -> Result<Fabric> {
    parse_fabric(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_spec(spec: &FabricSpec, path: &Path) -> Result<()> {
    std::fs::write(path, write_spec(spec)).map_err(|e| Error::io(path, e))
}

pub fn load_spec(path: &Path) -> Result<FabricSpec> {
    parse_spec(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

//! Text form of [`crate::netlist::Netlist`].
//!
//! ```text
//! design "blinker" mock16 v1.0;
//! inst "a" "SLICE", placed CLB_X0Y0 SLICE0, cfg "LUT0:aaaa", cfg "FF0:used";
//! inst "q" "IOB", placed CLB_X1Y0 IOB0;
//! net "n_1", outpin "a" F0Q, inpin "q" O, pip INT_X0Y0 W5 -> S2;
//! ```
//!
//! Statements end at ';' and may span lines. '#' starts a comment that runs
//! to end of line. Bare tokens use [A-Za-z0-9_.-]; quoted strings carry no
//! escapes. Configuration items are quoted strings: LUT<i>:<hex> (hex width
//! fixes the table size), FF<i>:used or FF<i>:used:init1, MODEL:<name>.

use crate::error::{Error, Result};
use crate::netlist::{FfConfig, Instance, Net, Netlist, PinRef, PipRef, SiteKind, TruthTable};

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Str(String),
    Ident(String),
    Comma,
    Semi,
    Arrow,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Str(s) => format!("string {s:?}"),
            Tok::Ident(s) => format!("token {s:?}"),
            Tok::Comma => "','".into(),
            Tok::Semi => "';'".into(),
            Tok::Arrow => "'->'".into(),
        }
    }
}

struct Lexed {
    tok: Tok,
    line: u32,
    col: u32,
}

fn is_bare(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'.' || b == b'-'
}

fn lex(text: &str) -> Result<Vec<Lexed>> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0usize;
    let mut line = 1u32;
    let mut col = 1u32;
    while i < bytes.len() {
        let b = bytes[i];
        let (tl, tc) = (line, col);
        let advance = |n: usize, i: &mut usize, col: &mut u32| {
            *i += n;
            *col += n as u32;
        };
        match b {
            b'\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            b' ' | b'\t' | b'\r' => advance(1, &mut i, &mut col),
            b'#' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b',' => {
                out.push(Lexed { tok: Tok::Comma, line: tl, col: tc });
                advance(1, &mut i, &mut col);
            }
            b';' => {
                out.push(Lexed { tok: Tok::Semi, line: tl, col: tc });
                advance(1, &mut i, &mut col);
            }
            b'-' if i + 1 < bytes.len() && bytes[i + 1] == b'>' => {
                out.push(Lexed { tok: Tok::Arrow, line: tl, col: tc });
                advance(2, &mut i, &mut col);
            }
            b'"' => {
                let start = i + 1;
                let mut j = start;
                while j < bytes.len() && bytes[j] != b'"' && bytes[j] != b'\n' {
                    j += 1;
                }
                if j >= bytes.len() || bytes[j] != b'"' {
                    return Err(Error::parse(tl, tc, "unterminated string"));
                }
                let s = std::str::from_utf8(&bytes[start..j])
                    .map_err(|_| Error::parse(tl, tc, "string is not utf-8"))?;
                out.push(Lexed { tok: Tok::Str(s.to_string()), line: tl, col: tc });
                advance(j + 1 - i, &mut i, &mut col);
            }
            _ if is_bare(b) => {
                let start = i;
                let mut j = i;
                while j < bytes.len() && is_bare(bytes[j]) {
                    // '->' wins over a bare '-', so "W1->S2" splits correctly
                    if bytes[j] == b'-' && j + 1 < bytes.len() && bytes[j + 1] == b'>' {
                        break;
                    }
                    j += 1;
                }
                let s = std::str::from_utf8(&bytes[start..j]).unwrap().to_string();
                out.push(Lexed { tok: Tok::Ident(s), line: tl, col: tc });
                advance(j - i, &mut i, &mut col);
            }
            _ => {
                return Err(Error::parse(tl, tc, format!("unexpected character {:?}", b as char)));
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Lexed>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Lexed> {
        self.toks.get(self.pos)
    }

    fn err_here(&self, msg: impl Into<String>) -> Error {
        match self.toks.get(self.pos.min(self.toks.len().saturating_sub(1))) {
            Some(t) if self.pos < self.toks.len() => Error::parse(t.line, t.col, msg),
            Some(t) => Error::parse(t.line, t.col + 1, msg),
            None => Error::parse(1, 1, msg),
        }
    }

    fn next(&mut self, what: &str) -> Result<&Lexed> {
        if self.pos >= self.toks.len() {
            return Err(self.err_here(format!("expected {what}, found end of input")));
        }
        self.pos += 1;
        Ok(&self.toks[self.pos - 1])
    }

    fn expect_str(&mut self, what: &str) -> Result<String> {
        let t = self.next(what)?;
        match &t.tok {
            Tok::Str(s) => Ok(s.clone()),
            other => {
                let (line, col, d) = (t.line, t.col, other.describe());
                Err(Error::parse(line, col, format!("expected {what}, found {d}")))
            }
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<String> {
        let t = self.next(what)?;
        match &t.tok {
            Tok::Ident(s) => Ok(s.clone()),
            other => {
                let (line, col, d) = (t.line, t.col, other.describe());
                Err(Error::parse(line, col, format!("expected {what}, found {d}")))
            }
        }
    }

    fn expect_tok(&mut self, tok: Tok, what: &str) -> Result<()> {
        let t = self.next(what)?;
        if t.tok == tok {
            Ok(())
        } else {
            let (line, col, d) = (t.line, t.col, t.tok.describe());
            Err(Error::parse(line, col, format!("expected {what}, found {d}")))
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<()> {
        let t = self.next(&format!("keyword {kw:?}"))?;
        match &t.tok {
            Tok::Ident(s) if s == kw => Ok(()),
            other => {
                let (line, col, d) = (t.line, t.col, other.describe());
                Err(Error::parse(line, col, format!("expected keyword {kw:?}, found {d}")))
            }
        }
    }

    fn at_semi(&self) -> bool {
        matches!(self.peek(), Some(Lexed { tok: Tok::Semi, .. }))
    }
}

fn parse_cfg_item(inst: &mut Instance, item: &str, line: u32, col: u32) -> Result<()> {
    let parts: Vec<&str> = item.split(':').collect();
    let fail = |msg: String| Err(Error::parse(line, col, msg));
    match parts.as_slice() {
        [lut, hex] if lut.starts_with("LUT") => {
            let idx: u8 = match lut[3..].parse() {
                Ok(v) => v,
                Err(_) => return fail(format!("bad LUT index in cfg item {item:?}")),
            };
            let table = match TruthTable::from_hex(hex) {
                Some(t) => t,
                None => return fail(format!("bad LUT table hex in cfg item {item:?}")),
            };
            if inst.luts.insert(idx, table).is_some() {
                return fail(format!("LUT{idx} configured twice"));
            }
            Ok(())
        }
        [ff, rest @ ..] if ff.starts_with("FF") && !rest.is_empty() => {
            let idx: u8 = match ff[2..].parse() {
                Ok(v) => v,
                Err(_) => return fail(format!("bad FF index in cfg item {item:?}")),
            };
            let cfg = match rest {
                ["used"] => FfConfig { used: true, init: false },
                ["used", "init1"] => FfConfig { used: true, init: true },
                _ => return fail(format!("bad FF cfg item {item:?}")),
            };
            if inst.ffs.insert(idx, cfg).is_some() {
                return fail(format!("FF{idx} configured twice"));
            }
            Ok(())
        }
        ["MODEL", name] if !name.is_empty() => {
            if inst.model.replace(name.to_string()).is_some() {
                return fail("MODEL configured twice".into());
            }
            Ok(())
        }
        _ => fail(format!("unrecognized cfg item {item:?}")),
    }
}

pub fn parse(text: &str) -> Result<Netlist> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let mut nl = Netlist::default();
    let mut saw_design = false;

    while let Some(t) = p.peek() {
        let (line, col) = (t.line, t.col);
        let kw = match &t.tok {
            Tok::Ident(s) => s.clone(),
            other => {
                let d = other.describe();
                return Err(Error::parse(line, col, format!("expected a statement, found {d}")));
            }
        };
        p.pos += 1;
        match kw.as_str() {
            "design" => {
                if saw_design {
                    return Err(Error::parse(line, col, "duplicate design statement"));
                }
                saw_design = true;
                nl.design = p.expect_str("design name")?;
                nl.device = p.expect_ident("device name")?;
                if !p.at_semi() {
                    // optional trailing tool-version tag, ignored
                    p.expect_ident("version tag")?;
                }
                p.expect_tok(Tok::Semi, "';'")?;
            }
            "inst" => {
                let name = p.expect_str("instance name")?;
                let kind_s = p.expect_str("instance kind")?;
                let kind = SiteKind::from_str(&kind_s).ok_or_else(|| {
                    Error::parse(line, col, format!("unknown instance kind {kind_s:?}"))
                })?;
                p.expect_tok(Tok::Comma, "','")?;
                p.expect_keyword("placed")?;
                let tile = p.expect_ident("tile name")?;
                let site = p.expect_ident("site name")?;
                let mut inst = Instance::new(&name, kind, &tile, &site);
                while !p.at_semi() {
                    p.expect_tok(Tok::Comma, "',' or ';'")?;
                    let kw_tok = p.peek().map(|t| (t.line, t.col));
                    p.expect_keyword("cfg")?;
                    let (il, ic) = kw_tok.unwrap_or((line, col));
                    let item = p.expect_str("cfg item")?;
                    parse_cfg_item(&mut inst, &item, il, ic)?;
                }
                p.expect_tok(Tok::Semi, "';'")?;
                nl.instances.push(inst);
            }
            "net" => {
                let name = p.expect_str("net name")?;
                let mut net = Net::new(&name);
                while !p.at_semi() {
                    p.expect_tok(Tok::Comma, "',' or ';'")?;
                    let t = p.next("net clause")?;
                    let (cl, cc) = (t.line, t.col);
                    let clause = match &t.tok {
                        Tok::Ident(s) => s.clone(),
                        other => {
                            let d = other.describe();
                            return Err(Error::parse(cl, cc, format!("expected net clause, found {d}")));
                        }
                    };
                    match clause.as_str() {
                        "outpin" => {
                            let inst = p.expect_str("instance name")?;
                            let pin = p.expect_ident("pin name")?;
                            if net.outpin.replace(PinRef { inst, pin }).is_some() {
                                return Err(Error::parse(cl, cc, format!("net {name:?} has two outpins")));
                            }
                        }
                        "inpin" => {
                            let inst = p.expect_str("instance name")?;
                            let pin = p.expect_ident("pin name")?;
                            net.inpins.push(PinRef { inst, pin });
                        }
                        "pip" => {
                            let tile = p.expect_ident("tile name")?;
                            let src = p.expect_ident("source wire")?;
                            p.expect_tok(Tok::Arrow, "'->'")?;
                            let sink = p.expect_ident("sink wire")?;
                            net.pips.push(PipRef { tile, src, sink });
                        }
                        other => {
                            return Err(Error::parse(cl, cc, format!("unknown net clause {other:?}")));
                        }
                    }
                }
                p.expect_tok(Tok::Semi, "';'")?;
                nl.nets.push(net);
            }
            other => {
                return Err(Error::parse(line, col, format!("unknown statement {other:?}")));
            }
        }
    }
    if !saw_design {
        return Err(Error::parse(1, 1, "netlist has no design statement"));
    }
    Ok(nl)
}

fn write_instance(out: &mut String, inst: &Instance) {
    out.push_str(&format!(
        "inst \"{}\" \"{}\", placed {} {}",
        inst.name,
        inst.kind.as_str(),
        inst.tile,
        inst.site
    ));
    for (idx, table) in &inst.luts {
        out.push_str(&format!(", cfg \"LUT{}:{}\"", idx, table.to_hex()));
    }
    for (idx, cfg) in &inst.ffs {
        if cfg.used {
            let init = if cfg.init { ":init1" } else { "" };
            out.push_str(&format!(", cfg \"FF{idx}:used{init}\""));
        }
    }
    if let Some(model) = &inst.model {
        out.push_str(&format!(", cfg \"MODEL:{model}\""));
    }
    out.push_str(";\n");
}

fn write_net(out: &mut String, net: &Net) {
    out.push_str(&format!("net \"{}\"", net.name));
    if let Some(pin) = &net.outpin {
        out.push_str(&format!(", outpin \"{}\" {}", pin.inst, pin.pin));
    }
    for pin in &net.inpins {
        out.push_str(&format!(", inpin \"{}\" {}", pin.inst, pin.pin));
    }
    for pip in &net.pips {
        out.push_str(&format!(", pip {} {} -> {}", pip.tile, pip.src, pip.sink));
    }
    out.push_str(";\n");
}

/// Canonical text: design line, instances sorted by name, then nets sorted by
/// name. `parse(write(nl))` equals the canonicalized `nl`.
pub fn write(netlist: &Netlist) -> String {
    let mut nl = netlist.clone();
    nl.canonicalize();
    let mut out = String::new();
    out.push_str(&format!("design \"{}\" {};\n", nl.design, nl.device));
    for inst in &nl.instances {
        write_instance(&mut out, inst);
    }
    for net in &nl.nets {
        write_net(&mut out, net);
    }
    out
}

pub fn save(netlist: &Netlist, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, write(netlist)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &std::path::Path) -> Result<Netlist> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text)
}

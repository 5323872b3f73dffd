//! Command-line front end. `run` is the real entry point so tests can drive
//! the CLI in-process; `src/main.rs` only forwards to it.
//!
//! Exit codes: 0 success, 1 domain failure (bad input data, failed
//! verification), 2 usage error (unknown flags or subcommands; the synopsis
//! goes to standard error). Every informational line carries a `[stage]`
//! prefix; verdict lines start with `PASS ` or `FAIL `. Identical flags and
//! inputs produce byte-identical outputs: the only randomness is seeded by
//! `--seed`, and worker counts never change results.

use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{ArgGroup, Args, Parser, Subcommand};

use crate::bitstream;
use crate::converter;
use crate::database;
use crate::error::{Error, Result};
use crate::fabric::{
    generate_fabric, sm_tile_name, src_wire_name, sink_wire_name, Coord, Fabric, FabricSpec,
    SliceSpec, SmTypeSpec, IOB_SITE, SLICE_SITE,
};
use crate::fabric_text;
use crate::manipulator;
use crate::netlist::{
    FfConfig, Instance, Net, Netlist, PinRef, SiteKind, TruthTable, IOB_PIN_IN, IOB_PIN_OUT,
};
use crate::netlist_text;
use crate::re_pipeline;
use crate::router;
use crate::sim::ModelRegistry;
use crate::toolchain::{MockToolchain, VendorFlow};
use crate::trojan;

#[derive(Parser)]
#[command(
    name = "unbit",
    version,
    about = "Black-box FPGA bitstream reverse-engineering workbench",
    subcommand_required = true
)]
struct Cli {
    #[command(flatten)]
    globals: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Worker threads for parallel stages (default: $UNBIT_JOBS, then 1)
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Seed for every random choice this run makes (default 0)
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Extra stage-tagged progress lines on standard error
    #[arg(long, global = true)]
    verbose: bool,

    /// key=value defaults for jobs/seed/verbose; explicit flags win
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
}

/// Global knobs after merging config file, environment, and flags.
struct Settings {
    jobs: usize,
    seed: u64,
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a device family or describe an existing fabric
    Fabric {
        #[command(subcommand)]
        cmd: FabricCmd,
    },
    /// Encode a netlist into a bitstream with the vendor flow
    Bitgen(BitgenArgs),
    /// Recover a bitstream encoding database by differential probing
    Reverse(ReverseArgs),
    /// Decode a bitstream back into a netlist using a recovered database
    Convert(ConvertArgs),
    /// Surgical PIP/LUT edits on raw bitstreams
    Manip {
        #[command(subcommand)]
        cmd: ManipCmd,
    },
    /// Key-recovery case study: build, detect, correlate, inject, verify
    Trojan {
        #[command(subcommand)]
        cmd: TrojanCmd,
    },
    /// Run the built-in round-trip suite on a tiny device
    Selfcheck,
}

#[derive(Subcommand)]
enum FabricCmd {
    /// Generate a device from a family spec (or the built-in desk spec)
    Gen(FabricGenArgs),
    /// Summarize a fabric file, or one tile of it
    Report(FabricReportArgs),
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["spec", "desk"])))]
struct FabricGenArgs {
    /// Family spec file: seed, grid, slice geometry, per-type budgets
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,

    /// Use the built-in 16x16 two-type device, seeded by --seed
    #[arg(long)]
    desk: bool,

    /// Where to write the public fabric description
    #[arg(long, value_name = "FILE")]
    fabric_out: PathBuf,

    /// Also write the family spec in canonical form
    #[arg(long, value_name = "FILE")]
    spec_out: Option<PathBuf>,
}

#[derive(Args)]
struct FabricReportArgs {
    /// Fabric description file
    #[arg(long, value_name = "FILE")]
    fabric: PathBuf,

    /// Describe one tile, as X,Y
    #[arg(long, value_name = "X,Y", value_parser = parse_coord)]
    tile: Option<Coord>,
}

#[derive(Args)]
struct BitgenArgs {
    /// Family spec file; regenerates the device and its private encoding
    #[arg(long, value_name = "FILE")]
    spec: PathBuf,

    /// Input netlist
    #[arg(long, value_name = "FILE")]
    input: PathBuf,

    /// Output bitstream
    #[arg(long, value_name = "FILE")]
    output: PathBuf,

    /// Skip routing validation (probe designs)
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ReverseArgs {
    /// Family spec file for the vendor flow under test
    #[arg(long, value_name = "FILE")]
    spec: PathBuf,

    /// Where to write the recovered encoding database
    #[arg(long, value_name = "FILE")]
    output: PathBuf,
}

#[derive(Args)]
struct ConvertArgs {
    /// Recovered encoding database
    #[arg(long, value_name = "FILE")]
    db: PathBuf,

    /// Reference bitstream of the empty design
    #[arg(long, value_name = "FILE")]
    reference: PathBuf,

    /// Bitstream to decode
    #[arg(long, value_name = "FILE")]
    input: PathBuf,

    /// Where to write the recovered netlist
    #[arg(long, value_name = "FILE")]
    output: PathBuf,

    /// Design name for the recovered netlist
    #[arg(long, default_value = "recovered")]
    name: String,
}

#[derive(Subcommand)]
enum ManipCmd {
    /// Turn a routing PIP on
    SetPip(ManipPipArgs),
    /// Turn a routing PIP off
    UnsetPip(ManipPipArgs),
    /// Replace a LUT truth table
    RewriteLut(ManipLutArgs),
}

#[derive(Args)]
struct ManipPipArgs {
    #[arg(long, value_name = "FILE")]
    db: PathBuf,

    /// Input bitstream
    #[arg(long, value_name = "FILE")]
    input: PathBuf,

    /// Output bitstream
    #[arg(long, value_name = "FILE")]
    output: PathBuf,

    /// PIP coordinates, e.g. INT_X3Y4:W12->S5
    #[arg(value_name = "TILE:SRC->SINK", value_parser = parse_pip_coord)]
    pip: PipCoord,
}

#[derive(Args)]
struct ManipLutArgs {
    #[arg(long, value_name = "FILE")]
    db: PathBuf,

    /// Input bitstream
    #[arg(long, value_name = "FILE")]
    input: PathBuf,

    /// Output bitstream
    #[arg(long, value_name = "FILE")]
    output: PathBuf,

    /// LUT coordinates, e.g. CLB_X1Y1:SLICE0:LUT2:affe
    #[arg(value_name = "TILE:SLICE:LUTn:HEX", value_parser = parse_lut_coord)]
    lut: LutCoord,
}

#[derive(Subcommand)]
enum TrojanCmd {
    /// Build the clean AES victim with byte-serial key loading
    BuildTarget(TrojanBuildArgs),
    /// Find flip-flop shift-register chains in a netlist
    Detect(TrojanDetectArgs),
    /// Learn which chain feeds which key bit lane, by experiment
    Correlate(TrojanCorrelateArgs),
    /// Detach the key chains and force the stored key
    Inject(TrojanInjectArgs),
    /// Exercise the design as a user and report hijack evidence
    Verify(TrojanVerifyArgs),
}

#[derive(Args)]
struct TrojanBuildArgs {
    /// Fabric description file (16x16 or larger)
    #[arg(long, value_name = "FILE")]
    fabric: PathBuf,

    /// Stored key k_st, 32 hex digits; fixes the printed self-test vector
    #[arg(long, value_name = "HEX32", value_parser = parse_hex16)]
    key: [u8; 16],

    /// Self-test reference plaintext, 32 hex digits
    #[arg(long, value_name = "HEX32", value_parser = parse_hex16)]
    pref: [u8; 16],

    /// Where to write the victim netlist
    #[arg(long, value_name = "FILE")]
    output: PathBuf,
}

#[derive(Args)]
struct TrojanDetectArgs {
    /// Netlist to scan
    #[arg(long, value_name = "FILE")]
    input: PathBuf,

    /// Minimum chain length to report
    #[arg(long, default_value_t = trojan::MIN_CHAIN_LEN, value_name = "N")]
    min_len: usize,
}

#[derive(Args)]
struct TrojanCorrelateArgs {
    /// Netlist to probe (left intact)
    #[arg(long, value_name = "FILE")]
    input: PathBuf,

    /// Probe plaintext, 32 hex digits
    #[arg(long, value_name = "HEX32", value_parser = parse_hex16,
          default_value = "000102030405060708090a0b0c0d0e0f")]
    pref: [u8; 16],

    /// Minimum chain length for detection
    #[arg(long, default_value_t = trojan::MIN_CHAIN_LEN, value_name = "N")]
    min_len: usize,

    /// Cipher macro instance (default: the unique black box)
    #[arg(long, value_name = "NAME")]
    core: Option<String>,
}

#[derive(Args)]
struct TrojanInjectArgs {
    /// Fabric description file, for payload placement
    #[arg(long, value_name = "FILE")]
    fabric: PathBuf,

    /// Victim netlist
    #[arg(long, value_name = "FILE")]
    input: PathBuf,

    /// Key to force, 32 hex digits
    #[arg(long, value_name = "HEX32", value_parser = parse_hex16)]
    kst: [u8; 16],

    /// Self-test plaintext, 32 hex digits
    #[arg(long, value_name = "HEX32", value_parser = parse_hex16,
          default_value = "000102030405060708090a0b0c0d0e0f")]
    pref: [u8; 16],

    /// Where to write the compromised netlist
    #[arg(long, value_name = "FILE")]
    output: PathBuf,

    /// Minimum chain length for detection
    #[arg(long, default_value_t = trojan::MIN_CHAIN_LEN, value_name = "N")]
    min_len: usize,
}

#[derive(Args)]
struct TrojanVerifyArgs {
    /// Netlist to exercise
    #[arg(long, value_name = "FILE")]
    input: PathBuf,

    /// Expected forced key, 32 hex digits
    #[arg(long, value_name = "HEX32", value_parser = parse_hex16)]
    kst: [u8; 16],

    /// Self-test plaintext, 32 hex digits
    #[arg(long, value_name = "HEX32", value_parser = parse_hex16,
          default_value = "000102030405060708090a0b0c0d0e0f")]
    pref: [u8; 16],

    /// Random user-key trials
    #[arg(long, default_value_t = 20, value_name = "N")]
    trials: usize,

    /// Key pads in bit order, comma separated (default key_pad_0..7)
    #[arg(long, value_delimiter = ',', value_name = "NAMES")]
    pads: Option<Vec<String>>,

    /// Cipher macro instance (default: the unique black box)
    #[arg(long, value_name = "NAME")]
    core: Option<String>,
}

/// Runs the CLI on `args` (program name excluded, as from
/// `std::env::args().skip(1)`) and returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> =
        std::iter::once("unbit".to_string()).chain(args.into_iter().map(Into::into)).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let settings = match resolve_settings(&cli.globals) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    // Trial parallelism uses the global pool; first caller in this process
    // wins, which is fine because results never depend on thread count.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(settings.jobs).build_global();
    match dispatch(cli.command, &settings) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn resolve_settings(g: &GlobalArgs) -> Result<Settings> {
    let mut jobs: Option<usize> = None;
    let mut seed: Option<u64> = None;
    let mut verbose: Option<bool> = None;
    if let Some(path) = &g.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| {
                Error::Format(format!("{}: line {}: {what}", path.display(), n + 1))
            };
            let (key, value) = line.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            match key.trim() {
                "jobs" => jobs = Some(value.trim().parse().map_err(|_| bad("bad jobs value"))?),
                "seed" => seed = Some(value.trim().parse().map_err(|_| bad("bad seed value"))?),
                "verbose" => {
                    verbose = Some(value.trim().parse().map_err(|_| bad("bad verbose value"))?)
                }
                other => return Err(bad(&format!("unknown key {other:?}"))),
            }
        }
    }
    if let Some(j) = g.jobs {
        jobs = Some(j);
    }
    if let Some(s) = g.seed {
        seed = Some(s);
    }
    if g.verbose {
        verbose = Some(true);
    }
    let jobs = match jobs {
        Some(j) => j,
        None => match std::env::var("UNBIT_JOBS") {
            Ok(v) => v
                .parse()
                .map_err(|_| Error::Format(format!("UNBIT_JOBS={v:?} is not a thread count")))?,
            Err(_) => 1,
        },
    };
    if jobs == 0 {
        return Err(Error::Format("jobs must be at least 1".into()));
    }
    Ok(Settings { jobs, seed: seed.unwrap_or(0), verbose: verbose.unwrap_or(false) })
}

fn dispatch(cmd: Command, settings: &Settings) -> Result<i32> {
    match cmd {
        Command::Fabric { cmd: FabricCmd::Gen(a) } => cmd_fabric_gen(a, settings),
        Command::Fabric { cmd: FabricCmd::Report(a) } => cmd_fabric_report(a),
        Command::Bitgen(a) => cmd_bitgen(a),
        Command::Reverse(a) => cmd_reverse(a, settings),
        Command::Convert(a) => cmd_convert(a, settings),
        Command::Manip { cmd } => cmd_manip(cmd),
        Command::Trojan { cmd } => cmd_trojan(cmd, settings),
        Command::Selfcheck => match cmd_selfcheck(settings) {
            Ok(()) => {
                println!("PASS selfcheck: all stages ok");
                Ok(0)
            }
            Err(e) => {
                println!("FAIL selfcheck: {e}");
                Ok(1)
            }
        },
    }
}

fn parse_coord(s: &str) -> std::result::Result<Coord, String> {
    let err = || format!("expected X,Y, got {s:?}");
    let (x, y) = s.split_once(',').ok_or_else(err)?;
    Ok(Coord::new(x.trim().parse().map_err(|_| err())?, y.trim().parse().map_err(|_| err())?))
}

#[derive(Clone, Debug)]
struct PipCoord {
    tile: String,
    src: String,
    sink: String,
}

fn parse_pip_coord(s: &str) -> std::result::Result<PipCoord, String> {
    let err = || format!("expected TILE:SRC->SINK, got {s:?}");
    let (tile, arc) = s.split_once(':').ok_or_else(err)?;
    let (src, sink) = arc.split_once("->").ok_or_else(err)?;
    let (tile, src, sink) = (tile.trim(), src.trim(), sink.trim());
    if tile.is_empty() || src.is_empty() || sink.is_empty() {
        return Err(err());
    }
    Ok(PipCoord { tile: tile.into(), src: src.into(), sink: sink.into() })
}

#[derive(Clone, Debug)]
struct LutCoord {
    tile: String,
    site: String,
    lut: u8,
    table: TruthTable,
}

fn parse_lut_coord(s: &str) -> std::result::Result<LutCoord, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 4 {
        return Err(format!("expected TILE:SLICE:LUTn:HEX, got {s:?}"));
    }
    let lut = parts[2]
        .strip_prefix("LUT")
        .and_then(|n| n.parse::<u8>().ok())
        .ok_or_else(|| format!("bad LUT selector {:?}, expected LUT<n>", parts[2]))?;
    let table = TruthTable::from_hex(parts[3])
        .ok_or_else(|| format!("bad truth table hex {:?}", parts[3]))?;
    Ok(LutCoord { tile: parts[0].into(), site: parts[1].into(), lut, table })
}

fn parse_hex16(s: &str) -> std::result::Result<[u8; 16], String> {
    let s = s.trim();
    if s.len() != 32 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(format!("expected 32 hex digits, got {s:?}"));
    }
    let mut out = [0u8; 16];
    for (i, byte) in out.iter_mut().enumerate() {
        *byte = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).unwrap();
    }
    Ok(out)
}

fn hex16(b: &[u8; 16]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

fn load_toolchain(spec_path: &std::path::Path) -> Result<MockToolchain> {
    let spec = fabric_text::load_spec(spec_path)?;
    let (fabric, encoding) = generate_fabric(&spec)?;
    Ok(MockToolchain::new(fabric, encoding))
}

fn cmd_fabric_gen(a: FabricGenArgs, settings: &Settings) -> Result<i32> {
    let spec = match &a.spec {
        Some(path) => fabric_text::load_spec(path)?,
        None => FabricSpec::desk(settings.seed),
    };
    let (fabric, _encoding) = generate_fabric(&spec)?;
    println!(
        "[fabric] device {}: {}x{} grid, {} switch-matrix types",
        fabric.device_id,
        fabric.width,
        fabric.height,
        fabric.types.len()
    );
    for (t, ty) in fabric.types.iter().enumerate() {
        let defaults = ty.pips.iter().filter(|p| p.is_default).count();
        println!(
            "[fabric] type {t}: {} PIPs ({defaults} default), {} sinks x {} sources",
            ty.pips.len(),
            ty.sink_count,
            ty.source_count
        );
    }
    fabric_text::save_fabric(&fabric, &a.fabric_out)?;
    println!("[fabric] wrote fabric to {}", a.fabric_out.display());
    if let Some(out) = &a.spec_out {
        fabric_text::save_spec(&spec, out)?;
        println!("[fabric] wrote family spec to {}", out.display());
    }
    Ok(0)
}

fn cmd_fabric_report(a: FabricReportArgs) -> Result<i32> {
    let fabric = fabric_text::load_fabric(&a.fabric)?;
    println!("[fabric] device {}", fabric.device_id);
    println!("[fabric] grid {}x{} ({} tiles)", fabric.width, fabric.height, fabric.tiles());
    println!(
        "[fabric] slice: {} LUTs of arity {}, {} FFs per tile",
        fabric.slice.luts, fabric.slice.arity, fabric.slice.ffs
    );
    let mut counts = vec![0u32; fabric.types.len()];
    for &t in &fabric.placement {
        counts[t as usize] += 1;
    }
    for (t, ty) in fabric.types.iter().enumerate() {
        let defaults = ty.pips.iter().filter(|p| p.is_default).count();
        println!(
            "[fabric] type {t}: {} tiles, {} PIPs ({defaults} default), {} sinks x {} sources",
            counts[t],
            ty.pips.len(),
            ty.sink_count,
            ty.source_count
        );
    }
    if let Some(c) = a.tile {
        if !fabric.in_grid(c) {
            return Err(Error::Validate(format!(
                "tile {},{} is outside the {}x{} grid",
                c.x, c.y, fabric.width, fabric.height
            )));
        }
        for (key, value) in fabric.report(c) {
            println!("[fabric] {key}: {value}");
        }
    }
    Ok(0)
}

fn cmd_bitgen(a: BitgenArgs) -> Result<i32> {
    let tc = load_toolchain(&a.spec)?;
    let netlist = netlist_text::load(&a.input)?;
    let bs = tc.bitgen(&netlist, a.force)?;
    bitstream::save(&bs, &a.output)?;
    println!(
        "[bitgen] {} on {}: {} config bits, {} frame bytes",
        netlist.design,
        bs.device_id,
        bs.len_bits(),
        bs.frames.len()
    );
    println!("[bitgen] wrote {}", a.output.display());
    Ok(0)
}

fn cmd_reverse(a: ReverseArgs, settings: &Settings) -> Result<i32> {
    let tc = load_toolchain(&a.spec)?;
    let fabric = tc.fabric().clone();
    println!(
        "[reverse] device {}: {} tiles, {} types, {} workers",
        fabric.device_id,
        fabric.tiles(),
        fabric.types.len(),
        settings.jobs
    );
    let outcome = re_pipeline::reverse_format(&tc, settings.jobs)?;
    println!(
        "[reverse] routing probes: {} bitgens (analytic budget {})",
        outcome.routing_bitgens,
        re_pipeline::analytic_routing_budget(&fabric)
    );
    println!("[reverse] slice probes: {} bitgens", outcome.slice_bitgens);
    println!("[reverse] total vendor invocations: {}", tc.invocations());
    database::save(&outcome.db, &a.output)?;
    println!("[reverse] wrote {}", a.output.display());
    Ok(0)
}

fn cmd_convert(a: ConvertArgs, settings: &Settings) -> Result<i32> {
    let db = database::load(&a.db)?;
    let reference = bitstream::load(&a.reference)?;
    let input = bitstream::load(&a.input)?;
    let outcome = converter::convert(&db, &reference, &input, &a.name)?;
    for d in &outcome.diagnostics {
        eprintln!("{d}");
    }
    if settings.verbose {
        for d in &outcome.active_defaults {
            eprintln!("[convert] active default {} {}->{}", d.tile, d.src, d.sink);
        }
    }
    println!(
        "[convert] recovered {} instances, {} nets; {} active default routes; {} diagnostics",
        outcome.netlist.instances.len(),
        outcome.netlist.nets.len(),
        outcome.active_defaults.len(),
        outcome.diagnostics.len()
    );
    netlist_text::save(&outcome.netlist, &a.output)?;
    println!("[convert] wrote {}", a.output.display());
    Ok(0)
}

fn cmd_manip(cmd: ManipCmd) -> Result<i32> {
    match cmd {
        ManipCmd::SetPip(a) => {
            let db = database::load(&a.db)?;
            let mut bs = bitstream::load(&a.input)?;
            manipulator::set_pip(&db, &mut bs, &a.pip.tile, &a.pip.src, &a.pip.sink)?;
            bitstream::save(&bs, &a.output)?;
            println!("[manip] set {}:{}->{}", a.pip.tile, a.pip.src, a.pip.sink);
            println!("[manip] wrote {}", a.output.display());
        }
        ManipCmd::UnsetPip(a) => {
            let db = database::load(&a.db)?;
            let mut bs = bitstream::load(&a.input)?;
            manipulator::unset_pip(&db, &mut bs, &a.pip.tile, &a.pip.src, &a.pip.sink)?;
            bitstream::save(&bs, &a.output)?;
            println!("[manip] unset {}:{}->{}", a.pip.tile, a.pip.src, a.pip.sink);
            println!("[manip] wrote {}", a.output.display());
        }
        ManipCmd::RewriteLut(a) => {
            if a.lut.site != SLICE_SITE {
                return Err(Error::Manip(format!(
                    "unknown site {:?}; this family has one {SLICE_SITE} per tile",
                    a.lut.site
                )));
            }
            let db = database::load(&a.db)?;
            let mut bs = bitstream::load(&a.input)?;
            manipulator::rewrite_lut(&db, &mut bs, &a.lut.tile, a.lut.lut, &a.lut.table)?;
            bitstream::save(&bs, &a.output)?;
            println!(
                "[manip] rewrote {}:{}:LUT{} to {}",
                a.lut.tile,
                a.lut.site,
                a.lut.lut,
                a.lut.table.to_hex()
            );
            println!("[manip] wrote {}", a.output.display());
        }
    }
    Ok(0)
}

/// The cipher macro to probe: the named instance, or the netlist's unique
/// black box.
fn core_instance(nl: &Netlist, flag: Option<String>) -> Result<String> {
    if let Some(name) = flag {
        if nl.instance(&name).is_none() {
            return Err(Error::Trojan(format!("no instance named {name:?}")));
        }
        return Ok(name);
    }
    let cores: Vec<&str> = nl
        .instances
        .iter()
        .filter(|i| i.kind == SiteKind::Blackbox)
        .map(|i| i.name.as_str())
        .collect();
    match cores.as_slice() {
        [one] => Ok(one.to_string()),
        [] => Err(Error::Trojan("netlist has no black-box macro; pass --core".into())),
        _ => Err(Error::Trojan(format!("netlist has {} black-box macros; pass --core", cores.len()))),
    }
}

fn print_chains(chains: &[trojan::Chain], verbose: bool) {
    for (i, chain) in chains.iter().enumerate() {
        let luts = chain.iter().filter(|s| s.lut.is_some()).count();
        let taps: usize = chain.iter().map(|s| s.taps.len()).sum();
        let head = &chain[0];
        println!(
            "[trojan] chain {i}: {} stages from {}.F{}, {luts} pass-through LUTs, {taps} taps",
            chain.len(),
            head.inst,
            head.ff
        );
        if verbose {
            for (s, stage) in chain.iter().enumerate() {
                let lut = match &stage.lut {
                    Some((inst, l)) => format!("{inst}.L{l}"),
                    None => "-".to_string(),
                };
                eprintln!("[trojan]   stage {s:2}: {}.F{} lut {lut}", stage.inst, stage.ff);
            }
        }
    }
}

fn cmd_trojan(cmd: TrojanCmd, settings: &Settings) -> Result<i32> {
    match cmd {
        TrojanCmd::BuildTarget(a) => {
            let fabric = fabric_text::load_fabric(&a.fabric)?;
            let (target, spec) = trojan::build_aes_target(&fabric, &a.key, &a.pref)?;
            let reg = ModelRegistry::with_standard_models();
            let ok = trojan::self_test(&target.netlist, &reg, &target.key_pads, &target.core, &spec)?;
            netlist_text::save(&target.netlist, &a.output)?;
            println!(
                "[trojan] wrote {} ({} instances, {} nets)",
                a.output.display(),
                target.netlist.instances.len(),
                target.netlist.nets.len()
            );
            println!("[trojan] key pads (bit 0..7): {}", target.key_pads.join(", "));
            println!("[trojan] cipher macro: {}", target.core);
            println!("[trojan] k_st  = {}", hex16(&spec.k_st));
            println!("[trojan] p_ref = {}", hex16(&spec.p_ref));
            println!("[trojan] c_ref = {}", hex16(&spec.c_ref));
            println!("[trojan] k_u   = {}", hex16(&spec.k_u));
            if ok {
                println!("PASS build-target: device encrypts p_ref to c_ref under k_st");
                Ok(0)
            } else {
                println!("FAIL build-target: self-test vector mismatch");
                Ok(1)
            }
        }
        TrojanCmd::Detect(a) => {
            let nl = netlist_text::load(&a.input)?;
            let chains = trojan::detect_shift_registers(&nl, a.min_len);
            print_chains(&chains, settings.verbose);
            if chains.is_empty() {
                println!("FAIL detect: no shift-register chains of length >= {}", a.min_len);
                Ok(1)
            } else {
                let lens: Vec<usize> = chains.iter().map(|c| c.len()).collect();
                println!("PASS detect: {} chains of lengths {lens:?}", chains.len());
                Ok(0)
            }
        }
        TrojanCmd::Correlate(a) => {
            let nl = netlist_text::load(&a.input)?;
            let reg = ModelRegistry::with_standard_models();
            let chains = trojan::detect_shift_registers(&nl, a.min_len);
            println!("[trojan] detected {} chains", chains.len());
            let core = core_instance(&nl, a.core)?;
            match trojan::correlate_key_bits(&nl, &reg, &chains, &core, &a.pref) {
                Err(e) => {
                    println!("FAIL correlate: {e}");
                    Ok(1)
                }
                Ok(wiring) => {
                    for (c, chain) in chains.iter().enumerate() {
                        let bit = wiring.chain_bit[c];
                        println!(
                            "[trojan] chain {c}: key bit {bit} via pad {}, stage 0 holds byte {}, stage {} holds byte {}",
                            wiring.pads[bit as usize],
                            wiring.stage_byte[c][0],
                            chain.len() - 1,
                            wiring.stage_byte[c][chain.len() - 1]
                        );
                    }
                    let map = wiring.key_bit_map(&chains);
                    println!(
                        "[trojan] key map: {} flip-flop cells -> (byte, bit), bijection verified",
                        map.len()
                    );
                    println!("PASS correlate: {}-entry key map learned; design left intact", map.len());
                    Ok(0)
                }
            }
        }
        TrojanCmd::Inject(a) => {
            let fabric = fabric_text::load_fabric(&a.fabric)?;
            let nl = netlist_text::load(&a.input)?;
            let reg = ModelRegistry::with_standard_models();
            let chains = trojan::detect_shift_registers(&nl, a.min_len);
            println!("[trojan] detected {} chains", chains.len());
            let core = core_instance(&nl, None)?;
            let wiring = match trojan::correlate_key_bits(&nl, &reg, &chains, &core, &a.pref) {
                Ok(w) => w,
                Err(e) => {
                    println!("FAIL inject: {e}");
                    return Ok(1);
                }
            };
            let cells: usize = chains.iter().map(|c| c.len()).sum();
            println!("[trojan] learned {cells}-entry key map");
            let troj = match trojan::insert_payload(&fabric, &nl, &chains, &wiring, &a.kst) {
                Ok(t) => t,
                Err(e) => {
                    println!("FAIL inject: {e}");
                    return Ok(1);
                }
            };
            println!("[trojan] inserted {cells} constant payload LUTs forcing k_st = {}", hex16(&a.kst));
            let spec = trojan::self_test_spec(&a.kst, &a.pref);
            let ok = trojan::self_test(&troj, &reg, &wiring.pads, &core, &spec)?;
            netlist_text::save(&troj, &a.output)?;
            println!("[trojan] wrote {}", a.output.display());
            if ok {
                println!("PASS inject: payload in place; self-test still answers c_ref");
                Ok(0)
            } else {
                println!("FAIL inject: self-test broke after payload insertion");
                Ok(1)
            }
        }
        TrojanCmd::Verify(a) => {
            let nl = netlist_text::load(&a.input)?;
            let reg = ModelRegistry::with_standard_models();
            let core = core_instance(&nl, a.core)?;
            let pads = match a.pads {
                Some(p) => {
                    if p.len() != trojan::CHAIN_COUNT {
                        return Err(Error::Trojan(format!(
                            "expected {} pads, got {}",
                            trojan::CHAIN_COUNT,
                            p.len()
                        )));
                    }
                    p
                }
                None => (0..trojan::CHAIN_COUNT).map(|b| format!("key_pad_{b}")).collect(),
            };
            let spec = trojan::self_test_spec(&a.kst, &a.pref);
            let report =
                trojan::stealth_report(&nl, &reg, &pads, &core, &spec, a.trials, settings.seed)?;
            println!(
                "[trojan] self-test: {}",
                if report.self_test_pass { "pass" } else { "FAIL" }
            );
            println!(
                "[trojan] {}/{} trials returned AES under the stored key ({} degenerate), seed {}",
                report.hijacked, report.trials, report.degenerate, settings.seed
            );
            if let Some(ce) = &report.counterexample {
                println!(
                    "[trojan] counterexample: key={} pt={} device={} honest={}",
                    hex16(&ce.user_key),
                    hex16(&ce.plaintext),
                    hex16(&ce.device_ciphertext),
                    hex16(&ce.honest_ciphertext)
                );
                println!(
                    "[trojan] one plaintext/ciphertext pair under a known key exposes the hijack"
                );
            }
            if report.self_test_pass && report.trials > 0 && report.hijacked == report.trials {
                println!("PASS verify: every ciphertext decrypts under the stored key, not the loaded one");
                Ok(0)
            } else {
                println!(
                    "FAIL verify: {}/{} trials matched the stored key, self-test {}",
                    report.hijacked,
                    report.trials,
                    if report.self_test_pass { "pass" } else { "fail" }
                );
                Ok(1)
            }
        }
    }
}

fn check(what: &str, ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Validate(format!("{what} failed")))
    }
}

fn pip_set(nl: &Netlist) -> BTreeSet<(String, String, String)> {
    nl.nets
        .iter()
        .flat_map(|n| n.pips.iter())
        .map(|p| (p.tile.clone(), p.src.clone(), p.sink.clone()))
        .collect()
}

/// Pad -> LUT -> FF -> pad, routed; enough to exercise every recovery class.
fn selfcheck_design(fabric: &Fabric) -> Result<Netlist> {
    let arity = fabric.slice.arity;
    let mut nl = Netlist::new("selfcheck", &fabric.device_id);
    nl.instances.push(Instance::new(
        "pad_in",
        SiteKind::Iob,
        &crate::fabric::logic_tile_name(Coord::new(0, 0)),
        IOB_SITE,
    ));
    nl.instances.push(Instance::new(
        "pad_out",
        SiteKind::Iob,
        &crate::fabric::logic_tile_name(Coord::new(fabric.width - 1, fabric.height - 1)),
        IOB_SITE,
    ));
    let mut s = Instance::new(
        "s",
        SiteKind::Slice,
        &crate::fabric::logic_tile_name(Coord::new(1, 1)),
        SLICE_SITE,
    );
    s.luts.insert(0, TruthTable::identity(arity, 0));
    s.ffs.insert(0, FfConfig { used: true, init: false });
    nl.instances.push(s);

    let mut a = Net::new("a");
    a.outpin = Some(PinRef::new("pad_in", IOB_PIN_IN));
    a.inpins.push(PinRef::new("s", "L0I0"));
    nl.nets.push(a);
    let mut d = Net::new("d");
    d.outpin = Some(PinRef::new("s", "L0O"));
    d.inpins.push(PinRef::new("s", "F0D"));
    nl.nets.push(d);
    let mut q = Net::new("q");
    q.outpin = Some(PinRef::new("s", "F0Q"));
    q.inpins.push(PinRef::new("pad_out", IOB_PIN_OUT));
    nl.nets.push(q);

    router::complete_routing(fabric, &mut nl)?;
    nl.canonicalize();
    nl.validate()?;
    Ok(nl)
}

fn cmd_selfcheck(settings: &Settings) -> Result<()> {
    // 190 PIPs covers the generator's connectivity skeleton (fabrics much
    // sparser than that cannot route pad-to-pad at all).
    let spec = FabricSpec {
        seed: settings.seed,
        width: 4,
        height: 4,
        types: vec![
            SmTypeSpec { pip_count: 190, sink_count: 37, bit_budget: 12 },
            SmTypeSpec { pip_count: 190, sink_count: 37, bit_budget: 12 },
        ],
        slice: SliceSpec::default(),
        default_fraction: 0.01,
    };
    let (fabric, encoding) = generate_fabric(&spec)?;

    let ftext = fabric_text::write_fabric(&fabric);
    check("fabric text round-trip", fabric_text::write_fabric(&fabric_text::parse_fabric(&ftext)?) == ftext)?;
    let stext = fabric_text::write_spec(&spec);
    check("family spec round-trip", fabric_text::write_spec(&fabric_text::parse_spec(&stext)?) == stext)?;
    println!("[selfcheck] text formats: ok");

    let tc = MockToolchain::new(fabric.clone(), encoding);
    let reference = tc.bitgen(&Netlist::new("empty", &fabric.device_id), false)?;
    let bytes = bitstream::write_bytes(&reference)?;
    check("bitstream byte round-trip", bitstream::write_bytes(&bitstream::read_bytes(&bytes)?)? == bytes)?;
    println!("[selfcheck] bitstream container: ok");

    let outcome = re_pipeline::reverse_format(&tc, settings.jobs)?;
    check(
        "routing probe budget",
        outcome.routing_bitgens == re_pipeline::analytic_routing_budget(&fabric),
    )?;
    let db = outcome.db;
    let dbytes = database::write_bytes(&db)?;
    check("database byte round-trip", database::write_bytes(&database::read_bytes(&dbytes)?)? == dbytes)?;
    println!(
        "[selfcheck] reverse pipeline: ok ({} routing + {} slice bitgens)",
        outcome.routing_bitgens, outcome.slice_bitgens
    );

    let design = selfcheck_design(&fabric)?;
    let ntext = netlist_text::write(&design);
    check("netlist text round-trip", netlist_text::write(&netlist_text::parse(&ntext)?) == ntext)?;
    let bs = tc.bitgen(&design, false)?;
    let got = converter::convert(&db, &reference, &bs, "roundtrip")?;
    check("clean conversion", got.diagnostics.is_empty())?;
    check("recovered pip set", pip_set(&got.netlist) == pip_set(&design))?;
    let orig = design.instance("s").expect("selfcheck design names its slice s");
    let rec = got
        .netlist
        .instances
        .iter()
        .find(|i| i.kind == SiteKind::Slice && i.tile == orig.tile)
        .ok_or_else(|| Error::Validate("recovered netlist lost the slice".into()))?;
    check("recovered LUT table", rec.luts.get(&0) == orig.luts.get(&0))?;
    let used: Vec<u8> = rec.ffs.iter().filter(|(_, f)| f.used).map(|(i, _)| *i).collect();
    check("recovered FF usage", used == vec![0])?;
    println!("[selfcheck] bitgen/convert round-trip: ok");

    // Poke a tile the design's routing never visits so byte comparisons see
    // only the manipulator's work.
    let touched: BTreeSet<&str> = design
        .nets
        .iter()
        .flat_map(|n| n.pips.iter())
        .map(|p| p.tile.as_str())
        .collect();
    let quiet = (0..fabric.tiles())
        .map(|t| fabric.coord(t))
        .find(|c| !touched.contains(sm_tile_name(*c).as_str()))
        .ok_or_else(|| Error::Validate("no quiet tile to poke".into()))?;
    let ty = &fabric.types[fabric.type_of(quiet) as usize];
    let pip = ty
        .pips
        .iter()
        .find(|p| !p.is_default)
        .ok_or_else(|| Error::Validate("no non-default pip to poke".into()))?;
    let (tile, src, sink) = (sm_tile_name(quiet), src_wire_name(pip.src), sink_wire_name(pip.sink));
    let mut poked = bs.clone();
    manipulator::set_pip(&db, &mut poked, &tile, &src, &sink)?;
    check("set-pip toggles bits", poked != bs)?;
    manipulator::unset_pip(&db, &mut poked, &tile, &src, &sink)?;
    check("set/unset inverse", poked == bs)?;
    let table = TruthTable::identity(fabric.slice.arity, 1);
    let mut rewritten = bs.clone();
    manipulator::rewrite_lut(&db, &mut rewritten, &orig.tile, 0, &table)?;
    let redone = converter::convert(&db, &reference, &rewritten, "postedit")?;
    let redone_slice = redone
        .netlist
        .instances
        .iter()
        .find(|i| i.kind == SiteKind::Slice && i.tile == orig.tile)
        .ok_or_else(|| Error::Validate("post-edit netlist lost the slice".into()))?;
    check("rewritten LUT read-back", redone_slice.luts.get(&0) == Some(&table))?;
    println!("[selfcheck] manipulator: ok");
    Ok(())
}

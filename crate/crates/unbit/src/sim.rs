//! Cycle-accurate netlist simulation.
//!
//! Connectivity comes from nets alone: a net carries its driver pin's value
//! to every load pin, whether or not fabric pips are attached. Each cycle
//! evaluates combinational logic (LUTs and blackbox macros) in topological
//! order, samples probes, then clocks every used flip-flop. Combinational
//! loops are rejected up front.
//!
//! External stimulus drives pad inputs (IOB pin `I`) and any blackbox input
//! port no net drives. Anything else left undriven reads as constant zero
//! and is reported once in the warning list.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use crate::aes::aes128_encrypt;
use crate::error::{Error, Result};
use crate::netlist::{
    parse_slice_pin, Netlist, SiteKind, SlicePin, TruthTable, IOB_PIN_IN,
};

/// Pin values supplied from outside the fabric for one cycle, keyed by
/// (instance name, port name).
pub type Stimulus = BTreeMap<(String, String), bool>;

pub trait BlackboxModel: Sync {
    fn name(&self) -> &str;
    fn inputs(&self) -> Vec<String>;
    fn outputs(&self) -> Vec<String>;
    fn eval(&self, inputs: &BTreeMap<String, bool>) -> BTreeMap<String, bool>;
}

/// Combinational AES-128 macro. Ports: key bits `K0..K127`, plaintext bits
/// `P0..P127`, enable `GO`, ciphertext bits `C0..C127`. Bit `8*byte + bit`
/// is the LSB-first bit `bit` of byte `byte`. All outputs are zero while
/// `GO` is low.
pub struct Aes128Model;

impl BlackboxModel for Aes128Model {
    fn name(&self) -> &str {
        "aes128"
    }

    fn inputs(&self) -> Vec<String> {
        let mut v: Vec<String> = (0..128).map(|i| format!("K{i}")).collect();
        v.extend((0..128).map(|i| format!("P{i}")));
        v.push("GO".into());
        v
    }

    fn outputs(&self) -> Vec<String> {
        (0..128).map(|i| format!("C{i}")).collect()
    }

    fn eval(&self, inputs: &BTreeMap<String, bool>) -> BTreeMap<String, bool> {
        let bit = |name: &str| inputs.get(name).copied().unwrap_or(false);
        let mut out = BTreeMap::new();
        if !bit("GO") {
            for i in 0..128 {
                out.insert(format!("C{i}"), false);
            }
            return out;
        }
        let mut key = [0u8; 16];
        let mut pt = [0u8; 16];
        for i in 0..128 {
            if bit(&format!("K{i}")) {
                key[i / 8] |= 1 << (i % 8);
            }
            if bit(&format!("P{i}")) {
                pt[i / 8] |= 1 << (i % 8);
            }
        }
        let ct = aes128_encrypt(&key, &pt);
        for i in 0..128 {
            out.insert(format!("C{i}"), ct[i / 8] >> (i % 8) & 1 == 1);
        }
        out
    }
}

#[derive(Default)]
pub struct ModelRegistry {
    models: BTreeMap<String, Box<dyn BlackboxModel>>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry with every built-in macro model.
    pub fn with_standard_models() -> Self {
        let mut r = Self::new();
        r.register(Box::new(Aes128Model));
        r
    }

    pub fn register(&mut self, model: Box<dyn BlackboxModel>) {
        self.models.insert(model.name().to_string(), model);
    }

    pub fn get(&self, name: &str) -> Option<&dyn BlackboxModel> {
        self.models.get(name).map(|b| b.as_ref())
    }
}

#[derive(Debug)]
pub struct SimOutput {
    /// One map per cycle with the sampled probe values.
    pub trace: Vec<BTreeMap<(String, String), bool>>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Element {
    Lut { inst: usize, lut: u8 },
    Blackbox { inst: usize },
}

struct SimModel<'a> {
    netlist: &'a Netlist,
    /// Load pin -> driver pin, from net membership.
    driver_of: HashMap<(usize, String), (usize, String)>,
    /// Load pins of nets that have no driver.
    driverless: BTreeSet<(usize, String)>,
    elements: Vec<Element>,
    /// Evaluation order into `elements`.
    order: Vec<usize>,
    models: HashMap<usize, &'a dyn BlackboxModel>,
    /// (inst, ff) -> used flag; holds every FF referenced or configured.
    ffs: BTreeMap<(usize, u8), bool>,
}

fn build_model<'a>(netlist: &'a Netlist, registry: &'a ModelRegistry) -> Result<SimModel<'a>> {
    netlist.validate().map_err(|e| Error::Sim(format!("netlist is not simulatable: {e}")))?;
    let index_of: HashMap<&str, usize> =
        netlist.instances.iter().enumerate().map(|(i, inst)| (inst.name.as_str(), i)).collect();

    let mut driver_of = HashMap::new();
    let mut driverless = BTreeSet::new();
    for net in &netlist.nets {
        match &net.outpin {
            Some(out) => {
                let src = (index_of[out.inst.as_str()], out.pin.clone());
                for load in &net.inpins {
                    driver_of.insert((index_of[load.inst.as_str()], load.pin.clone()), src.clone());
                }
            }
            None => {
                for load in &net.inpins {
                    driverless.insert((index_of[load.inst.as_str()], load.pin.clone()));
                }
            }
        }
    }

    let mut elements = Vec::new();
    let mut models: HashMap<usize, &dyn BlackboxModel> = HashMap::new();
    let mut ffs: BTreeMap<(usize, u8), bool> = BTreeMap::new();
    let mut lut_set: BTreeSet<(usize, u8)> = BTreeSet::new();
    for (i, inst) in netlist.instances.iter().enumerate() {
        match inst.kind {
            SiteKind::Slice => {
                for &lut in inst.luts.keys() {
                    lut_set.insert((i, lut));
                }
                for (&ff, cfg) in &inst.ffs {
                    ffs.insert((i, ff), cfg.used);
                }
            }
            SiteKind::Blackbox => {
                let name = inst.model.as_deref().ok_or_else(|| {
                    Error::Sim(format!("blackbox {:?} declares no model", inst.name))
                })?;
                let model = registry.get(name).ok_or_else(|| {
                    Error::Sim(format!("no model registered for {:?} (instance {:?})", name, inst.name))
                })?;
                models.insert(i, model);
                elements.push(Element::Blackbox { inst: i });
            }
            SiteKind::Iob => {}
        }
    }
    // LUTs and FFs referenced by nets but not configured still exist; they
    // evaluate as all-zero tables and never-clocked registers.
    for net in &netlist.nets {
        let mut note = |pin: &crate::netlist::PinRef| {
            let i = index_of[pin.inst.as_str()];
            if netlist.instances[i].kind != SiteKind::Slice {
                return;
            }
            match parse_slice_pin(&pin.pin) {
                Some(SlicePin::LutOut(l)) | Some(SlicePin::LutIn(l, _)) => {
                    lut_set.insert((i, l));
                }
                Some(SlicePin::FfQ(f)) | Some(SlicePin::FfD(f)) => {
                    ffs.entry((i, f)).or_insert(false);
                }
                None => {}
            }
        };
        if let Some(out) = &net.outpin {
            note(out);
        }
        for load in &net.inpins {
            note(load);
        }
    }
    for (inst, lut) in lut_set {
        elements.push(Element::Lut { inst, lut });
    }
    elements.sort_by_key(|e| match *e {
        Element::Lut { inst, lut } => (inst, lut as i32),
        Element::Blackbox { inst } => (inst, -1),
    });

    // Pin -> producing element, for dependency edges.
    let mut producer: HashMap<(usize, String), usize> = HashMap::new();
    for (ei, el) in elements.iter().enumerate() {
        match *el {
            Element::Lut { inst, lut } => {
                producer.insert((inst, format!("L{lut}O")), ei);
            }
            Element::Blackbox { inst } => {
                for port in models[&inst].outputs() {
                    producer.insert((inst, port), ei);
                }
            }
        }
    }

    let input_pins = |el: &Element| -> Vec<(usize, String)> {
        match *el {
            Element::Lut { inst, lut } => {
                let arity = netlist.instances[inst]
                    .luts
                    .get(&lut)
                    .map(|t| t.arity)
                    .unwrap_or(0);
                (0..arity).map(|j| (inst, format!("L{lut}I{j}"))).collect()
            }
            Element::Blackbox { inst } => {
                models[&inst].inputs().into_iter().map(|p| (inst, p)).collect()
            }
        }
    };

    let mut indeg = vec![0usize; elements.len()];
    let mut fanout: Vec<Vec<usize>> = vec![Vec::new(); elements.len()];
    for (ei, el) in elements.iter().enumerate() {
        for pin in input_pins(el) {
            if let Some(src) = driver_of.get(&pin) {
                if let Some(&pe) = producer.get(src) {
                    fanout[pe].push(ei);
                    indeg[ei] += 1;
                }
            }
        }
    }
    let mut queue: VecDeque<usize> =
        (0..elements.len()).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(elements.len());
    while let Some(i) = queue.pop_front() {
        order.push(i);
        for &j in &fanout[i] {
            indeg[j] -= 1;
            if indeg[j] == 0 {
                queue.push_back(j);
            }
        }
    }
    if order.len() != elements.len() {
        let stuck: Vec<&str> = elements
            .iter()
            .enumerate()
            .filter(|(i, _)| indeg[*i] > 0)
            .map(|(_, el)| match *el {
                Element::Lut { inst, .. } | Element::Blackbox { inst } => {
                    netlist.instances[inst].name.as_str()
                }
            })
            .collect();
        return Err(Error::Sim(format!(
            "combinational loop through: {}",
            stuck.join(", ")
        )));
    }

    Ok(SimModel { netlist, driver_of, driverless, elements, order, models, ffs })
}

struct CycleState<'m, 'a> {
    model: &'m SimModel<'a>,
    /// Values of source pins (pad inputs, FF outputs, evaluated logic).
    values: HashMap<(usize, String), bool>,
    stimulus: &'m Stimulus,
    inst_names: Vec<&'a str>,
    warned: &'m mut BTreeSet<String>,
    warnings: &'m mut Vec<String>,
}

impl CycleState<'_, '_> {
    fn read(&mut self, inst: usize, port: &str) -> bool {
        if let Some(&v) = self.values.get(&(inst, port.to_string())) {
            return v;
        }
        if let Some(src) = self.model.driver_of.get(&(inst, port.to_string())) {
            if let Some(&v) = self.values.get(src) {
                return v;
            }
            // Driver exists but produced nothing: an unconfigured source
            // (zero LUT handled via elements; FF handled via seeding) or a
            // blackbox port outside the model. Warn and read zero.
            self.warn(src.0, &src.1, "drives a net but never produces a value");
            return false;
        }
        if self.model.driverless.contains(&(inst, port.to_string())) {
            self.warn(inst, port, "reads a net that has no driver; treating as constant 0");
            return false;
        }
        let key = (self.inst_names[inst].to_string(), port.to_string());
        if let Some(&v) = self.stimulus.get(&key) {
            return v;
        }
        // A pin no net touches is tied off, not floating: slice inputs and
        // pads read 0 silently. Macro ports are worth flagging.
        if self.model.netlist.instances[inst].kind == SiteKind::Blackbox {
            self.warn(inst, port, "is unconnected and has no stimulus; reading constant 0");
        }
        false
    }

    fn warn(&mut self, inst: usize, port: &str, what: &str) {
        let msg = format!("{}.{} {}", self.inst_names[inst], port, what);
        if self.warned.insert(msg.clone()) {
            self.warnings.push(msg);
        }
    }
}

/// Run the netlist for `stimulus.len()` cycles, sampling `probes` each cycle
/// after combinational settling and before the clock edge.
pub fn simulate(
    netlist: &Netlist,
    registry: &ModelRegistry,
    stimulus: &[Stimulus],
    probes: &[(String, String)],
) -> Result<SimOutput> {
    let model = build_model(netlist, registry)?;
    let inst_names: Vec<&str> = netlist.instances.iter().map(|i| i.name.as_str()).collect();
    let index_of: HashMap<&str, usize> =
        inst_names.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    for (inst, port) in probes {
        if !index_of.contains_key(inst.as_str()) {
            return Err(Error::Sim(format!("probe names unknown instance {inst:?}")));
        }
        let _ = port;
    }
    for cycle in stimulus {
        for (inst, port) in cycle.keys() {
            let Some(&i) = index_of.get(inst.as_str()) else {
                return Err(Error::Sim(format!("stimulus names unknown instance {inst:?}")));
            };
            let ok = match netlist.instances[i].kind {
                SiteKind::Iob => port == IOB_PIN_IN,
                SiteKind::Blackbox => {
                    !model.driver_of.contains_key(&(i, port.clone()))
                        && !model.driverless.contains(&(i, port.clone()))
                }
                SiteKind::Slice => false,
            };
            if !ok {
                return Err(Error::Sim(format!(
                    "stimulus cannot drive {inst}.{port}; only pad inputs and unconnected macro ports accept external values"
                )));
            }
        }
    }

    // FF state, persistent across cycles.
    let mut state: BTreeMap<(usize, u8), bool> = model
        .ffs
        .keys()
        .map(|&(i, f)| {
            let init = netlist.instances[i].ffs.get(&f).map(|c| c.init).unwrap_or(false);
            ((i, f), init)
        })
        .collect();

    let mut warned: BTreeSet<String> = BTreeSet::new();
    let mut warnings: Vec<String> = Vec::new();
    let mut trace = Vec::with_capacity(stimulus.len());

    for stim in stimulus {
        let mut cs = CycleState {
            model: &model,
            values: HashMap::new(),
            stimulus: stim,
            inst_names: inst_names.clone(),
            warned: &mut warned,
            warnings: &mut warnings,
        };
        // Seed primary sources: pad inputs and FF outputs.
        for (i, inst) in netlist.instances.iter().enumerate() {
            if inst.kind == SiteKind::Iob {
                let v = stim.get(&(inst.name.clone(), IOB_PIN_IN.to_string())).copied();
                cs.values.insert((i, IOB_PIN_IN.to_string()), v.unwrap_or(false));
            }
        }
        for (&(i, f), &v) in &state {
            let used = *model.ffs.get(&(i, f)).unwrap_or(&false);
            cs.values.insert((i, format!("F{f}Q")), if used { v } else { false });
        }

        for &ei in &model.order {
            match model.elements[ei] {
                Element::Lut { inst, lut } => {
                    let table = netlist.instances[inst]
                        .luts
                        .get(&lut)
                        .copied()
                        .unwrap_or(TruthTable::zero(0));
                    let mut idx = 0u32;
                    for j in 0..table.arity {
                        if cs.read(inst, &format!("L{lut}I{j}")) {
                            idx |= 1 << j;
                        }
                    }
                    let v = table.get(idx);
                    cs.values.insert((inst, format!("L{lut}O")), v);
                }
                Element::Blackbox { inst } => {
                    let m = model.models[&inst];
                    let mut inputs = BTreeMap::new();
                    for port in m.inputs() {
                        let v = cs.read(inst, &port);
                        inputs.insert(port, v);
                    }
                    for (port, v) in m.eval(&inputs) {
                        cs.values.insert((inst, port), v);
                    }
                }
            }
        }

        let mut sample = BTreeMap::new();
        for (inst, port) in probes {
            let i = index_of[inst.as_str()];
            let v = cs.read(i, port);
            sample.insert((inst.clone(), port.clone()), v);
        }
        trace.push(sample);

        let mut next = state.clone();
        for (&(i, f), used) in &model.ffs {
            if *used {
                let v = cs.read(i, &format!("F{f}D"));
                next.insert((i, f), v);
            }
        }
        state = next;
    }

    Ok(SimOutput { trace, warnings })
}

//! The edge-node GNN: preprocessing, synchronous TX/RX/edge updating layers,
//! and affine output heads.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::chansim::{ScenarioInstance, ScenarioKind};
use crate::container::{Container, Value};
use crate::error::{Error, Result};
use crate::hetgraph::{HetGraph, Topology, VariableBundle};
use crate::numkernel::{Linear, Mlp, Tape, Tensor, Var};
use crate::objectives::{Solution, TapeObjective};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Edge,
    TxNode,
    RxNode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    #[default]
    Max,
    Mean,
}

/// Reference cooperative edge width, available through configuration.
pub const COOP_REFERENCE_WIDTH: usize = 64;
const COOP_DESK_WIDTH: usize = 16;
/// Reference IC width is 8; 32 generalises from 4 to 8 pairs far more
/// reliably at the desk training budget.
const IC_DESK_WIDTH: usize = 32;

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngnnConfig {
    pub layers: usize,
    /// Input widths (real, after complex splitting).
    pub d_tx: usize,
    pub d_rx: usize,
    pub d_e: usize,
    /// Hidden representation widths.
    pub hidden_tx: usize,
    pub hidden_rx: usize,
    pub hidden_e: usize,
    /// Output widths of the message MLPs (1, 3, 5 and 6).
    pub msg_tx: usize,
    pub msg_rx: usize,
    pub msg_edge_tx: usize,
    pub msg_edge_rx: usize,
    /// Output variable counts; 0 disables the head's affine map.
    pub out_tx: usize,
    pub out_rx: usize,
    pub out_e: usize,
    #[serde(default = "default_true")]
    pub complex_tx: bool,
    #[serde(default = "default_true")]
    pub complex_rx: bool,
    #[serde(default = "default_true")]
    pub complex_e: bool,
    pub output_head: OutputHead,
    #[serde(default)]
    pub aggregator: Aggregator,
}

impl EngnnConfig {
    /// Desk-scale defaults; node widths follow the edge width. IC and IBC
    /// use the reference edge widths (8 and 32). Coop keeps two layers but
    /// narrows the edge width from the reference 64 to 16 so single-core
    /// inference stays an order of magnitude cheaper than the iterative
    /// solvers; set the widths to 64 for the reference model.
    pub fn default_for(kind: ScenarioKind, n_antennas: usize) -> Self {
        let (layers, hidden, d_e, out, complex) = match kind {
            ScenarioKind::Ic => (1, IC_DESK_WIDTH, 4 * n_antennas, n_antennas, true),
            ScenarioKind::Ibc => (1, 32, 6, 1, false),
            ScenarioKind::Coop => (2, COOP_DESK_WIDTH, 2 * n_antennas, n_antennas, true),
        };
        Self::with_widths(layers, 2, 2, d_e, hidden, out, complex)
    }

    /// Sets every hidden and message width to `w`.
    pub fn set_widths(&mut self, w: usize) {
        for x in [
            &mut self.hidden_tx,
            &mut self.hidden_rx,
            &mut self.hidden_e,
            &mut self.msg_tx,
            &mut self.msg_rx,
            &mut self.msg_edge_tx,
            &mut self.msg_edge_rx,
        ] {
            *x = w;
        }
    }

    /// Edge-head config with every hidden and message width equal to `hidden`.
    pub fn with_widths(
        layers: usize,
        d_tx: usize,
        d_rx: usize,
        d_e: usize,
        hidden: usize,
        out_e: usize,
        complex_e: bool,
    ) -> Self {
        Self {
            layers,
            d_tx,
            d_rx,
            d_e,
            hidden_tx: hidden,
            hidden_rx: hidden,
            hidden_e: hidden,
            msg_tx: hidden,
            msg_rx: hidden,
            msg_edge_tx: hidden,
            msg_edge_rx: hidden,
            out_tx: 0,
            out_rx: 0,
            out_e,
            complex_tx: true,
            complex_rx: true,
            complex_e,
            output_head: OutputHead::Edge,
            aggregator: Aggregator::Max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.layers == 0 {
            return err("at least one updating layer is required".into());
        }
        let widths = [
            ("d_tx", self.d_tx),
            ("d_rx", self.d_rx),
            ("d_e", self.d_e),
            ("hidden_tx", self.hidden_tx),
            ("hidden_rx", self.hidden_rx),
            ("hidden_e", self.hidden_e),
            ("msg_tx", self.msg_tx),
            ("msg_rx", self.msg_rx),
            ("msg_edge_tx", self.msg_edge_tx),
            ("msg_edge_rx", self.msg_edge_rx),
        ];
        if let Some((name, _)) = widths.iter().find(|(_, w)| *w == 0) {
            return err(format!("{name} must be at least 1"));
        }
        if self.msg_edge_tx != self.msg_edge_rx {
            return err(format!(
                "edge messages from both neighbor families share one aggregation, \
                 so msg_edge_tx ({}) must equal msg_edge_rx ({})",
                self.msg_edge_tx, self.msg_edge_rx
            ));
        }
        let active = match self.output_head {
            OutputHead::Edge => self.out_e,
            OutputHead::TxNode => self.out_tx,
            OutputHead::RxNode => self.out_rx,
        };
        if active == 0 {
            return err(format!("output head {:?} has zero width", self.output_head));
        }
        Ok(())
    }

    fn stored(n: usize, complex: bool) -> usize {
        if complex {
            2 * n
        } else {
            n
        }
    }

    /// Stored (real) widths of the three heads.
    pub fn stored_out_widths(&self) -> [usize; 3] {
        [
            Self::stored(self.out_tx, self.complex_tx),
            Self::stored(self.out_rx, self.complex_rx),
            Self::stored(self.out_e, self.complex_e),
        ]
    }

    pub fn check_graph(&self, g: &HetGraph) -> Result<()> {
        if (g.d_tx(), g.d_rx(), g.d_e()) != (self.d_tx, self.d_rx, self.d_e) {
            return Err(Error::invalid(format!(
                "graph feature widths ({}, {}, {}) do not match the model ({}, {}, {})",
                g.d_tx(),
                g.d_rx(),
                g.d_e(),
                self.d_tx,
                self.d_rx,
                self.d_e
            )));
        }
        Ok(())
    }
}

/// `MLP₁ … MLP₇` of one updating layer, stored zero-based.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub mlp: [Mlp; 7],
}

impl LayerParams {
    pub fn init<R: Rng + ?Sized>(c: &EngnnConfig, rng: &mut R) -> Self {
        let (ht, hr, he) = (c.hidden_tx, c.hidden_rx, c.hidden_e);
        Self {
            mlp: [
                Mlp::init(hr + he, c.msg_tx, rng),
                Mlp::init(ht + c.msg_tx, ht, rng),
                Mlp::init(ht + he, c.msg_rx, rng),
                Mlp::init(hr + c.msg_rx, hr, rng),
                Mlp::init(he + ht, c.msg_edge_tx, rng),
                Mlp::init(he + hr, c.msg_edge_rx, rng),
                Mlp::init(he + c.msg_edge_tx, he, rng),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngnnParams {
    pub config: EngnnConfig,
    pub pre_tx: Linear,
    pub pre_rx: Linear,
    pub pre_e: Linear,
    pub layers: Vec<LayerParams>,
    pub post_tx: Option<Linear>,
    pub post_rx: Option<Linear>,
    pub post_e: Option<Linear>,
}

fn head<R: Rng + ?Sized>(hidden: usize, out: usize, rng: &mut R) -> Option<Linear> {
    (out > 0).then(|| Linear::init(hidden, out, rng))
}

impl EngnnParams {
    pub fn init<R: Rng + ?Sized>(config: &EngnnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config;
        let [wt, wr, we] = c.stored_out_widths();
        Ok(Self {
            config: c.clone(),
            pre_tx: Linear::init(c.d_tx, c.hidden_tx, rng),
            pre_rx: Linear::init(c.d_rx, c.hidden_rx, rng),
            pre_e: Linear::init(c.d_e, c.hidden_e, rng),
            layers: (0..c.layers).map(|_| LayerParams::init(c, rng)).collect(),
            post_tx: head(c.hidden_tx, wt, rng),
            post_rx: head(c.hidden_rx, wr, rng),
            post_e: head(c.hidden_e, we, rng),
        })
    }

    fn linears(&self) -> Vec<(String, &Linear)> {
        let mut out = vec![
            ("pre_tx".to_string(), &self.pre_tx),
            ("pre_rx".to_string(), &self.pre_rx),
            ("pre_e".to_string(), &self.pre_e),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            for (i, mlp) in layer.mlp.iter().enumerate() {
                for (j, lin) in mlp.layers.iter().enumerate() {
                    out.push((format!("layer{l}.mlp{}.{j}", i + 1), lin));
                }
            }
        }
        for (name, h) in [
            ("post_tx", &self.post_tx),
            ("post_rx", &self.post_rx),
            ("post_e", &self.post_e),
        ] {
            if let Some(h) = h {
                out.push((name.to_string(), h));
            }
        }
        out
    }

    /// Every trainable tensor with a stable name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.linears()
            .into_iter()
            .flat_map(|(name, lin)| {
                let [w, b] = lin.tensors();
                [(format!("{name}.weight"), w), (format!("{name}.bias"), b)]
            })
            .collect()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    /// Same order as [`EngnnParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for l in [&mut self.pre_tx, &mut self.pre_rx, &mut self.pre_e] {
            out.extend(l.tensors_mut());
        }
        for layer in &mut self.layers {
            for mlp in &mut layer.mlp {
                out.extend(mlp.tensors_mut());
            }
        }
        for l in [&mut self.post_tx, &mut self.post_rx, &mut self.post_e]
            .into_iter()
            .flatten()
        {
            out.extend(l.tensors_mut());
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn to_container(&self, c: &mut Container) -> Result<()> {
        let text = toml::to_string(&self.config).map_err(|e| Error::Config(e.to_string()))?;
        c.push("model.config", Value::Text(text));
        for (name, t) in self.named_tensors() {
            c.push(format!("param.{name}"), Value::from_tensor(t));
        }
        Ok(())
    }

    /// Rebuilds parameters from a container, checking every shape against
    /// the echoed configuration.
    pub fn from_container(c: &Container) -> Result<Self> {
        let config: EngnnConfig =
            toml::from_str(c.text("model.config")?).map_err(|e| Error::format(format!("model config: {e}")))?;
        // Shapes come from a fresh init; values are then overwritten.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut p = Self::init(&config, &mut rng)?;
        let names: Vec<String> = p.named_tensors().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(p.tensors_mut()) {
            let t = c.tensor(&format!("param.{name}"))?;
            if t.shape() != slot.shape() {
                return Err(Error::format(format!(
                    "parameter {name} has shape {:?}, config implies {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(p)
    }
}

/// Tape handles of the three raw output heads (`None` when inactive).
#[derive(Debug, Clone, Copy)]
pub struct RawOutputs {
    /// `[M, w_TX]`
    pub s_tx: Option<Var>,
    /// `[K, w_RX]`
    pub s_rx: Option<Var>,
    /// `[M·K, w_E]`, row `m·K + k`.
    pub xi: Option<Var>,
}

impl RawOutputs {
    /// Copies the outputs off the tape; inactive heads become zero-width.
    pub fn bundle(&self, tape: &Tape<'_>, m: usize, k: usize) -> Result<VariableBundle> {
        let get = |v: Option<Var>, rows: usize| -> Result<Tensor> {
            match v {
                Some(v) => {
                    let t = tape.value(v);
                    Tensor::new(vec![rows, t.len() / rows], t.data().to_vec())
                }
                None => Ok(Tensor::zeros(&[rows, 0])),
            }
        };
        let xi = get(self.xi, m * k)?;
        let w = xi.shape()[1];
        VariableBundle::new(get(self.s_tx, m)?, get(self.s_rx, k)?, xi.reshape(vec![m, k, w])?)
    }
}

/// Node and edge representations of one layer.
#[derive(Debug, Clone, Copy)]
pub struct Representations {
    pub f_tx: Var,
    pub f_rx: Var,
    /// `[M·K, d̆_E]`
    pub e: Var,
}

fn aggregate(tape: &mut Tape<'_>, agg: Aggregator, x: Var, segments: &crate::numkernel::Segments) -> Result<Var> {
    match agg {
        Aggregator::Max => tape.segment_max(x, segments),
        Aggregator::Mean => tape.segment_mean(x, segments),
    }
}

/// One affine map plus ReLU per node/edge type; absent edges stay zero.
pub fn preprocess<'a>(
    params: &'a EngnnParams,
    tape: &mut Tape<'a>,
    g: &HetGraph,
    topo: &Topology,
) -> Result<Representations> {
    params.config.check_graph(g)?;
    let ftx = tape.constant(g.f_tx().clone());
    let frx = tape.constant(g.f_rx().clone());
    let e = tape.constant(g.edge_rows());
    let t = params.pre_tx.forward(tape, ftx)?;
    let f_tx = tape.relu(t);
    let r = params.pre_rx.forward(tape, frx)?;
    let f_rx = tape.relu(r);
    let z = params.pre_e.forward(tape, e)?;
    let z = tape.relu(z);
    let e = tape.mask_rows(z, topo.mask.clone())?;
    Ok(Representations { f_tx, f_rx, e })
}

/// `f_TX,m ← MLP₂(f_TX,m ‖ AGG{MLP₁(f_RX,k ‖ E_(m,k)) : k ∈ N(m)})`.
pub fn tx_update<'a>(
    layer: &'a LayerParams,
    agg: Aggregator,
    tape: &mut Tape<'a>,
    topo: &Topology,
    prev: &Representations,
) -> Result<Var> {
    let rx_g = tape.gather_rows(prev.f_rx, topo.rx_of_row.clone())?;
    let x = tape.concat_cols(&[rx_g, prev.e])?;
    let msg = layer.mlp[0].forward(tape, x)?;
    let a = aggregate(tape, agg, msg, &topo.tx_segments)?;
    let x = tape.concat_cols(&[prev.f_tx, a])?;
    layer.mlp[1].forward(tape, x)
}

/// `f_RX,k ← MLP₄(f_RX,k ‖ AGG{MLP₃(f_TX,m ‖ E_(m,k)) : m ∈ N(k)})`.
pub fn rx_update<'a>(
    layer: &'a LayerParams,
    agg: Aggregator,
    tape: &mut Tape<'a>,
    topo: &Topology,
    prev: &Representations,
) -> Result<Var> {
    let tx_g = tape.gather_rows(prev.f_tx, topo.tx_of_row.clone())?;
    let x = tape.concat_cols(&[tx_g, prev.e])?;
    let msg = layer.mlp[2].forward(tape, x)?;
    let a = aggregate(tape, agg, msg, &topo.rx_segments)?;
    let x = tape.concat_cols(&[prev.f_rx, a])?;
    layer.mlp[3].forward(tape, x)
}

/// `E_(m,k) ← MLP₇(E_(m,k) ‖ AGG({MLP₅(E_(m,k₁) ‖ f_TX,m)} ∪ {MLP₆(E_(m₁,k) ‖ f_RX,k)}))`
/// with one aggregation over both neighbor families.
pub fn edge_update<'a>(
    layer: &'a LayerParams,
    agg: Aggregator,
    tape: &mut Tape<'a>,
    topo: &Topology,
    prev: &Representations,
) -> Result<Var> {
    let tx_g = tape.gather_rows(prev.f_tx, topo.tx_of_row.clone())?;
    let rx_g = tape.gather_rows(prev.f_rx, topo.rx_of_row.clone())?;
    let x5 = tape.concat_cols(&[prev.e, tx_g])?;
    let m5 = layer.mlp[4].forward(tape, x5)?;
    let x6 = tape.concat_cols(&[prev.e, rx_g])?;
    let m6 = layer.mlp[5].forward(tape, x6)?;
    let both = tape.concat_rows(&[m5, m6])?;
    let a = aggregate(tape, agg, both, &topo.edge_segments)?;
    let x = tape.concat_cols(&[prev.e, a])?;
    let e = layer.mlp[6].forward(tape, x)?;
    tape.mask_rows(e, topo.mask.clone())
}

/// All three updates read the previous layer's representations.
pub fn update_layer<'a>(
    layer: &'a LayerParams,
    agg: Aggregator,
    tape: &mut Tape<'a>,
    topo: &Topology,
    prev: &Representations,
) -> Result<Representations> {
    Ok(Representations {
        f_tx: tx_update(layer, agg, tape, topo, prev)?,
        f_rx: rx_update(layer, agg, tape, topo, prev)?,
        e: edge_update(layer, agg, tape, topo, prev)?,
    })
}

pub fn forward<'a>(params: &'a EngnnParams, tape: &mut Tape<'a>, g: &HetGraph, topo: &Topology) -> Result<RawOutputs> {
    if topo.m != g.num_tx() || topo.k != g.num_rx() || &topo.mask[..] != g.edge_mask() {
        return Err(Error::invalid("topology does not belong to this graph"));
    }
    let agg = params.config.aggregator;
    let mut rep = preprocess(params, tape, g, topo)?;
    for layer in &params.layers {
        rep = update_layer(layer, agg, tape, topo, &rep)?;
    }
    let s_tx = params.post_tx.as_ref().map(|l| l.forward(tape, rep.f_tx)).transpose()?;
    let s_rx = params.post_rx.as_ref().map(|l| l.forward(tape, rep.f_rx)).transpose()?;
    let xi = match &params.post_e {
        Some(l) => {
            let x = l.forward(tape, rep.e)?;
            Some(tape.mask_rows(x, topo.mask.clone())?)
        }
        None => None,
    };
    Ok(RawOutputs { s_tx, s_rx, xi })
}

/// Forward pass on a fresh tape, returning the raw variable bundle.
pub fn forward_bundle(params: &EngnnParams, g: &HetGraph) -> Result<VariableBundle> {
    let topo = g.topology();
    let mut tape = Tape::new();
    let out = forward(params, &mut tape, g, &topo)?;
    out.bundle(&tape, g.num_tx(), g.num_rx())
}

/// Picks the configured head, reorders it into stream order, and applies
/// the scenario's feasibility projection.
pub fn normalize<'a>(
    params: &EngnnParams,
    tape: &mut Tape<'a>,
    raw: &RawOutputs,
    inst: &ScenarioInstance,
    obj: &TapeObjective,
) -> Result<Var> {
    let c = &params.config;
    let (m_n, k_n) = (inst.num_tx(), inst.num_rx());
    let missing = || Error::Config(format!("output head {:?} is not active", c.output_head));
    let stream = match (inst.kind, c.output_head) {
        (ScenarioKind::Coop, OutputHead::Edge) => raw.xi.ok_or_else(missing)?,
        (ScenarioKind::Coop, head) => {
            return Err(Error::Config(format!(
                "cooperative beams live on edges; head {head:?} cannot express them"
            )))
        }
        (_, OutputHead::Edge) => {
            let idx: Arc<[usize]> = (0..k_n).map(|k| inst.serving[k] * k_n + k).collect();
            tape.gather_rows(raw.xi.ok_or_else(missing)?, idx)?
        }
        (_, OutputHead::RxNode) => raw.s_rx.ok_or_else(missing)?,
        (_, OutputHead::TxNode) => {
            let idx: Arc<[usize]> = inst.serving.iter().copied().collect();
            tape.gather_rows(raw.s_tx.ok_or_else(missing)?, idx)?
        }
    };
    let [r, w] = obj.var_shape();
    if tape.value(stream).len() != r * w {
        return Err(Error::Config(format!(
            "head produces {} values per instance of {m_n}x{k_n}, the scenario needs {r}x{w}",
            tape.value(stream).len()
        )));
    }
    let shaped = tape.reshape(stream, vec![r, w])?;
    obj.normalize(tape, shaped)
}

/// Inference: forward, normalise, and read the feasible solution.
pub fn infer(params: &EngnnParams, inst: &ScenarioInstance, g: &HetGraph) -> Result<Solution> {
    let obj = TapeObjective::new(inst)?;
    let topo = g.topology();
    let mut tape = Tape::new();
    let raw = forward(params, &mut tape, g, &topo)?;
    let v = normalize(params, &mut tape, &raw, inst, &obj)?;
    obj.solution(inst, tape.value(v))
}

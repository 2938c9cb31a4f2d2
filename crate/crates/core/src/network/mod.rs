//! The orbital-feature equivariant network: diagonal reduction, matched block
//! messages over the six QMMs, multi-head attention aggregation, point-wise
//! interactions, decoding, and the energy / frontier-orbital pooling heads.
//!
//! Features of a molecule with `N` atoms are one flat buffer laid out
//! segment-major, `[segment][channel][atom][m]`, so each `(l, p)` block is a
//! `channels x (N * (2l + 1))` matrix and channel mixing is a single product.

pub mod checkpoint;
pub mod config;
pub mod input;
pub mod params;

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Broadcast, Groups, RowNormKind, Tape, Var};
use crate::equivariant::{CgTable, ChannelCoupling, EvNormStats, IrrepsSpec, Parity};
use crate::error::{Error, Result};
use crate::scf::QmmSet;
use crate::units::HARTREE_TO_EV;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use config::{Activation, AttentionRenorm, Head, ModelConfig, PhysicalTerms};
pub use input::{diagonal_reduce, pack_atoms, radial_basis, unpack_atoms, NetworkInput};
pub use params::{ParamStore, TensorId, TensorInfo};

/// Linear layers `(W [out x in], b [out])`.
type Mlp = Vec<(TensorId, TensorId)>;

#[derive(Debug, Clone)]
struct PhiIds {
    mlp1: Mlp,
    mlp2: Mlp,
    w_in: Vec<TensorId>,
    w_out: Vec<TensorId>,
    log_beta_h: TensorId,
    log_beta_q: TensorId,
    /// EvNorm statistics slots for `h` and `q`.
    sites: (usize, usize),
}

#[derive(Debug, Clone)]
struct MessageIds {
    /// Matching weights per AO degree, stacked `[matrix][conv channel][shell rank] x N(l,+)`.
    matching: Vec<Option<TensorId>>,
    attention: Mlp,
    /// Reverse matching per AO degree: `N(l,+) x [conv channel][head][shell rank]`.
    reverse: Vec<Option<TensorId>>,
    phi: PhiIds,
}

#[derive(Debug, Clone)]
struct Ids {
    /// `embed[matrix][l]` maps the reduced degree-`l` channels into `(l, +)`.
    embed: Vec<Vec<Option<TensorId>>>,
    message: Vec<MessageIds>,
    decode: Vec<PhiIds>,
    w_o: TensorId,
    b_z: TensorId,
    b_q: Option<TensorId>,
    w_a: Option<TensorId>,
    b_a: Option<TensorId>,
    charge_w: Option<TensorId>,
    charge_b: Option<TensorId>,
    /// Weights zero-initialized so every residual block starts as the identity.
    zero_init: Vec<TensorId>,
}

fn register_mlp(store: &mut ParamStore, prefix: &str, widths: &[usize]) -> Mlp {
    widths
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            (
                store.register(format!("{prefix}.w{k}"), &[w[1], w[0]]),
                store.register(format!("{prefix}.b{k}"), &[w[1]]),
            )
        })
        .collect()
}

fn mlp_widths(input: usize, hidden: usize, output: usize, depth: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend(std::iter::repeat_n(hidden, depth - 1));
    w.push(output);
    w
}

fn register_phi(
    store: &mut ParamStore,
    prefix: &str,
    config: &ModelConfig,
    site: usize,
    zero_init: &mut Vec<TensorId>,
) -> PhiIds {
    let c = config.hidden_dim;
    let widths = mlp_widths(c, config.mlp_hidden, c, config.mlp_depth);
    let mlp1 = register_mlp(store, &format!("{prefix}.mlp1"), &widths);
    let mut w_in = Vec::new();
    for s in config.irreps.segments() {
        w_in.push(store.register(
            format!("{prefix}.w_in.l{}{}", s.l, parity_tag(s.parity)),
            &[s.n, s.n],
        ));
    }
    let mlp2 = register_mlp(store, &format!("{prefix}.mlp2"), &widths);
    let last = *mlp2.last().expect("mlp depth >= 1");
    zero_init.extend([last.0, last.1]);
    let mut w_out = Vec::new();
    for s in config.irreps.segments() {
        w_out.push(store.register(
            format!("{prefix}.w_out.l{}{}", s.l, parity_tag(s.parity)),
            &[s.n, s.n],
        ));
    }
    PhiIds {
        mlp1,
        mlp2,
        w_in,
        w_out,
        log_beta_h: store.register(format!("{prefix}.log_beta_h"), &[c]),
        log_beta_q: store.register(format!("{prefix}.log_beta_q"), &[c]),
        sites: (site, site + 1),
    }
}

fn parity_tag(p: Parity) -> &'static str {
    match p {
        Parity::Even => "e",
        Parity::Odd => "o",
    }
}

fn build_registry(config: &ModelConfig) -> (ParamStore, Ids) {
    let mut store = ParamStore::new();
    let mut zero_init = Vec::new();
    let h = &config.irreps;
    let names = QmmSet::NAMES;
    let embed = names
        .iter()
        .map(|name| {
            config
                .aux_per_degree
                .iter()
                .enumerate()
                .map(|(l, &na)| {
                    let nh = h.count(l, Parity::Even);
                    (na > 0 && nh > 0)
                        .then(|| store.register(format!("embed.{name}.l{l}"), &[nh, na]))
                })
                .collect()
        })
        .collect();
    let (cc, heads) = (config.n_conv_channels, config.n_attention_heads);
    let att_in = 2 * config.hidden_dim + cc + config.n_radial_basis;
    let mut site = 0;
    let mut message = Vec::new();
    for t in 0..config.n_message_layers {
        let prefix = format!("mp{t}");
        let matching = config
            .shells_per_degree
            .iter()
            .enumerate()
            .map(|(l, &r)| {
                (r > 0).then(|| {
                    store.register(
                        format!("{prefix}.match.l{l}"),
                        &[names.len(), cc, r, h.count(l, Parity::Even)],
                    )
                })
            })
            .collect();
        let attention = register_mlp(
            &mut store,
            &format!("{prefix}.attention"),
            &mlp_widths(att_in, config.attention_hidden, heads, config.mlp_depth),
        );
        let reverse = config
            .shells_per_degree
            .iter()
            .enumerate()
            .map(|(l, &r)| {
                (r > 0).then(|| {
                    store.register(
                        format!("{prefix}.reverse.l{l}"),
                        &[h.count(l, Parity::Even), cc, heads, r],
                    )
                })
            })
            .collect();
        let phi = register_phi(
            &mut store,
            &format!("{prefix}.phi"),
            config,
            site,
            &mut zero_init,
        );
        site += 2;
        message.push(MessageIds {
            matching,
            attention,
            reverse,
            phi,
        });
    }
    let mut decode = Vec::new();
    for k in 0..config.n_decode_layers {
        decode.push(register_phi(
            &mut store,
            &format!("dec{k}.phi"),
            config,
            site,
            &mut zero_init,
        ));
        site += 2;
    }
    let c = config.hidden_dim;
    let w_o = store.register("head.w_o", &[1, c]);
    let b_z = store.register("head.b_z", &[config.elements.len()]);
    zero_init.extend([w_o, b_z]);
    let (mut b_q, mut w_a, mut b_a) = (None, None, None);
    match config.head {
        Head::Energy => {
            let id = store.register("head.b_q", &[config.charge_states.len()]);
            zero_init.push(id);
            b_q = Some(id);
        }
        Head::Fmo => {
            let (wa, ba) = (
                store.register("head.w_a", &[1, c]),
                store.register("head.b_a", &[1]),
            );
            zero_init.extend([wa, ba]);
            w_a = Some(wa);
            b_a = Some(ba);
        }
    }
    let (mut charge_w, mut charge_b) = (None, None);
    if config.physical_terms == PhysicalTerms::Electrostatic {
        let (w, b) = (
            store.register("charges.w", &[1, c]),
            store.register("charges.b", &[1]),
        );
        zero_init.extend([w, b]);
        charge_w = Some(w);
        charge_b = Some(b);
    }
    (
        store,
        Ids {
            embed,
            message,
            decode,
            w_o,
            b_z,
            b_q,
            w_a,
            b_a,
            charge_w,
            charge_b,
            zero_init,
        },
    )
}

/// Model configuration, learnable tensors, and EvNorm running statistics.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Running statistics, two per point-wise interaction (`h` then `q`).
    pub stats: Vec<EvNormStats>,
    /// Charge states with a fitted shift; `None` accepts every configured state.
    pub known_charges: Option<BTreeSet<i32>>,
    ids: Ids,
    coupling: Arc<ChannelCoupling<f64>>,
}

/// Tape and handles of one forward pass.
pub struct ForwardPass<'p> {
    pub tape: Tape<'p>,
    /// Scalar prediction in eV.
    pub output: Var,
    /// Node features after the embedding and after every interaction.
    pub layers: Vec<Var>,
    /// Invariant norms `[channel][atom]` seen by each EvNorm slot.
    pub site_norms: Vec<Var>,
    /// Frontier-orbital attention weights per atom.
    pub attention: Option<Var>,
    /// Predicted partial charges of the electrostatic correction.
    pub charges: Option<Var>,
}

impl ForwardPass<'_> {
    pub fn value(&self) -> f64 {
        self.tape.scalar(self.output)
    }

    /// EvNorm observations per slot, one row of channel norms per atom.
    pub fn norm_observations(&self, natoms: usize) -> Vec<Vec<Vec<f64>>> {
        self.site_norms
            .iter()
            .map(|&v| {
                let x = self.tape.value(v);
                let c = x.len() / natoms.max(1);
                (0..natoms)
                    .map(|a| (0..c).map(|k| x[k * natoms + a]).collect())
                    .collect()
            })
            .collect()
    }
}

fn uniform(rng: &mut ChaCha8Rng, out: &mut [f64], bound: f64) {
    for x in out {
        *x = rng.gen_range(-bound..bound);
    }
}

impl Model {
    /// Fresh model: fan-in uniform weights, zero biases, unit EvNorm `beta`,
    /// zero heads and zero final MLP2 layers.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.init_weights(&mut rng, true);
        Ok(model)
    }

    /// Every tensor random and nonzero (fixtures for equivariance and gradient checks).
    pub fn new_random(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.init_weights(&mut rng, false);
        for t in 0..model.params.tensors.len() {
            let info = model.params.tensors[t].clone();
            let data = model.params.get_mut(TensorId(t));
            if info.shape.len() == 1 {
                uniform(&mut rng, data, 0.3);
            }
        }
        Ok(model)
    }

    /// Registry and statistics for `config`, all tensors zero.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (params, ids) = build_registry(&config);
        let sites = 2 * config.num_interactions();
        let stats = vec![EvNormStats::new(config.hidden_dim); sites];
        let table = CgTable::<f64>::new(config.irreps.lmax());
        let coupling = Arc::new(ChannelCoupling::new(&config.irreps, &table));
        Ok(Model {
            config,
            params,
            stats,
            known_charges: None,
            ids,
            coupling,
        })
    }

    fn init_weights(&mut self, rng: &mut ChaCha8Rng, zero_final: bool) {
        for t in 0..self.params.tensors.len() {
            let info = self.params.tensors[t].clone();
            let data = self.params.get_mut(TensorId(t));
            if info.shape.len() >= 2 {
                let fan_in: usize = if info.name.contains(".match.") {
                    info.shape[3]
                } else {
                    info.shape[1..].iter().product()
                };
                uniform(rng, data, 1.0 / (fan_in.max(1) as f64).sqrt());
            } else {
                data.fill(0.0);
            }
        }
        if zero_final {
            for id in self.ids.zero_init.clone() {
                self.params.get_mut(id).fill(0.0);
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn b_z(&self) -> &[f64] {
        self.params.get(self.ids.b_z)
    }

    pub fn b_z_mut(&mut self) -> &mut [f64] {
        self.params.get_mut(self.ids.b_z)
    }

    pub fn b_q_mut(&mut self) -> Option<&mut [f64]> {
        let id = self.ids.b_q?;
        Some(self.params.get_mut(id))
    }

    pub fn b_q(&self) -> Option<&[f64]> {
        self.ids.b_q.map(|id| self.params.get(id))
    }

    pub fn coupling(&self) -> &ChannelCoupling<f64> {
        &self.coupling
    }

    /// Index of the charge shift used for `charge`, or `UnknownChargeState`.
    pub fn charge_index(&self, charge: i32) -> Result<usize> {
        let known = self
            .known_charges
            .as_ref()
            .is_none_or(|k| k.contains(&charge));
        match self.config.charge_states.iter().position(|&q| q == charge) {
            Some(i) if known => Ok(i),
            _ => Err(Error::UnknownChargeState(charge)),
        }
    }

    pub fn element_index(&self, z: u32) -> Result<usize> {
        self.config
            .elements
            .iter()
            .position(|&e| e == z)
            .ok_or(Error::UnknownElement(z))
    }

    pub fn forward<'p>(&'p self, input: &NetworkInput) -> Result<ForwardPass<'p>> {
        Forward::new(self, input)?.run()
    }

    pub fn predict(&self, input: &NetworkInput) -> Result<f64> {
        Ok(self.forward(input)?.value())
    }

    /// Folds the EvNorm observations of a batch of forward passes into the running statistics.
    pub fn update_stats(&mut self, observations: &[Vec<Vec<Vec<f64>>>]) {
        for (site, stats) in self.stats.iter_mut().enumerate() {
            let rows: Vec<Vec<f64>> = observations
                .iter()
                .flat_map(|o| o[site].iter().cloned())
                .collect();
            stats.update(&rows);
        }
    }
}

struct Forward<'m, 'i> {
    model: &'m Model,
    input: &'i NetworkInput,
    tape: Tape<'m>,
    n: usize,
    spec: IrrepsSpec,
    feat_groups: Arc<Groups>,
    site_norms: Vec<Var>,
}

impl<'m, 'i> Forward<'m, 'i> {
    fn new(model: &'m Model, input: &'i NetworkInput) -> Result<Self> {
        let n = input.num_atoms();
        if n == 0 {
            return Err(Error::InvariantViolation("molecule without atoms".into()));
        }
        if input.aux_spec != model.config.aux_spec()
            || input.plan.channels != model.config.n_conv_channels
            || input.plan.heads != model.config.n_attention_heads
            || input.rbf.len() != input.plan.pairs.len() * model.config.n_radial_basis
        {
            return Err(Error::LayoutMismatch(
                "network input was prepared for a different model configuration".into(),
            ));
        }
        let spec = model.config.irreps.clone();
        let feat_groups = Arc::new(Groups::from_sizes(
            spec.segments()
                .iter()
                .flat_map(|s| std::iter::repeat_n(s.width(), s.n * n)),
        ));
        Ok(Forward {
            model,
            input,
            tape: Tape::new(&model.params.data),
            n,
            spec,
            feat_groups,
            site_norms: Vec::new(),
        })
    }

    fn p(&mut self, id: TensorId) -> Var {
        let t = self.model.params.info(id);
        self.tape.param(t.offset, t.len())
    }

    /// Column-major MLP on `[features x cols]` inputs.
    fn mlp_columns(&mut self, layers: &Mlp, mut x: Var, cols: usize) -> Var {
        for (k, &(w, b)) in layers.iter().enumerate() {
            let shape = self.model.params.info(w).shape.clone();
            let wv = self.p(w);
            let bv = self.p(b);
            let y = self
                .tape
                .matmul(wv, x, shape[0], shape[1], cols, false, false);
            x = self.tape.add(y, bv, Broadcast::Rows(cols));
            if k + 1 < layers.len() {
                x = self.tape.swish(x);
            }
        }
        x
    }

    fn zeros(&mut self, len: usize) -> Var {
        self.tape.constant(vec![0.0; len])
    }

    /// Applies one `n x n` matrix per segment to the channels of `h`.
    fn channel_mix(&mut self, h: Var, weights: &[TensorId]) -> Var {
        let n = self.n;
        let segs: Vec<_> = self.spec.segments().to_vec();
        let mut parts = Vec::with_capacity(segs.len());
        for (s, &w) in segs.iter().zip(weights) {
            let cols = n * s.width();
            let x = self.tape.slice(h, n * s.offset, s.n * cols);
            let wv = self.p(w);
            parts.push(self.tape.matmul(wv, x, s.n, s.n, cols, false, false));
        }
        self.tape.concat(&parts)
    }

    fn norms(&mut self, h: Var) -> Var {
        self.tape.group_norm(
            h,
            self.feat_groups.clone(),
            self.model.config.evnorm_epsilon,
        )
    }

    /// `(h_bar, h_hat)` with the given statistics slot and `log beta`.
    fn evnorm(&mut self, h: Var, norms: Var, site: usize, log_beta: TensorId) -> (Var, Var) {
        let n = self.n;
        let stats = &self.model.stats[site];
        let neg_mean = self.tape.constant(stats.mean.iter().map(|m| -m).collect());
        let inv_std = self
            .tape
            .constant(stats.std.iter().map(|s| 1.0 / s).collect());
        let centred = self.tape.add(norms, neg_mean, Broadcast::Rows(n));
        let bar = self.tape.mul(centred, inv_std, Broadcast::Rows(n));
        let lb = self.p(log_beta);
        let neg = self.tape.scale(lb, -1.0);
        let inv_beta = self.tape.exp(neg);
        let denom = self.tape.add(norms, inv_beta, Broadcast::Rows(n));
        let denom = self.tape.shift(denom, self.model.config.evnorm_epsilon);
        let r = self.tape.recip(denom);
        let hat = self.tape.group_scale(h, r, self.feat_groups.clone());
        self.site_norms.push(norms);
        (bar, hat)
    }

    /// Point-wise interaction `h' = phi(h, g)`; `g = None` means `g = h`.
    fn phi(&mut self, h: Var, g: Option<Var>, ids: &PhiIds) -> Var {
        let n = self.n;
        let norms_h = self.norms(h);
        let (bar_h, hat_h) = self.evnorm(h, norms_h, ids.sites.0, ids.log_beta_h);
        let gate1 = self.mlp_columns(&ids.mlp1, bar_h, n);
        let lin = self.channel_mix(hat_h, &ids.w_in);
        let f = self.tape.group_scale(lin, gate1, self.feat_groups.clone());
        let g = g.unwrap_or(h);
        let coupled = self.tape.coupling(f, g, self.model.coupling.clone(), n);
        let q = self.tape.add(g, coupled, Broadcast::Same);
        let norms_q = self.norms(q);
        let (bar_q, hat_q) = self.evnorm(q, norms_q, ids.sites.1, ids.log_beta_q);
        let gate2 = self.mlp_columns(&ids.mlp2, bar_q, n);
        let lin = self.channel_mix(hat_q, &ids.w_out);
        let upd = self.tape.group_scale(lin, gate2, self.feat_groups.clone());
        self.tape.add(h, upd, Broadcast::Same)
    }

    fn embed(&mut self) -> Var {
        let n = self.n;
        let aux = self.input.aux_spec.clone();
        let segs: Vec<_> = self.spec.segments().to_vec();
        let mut parts = Vec::new();
        for s in &segs {
            let cols = n * s.width();
            let mut acc: Option<Var> = None;
            if s.parity == Parity::Even {
                if let Some(a) = aux.segment(s.l, Parity::Even) {
                    for o in 0..self.input.reduced.len() {
                        let Some(w) = self.model.ids.embed[o][s.l] else {
                            continue;
                        };
                        let x =
                            self.input.reduced[o][n * a.offset..n * (a.offset + a.len())].to_vec();
                        let xv = self.tape.constant(x);
                        let wv = self.p(w);
                        let y = self.tape.matmul(wv, xv, s.n, a.n, cols, false, false);
                        acc = Some(match acc {
                            Some(prev) => self.tape.add(prev, y, Broadcast::Same),
                            None => y,
                        });
                    }
                }
            }
            let part = match acc {
                Some(v) => v,
                None => self.zeros(s.n * cols),
            };
            parts.push(part);
        }
        self.tape.concat(&parts)
    }

    /// AO index of `(atom, l, rank, m)` if the atom carries that function.
    fn ao_lookup(&self) -> std::collections::HashMap<(usize, usize, usize, i32), usize> {
        self.input
            .aos
            .iter()
            .enumerate()
            .map(|(i, a)| ((a.atom, a.l, a.rank, a.m), i))
            .collect()
    }

    fn message_layer(&mut self, h: Var, ids: &MessageIds) -> Var {
        let n = self.n;
        let cfg = &self.model.config;
        let (cc, heads) = (cfg.n_conv_channels, cfg.n_attention_heads);
        let nmat = self.input.reduced.len();
        let plan = self.input.plan.clone();
        let nao = plan.num_aos();
        // matching: per degree, all matrices and conv channels at once
        let mut ys = Vec::new();
        let mut y_offsets = vec![0usize; cfg.shells_per_degree.len()];
        let mut total = 0;
        for (l, w) in ids.matching.iter().enumerate() {
            let Some(w) = *w else { continue };
            let seg = *self.spec.segment(l, Parity::Even).expect("validated");
            let r = cfg.shells_per_degree[l];
            let cols = n * seg.width();
            let x = self.tape.slice(h, n * seg.offset, seg.n * cols);
            let wv = self.p(w);
            let rows = nmat * cc * r;
            ys.push(self.tape.matmul(wv, x, rows, seg.n, cols, false, false));
            y_offsets[l] = total;
            total += rows * cols;
        }
        let y = self.tape.concat(&ys);
        let mut index = vec![usize::MAX; nmat * cc * nao];
        for (mu, a) in self.input.aos.iter().enumerate() {
            let r = cfg.shells_per_degree[a.l];
            let w = 2 * a.l + 1;
            let cols = n * w;
            for o in 0..nmat {
                for i in 0..cc {
                    let row = (o * cc + i) * r + a.rank;
                    index[(o * cc + i) * nao + mu] =
                        y_offsets[a.l] + row * cols + a.atom * w + (a.m + a.l as i32) as usize;
                }
            }
        }
        let rho = self.tape.gather(y, Arc::new(index));
        let msgs = self.tape.block_message(rho, plan.clone());

        // attention on invariant inputs, pair-major rows
        let npairs = plan.pairs.len();
        let c = cfg.hidden_dim;
        let norms_h = self.norms(h);
        let msg_groups =
            Arc::new(Groups::from_sizes(plan.pairs.iter().flat_map(|&(_, a)| {
                std::iter::repeat_n(plan.atom_ranges[a].len(), cc)
            })));
        let msg_norms = self.tape.group_norm(msgs, msg_groups, cfg.evnorm_epsilon);
        let rbf = self.tape.constant(self.input.rbf.clone());
        let src = self.tape.concat(&[norms_h, msg_norms, rbf]);
        let nr = cfg.n_radial_basis;
        let width = 2 * c + cc + nr;
        let mut index = Vec::with_capacity(npairs * width);
        for (p, &(b, a)) in plan.pairs.iter().enumerate() {
            index.extend((0..c).map(|k| k * n + a));
            index.extend((0..c).map(|k| k * n + b));
            index.extend((0..cc).map(|i| c * n + p * cc + i));
            index.extend((0..nr).map(|k| c * n + npairs * cc + p * nr + k));
        }
        let mut x = self.tape.gather(src, Arc::new(index));
        for (k, &(w, b)) in ids.attention.iter().enumerate() {
            let shape = self.model.params.info(w).shape.clone();
            let wv = self.p(w);
            let bv = self.p(b);
            let y = self
                .tape
                .matmul(x, wv, npairs, shape[1], shape[0], false, true);
            x = self.tape.add(y, bv, Broadcast::Cols(shape[0]));
            if k == 0 {
                x = match cfg.attention_renorm {
                    AttentionRenorm::Off => x,
                    AttentionRenorm::NodeNorm => {
                        self.tape.row_norm(x, shape[0], RowNormKind::Rms, 1e-6)
                    }
                    AttentionRenorm::LayerNorm => {
                        self.tape.row_norm(x, shape[0], RowNormKind::Layer, 1e-6)
                    }
                };
            }
            x = self.tape.swish(x);
        }
        let agg = self.tape.aggregate(msgs, x, plan);

        // reverse matching back onto the (l, +) channels
        let lookup = self.ao_lookup();
        let mut g_parts = Vec::new();
        let segs: Vec<_> = self.spec.segments().to_vec();
        for s in &segs {
            let cols = n * s.width();
            let rev = (s.parity == Parity::Even)
                .then(|| ids.reverse.get(s.l).copied().flatten())
                .flatten();
            let Some(w) = rev else {
                let z = self.zeros(s.n * cols);
                g_parts.push(z);
                continue;
            };
            let r = cfg.shells_per_degree[s.l];
            let rows = cc * heads * r;
            let wdt = s.width();
            let mut index = vec![usize::MAX; rows * cols];
            for i in 0..cc {
                for j in 0..heads {
                    for rank in 0..r {
                        let row = (i * heads + j) * r + rank;
                        for a in 0..n {
                            for (k, m) in (-(s.l as i32)..=s.l as i32).enumerate() {
                                if let Some(&mu) = lookup.get(&(a, s.l, rank, m)) {
                                    index[row * cols + a * wdt + k] = (mu * cc + i) * heads + j;
                                }
                            }
                        }
                    }
                }
            }
            let zmat = self.tape.gather(agg, Arc::new(index));
            let wv = self.p(w);
            g_parts.push(self.tape.matmul(wv, zmat, s.n, rows, cols, false, false));
        }
        let g = self.tape.concat(&g_parts);
        self.phi(h, Some(g), &ids.phi)
    }

    fn run(mut self) -> Result<ForwardPass<'m>> {
        let model = self.model;
        let ids = &model.ids;
        let cfg = &model.config;
        let n = self.n;
        let charge_idx = match cfg.head {
            Head::Energy => Some(model.charge_index(self.input.charge)?),
            Head::Fmo => None,
        };
        let elem_idx = self
            .input
            .atomic_numbers
            .iter()
            .map(|&z| model.element_index(z))
            .collect::<Result<Vec<_>>>()?;

        let mut h = self.embed();
        let mut layers = vec![h];
        let mut dec = ids.decode.iter();
        for (t, m) in ids.message.iter().enumerate() {
            h = self.message_layer(h, m);
            layers.push(h);
            for _ in 0..cfg.decode_schedule[t] {
                h = self.phi(h, None, dec.next().expect("schedule validated"));
                layers.push(h);
            }
        }

        let c = cfg.hidden_dim;
        let norms = self.norms(h);
        let wo = self.p(ids.w_o);
        let e_atom = self.tape.matmul(wo, norms, 1, c, n, false, false);
        let bz_all = self.p(ids.b_z);
        let bz = self.tape.gather(bz_all, Arc::new(elem_idx));
        let e_atom = self.tape.add(e_atom, bz, Broadcast::Same);
        let mut attention = None;
        let mut output = match cfg.head {
            Head::Energy => {
                let total = self.tape.sum(e_atom);
                let bq_all = self.p(ids.b_q.expect("energy head"));
                let bq = self.tape.slice(bq_all, charge_idx.expect("energy head"), 1);
                self.tape.add(total, bq, Broadcast::Same)
            }
            Head::Fmo => {
                let wa = self.p(ids.w_a.expect("fmo head"));
                let ba = self.p(ids.b_a.expect("fmo head"));
                let s = self.tape.matmul(wa, norms, 1, c, n, false, false);
                let s = self.tape.add(s, ba, Broadcast::Rows(n));
                let s = self.tape.softplus(s);
                let denom = self.tape.sum(s);
                let d = self.tape.scalar(denom);
                if !(d > 0.0) {
                    return Err(Error::DegenerateAttention(d));
                }
                let inv = self.tape.recip(denom);
                let a = self.tape.mul(s, inv, Broadcast::Rows(n));
                attention = Some(a);
                let weighted = self.tape.mul(e_atom, a, Broadcast::Same);
                self.tape.sum(weighted)
            }
        };
        let mut charges = None;
        if cfg.physical_terms == PhysicalTerms::Electrostatic {
            let w = self.p(ids.charge_w.expect("electrostatic head"));
            let b = self.p(ids.charge_b.expect("electrostatic head"));
            let raw = self.tape.matmul(w, norms, 1, c, n, false, false);
            let raw = self.tape.add(raw, b, Broadcast::Rows(n));
            let centre: Vec<f64> = (0..n * n)
                .map(|k| if k / n == k % n { 1.0 } else { 0.0 } - 1.0 / n as f64)
                .collect();
            let centre = self.tape.constant(centre);
            let dq = self.tape.matmul(centre, raw, n, n, 1, false, false);
            let low = self.tape.constant(self.input.mulliken.clone());
            let q = self.tape.add(dq, low, Broadcast::Same);
            let kern = self.tape.constant(self.input.coulomb.clone());
            let kq = self.tape.matmul(kern, q, n, n, 1, false, false);
            let qkq = self.tape.mul(q, kq, Broadcast::Same);
            let e = self.tape.sum(qkq);
            let e = self.tape.scale(e, 0.5 * HARTREE_TO_EV);
            output = self.tape.add(output, e, Broadcast::Same);
            charges = Some(q);
        }
        Ok(ForwardPass {
            tape: self.tape,
            output,
            layers,
            site_norms: self.site_norms,
            attention,
            charges,
        })
    }
}

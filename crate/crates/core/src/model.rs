//! The graph transformer: long-range embedding injection, token building,
//! multi-head self-attention encoder, readout and classifier head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutKind {
    Mean,
    Max,
    Sum,
    Sort,
    Clustering,
}

impl std::str::FromStr for ReadoutKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(ReadoutKind::Mean),
            "max" => Ok(ReadoutKind::Max),
            "sum" => Ok(ReadoutKind::Sum),
            "sort" => Ok(ReadoutKind::Sort),
            "clustering" => Ok(ReadoutKind::Clustering),
            other => Err(Error::invalid(format!("unknown readout {other:?}"))),
        }
    }
}

/// Encoder block layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Pre-norm block: `h = z + MHA(LN(z))`, `z' = h + FFN(LN(h))`.
    Vanilla,
    /// Attention only: `z' = W_o [head_1 | … | head_M]`.
    Bare,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hop count `K` of the long-range embedding.
    pub k_hops: usize,
    /// Width of the injected embedding; 0 disables injection.
    pub k_prime: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub readout: ReadoutKind,
    /// Rows kept by the sort readout; `None` keeps `ceil(N/2)`.
    pub sort_keep: Option<usize>,
    pub clusters: usize,
    pub classes: usize,
    pub mlp_hidden: usize,
    pub encoder: EncoderKind,
    /// Layer norm on the encoder output (vanilla encoder only).
    pub final_norm: bool,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k_hops: 16,
            k_prime: 32,
            d_model: 128,
            layers: 2,
            heads: 4,
            readout: ReadoutKind::Clustering,
            sort_keep: None,
            clusters: 10,
            classes: 2,
            mlp_hidden: 64,
            encoder: EncoderKind::Vanilla,
            final_norm: true,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("k_hops", self.k_hops),
            ("d_model", self.d_model),
            ("layers", self.layers),
            ("heads", self.heads),
            ("clusters", self.clusters),
            ("classes", self.classes),
            ("mlp_hidden", self.mlp_hidden),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("model.{name} must be at least 1")));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::invalid(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.readout == ReadoutKind::Clustering && self.clusters > self.d_model {
            return Err(Error::invalid(format!(
                "{} orthonormal cluster centers do not fit in d_model {}",
                self.clusters, self.d_model
            )));
        }
        if self.sort_keep == Some(0) {
            return Err(Error::invalid("sort_keep must be at least 1"));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::invalid("layer_norm_eps must be positive"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn sort_keep_for(&self, num_nodes: usize) -> usize {
        self.sort_keep.unwrap_or(num_nodes.div_ceil(2))
    }

    fn readout_dim(&self, num_nodes: usize) -> usize {
        match self.readout {
            ReadoutKind::Mean | ReadoutKind::Max | ReadoutKind::Sum => self.d_model,
            ReadoutKind::Sort => self.sort_keep_for(num_nodes) * self.d_model,
            ReadoutKind::Clustering => self.clusters * self.d_model,
        }
    }
}

/// Post-softmax attention matrices, indexed `[layer][head]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionRecord {
    pub layers: Vec<Vec<Matrix>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionReduction {
    /// Mean over the heads of the last layer.
    MeanLastLayer,
    Head {
        layer: usize,
        head: usize,
    },
}

pub fn export_attention(record: &AttentionRecord, reduction: AttentionReduction) -> Result<Matrix> {
    let last = record
        .layers
        .last()
        .filter(|heads| !heads.is_empty())
        .ok_or_else(|| Error::invalid("attention record is empty"))?;
    match reduction {
        AttentionReduction::MeanLastLayer => {
            let mut acc = Matrix::zeros(last[0].rows(), last[0].cols());
            for h in last {
                acc.add_assign(h);
            }
            Ok(acc.scale(1.0 / last.len() as f64))
        }
        AttentionReduction::Head { layer, head } => record
            .layers
            .get(layer)
            .and_then(|l| l.get(head))
            .cloned()
            .ok_or_else(|| Error::invalid(format!("no attention for layer {layer}, head {head}"))),
    }
}

#[derive(Clone, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct FeedForward {
    ln1: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
    ff1: Linear,
    ff2: Linear,
}

#[derive(Clone, Debug)]
struct LayerParams {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    /// Absent for [`EncoderKind::Bare`].
    block: Option<FeedForward>,
}

#[derive(Clone, Debug)]
struct ParamIds {
    inject: Option<Linear>,
    input: Linear,
    layers: Vec<LayerParams>,
    final_norm: Option<(ParamId, ParamId)>,
    centers: Option<ParamId>,
    mlp1: Linear,
    mlp2: Linear,
}

/// Recorded forward pass of one graph.
pub struct ForwardOutput {
    pub logits: Var,
    pub probs: Var,
    pub attention: AttentionRecord,
}

#[derive(Clone, Debug)]
pub struct AlterModel {
    config: ModelConfig,
    num_nodes: usize,
    feature_dim: usize,
    store: ParamStore,
    ids: ParamIds,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn xavier(&mut self, rows: usize, cols: usize) -> Matrix {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        Matrix::from_fn(rows, cols, |_, _| self.rng.random_range(-bound..bound))
    }

    /// Rows orthonormalized by Gram–Schmidt.
    fn orthonormal_rows(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let mut m = Matrix::zeros(rows, cols);
        let mut filled = 0;
        let mut attempts = 0;
        while filled < rows {
            attempts += 1;
            if attempts > rows * 10 {
                return Err(Error::invalid("could not orthonormalize cluster centers"));
            }
            let mut v: Vec<f64> = (0..cols).map(|_| self.rng.random_range(-1.0..1.0)).collect();
            for r in 0..filled {
                let u = m.row(r);
                let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= dot * ui;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-8 {
                continue;
            }
            for (d, s) in m.row_mut(filled).iter_mut().zip(&v) {
                *d = s / norm;
            }
            filled += 1;
        }
        Ok(m)
    }
}

fn linear(store: &mut ParamStore, init: &mut Init, name: &str, out: usize, inp: usize) -> Result<Linear> {
    Ok(Linear {
        w: store.add(format!("{name}.weight"), init.xavier(out, inp))?,
        b: store.add(format!("{name}.bias"), Matrix::zeros(1, out))?,
    })
}

fn norm(store: &mut ParamStore, name: &str, dim: usize) -> Result<(ParamId, ParamId)> {
    Ok((
        store.add(format!("{name}.gain"), Matrix::filled(1, dim, 1.0))?,
        store.add(format!("{name}.bias"), Matrix::zeros(1, dim))?,
    ))
}

impl AlterModel {
    /// Builds a freshly initialized model for graphs with `num_nodes` nodes
    /// and `feature_dim`-wide node features.
    pub fn new(config: ModelConfig, num_nodes: usize, feature_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_nodes == 0 {
            return Err(Error::invalid("model needs at least one node"));
        }
        if config.readout == ReadoutKind::Sort && config.sort_keep_for(num_nodes) > num_nodes {
            return Err(Error::invalid(format!(
                "sort_keep {} exceeds {num_nodes} nodes",
                config.sort_keep_for(num_nodes)
            )));
        }
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let mut store = ParamStore::new();
        let d = config.d_model;

        let inject = if config.k_prime > 0 {
            Some(linear(&mut store, &mut init, "inject", config.k_prime, config.k_hops)?)
        } else {
            None
        };
        let input = linear(&mut store, &mut init, "input", d, feature_dim + config.k_prime)?;

        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("layer{l}");
            let block_norms = if config.encoder == EncoderKind::Vanilla {
                Some((
                    norm(&mut store, &format!("{p}.ln1"), d)?,
                    norm(&mut store, &format!("{p}.ln2"), d)?,
                ))
            } else {
                None
            };
            let wq = store.add(format!("{p}.attn.wq"), init.xavier(d, d))?;
            let wk = store.add(format!("{p}.attn.wk"), init.xavier(d, d))?;
            let wv = store.add(format!("{p}.attn.wv"), init.xavier(d, d))?;
            let wo = store.add(format!("{p}.attn.wo"), init.xavier(d, d))?;
            let block = match block_norms {
                Some((ln1, ln2)) => Some(FeedForward {
                    ln1,
                    ln2,
                    ff1: linear(&mut store, &mut init, &format!("{p}.ff1"), 2 * d, d)?,
                    ff2: linear(&mut store, &mut init, &format!("{p}.ff2"), d, 2 * d)?,
                }),
                None => None,
            };
            layers.push(LayerParams { wq, wk, wv, wo, block });
        }

        let final_norm = if config.final_norm && config.encoder == EncoderKind::Vanilla {
            Some(norm(&mut store, "final_norm", d)?)
        } else {
            None
        };
        let centers = if config.readout == ReadoutKind::Clustering {
            Some(store.add("readout.centers", init.orthonormal_rows(config.clusters, d)?)?)
        } else {
            None
        };
        let mlp1 = linear(
            &mut store,
            &mut init,
            "head.fc1",
            config.mlp_hidden,
            config.readout_dim(num_nodes),
        )?;
        let mlp2 = linear(&mut store, &mut init, "head.fc2", config.classes, config.mlp_hidden)?;

        Ok(AlterModel {
            config,
            num_nodes,
            feature_dim,
            store,
            ids: ParamIds {
                inject,
                input,
                layers,
                final_norm,
                centers,
                mlp1,
                mlp2,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Replaces every parameter value; names and shapes must match.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.store.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.store.len(),
                other.len()
            )));
        }
        for (mine, theirs) in self.store.iter_mut().zip(other.iter()) {
            if mine.name != theirs.name || mine.value.shape() != theirs.value.shape() {
                return Err(Error::invalid(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    mine.name,
                    mine.value.shape(),
                    theirs.name,
                    theirs.value.shape()
                )));
            }
            mine.value = theirs.value.clone();
        }
        Ok(())
    }

    fn apply_linear(&self, store: &ParamStore, tape: &mut Tape, x: Var, lin: &Linear) -> Result<Var> {
        let w = tape.param(store, lin.w);
        let b = tape.param(store, lin.b);
        let y = tape.matmul_nt(x, w)?;
        tape.add_row(y, b)
    }

    /// `Ê = E Wᵀ + b`; `None` when injection is disabled (`k' = 0`).
    pub fn inject_embedding(&self, store: &ParamStore, tape: &mut Tape, e: Var) -> Result<Option<Var>> {
        let cols = tape.value(e).cols();
        if cols != self.config.k_hops {
            return Err(Error::shape(
                "inject_embedding",
                format!("embedding has {cols} hops, model expects {}", self.config.k_hops),
            ));
        }
        match &self.ids.inject {
            Some(lin) => Ok(Some(self.apply_linear(store, tape, e, lin)?)),
            None => Ok(None),
        }
    }

    /// `[X | Ê]` before the input projection.
    pub fn concat_tokens(&self, tape: &mut Tape, x: Var, injected: Option<Var>) -> Result<Var> {
        match injected {
            Some(e) => tape.concat_cols(x, e),
            None => Ok(x),
        }
    }

    pub fn project_tokens(&self, store: &ParamStore, tape: &mut Tape, tokens: Var) -> Result<Var> {
        let cols = tape.value(tokens).cols();
        let expected = self.feature_dim + self.config.k_prime;
        if cols != expected {
            return Err(Error::shape(
                "build_tokens",
                format!("tokens have {cols} columns, model expects {expected}"),
            ));
        }
        self.apply_linear(store, tape, tokens, &self.ids.input)
    }

    fn attention(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        x: Var,
        layer: &LayerParams,
        record: &mut Vec<Matrix>,
    ) -> Result<Var> {
        let dh = self.config.head_dim();
        let wq = tape.param(store, layer.wq);
        let wk = tape.param(store, layer.wk);
        let wv = tape.param(store, layer.wv);
        let wo = tape.param(store, layer.wo);
        let q = tape.matmul_nt(x, wq)?;
        let k = tape.matmul_nt(x, wk)?;
        let v = tape.matmul_nt(x, wv)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads: Option<Var> = None;
        for h in 0..self.config.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scores)?;
            record.push(tape.value(attn).clone());
            let out = tape.matmul(attn, vh)?;
            heads = Some(match heads {
                Some(acc) => tape.concat_cols(acc, out)?,
                None => out,
            });
        }
        let joined = heads.expect("at least one head");
        tape.matmul_nt(joined, wo)
    }

    /// Runs the `L`-layer encoder on projected tokens (`N × d_model`).
    pub fn encode(&self, store: &ParamStore, tape: &mut Tape, tokens: Var) -> Result<(Var, AttentionRecord)> {
        let eps = self.config.layer_norm_eps;
        let mut z = tokens;
        let mut record = AttentionRecord::default();
        for layer in &self.ids.layers {
            let mut heads = Vec::with_capacity(self.config.heads);
            z = match &layer.block {
                None => self.attention(store, tape, z, layer, &mut heads)?,
                Some(ff) => {
                    let g1 = tape.param(store, ff.ln1.0);
                    let b1 = tape.param(store, ff.ln1.1);
                    let normed = tape.layer_norm(z, g1, b1, eps)?;
                    let attended = self.attention(store, tape, normed, layer, &mut heads)?;
                    let h = tape.add(z, attended)?;
                    let g2 = tape.param(store, ff.ln2.0);
                    let b2 = tape.param(store, ff.ln2.1);
                    let normed = tape.layer_norm(h, g2, b2, eps)?;
                    let hidden = self.apply_linear(store, tape, normed, &ff.ff1)?;
                    let hidden = tape.relu(hidden);
                    let out = self.apply_linear(store, tape, hidden, &ff.ff2)?;
                    tape.add(h, out)?
                }
            };
            record.layers.push(heads);
        }
        if let Some((gain, bias)) = self.ids.final_norm {
            let g = tape.param(store, gain);
            let b = tape.param(store, bias);
            z = tape.layer_norm(z, g, b, eps)?;
        }
        tape.value(z).ensure_finite("encoder output")?;
        Ok((z, record))
    }

    pub fn readout(&self, store: &ParamStore, tape: &mut Tape, z: Var) -> Result<Var> {
        match self.config.readout {
            ReadoutKind::Mean => tape.mean_rows(z),
            ReadoutKind::Max => tape.max_rows(z),
            ReadoutKind::Sum => Ok(tape.sum_rows(z)),
            ReadoutKind::Sort => {
                let zv = tape.value(z);
                let n = zv.rows();
                let keep = self.config.sort_keep_for(n);
                if keep > n {
                    return Err(Error::invalid(format!("sort_keep {keep} exceeds {n} nodes")));
                }
                let key = zv.cols() - 1;
                let mut order: Vec<usize> = (0..n).collect();
                // stable: equal keys keep node order
                order.sort_by(|&a, &b| zv.get(b, key).total_cmp(&zv.get(a, key)));
                order.truncate(keep);
                let top = tape.gather_rows(z, order)?;
                Ok(tape.flatten(top))
            }
            ReadoutKind::Clustering => {
                let c = tape.param(store, self.ids.centers.expect("clustering readout has centers"));
                let logits = tape.matmul_nt(z, c)?;
                let assign = tape.softmax_rows(logits)?;
                let pooled = tape.matmul_tn(assign, z)?;
                Ok(tape.flatten(pooled))
            }
        }
    }

    /// Two-layer MLP with ReLU, then softmax. Returns `(logits, probs)`.
    pub fn classify(&self, store: &ParamStore, tape: &mut Tape, h: Var) -> Result<(Var, Var)> {
        tape.value(h).ensure_finite("readout")?;
        let hidden = self.apply_linear(store, tape, h, &self.ids.mlp1)?;
        let hidden = tape.relu(hidden);
        let logits = self.apply_linear(store, tape, hidden, &self.ids.mlp2)?;
        tape.value(logits).ensure_finite("classifier logits")?;
        let probs = tape.softmax_rows(logits)?;
        Ok((logits, probs))
    }

    /// Full forward pass of one graph recorded on `tape`, reading parameters
    /// from `store` (normally [`AlterModel::store`]).
    pub fn forward_with(&self, store: &ParamStore, tape: &mut Tape, x: &Matrix, e: &Matrix) -> Result<ForwardOutput> {
        if x.shape() != (self.num_nodes, self.feature_dim) {
            return Err(Error::shape(
                "forward",
                format!(
                    "node features {:?}, model expects {:?}",
                    x.shape(),
                    (self.num_nodes, self.feature_dim)
                ),
            ));
        }
        if e.rows() != self.num_nodes {
            return Err(Error::shape(
                "forward",
                format!("embedding has {} rows for {} nodes", e.rows(), self.num_nodes),
            ));
        }
        let xv = tape.input(x.clone());
        let ev = tape.input(e.clone());
        let injected = self.inject_embedding(store, tape, ev)?;
        let tokens = self.concat_tokens(tape, xv, injected)?;
        let tokens = self.project_tokens(store, tape, tokens)?;
        let (z, attention) = self.encode(store, tape, tokens)?;
        let h = self.readout(store, tape, z)?;
        let (logits, probs) = self.classify(store, tape, h)?;
        Ok(ForwardOutput {
            logits,
            probs,
            attention,
        })
    }

    /// Logits and attention for one graph.
    pub fn forward(&self, x: &Matrix, e: &Matrix) -> Result<(Vec<f64>, AttentionRecord)> {
        let mut tape = Tape::new();
        let out = self.forward_with(&self.store, &mut tape, x, e)?;
        Ok((tape.value(out.logits).as_slice().to_vec(), out.attention))
    }

    /// Class probabilities for one graph.
    pub fn predict(&self, x: &Matrix, e: &Matrix) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let out = self.forward_with(&self.store, &mut tape, x, e)?;
        Ok(tape.value(out.probs).as_slice().to_vec())
    }

    /// Cross-entropy of one labeled graph and its parameter gradients.
    pub fn loss_and_grads_with(
        &self,
        store: &ParamStore,
        x: &Matrix,
        e: &Matrix,
        label: usize,
    ) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new();
        let out = self.forward_with(store, &mut tape, x, e)?;
        let loss = tape.nll(out.probs, label)?;
        let value = tape.value(loss).get(0, 0);
        if !value.is_finite() {
            return Err(Error::NonFinite("cross-entropy loss".into()));
        }
        Ok((value, tape.backward(loss, store.len())?))
    }

    pub fn loss_and_grads(&self, x: &Matrix, e: &Matrix, label: usize) -> Result<(f64, Gradients)> {
        self.loss_and_grads_with(&self.store, x, e, label)
    }
}

//! The OpinionXf encoder.
//!
//! Sequence layout per record: the presentation token (fused when spectral
//! fusion is on) at position 0, the quantum token at position 1 when
//! enabled, then one token per question. A question token is its answer
//! embedding plus a question-identity embedding; learned positional
//! encodings are added once, after fusion. Pre-norm encoder blocks follow,
//! and head `q` reads the contextual token of question `q`.

use serde::{Deserialize, Serialize};

use crate::embeddings::AnswerEmbeddingTable;
use crate::error::{Error, Result};
use crate::fusion::{self, FusionVars};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::Tensor;
use crate::quantum;
use crate::rng::SeededRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Feed-forward width; `4 * d_model` when unset.
    pub ff_width: Option<usize>,
    /// Filled from the vocabulary when left empty.
    pub vocab_sizes: Vec<usize>,
    pub embedding_dim: usize,
    pub use_fusion: bool,
    pub use_quantum: bool,
    pub use_contrastive: bool,
    /// Retained low-frequency bins; `d_model / 4` when unset.
    pub fusion_bands: Option<usize>,
    pub quantum_features: [usize; 2],
    /// When false the answer embeddings keep their initial values.
    pub train_answer_embeddings: bool,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_layers: 4,
            n_heads: 4,
            ff_width: None,
            vocab_sizes: Vec::new(),
            embedding_dim: crate::embeddings::DEFAULT_DIM,
            use_fusion: false,
            use_quantum: false,
            use_contrastive: false,
            fusion_bands: None,
            quantum_features: [0, 1],
            train_answer_embeddings: true,
            dropout: 0.1,
            seed: 17,
        }
    }
}

impl ModelConfig {
    pub fn questions(&self) -> usize {
        self.vocab_sizes.len()
    }

    pub fn ff(&self) -> usize {
        self.ff_width.unwrap_or(4 * self.d_model)
    }

    pub fn bands(&self) -> usize {
        self.fusion_bands.unwrap_or(self.d_model / 4)
    }

    /// Special tokens ahead of the question tokens.
    pub fn specials(&self) -> usize {
        1 + usize::from(self.use_quantum)
    }

    pub fn seq_len(&self) -> usize {
        self.specials() + self.questions()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.vocab_sizes.is_empty() {
            return bad("model needs at least one question".into());
        }
        if let Some(v) = self.vocab_sizes.iter().find(|&&v| v < 2) {
            return bad(format!("question vocabulary of size {v}; need at least 2"));
        }
        if self.embedding_dim == 0 || self.ff() == 0 {
            return bad("embedding_dim and ff_width must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.use_fusion {
            fusion::check_bands(self.bands(), self.d_model)?;
        }
        if self.use_quantum {
            quantum::check_features(self.quantum_features, self.d_model)?;
        }
        Ok(())
    }
}

enum Init {
    Uniform { fan_in: usize },
    Ones,
    Zeros,
    Answers(usize),
}

struct ParamSpec {
    name: String,
    shape: [usize; 2],
    init: Init,
}

fn param_specs(c: &ModelConfig) -> Vec<ParamSpec> {
    let d = c.d_model;
    let mut specs = Vec::new();
    let mut push = |name: String, shape: [usize; 2], init: Init| {
        specs.push(ParamSpec { name, shape, init });
    };
    let uni = |fan_in| Init::Uniform { fan_in };
    for (q, &v) in c.vocab_sizes.iter().enumerate() {
        push(format!("tokens.answer.{q}"), [v, d], Init::Answers(q));
    }
    push("tokens.question".into(), [c.questions(), d], uni(d));
    push("tokens.position".into(), [c.seq_len(), d], uni(d));
    push("presentation.w".into(), [c.embedding_dim, d], uni(c.embedding_dim));
    push("presentation.b".into(), [1, d], uni(c.embedding_dim));
    if c.use_fusion {
        let k = c.bands();
        push("fusion.w1".into(), [2 * k, 2 * k], uni(2 * k));
        push("fusion.b1".into(), [1, 2 * k], uni(2 * k));
        push("fusion.w2".into(), [2 * k, k], uni(2 * k));
        push("fusion.b2".into(), [1, k], uni(2 * k));
    }
    if c.use_quantum {
        push("quantum.w".into(), [1, d], uni(1));
        push("quantum.b".into(), [1, d], uni(1));
    }
    for l in 0..c.n_layers {
        let p = |s: &str| format!("encoder.{l}.{s}");
        push(p("ln1.gain"), [1, d], Init::Ones);
        push(p("ln1.bias"), [1, d], Init::Zeros);
        for m in ["q", "k", "v", "o"] {
            push(p(&format!("attn.w{m}")), [d, d], uni(d));
            push(p(&format!("attn.b{m}")), [1, d], uni(d));
        }
        push(p("ln2.gain"), [1, d], Init::Ones);
        push(p("ln2.bias"), [1, d], Init::Zeros);
        push(p("ff.w1"), [d, c.ff()], uni(d));
        push(p("ff.b1"), [1, c.ff()], uni(d));
        push(p("ff.w2"), [c.ff(), d], uni(c.ff()));
        push(p("ff.b2"), [1, d], uni(c.ff()));
    }
    for (q, &v) in c.vocab_sizes.iter().enumerate() {
        push(format!("head.{q}.w"), [d, v], uni(d));
        push(format!("head.{q}.b"), [1, v], uni(d));
    }
    specs
}

/// The shared `E x d_model` projection used to initialise answer tokens.
pub fn answer_projection(config: &ModelConfig, seed: u64) -> Tensor {
    let mut rng = SeededRng::derived(seed, "answer-projection");
    let bound = 1.0 / (config.embedding_dim as f64).sqrt();
    Tensor::from_fn(config.embedding_dim, config.d_model, |_, _| {
        rng.uniform_in(-bound, bound)
    })
}

#[derive(Clone, Copy, Debug)]
struct LayerIds {
    ln1: (usize, usize),
    wq: (usize, usize),
    wk: (usize, usize),
    wv: (usize, usize),
    wo: (usize, usize),
    ln2: (usize, usize),
    ff1: (usize, usize),
    ff2: (usize, usize),
}

/// Parameter indices by role.
#[derive(Clone, Debug)]
struct Layout {
    answers: Vec<usize>,
    question: usize,
    position: usize,
    presentation: (usize, usize),
    fusion: Option<[usize; 4]>,
    quantum: Option<(usize, usize)>,
    layers: Vec<LayerIds>,
    heads: Vec<(usize, usize)>,
}

impl Layout {
    fn new(config: &ModelConfig, names: &[String]) -> Result<Self> {
        let id = |n: &str| {
            names
                .iter()
                .position(|x| x == n)
                .ok_or_else(|| Error::Config(format!("missing parameter {n}")))
        };
        let pair = |a: &str, b: &str| Ok::<_, Error>((id(a)?, id(b)?));
        let q = config.questions();
        Ok(Self {
            answers: (0..q)
                .map(|i| id(&format!("tokens.answer.{i}")))
                .collect::<Result<_>>()?,
            question: id("tokens.question")?,
            position: id("tokens.position")?,
            presentation: pair("presentation.w", "presentation.b")?,
            fusion: if config.use_fusion {
                Some([
                    id("fusion.w1")?,
                    id("fusion.b1")?,
                    id("fusion.w2")?,
                    id("fusion.b2")?,
                ])
            } else {
                None
            },
            quantum: if config.use_quantum {
                Some(pair("quantum.w", "quantum.b")?)
            } else {
                None
            },
            layers: (0..config.n_layers)
                .map(|l| {
                    let p = |s: &str| format!("encoder.{l}.{s}");
                    let lin = |m: &str| pair(&p(&format!("attn.w{m}")), &p(&format!("attn.b{m}")));
                    Ok(LayerIds {
                        ln1: pair(&p("ln1.gain"), &p("ln1.bias"))?,
                        wq: lin("q")?,
                        wk: lin("k")?,
                        wv: lin("v")?,
                        wo: lin("o")?,
                        ln2: pair(&p("ln2.gain"), &p("ln2.bias"))?,
                        ff1: pair(&p("ff.w1"), &p("ff.b1"))?,
                        ff2: pair(&p("ff.w2"), &p("ff.b2"))?,
                    })
                })
                .collect::<Result<_>>()?,
            heads: (0..q)
                .map(|i| pair(&format!("head.{i}.w"), &format!("head.{i}.b")))
                .collect::<Result<_>>()?,
        })
    }
}

/// All trainable weights plus the configuration they were built for.
#[derive(Clone, Debug)]
pub struct OpinionXfParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    layout: Layout,
}

impl OpinionXfParams {
    /// Rebuild from named tensors, checking names and shapes against the
    /// configuration.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != named.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                named.len()
            )));
        }
        for (s, (n, t)) in specs.iter().zip(&named) {
            if &s.name != n || s.shape != t.shape() {
                return Err(Error::Config(format!(
                    "parameter {n} {:?} does not match expected {} {:?}",
                    t.shape(),
                    s.name,
                    s.shape
                )));
            }
            t.ensure_finite(n)?;
        }
        let (names, tensors): (Vec<_>, Vec<_>) = named.into_iter().unzip();
        let layout = Layout::new(&config, &names)?;
        Ok(Self {
            config,
            names,
            tensors,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn shapes(&self) -> Vec<[usize; 2]> {
        self.tensors.iter().map(Tensor::shape).collect()
    }

    /// Per tensor, whether the optimizer may update it.
    pub fn trainable_mask(&self) -> Vec<bool> {
        self.names
            .iter()
            .map(|n| self.config.train_answer_embeddings || !n.starts_with("tokens.answer."))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn answer_row(&self, question: usize, id: usize) -> &[f64] {
        self.tensors[self.layout.answers[question]].row(id)
    }
}

/// Seeded initialisation.
///
/// Answer tokens are the table rows times [`answer_projection`]; layer-norm
/// gains start at 1 and their biases at 0; everything else is drawn from
/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn init_params(
    config: &ModelConfig,
    table: &AnswerEmbeddingTable,
    seed: u64,
) -> Result<OpinionXfParams> {
    config.validate()?;
    if table.rows.len() != config.questions()
        || table
            .rows
            .iter()
            .zip(&config.vocab_sizes)
            .any(|(rows, &v)| rows.len() != v)
    {
        return Err(Error::Config(
            "answer table does not match the model's vocabulary sizes".into(),
        ));
    }
    if table.dim != config.embedding_dim {
        return Err(Error::Config(format!(
            "answer table dimension {} differs from embedding_dim {}",
            table.dim, config.embedding_dim
        )));
    }
    let projection = answer_projection(config, seed);
    let mut rng = SeededRng::derived(seed, "init");
    let named = param_specs(config)
        .into_iter()
        .map(|spec| {
            let [r, c] = spec.shape;
            let t = match spec.init {
                Init::Uniform { fan_in } => {
                    let b = 1.0 / (fan_in as f64).sqrt();
                    Tensor::from_fn(r, c, |_, _| rng.uniform_in(-b, b))
                }
                Init::Ones => Tensor::filled(r, c, 1.0),
                Init::Zeros => Tensor::zeros(r, c),
                Init::Answers(q) => {
                    let rows = Tensor::from_rows(&table.rows[q]).expect("table rows finite");
                    rows.matmul(&projection)
                }
            };
            (spec.name, t)
        })
        .collect();
    OpinionXfParams::from_named(config.clone(), named)
}

/// Model input for one record.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub pre_ids: Vec<usize>,
    pub post_ids: Vec<usize>,
    pub deck: Vec<f64>,
    pub topic: String,
}

#[derive(Default)]
pub struct ForwardOptions<'a> {
    /// Enables dropout (when configured) using this generator.
    pub dropout_rng: Option<&'a mut SeededRng>,
    /// Replace the circuit expectations by these constants, one per example.
    pub pinned_quantum: Option<&'a [f64]>,
}

pub struct ForwardPass {
    /// Per question, `B x V_q` logits.
    pub logits: Vec<Var>,
    /// `(u, v)` alignment summaries when fusion is on.
    pub summaries: Option<(Var, Var)>,
    /// Circuit expectations used for the quantum token.
    pub quantum_expectations: Option<Vec<f64>>,
    /// Presentation token after fusion (or projection alone).
    pub presentation: Var,
    pub param_vars: Vec<Var>,
}

fn check_examples(config: &ModelConfig, examples: &[&Example]) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    for ex in examples {
        if ex.pre_ids.len() != config.questions() {
            return Err(Error::Schema(format!(
                "example has {} answers, model expects {}",
                ex.pre_ids.len(),
                config.questions()
            )));
        }
        for (q, (&id, &v)) in ex.pre_ids.iter().zip(&config.vocab_sizes).enumerate() {
            if id >= v {
                return Err(Error::Encoding {
                    question: q,
                    id,
                    size: v,
                });
            }
        }
        if ex.deck.len() != config.embedding_dim {
            return Err(Error::Schema(format!(
                "deck vector has dimension {}, model expects {}",
                ex.deck.len(),
                config.embedding_dim
            )));
        }
    }
    Ok(())
}

fn dropout(graph: &mut Graph, x: Var, rate: f64, rng: &mut Option<&mut SeededRng>) -> Var {
    let Some(rng) = rng.as_deref_mut() else { return x };
    if rate == 0.0 {
        return x;
    }
    let shape = graph.value(x).shape();
    let keep = 1.0 / (1.0 - rate);
    let mask = Tensor::from_fn(shape[0], shape[1], |_, _| {
        if rng.uniform() < rate {
            0.0
        } else {
            keep
        }
    });
    graph.mul_const(x, mask)
}

/// Token matrix (before the encoder) for a batch, on the tape.
fn assemble_on_graph(
    graph: &mut Graph,
    params: &OpinionXfParams,
    pv: &[Var],
    examples: &[&Example],
    pinned_quantum: Option<&[f64]>,
) -> Result<(Var, Option<(Var, Var)>, Option<Vec<f64>>, Var)> {
    let c = &params.config;
    let lay = &params.layout;
    let q_count = c.questions();
    let decks: Vec<Vec<f64>> = examples.iter().map(|e| e.deck.clone()).collect();
    let deck = graph.input(Tensor::from_rows(&decks)?);
    let mut presentation = graph.linear(deck, pv[lay.presentation.0], pv[lay.presentation.1]);

    let mut q_tokens = Vec::with_capacity(q_count);
    for q in 0..q_count {
        let ids: Vec<usize> = examples.iter().map(|e| e.pre_ids[q]).collect();
        let ans = graph.select_rows(pv[lay.answers[q]], ids);
        let qid = graph.select_rows(pv[lay.question], vec![q]);
        q_tokens.push(graph.add_row(ans, qid));
    }

    let mut summaries = None;
    if let Some([w1, b1, w2, b2]) = lay.fusion {
        let mut sum = q_tokens[0];
        for &t in &q_tokens[1..] {
            sum = graph.add(sum, t);
        }
        let q_mean = graph.scale(sum, 1.0 / q_count as f64);
        let vars = FusionVars {
            w1: pv[w1],
            b1: pv[b1],
            w2: pv[w2],
            b2: pv[b2],
        };
        let fused = fusion::fuse_on_graph(graph, presentation, q_mean, vars, c.bands())?;
        for t in &mut q_tokens {
            *t = graph.add(*t, fused);
        }
        let mut aug_sum = q_tokens[0];
        for &t in &q_tokens[1..] {
            aug_sum = graph.add(aug_sum, t);
        }
        let v = graph.scale(aug_sum, 1.0 / q_count as f64);
        summaries = Some((fused, v));
        presentation = fused;
    }

    let mut parts = vec![presentation];
    let mut expectations = None;
    if let Some((w, b)) = lay.quantum {
        let e: Vec<f64> = match pinned_quantum {
            Some(p) => p.to_vec(),
            None => {
                let pres = graph.value(presentation);
                (0..pres.rows())
                    .map(|r| quantum::token_expectation(pres.row(r), c.quantum_features))
                    .collect()
            }
        };
        // The expectation enters as a constant: no gradient to the angles.
        let col = graph.input(Tensor::new(e.len(), 1, e.clone())?);
        parts.push(graph.linear(col, pv[w], pv[b]));
        expectations = Some(e);
    }
    parts.extend(q_tokens);
    let seq = graph.interleave(parts);
    let seq = graph.add_tiled(seq, pv[lay.position]);
    Ok((seq, summaries, expectations, presentation))
}

fn encode_on_graph(
    graph: &mut Graph,
    params: &OpinionXfParams,
    pv: &[Var],
    mut x: Var,
    seq_len: usize,
    rng: &mut Option<&mut SeededRng>,
) -> Var {
    let c = &params.config;
    for layer in &params.layout.layers {
        let h = graph.layer_norm(x, pv[layer.ln1.0], pv[layer.ln1.1]);
        let q = graph.linear(h, pv[layer.wq.0], pv[layer.wq.1]);
        let k = graph.linear(h, pv[layer.wk.0], pv[layer.wk.1]);
        let v = graph.linear(h, pv[layer.wv.0], pv[layer.wv.1]);
        let a = graph.attention(q, k, v, seq_len, c.n_heads);
        let a = graph.linear(a, pv[layer.wo.0], pv[layer.wo.1]);
        let a = dropout(graph, a, c.dropout, rng);
        x = graph.add(x, a);
        let h = graph.layer_norm(x, pv[layer.ln2.0], pv[layer.ln2.1]);
        let f = graph.linear(h, pv[layer.ff1.0], pv[layer.ff1.1]);
        let f = graph.gelu(f);
        let f = graph.linear(f, pv[layer.ff2.0], pv[layer.ff2.1]);
        let f = dropout(graph, f, c.dropout, rng);
        x = graph.add(x, f);
    }
    x
}

fn register_params(graph: &mut Graph, params: &OpinionXfParams) -> Vec<Var> {
    params
        .tensors
        .iter()
        .enumerate()
        .map(|(i, t)| graph.param(i, t.clone()))
        .collect()
}

/// Full batched forward pass on the tape.
pub fn forward(
    graph: &mut Graph,
    params: &OpinionXfParams,
    examples: &[&Example],
    opts: ForwardOptions<'_>,
) -> Result<ForwardPass> {
    let c = &params.config;
    check_examples(c, examples)?;
    let pv = register_params(graph, params);
    let (seq, summaries, quantum_expectations, presentation) =
        assemble_on_graph(graph, params, &pv, examples, opts.pinned_quantum)?;
    let mut rng = opts.dropout_rng;
    let l = c.seq_len();
    let h = encode_on_graph(graph, params, &pv, seq, l, &mut rng);
    let logits = params
        .layout
        .heads
        .iter()
        .enumerate()
        .map(|(q, &(w, b))| {
            let rows = (0..examples.len()).map(|i| i * l + c.specials() + q).collect();
            let x = graph.select_rows(h, rows);
            graph.linear(x, pv[w], pv[b])
        })
        .collect();
    Ok(ForwardPass {
        logits,
        summaries,
        quantum_expectations,
        presentation,
        param_vars: pv,
    })
}

/// Token sequence for one record, positional encodings included.
pub fn assemble_tokens(
    pre_ids: &[usize],
    deck: &[f64],
    params: &OpinionXfParams,
) -> Result<Tensor> {
    let ex = Example {
        pre_ids: pre_ids.to_vec(),
        post_ids: Vec::new(),
        deck: deck.to_vec(),
        topic: String::new(),
    };
    check_examples(&params.config, &[&ex])?;
    let mut g = Graph::new();
    let pv = register_params(&mut g, params);
    let (seq, ..) = assemble_on_graph(&mut g, params, &pv, &[&ex], None)?;
    Ok(g.value(seq).clone())
}

/// Run the encoder stack on a single `(S+Q) x d_model` sequence.
pub fn encode(tokens: &Tensor, params: &OpinionXfParams) -> Result<Tensor> {
    if tokens.cols() != params.config.d_model {
        return Err(Error::Numeric("token width differs from d_model".into()));
    }
    let mut g = Graph::new();
    let pv = register_params(&mut g, params);
    let x = g.input(tokens.clone());
    let out = encode_on_graph(&mut g, params, &pv, x, tokens.rows(), &mut None);
    let out = g.value(out).clone();
    out.ensure_finite("encoder output")?;
    Ok(out)
}

/// Per-question logits for each example, without dropout.
pub fn predict_batch(params: &OpinionXfParams, examples: &[&Example]) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut g = Graph::new();
    let pass = forward(&mut g, params, examples, ForwardOptions::default())?;
    let mut out = vec![Vec::with_capacity(pass.logits.len()); examples.len()];
    for &lv in &pass.logits {
        let t = g.value(lv);
        t.ensure_finite("logits")?;
        for (i, row) in out.iter_mut().enumerate() {
            row.push(t.row(i).to_vec());
        }
    }
    Ok(out)
}

/// Per-question logits for one record.
pub fn predict(pre_ids: &[usize], deck: &[f64], params: &OpinionXfParams) -> Result<Vec<Vec<f64>>> {
    let ex = Example {
        pre_ids: pre_ids.to_vec(),
        post_ids: Vec::new(),
        deck: deck.to_vec(),
        topic: String::new(),
    };
    Ok(predict_batch(params, &[&ex])?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{hash_embed, init_answer_table};
    use crate::dataset::AnswerVocabulary;

    pub(crate) fn tiny(use_fusion: bool, use_quantum: bool) -> (ModelConfig, AnswerEmbeddingTable) {
        let config = ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 1,
            vocab_sizes: vec![3, 2],
            embedding_dim: 8,
            use_fusion,
            use_quantum,
            use_contrastive: use_fusion,
            fusion_bands: Some(2),
            ..ModelConfig::default()
        };
        let vocab = AnswerVocabulary::from_answers(vec![
            vec!["a".into(), "b".into(), "c".into()],
            vec!["x".into(), "y".into()],
        ])
        .unwrap();
        let table = init_answer_table(&vocab, |_, s| hash_embed(s, 8)).unwrap();
        (config, table)
    }

    #[test]
    fn same_seed_same_params_different_seed_differs() {
        let (c, t) = tiny(true, true);
        let a = init_params(&c, &t, 3).unwrap();
        let b = init_params(&c, &t, 3).unwrap();
        assert_eq!(a.tensors(), b.tensors());
        let d = init_params(&c, &t, 4).unwrap();
        assert_ne!(a.tensors(), d.tensors());
    }

    #[test]
    fn sequence_lengths() {
        let (c, t) = tiny(false, false);
        let p = init_params(&c, &t, 1).unwrap();
        let deck = hash_embed("deck text", 8).unwrap();
        assert_eq!(assemble_tokens(&[0, 1], &deck, &p).unwrap().rows(), 3);
        let (c, t) = tiny(false, true);
        let p = init_params(&c, &t, 1).unwrap();
        assert_eq!(assemble_tokens(&[0, 1], &deck, &p).unwrap().rows(), 4);
    }

    #[test]
    fn out_of_range_id_is_an_encoding_error() {
        let (c, t) = tiny(false, false);
        let p = init_params(&c, &t, 1).unwrap();
        let deck = hash_embed("deck", 8).unwrap();
        assert!(matches!(
            assemble_tokens(&[3, 0], &deck, &p),
            Err(Error::Encoding { question: 0, .. })
        ));
    }

    #[test]
    fn zeroed_embeddings_give_zero_tokens() {
        let (c, t) = tiny(false, false);
        let mut p = init_params(&c, &t, 1).unwrap();
        for name in ["tokens.answer.0", "tokens.answer.1", "tokens.question", "tokens.position", "presentation.w", "presentation.b"] {
            let t = p.get_mut(name).unwrap();
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let deck = hash_embed("deck", 8).unwrap();
        let tokens = assemble_tokens(&[2, 1], &deck, &p).unwrap();
        assert!(tokens.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn logit_shapes() {
        let (c, t) = tiny(true, true);
        let p = init_params(&c, &t, 2).unwrap();
        let deck = hash_embed("deck", 8).unwrap();
        let logits = predict(&[1, 0], &deck, &p).unwrap();
        assert_eq!(logits.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 2]);
        assert!(logits.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn invalid_configs_rejected() {
        let (mut c, _) = tiny(true, false);
        c.n_heads = 3;
        assert!(c.validate().is_err());
        let (mut c, _) = tiny(true, false);
        c.fusion_bands = Some(0);
        assert!(c.validate().is_err());
        let (mut c, _) = tiny(false, true);
        c.quantum_features = [2, 2];
        assert!(c.validate().is_err());
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_tokens, log_sum_exp, LanguageModel, LmError, TokenId, EOS_TOKEN};

/// Dimensions of a [`ToyLm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyLmShape {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Maximum summary length in tokens, EOS included.
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

fn default_max_len() -> usize {
    16
}

impl ToyLmShape {
    pub fn new(vocab_size: usize, embed_dim: usize, hidden_dim: usize) -> Self {
        Self {
            vocab_size,
            embed_dim,
            hidden_dim,
            max_len: default_max_len(),
        }
    }

    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = max_len;
        self
    }

    fn validate(&self) -> Result<(), String> {
        if !(2..=64).contains(&self.vocab_size) {
            return Err(format!("vocab_size must be in 2..=64, got {}", self.vocab_size));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.max_len == 0 {
            return Err("embed_dim, hidden_dim and max_len must be positive".into());
        }
        Ok(())
    }

    /// Rows of the previous-token tables: one per token plus the start row.
    fn prev_rows(&self) -> usize {
        self.vocab_size + 1
    }

    fn layout(&self) -> Layout {
        let v = self.vocab_size;
        let d = self.embed_dim;
        let h = self.hidden_dim;
        let mut offset = 0;
        let mut take = |n: usize| {
            let r = offset..offset + n;
            offset += n;
            r
        };
        let e_src = take(v * d);
        let e_prev = take(self.prev_rows() * d);
        let w_hidden = take(h * 2 * d);
        let b_hidden = take(h);
        let w_out = take(v * h);
        let b_out = take(v);
        let bigram = take(self.prev_rows() * v);
        Layout {
            e_src,
            e_prev,
            w_hidden,
            b_hidden,
            w_out,
            b_out,
            bigram,
            total: offset,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Debug, Clone)]
struct Layout {
    e_src: std::ops::Range<usize>,
    e_prev: std::ops::Range<usize>,
    w_hidden: std::ops::Range<usize>,
    b_hidden: std::ops::Range<usize>,
    w_out: std::ops::Range<usize>,
    b_out: std::ops::Range<usize>,
    bigram: std::ops::Range<usize>,
    total: usize,
}

/// Small differentiable conditional language model.
///
/// For a source `x` and previous token `p` (a dedicated start row when the
/// prefix is empty):
///
/// ```text
/// s      = mean of source embeddings E_src[x_i]          (embed_dim)
/// hidden = tanh(W_h [s; E_prev[p]] + b_h)                (hidden_dim)
/// logits = W_o hidden + b_o + B[p]                       (vocab_size)
/// ```
///
/// `B` is a bigram table. All parameters live in one flat vector; the
/// structured accessors are slices into it, so writes through either view
/// are visible in the other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ToyLmRepr", into = "ToyLmRepr")]
pub struct ToyLm {
    shape: ToyLmShape,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToyLmRepr {
    shape: ToyLmShape,
    params: Vec<f64>,
}

impl TryFrom<ToyLmRepr> for ToyLm {
    type Error = String;

    fn try_from(r: ToyLmRepr) -> Result<Self, String> {
        ToyLm::from_flat(r.shape, r.params)
    }
}

impl From<ToyLm> for ToyLmRepr {
    fn from(m: ToyLm) -> Self {
        ToyLmRepr {
            shape: m.shape,
            params: m.params,
        }
    }
}

/// One (source, target summary) pair for maximum-likelihood warm start.
#[derive(Debug, Clone)]
pub struct WarmStartExample {
    pub source: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

impl ToyLm {
    pub fn zeros(shape: ToyLmShape) -> Self {
        shape.validate().expect("invalid toy LM shape");
        Self {
            params: vec![0.0; shape.param_count()],
            shape,
        }
    }

    /// Uniform initialisation in `[-scale, scale]` from a ChaCha8 stream.
    pub fn init(shape: ToyLmShape, seed: u64, scale: f64) -> Self {
        let mut m = Self::zeros(shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut m.params {
            *p = rng.random_range(-scale..=scale);
        }
        m
    }

    pub fn from_flat(shape: ToyLmShape, params: Vec<f64>) -> Result<Self, String> {
        shape.validate()?;
        if params.len() != shape.param_count() {
            return Err(format!(
                "expected {} parameters, got {}",
                shape.param_count(),
                params.len()
            ));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(format!("parameter {i} is not finite"));
        }
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> ToyLmShape {
        self.shape
    }

    pub fn flat(&self) -> &[f64] {
        &self.params
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn source_embeddings(&self) -> &[f64] {
        &self.params[self.shape.layout().e_src]
    }

    pub fn prev_embeddings(&self) -> &[f64] {
        &self.params[self.shape.layout().e_prev]
    }

    pub fn hidden_weights(&self) -> &[f64] {
        &self.params[self.shape.layout().w_hidden]
    }

    pub fn output_weights(&self) -> &[f64] {
        &self.params[self.shape.layout().w_out]
    }

    pub fn output_bias(&self) -> &[f64] {
        &self.params[self.shape.layout().b_out]
    }

    /// Bigram table, `(vocab_size + 1) x vocab_size`, last row = start.
    pub fn bigram(&self) -> &[f64] {
        &self.params[self.shape.layout().bigram]
    }

    pub fn bigram_mut(&mut self) -> &mut [f64] {
        let r = self.shape.layout().bigram;
        &mut self.params[r]
    }

    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let r = self.shape.layout().b_out;
        &mut self.params[r]
    }

    pub fn source_embeddings_mut(&mut self) -> &mut [f64] {
        let r = self.shape.layout().e_src;
        &mut self.params[r]
    }

    /// Index of the start row in the previous-token tables.
    pub fn start_row(&self) -> usize {
        self.shape.vocab_size
    }

    fn source_bag(&self, layout: &Layout, source: &[TokenId]) -> Vec<f64> {
        let d = self.shape.embed_dim;
        let mut bag = vec![0.0; d];
        if source.is_empty() {
            return bag;
        }
        let table = &self.params[layout.e_src.clone()];
        for &t in source {
            let row = &table[t as usize * d..(t as usize + 1) * d];
            for (b, r) in bag.iter_mut().zip(row) {
                *b += r;
            }
        }
        let n = source.len() as f64;
        bag.iter_mut().for_each(|b| *b /= n);
        bag
    }

    /// Forward pass for one step; returns (input, hidden, logits).
    fn step(&self, layout: &Layout, bag: &[f64], prev: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = self.shape.embed_dim;
        let h = self.shape.hidden_dim;
        let v = self.shape.vocab_size;
        let p = &self.params;

        let mut input = Vec::with_capacity(2 * d);
        input.extend_from_slice(bag);
        input.extend_from_slice(&p[layout.e_prev.start + prev * d..][..d]);

        let w_h = &p[layout.w_hidden.clone()];
        let b_h = &p[layout.b_hidden.clone()];
        let hidden: Vec<f64> = (0..h)
            .map(|i| {
                let row = &w_h[i * 2 * d..(i + 1) * 2 * d];
                let z: f64 = row.iter().zip(&input).map(|(w, x)| w * x).sum::<f64>() + b_h[i];
                z.tanh()
            })
            .collect();

        let w_o = &p[layout.w_out.clone()];
        let b_o = &p[layout.b_out.clone()];
        let bigram = &p[layout.bigram.start + prev * v..][..v];
        let logits = (0..v)
            .map(|j| {
                let row = &w_o[j * h..(j + 1) * h];
                row.iter().zip(&hidden).map(|(w, x)| w * x).sum::<f64>() + b_o[j] + bigram[j]
            })
            .collect();
        (input, hidden, logits)
    }

    fn prev_row(&self, prefix: &[TokenId]) -> usize {
        prefix.last().map_or(self.start_row(), |&t| t as usize)
    }

    /// Adds `scale * d logprob(summary | source) / d theta` to `grad` and
    /// returns the log-probability. `summary` need not be EOS-terminated.
    pub fn accumulate_logprob_grad(
        &self,
        source: &[TokenId],
        summary: &[TokenId],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64, LmError> {
        let shape = self.shape;
        check_tokens(source, shape.vocab_size)?;
        check_tokens(summary, shape.vocab_size)?;
        if summary.len() > shape.max_len {
            return Err(LmError::PrefixTooLong {
                len: summary.len() - 1,
                max_len: shape.max_len,
            });
        }
        assert_eq!(grad.len(), self.params.len(), "gradient buffer has wrong length");
        let layout = shape.layout();
        let (d, h, v) = (shape.embed_dim, shape.hidden_dim, shape.vocab_size);
        let bag = self.source_bag(&layout, source);
        let mut d_bag = vec![0.0; d];
        let mut total = 0.0;

        for (t, &target) in summary.iter().enumerate() {
            let prev = self.prev_row(&summary[..t]);
            let (input, hidden, logits) = self.step(&layout, &bag, prev);
            let lse = log_sum_exp(&logits);
            total += logits[target as usize] - lse;
            if scale == 0.0 {
                continue;
            }
            // d logprob / d logits = onehot(target) - softmax
            let d_logits: Vec<f64> = logits
                .iter()
                .enumerate()
                .map(|(j, &l)| {
                    let hit = if j == target as usize { 1.0 } else { 0.0 };
                    scale * (hit - (l - lse).exp())
                })
                .collect();

            let w_o = &self.params[layout.w_out.clone()];
            let mut d_hidden = vec![0.0; h];
            for j in 0..v {
                let g = d_logits[j];
                grad[layout.b_out.start + j] += g;
                grad[layout.bigram.start + prev * v + j] += g;
                for i in 0..h {
                    grad[layout.w_out.start + j * h + i] += g * hidden[i];
                    d_hidden[i] += g * w_o[j * h + i];
                }
            }

            let w_h = &self.params[layout.w_hidden.clone()];
            let mut d_input = vec![0.0; 2 * d];
            for i in 0..h {
                let dz = d_hidden[i] * (1.0 - hidden[i] * hidden[i]);
                grad[layout.b_hidden.start + i] += dz;
                for k in 0..2 * d {
                    grad[layout.w_hidden.start + i * 2 * d + k] += dz * input[k];
                    d_input[k] += dz * w_h[i * 2 * d + k];
                }
            }
            for k in 0..d {
                d_bag[k] += d_input[k];
                grad[layout.e_prev.start + prev * d + k] += d_input[d + k];
            }
        }

        if !source.is_empty() {
            let n = source.len() as f64;
            for &s in source {
                for k in 0..d {
                    grad[layout.e_src.start + s as usize * d + k] += d_bag[k] / n;
                }
            }
        }
        Ok(total)
    }

    /// Log-probability of `summary` and its gradient with respect to the
    /// flat parameter vector.
    pub fn logprob_and_grad(
        &self,
        source: &[TokenId],
        summary: &[TokenId],
    ) -> Result<(f64, Vec<f64>), LmError> {
        let mut grad = vec![0.0; self.params.len()];
        let lp = self.accumulate_logprob_grad(source, summary, 1.0, &mut grad)?;
        Ok((lp, grad))
    }

    /// Maximum-likelihood warm start: full-batch gradient ascent on the mean
    /// log-probability of each target. Returns the final mean log-probability.
    pub fn warm_start(
        &mut self,
        examples: &[WarmStartExample],
        learning_rate: f64,
        epochs: usize,
    ) -> Result<f64, LmError> {
        if examples.is_empty() {
            return Ok(0.0);
        }
        let n = examples.len() as f64;
        let mut mean = 0.0;
        for _ in 0..epochs {
            let mut grad = vec![0.0; self.params.len()];
            mean = 0.0;
            for ex in examples {
                mean += self.accumulate_logprob_grad(&ex.source, &ex.target, 1.0 / n, &mut grad)? / n;
            }
            for (p, g) in self.params.iter_mut().zip(&grad) {
                *p += learning_rate * g;
            }
        }
        Ok(mean)
    }
}

impl LanguageModel for ToyLm {
    fn vocab_size(&self) -> usize {
        self.shape.vocab_size
    }

    fn eos_token(&self) -> TokenId {
        EOS_TOKEN
    }

    fn max_len(&self) -> usize {
        self.shape.max_len
    }

    fn logits(&self, source: &[TokenId], prefix: &[TokenId]) -> Result<Vec<f64>, LmError> {
        check_tokens(source, self.shape.vocab_size)?;
        check_tokens(prefix, self.shape.vocab_size)?;
        if prefix.len() >= self.shape.max_len {
            return Err(LmError::PrefixTooLong {
                len: prefix.len(),
                max_len: self.shape.max_len,
            });
        }
        let layout = self.shape.layout();
        let bag = self.source_bag(&layout, source);
        Ok(self.step(&layout, &bag, self.prev_row(prefix)).2)
    }
}

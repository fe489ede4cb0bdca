//! Bi-stream network: an EEG branch (two stacked LSTMs running over the
//! channel axis, additive softmax attention, dense projection), a music
//! branch (tanh MLP), one linear classifier shared by both branches and a
//! modality discriminator behind a gradient reversal layer.

pub mod checkpoint;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::stream;

pub use checkpoint::Checkpoint;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelDims {
    /// Sequence length of the EEG recurrence.
    pub channels: usize,
    /// LSTM input size.
    pub features_per_channel: usize,
    pub lstm_hidden: usize,
    pub attention_dim: usize,
    pub music_dim: usize,
    pub music_hidden: Vec<usize>,
    pub embed_dim: usize,
    pub disc_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            channels: 32,
            features_per_channel: 12,
            lstm_hidden: 32,
            attention_dim: 32,
            music_dim: 256,
            music_hidden: vec![128, 128],
            embed_dim: 64,
            disc_hidden: 32,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("channels", self.channels),
            ("features_per_channel", self.features_per_channel),
            ("lstm_hidden", self.lstm_hidden),
            ("attention_dim", self.attention_dim),
            ("music_dim", self.music_dim),
            ("embed_dim", self.embed_dim),
            ("disc_hidden", self.disc_hidden),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::invalid(format!("model dim {name} must be positive")));
            }
        }
        if self.music_hidden.contains(&0) {
            return Err(Error::invalid("music_hidden widths must be positive"));
        }
        Ok(())
    }
}

/// Which optimizer group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    EegBranch,
    MusicBranch,
    Classifier,
    Discriminator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    /// Fan-in for the init bound; `None` for biases.
    pub fan_in: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Lstm {
    w_ih: usize,
    w_hh: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Dense {
    w: usize,
    b: usize,
}

/// Slot indices into the flat parameter list.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Slots {
    lstm: [Lstm; 2],
    att_w: usize,
    att_v: usize,
    proj: Dense,
    music: Vec<Dense>,
    classifier: Dense,
    disc: [Dense; 2],
}

/// Parameter list in checkpoint order, plus the slot map.
fn layout(d: &ModelDims) -> (Vec<ParamSpec>, Slots) {
    let mut specs = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, group, fan_in| {
        specs.push(ParamSpec {
            name,
            shape,
            group,
            fan_in,
        });
        specs.len() - 1
    };
    let h = d.lstm_hidden;
    let mut lstm = Vec::new();
    for (l, input) in [(1, d.features_per_channel), (2, h)] {
        let eeg = ParamGroup::EegBranch;
        lstm.push(Lstm {
            w_ih: add(format!("lstm{l}.w_ih"), vec![input, 4 * h], eeg, Some(input)),
            w_hh: add(format!("lstm{l}.w_hh"), vec![h, 4 * h], eeg, Some(h)),
            b: add(format!("lstm{l}.b"), vec![1, 4 * h], eeg, None),
        });
    }
    let att_w = add("attention.w".into(), vec![h, d.attention_dim], ParamGroup::EegBranch, Some(h));
    let att_v = add(
        "attention.v".into(),
        vec![d.attention_dim, 1],
        ParamGroup::EegBranch,
        Some(d.attention_dim),
    );
    let proj = Dense {
        w: add("eeg.proj.w".into(), vec![h, d.embed_dim], ParamGroup::EegBranch, Some(h)),
        b: add("eeg.proj.b".into(), vec![1, d.embed_dim], ParamGroup::EegBranch, None),
    };
    let mut music = Vec::new();
    let mut input = d.music_dim;
    for (i, &width) in d.music_hidden.iter().chain(std::iter::once(&d.embed_dim)).enumerate() {
        music.push(Dense {
            w: add(format!("music.{i}.w"), vec![input, width], ParamGroup::MusicBranch, Some(input)),
            b: add(format!("music.{i}.b"), vec![1, width], ParamGroup::MusicBranch, None),
        });
        input = width;
    }
    let classifier = Dense {
        w: add("classifier.w".into(), vec![d.embed_dim, 1], ParamGroup::Classifier, Some(d.embed_dim)),
        b: add("classifier.b".into(), vec![1, 1], ParamGroup::Classifier, None),
    };
    let disc = [
        Dense {
            w: add(
                "disc.0.w".into(),
                vec![d.embed_dim, d.disc_hidden],
                ParamGroup::Discriminator,
                Some(d.embed_dim),
            ),
            b: add("disc.0.b".into(), vec![1, d.disc_hidden], ParamGroup::Discriminator, None),
        },
        Dense {
            w: add(
                "disc.1.w".into(),
                vec![d.disc_hidden, 1],
                ParamGroup::Discriminator,
                Some(d.disc_hidden),
            ),
            b: add("disc.1.b".into(), vec![1, 1], ParamGroup::Discriminator, None),
        },
    ];
    let slots = Slots {
        lstm: [lstm[0], lstm[1]],
        att_w,
        att_v,
        proj,
        music,
        classifier,
        disc,
    };
    (specs, slots)
}

/// Uniform init bound `1 / sqrt(fan_in)`.
pub fn init_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub dims: ModelDims,
    specs: Vec<ParamSpec>,
    slots: Slots,
    pub params: Vec<Tensor>,
}

/// Parameters bound into one graph.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Var>,
}

/// EEG branch outputs for a batch.
#[derive(Clone, Copy, Debug)]
pub struct EegOutput {
    /// `batch x embed_dim`.
    pub embedding: Var,
    /// `batch x channels`, rows sum to 1.
    pub attention: Var,
}

impl Model {
    /// Weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases zero except the
    /// LSTM forget gate (1.0). Gate order within the `4h` columns is input,
    /// forget, cell, output.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let (specs, slots) = layout(&dims);
        let mut params = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let mut rng: ChaCha8Rng = stream(seed, 100, i as u64, 0);
            let n: usize = spec.shape.iter().product();
            let data = match spec.fan_in {
                Some(fan_in) => {
                    let b = init_bound(fan_in);
                    (0..n).map(|_| rng.random_range(-b..=b)).collect()
                }
                None => vec![0.0; n],
            };
            params.push(Tensor::new(spec.shape.clone(), data)?);
        }
        let h = dims.lstm_hidden;
        for l in slots.lstm {
            params[l.b].data_mut()[h..2 * h].fill(1.0);
        }
        Ok(Self {
            dims,
            specs,
            slots,
            params,
        })
    }

    /// Rebuild from stored parameters, checking every shape.
    pub fn from_params(dims: ModelDims, params: Vec<Tensor>) -> Result<Self> {
        dims.validate()?;
        let (specs, slots) = layout(&dims);
        if specs.len() != params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter blocks, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (s, p) in specs.iter().zip(&params) {
            if s.shape != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load parameter",
                    lhs: s.shape.clone(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        Ok(Self {
            dims,
            specs,
            slots,
            params,
        })
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn group(&self, i: usize) -> ParamGroup {
        self.specs[i].group
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Forget-gate bias slice of LSTM layer `layer` (0 or 1).
    pub fn forget_bias(&self, layer: usize) -> &[f64] {
        let h = self.dims.lstm_hidden;
        &self.params[self.slots.lstm[layer].b].data()[h..2 * h]
    }

    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| g.param(p.clone())).collect(),
        }
    }

    /// Bind as constants: forward-only use.
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| g.constant(p.clone())).collect(),
        }
    }

    fn lstm_layer(&self, g: &mut Graph, b: &Bound, l: Lstm, inputs: &[Var]) -> Result<Vec<Var>> {
        let h = self.dims.lstm_hidden;
        let (w_ih, w_hh, bias) = (b.vars[l.w_ih], b.vars[l.w_hh], b.vars[l.b]);
        let mut state: Option<(Var, Var)> = None;
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let mut z = g.matmul(x, w_ih)?;
            if let Some((h_prev, _)) = state {
                let r = g.matmul(h_prev, w_hh)?;
                z = g.add(z, r)?;
            }
            let z = g.add_bias(z, bias)?;
            let i_pre = g.slice_cols(z, 0, h)?;
            let f_pre = g.slice_cols(z, h, h)?;
            let c_pre = g.slice_cols(z, 2 * h, h)?;
            let o_pre = g.slice_cols(z, 3 * h, h)?;
            let i_gate = g.sigmoid(i_pre);
            let o_gate = g.sigmoid(o_pre);
            let cand = g.tanh(c_pre);
            let mut c = g.mul(i_gate, cand)?;
            if let Some((_, c_prev)) = state {
                let f_gate = g.sigmoid(f_pre);
                let kept = g.mul(f_gate, c_prev)?;
                c = g.add(c, kept)?;
            }
            let tc = g.tanh(c);
            let h_t = g.mul(o_gate, tc)?;
            state = Some((h_t, c));
            out.push(h_t);
        }
        Ok(out)
    }

    /// EEG branch over a batch; each row is one `channels x features`
    /// matrix flattened channel-major.
    pub fn eeg_forward(&self, g: &mut Graph, b: &Bound, rows: &[&[f64]]) -> Result<EegOutput> {
        let (c, f) = (self.dims.channels, self.dims.features_per_channel);
        if rows.is_empty() {
            return Err(Error::invalid("eeg_forward on an empty batch"));
        }
        for r in rows {
            if r.len() != c * f {
                return Err(Error::DimensionMismatch {
                    context: "EEG input (channels*features)".into(),
                    expected: c * f,
                    actual: r.len(),
                });
            }
        }
        let n = rows.len();
        let steps: Vec<Var> = (0..c)
            .map(|ch| {
                let mut data = Vec::with_capacity(n * f);
                for r in rows {
                    data.extend_from_slice(&r[ch * f..(ch + 1) * f]);
                }
                g.constant(Tensor::matrix(n, f, data))
            })
            .collect();
        let h1 = self.lstm_layer(g, b, self.slots.lstm[0], &steps)?;
        let h2 = self.lstm_layer(g, b, self.slots.lstm[1], &h1)?;

        // s_c = v^T tanh(W h_c), softmax over channels.
        let (att_w, att_v) = (b.vars[self.slots.att_w], b.vars[self.slots.att_v]);
        let mut scores = Vec::with_capacity(c);
        for &h in &h2 {
            let p = g.matmul(h, att_w)?;
            let t = g.tanh(p);
            scores.push(g.matmul(t, att_v)?);
        }
        let scores = g.concat(&scores, 1)?;
        let alpha = g.softmax(scores)?;
        let mut context: Option<Var> = None;
        for (ch, &h) in h2.iter().enumerate() {
            let a = g.slice_cols(alpha, ch, 1)?;
            let term = g.scale_rows(h, a)?;
            context = Some(match context {
                None => term,
                Some(acc) => g.add(acc, term)?,
            });
        }
        let context = context.expect("at least one channel");
        let proj = self.slots.proj;
        let e = g.matmul(context, b.vars[proj.w])?;
        let embedding = g.add_bias(e, b.vars[proj.b])?;
        Ok(EegOutput {
            embedding,
            attention: alpha,
        })
    }

    /// Music branch: tanh hidden layers, linear output.
    pub fn music_forward(&self, g: &mut Graph, b: &Bound, rows: &[&[f64]]) -> Result<Var> {
        let d = self.dims.music_dim;
        if rows.is_empty() {
            return Err(Error::invalid("music_forward on an empty batch"));
        }
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "music embedding input".into(),
                    expected: d,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        let mut x = g.constant(Tensor::matrix(rows.len(), d, data));
        let last = self.slots.music.len() - 1;
        for (i, layer) in self.slots.music.iter().enumerate() {
            let z = g.matmul(x, b.vars[layer.w])?;
            x = g.add_bias(z, b.vars[layer.b])?;
            if i < last {
                x = g.tanh(x);
            }
        }
        Ok(x)
    }

    /// Shared linear classifier with sigmoid: `batch x 1` probabilities.
    pub fn classify(&self, g: &mut Graph, b: &Bound, u: Var) -> Result<Var> {
        let cl = self.slots.classifier;
        let z = g.matmul(u, b.vars[cl.w])?;
        let z = g.add_bias(z, b.vars[cl.b])?;
        Ok(g.sigmoid(z))
    }

    /// Probability of the "music" modality, after a GRL of strength
    /// `lambda_grl`.
    pub fn discriminate(&self, g: &mut Graph, b: &Bound, z: Var, lambda_grl: f64) -> Result<Var> {
        let r = g.grad_reverse(z, lambda_grl);
        let [l0, l1] = self.slots.disc;
        let h = g.matmul(r, b.vars[l0.w])?;
        let h = g.add_bias(h, b.vars[l0.b])?;
        let h = g.tanh(h);
        let o = g.matmul(h, b.vars[l1.w])?;
        let o = g.add_bias(o, b.vars[l1.b])?;
        Ok(g.sigmoid(o))
    }

    /// Forward-only EEG embeddings and attention weights.
    pub fn embed_eeg(&self, rows: &[&[f64]]) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let b = self.bind_frozen(&mut g);
        let out = self.eeg_forward(&mut g, &b, rows)?;
        Ok((g.value(out.embedding).clone(), g.value(out.attention).clone()))
    }

    pub fn embed_music(&self, rows: &[&[f64]]) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind_frozen(&mut g);
        let v = self.music_forward(&mut g, &b, rows)?;
        Ok(g.value(v).clone())
    }

    /// Classifier probabilities for precomputed embeddings (`n x embed_dim`).
    pub fn classify_embeddings(&self, u: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let b = self.bind_frozen(&mut g);
        let x = g.constant(u.clone());
        let p = self.classify(&mut g, &b, x)?;
        Ok(g.value(p).data().to_vec())
    }

    pub fn discriminate_embeddings(&self, z: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let b = self.bind_frozen(&mut g);
        let x = g.constant(z.clone());
        let p = self.discriminate(&mut g, &b, x, 0.0)?;
        Ok(g.value(p).data().to_vec())
    }
}

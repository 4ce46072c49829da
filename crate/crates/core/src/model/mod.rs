//! The three-branch cross-attention encoder (PCCAF) followed by the
//! dilated residual dense fusion network (DRDLF) and classifier head.

pub mod config;
pub mod drdlf;
pub mod pccaf;

pub use config::{Branch, Fusion, ModelConfig};

use crate::error::{Error, Result};
use crate::ops::conv::ConvGeom;
use crate::ops::norm::{BnConfig, BnMode};
use crate::ops::softmax;
use crate::params::{he_init, normal_init, ParamStore};
use crate::real::Real;
use crate::sardata::GuidedTriple;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const OUTPUT_INIT_STD: f64 = 0.01;

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    He { fan_in: usize },
    Normal { std: f64 },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Declared parameters and buffers of an architecture.
#[derive(Default)]
pub(crate) struct SpecBuilder {
    pub params: Vec<ParamSpec>,
    pub buffers: Vec<ParamSpec>,
}

impl SpecBuilder {
    pub fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) {
        self.params.push(ParamSpec {
            name: format!("{prefix}.weight"),
            shape: vec![cout, cin, k, k],
            init: Init::He { fan_in: cin * k * k },
        });
        self.params.push(ParamSpec {
            name: format!("{prefix}.bias"),
            shape: vec![cout],
            init: Init::Zeros,
        });
    }

    pub fn bn(&mut self, prefix: &str, c: usize) {
        self.params.push(ParamSpec {
            name: format!("{prefix}.weight"),
            shape: vec![c],
            init: Init::Ones,
        });
        self.params.push(ParamSpec {
            name: format!("{prefix}.bias"),
            shape: vec![c],
            init: Init::Zeros,
        });
        self.buffers.push(ParamSpec {
            name: format!("{prefix}.running_mean"),
            shape: vec![c],
            init: Init::Zeros,
        });
        self.buffers.push(ParamSpec {
            name: format!("{prefix}.running_var"),
            shape: vec![c],
            init: Init::Ones,
        });
    }

    pub fn linear(&mut self, prefix: &str, d: usize, m: usize) {
        self.linear_with(prefix, d, m, Init::He { fan_in: d });
    }

    /// Classifier output layer. It feeds softmax rather than ReLU, so it
    /// starts small and the initial loss sits near `ln K`.
    pub fn output(&mut self, prefix: &str, d: usize, m: usize) {
        self.linear_with(prefix, d, m, Init::Normal { std: OUTPUT_INIT_STD });
    }

    fn linear_with(&mut self, prefix: &str, d: usize, m: usize, init: Init) {
        self.params.push(ParamSpec {
            name: format!("{prefix}.weight"),
            shape: vec![d, m],
            init,
        });
        self.params.push(ParamSpec {
            name: format!("{prefix}.bias"),
            shape: vec![m],
            init: Init::Zeros,
        });
    }
}

/// Batch-norm statistics observed in a train-mode forward pass.
#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub prefix: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Per-forward state shared by the building blocks.
pub struct Ctx<'a, T: Real> {
    pub tape: &'a mut Tape<T>,
    pub store: &'a ParamStore<T>,
    pub mode: BnMode,
    pub bn: BnConfig,
    pub bn_updates: Vec<BnUpdate<T>>,
    /// Stage label and shape of every audited intermediate, in order.
    pub trace: Vec<(String, Vec<usize>)>,
}

impl<'a, T: Real> Ctx<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, store: &'a ParamStore<T>, mode: BnMode) -> Self {
        Ctx {
            tape,
            store,
            mode,
            bn: BnConfig::default(),
            bn_updates: Vec::new(),
            trace: Vec::new(),
        }
    }

    pub fn conv(&mut self, x: Var, prefix: &str, geom: ConvGeom) -> Result<Var> {
        let w = self.tape.param(self.store, &format!("{prefix}.weight"))?;
        let b = self.tape.param(self.store, &format!("{prefix}.bias"))?;
        self.tape.conv2d(x, w, Some(b), geom)
    }

    pub fn batchnorm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.tape.param(self.store, &format!("{prefix}.weight"))?;
        let beta = self.tape.param(self.store, &format!("{prefix}.bias"))?;
        let rm = self.store.buffer(&format!("{prefix}.running_mean"))?;
        let rv = self.store.buffer(&format!("{prefix}.running_var"))?;
        let (y, stats) =
            self.tape
                .batchnorm2d(x, gamma, beta, (rm.data(), rv.data()), self.mode, self.bn.eps)?;
        if let Some((mean, var)) = stats {
            self.bn_updates.push(BnUpdate {
                prefix: prefix.to_string(),
                mean,
                var,
            });
        }
        Ok(y)
    }

    pub fn linear(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.tape.param(self.store, &format!("{prefix}.weight"))?;
        let b = self.tape.param(self.store, &format!("{prefix}.bias"))?;
        self.tape.linear(x, w, b)
    }

    pub fn record(&mut self, stage: impl Into<String>, v: Var) {
        let shape = self.tape.shape(v).to_vec();
        self.trace.push((stage.into(), shape));
    }
}

/// Network inputs: one `[N, 1, S, S]` tensor per enabled branch.
#[derive(Clone, Debug)]
pub struct NetInputs<T> {
    pub branches: [Option<Tensor<T>>; 3],
}

impl<T: Real> NetInputs<T> {
    /// Stacks the enabled channels of `samples` into batch tensors.
    pub fn from_triples(samples: &[&GuidedTriple], cfg: &ModelConfig) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::invalid("inputs", "empty batch"));
        };
        let s = first.size;
        if s != cfg.input_size {
            return Err(Error::shape(
                "inputs",
                format!("samples are {s}x{s}, model expects {}", cfg.input_size),
            ));
        }
        let mut branches: [Option<Tensor<T>>; 3] = [None, None, None];
        for b in cfg.branches() {
            let mut data = Vec::with_capacity(samples.len() * s * s);
            for t in samples {
                let ch = t.channel(b.index());
                if t.size != s || ch.len() != s * s {
                    return Err(Error::shape(
                        "inputs",
                        format!("sample `{}` lacks a {s}x{s} {b:?} channel", t.id),
                    ));
                }
                data.extend(ch.iter().map(|&v| T::from_f32(v)));
            }
            branches[b.index()] = Some(Tensor::new(vec![samples.len(), 1, s, s], data)?);
        }
        Ok(NetInputs { branches })
    }

    pub fn batch(&self) -> usize {
        self.branches
            .iter()
            .flatten()
            .next()
            .map(|t| t.shape()[0])
            .unwrap_or(0)
    }
}

/// Handles into the recorded forward pass.
pub struct ForwardOutput<T> {
    pub logits: Var,
    /// Encoder outputs Z_1..Z_3 (None for disabled branches).
    pub encoded: [Option<Var>; 3],
    /// Gated features Z_i' (the encoder output itself when not gated).
    pub gated: [Option<Var>; 3],
    /// Cross-attention maps A_i for gated branches.
    pub attention: [Option<Var>; 3],
    pub fused: Var,
    pub q1: Var,
    pub bn_updates: Vec<BnUpdate<T>>,
    pub trace: Vec<(String, Vec<usize>)>,
}

/// Architecture for one [`ModelConfig`].
#[derive(Clone, Debug)]
pub struct Network {
    cfg: ModelConfig,
}

impl Network {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Network { cfg })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn specs(&self) -> SpecBuilder {
        let mut sb = SpecBuilder::default();
        pccaf::declare(&self.cfg, &mut sb);
        drdlf::declare(&self.cfg, &mut sb);
        sb
    }

    /// Trainable parameters in declaration order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        self.specs().params
    }

    /// Non-trainable buffers (batch-norm running statistics).
    pub fn buffer_specs(&self) -> Vec<ParamSpec> {
        self.specs().buffers
    }

    /// Exact number of trainable scalars.
    pub fn count_params(&self) -> usize {
        self.param_specs().iter().map(ParamSpec::numel).sum()
    }

    /// Trainable scalars whose names start with `prefix`.
    pub fn count_params_with_prefix(&self, prefix: &str) -> usize {
        self.param_specs()
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(ParamSpec::numel)
            .sum()
    }

    /// Fresh parameters: He-normal weights (small normal for the output
    /// layer), zero biases, unit BN scale.
    pub fn init_params<T: Real>(&self, seed: u64) -> Result<ParamStore<T>> {
        let sb = self.specs();
        let mut store = ParamStore::new();
        for p in &sb.params {
            store.insert(p.name.clone(), init_tensor(p, seed)?)?;
        }
        for b in &sb.buffers {
            store.insert_buffer(b.name.clone(), init_tensor(b, seed)?)?;
        }
        Ok(store)
    }

    /// Records the full forward pass.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        inputs: &NetInputs<T>,
        mode: BnMode,
    ) -> Result<ForwardOutput<T>> {
        let mut ctx = Ctx::new(tape, store, mode);
        let pc = pccaf::pccaf_forward(&mut ctx, inputs, &self.cfg)?;
        let main = pc.encoded[self.cfg.main_branch.index()].expect("main branch validated");
        let (logits, q1) = drdlf::drdlf_forward(&mut ctx, pc.fused, main, &self.cfg)?;
        Ok(ForwardOutput {
            logits,
            encoded: pc.encoded,
            gated: pc.gated,
            attention: pc.attention,
            fused: pc.fused,
            q1,
            bn_updates: ctx.bn_updates,
            trace: ctx.trace,
        })
    }
}

fn init_tensor<T: Real>(spec: &ParamSpec, seed: u64) -> Result<Tensor<T>> {
    match spec.init {
        Init::He { fan_in } => he_init(&spec.shape, fan_in, seed, &spec.name),
        Init::Normal { std } => normal_init(&spec.shape, std, seed, &spec.name),
        Init::Zeros => Ok(Tensor::zeros(spec.shape.clone())),
        Init::Ones => Ok(Tensor::ones(spec.shape.clone())),
    }
}

/// Class probabilities and arg-max label for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T> {
    pub probs: Vec<T>,
    pub label: usize,
}

/// Softmax over each row of `[N, K]` logits; ties go to the lowest class.
pub fn predict<T: Real>(logits: &Tensor<T>) -> Result<Vec<Prediction<T>>> {
    let &[_, k] = logits.shape() else {
        return Err(Error::shape(
            "predict",
            format!("logits must be [N, K], got {:?}", logits.shape()),
        ));
    };
    Ok(logits
        .data()
        .chunks(k)
        .map(|row| {
            let probs = softmax::softmax(row, &[k], 0);
            let label = argmax(row);
            Prediction { probs, label }
        })
        .collect())
}

fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_ties_and_peaks() {
        let p = predict(&Tensor::new(vec![2, 3], vec![0.0f64, 0.0, 0.0, 10.0, 0.0, 0.0]).unwrap())
            .unwrap();
        assert_eq!(p[0].label, 0);
        for v in &p[0].probs {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(p[1].label, 0);
        assert!(p[1].probs[0] > 0.999);
    }

    #[test]
    fn store_matches_declared_count() {
        let net = Network::new(ModelConfig {
            input_size: 32,
            width_divisor: 4,
            ..Default::default()
        })
        .unwrap();
        let store = net.init_params::<f32>(3).unwrap();
        assert_eq!(store.numel(), net.count_params());
        assert_eq!(store.buffers().count(), 2 * 12);
    }
}

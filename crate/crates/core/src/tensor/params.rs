//! Parameter containers, binding onto a tape, and checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Matrix, Tape, Var};
use crate::error::{Error, Result};

/// Anything holding named trainable matrices.
///
/// `visit` and `visit_mut` must enumerate parameters in the same order as
/// the model's `bind` method creates tape leaves; optimizers and checkpoints
/// rely on that alignment.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, m| n += m.len());
        n
    }

    /// Copies of all parameters in visit order.
    fn parameters(&self) -> Vec<Matrix> {
        let mut out = Vec::new();
        self.visit("", &mut |_, m| out.push(m.clone()));
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}/{name}")
    }
}

/// Places module parameters on a tape as leaves, remembering their order.
pub struct Binder<'t> {
    tape: &'t mut Tape,
    trainable: bool,
    vars: Vec<Var>,
    replay: Option<std::vec::IntoIter<Var>>,
}

impl<'t> Binder<'t> {
    pub fn new(tape: &'t mut Tape, trainable: bool) -> Self {
        Self {
            tape,
            trainable,
            vars: Vec::new(),
            replay: None,
        }
    }

    /// Hands out `vars` in order instead of creating leaves, so a module can
    /// be evaluated on variables owned by the caller. Panics when a bound
    /// shape disagrees with the replayed variable.
    pub fn replay(tape: &'t mut Tape, vars: &[Var]) -> Self {
        Self {
            tape,
            trainable: false,
            vars: Vec::new(),
            replay: Some(Vec::from(vars).into_iter()),
        }
    }

    pub fn bind(&mut self, m: &Matrix) -> Var {
        let v = match &mut self.replay {
            Some(it) => {
                let v = it.next().expect("replay ran out of variables");
                assert_eq!(self.tape.value(v).dim(), m.dim(), "replayed shape mismatch");
                v
            }
            None => self.tape.leaf(m.clone(), self.trainable),
        };
        self.vars.push(v);
        v
    }

    pub fn finish(self) -> Vec<Var> {
        self.vars
    }
}

/// Collects the gradient of every bound parameter, in binding order.
pub fn collect_grads(tape: &Tape, grads: &Gradients, vars: &[Var]) -> Vec<Matrix> {
    vars.iter().map(|&v| grads.wrt(tape, v)).collect()
}

/// Dense affine map `x·W + b` with `W: in×out` and `b: 1×out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    /// Uniform fan-in initialization in `±1/sqrt(in)`.
    pub fn init<R: Rng>(rng: &mut R, input: usize, output: usize) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let weight = Array2::from_shape_fn((input, output), |_| rng.gen_range(-bound..bound));
        let bias = Array2::from_shape_fn((1, output), |_| rng.gen_range(-bound..bound));
        Self { weight, bias }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((input, output)),
            bias: Array2::zeros((1, output)),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Array2::eye(dim),
            bias: Array2::zeros((1, dim)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn bind(&self, b: &mut Binder<'_>) -> LinearVars {
        LinearVars {
            weight: b.bind(&self.weight),
            bias: b.bind(&self.bias),
        }
    }
}

impl LinearVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, self.weight)?;
        tape.add_row(xw, self.bias)
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

/// One serialized parameter: shape plus row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Flat map from parameter name to its values, stored as JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: BTreeMap<String, ParamEntry>,
}

impl Checkpoint {
    pub fn insert_module(&mut self, prefix: &str, module: &dyn Module) {
        module.visit(prefix, &mut |name, m| {
            self.params.insert(
                name,
                ParamEntry {
                    shape: vec![m.nrows(), m.ncols()],
                    data: m.iter().copied().collect(),
                },
            );
        });
    }

    pub fn from_module(prefix: &str, module: &dyn Module) -> Self {
        let mut c = Self::default();
        c.insert_module(prefix, module);
        c
    }

    /// Overwrites every parameter of `module` from this checkpoint.
    pub fn load_into(&self, prefix: &str, module: &mut dyn Module) -> Result<()> {
        let mut err = None;
        module.visit_mut(prefix, &mut |name, m| {
            if err.is_some() {
                return;
            }
            match self.params.get(&name) {
                None => err = Some(Error::Serialization(format!("missing parameter {name}"))),
                Some(e) if e.shape != [m.nrows(), m.ncols()] => {
                    err = Some(Error::Serialization(format!(
                        "parameter {name}: checkpoint shape {:?}, model shape [{}, {}]",
                        e.shape,
                        m.nrows(),
                        m.ncols()
                    )))
                }
                Some(e) => {
                    for (dst, &src) in m.iter_mut().zip(&e.data) {
                        *dst = src;
                    }
                }
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        for (name, e) in &c.params {
            if e.shape.iter().product::<usize>() != e.data.len() {
                return Err(Error::Serialization(format!(
                    "parameter {name}: shape {:?} does not match {} values",
                    e.shape,
                    e.data.len()
                )));
            }
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

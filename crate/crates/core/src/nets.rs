//! Neural controllers evaluated straight from a flat parameter vector.
//!
//! Two layouts are supported, both with a single hidden layer and a `tanh`
//! output layer so every output lies in `[-1, 1]`.
//!
//! **MLP** (`I` inputs, `H` hidden, `O` outputs), hidden activation `tanh`:
//!
//! ```text
//! W1 [H x I] row-major | b1 [H] | W2 [O x H] row-major | b2 [O]
//! count = I*H + H + H*O + O
//! ```
//!
//! **LSTM**: one recurrent layer followed by a dense output layer. The four
//! gate blocks come in the order input, forget, cell candidate, output.
//! Each block is a `[H x (I + H)]` row-major matrix applied to the
//! concatenation `[x, h_prev]`, followed by its bias `[H]`. Gates use the
//! logistic sigmoid, the cell candidate and cell output use `tanh`. When
//! peepholes are enabled three diagonal vectors `p_i, p_f, p_o` (each `[H]`)
//! follow the gate blocks. The output layer `W [O x H] | b [O]` comes last.
//!
//! ```text
//! count = 4 * (H * (I + H) + H) + [3 * H if peephole] + O * H + O
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetError {
    #[error("parameter vector has length {got}, network expects {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("input has length {got}, network expects {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("network dimensions must be positive (inputs {0}, hidden {1}, outputs {2})")]
    EmptyLayer(usize, usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NetworkKind {
    Mlp,
    Lstm { peephole: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub kind: NetworkKind,
    pub n_inputs: usize,
    pub n_hidden: usize,
    pub n_outputs: usize,
}

/// Hidden and cell activations carried between LSTM steps. Empty for MLPs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecurrentState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl RecurrentState {
    pub fn is_zero(&self) -> bool {
        self.hidden.iter().chain(&self.cell).all(|&v| v == 0.0)
    }
}

impl NetworkSpec {
    pub fn mlp(n_inputs: usize, n_hidden: usize, n_outputs: usize) -> Self {
        Self {
            kind: NetworkKind::Mlp,
            n_inputs,
            n_hidden,
            n_outputs,
        }
    }

    pub fn lstm(n_inputs: usize, n_hidden: usize, n_outputs: usize) -> Self {
        Self {
            kind: NetworkKind::Lstm { peephole: false },
            n_inputs,
            n_hidden,
            n_outputs,
        }
    }

    /// Controller for the long double-pole task: 3 sensors, 10 memory
    /// units, 1 motor.
    pub fn double_pole() -> Self {
        Self::lstm(3, 10, 1)
    }

    /// Controller shape used for the bipedal walker: 24 sensors, 64 hidden
    /// units, 4 motors.
    pub fn walker() -> Self {
        Self::mlp(24, 64, 4)
    }

    pub fn with_peephole(mut self, peephole: bool) -> Self {
        if let NetworkKind::Lstm { .. } = self.kind {
            self.kind = NetworkKind::Lstm { peephole };
        }
        self
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.n_inputs == 0 || self.n_hidden == 0 || self.n_outputs == 0 {
            return Err(NetError::EmptyLayer(
                self.n_inputs,
                self.n_hidden,
                self.n_outputs,
            ));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (i, h, o) = (self.n_inputs, self.n_hidden, self.n_outputs);
        match self.kind {
            NetworkKind::Mlp => i * h + h + h * o + o,
            NetworkKind::Lstm { peephole } => {
                4 * (h * (i + h) + h) + if peephole { 3 * h } else { 0 } + o * h + o
            }
        }
    }

    pub fn reset_state(&self) -> RecurrentState {
        match self.kind {
            NetworkKind::Mlp => RecurrentState::default(),
            NetworkKind::Lstm { .. } => RecurrentState {
                hidden: vec![0.0; self.n_hidden],
                cell: vec![0.0; self.n_hidden],
            },
        }
    }

    fn check(&self, params: &[f64], input: &[f64]) -> Result<(), NetError> {
        if params.len() != self.param_count() {
            return Err(NetError::ParamLength {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        if input.len() != self.n_inputs {
            return Err(NetError::InputLength {
                expected: self.n_inputs,
                got: input.len(),
            });
        }
        Ok(())
    }

    /// One forward step. Updates `state` in place for LSTMs and leaves it
    /// untouched for MLPs.
    pub fn forward(
        &self,
        params: &[f64],
        state: &mut RecurrentState,
        input: &[f64],
    ) -> Result<Vec<f64>, NetError> {
        let mut scratch = Scratch::new(self);
        let mut out = vec![0.0; self.n_outputs];
        self.forward_into(params, state, input, &mut scratch, &mut out)?;
        Ok(out)
    }

    /// Allocation-free variant of [`forward`](Self::forward).
    pub fn forward_into(
        &self,
        params: &[f64],
        state: &mut RecurrentState,
        input: &[f64],
        scratch: &mut Scratch,
        out: &mut [f64],
    ) -> Result<(), NetError> {
        self.check(params, input)?;
        let (i, h, o) = (self.n_inputs, self.n_hidden, self.n_outputs);
        debug_assert_eq!(out.len(), o);
        match self.kind {
            NetworkKind::Mlp => {
                let (w1, rest) = params.split_at(i * h);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(h * o);
                let hidden = &mut scratch.hidden[..h];
                dense(w1, b1, input, hidden);
                hidden.iter_mut().for_each(|v| *v = v.tanh());
                dense(w2, b2, hidden, out);
            }
            NetworkKind::Lstm { peephole } => {
                let cols = i + h;
                let block = h * cols + h;
                let concat = &mut scratch.concat[..cols];
                concat[..i].copy_from_slice(input);
                concat[i..].copy_from_slice(&state.hidden);

                let gates = &mut scratch.gates[..4 * h];
                for g in 0..4 {
                    let base = g * block;
                    let w = &params[base..base + h * cols];
                    let b = &params[base + h * cols..base + block];
                    dense(w, b, concat, &mut gates[g * h..(g + 1) * h]);
                }
                let mut cursor = 4 * block;
                let peep = if peephole {
                    let p = &params[cursor..cursor + 3 * h];
                    cursor += 3 * h;
                    Some(p)
                } else {
                    None
                };

                for u in 0..h {
                    let c_prev = state.cell[u];
                    let (mut gi, mut gf) = (gates[u], gates[h + u]);
                    if let Some(p) = peep {
                        gi += p[u] * c_prev;
                        gf += p[h + u] * c_prev;
                    }
                    let c = sigmoid(gf) * c_prev + sigmoid(gi) * gates[2 * h + u].tanh();
                    let mut go = gates[3 * h + u];
                    if let Some(p) = peep {
                        go += p[2 * h + u] * c;
                    }
                    state.cell[u] = c;
                    state.hidden[u] = sigmoid(go) * c.tanh();
                }

                let w = &params[cursor..cursor + o * h];
                let b = &params[cursor + o * h..cursor + o * h + o];
                dense(w, b, &state.hidden, out);
            }
        }
        out.iter_mut().for_each(|v| *v = v.tanh());
        Ok(())
    }

    /// Splits a parameter vector into its matrices and bias vectors, in
    /// layout order.
    pub fn decode(&self, params: &[f64]) -> Result<Vec<Block>, NetError> {
        if params.len() != self.param_count() {
            return Err(NetError::ParamLength {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let (i, h, o) = (self.n_inputs, self.n_hidden, self.n_outputs);
        let mut shapes: Vec<(&'static str, usize, usize)> = Vec::new();
        match self.kind {
            NetworkKind::Mlp => {
                shapes.extend([("w_hidden", h, i), ("b_hidden", h, 1)]);
            }
            NetworkKind::Lstm { peephole } => {
                for (w, b) in [
                    ("w_input_gate", "b_input_gate"),
                    ("w_forget_gate", "b_forget_gate"),
                    ("w_cell", "b_cell"),
                    ("w_output_gate", "b_output_gate"),
                ] {
                    shapes.push((w, h, i + h));
                    shapes.push((b, h, 1));
                }
                if peephole {
                    shapes.push(("peephole", 3, h));
                }
            }
        }
        shapes.extend([("w_out", o, h), ("b_out", o, 1)]);

        let mut cursor = 0;
        Ok(shapes
            .into_iter()
            .map(|(name, rows, cols)| {
                let len = rows * cols;
                let block = Block {
                    name,
                    rows,
                    cols,
                    data: params[cursor..cursor + len].to_vec(),
                };
                cursor += len;
                block
            })
            .collect())
    }
}

/// One named matrix (or vector, when `cols == 1`) of a decoded network.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

pub fn flatten(blocks: &[Block]) -> Vec<f64> {
    blocks.iter().flat_map(|b| b.data.iter().copied()).collect()
}

/// Reusable buffers for [`NetworkSpec::forward_into`].
#[derive(Debug, Clone)]
pub struct Scratch {
    hidden: Vec<f64>,
    concat: Vec<f64>,
    gates: Vec<f64>,
}

impl Scratch {
    pub fn new(spec: &NetworkSpec) -> Self {
        Self {
            hidden: vec![0.0; spec.n_hidden],
            concat: vec![0.0; spec.n_inputs + spec.n_hidden],
            gates: vec![0.0; 4 * spec.n_hidden],
        }
    }
}

/// A network bound to one parameter vector, with its own recurrent state.
/// Intended to live for one episode (or be `reset` between episodes).
#[derive(Debug, Clone)]
pub struct Controller<'a> {
    spec: NetworkSpec,
    params: &'a [f64],
    state: RecurrentState,
    scratch: Scratch,
}

impl<'a> Controller<'a> {
    pub fn new(spec: NetworkSpec, params: &'a [f64]) -> Result<Self, NetError> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(NetError::ParamLength {
                expected: spec.param_count(),
                got: params.len(),
            });
        }
        Ok(Self {
            spec,
            params,
            state: spec.reset_state(),
            scratch: Scratch::new(&spec),
        })
    }

    pub fn reset(&mut self) {
        self.state = self.spec.reset_state();
    }

    pub fn state(&self) -> &RecurrentState {
        &self.state
    }

    pub fn act(&mut self, input: &[f64], out: &mut [f64]) -> Result<(), NetError> {
        self.spec
            .forward_into(self.params, &mut self.state, input, &mut self.scratch, out)
    }
}

fn dense(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, (o, bias)) in out.iter_mut().zip(b).enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

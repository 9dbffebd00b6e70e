//! LSTM and GRU cells: single forward steps plus hand-derived backward steps.
//!
//! Backpropagation through time is assembled by the callers (`translate`,
//! `train`); a cell step only maps upstream gradients on its outputs to
//! parameter gradients and gradients on its inputs and previous state.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::numkit::{sigmoid, tanh, visit_child, visit_child_mut, Matrix, ParamSet};

/// One affine gate `W x + U h + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    /// `D_h × D_x`
    pub input: Matrix,
    /// `D_h × D_h`
    pub recurrent: Matrix,
    /// `D_h × 1`
    pub bias: Matrix,
}

impl Gate {
    fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input: Matrix::zeros(hidden_dim, input_dim),
            recurrent: Matrix::zeros(hidden_dim, hidden_dim),
            bias: Matrix::zeros(hidden_dim, 1),
        }
    }

    fn random<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / crate::numkit::sqrt(hidden_dim as f64);
        Self {
            input: Matrix::uniform(hidden_dim, input_dim, bound, rng),
            recurrent: Matrix::uniform(hidden_dim, hidden_dim, bound, rng),
            bias: Matrix::zeros(hidden_dim, 1),
        }
    }

    fn preact(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut a = self.bias.as_slice().to_vec();
        self.input.matvec_acc(x, &mut a);
        self.recurrent.matvec_acc(h, &mut a);
        a
    }

    /// Accumulates gradients for `a = W x + U h + b` given `da`.
    fn backward(&self, grads: &mut Gate, da: &[f64], x: &[f64], h: &[f64], dx: &mut [f64], dh: &mut [f64]) {
        grads.input.add_outer(da, x);
        grads.recurrent.add_outer(da, h);
        crate::numkit::axpy(1.0, da, grads.bias.as_mut_slice());
        self.input.tmatvec_acc(da, dx);
        self.recurrent.tmatvec_acc(da, dh);
    }
}

impl ParamSet for Gate {
    fn for_each(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        f("w", &self.input);
        f("u", &self.recurrent);
        f("b", &self.bias);
    }

    fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f("w", &mut self.input);
        f("u", &mut self.recurrent);
        f("b", &mut self.bias);
    }
}

/// Standard LSTM: `i, f, o = σ(·)`, `g = tanh(·)`, `c = f⊙c' + i⊙g`,
/// `h = o⊙tanh(c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    pub input_gate: Gate,
    pub forget_gate: Gate,
    pub cell_gate: Gate,
    pub output_gate: Gate,
}

impl LstmCellParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_gate: Gate::zeros(input_dim, hidden_dim),
            forget_gate: Gate::zeros(input_dim, hidden_dim),
            cell_gate: Gate::zeros(input_dim, hidden_dim),
            output_gate: Gate::zeros(input_dim, hidden_dim),
        }
    }

    /// Weights uniform in `±1/√D_h`, biases zero.
    pub fn random<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        Self {
            input_gate: Gate::random(input_dim, hidden_dim, rng),
            forget_gate: Gate::random(input_dim, hidden_dim, rng),
            cell_gate: Gate::random(input_dim, hidden_dim, rng),
            output_gate: Gate::random(input_dim, hidden_dim, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_gate.input.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.input_gate.input.rows()
    }
}

impl ParamSet for LstmCellParams {
    fn for_each(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        visit_child("i", &self.input_gate, f);
        visit_child("f", &self.forget_gate, f);
        visit_child("g", &self.cell_gate, f);
        visit_child("o", &self.output_gate, f);
    }

    fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        visit_child_mut("i", &mut self.input_gate, f);
        visit_child_mut("f", &mut self.forget_gate, f);
        visit_child_mut("g", &mut self.cell_gate, f);
        visit_child_mut("o", &mut self.output_gate, f);
    }
}

/// Standard GRU: `z, r = σ(·)`, `n = tanh(W_n x + b_n + r⊙(U_n h'))`,
/// `h = (1−z)⊙n + z⊙h'`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCellParams {
    pub update_gate: Gate,
    pub reset_gate: Gate,
    pub candidate: Gate,
}

impl GruCellParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            update_gate: Gate::zeros(input_dim, hidden_dim),
            reset_gate: Gate::zeros(input_dim, hidden_dim),
            candidate: Gate::zeros(input_dim, hidden_dim),
        }
    }

    pub fn random<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        Self {
            update_gate: Gate::random(input_dim, hidden_dim, rng),
            reset_gate: Gate::random(input_dim, hidden_dim, rng),
            candidate: Gate::random(input_dim, hidden_dim, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.update_gate.input.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.update_gate.input.rows()
    }
}

impl ParamSet for GruCellParams {
    fn for_each(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        visit_child("z", &self.update_gate, f);
        visit_child("r", &self.reset_gate, f);
        visit_child("n", &self.candidate, f);
    }

    fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        visit_child_mut("z", &mut self.update_gate, f);
        visit_child_mut("r", &mut self.reset_gate, f);
        visit_child_mut("n", &mut self.candidate, f);
    }
}

fn check_dims(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(invalid!("{what} has dimension {got}, expected {want}"))
    }
}

/// Output of one LSTM step together with the values its backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStep {
    pub c: Vec<f64>,
    pub h: Vec<f64>,
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

pub fn lstm_step(x: &[f64], h_prev: &[f64], c_prev: &[f64], params: &LstmCellParams) -> Result<LstmStep> {
    check_dims("lstm input", x.len(), params.input_dim())?;
    check_dims("lstm previous hidden state", h_prev.len(), params.hidden_dim())?;
    check_dims("lstm previous cell state", c_prev.len(), params.hidden_dim())?;
    let mut i = params.input_gate.preact(x, h_prev);
    let mut f = params.forget_gate.preact(x, h_prev);
    let mut g = params.cell_gate.preact(x, h_prev);
    let mut o = params.output_gate.preact(x, h_prev);
    i.iter_mut().for_each(|v| *v = sigmoid(*v));
    f.iter_mut().for_each(|v| *v = sigmoid(*v));
    g.iter_mut().for_each(|v| *v = tanh(*v));
    o.iter_mut().for_each(|v| *v = sigmoid(*v));
    let c: Vec<f64> = (0..c_prev.len()).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|&v| tanh(v)).collect();
    let h = o.iter().zip(&tanh_c).map(|(a, b)| a * b).collect();
    Ok(LstmStep {
        c,
        h,
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i,
        f,
        g,
        o,
        tanh_c,
    })
}

/// Gradients flowing out of a cell step towards its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmInputGrads {
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
    pub dc_prev: Vec<f64>,
}

fn check_cache(params_dims: (usize, usize), cache_dims: (usize, usize)) -> Result<()> {
    if params_dims == cache_dims {
        Ok(())
    } else {
        Err(Error::InvalidState(alloc::format!(
            "cached step has dimensions {cache_dims:?} but the cell has {params_dims:?}"
        )))
    }
}

/// Backward pass of [`lstm_step`]. `dh` and `dc` are the upstream
/// gradients on the step's `h` and `c`; parameter gradients are
/// accumulated into `grads`.
pub fn lstm_step_backward(
    step: &LstmStep,
    params: &LstmCellParams,
    dh: &[f64],
    dc: &[f64],
    grads: &mut LstmCellParams,
) -> Result<LstmInputGrads> {
    let dims = (params.input_dim(), params.hidden_dim());
    check_cache(dims, (step.x.len(), step.h.len()))?;
    check_cache(dims, (grads.input_dim(), grads.hidden_dim()))?;
    check_dims("lstm upstream dh", dh.len(), dims.1)?;
    check_dims("lstm upstream dc", dc.len(), dims.1)?;
    let n = dims.1;
    let mut da_i = vec![0.0; n];
    let mut da_f = vec![0.0; n];
    let mut da_g = vec![0.0; n];
    let mut da_o = vec![0.0; n];
    let mut dc_prev = vec![0.0; n];
    for k in 0..n {
        let (i, f, g, o, tc) = (step.i[k], step.f[k], step.g[k], step.o[k], step.tanh_c[k]);
        let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
        da_o[k] = dh[k] * tc * o * (1.0 - o);
        da_f[k] = dct * step.c_prev[k] * f * (1.0 - f);
        da_i[k] = dct * g * i * (1.0 - i);
        da_g[k] = dct * i * (1.0 - g * g);
        dc_prev[k] = dct * f;
    }
    let mut dx = vec![0.0; dims.0];
    let mut dh_prev = vec![0.0; n];
    let (x, hp) = (&step.x, &step.h_prev);
    params.input_gate.backward(&mut grads.input_gate, &da_i, x, hp, &mut dx, &mut dh_prev);
    params.forget_gate.backward(&mut grads.forget_gate, &da_f, x, hp, &mut dx, &mut dh_prev);
    params.cell_gate.backward(&mut grads.cell_gate, &da_g, x, hp, &mut dx, &mut dh_prev);
    params.output_gate.backward(&mut grads.output_gate, &da_o, x, hp, &mut dx, &mut dh_prev);
    Ok(LstmInputGrads { dx, dh_prev, dc_prev })
}

/// Output of one GRU step together with the values its backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct GruStep {
    pub h: Vec<f64>,
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    /// `U_n h'`, before the reset gate is applied.
    rec_n: Vec<f64>,
}

pub fn gru_step(x: &[f64], h_prev: &[f64], params: &GruCellParams) -> Result<GruStep> {
    check_dims("gru input", x.len(), params.input_dim())?;
    check_dims("gru previous hidden state", h_prev.len(), params.hidden_dim())?;
    let mut z = params.update_gate.preact(x, h_prev);
    let mut r = params.reset_gate.preact(x, h_prev);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));
    r.iter_mut().for_each(|v| *v = sigmoid(*v));
    let rec_n = params.candidate.recurrent.matvec(h_prev);
    let mut n = params.candidate.bias.as_slice().to_vec();
    params.candidate.input.matvec_acc(x, &mut n);
    for k in 0..n.len() {
        n[k] = tanh(n[k] + r[k] * rec_n[k]);
    }
    let h = (0..n.len()).map(|k| (1.0 - z[k]) * n[k] + z[k] * h_prev[k]).collect();
    Ok(GruStep {
        h,
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        z,
        r,
        n,
        rec_n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruInputGrads {
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
}

/// Backward pass of [`gru_step`] for upstream gradient `dh` on the step's
/// output; parameter gradients are accumulated into `grads`.
pub fn gru_step_backward(
    step: &GruStep,
    params: &GruCellParams,
    dh: &[f64],
    grads: &mut GruCellParams,
) -> Result<GruInputGrads> {
    let dims = (params.input_dim(), params.hidden_dim());
    check_cache(dims, (step.x.len(), step.h.len()))?;
    check_cache(dims, (grads.input_dim(), grads.hidden_dim()))?;
    check_dims("gru upstream dh", dh.len(), dims.1)?;
    let nh = dims.1;
    let mut dh_prev = vec![0.0; nh];
    let mut da_z = vec![0.0; nh];
    let mut da_r = vec![0.0; nh];
    let mut da_n = vec![0.0; nh];
    let mut d_rec_n = vec![0.0; nh];
    for k in 0..nh {
        let (z, r, n) = (step.z[k], step.r[k], step.n[k]);
        let dz = dh[k] * (step.h_prev[k] - n);
        let dn = dh[k] * (1.0 - z);
        dh_prev[k] = dh[k] * z;
        da_n[k] = dn * (1.0 - n * n);
        d_rec_n[k] = da_n[k] * r;
        let dr = da_n[k] * step.rec_n[k];
        da_z[k] = dz * z * (1.0 - z);
        da_r[k] = dr * r * (1.0 - r);
    }
    let mut dx = vec![0.0; dims.0];
    let (x, hp) = (&step.x, &step.h_prev);
    params.update_gate.backward(&mut grads.update_gate, &da_z, x, hp, &mut dx, &mut dh_prev);
    params.reset_gate.backward(&mut grads.reset_gate, &da_r, x, hp, &mut dx, &mut dh_prev);
    let cand = &params.candidate;
    let gcand = &mut grads.candidate;
    gcand.input.add_outer(&da_n, x);
    crate::numkit::axpy(1.0, &da_n, gcand.bias.as_mut_slice());
    gcand.recurrent.add_outer(&d_rec_n, hp);
    cand.input.tmatvec_acc(&da_n, &mut dx);
    cand.recurrent.tmatvec_acc(&d_rec_n, &mut dh_prev);
    Ok(GruInputGrads { dx, dh_prev })
}

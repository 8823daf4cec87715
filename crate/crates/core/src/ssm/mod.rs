//! Diagonal state-space scanning.
//!
//! The continuous system `h' = A h + B x, y = C h + D x` is discretized per
//! token with step `delta`, giving `h_k = a_bar h_{k-1} + b_bar x_k` and
//! `y_k = C h_k + D x_k`. In the selective variant `delta`, `B` and `C` are
//! projections of the current token, so every step has its own parameters.
//! `A` is diagonal and stored as `log_a` with `A = -exp(log_a)`, which keeps
//! every decay factor inside `(0, 1)`.

mod directions;
mod mdm;

pub use directions::{multi_direction_flatten, unflatten, Direction, DirectionalSequences};
pub use mdm::{mdm, vssm, MdmParams};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::nn::{join, Linear, Parameters};
use crate::tensor::{softplus, Tensor};

/// How `b_bar` is obtained from `(A, B, delta)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InputDiscretization {
    /// `b_bar = delta * B`.
    #[default]
    Euler,
    /// `b_bar = (exp(delta A) - 1) / A * B`, the exact zero-order hold.
    ExactZoh,
}

/// Discretizes a diagonal system for one step of size `delta`.
pub fn discretize_zoh(
    a_diag: &[f32],
    b: &[f32],
    delta: f32,
    rule: InputDiscretization,
) -> Result<(Vec<f32>, Vec<f32>)> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!(
            "step size must be positive, got {delta}"
        )));
    }
    if a_diag.len() != b.len() {
        return Err(Error::Dimension(format!(
            "A has {} states, B has {}",
            a_diag.len(),
            b.len()
        )));
    }
    let a_bar = a_diag.iter().map(|&a| (delta * a).exp()).collect();
    let b_bar = a_diag
        .iter()
        .zip(b)
        .map(|(&a, &bv)| match rule {
            InputDiscretization::Euler => delta * bv,
            InputDiscretization::ExactZoh if a == 0.0 => delta * bv,
            InputDiscretization::ExactZoh => (delta * a).exp_m1() / a * bv,
        })
        .collect();
    Ok((a_bar, b_bar))
}

/// Discretized parameters for a single step of a single channel.
#[derive(Clone, Debug, PartialEq)]
pub struct StepParams {
    pub a_bar: Vec<f32>,
    pub b_bar: Vec<f32>,
    pub c: Vec<f32>,
    pub d: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanState {
    pub h: Vec<f32>,
}

impl ScanState {
    pub fn zeros(n: usize) -> Self {
        Self { h: vec![0.0; n] }
    }
}

/// Step-by-step evaluation of the discrete recurrence from a zero state.
///
/// This is deliberately the plain textbook loop; [`selective_scan`] is
/// checked against it.
pub fn ssm_recurrence_oracle(x: &[f32], steps: &[StepParams]) -> Result<Vec<f32>> {
    if x.len() != steps.len() {
        return Err(Error::Dimension(format!(
            "{} inputs but {} step parameter sets",
            x.len(),
            steps.len()
        )));
    }
    let n = steps.first().map_or(0, |s| s.a_bar.len());
    let mut state = ScanState::zeros(n);
    let mut y = Vec::with_capacity(x.len());
    for (&xk, p) in x.iter().zip(steps) {
        if p.a_bar.len() != n || p.b_bar.len() != n || p.c.len() != n {
            return Err(Error::Dimension(
                "inconsistent state size across steps".into(),
            ));
        }
        for i in 0..n {
            state.h[i] = p.a_bar[i] * state.h[i] + p.b_bar[i] * xk;
        }
        let ch: f32 = p.c.iter().zip(&state.h).map(|(c, h)| c * h).sum();
        y.push(ch + p.d * xk);
    }
    Ok(y)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams {
    /// `[d_inner, N]`; the continuous diagonal is `-exp(log_a)`.
    pub log_a: Tensor,
    /// `d_inner -> N`, no bias.
    pub b_proj: Linear,
    /// `d_inner -> N`, no bias.
    pub c_proj: Linear,
    /// `d_inner -> d_inner`, followed by softplus.
    pub delta_proj: Linear,
    /// `[d_inner]`
    pub d_skip: Tensor,
    pub discretization: InputDiscretization,
}

/// Per-token projections of an input sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenParams {
    /// `[L, d_inner]`, strictly positive.
    pub delta: Tensor,
    /// `[L, N]`
    pub b: Tensor,
    /// `[L, N]`
    pub c: Tensor,
}

impl SsmParams {
    pub fn init<R: Rng + ?Sized>(d_inner: usize, state_size: usize, rng: &mut R) -> Self {
        let mut delta_proj = Linear::init(d_inner, d_inner, true, rng);
        // step sizes start log-uniform in [1e-3, 1e-1]
        let bias = Tensor::from_fn(&[d_inner], |_| {
            let dt = (rng.random_range(1e-3f32.ln()..=1e-1f32.ln())).exp();
            dt + (-(-dt).exp_m1()).ln()
        });
        delta_proj.bias = Some(bias);
        Self {
            log_a: Tensor::from_fn(&[d_inner, state_size], |i| {
                ((i % state_size) as f32 + 1.0).ln()
            }),
            b_proj: Linear::init(d_inner, state_size, false, rng),
            c_proj: Linear::init(d_inner, state_size, false, rng),
            delta_proj,
            d_skip: Tensor::full(&[d_inner], 1.0),
            discretization: InputDiscretization::Euler,
        }
    }

    pub fn d_inner(&self) -> usize {
        self.log_a.shape()[0]
    }

    pub fn state_size(&self) -> usize {
        self.log_a.shape()[1]
    }

    /// Continuous diagonal of channel `ch`, all entries negative.
    pub fn a_diag(&self, ch: usize) -> Vec<f32> {
        let n = self.state_size();
        self.log_a.data()[ch * n..(ch + 1) * n]
            .iter()
            .map(|v| -v.exp())
            .collect()
    }

    pub fn token_params(&self, x: &Tensor) -> Result<TokenParams> {
        let (_, d) = x.dims2()?;
        if d != self.d_inner() {
            return Err(Error::Dimension(format!(
                "scan over {} channels given {d}",
                self.d_inner()
            )));
        }
        let delta = self.delta_proj.forward(x)?.map(softplus);
        let b = self.b_proj.forward(x)?;
        let c = self.c_proj.forward(x)?;
        for (name, t) in [("delta", &delta), ("B", &b), ("C", &c)] {
            if !t.is_finite() {
                return Err(Error::Numeric(format!("selective scan {name} projection")));
            }
        }
        if let Some(bad) = delta.data().iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::Numeric(format!("step size underflowed to {bad}")));
        }
        Ok(TokenParams { delta, b, c })
    }
}

impl Parameters for SsmParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "log_a"), &self.log_a);
        self.b_proj.visit(&join(prefix, "b_proj"), f);
        self.c_proj.visit(&join(prefix, "c_proj"), f);
        self.delta_proj.visit(&join(prefix, "delta_proj"), f);
        f(&join(prefix, "d_skip"), &self.d_skip);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "log_a"), &mut self.log_a);
        self.b_proj.visit_mut(&join(prefix, "b_proj"), f);
        self.c_proj.visit_mut(&join(prefix, "c_proj"), f);
        self.delta_proj.visit_mut(&join(prefix, "delta_proj"), f);
        f(&join(prefix, "d_skip"), &mut self.d_skip);
    }
}

/// Reference path for [`selective_scan`]: discretizes every token with
/// [`discretize_zoh`] and runs [`ssm_recurrence_oracle`] channel by channel.
pub fn reference_scan(x: &Tensor, p: &SsmParams) -> Result<Tensor> {
    let (len, d) = x.dims2()?;
    let n = p.state_size();
    let tok = p.token_params(x)?;
    let mut out = vec![0.0f32; len * d];
    for ch in 0..d {
        let a = p.a_diag(ch);
        let mut steps = Vec::with_capacity(len);
        let mut xs = Vec::with_capacity(len);
        for t in 0..len {
            let b_t = &tok.b.data()[t * n..(t + 1) * n];
            let (a_bar, b_bar) =
                discretize_zoh(&a, b_t, tok.delta.data()[t * d + ch], p.discretization)?;
            steps.push(StepParams {
                a_bar,
                b_bar,
                c: tok.c.data()[t * n..(t + 1) * n].to_vec(),
                d: p.d_skip.data()[ch],
            });
            xs.push(x.data()[t * d + ch]);
        }
        for (t, y) in ssm_recurrence_oracle(&xs, &steps)?.into_iter().enumerate() {
            out[t * d + ch] = y;
        }
    }
    Tensor::new(vec![len, d], out)
}

/// Input-dependent scan over `x: [L, d_inner]`, one pass over the sequence.
pub fn selective_scan(x: &Tensor, p: &SsmParams) -> Result<Tensor> {
    let (len, d) = x.dims2()?;
    let n = p.state_size();
    let tok = p.token_params(x)?;
    let a: Vec<f32> = p.log_a.data().iter().map(|v| -v.exp()).collect();
    let (xd, dd, bd, cd) = (x.data(), tok.delta.data(), tok.b.data(), tok.c.data());
    let skip = p.d_skip.data();

    let mut h = vec![0.0f32; d * n];
    let mut out = vec![0.0f32; len * d];
    for t in 0..len {
        let b_t = &bd[t * n..(t + 1) * n];
        let c_t = &cd[t * n..(t + 1) * n];
        for ch in 0..d {
            let dt = dd[t * d + ch];
            let xv = xd[t * d + ch];
            let a_ch = &a[ch * n..(ch + 1) * n];
            let h_ch = &mut h[ch * n..(ch + 1) * n];
            let mut y = 0.0f32;
            for i in 0..n {
                let da = dt * a_ch[i];
                let decay = da.exp();
                let gain = match p.discretization {
                    InputDiscretization::Euler => dt,
                    InputDiscretization::ExactZoh if a_ch[i] == 0.0 => dt,
                    InputDiscretization::ExactZoh => da.exp_m1() / a_ch[i],
                };
                h_ch[i] = decay * h_ch[i] + gain * b_t[i] * xv;
                y += c_t[i] * h_ch[i];
            }
            out[t * d + ch] = y + skip[ch] * xv;
        }
    }
    Tensor::new(vec![len, d], out)
}

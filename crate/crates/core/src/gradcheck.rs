//! Central finite-difference check of the analytic convolution gradients.
//!
//! The scalar loss is `L = sum(r * forward(x))` for a fixed random `r`, so
//! the analytic gradients are the backward passes applied to `r`. Numeric
//! gradients perturb one element at a time and difference the outputs
//! elementwise before reducing, which keeps cancellation error small.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mapped_conv::{
    mapped_conv_backward_input, mapped_conv_backward_params, mapped_conv_forward, ConvParams, Tensor,
};
use crate::sample_map::SampleMap;

/// Default finite-difference step.
pub const DEFAULT_STEP: f64 = 1e-6;

/// A random convolution problem: input, parameters and loss weights `r`.
#[derive(Debug, Clone)]
pub struct GradInstance {
    pub input: Tensor<f64>,
    pub params: ConvParams<f64>,
    pub loss_weights: Tensor<f64>,
}

impl GradInstance {
    /// Uniform `[-1, 1)` entries everywhere.
    pub fn random(map: &SampleMap, c_in: usize, c_out: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uni = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let input = Tensor::new(vec![c_in, map.n_in()], uni(c_in * map.n_in()))?;
        let weights = uni(c_out * c_in * map.k());
        let bias = uni(c_out);
        let params = ConvParams::new(c_in, c_out, map.k(), weights, bias)?;
        let loss_weights = Tensor::new(vec![c_out, map.n_out()], uni(c_out * map.n_out()))?;
        Ok(Self {
            input,
            params,
            loss_weights,
        })
    }
}

/// Gradients of the loss with respect to each parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub input: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Worst-case disagreement for one parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GroupError {
    pub max_abs: f64,
    /// `|a - n| / max(|a|, |n|, 1)`.
    pub max_rel: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradReport {
    pub input: GroupError,
    pub weights: GroupError,
    pub bias: GroupError,
}

impl GradReport {
    pub fn max_rel(&self) -> f64 {
        self.input.max_rel.max(self.weights.max_rel).max(self.bias.max_rel)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel() < tol
    }

    pub fn groups(&self) -> [(&'static str, GroupError); 3] {
        [("input", self.input), ("weights", self.weights), ("bias", self.bias)]
    }
}

pub fn analytic_gradients(map: &SampleMap, inst: &GradInstance) -> Result<Gradients> {
    let gi = mapped_conv_backward_input(&inst.loss_weights, map, &inst.params)?;
    let gp = mapped_conv_backward_params(&inst.loss_weights, &inst.input, map)?;
    Ok(Gradients {
        input: gi.into_data(),
        weights: gp.weights,
        bias: gp.bias,
    })
}

fn loss_delta(plus: &Tensor<f64>, minus: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    plus.data()
        .iter()
        .zip(minus.data())
        .zip(r.data())
        .map(|((p, m), w)| w * (p - m))
        .sum()
}

pub fn numeric_gradients(map: &SampleMap, inst: &GradInstance, h: f64) -> Result<Gradients> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Parameter(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let r = &inst.loss_weights;
    let input = (0..inst.input.len())
        .into_par_iter()
        .map(|i| {
            let mut xp = inst.input.clone();
            let mut xm = inst.input.clone();
            xp.data_mut()[i] += h;
            xm.data_mut()[i] -= h;
            let op = mapped_conv_forward(&xp, map, &inst.params)?;
            let om = mapped_conv_forward(&xm, map, &inst.params)?;
            Ok(loss_delta(&op, &om, r) / (2.0 * h))
        })
        .collect::<Result<Vec<_>>>()?;
    let perturb = |select: fn(&mut ConvParams<f64>) -> &mut Vec<f64>, len: usize| {
        (0..len)
            .into_par_iter()
            .map(|i| {
                let mut pp = inst.params.clone();
                let mut pm = inst.params.clone();
                select(&mut pp)[i] += h;
                select(&mut pm)[i] -= h;
                let op = mapped_conv_forward(&inst.input, map, &pp)?;
                let om = mapped_conv_forward(&inst.input, map, &pm)?;
                Ok(loss_delta(&op, &om, r) / (2.0 * h))
            })
            .collect::<Result<Vec<_>>>()
    };
    let weights = perturb(|p| &mut p.weights, inst.params.weights.len())?;
    let bias = perturb(|p| &mut p.bias, inst.params.bias.len())?;
    Ok(Gradients { input, weights, bias })
}

fn group_error(a: &[f64], n: &[f64]) -> GroupError {
    let mut e = GroupError {
        count: a.len(),
        ..GroupError::default()
    };
    for (&x, &y) in a.iter().zip(n) {
        let d = (x - y).abs();
        e.max_abs = e.max_abs.max(d);
        e.max_rel = e.max_rel.max(d / x.abs().max(y.abs()).max(1.0));
    }
    e
}

pub fn compare(analytic: &Gradients, numeric: &Gradients) -> GradReport {
    GradReport {
        input: group_error(&analytic.input, &numeric.input),
        weights: group_error(&analytic.weights, &numeric.weights),
        bias: group_error(&analytic.bias, &numeric.bias),
    }
}

/// Full check on one instance with step `h`.
pub fn gradcheck(map: &SampleMap, inst: &GradInstance, h: f64) -> Result<GradReport> {
    Ok(compare(
        &analytic_gradients(map, inst)?,
        &numeric_gradients(map, inst, h)?,
    ))
}

use crate::error::{InfiniError, Result};
use crate::model::ModelParams;
use crate::numerics::container::{Container, FieldValue};
use crate::numerics::{Scalar, Tensor};

/// Adam moment accumulators, one pair per parameter in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Applied updates; drives bias correction.
    pub step: u64,
    /// Updates skipped because of non-finite gradients.
    pub skipped: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Result of one optimizer call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub applied: bool,
    /// Global L2 norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params
            .named()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            skipped: 0,
        }
    }

    pub fn check(&self, params: &ModelParams<T>) -> Result<()> {
        let named = params.named();
        let ok = self.m.len() == named.len()
            && self.v.len() == named.len()
            && named
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|((_, p), (m, v))| p.shape() == m.shape() && p.shape() == v.shape());
        if ok {
            Ok(())
        } else {
            Err(InfiniError::Input("optimizer state does not match parameters".into()))
        }
    }

    pub fn write_to(&self, c: &mut Container, params: &ModelParams<T>) {
        c.set_field("opt.step", FieldValue::Int(self.step as i64));
        c.set_field("opt.skipped", FieldValue::Int(self.skipped as i64));
        for ((name, _), (m, v)) in params.named().iter().zip(self.m.iter().zip(&self.v)) {
            c.push_tensor(&format!("opt.m.{name}"), m);
            c.push_tensor(&format!("opt.v.{name}"), v);
        }
    }

    pub fn read_from(c: &Container, params: &ModelParams<T>) -> Result<Self> {
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, _) in params.named() {
            m.push(c.require::<T>(&format!("opt.m.{name}"))?);
            v.push(c.require::<T>(&format!("opt.v.{name}"))?);
        }
        let state = Self {
            m,
            v,
            step: c.int_field("opt.step")? as u64,
            skipped: c.int_field("opt.skipped")? as u64,
        };
        state.check(params)?;
        Ok(state)
    }
}

pub fn global_norm<T: Scalar>(grads: &[Tensor<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| {
            let x = v.as_f64();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Clips (when `clip` is set and exceeded), then applies one bias-corrected
/// Adam update. Non-finite gradients leave everything but `skipped` untouched.
pub fn optimizer_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &mut [Tensor<T>],
    state: &mut OptimizerState<T>,
    lr: f64,
    clip: Option<f64>,
    hp: AdamParams,
) -> Result<StepOutcome> {
    state.check(params)?;
    if grads.len() != state.m.len() {
        return Err(InfiniError::Input(format!(
            "{} gradients for {} parameters",
            grads.len(),
            state.m.len()
        )));
    }
    let norm = global_norm(grads);
    if !norm.is_finite() {
        state.skipped += 1;
        return Ok(StepOutcome {
            applied: false,
            grad_norm: norm,
            clipped: false,
        });
    }
    let mut clipped = false;
    if let Some(c) = clip {
        if norm > c {
            let factor = T::lit(c / norm);
            grads.iter_mut().for_each(|g| g.scale_in_place(factor));
            clipped = true;
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    let (b1, b2) = (T::lit(hp.beta1), T::lit(hp.beta2));
    let (one, eps) = (T::one(), T::lit(hp.eps));
    let step_size = T::lit(lr / bc1);
    let bc2_sqrt = T::lit(bc2.sqrt());
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.iter())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            *pi = *pi - step_size * *mi / ((*vi).sqrt() / bc2_sqrt + eps);
        }
    }
    Ok(StepOutcome {
        applied: true,
        grad_norm: norm,
        clipped,
    })
}

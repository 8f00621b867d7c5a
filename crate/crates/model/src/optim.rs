//! AdamW with decoupled weight decay, global-norm gradient clipping and an
//! exponential moving average of the weights.

use candle_core::backprop::GradStore;
use candle_core::{Result, Tensor, Var};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(vars: &[(String, Var)], lr: f64, weight_decay: f64) -> Result<Self> {
        let zeros = |v: &Var| v.as_tensor().zeros_like();
        Ok(Self {
            lr,
            weight_decay,
            step: 0,
            m: vars.iter().map(|(_, v)| zeros(v)).collect::<Result<_>>()?,
            v: vars.iter().map(|(_, v)| zeros(v)).collect::<Result<_>>()?,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn state(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Tensor>, v: Vec<Tensor>) {
        assert_eq!(m.len(), self.m.len(), "optimizer state size");
        assert_eq!(v.len(), self.v.len(), "optimizer state size");
        self.step = step;
        self.m = m;
        self.v = v;
    }

    /// One update with gradients scaled by `grad_scale` (for clipping).
    pub fn apply(&mut self, vars: &[(String, Var)], grads: &GradStore, grad_scale: f64, lr: f64) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for (i, (_, var)) in vars.iter().enumerate() {
            let Some(g) = grads.get(var.as_tensor()) else { continue };
            let g = (g.detach() * grad_scale)?;
            self.m[i] = ((&self.m[i] * BETA1)? + (&g * (1.0 - BETA1))?)?;
            self.v[i] = ((&self.v[i] * BETA2)? + (g.sqr()? * (1.0 - BETA2))?)?;
            let m_hat = (&self.m[i] / bc1)?;
            let v_hat = (&self.v[i] / bc2)?;
            let update = m_hat.div(&(v_hat.sqrt()? + EPS)?)?;
            let theta = var.as_tensor().detach();
            let decayed = (&theta * (1.0 - lr * self.weight_decay))?;
            var.set(&(decayed - (update * lr)?)?)?;
        }
        Ok(())
    }
}

/// Global L2 norm of all available gradients.
pub fn grad_norm(vars: &[(String, Var)], grads: &GradStore) -> Result<f64> {
    let mut total = 0.0;
    for (_, var) in vars {
        if let Some(g) = grads.get(var.as_tensor()) {
            total += g.sqr()?.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
        }
    }
    Ok(total.sqrt())
}

/// Shadow weights `s ← d·s + (1-d)·θ` with `d = min(rate, (1+k)/(10+k))` so
/// early updates are not dominated by the random initialization.
pub struct Ema {
    pub rate: f64,
    updates: u64,
    shadow: Vec<Tensor>,
}

impl Ema {
    pub fn new(vars: &[(String, Var)], rate: f64) -> Result<Self> {
        Ok(Self {
            rate,
            updates: 0,
            shadow: vars.iter().map(|(_, v)| v.as_tensor().detach().copy()).collect::<Result<_>>()?,
        })
    }

    pub fn decay(&self) -> f64 {
        let k = self.updates as f64;
        self.rate.min((1.0 + k) / (10.0 + k))
    }

    pub fn update(&mut self, vars: &[(String, Var)]) -> Result<()> {
        let d = self.decay();
        for (s, (_, var)) in self.shadow.iter_mut().zip(vars) {
            *s = ((&*s * d)? + (var.as_tensor().detach() * (1.0 - d))?)?;
        }
        self.updates += 1;
        Ok(())
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.shadow
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn restore(&mut self, updates: u64, shadow: Vec<Tensor>) {
        assert_eq!(shadow.len(), self.shadow.len(), "ema state size");
        self.updates = updates;
        self.shadow = shadow;
    }
}

use crate::{Error, Result, Tensor};

/// How weight decay enters the update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WeightDecay {
    /// `wd · θ` is added to the gradient before the moment updates.
    #[default]
    Coupled,
    /// `lr · wd · θ` is subtracted from the parameter after the Adam step.
    Decoupled,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay_mode: WeightDecay,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
            decay_mode: WeightDecay::Coupled,
        }
    }
}

/// Adam with bias correction.
///
/// First and second moments are kept per parameter tensor and always have
/// the parameter's shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        let v = m.clone();
        Self { config, step: 0, m, v }
    }

    /// Rebuild from saved moments; shapes are checked on the next step.
    pub fn from_state(config: AdamConfig, step: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Result<Self> {
        if m.len() != v.len() {
            return Err(Error::Shape {
                op: "adam state",
                lhs: vec![m.len()],
                rhs: vec![v.len()],
            });
        }
        for (a, b) in m.iter().zip(&v) {
            if a.shape() != b.shape() {
                return Err(Error::Shape {
                    op: "adam state",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
        }
        Ok(Self { config, step, m, v })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// One update of every parameter. `grads[i] == None` is treated as a
    /// zero gradient (weight decay still applies).
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<&[f64]>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: vec![params.len(), grads.len()],
                rhs: vec![self.m.len()],
            });
        }
        for (i, p) in params.iter().enumerate() {
            if p.shape() != self.m[i].shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: self.m[i].shape().to_vec(),
                });
            }
            if let Some(g) = grads[i] {
                if g.len() != p.numel() {
                    return Err(Error::Shape {
                        op: "adam_step grad",
                        lhs: p.shape().to_vec(),
                        rhs: vec![g.len()],
                    });
                }
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let theta = p.data_mut();
            for j in 0..theta.len() {
                let mut gj = grads[i].map_or(0.0, |g| g[j]);
                if c.decay_mode == WeightDecay::Coupled {
                    gj += c.weight_decay * theta[j];
                }
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                let mut update = mhat / (vhat.sqrt() + c.eps);
                if c.decay_mode == WeightDecay::Decoupled {
                    update += c.weight_decay * theta[j];
                }
                theta[j] -= c.lr * update;
            }
        }
        Ok(())
    }
}

use rand::{Rng, RngCore};
use regada_autodiff::{BatchNormStats, Graph, Mode, Tensor, Var};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors plus named batch-norm running statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    stat_names: Vec<String>,
    stats: Vec<BatchNormStats>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Weight matrix `fan_in × fan_out`, uniform in ±√(1/fan_in).
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut dyn RngCore,
    ) -> ParamId {
        let bound = (1.0 / fan_in as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, Tensor::matrix(rows, cols, data))
    }

    pub fn add_stats(&mut self, name: impl Into<String>, width: usize) -> usize {
        self.stat_names.push(name.into());
        self.stats.push(BatchNormStats::new(width));
        self.stats.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn stats(&self) -> &[BatchNormStats] {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut [BatchNormStats] {
        &mut self.stats
    }

    pub fn set_stats(&mut self, stats: Vec<BatchNormStats>) {
        debug_assert_eq!(stats.len(), self.stats.len());
        self.stats = stats;
    }

    pub fn total_elements(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Every parameter and running statistic as `(name, tensor)`; statistics
    /// appear as `<name>.running_mean` / `<name>.running_var` rows.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self.names.iter().cloned().zip(self.values.iter().cloned()).collect();
        for (n, s) in self.stat_names.iter().zip(&self.stats) {
            out.push((format!("{n}.running_mean"), Tensor::row(s.running_mean.clone())));
            out.push((format!("{n}.running_var"), Tensor::row(s.running_var.clone())));
        }
        out
    }

    /// Replace every value by the tensor `get` returns for its name.
    pub fn load_named(&mut self, get: impl Fn(&str) -> Option<Tensor>) -> Result<()> {
        let fetch = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let t = get(name).ok_or_else(|| Error::Validation(format!("missing tensor {name:?}")))?;
            if t.shape() != shape {
                return Err(Error::Validation(format!(
                    "tensor {name:?} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(t)
        };
        for i in 0..self.values.len() {
            let shape = self.values[i].shape().to_vec();
            self.values[i] = fetch(&self.names[i], &shape)?;
        }
        for i in 0..self.stats.len() {
            let w = self.stats[i].width();
            let n = &self.stat_names[i];
            let mean = fetch(&format!("{n}.running_mean"), &[1, w])?;
            let var = fetch(&format!("{n}.running_var"), &[1, w])?;
            self.stats[i] = BatchNormStats {
                running_mean: mean.into_data(),
                running_var: var.into_data(),
            };
        }
        Ok(())
    }
}

/// One forward pass: the graph, a graph variable per parameter, a working
/// copy of the batch-norm statistics, the mode and the dropout stream.
pub struct Ctx<'r> {
    pub g: Graph,
    vars: Vec<Var>,
    stats: Vec<BatchNormStats>,
    pub mode: Mode,
    pub rng: &'r mut dyn RngCore,
}

impl<'r> Ctx<'r> {
    pub fn new(store: &ParamStore, mode: Mode, trainable: bool, rng: &'r mut dyn RngCore) -> Self {
        let mut g = Graph::new();
        let vars = store
            .values
            .iter()
            .map(|t| {
                if trainable {
                    g.leaf(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        Self {
            g,
            vars,
            stats: store.stats.clone(),
            mode,
            rng,
        }
    }

    /// Wrap an existing graph whose `vars` already hold the parameters,
    /// in store order.
    pub fn from_parts(
        g: Graph,
        vars: Vec<Var>,
        stats: Vec<BatchNormStats>,
        mode: Mode,
        rng: &'r mut dyn RngCore,
    ) -> Self {
        Self {
            g,
            vars,
            stats,
            mode,
            rng,
        }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn stats(&self) -> &[BatchNormStats] {
        &self.stats
    }

    pub fn batch_norm(&mut self, x: Var, gamma: ParamId, beta: ParamId, stats: usize) -> Result<Var> {
        let (gv, bv) = (self.var(gamma), self.var(beta));
        Ok(self.g.batch_norm(x, gv, bv, &mut self.stats[stats], self.mode)?)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: ParamId, beta: ParamId) -> Result<Var> {
        let (gv, bv) = (self.var(gamma), self.var(beta));
        Ok(self.g.layer_norm(x, gv, bv)?)
    }

    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        Ok(self.g.dropout(x, p, self.mode, &mut *self.rng)?)
    }

    /// Gradient of every parameter after `backward`, `None` where no
    /// gradient flowed.
    pub fn param_grads(&self) -> Vec<Option<&[f64]>> {
        self.vars.iter().map(|&v| self.g.grad(v)).collect()
    }
}

/// Affine map `y = x·W (+ b)` with `W: in × out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut dyn RngCore,
    ) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), fan_in, fan_out, fan_in, rng);
        let bias = bias.then(|| store.add_uniform(format!("{name}.bias"), 1, fan_out, fan_in, rng));
        Self { weight, bias }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let w = ctx.var(self.weight);
        let y = ctx.g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let bv = ctx.var(b);
                Ok(ctx.g.add_row(y, bv)?)
            }
            None => Ok(y),
        }
    }
}

/// Learnable `1 × width` scale (ones) and shift (zeros).
pub(crate) fn add_affine(store: &mut ParamStore, name: &str, width: usize) -> (ParamId, ParamId) {
    let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[1, width], 1.0));
    let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[1, width]));
    (gamma, beta)
}

//! The conditional noise-prediction network and its low-rank adapter.
//!
//! A small dense network with `tanh` hidden activations. Its input is the
//! concatenation `[fused latent | time embedding | mutual | history | prompt]`
//! where the fused latent is `(1 - eta) x_t + eta m`. Gradients are computed
//! by hand; the trainable set is the base weights when no adapter is
//! attached and the adapter factors otherwise.

use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{check_dim, Error, Result};
use crate::rng;
use crate::sampler::{fuse_mutual, Condition};

const MODULE: &str = "denoiser";

/// A dense layer mapping `cols` inputs to `rows` outputs, row-major weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut d = Self::zeros(n, n);
        for i in 0..n {
            d.weight[i * n + i] = 1.0;
        }
        d
    }

    /// Gaussian weights with variance `1 / cols`, zero bias.
    pub fn random(rows: usize, cols: usize, rng: &mut rng::Rng) -> Self {
        let sd = 1.0 / (cols as f64).sqrt();
        let weight = (0..rows * cols).map(|_| sd * rng::normal(rng)).collect();
        Self {
            rows,
            cols,
            weight,
            bias: vec![0.0; rows],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.clone();
        matvec_add(&self.weight, self.cols, x, &mut y);
        y
    }
}

/// `y += M x` for a row-major `M` with `cols` columns.
fn matvec_add(m: &[f64], cols: usize, x: &[f64], y: &mut [f64]) {
    for (row, yi) in m.chunks_exact(cols).zip(y.iter_mut()) {
        *yi += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `y += M^T g`.
fn matvec_t_add(m: &[f64], cols: usize, g: &[f64], y: &mut [f64]) {
    for (row, gi) in m.chunks_exact(cols).zip(g) {
        for (yj, mij) in y.iter_mut().zip(row) {
            *yj += mij * gi;
        }
    }
}

/// `acc += scale * a b^T`.
fn outer_add(acc: &mut [f64], a: &[f64], b: &[f64], scale: f64) {
    for (row, ai) in acc.chunks_exact_mut(b.len()).zip(a) {
        let s = scale * ai;
        for (r, bj) in row.iter_mut().zip(b) {
            *r += s * bj;
        }
    }
}

/// Low-rank factors for one layer: `a` is `rank x cols`, `b` is `rows x rank`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRank {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adapter {
    pub rank: usize,
    pub scale: f64,
    pub layers: Vec<LowRank>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserShape {
    pub latent_dim: usize,
    pub time_dim: usize,
    pub prompt_dim: usize,
    pub hidden: usize,
}

impl Default for DenoiserShape {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            time_dim: 8,
            prompt_dim: 8,
            hidden: 64,
        }
    }
}

impl DenoiserShape {
    pub fn input_dim(&self) -> usize {
        3 * self.latent_dim + self.time_dim + self.prompt_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserParams {
    pub shape: DenoiserShape,
    pub layers: Vec<Dense>,
    pub adapter: Option<Adapter>,
    /// Base layers are read-only once set.
    pub frozen: bool,
}

/// Sinusoidal features of the timestep.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

/// Per-layer intermediate values kept for the backward pass.
struct Tape {
    inputs: Vec<Vec<f64>>,
    /// Adapter projections `A x` per layer, when an adapter is attached.
    projections: Vec<Vec<f64>>,
    /// Post-activation outputs of the hidden layers.
    activations: Vec<Vec<f64>>,
}

impl DenoiserParams {
    /// Three dense layers: input -> hidden -> hidden -> latent.
    pub fn new(shape: DenoiserShape, seed: u64) -> Self {
        let mut r = rng::rng(seed, &[rng::tag("denoiser-init")]);
        let dims = [shape.input_dim(), shape.hidden, shape.hidden, shape.latent_dim];
        let layers = dims
            .windows(2)
            .map(|w| Dense::random(w[1], w[0], &mut r))
            .collect();
        Self {
            shape,
            layers,
            adapter: None,
            frozen: false,
        }
    }

    pub fn network_input(&self, xt: &[f64], t: usize, cond: &Condition) -> Result<Vec<f64>> {
        let s = &self.shape;
        check_dim(MODULE, s.latent_dim, xt.len())?;
        check_dim(MODULE, s.latent_dim, cond.mutual.len())?;
        check_dim(MODULE, s.latent_dim, cond.history.len())?;
        check_dim(MODULE, s.prompt_dim, cond.prompt.len())?;
        let mut input = Vec::with_capacity(s.input_dim());
        input.extend(fuse_mutual(xt, &cond.mutual, cond.eta)?);
        input.extend(time_embedding(t, s.time_dim));
        input.extend_from_slice(&cond.mutual);
        input.extend_from_slice(&cond.history);
        input.extend_from_slice(&cond.prompt);
        Ok(input)
    }

    fn run(&self, input: Vec<f64>, keep: bool) -> (Vec<f64>, Option<Tape>) {
        let n = self.layers.len();
        let mut tape = Tape {
            inputs: Vec::new(),
            projections: Vec::new(),
            activations: Vec::new(),
        };
        let mut x = input;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut y = layer.apply(&x);
            if let Some(ad) = &self.adapter {
                let lr = &ad.layers[li];
                let mut u = vec![0.0; ad.rank];
                matvec_add(&lr.a, layer.cols, &x, &mut u);
                let mut bu = vec![0.0; layer.rows];
                matvec_add(&lr.b, ad.rank, &u, &mut bu);
                for (yi, v) in y.iter_mut().zip(&bu) {
                    *yi += ad.scale * v;
                }
                if keep {
                    tape.projections.push(u);
                }
            }
            if li + 1 < n {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            if keep {
                tape.inputs.push(std::mem::take(&mut x));
                if li + 1 < n {
                    tape.activations.push(y.clone());
                }
            }
            x = y;
        }
        (x, keep.then_some(tape))
    }

    /// Predicted noise for latent `xt` at timestep `t`.
    pub fn predict_noise(&self, xt: &[f64], t: usize, cond: &Condition) -> Result<Vec<f64>> {
        let input = self.network_input(xt, t, cond)?;
        Ok(self.run(input, false).0)
    }

    /// Prediction together with a closure-free backward handle.
    pub fn predict_with_grad(&self, xt: &[f64], t: usize, cond: &Condition) -> Result<Forward<'_>> {
        let input = self.network_input(xt, t, cond)?;
        let (output, tape) = self.run(input, true);
        Ok(Forward {
            params: self,
            output,
            tape: tape.expect("tape requested"),
        })
    }

    pub fn has_adapter(&self) -> bool {
        self.adapter.is_some()
    }

    /// Number of parameters that receive gradients.
    pub fn trainable_len(&self) -> usize {
        match &self.adapter {
            Some(ad) => ad.layers.iter().map(|l| l.a.len() + l.b.len()).sum(),
            None => self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum(),
        }
    }

    pub fn trainable_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trainable_len());
        match &self.adapter {
            Some(ad) => ad.layers.iter().for_each(|l| {
                out.extend_from_slice(&l.a);
                out.extend_from_slice(&l.b);
            }),
            None => self.layers.iter().for_each(|l| {
                out.extend_from_slice(&l.weight);
                out.extend_from_slice(&l.bias);
            }),
        }
        out
    }

    fn trainable_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match &mut self.adapter {
            Some(ad) => ad
                .layers
                .iter_mut()
                .flat_map(|l| [l.a.as_mut_slice(), l.b.as_mut_slice()])
                .collect(),
            None => self
                .layers
                .iter_mut()
                .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
                .collect(),
        }
    }

    fn check_mutable(&self) -> Result<()> {
        if self.frozen && self.adapter.is_none() {
            return Err(Error::AdapterState("base is frozen and no adapter is attached".into()));
        }
        Ok(())
    }

    pub fn set_trainable_params(&mut self, values: &[f64]) -> Result<()> {
        self.check_mutable()?;
        check_dim(MODULE, self.trainable_len(), values.len())?;
        let mut off = 0;
        for s in self.trainable_slices_mut() {
            s.copy_from_slice(&values[off..off + s.len()]);
            off += s.len();
        }
        Ok(())
    }

    /// `theta -= lr * grad` over the trainable set.
    pub fn sgd_step(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        self.check_mutable()?;
        check_dim(MODULE, self.trainable_len(), grad.len())?;
        let mut off = 0;
        for s in self.trainable_slices_mut() {
            for (p, g) in s.iter_mut().zip(&grad[off..]) {
                *p -= lr * g;
            }
            off += s.len();
        }
        Ok(())
    }

    /// The same network with its adapter removed.
    pub fn base_only(&self) -> Self {
        Self {
            shape: self.shape,
            layers: self.layers.clone(),
            adapter: None,
            frozen: true,
        }
    }

    /// Adds a low-rank adapter to every layer and freezes the base.
    /// `A` starts as small seeded noise and `B` as zero, so the effective
    /// weights equal the base weights until the first update.
    pub fn attach_adapter(&self, rank: usize, scale: f64, seed: u64) -> Result<Self> {
        if self.adapter.is_some() {
            return Err(Error::AdapterState("adapter already attached".into()));
        }
        if rank == 0 {
            return Err(Error::param(MODULE, "adapter rank must be positive"));
        }
        if !scale.is_finite() {
            return Err(Error::param(MODULE, "adapter scale must be finite"));
        }
        let mut r = rng::rng(seed, &[rng::tag("adapter-init")]);
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let sd = 1.0 / (l.cols as f64).sqrt();
                LowRank {
                    a: (0..rank * l.cols).map(|_| sd * rng::normal(&mut r)).collect(),
                    b: vec![0.0; l.rows * rank],
                }
            })
            .collect();
        Ok(Self {
            shape: self.shape,
            layers: self.layers.clone(),
            adapter: Some(Adapter { rank, scale, layers }),
            frozen: true,
        })
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
            && self.adapter.as_ref().is_none_or(|ad| {
                ad.layers
                    .iter()
                    .all(|l| l.a.iter().chain(&l.b).all(|v| v.is_finite()))
            })
    }
}

/// A forward evaluation that can be differentiated.
pub struct Forward<'a> {
    params: &'a DenoiserParams,
    pub output: Vec<f64>,
    tape: Tape,
}

impl Forward<'_> {
    /// Gradient over the trainable set, given `dL/d output`.
    pub fn backward(&self, grad_out: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.trainable_len()];
        self.backward_into(grad_out, 1.0, &mut grad);
        grad
    }

    /// `acc += weight * dL/dtheta`.
    pub fn backward_into(&self, grad_out: &[f64], weight: f64, acc: &mut [f64]) {
        let p = self.params;
        let n = p.layers.len();
        // Offsets of each layer's block in the flat trainable vector.
        let mut offsets = Vec::with_capacity(n);
        let mut off = 0;
        for (li, l) in p.layers.iter().enumerate() {
            offsets.push(off);
            off += match &p.adapter {
                Some(ad) => ad.layers[li].a.len() + ad.layers[li].b.len(),
                None => l.weight.len() + l.bias.len(),
            };
        }
        let mut g: Vec<f64> = grad_out.iter().map(|v| v * weight).collect();
        for li in (0..n).rev() {
            let layer = &p.layers[li];
            if li + 1 < n {
                let h = &self.tape.activations[li];
                g.iter_mut().zip(h).for_each(|(gi, hi)| *gi *= 1.0 - hi * hi);
            }
            let x = &self.tape.inputs[li];
            let o = offsets[li];
            let mut gx = vec![0.0; layer.cols];
            match &p.adapter {
                Some(ad) => {
                    let lr = &ad.layers[li];
                    let u = &self.tape.projections[li];
                    let (na, nb) = (lr.a.len(), lr.b.len());
                    outer_add(&mut acc[o + na..o + na + nb], &g, u, ad.scale);
                    let mut gu = vec![0.0; ad.rank];
                    matvec_t_add(&lr.b, ad.rank, &g, &mut gu);
                    gu.iter_mut().for_each(|v| *v *= ad.scale);
                    outer_add(&mut acc[o..o + na], &gu, x, 1.0);
                    if li > 0 {
                        matvec_t_add(&lr.a, layer.cols, &gu, &mut gx);
                    }
                }
                None => {
                    let nw = layer.weight.len();
                    outer_add(&mut acc[o..o + nw], &g, x, 1.0);
                    acc[o + nw..o + nw + layer.rows]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, gi)| *a += gi);
                }
            }
            if li > 0 {
                matvec_t_add(&layer.weight, layer.cols, &g, &mut gx);
                g = gx;
            }
        }
    }
}

/// One supervised example: a clean latent and its generation condition.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub x0: Vec<f64>,
    pub cond: Condition,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            steps: 3000,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Squared noise-prediction error `||eps - eps_theta(x_t, c, t)||^2` and its
/// gradient for a single example at a given timestep and noise draw.
pub fn noise_loss_and_grad(
    params: &DenoiserParams,
    x0: &[f64],
    cond: &Condition,
    t: usize,
    eps: &[f64],
    sched: &NoiseSchedule,
) -> Result<(f64, Vec<f64>)> {
    check_dim(MODULE, x0.len(), eps.len())?;
    let ab = sched.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let xt: Vec<f64> = x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect();
    let fwd = params.predict_with_grad(&xt, t, cond)?;
    let resid: Vec<f64> = fwd.output.iter().zip(eps).map(|(p, e)| p - e).collect();
    let loss = resid.iter().map(|r| r * r).sum();
    let grad_out: Vec<f64> = resid.iter().map(|r| 2.0 * r).collect();
    Ok((loss, fwd.backward(&grad_out)))
}

/// One SGD step on the batch-mean noise loss.
pub fn pretrain_step(
    params: &mut DenoiserParams,
    batch: &[(&TrainingExample, usize, Vec<f64>)],
    sched: &NoiseSchedule,
    learning_rate: f64,
) -> Result<f64> {
    let parts = {
        let p: &DenoiserParams = params;
        crate::par::map(batch, |(ex, t, eps)| noise_loss_and_grad(p, &ex.x0, &ex.cond, *t, eps, sched))
    };
    let mut grad = vec![0.0; params.trainable_len()];
    let mut loss = 0.0;
    let inv = 1.0 / batch.len() as f64;
    for part in parts {
        let (l, g) = part?;
        loss += l * inv;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b * inv);
    }
    if loss.is_finite() {
        params.sgd_step(&grad, learning_rate)?;
    }
    Ok(loss)
}

/// Supervised noise-prediction training of the base network.
pub fn pretrain(
    params: &DenoiserParams,
    dataset: &[TrainingExample],
    sched: &NoiseSchedule,
    cfg: &PretrainConfig,
) -> Result<(DenoiserParams, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput { module: MODULE });
    }
    if params.adapter.is_some() || params.frozen {
        return Err(Error::AdapterState("pretraining requires a trainable base without adapter".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::param(MODULE, "batch_size must be positive"));
    }
    let mut p = params.clone();
    let mut trace = Vec::with_capacity(cfg.steps);
    let d = p.shape.latent_dim;
    for step in 0..cfg.steps {
        let mut r = rng::rng(cfg.seed, &[rng::tag("pretrain"), step as u64]);
        let batch: Vec<_> = (0..cfg.batch_size)
            .map(|_| {
                let i = rand::Rng::random_range(&mut r, 0..dataset.len());
                let t = rand::Rng::random_range(&mut r, 1..=sched.t_train);
                (&dataset[i], t, rng::normal_vec(&mut r, d))
            })
            .collect();
        let loss = pretrain_step(&mut p, &batch, sched, cfg.learning_rate)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { module: MODULE, step });
        }
        trace.push(loss);
    }
    Ok((p, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_shape() -> DenoiserShape {
        DenoiserShape {
            latent_dim: 2,
            time_dim: 4,
            prompt_dim: 3,
            hidden: 5,
        }
    }

    fn cond(shape: &DenoiserShape) -> Condition {
        let d = shape.latent_dim;
        Condition {
            mutual: (0..d).map(|i| 0.3 - 0.2 * i as f64).collect(),
            history: (0..d).map(|i| 0.1 * i as f64 - 0.5).collect(),
            prompt: (0..shape.prompt_dim).map(|i| (i as f64).sin()).collect(),
            eta: 0.3,
            category: 0,
            outfit_id: "o".into(),
            user_id: "u".into(),
        }
    }

    #[test]
    fn prediction_is_deterministic() {
        let p = DenoiserParams::new(small_shape(), 3);
        let c = cond(&p.shape);
        let a = p.predict_noise(&[0.1, -0.4], 17, &c).unwrap();
        let b = p.predict_noise(&[0.1, -0.4], 17, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert!(p.predict_noise(&[0.1], 17, &c).is_err());
    }

    #[test]
    fn fresh_adapter_is_exactly_inert() {
        let p = DenoiserParams::new(DenoiserShape::default(), 11);
        let q = p.attach_adapter(4, 1.0, 5).unwrap();
        let c = cond(&p.shape);
        let x = vec![0.25; 8];
        assert_eq!(p.predict_noise(&x, 500, &c).unwrap(), q.predict_noise(&x, 500, &c).unwrap());
        assert!(q.frozen);
        assert_eq!(q.base_only().layers, p.layers);
    }

    #[test]
    fn adapter_state_errors() {
        let p = DenoiserParams::new(small_shape(), 0);
        assert!(matches!(p.attach_adapter(0, 1.0, 0), Err(Error::Parameter { .. })));
        let q = p.attach_adapter(2, 1.0, 0).unwrap();
        assert!(matches!(q.attach_adapter(2, 1.0, 0), Err(Error::AdapterState(_))));
        let mut frozen = q.base_only();
        assert!(frozen.sgd_step(&vec![0.0; frozen.trainable_len()], 0.1).is_err());
    }

    #[test]
    fn adapter_parameter_count() {
        let shape = DenoiserShape {
            latent_dim: 16,
            time_dim: 0,
            prompt_dim: 0,
            hidden: 16,
        };
        let mut p = DenoiserParams::new(shape, 0);
        // a single 16x16 layer
        p.layers = vec![Dense::zeros(16, 16)];
        let q = p.attach_adapter(4, 1.0, 0).unwrap();
        assert_eq!(q.trainable_len(), 2 * 4 * 16);
    }

    #[test]
    fn adapter_perturbation_changes_output() {
        let p = DenoiserParams::new(small_shape(), 2).attach_adapter(2, 1.0, 9).unwrap();
        let c = cond(&p.shape);
        let x = [0.3, -0.7];
        let base = p.predict_noise(&x, 40, &c).unwrap();
        let theta = p.trainable_params();
        // B of the output layer is fed by A x, which is nonzero.
        let last = p.adapter.as_ref().unwrap().layers.last().unwrap();
        let idx = theta.len() - last.b.len();
        let mut q = p.clone();
        let mut bumped = theta.clone();
        bumped[idx] += 1e-3;
        q.set_trainable_params(&bumped).unwrap();
        let moved = q.predict_noise(&x, 40, &c).unwrap();
        let delta: f64 = base.iter().zip(&moved).map(|(a, b)| (a - b).abs()).sum();
        assert!(delta > 1e-9, "delta {delta}");
    }

    fn fd_check(p: &DenoiserParams) {
        let sched = NoiseSchedule::new(10, 0.05, 0.2, 5).unwrap();
        let c = cond(&p.shape);
        let x0 = [0.4, -0.9];
        let eps = [0.7, 0.2];
        let t = 6;
        let (_, grad) = noise_loss_and_grad(p, &x0, &c, t, &eps, &sched).unwrap();
        let theta = p.trainable_params();
        let h = 1e-6;
        for i in 0..theta.len() {
            let mut q = p.clone();
            let mut v = theta.clone();
            v[i] += h;
            q.set_trainable_params(&v).unwrap();
            let up = noise_loss_and_grad(&q, &x0, &c, t, &eps, &sched).unwrap().0;
            v[i] -= 2.0 * h;
            q.set_trainable_params(&v).unwrap();
            let down = noise_loss_and_grad(&q, &x0, &c, t, &eps, &sched).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            let denom = fd.abs().max(grad[i].abs()).max(1e-6);
            assert!((fd - grad[i]).abs() / denom < 1e-4, "param {i}: fd {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn base_gradient_matches_finite_differences() {
        fd_check(&DenoiserParams::new(small_shape(), 21));
    }

    #[test]
    fn adapter_gradient_matches_finite_differences() {
        let mut p = DenoiserParams::new(small_shape(), 21).attach_adapter(2, 0.5, 4).unwrap();
        // give B nonzero values so every path carries gradient
        let mut v = p.trainable_params();
        for (i, x) in v.iter_mut().enumerate() {
            *x += 0.05 * ((i as f64) * 0.37).sin();
        }
        p.set_trainable_params(&v).unwrap();
        fd_check(&p);
    }

    #[test]
    fn overfits_a_single_example() {
        let sched = NoiseSchedule::new(100, 1e-3, 0.02, 10).unwrap();
        let mut p = DenoiserParams::new(small_shape(), 1);
        let ex = TrainingExample {
            x0: vec![0.5, -0.5],
            cond: cond(&p.shape),
        };
        let batch = vec![(&ex, 50usize, vec![0.3, -1.1])];
        let mut loss = f64::INFINITY;
        for _ in 0..3000 {
            loss = pretrain_step(&mut p, &batch, &sched, 0.05).unwrap();
        }
        assert!(loss < 1e-3, "loss {loss}");
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let sched = NoiseSchedule::new(100, 1e-3, 0.02, 10).unwrap();
        let p = DenoiserParams::new(small_shape(), 1);
        let data = vec![TrainingExample {
            x0: vec![0.5, -0.5],
            cond: cond(&p.shape),
        }];
        let cfg = PretrainConfig {
            learning_rate: 0.0,
            steps: 20,
            batch_size: 4,
            seed: 3,
        };
        let (q, trace) = pretrain(&p, &data, &sched, &cfg).unwrap();
        assert_eq!(q, p);
        assert_eq!(trace.len(), 20);
        let (_, again) = pretrain(&p, &data, &sched, &cfg).unwrap();
        assert_eq!(trace, again);
    }

    #[test]
    fn seeded_pretraining_is_bitwise_reproducible() {
        let sched = NoiseSchedule::new(100, 1e-3, 0.02, 10).unwrap();
        let p = DenoiserParams::new(small_shape(), 1);
        let data = vec![
            TrainingExample {
                x0: vec![0.5, -0.5],
                cond: cond(&p.shape),
            },
            TrainingExample {
                x0: vec![-1.0, 0.2],
                cond: cond(&p.shape),
            },
        ];
        let cfg = PretrainConfig {
            learning_rate: 0.05,
            steps: 50,
            batch_size: 8,
            seed: 9,
        };
        let (a, ta) = pretrain(&p, &data, &sched, &cfg).unwrap();
        let (b, tb) = pretrain(&p, &data, &sched, &cfg).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a, b);
        assert!(pretrain(&p, &[], &sched, &cfg).is_err());
    }
}

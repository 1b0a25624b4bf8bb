//! Returns, fitness, model/real rollouts, the neural teacher policy, and
//! the symbolic-regression baseline fitness.
//!
//! Everything here works against the shared [`StepModel`] contract, so the
//! same policy object evaluates unchanged on true dynamics and on a learned
//! world model.

use crate::envs::StepModel;
use crate::error::{Error, Result};
use crate::expr::Policy;
use crate::genetics::ParetoArchive;
use crate::worldmodel::{Activation, GradBuf, Regressor, WorldModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Anything that maps a state to a bounded action vector.
pub trait Controller: Sync {
    fn act(&self, state: &[f64], out: &mut [f64]);
}

impl Controller for Policy {
    fn act(&self, state: &[f64], out: &mut [f64]) {
        Policy::act(self, state, out)
    }
}

/// Discount so the last of T rewards carries weight q: gamma = q^(1/(T-1)).
pub fn discount_for(horizon: usize, q: f64) -> Result<f64> {
    if horizon <= 1 {
        return Err(Error::Usage(format!(
            "horizon must exceed 1, got {horizon}"
        )));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Usage(format!("terminal weight q={q} outside [0,1]")));
    }
    Ok(q.powf(1.0 / (horizon as f64 - 1.0)))
}

/// Rollout/fitness configuration: horizon, discount, start states with
/// weights (default 1 each), and the action bounds outputs are clamped to.
#[derive(Clone, Debug)]
pub struct RolloutConfig {
    pub horizon: usize,
    pub gamma: f64,
    pub starts: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
}

impl RolloutConfig {
    pub fn new(
        horizon: usize,
        q: f64,
        starts: Vec<Vec<f64>>,
        action_low: Vec<f64>,
        action_high: Vec<f64>,
    ) -> Result<Self> {
        let gamma = discount_for(horizon, q)?;
        if starts.is_empty() {
            return Err(Error::Usage("empty start set".into()));
        }
        let weights = vec![1.0; starts.len()];
        Ok(RolloutConfig {
            horizon,
            gamma,
            starts,
            weights,
            action_low,
            action_high,
        })
    }
}

fn clamp_action(a: &mut [f64], low: &[f64], high: &[f64]) {
    for (i, v) in a.iter_mut().enumerate() {
        // Non-finite outputs count as the lower bound, matching Policy::act.
        *v = if v.is_finite() {
            v.clamp(low[i], high[i])
        } else {
            low[i]
        };
    }
}

/// Discounted return of one rollout: R = sum_{k<T} gamma^k r_k.
pub fn rollout_return<S: StepModel + ?Sized>(
    step: &S,
    ctrl: &dyn Controller,
    s0: &[f64],
    cfg: &RolloutConfig,
) -> f64 {
    let mut s = s0.to_vec();
    let mut action = vec![0.0; step.action_dim()];
    let mut ret = 0.0;
    let mut disc = 1.0;
    for _ in 0..cfg.horizon {
        ctrl.act(&s, &mut action);
        clamp_action(&mut action, &cfg.action_low, &cfg.action_high);
        let (next, r) = step.step_vec(&s, &action);
        ret += disc * r;
        disc *= cfg.gamma;
        s = next;
    }
    ret
}

/// Fitness F = (1/|S|) sum_s w_s R_s; the CLI reports penalty = -F.
pub fn fitness<S: StepModel + ?Sized>(
    step: &S,
    ctrl: &dyn Controller,
    cfg: &RolloutConfig,
) -> f64 {
    let total: f64 = cfg
        .starts
        .iter()
        .zip(&cfg.weights)
        .map(|(s0, w)| w * rollout_return(step, ctrl, s0, cfg))
        .sum();
    total / cfg.starts.len() as f64
}

/// Seeded start-state sample, shared by training and (with a different
/// seed) evaluation.
pub fn sampled_starts(env: &dyn crate::envs::Env, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| env.sample_start(&mut rng).values).collect()
}

/// Per-front-member evaluation on the real dynamics.
#[derive(Clone, Debug, Serialize)]
pub struct EvalRow {
    pub complexity: u32,
    pub model_penalty: f64,
    pub real_penalty: f64,
    pub expressions: Vec<String>,
}

/// Re-scores the non-dominated front on the real dynamics. The model
/// penalty is the negated fitness recorded during evolution.
pub fn evaluate_real(
    archive: &ParetoArchive,
    real: &dyn StepModel,
    cfg: &RolloutConfig,
) -> Vec<EvalRow> {
    archive
        .front()
        .into_iter()
        .map(|ind| EvalRow {
            complexity: ind.complexity,
            model_penalty: -ind.fitness,
            real_penalty: -fitness(real, &ind.policy, cfg),
            expressions: ind
                .policy
                .trees
                .iter()
                .map(crate::expr::format_tree)
                .collect(),
        })
        .collect()
}

/// Neural teacher: one tanh-hidden regressor per action dimension, its raw
/// output squashed through tanh and scaled into the action bounds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TeacherPolicy {
    pub nets: Vec<Regressor>,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
}

impl TeacherPolicy {
    pub fn new_random(
        state_dim: usize,
        hidden: &[usize],
        action_low: Vec<f64>,
        action_high: Vec<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let nets = (0..action_low.len())
            .map(|_| Regressor::new_random(sizes.clone(), Activation::Tanh, rng))
            .collect();
        TeacherPolicy {
            nets,
            action_low,
            action_high,
        }
    }

    fn squash(&self, dim: usize, u: f64) -> f64 {
        let center = 0.5 * (self.action_low[dim] + self.action_high[dim]);
        let half = 0.5 * (self.action_high[dim] - self.action_low[dim]);
        center + half * u.tanh()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::json!({ "schema_version": 1, "role": "teacher", "policy": self });
        std::fs::write(path, serde_json::to_string(&json).expect("teacher serializes"))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        #[derive(Deserialize)]
        struct File {
            policy: TeacherPolicy,
        }
        let file: File = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: bad teacher file: {e}", path.display())))?;
        Ok(file.policy)
    }
}

impl Controller for TeacherPolicy {
    fn act(&self, state: &[f64], out: &mut [f64]) {
        for (dim, net) in self.nets.iter().enumerate() {
            out[dim] = self.squash(dim, net.forward(state)[0]);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherMethod {
    /// Gradient ascent through the unrolled differentiable model rollout.
    Bptt,
    /// Derivative-free fallback: Gaussian parameter perturbations, keeping
    /// improvements.
    HillClimb,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub restarts: usize,
    pub learning_rate: f64,
    pub method: TeacherMethod,
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            hidden: vec![10, 10],
            epochs: 200,
            restarts: 3,
            learning_rate: 0.02,
            method: TeacherMethod::Bptt,
            seed: 0,
        }
    }
}

/// Simple Adam over a flat parameter vector.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    /// Ascent step (the objective is maximized).
    fn ascend(&mut self, net: &mut Regressor, grad: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let t = self.t as i32;
        let (m, v, lr) = (&mut self.m, &mut self.v, self.lr);
        net.for_each_param_mut(|i, p| {
            m[i] = B1 * m[i] + (1.0 - B1) * grad[i];
            v[i] = B2 * v[i] + (1.0 - B2) * grad[i] * grad[i];
            let mh = m[i] / (1.0 - B1.powi(t));
            let vh = v[i] / (1.0 - B2.powi(t));
            *p += lr * mh / (vh.sqrt() + EPS);
        });
    }
}

/// Model fitness of the teacher plus the gradient of that fitness with
/// respect to the teacher parameters, by reverse-mode differentiation
/// through the unrolled rollout. The world model is treated as frozen.
fn teacher_fitness_and_grads(
    teacher: &TeacherPolicy,
    model: &WorldModel,
    cfg: &RolloutConfig,
) -> (f64, Vec<GradBuf>) {
    let a_dim = model.action_dim;
    let s_dim = model.state_dim;
    let mut grads: Vec<GradBuf> = teacher.nets.iter().map(GradBuf::zeros_like).collect();
    let mut total = 0.0;

    for (s0, w) in cfg.starts.iter().zip(&cfg.weights) {
        // Forward pass, recording the trajectory and raw net outputs.
        let mut states = Vec::with_capacity(cfg.horizon + 1);
        let mut raws = Vec::with_capacity(cfg.horizon);
        let mut actions = Vec::with_capacity(cfg.horizon);
        states.push(s0.clone());
        for k in 0..cfg.horizon {
            let s = &states[k];
            let raw: Vec<f64> = teacher.nets.iter().map(|n| n.forward(s)[0]).collect();
            let action: Vec<f64> = raw
                .iter()
                .enumerate()
                .map(|(d, &u)| teacher.squash(d, u))
                .collect();
            let mut input = s.clone();
            input.extend_from_slice(&action);
            let next: Vec<f64> = model
                .models
                .iter()
                .zip(s)
                .map(|(m, &si)| si + m.forward(&input)[0])
                .collect();
            let mut rin = input;
            rin.extend_from_slice(&next);
            total += w / cfg.starts.len() as f64
                * cfg.gamma.powi(k as i32)
                * model.reward_model.forward(&rin)[0];
            raws.push(raw);
            actions.push(action);
            states.push(next);
        }

        // Backward pass. lambda = d fitness / d s_{k+1}, accumulated from
        // later steps.
        let scale = w / cfg.starts.len() as f64;
        let mut lambda = vec![0.0; s_dim];
        for k in (0..cfg.horizon).rev() {
            let s = &states[k];
            let sn = &states[k + 1];
            let a = &actions[k];
            let mut rin = s.clone();
            rin.extend_from_slice(a);
            rin.extend_from_slice(sn);
            let gr = model
                .reward_model
                .vjp(&rin, &[scale * cfg.gamma.powi(k as i32)], None);
            let (gr_s, rest) = gr.split_at(s_dim);
            let (gr_a, gr_sn) = rest.split_at(a_dim);

            // Total gradient flowing into s_{k+1}.
            let gnext: Vec<f64> = lambda.iter().zip(gr_sn).map(|(l, g)| l + g).collect();

            // s_{k+1} = s_k + delta_i(s_k, a_k): identity path plus the
            // delta networks.
            let mut gs: Vec<f64> = gnext.iter().zip(gr_s).map(|(g, r)| g + r).collect();
            let mut ga = gr_a.to_vec();
            let mut din = s.clone();
            din.extend_from_slice(a);
            for (i, dm) in model.models.iter().enumerate() {
                if gnext[i] == 0.0 {
                    continue;
                }
                let g = dm.vjp(&din, &[gnext[i]], None);
                let (g_s, g_a) = g.split_at(s_dim);
                for (acc, v) in gs.iter_mut().zip(g_s) {
                    *acc += v;
                }
                for (acc, v) in ga.iter_mut().zip(g_a) {
                    *acc += v;
                }
            }

            // Through the squashing into each teacher net.
            for (d, net) in teacher.nets.iter().enumerate() {
                let half = 0.5 * (teacher.action_high[d] - teacher.action_low[d]);
                let du = ga[d] * half * (1.0 - raws[k][d].tanh().powi(2));
                let g_s = net.vjp(s, &[du], Some(&mut grads[d]));
                for (acc, v) in gs.iter_mut().zip(&g_s) {
                    *acc += v;
                }
            }
            lambda = gs;
        }
    }
    (total, grads)
}

/// Trains the teacher by model-based policy search: multi-start gradient
/// ascent through the unrolled model rollout (or hill climbing), returning
/// the best-found policy and its model fitness. A zero-epoch budget returns
/// the first initialization unchanged.
pub fn train_teacher(
    model: &WorldModel,
    rollout: &RolloutConfig,
    cfg: &TeacherConfig,
) -> Result<(TeacherPolicy, f64)> {
    let mut best: Option<(TeacherPolicy, f64)> = None;
    let restarts = cfg.restarts.max(1);
    for restart in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(restart as u64));
        let mut teacher = TeacherPolicy::new_random(
            model.state_dim,
            &cfg.hidden,
            rollout.action_low.clone(),
            rollout.action_high.clone(),
            &mut rng,
        );
        let mut diverged = false;
        match cfg.method {
            TeacherMethod::Bptt => {
                let mut opts: Vec<Adam> = teacher
                    .nets
                    .iter()
                    .map(|n| Adam::new(n.n_params(), cfg.learning_rate))
                    .collect();
                for _ in 0..cfg.epochs {
                    let (f, grads) = teacher_fitness_and_grads(&teacher, model, rollout);
                    if !f.is_finite() {
                        diverged = true;
                        break;
                    }
                    for ((net, opt), g) in teacher.nets.iter_mut().zip(&mut opts).zip(&grads) {
                        opt.ascend(net, &crate::worldmodel::nn::flatten_grads(g));
                    }
                }
            }
            TeacherMethod::HillClimb => {
                let mut current = fitness(model, &teacher, rollout);
                for _ in 0..cfg.epochs {
                    let mut candidate = teacher.clone();
                    for net in &mut candidate.nets {
                        let mut draws = Vec::with_capacity(net.n_params());
                        for _ in 0..net.n_params() {
                            draws.push(rng.random_range(-1.0..1.0) * cfg.learning_rate);
                        }
                        net.for_each_param_mut(|i, p| *p += draws[i]);
                    }
                    let f = fitness(model, &candidate, rollout);
                    if f > current {
                        current = f;
                        teacher = candidate;
                    }
                }
            }
        }
        if diverged {
            continue;
        }
        let f = fitness(model, &teacher, rollout);
        if !f.is_finite() {
            continue;
        }
        if best.as_ref().map_or(true, |(_, bf)| f > *bf) {
            best = Some((teacher, f));
        }
        if cfg.epochs == 0 {
            // Trivial budget: the first initialization is the result.
            break;
        }
    }
    best.ok_or_else(|| {
        Error::Training(format!(
            "teacher training diverged in all {restarts} restarts"
        ))
    })
}

use rand::Rng;

/// (state, teacher action) pairs collected by rolling the teacher on the
/// world model.
#[derive(Clone, Debug)]
pub struct ImitationDataset {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

pub fn make_imitation_dataset(
    teacher: &TeacherPolicy,
    model: &WorldModel,
    starts: &[Vec<f64>],
    horizon: usize,
) -> ImitationDataset {
    let mut states = Vec::with_capacity(starts.len() * horizon);
    let mut actions = Vec::with_capacity(starts.len() * horizon);
    for s0 in starts {
        let mut s = s0.clone();
        let mut a = vec![0.0; model.action_dim];
        for _ in 0..horizon {
            teacher.act(&s, &mut a);
            clamp_action(&mut a, &teacher.action_low, &teacher.action_high);
            let (next, _) = model.step_vec(&s, &a);
            states.push(s);
            actions.push(a.clone());
            s = next;
        }
    }
    ImitationDataset { states, actions }
}

/// Negative regression error: -(1/n) sum_rows sum_dims (pi(s) - a_hat)^2.
/// Higher is better, so the GA maximizes it directly.
pub fn regression_fitness(policy: &Policy, data: &ImitationDataset) -> f64 {
    assert!(!data.states.is_empty());
    let dims = data.actions[0].len();
    let mut out = vec![0.0; dims];
    let mut acc = 0.0;
    for (s, a) in data.states.iter().zip(&data.actions) {
        policy.act(s, &mut out);
        acc += out.iter().zip(a).map(|(o, t)| (o - t).powi(2)).sum::<f64>();
    }
    -acc / data.states.len() as f64
}

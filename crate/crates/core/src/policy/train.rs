//! Rollouts, trajectory gradients and the training loop.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::eval::{fcfs_initial, validate_policy};
use super::loss::{actor_grad, critic_grad, returns, Losses};
use super::net::{argmax, sample_index, softmax, Encoding, InputCache, NetConfig, PolicyNet};
use super::PolicyError;
use crate::rewriter::{
    candidate_regions, candidate_rules, cost, rewrite_step, subsample, ResampleMode, RewriteAction, SearchConfig,
    StepOutcome,
};
use crate::scenario::{generate_scenario, GenConfig};
use crate::schedule::{Instance, Node, ScheduleDag, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub lr0: f64,
    pub lr_decay: f64,
    pub lr_interval: u64,
    pub batch: usize,
    pub steps: u64,
    pub hidden: usize,
    /// Validation period in optimizer steps.
    pub val_every: u64,
    pub val_instances: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            gamma: 0.9,
            lr0: 1e-4,
            lr_decay: 0.9,
            lr_interval: 1000,
            batch: 128,
            steps: 2000,
            hidden: 64,
            val_every: 50,
            val_instances: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate(&self, step: u64) -> f64 {
        self.lr0 * self.lr_decay.powi((step / self.lr_interval.max(1)) as i32)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let pos = [self.alpha, self.lr0, self.lr_decay];
        if pos.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(PolicyError::Config("alpha, lr0 and lr_decay must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(PolicyError::Config("gamma must lie in [0, 1]".into()));
        }
        if self.batch == 0 || self.hidden == 0 || self.lr_interval == 0 || self.val_every == 0 {
            return Err(PolicyError::Config("batch, hidden, lr_interval and val_every must be positive".into()));
        }
        Ok(())
    }
}

/// One recorded decision of a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub region: TaskId,
    pub rules: Vec<Node>,
    pub chosen_rule: usize,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub encodings: Vec<Encoding>,
    /// Input projections shared by the encodings.
    pub cache: InputCache,
    pub steps: Vec<StepRecord>,
    pub initial_cost: f64,
    pub best_cost: f64,
}

/// Samples `search.num_steps` rewriting steps from the current policy,
/// recording the encoding of every visited state.
pub fn rollout<R: Rng + ?Sized>(
    net: &PolicyNet,
    dag0: &ScheduleDag,
    search: &SearchConfig,
    p_c: f64,
    rng: &mut R,
) -> Episode {
    let mut cur = dag0.clone();
    let mut cur_cost = cost(&cur);
    let initial_cost = cur_cost;
    let mut best_cost = cur_cost;
    let mut encodings = Vec::with_capacity(search.num_steps);
    let mut steps = Vec::with_capacity(search.num_steps);
    let mut cache = InputCache::new();
    // rewards in units of mean slowdown, independent of instance size
    let per_task = 1.0 / dag0.instance().num_tasks().max(1) as f64;
    for _ in 0..search.num_steps {
        let regions = subsample(&candidate_regions(&cur), search.region_candidates, rng);
        if regions.is_empty() {
            break;
        }
        let enc = net.encode(&cur, &mut cache);
        let q: Vec<f64> = regions
            .iter()
            .map(|&r| net.region_score(&enc, enc.slot(Node::Task(r))).out)
            .collect();
        let ri = if rng.gen::<f64>() < p_c {
            match search.resample_mode {
                ResampleMode::ArgmaxWithPc => argmax(&q),
                ResampleMode::UniformWithPc => rng.gen_range(0..regions.len()),
            }
        } else {
            sample_index(&softmax(&q), rng)
        };
        let region = regions[ri];
        let rules = subsample(&candidate_rules(&cur, region), search.rule_candidates, rng);
        let rs = enc.slot(Node::Task(region));
        let pre = net.rule_prefix(&enc, rs);
        let logits: Vec<f64> = rules.iter().map(|&u| net.rule_logit_from(&enc, &pre, rs, enc.slot(u)).out).collect();
        let ui = sample_index(&softmax(&logits), rng);
        let (next, outcome) = rewrite_step(&cur, RewriteAction { region, rule: rules[ui] });
        let mut reward = 0.0;
        if outcome == StepOutcome::Applied {
            let c = cost(&next);
            reward = (cur_cost - c) * per_task;
            cur = next;
            cur_cost = c;
            best_cost = best_cost.min(c);
        }
        encodings.push(enc);
        steps.push(StepRecord {
            region,
            rules,
            chosen_rule: ui,
            reward,
        });
    }
    Episode {
        encodings,
        cache,
        steps,
        initial_cost,
        best_cost,
    }
}

fn q_and_logits(net: &PolicyNet, enc: &Encoding, s: &StepRecord) -> (f64, Vec<f64>) {
    let rs = enc.slot(Node::Task(s.region));
    let q = net.region_score(enc, rs).out;
    let pre = net.rule_prefix(enc, rs);
    let logits = s.rules.iter().map(|&u| net.rule_logit_from(enc, &pre, rs, enc.slot(u)).out).collect();
    (q, logits)
}

/// Loss of a recorded trajectory under `net`. With `adv` given, the actor
/// term uses those advantages instead of `G_t − Q_t`, which is what the
/// gradient sees (the baseline is not differentiated).
pub fn trajectory_loss(
    net: &PolicyNet,
    encodings: &[Encoding],
    steps: &[StepRecord],
    adv: Option<&[f64]>,
    gamma: f64,
    alpha: f64,
) -> Result<Losses, PolicyError> {
    if steps.is_empty() {
        return Err(PolicyError::EmptyTrajectory);
    }
    let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
    let g = returns(&rewards, gamma);
    let t = steps.len() as f64;
    let (mut region, mut rule) = (0.0, 0.0);
    for (i, (enc, s)) in encodings.iter().zip(steps).enumerate() {
        let (q, logits) = q_and_logits(net, enc, s);
        let p = softmax(&logits);
        let a = adv.map_or(g[i] - q, |a| a[i]);
        region += (g[i] - q).powi(2) / t;
        rule -= a * p[s.chosen_rule].ln();
    }
    let total = rule + alpha * region;
    if !total.is_finite() {
        return Err(PolicyError::NonFinite);
    }
    Ok(Losses { region, rule, total })
}

/// Adds `scale · ∂L/∂θ` of a recorded trajectory to `grad` and returns its
/// losses. `encodings` must come from `net` through `cache`.
#[allow(clippy::too_many_arguments)]
pub fn trajectory_gradient(
    net: &PolicyNet,
    encodings: &[Encoding],
    cache: &mut InputCache,
    steps: &[StepRecord],
    gamma: f64,
    alpha: f64,
    scale: f64,
    grad: &mut [f64],
) -> Result<Losses, PolicyError> {
    if steps.is_empty() {
        return Err(PolicyError::EmptyTrajectory);
    }
    let h = net.config.hidden;
    let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
    let g = returns(&rewards, gamma);
    let t = steps.len();
    let (mut region, mut rule) = (0.0, 0.0);
    for (i, (enc, s)) in encodings.iter().zip(steps).enumerate() {
        let rs = enc.slot(Node::Task(s.region));
        let qc = net.region_score(enc, rs);
        let pre = net.rule_prefix(enc, rs);
        let cands: Vec<usize> = s.rules.iter().map(|&u| enc.slot(u)).collect();
        let caches: Vec<_> = cands.iter().map(|&c| net.rule_logit_from(enc, &pre, rs, c)).collect();
        let logits: Vec<f64> = caches.iter().map(|c| c.out).collect();
        let p = softmax(&logits);
        let adv = g[i] - qc.out;
        region += adv * adv / t as f64;
        rule -= adv * p[s.chosen_rule].ln();

        let mut dh = vec![0.0; enc.num_slots() * h];
        net.region_backward(&qc, rs, scale * critic_grad(g[i], qc.out, t, alpha), grad, &mut dh);
        let dls: Vec<f64> = actor_grad(&p, s.chosen_rule, adv).into_iter().map(|d| d * scale).collect();
        net.rules_backward(&caches, rs, &cands, &dls, grad, &mut dh);
        net.encode_backward(enc, dh, grad, cache);
    }
    cache.flush(net, grad);
    let total = rule + alpha * region;
    if !total.is_finite() {
        return Err(PolicyError::NonFinite);
    }
    Ok(Losses { region, rule, total })
}

/// One row of the learning curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: u64,
    pub train_loss: Option<f64>,
    #[serde(rename = "L_w")]
    pub l_w: Option<f64>,
    #[serde(rename = "L_u")]
    pub l_u: Option<f64>,
    pub val_slowdown: Option<f64>,
}

/// Everything needed to continue a run bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub config: NetConfig,
    pub step: u64,
    pub params: Vec<f64>,
    pub adam: Adam,
    pub best_val: f64,
    pub best_step: u64,
    pub best_params: Vec<f64>,
}

pub enum TrainEvent<'a> {
    Row(&'a CurveRow),
    /// New best validation score; the network is the one to ship.
    Best { net: &'a PolicyNet, step: u64, val: f64 },
    /// Emitted after every validation.
    State(&'a TrainState),
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 31;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^ (x >> 29)
}

/// Held-out validation instance seeds live far from the training stream.
pub const VALIDATION_SEED_BASE: u64 = 1 << 40;

fn instance(gen: &GenConfig, seed: u64) -> Result<Arc<Instance>, PolicyError> {
    let sc = generate_scenario(gen, seed)?;
    Ok(Arc::new(Instance::new(sc)?))
}

/// Trains a policy on freshly generated instances.
///
/// Every optimizer step draws `batch` instances, builds their FCFS initial
/// schedules, rolls out `search.num_steps` sampled rewriting steps on each,
/// averages the trajectory gradients in batch order and applies one Adam
/// step. Every `val_every` steps the greedy policy is scored on held-out
/// instances.
pub fn train(
    gen: &GenConfig,
    cfg: &TrainConfig,
    search: &SearchConfig,
    net_config: NetConfig,
    resume: Option<TrainState>,
    mut hook: impl FnMut(TrainEvent<'_>),
) -> Result<(PolicyNet, TrainState), PolicyError> {
    cfg.validate()?;
    search.validate().map_err(PolicyError::Config)?;
    let val: Vec<Arc<Instance>> = (0..cfg.val_instances as u64)
        .map(|i| instance(gen, VALIDATION_SEED_BASE + i))
        .collect::<Result<_, _>>()?;

    let mut state = match resume {
        Some(s) => {
            if s.config != net_config {
                return Err(PolicyError::ShapeMismatch("resume state has a different network shape".into()));
            }
            s
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let net = PolicyNet::new(net_config, &mut rng);
            let val0 = validate_policy(&net, &val, search, cfg.seed);
            let s = TrainState {
                config: net_config,
                step: 0,
                adam: Adam::new(net.num_params()),
                best_val: val0,
                best_step: 0,
                best_params: net.params.clone(),
                params: net.params,
            };
            let row = CurveRow {
                step: 0,
                train_loss: None,
                l_w: None,
                l_u: None,
                val_slowdown: Some(val0),
            };
            hook(TrainEvent::Row(&row));
            s
        }
    };
    let mut net = PolicyNet::from_params(net_config, state.params.clone());

    while state.step < cfg.steps {
        let step = state.step;
        let p_c = search.resample_prob(step);
        let scale = 1.0 / cfg.batch as f64;
        let results: Vec<Result<(Vec<f64>, Losses), PolicyError>> = (0..cfg.batch as u64)
            .into_par_iter()
            .map(|i| {
                let inst = instance(gen, mix(cfg.seed, step, i))?;
                let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed ^ 0x5EED, step, i));
                let dag0 = fcfs_initial(&inst);
                let mut ep = rollout(&net, &dag0, search, p_c, &mut rng);
                let mut grad = vec![0.0; net.num_params()];
                if ep.steps.is_empty() {
                    let zero = Losses {
                        region: 0.0,
                        rule: 0.0,
                        total: 0.0,
                    };
                    return Ok((grad, zero));
                }
                let l = trajectory_gradient(&net, &ep.encodings, &mut ep.cache, &ep.steps, cfg.gamma, cfg.alpha, scale, &mut grad)?;
                Ok((grad, l))
            })
            .collect();
        let mut grad = vec![0.0; net.num_params()];
        let (mut lw, mut lu, mut lt) = (0.0, 0.0, 0.0);
        for r in results {
            let (g, l) = r?;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
            lw += l.region * scale;
            lu += l.rule * scale;
            lt += l.total * scale;
        }
        if !lt.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(PolicyError::NonFinite);
        }
        state.adam.step(&mut net.params, &grad, cfg.learning_rate(step));
        state.step += 1;

        let mut row = CurveRow {
            step: state.step,
            train_loss: Some(lt),
            l_w: Some(lw),
            l_u: Some(lu),
            val_slowdown: None,
        };
        let validate_now = state.step % cfg.val_every == 0 || state.step == cfg.steps;
        if validate_now {
            let v = validate_policy(&net, &val, search, cfg.seed);
            row.val_slowdown = Some(v);
            if v < state.best_val {
                state.best_val = v;
                state.best_step = state.step;
                state.best_params = net.params.clone();
                hook(TrainEvent::Best {
                    net: &net,
                    step: state.step,
                    val: v,
                });
            }
        }
        hook(TrainEvent::Row(&row));
        if validate_now {
            state.params = net.params.clone();
            hook(TrainEvent::State(&state));
        }
    }
    state.params = net.params.clone();
    let best = PolicyNet::from_params(net_config, state.best_params.clone());
    Ok((best, state))
}

//! Greedy rewriting with a trained network.

use std::collections::HashSet;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::net::{argmax, sample_index, softmax, Encoding, InputCache, PolicyNet};
use crate::rewriter::{insert_fcfs, rewrite_search, RewritePolicy, SearchConfig, StepOutcome};
use crate::schedule::{Instance, Node, ScheduleDag, TaskId};

/// Drives [`rewrite_search`] with a network.
///
/// Greedy mode takes the best-scored region and rule, skipping actions
/// already tried without effect on the current schedule; sampling mode draws
/// from the two softmaxes.
#[derive(Debug, Clone)]
pub struct NetPolicy<'a> {
    net: &'a PolicyNet,
    greedy: bool,
    enc: Option<Encoding>,
    cache: InputCache,
    tried: HashSet<(TaskId, Node)>,
    exhausted: HashSet<TaskId>,
    last: Option<(TaskId, Node)>,
}

impl<'a> NetPolicy<'a> {
    pub fn greedy(net: &'a PolicyNet) -> Self {
        Self::new(net, true)
    }

    pub fn sampling(net: &'a PolicyNet) -> Self {
        Self::new(net, false)
    }

    fn new(net: &'a PolicyNet, greedy: bool) -> Self {
        Self {
            net,
            greedy,
            enc: None,
            cache: InputCache::new(),
            tried: HashSet::new(),
            exhausted: HashSet::new(),
            last: None,
        }
    }
}

impl RewritePolicy for NetPolicy<'_> {
    fn pick_region<R: Rng + ?Sized>(&mut self, dag: &ScheduleDag, regions: &[TaskId], p_c: f64, rng: &mut R) -> usize {
        let enc = self.net.encode(dag, &mut self.cache);
        let q: Vec<f64> = regions
            .iter()
            .map(|&r| self.net.region_score(&enc, enc.slot(Node::Task(r))).out)
            .collect();
        self.enc = Some(enc);
        if self.greedy {
            let open: Vec<f64> = regions
                .iter()
                .zip(&q)
                .map(|(r, &v)| if self.exhausted.contains(r) { f64::NEG_INFINITY } else { v })
                .collect();
            if open.iter().all(|v| *v == f64::NEG_INFINITY) {
                return argmax(&q);
            }
            return argmax(&open);
        }
        if rng.gen::<f64>() < p_c {
            argmax(&q)
        } else {
            sample_index(&softmax(&q), rng)
        }
    }

    fn pick_rule<R: Rng + ?Sized>(&mut self, dag: &ScheduleDag, region: TaskId, rules: &[Node], rng: &mut R) -> usize {
        let enc = match self.enc.take() {
            Some(e) => e,
            None => self.net.encode(dag, &mut self.cache),
        };
        let rs = enc.slot(Node::Task(region));
        let pre = self.net.rule_prefix(&enc, rs);
        let logits: Vec<f64> = rules
            .iter()
            .map(|&u| self.net.rule_logit_from(&enc, &pre, rs, enc.slot(u)).out)
            .collect();
        let pick = if self.greedy {
            let open: Vec<f64> = rules
                .iter()
                .zip(&logits)
                .map(|(&u, &v)| if self.tried.contains(&(region, u)) { f64::NEG_INFINITY } else { v })
                .collect();
            let untried = open.iter().filter(|v| **v > f64::NEG_INFINITY).count();
            if untried <= 1 {
                self.exhausted.insert(region);
            }
            if untried == 0 {
                argmax(&logits)
            } else {
                argmax(&open)
            }
        } else {
            sample_index(&softmax(&logits), rng)
        };
        self.last = Some((region, rules[pick]));
        pick
    }

    fn observe(&mut self, outcome: StepOutcome) {
        if outcome == StepOutcome::Applied {
            self.tried.clear();
            self.exhausted.clear();
        } else if let Some(a) = self.last {
            self.tried.insert(a);
        }
    }
}

/// Initial schedule used for training and validation: every task inserted
/// in arrival order at its earliest feasible slot.
pub fn fcfs_initial(inst: &Arc<Instance>) -> ScheduleDag {
    let mut dag = ScheduleDag::empty(inst.clone());
    let all: Vec<TaskId> = (0..inst.num_tasks() as TaskId).collect();
    insert_fcfs(&mut dag, &all);
    dag
}

/// Mean average slowdown after greedy rewriting from the FCFS initial
/// schedule of every instance. Instances with no placed task are skipped.
pub fn validate_policy(net: &PolicyNet, instances: &[Arc<Instance>], search: &SearchConfig, seed: u64) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, inst) in instances.iter().enumerate() {
        let dag0 = fcfs_initial(inst);
        if dag0.num_placed() == 0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut pol = NetPolicy::greedy(net);
        let res = rewrite_search(&dag0, &mut pol, search, 0, &mut rng);
        sum += res.best_cost / res.best.num_placed() as f64;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

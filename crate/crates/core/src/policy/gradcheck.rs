//! Central finite-difference check of the trajectory gradient.

use super::net::{dense, InputCache, PolicyNet};
use super::train::{trajectory_gradient, trajectory_loss, StepRecord};
use super::PolicyError;
use crate::schedule::ScheduleDag;

/// Worst relative error of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorError {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Relative error with a floor on the denominator, so that gradients at
/// round-off level are compared absolutely.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares the analytic gradient of the loss of `steps` (taken on
/// `states`) with central differences of step `h` on every parameter. The
/// advantages are frozen at the unperturbed parameters, as in training.
///
/// Central differences of a loss `L` carry round-off of order `|L|·ε/h`,
/// so the relative error uses the floor `1e-6 · max(1, |L|)`.
pub fn gradient_check(
    net: &PolicyNet,
    states: &[ScheduleDag],
    steps: &[StepRecord],
    gamma: f64,
    alpha: f64,
    h: f64,
) -> Result<Vec<TensorError>, PolicyError> {
    let mut cache = InputCache::new();
    let encs: Vec<_> = states.iter().map(|d| net.encode(d, &mut cache)).collect();
    let mut grad = vec![0.0; net.num_params()];
    let base = trajectory_gradient(net, &encs, &mut cache, steps, gamma, alpha, 1.0, &mut grad)?.total;
    let floor = 1e-6 * base.abs().max(1.0);

    let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
    let g = super::loss::returns(&rewards, gamma);
    let adv: Vec<f64> = encs
        .iter()
        .zip(steps)
        .zip(&g)
        .map(|((e, s), g)| {
            let rs = e.slot(crate::schedule::Node::Task(s.region));
            g - net.region_score(e, rs).out
        })
        .collect();

    let loss_at = |p: &PolicyNet| -> Result<f64, PolicyError> {
        let mut cache = InputCache::new();
        let encs: Vec<_> = states.iter().map(|d| p.encode(d, &mut cache)).collect();
        Ok(trajectory_loss(p, &encs, steps, Some(&adv), gamma, alpha)?.total)
    };
    let mut probe = net.clone();
    let mut out = Vec::new();
    for (name, off, shape) in net.offsets.tensors(&net.config) {
        let len: usize = shape.iter().product();
        let mut worst = TensorError {
            name,
            max_rel_error: 0.0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for i in off..off + len {
            let x = probe.params[i];
            probe.params[i] = x + h;
            let up = loss_at(&probe)?;
            probe.params[i] = x - h;
            let down = loss_at(&probe)?;
            probe.params[i] = x;
            let num = (up - down) / (2.0 * h);
            let e = relative_error(grad[i], num, floor);
            if e > worst.max_rel_error {
                worst = TensorError {
                    name,
                    max_rel_error: e,
                    worst_analytic: grad[i],
                    worst_numeric: num,
                };
            }
        }
        out.push(worst);
    }
    Ok(out)
}

/// Smallest distance of any ReLU pre-activation in the heads used by the
/// loss of `steps` from the kink at zero. Central differences are only
/// meaningful when this is well above the step size.
pub fn relu_margin(net: &PolicyNet, states: &[ScheduleDag], steps: &[StepRecord]) -> f64 {
    let hd = net.config.hidden;
    let o = &net.offsets;
    let p = |at: usize, len: usize| &net.params[at..at + len];
    let mut margin = f64::INFINITY;
    let mut two_layers = |x: &[f64], w1: usize, b1: usize, w2: usize, b2: usize| {
        let mut z1 = vec![0.0; hd];
        dense(p(w1, x.len() * hd), p(b1, hd), x, &mut z1);
        let a1: Vec<f64> = z1.iter().map(|v| v.max(0.0)).collect();
        let mut z2 = vec![0.0; hd];
        dense(p(w2, hd * hd), p(b2, hd), &a1, &mut z2);
        for z in z1.iter().chain(&z2) {
            margin = margin.min(z.abs());
        }
    };
    let mut cache = InputCache::new();
    for (dag, s) in states.iter().zip(steps) {
        let enc = net.encode(dag, &mut cache);
        let rs = enc.slot(crate::schedule::Node::Task(s.region));
        two_layers(enc.h(rs), o.r1w, o.r1b, o.r2w, o.r2b);
        for &u in &s.rules {
            let x: Vec<f64> = enc.h(rs).iter().chain(enc.h(enc.slot(u))).copied().collect();
            two_layers(&x, o.u1w, o.u1b, o.u2w, o.u2b);
        }
    }
    margin
}

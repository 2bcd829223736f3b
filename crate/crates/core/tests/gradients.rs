mod common;

use common::*;
use outfit_dpo::denoiser::{noise_loss_and_grad, DenoiserParams};
use outfit_dpo::diffusion::{MeanRule, NoiseSchedule};
use outfit_dpo::dpo::{dpo_pair_loss, DpoConfig, PolicyPair};
use outfit_dpo::experts::{bpr_loss, bpr_loss_and_grad, BprTriple, VbprModel};
use outfit_dpo::rng;

const TOL: f64 = 1e-4;

#[test]
fn pretraining_loss_gradient() {
    let sched = toy_schedule();
    let cond = toy_condition();
    let params = DenoiserParams::new(toy_shape(), 4);
    for (t, seed) in [(1, 0u64), (333, 1), (1000, 2)] {
        let mut r = rng::rng(seed, &[]);
        let x0 = rng::normal_vec(&mut r, 2);
        let eps = rng::normal_vec(&mut r, 2);
        let (_, analytic) = noise_loss_and_grad(&params, &x0, &cond, t, &eps, &sched).unwrap();
        let numeric = numeric_grad(&params.trainable_params(), 1e-6, |p| {
            let mut q = params.clone();
            q.set_trainable_params(p).unwrap();
            noise_loss_and_grad(&q, &x0, &cond, t, &eps, &sched).unwrap().0
        });
        let e = rel_err(&analytic, &numeric);
        assert!(e < TOL, "t={t}: relative error {e}");
    }
}

#[test]
fn bpr_loss_gradient() {
    let mut r = rng::rng(7, &[]);
    let mut model = VbprModel::new(3, 2, 9);
    model.beta_head = vec![0.3, -0.4];
    model.alpha = 0.2;
    for _ in 0..5 {
        let triple = BprTriple {
            positive: rng::normal_vec(&mut r, 3),
            negative: rng::normal_vec(&mut r, 3),
            outfit: rng::normal_vec(&mut r, 3),
        };
        let (_, analytic) = bpr_loss_and_grad(&model, &triple).unwrap();
        let numeric = numeric_grad(&model.params(), 1e-6, |p| {
            let mut m = model.clone();
            m.set_params(p).unwrap();
            bpr_loss(&m, std::slice::from_ref(&triple)).unwrap()
        });
        let e = rel_err(&analytic, &numeric);
        assert!(e < TOL, "relative error {e}");
    }
}

#[test]
fn dpo_loss_gradient() {
    for rule in [MeanRule::Consistent, MeanRule::Literal] {
        dpo_gradient_under(&toy_schedule().with_mean_rule(rule));
    }
}

fn dpo_gradient_under(sched: &NoiseSchedule) {
    let cfg = DpoConfig {
        beta_w: 0.7,
        beta_l: 0.4,
        ..DpoConfig::default()
    };
    for seed in 0..3u64 {
        let pol = perturbed_policy(seed);
        let (w, l) = toy_pair(&pol, sched, 100 + seed);
        for (t, t_prev) in sched.stochastic_transitions() {
            let analytic = dpo_pair_loss(&pol, &w, &l, t, t_prev, sched, &cfg).unwrap();
            assert!(analytic.margin != 0.0);
            let numeric = numeric_grad(&pol.theta.trainable_params(), 1e-6, |p| {
                let mut q: PolicyPair = pol.clone();
                q.theta.set_trainable_params(p).unwrap();
                dpo_pair_loss(&q, &w, &l, t, t_prev, sched, &cfg).unwrap().loss
            });
            let e = rel_err(&analytic.grad, &numeric);
            assert!(e < TOL, "seed {seed}, ({t} -> {t_prev}): relative error {e}");
        }
    }
}

use outfit_dpo::diffusion::*;
use proptest::prelude::*;

fn manual(alpha_bar: Vec<f64>, rule: MeanRule) -> NoiseSchedule {
    let t_train = alpha_bar.len() - 1;
    NoiseSchedule {
        t_train,
        beta_min: 0.1,
        beta_max: 0.1,
        alpha_bar,
        sample_steps: (1..=t_train).rev().collect(),
        mean_rule: rule,
    }
}

fn vec8() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 8)
}

fn rule() -> impl Strategy<Value = MeanRule> {
    prop_oneof![Just(MeanRule::Literal), Just(MeanRule::Consistent)]
}

#[test]
fn posterior_variance_hand_value() {
    let s = manual(vec![1.0, 0.5, 0.25], MeanRule::Literal);
    assert!((posterior_variance(2, 1, &s).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(posterior_variance(1, 0, &s).unwrap(), 0.0);
}

#[test]
fn gaussian_density_integrates_to_one() {
    for (mu, sigma2) in [(0.0, 1.0), (1.5, 0.2), (-2.0, 3.7)] {
        let step = GaussianStep { mu: vec![mu], sigma2 };
        let sd: f64 = f64::sqrt(sigma2);
        let n = 20_000;
        let (lo, hi) = (mu - 10.0 * sd, mu + 10.0 * sd);
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            total += w * gaussian_log_prob(&[x], &step).unwrap().exp();
        }
        total *= h;
        assert!((total - 1.0).abs() < 1e-4, "mass {total}");
    }
}

#[test]
fn degenerate_step_has_no_density() {
    let step = GaussianStep { mu: vec![0.0], sigma2: 0.0 };
    assert!(matches!(gaussian_log_prob(&[0.0], &step), Err(outfit_dpo::Error::DegenerateDensity)));
}

#[test]
fn standard_schedule_states() {
    let s = NoiseSchedule::standard();
    let states = s.states();
    assert_eq!(states.len(), 51);
    assert_eq!(states[0], 1000);
    assert_eq!(states[1], 980);
    assert_eq!(*states.last().unwrap(), 0);
    assert_eq!(s.stochastic_transitions().len(), 49);
    assert_eq!(s.alpha_bar[0], 1.0);
}

proptest! {
    #[test]
    fn forward_then_inverse_round_trips(x0 in vec8(), eps in vec8(), t in 1usize..=1000) {
        let s = NoiseSchedule::standard();
        let xt = forward_noise(&Latent::new(x0.clone(), 0), t, &eps, &s).unwrap();
        let back = estimate_x0(&xt.values, &eps, t, &s).unwrap();
        for (a, b) in back.iter().zip(&x0) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn posterior_variance_is_bounded(i in 0usize..49, rule in rule()) {
        let s = NoiseSchedule::standard().with_mean_rule(rule);
        let (t, tp) = s.stochastic_transitions()[i];
        let v = posterior_variance(t, tp, &s).unwrap();
        prop_assert!(v > 0.0 && v < 1.0 - s.alpha_bar[tp]);
    }

    /// `mean_noise_coefficient` is the slope of the mean in the predicted
    /// noise with `x_t` held fixed; the mean is affine in it.
    #[test]
    fn mean_is_affine_in_predicted_noise(xt in vec8(), e1 in vec8(), e2 in vec8(), i in 0usize..50, rule in rule()) {
        let s = NoiseSchedule::standard().with_mean_rule(rule);
        let (t, tp) = s.transitions()[i];
        let mu = |e: &[f64]| posterior_params(&estimate_x0(&xt, e, t, &s).unwrap(), e, t, tp, &s).unwrap().mu;
        let c = mean_noise_coefficient(t, tp, &s).unwrap();
        let (m1, m2) = (mu(&e1), mu(&e2));
        for k in 0..8 {
            let predicted = m1[k] + c * (e2[k] - e1[k]);
            prop_assert!((predicted - m2[k]).abs() <= 1e-7 * (1.0 + m2[k].abs()));
        }
    }

    /// Under the consistent rule, a perfect noise prediction puts the next
    /// state at exactly the marginal noise level of `t_prev`.
    #[test]
    fn consistent_rule_preserves_marginal_variance(x0 in vec8(), eps in vec8(), i in 0usize..49) {
        let s = NoiseSchedule::standard();
        let (t, tp) = s.stochastic_transitions()[i];
        let xt = forward_noise(&Latent::new(x0.clone(), 0), t, &eps, &s).unwrap().values;
        let zero = vec![0.0; 8];
        let mean_part = sample_step(&xt, &eps, t, tp, &s, &zero).unwrap();
        let ab_p = s.alpha_bar[tp];
        let s2 = posterior_variance(t, tp, &s).unwrap();
        for k in 0..8 {
            let resid = mean_part[k] - ab_p.sqrt() * x0[k];
            let b = (1.0 - ab_p - s2).sqrt();
            prop_assert!((resid - b * eps[k]).abs() <= 1e-6 * (1.0 + resid.abs()));
        }
    }

    #[test]
    fn terminal_step_is_the_clean_estimate(xt in vec8(), eps in vec8(), z in vec8(), rule in rule()) {
        let s = NoiseSchedule::standard().with_mean_rule(rule);
        let (t, tp) = *s.transitions().last().unwrap();
        prop_assert_eq!(tp, 0);
        let next = sample_step(&xt, &eps, t, tp, &s, &z).unwrap();
        let x0 = estimate_x0(&xt, &eps, t, &s).unwrap();
        for (a, b) in next.iter().zip(&x0) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

use std::f64::consts::PI;

use esmaml::policies::PolicySpec;
use esmaml::tasks::{SineFamily, TaskStream};
use esmaml::{deterministic_parallel_map, Error};
use statrs::distribution::{ContinuousCDF, Uniform};

/// Kolmogorov-Smirnov statistic of `sample` against `cdf`.
fn ks_statistic(mut sample: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

#[test]
fn sine_draws_are_uniform_in_range() {
    let family = SineFamily::new(PolicySpec::mlp(1, 1, 32).with_squash(false), 5).unwrap();
    let tasks = family.sample(TaskStream::Train, 10_000, 17);
    let amplitudes: Vec<f64> = tasks.iter().map(|t| t.amplitude).collect();
    let phases: Vec<f64> = tasks.iter().map(|t| t.phase).collect();
    assert!(amplitudes.iter().all(|a| (0.1..=5.0).contains(a)));
    assert!(phases.iter().all(|p| (0.0..=PI).contains(p)));

    // Asymptotic critical value at the 1% level.
    let critical = 1.628 / (tasks.len() as f64).sqrt();
    let amp = Uniform::new(0.1, 5.0).unwrap();
    let phase = Uniform::new(0.0, PI).unwrap();
    let d_amp = ks_statistic(amplitudes, |x| amp.cdf(x));
    let d_phase = ks_statistic(phases, |x| phase.cdf(x));
    assert!(d_amp < critical, "amplitude D = {d_amp}, critical {critical}");
    assert!(d_phase < critical, "phase D = {d_phase}, critical {critical}");
}

#[test]
fn parallel_map_contract() {
    let items: Vec<u64> = (0..1000).collect();
    let square = |_: usize, x: &u64| -> esmaml::Result<u64> { Ok(x * x) };
    let one = deterministic_parallel_map(&items, square, 1).unwrap();
    let many = deterministic_parallel_map(&items, square, 8).unwrap();
    assert_eq!(one, many);
    assert_eq!(one[999], 998_001);

    let empty: Vec<u64> = Vec::new();
    assert!(deterministic_parallel_map(&empty, square, 4).unwrap().is_empty());

    let failing = |i: usize, x: &u64| -> esmaml::Result<u64> {
        if i == 7 || i == 500 {
            Err(Error::InvalidParameter("injected".into()))
        } else {
            Ok(*x)
        }
    };
    let err = deterministic_parallel_map(&items, failing, 4).unwrap_err();
    assert!(err.to_string().contains('7'), "{err}");
    assert!(matches!(err, Error::ParallelItems { index: 7, .. }), "{err:?}");
}

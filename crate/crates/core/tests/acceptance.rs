//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each and exits nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use detcal::confidence::bayesian::{mpiw, picp};
use detcal::confidence::{
    auprc, dece, ece, fit_beta, fit_histogram, fit_logistic, fit_svi, BayesianBase, BinningScheme, SviConfig,
};
use detcal::model::{
    build_dataset, match_frame, BoundingBox, CalibrationSample, Feature, Frame, GroundTruthObject, ImageSize,
    MatchedDataset,
};
use detcal::mot::evaluate;
use detcal::optim::OptimizerConfig;
use detcal::regression::gp_models::{estimate_covariance, fit_gp_normal};
use detcal::regression::metrics::{ence, interval_picp, m_qce, predictions, uce};
use detcal::regression::{fit_isotonic, fit_variance_scaling, GpConfig, RegressionCalibrator, RegressionDataset};
use detcal::special::{chi2_quantile, gaussian_quantile};
use detcal::synthetic::{
    generate_detection_dataset, generate_regression_dataset, generate_tracking_sequence, BoxSampler, ConfidenceLink,
    CounterRng, DetectorDistortion, ScenarioConfig, VarianceDistortion,
};
use detcal::tracking::{
    existence_predict, existence_update, hungarian, run_tracker, ExistenceConfig, GaussianState, KalmanConfig,
    TrackRecord, TrackerConfig,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn logistic_link() -> DetectorDistortion {
    DetectorDistortion {
        link: ConfidenceLink::Logistic { w: 0.5, delta: 0.3, position: None },
        ..DetectorDistortion::default()
    }
}

fn opt() -> OptimizerConfig {
    OptimizerConfig::default()
}

const CONF: [Feature; 1] = [Feature::Confidence];

fn c1_parameter_recovery() -> Outcome {
    let train = generate_detection_dataset(&logistic_link(), 50_000, 1).unwrap();
    let test = generate_detection_dataset(&logistic_link(), 50_000, 2).unwrap();
    let start = Instant::now();
    let model = fit_logistic(&train, &CONF, &opt()).unwrap();
    let elapsed = start.elapsed();
    let p = model.logistic_params().unwrap();
    let cal = test.with_confidences(&model.transform_dataset(&test)).unwrap();
    let (e0, e1) = (ece(&test, 20).unwrap(), ece(&cal, 20).unwrap());
    let ok = (p.weights[0] - 0.5).abs() <= 0.05
        && (p.bias - 0.3).abs() <= 0.05
        && e1 < 0.02
        && e0 >= 0.05
        && elapsed < Duration::from_secs(10);
    check(
        ok,
        format!("w={:.4} delta={:.4} ECE {e0:.4} -> {e1:.4} fit {:.2}s", p.weights[0], p.bias, elapsed.as_secs_f64()),
    )
}

fn c2_histogram_exactness() -> Outcome {
    let ds = generate_detection_dataset(&logistic_link(), 20_000, 3).unwrap();
    let mut worst: f64 = 0.0;
    let cases: [(&[Feature], BinningScheme); 2] = [
        (&CONF, BinningScheme::default_for(1)),
        (&[Feature::Confidence, Feature::Cx, Feature::Cy], BinningScheme::default_for(3)),
    ];
    for (features, scheme) in cases {
        let model = fit_histogram(&ds, features, &scheme, false).unwrap();
        let cal = ds.with_confidences(&model.transform_dataset(&ds)).unwrap();
        worst = worst.max(dece(&cal, features, &scheme).unwrap());
    }
    check(worst < 1e-9, format!("max training D-ECE {worst:.3e}"))
}

fn c3_rank_preservation() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let w = 0.3 + 0.2 * seed as f64;
        let link = if seed % 2 == 0 {
            ConfidenceLink::Logistic { w, delta: -0.5 + 0.1 * seed as f64, position: None }
        } else {
            ConfidenceLink::Beta { a: w, b: 1.5 - 0.1 * seed as f64, c: 0.2 }
        };
        let ds = generate_detection_dataset(
            &DetectorDistortion { link, ..DetectorDistortion::default() },
            5_000,
            100 + seed,
        )
        .unwrap();
        let base = auprc(&ds).unwrap();
        for model in [fit_logistic(&ds, &CONF, &opt()).unwrap(), fit_beta(&ds, &CONF, &opt()).unwrap()] {
            let cal = ds.with_confidences(&model.transform_dataset(&ds)).unwrap();
            worst = worst.max((auprc(&cal).unwrap() - base).abs());
        }
    }
    // Low-confidence detections that are all correct and high-confidence ones
    // that are all wrong: binning reverses the ranking.
    let sample = |confidence: f64, matched: bool| {
        let bbox = BoundingBox::from_array([50.0, 50.0, 10.0, 10.0]);
        CalibrationSample { confidence, label: 0, bbox, matched, variances: None, gt_box: matched.then_some(bbox) }
    };
    let mut samples: Vec<_> = (0..20).map(|i| sample(0.11 + 0.001 * i as f64, true)).collect();
    samples.extend((0..20).map(|i| sample(0.91 + 0.001 * i as f64, false)));
    samples.extend((0..20).map(|i| sample(0.51 + 0.001 * i as f64, i % 2 == 0)));
    let crafted = MatchedDataset::new(samples, 0.5, Some(ImageSize { width: 100.0, height: 100.0 }));
    let hist = fit_histogram(&crafted, &CONF, &BinningScheme::default_for(1), false).unwrap();
    let binned = crafted.with_confidences(&hist.transform_dataset(&crafted)).unwrap();
    let (a0, a1) = (auprc(&crafted).unwrap(), auprc(&binned).unwrap());
    check(
        worst <= 1e-12 && (a1 - a0).abs() > 0.1,
        format!("max |dAUPRC| scaling {worst:.2e}; crafted histogram AUPRC {a0:.3} -> {a1:.3}"),
    )
}

fn c4_bayesian() -> Outcome {
    let start = Instant::now();
    let cfg = |seed| SviConfig { seed, ..SviConfig::default() };
    let link = match logistic_link().link {
        l @ ConfidenceLink::Logistic { .. } => l,
        _ => unreachable!(),
    };
    // Each seed fits independently, so the fits run on separate threads.
    let coverage: Vec<(f64, f64, f64)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..5u64)
            .map(|seed| {
                let link = link.clone();
                scope.spawn(move || {
                    let train = generate_detection_dataset(&logistic_link(), 10_000, 200 + seed).unwrap();
                    let test = generate_detection_dataset(&logistic_link(), 10_000, 300 + seed).unwrap();
                    let mle = fit_logistic(&train, &CONF, &opt()).unwrap();
                    let post = fit_svi(BayesianBase::Logistic, &train, &CONF, &cfg(seed)).unwrap().posterior;
                    let dev = post.mean.iter().zip(&mle.params).map(|(m, p)| (m - p).abs()).fold(0.0, f64::max);
                    let binned = picp(&test, &post, 0.95, 20, 200, seed).unwrap();
                    // Coverage of the generator's true match probability, for
                    // diagnosis only.
                    let preds = post.predict_dataset(&test, 200, 0.95, seed).unwrap();
                    let hits = test
                        .samples
                        .iter()
                        .zip(&preds)
                        .filter(|(s, p)| {
                            let t = link.probability(s.confidence, 0.5, 0.5);
                            p.hpdi.0 <= t && t <= p.hpdi.1
                        })
                        .count();
                    (dev, binned, hits as f64 / test.len() as f64)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let max_dev = coverage.iter().map(|c| c.0).fold(0.0, f64::max);
    let widths: Vec<(f64, f64)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..10u64)
            .map(|seed| {
                scope.spawn(move || {
                    let eval = generate_detection_dataset(&logistic_link(), 2_000, 500 + seed).unwrap();
                    let width = |n: usize| {
                        let train = generate_detection_dataset(&logistic_link(), n, 400 + seed).unwrap();
                        let post = fit_svi(BayesianBase::Logistic, &train, &CONF, &cfg(seed)).unwrap().posterior;
                        mpiw(&eval, &post, 0.95, 200, seed).unwrap()
                    };
                    (width(500), width(50_000))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
    };
    let m_small = median(widths.iter().map(|w| w.0).collect());
    let m_large = median(widths.iter().map(|w| w.1).collect());
    let elapsed = start.elapsed();
    let ok = max_dev <= 0.1
        && coverage.iter().all(|c| (0.85..=1.0).contains(&c.1))
        && m_small > m_large
        && elapsed < Duration::from_secs(60);
    let fmt =
        |f: fn(&(f64, f64, f64)) -> f64| coverage.iter().map(|c| format!("{:.3}", f(c))).collect::<Vec<_>>().join(", ");
    check(
        ok,
        format!(
            "max |mean-MLE| {max_dev:.4}; PICP(0.95) [{}] (coverage of true link [{}]); median MPIW N=500 {m_small:.4} vs N=50000 {m_large:.4}; {:.1}s",
            fmt(|c| c.1),
            fmt(|c| c.2),
            elapsed.as_secs_f64()
        ),
    )
}

fn regression_data(variance: VarianceDistortion, n: usize, seed: u64) -> RegressionDataset {
    let dist = DetectorDistortion { variance, ..DetectorDistortion::default() };
    generate_regression_dataset(&dist, &BoxSampler::default(), n, seed).unwrap()
}

/// Gradient descent on `log w` for the mean Gaussian NLL of one dimension
/// with variance `w² σ²`.
fn gradient_descent_scale(ds: &RegressionDataset, d: usize) -> f64 {
    let (mean, var, gt) = ds.column(d);
    let ratio: Vec<f64> = mean.iter().zip(&var).zip(&gt).map(|((m, v), g)| (g - m).powi(2) / v).collect();
    let n = ratio.len() as f64;
    // d/ds [ s + r e^{-2s} / 2 ] averaged over samples, with s = log w.
    let grad = |s: f64| 1.0 - (-2.0 * s).exp() * ratio.iter().sum::<f64>() / n;
    let mut s = 0.0;
    let mut step = 0.25;
    for _ in 0..10_000 {
        let g = grad(s);
        if g.abs() < 1e-13 {
            break;
        }
        let next = s - step * g;
        if grad(next).abs() < g.abs() {
            s = next;
        } else {
            step *= 0.5;
        }
    }
    s.exp()
}

fn c5_variance_scaling() -> Outcome {
    let ds = regression_data(VarianceDistortion::Constant { factor: 2.0 }, 10_000, 7);
    let model = fit_variance_scaling(&ds).unwrap();
    let mut max_err: f64 = 0.0;
    let mut max_gap: f64 = 0.0;
    for d in 0..4 {
        max_err = max_err.max((model.scale[d] - 2.0).abs());
        max_gap = max_gap.max((model.scale[d] - gradient_descent_scale(&ds, d)).abs());
    }
    let scales: Vec<String> = model.scale.iter().map(|s| format!("{s:.4}")).collect();
    check(
        max_err <= 0.02 && max_gap <= 1e-4,
        format!("scales [{}]; max |c-2| {max_err:.4}; max gap to gradient descent {max_gap:.2e}", scales.join(", ")),
    )
}

fn c6_quantile_self_consistency() -> Outcome {
    let ds = regression_data(VarianceDistortion::None, 10_000, 8);
    let preds = predictions(&ds);
    let mq = m_qce(&preds, 0.95).unwrap();
    let mut uce_ratio: f64 = 0.0;
    let mut ence_max: f64 = 0.0;
    for d in 0..4 {
        let (mean, var, gt) = ds.column(d);
        let mv = var.iter().sum::<f64>() / var.len() as f64;
        uce_ratio = uce_ratio.max(uce(&var, &mean, &gt, 20).unwrap() / mv);
        ence_max = ence_max.max(ence(&var, &mean, &gt, 20).unwrap());
    }
    let inflated = VarianceDistortion::Constant { factor: 0.5 };
    let train = regression_data(inflated.clone(), 10_000, 9);
    let test = regression_data(inflated, 10_000, 10);
    let iso = RegressionCalibrator::Isotonic(fit_isotonic(&train).unwrap());
    let dists = iso.distributions(&test).unwrap();
    let mut picp_dev: f64 = 0.0;
    let mut details = Vec::new();
    for tau in [0.5, 0.9] {
        for (d, dd) in dists.iter().enumerate() {
            let p = interval_picp(dd, &test.column(d).2, tau).unwrap();
            picp_dev = picp_dev.max((p - tau).abs());
            details.push(format!("{p:.3}"));
        }
    }
    check(
        mq < 0.02 && uce_ratio < 0.05 && ence_max < 0.05 && picp_dev <= 0.02,
        format!(
            "M-QCE(0.95) {mq:.4}; max UCE/mean var {uce_ratio:.4}; max ENCE {ence_max:.4}; isotonic PICP [{}] max dev {picp_dev:.4}",
            details.join(", ")
        ),
    )
}

fn mean_uce(cal: &RegressionCalibrator, test: &RegressionDataset) -> f64 {
    let preds = cal.predictions(test).unwrap();
    (0..test.dims)
        .map(|d| {
            let var: Vec<f64> = preds.iter().map(|p| p.cov[(d, d)]).collect();
            let (mean, _, gt) = test.column(d);
            uce(&var, &mean, &gt, 20).unwrap()
        })
        .sum::<f64>()
        / test.dims as f64
}

fn c7_gp_vs_scaling() -> Outcome {
    let gp_cfg = |seed| GpConfig { seed, ..GpConfig::default() };
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in 0..5u64 {
        let profile = VarianceDistortion::MeanDependent { amplitude: 0.6, period: 600.0 };
        let train = regression_data(profile.clone(), 4_000, 600 + seed);
        let test = regression_data(profile, 10_000, 700 + seed);
        let vs = RegressionCalibrator::VarianceScaling(fit_variance_scaling(&train).unwrap());
        let gp = RegressionCalibrator::Gp(fit_gp_normal(&train, &gp_cfg(seed)).unwrap());
        let (u_vs, u_gp) = (mean_uce(&vs, &test), mean_uce(&gp, &test));
        wins += usize::from(u_gp < u_vs);
        detail.push(format!("{u_gp:.2}<{u_vs:.2}"));
    }
    let constant = VarianceDistortion::Constant { factor: 2.0 };
    let train = regression_data(constant.clone(), 4_000, 800);
    let test = regression_data(constant, 10_000, 801);
    let vs = RegressionCalibrator::VarianceScaling(fit_variance_scaling(&train).unwrap());
    let gp = RegressionCalibrator::Gp(fit_gp_normal(&train, &gp_cfg(0)).unwrap());
    let (u_vs, u_gp) = (mean_uce(&vs, &test), mean_uce(&gp, &test));
    let rel = (u_gp - u_vs).abs() / u_vs;
    check(
        wins == 5 && rel <= 0.05,
        format!(
            "mean-dependent UCE gp<vs [{}] ({wins}/5); constant UCE gp {u_gp:.3} vs {u_vs:.3} (rel {rel:.3})",
            detail.join(", ")
        ),
    )
}

fn c8_covariance() -> Outcome {
    let dist = DetectorDistortion { wh_correlation: 0.6, ..DetectorDistortion::default() };
    let train = generate_regression_dataset(&dist, &BoxSampler::default(), 10_000, 11).unwrap();
    let test = generate_regression_dataset(&dist, &BoxSampler::default(), 10_000, 12).unwrap();
    let model = estimate_covariance(&train, &GpConfig::default()).unwrap();
    let rho = model.correlation_matrix()[(2, 3)];
    let mut asym: f64 = 0.0;
    let mut factorable = 0;
    for n in 0..test.len() {
        let s = model.covariance(test.mean_of(n), test.var_of(n)).unwrap();
        asym = asym.max((&s - s.transpose()).amax());
        factorable += usize::from(s.clone().cholesky().is_some());
    }
    check(
        (rho - 0.6).abs() <= 0.1 && asym < 1e-10 && factorable == test.len(),
        format!("rho(w,h) {rho:.4}; max asymmetry {asym:.2e}; Cholesky {factorable}/{}", test.len()),
    )
}

/// `erf` from the all-positive series `2/√π · e^{-x²} Σ 2ⁿ x^{2n+1} / (2n+1)!!`.
fn erf_oracle(x: f64) -> f64 {
    let (sign, x) = if x < 0.0 { (-1.0, -x) } else { (1.0, x) };
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term > 1e-18 * sum {
        n += 1.0;
        term *= 2.0 * x * x / (2.0 * n + 1.0);
        sum += term;
    }
    sign * 2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp() * sum
}

fn normal_cdf_oracle(z: f64) -> f64 {
    0.5 * (1.0 + erf_oracle(z / std::f64::consts::SQRT_2))
}

/// Chi-square CDF for integer degrees of freedom through the two-step
/// recursion `P(k+2, x) = P(k, x) - (x/2)^{k/2} e^{-x/2} / Γ(k/2 + 1)`.
fn chi2_cdf_oracle(k: usize, x: f64) -> f64 {
    let h = 0.5 * x;
    let (mut p, mut dof) =
        if k % 2 == 0 { (1.0 - (-h).exp(), 2) } else { (2.0 * normal_cdf_oracle(x.sqrt()) - 1.0, 1) };
    while dof < k {
        let half = dof as f64 / 2.0;
        // Γ(half + 1) for integer or half-integer arguments.
        let mut gamma = if dof % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() / 2.0 };
        let mut a = if dof % 2 == 0 { 1.0 } else { 1.5 };
        while a < half + 1.0 - 1e-9 {
            gamma *= a;
            a += 1.0;
        }
        p -= h.powf(half) * (-h).exp() / gamma;
        dof += 2;
    }
    p
}

fn bisect(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn c9_numeric_kernels() -> Outcome {
    let mut worst_chi: f64 = 0.0;
    let mut worst_gauss: f64 = 0.0;
    for l in 1..=8usize {
        for i in 1..=99 {
            let tau = i as f64 / 100.0;
            let oracle = bisect(|x| chi2_cdf_oracle(l, x), tau, 0.0, 100.0);
            worst_chi = worst_chi.max((chi2_quantile(l, tau).unwrap() - oracle).abs());
            let mu = l as f64 - 4.0;
            let sigma = 0.5 * l as f64;
            let oracle = bisect(|x| normal_cdf_oracle((x - mu) / sigma), tau, mu - 20.0 * sigma, mu + 20.0 * sigma);
            worst_gauss = worst_gauss.max((gaussian_quantile(mu, sigma, tau) - oracle).abs());
        }
    }
    let q = chi2_quantile(4, 0.95).unwrap();
    check(
        worst_chi <= 1e-8 && worst_gauss <= 1e-8 && (q - 9.487729).abs() <= 1e-5,
        format!("max error chi2 {worst_chi:.2e}, gaussian {worst_gauss:.2e}; chi2_4(0.95) = {q:.7}"),
    )
}

/// Random-walk grid filter: prediction by Gaussian convolution, update by
/// pointwise likelihood, on a fixed uniform grid.
fn grid_filter_means(prior: (f64, f64), q: f64, r: f64, zs: &[f64]) -> Vec<f64> {
    let (lo, hi, n) = (-60.0, 60.0, 2401);
    let dx = (hi - lo) / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| lo + dx * i as f64).collect();
    let gauss = |x: f64, v: f64| (-0.5 * x * x / v).exp();
    let mut p: Vec<f64> = xs.iter().map(|x| gauss(x - prior.0, prior.1)).collect();
    let kernel: Vec<f64> = (0..2 * n - 1).map(|k| gauss((k as f64 - (n - 1) as f64) * dx, q)).collect();
    let mut means = Vec::new();
    for &z in zs {
        let mut next = vec![0.0; n];
        for (i, out) in next.iter_mut().enumerate() {
            *out = (0..n).map(|j| p[j] * kernel[i + n - 1 - j]).sum();
        }
        for (v, x) in next.iter_mut().zip(&xs) {
            *v *= gauss(z - x, r);
        }
        let total: f64 = next.iter().sum();
        p = next.into_iter().map(|v| v / total).collect();
        means.push(p.iter().zip(&xs).map(|(w, x)| w * x).sum());
    }
    means
}

fn c10_kalman() -> Outcome {
    let one = DMatrix::from_element(1, 1, 1.0);
    let prior = GaussianState::new(DVector::from_element(1, 0.0), one.clone());
    let post = prior.update(&DVector::from_element(1, 2.0), &one, &one).unwrap();
    let conj = (post.mean[0] - 1.0).abs().max((post.cov[(0, 0)] - 0.5).abs());

    let (q, r): (f64, f64) = (0.5, 2.0);
    let mut rng = CounterRng::new(13);
    let mut truth = 0.0;
    let zs: Vec<f64> = (0..50)
        .map(|_| {
            truth += q.sqrt() * rng.normal();
            truth + r.sqrt() * rng.normal()
        })
        .collect();
    let grid = grid_filter_means((0.0, 1.0), q, r, &zs);
    let mut state = prior;
    let mut grid_gap: f64 = 0.0;
    for (z, g) in zs.iter().zip(&grid) {
        state = state.predict(&one, &(&one * q)).update(&DVector::from_element(1, *z), &one, &(&one * r)).unwrap();
        grid_gap = grid_gap.max((state.mean[0] - g).abs());
    }

    let cfg = KalmanConfig::default();
    let (f, qm, h) = (cfg.transition(), cfg.process_noise(), cfg.observation());
    let mut s = cfg.initial_state(&[100.0, 100.0, 40.0, 40.0], &DMatrix::identity(4, 4));
    let mut asym: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..10_000 {
        s = s.predict(&f, &qm);
        if rng.uniform() < 0.8 {
            let a = DMatrix::from_fn(4, 4, |_, _| rng.normal());
            let rm = &a * a.transpose() * (0.1 + 5.0 * rng.uniform()) + DMatrix::identity(4, 4) * 0.01;
            let z = &h * &s.mean + DVector::from_fn(4, |_, _| 3.0 * rng.normal());
            match s.update(&z, &h, &rm) {
                Ok(n) => s = n,
                Err(_) => failures += 1,
            }
        }
        asym = asym.max((&s.cov - s.cov.transpose()).amax());
        failures += usize::from(s.cov.clone().cholesky().is_none());
    }
    check(
        conj <= 1e-12 && grid_gap <= 1e-3 && asym < 1e-9 && failures == 0,
        format!("conjugate error {conj:.1e}; grid-filter max mean gap {grid_gap:.2e}; 10000 steps max asymmetry {asym:.1e}, {failures} failures"),
    )
}

fn c11_existence() -> Outcome {
    let mut rng = CounterRng::new(14);
    let mut worst: f64 = 0.0;
    let mut saturation = true;
    for _ in 0..10_000 {
        let cfg = ExistenceConfig {
            survival: rng.uniform(),
            birth: rng.uniform(),
            precision: rng.uniform_range(0.01, 0.99),
            ..ExistenceConfig::default()
        };
        let p = rng.uniform();
        let pred = existence_predict(p, &cfg);
        worst = worst.max((existence_update(pred, cfg.precision, &cfg) - pred).abs());
        if pred > 0.0 && pred < 1.0 {
            saturation &= existence_update(pred, 1.0, &cfg) == 1.0 && existence_update(pred, 0.0, &cfg) == 0.0;
        }
    }
    check(worst <= 1e-12 && saturation, format!("max uninformative drift {worst:.1e}; saturation {saturation}"))
}

fn brute_assignment(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, need: usize, acc: f64, best: &mut f64) {
        if need == 0 || row == cost.len() {
            if need == 0 {
                *best = best.min(acc);
            }
            return;
        }
        if cost.len() - row > need {
            go(cost, row + 1, used, need, acc, best);
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                go(cost, row + 1, used, need - 1, acc + cost[row][j], best);
                used[j] = false;
            }
        }
    }
    let cols = cost[0].len();
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cols], cost.len().min(cols), 0.0, &mut best);
    best
}

fn c12_hungarian() -> Outcome {
    let mut rng = CounterRng::new(15);
    let mut worst: f64 = 0.0;
    for _ in 0..1_000 {
        let (r, c) = (1 + rng.below(6), 1 + rng.below(6));
        let cost: Vec<Vec<f64>> =
            (0..r).map(|_| (0..c).map(|_| (rng.uniform() * 100.0).round() / 4.0).collect()).collect();
        let assign = hungarian(&cost);
        let total: f64 = assign.iter().enumerate().filter_map(|(i, j)| j.map(|j| cost[i][j])).sum();
        let mut cols: Vec<usize> = assign.iter().flatten().copied().collect();
        let n = cols.len();
        cols.sort_unstable();
        cols.dedup();
        if n != r.min(c) || cols.len() != n {
            return Err(format!("invalid assignment for {r}x{c}"));
        }
        worst = worst.max((total - brute_assignment(&cost)).abs());
    }
    check(worst <= 1e-9, format!("1000 matrices up to 6x6, max gap to brute force {worst:.1e}"))
}

fn ground_truths(frames: &[Frame]) -> Vec<GroundTruthObject> {
    frames.iter().flat_map(|f| f.ground_truths.clone()).collect()
}

fn matched_regression(frames: &[Frame]) -> RegressionDataset {
    let (mut m, mut v, mut g) = (Vec::new(), Vec::new(), Vec::new());
    for f in frames {
        for (di, gi) in match_frame(&f.detections, &f.ground_truths, 0.5).into_iter().enumerate() {
            if let Some(gi) = gi {
                let d = &f.detections[di];
                m.extend(d.bbox.to_array());
                v.extend(d.variances.unwrap());
                g.extend(f.ground_truths[gi].bbox.to_array());
            }
        }
    }
    RegressionDataset::new(4, m, v, g).unwrap()
}

fn c13_tracking_benefit() -> Outcome {
    let start = Instant::now();
    let tracker = TrackerConfig::default();
    let plain = DetectorDistortion::default();
    let flood = ScenarioConfig::fp_flood();
    let train = generate_tracking_sequence(&ScenarioConfig { frames: 300, ..flood.clone() }, &plain, 1000).unwrap();
    let ds = build_dataset(&train, 0.5, 0.0, Some(flood.image_size)).unwrap();
    let conf = detcal::confidence::ConfidenceCalibrator::Scaling(fit_logistic(&ds, &CONF, &opt()).unwrap());
    let mut conf_wins = 0;
    let mut conf_detail = Vec::new();
    for seed in 0..5 {
        let frames = generate_tracking_sequence(&flood, &plain, seed).unwrap();
        let gt = ground_truths(&frames);
        let a = evaluate(&gt, &run_tracker(&frames, &tracker, None, None).unwrap().records, 0.5).unwrap();
        let b = evaluate(&gt, &run_tracker(&frames, &tracker, Some(&conf), None).unwrap().records, 0.5).unwrap();
        conf_wins += usize::from(b.mota > a.mota && b.fp_per_frame < a.fp_per_frame);
        conf_detail.push(format!("{:.2}->{:.2}/{:.1}->{:.1}", a.mota, b.mota, a.fp_per_frame, b.fp_per_frame));
    }

    let inflated =
        DetectorDistortion { variance: VarianceDistortion::Constant { factor: 0.5 }, ..DetectorDistortion::default() };
    let scenario = ScenarioConfig { frames: 300, ..ScenarioConfig::default() };
    let train = generate_tracking_sequence(&scenario, &inflated, 1000).unwrap();
    let reg = RegressionCalibrator::VarianceScaling(fit_variance_scaling(&matched_regression(&train)).unwrap());
    let mut reg_wins = 0;
    let mut reg_detail = Vec::new();
    for seed in 0..5 {
        let frames = generate_tracking_sequence(&scenario, &inflated, seed).unwrap();
        let gt = ground_truths(&frames);
        let ra = run_tracker(&frames, &tracker, None, None).unwrap();
        let rb = run_tracker(&frames, &tracker, None, Some(&reg)).unwrap();
        let (na, nb) = (ra.mean_nis().unwrap(), rb.mean_nis().unwrap());
        let a = evaluate(&gt, &ra.records, 0.5).unwrap().motp_distance.unwrap();
        let b = evaluate(&gt, &rb.records, 0.5).unwrap().motp_distance.unwrap();
        reg_wins += usize::from((nb - 4.0).abs() < (na - 4.0).abs() && b < a);
        reg_detail.push(format!("{na:.2}->{nb:.2}/{a:.3}->{b:.3}"));
    }
    let elapsed = start.elapsed();
    check(
        conf_wins == 5 && reg_wins == 5,
        format!(
            "flood MOTA/FP-per-frame [{}] {conf_wins}/5; inflated NIS/MOTP [{}] {reg_wins}/5; {:.1}s",
            conf_detail.join(", "),
            reg_detail.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

fn gt_box(frame: u64, id: u64, x: f64, y: f64) -> GroundTruthObject {
    GroundTruthObject { label: 0, bbox: BoundingBox::from_array([x, y, 20.0, 20.0]), frame_id: frame, object_id: id }
}

fn track_box(frame: u64, id: u64, x: f64, y: f64) -> TrackRecord {
    TrackRecord {
        frame_id: frame,
        track_id: id,
        label: 0,
        bbox: BoundingBox::from_array([x, y, 20.0, 20.0]),
        existence: 1.0,
        var: [1.0; 4],
    }
}

/// Best IDTP over all one-to-one maps from gt trajectories to track
/// trajectories, by exhaustive search.
fn brute_idtp(counts: &[Vec<usize>]) -> usize {
    fn go(counts: &[Vec<usize>], row: usize, used: &mut Vec<bool>) -> usize {
        if row == counts.len() {
            return 0;
        }
        let mut best = go(counts, row + 1, used);
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                best = best.max(counts[row][j] + go(counts, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    let cols = counts.first().map_or(0, Vec::len);
    go(counts, 0, &mut vec![false; cols])
}

fn c14_mot_metrics() -> Outcome {
    let gt = vec![gt_box(1, 1, 10.0, 50.0), gt_box(2, 1, 12.0, 50.0), gt_box(3, 1, 14.0, 50.0)];
    let tr = vec![track_box(1, 7, 10.0, 50.0), track_box(2, 7, 12.0, 50.0), track_box(3, 9, 14.0, 50.0)];
    let hand = evaluate(&gt, &tr, 0.5).unwrap();
    let hand_ok = (hand.mota - 2.0 / 3.0).abs() < 1e-12 && hand.totals.idsw == 1;

    let gt: Vec<_> =
        (0..20).flat_map(|f| (0..4).map(move |k| gt_box(f, k, 30.0 + 50.0 * k as f64 + f as f64, 60.0))).collect();
    let tr: Vec<_> = gt.iter().map(|g| track_box(g.frame_id, 100 + g.object_id, g.bbox.cx, g.bbox.cy)).collect();
    let perfect = evaluate(&gt, &tr, 0.5).unwrap();
    let perfect_ok = perfect.mota == 1.0 && perfect.idf1 == 1.0;

    let mut rng = CounterRng::new(16);
    let mut worst: f64 = 0.0;
    for _ in 0..300 {
        let (n_gt, n_tr, frames) = (1 + rng.below(5), 1 + rng.below(5), 1 + rng.below(8) as u64);
        let mut gt = Vec::new();
        let mut tr = Vec::new();
        for f in 0..frames {
            for k in 0..n_gt as u64 {
                if rng.uniform() < 0.8 {
                    gt.push(gt_box(f, k, 40.0 * k as f64 + 20.0, 30.0));
                }
            }
            for k in 0..n_tr as u64 {
                if rng.uniform() < 0.8 {
                    // Track boxes sit on a random gt slot, possibly with a miss.
                    let slot = rng.below(n_gt) as f64;
                    let jitter = if rng.uniform() < 0.2 { 15.0 } else { 0.0 };
                    tr.push(track_box(f, 50 + k, 40.0 * slot + 20.0 + jitter, 30.0));
                }
            }
        }
        if gt.is_empty() {
            continue;
        }
        let gt_ids: Vec<u64> = {
            let mut v: Vec<u64> = gt.iter().map(|g| g.object_id).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        let tr_ids: Vec<u64> = {
            let mut v: Vec<u64> = tr.iter().map(|t| t.track_id).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        let mut counts = vec![vec![0usize; tr_ids.len()]; gt_ids.len()];
        for g in &gt {
            for t in tr.iter().filter(|t| t.frame_id == g.frame_id) {
                if detcal::model::iou(&g.bbox, &t.bbox) >= 0.5 {
                    let gi = gt_ids.iter().position(|&x| x == g.object_id).unwrap();
                    let ti = tr_ids.iter().position(|&x| x == t.track_id).unwrap();
                    counts[gi][ti] += 1;
                }
            }
        }
        let oracle = 2.0 * brute_idtp(&counts) as f64 / (gt.len() + tr.len()) as f64;
        worst = worst.max((evaluate(&gt, &tr, 0.5).unwrap().idf1 - oracle).abs());
    }
    check(
        hand_ok && perfect_ok && worst <= 1e-12,
        format!(
            "hand-traced MOTA {:.4} IDSW {}; perfect MOTA {} IDF1 {}; IDF1 vs brute force max gap {worst:.1e}",
            hand.mota, hand.totals.idsw, perfect.mota, perfect.idf1
        ),
    )
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("1 parameter recovery (confidence)", c1_parameter_recovery),
        ("2 histogram binning exactness", c2_histogram_exactness),
        ("3 rank preservation", c3_rank_preservation),
        ("4 Bayesian calibration", c4_bayesian),
        ("5 variance scaling", c5_variance_scaling),
        ("6 quantile self-consistency", c6_quantile_self_consistency),
        ("7 GP-Normal vs variance scaling", c7_gp_vs_scaling),
        ("8 covariance estimation", c8_covariance),
        ("9 numeric kernels", c9_numeric_kernels),
        ("10 Kalman correctness", c10_kalman),
        ("11 existence filter", c11_existence),
        ("12 Hungarian", c12_hungarian),
        ("13 end-to-end tracking benefit", c13_tracking_benefit),
        ("14 MOT metrics", c14_mot_metrics),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let start = Instant::now();
    let results: Vec<(&str, Outcome, f64)> = std::thread::scope(|scope| {
        let handles: Vec<_> = criteria
            .iter()
            .filter(|(name, _)| filter.is_empty() || filter.iter().any(|f| name.contains(f.as_str())))
            .map(|&(name, f)| {
                scope.spawn(move || {
                    let t = Instant::now();
                    let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
                        let msg = e
                            .downcast_ref::<String>()
                            .cloned()
                            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                            .unwrap_or_default();
                        Err(format!("panicked: {msg}"))
                    });
                    (name, out, t.elapsed().as_secs_f64())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut failed = 0;
    for (name, out, secs) in &results {
        match out {
            Ok(d) => println!("PASS  criterion {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL  criterion {name}: {d} [{secs:.1}s]");
            }
        }
    }
    let total = start.elapsed();
    println!("acceptance: {} passed, {failed} failed, wall time {:.1}s", results.len() - failed, total.as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}

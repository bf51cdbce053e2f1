//! Acceptance checks. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails. Tolerances here are fixed; do not loosen
//! them to make a run pass.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use tensorcause::bench::{run_benchmark, thread_pool, BenchConfig, BenchRow, BenchScenario};
use tensorcause::causal::{
    fit_multiproxy, fit_multitreatment, fit_stages, stacked_least_squares, FeatureMap, MixtureMethod,
    MultiProxyConfig,
};
use tensorcause::data::{Dataset, Points};
use tensorcause::datagen::{
    oracle_posteriors, simulate_multiproxy, simulate_multitreatment, true_view_densities, MultiProxyScenario,
    MultiTreatmentScenario,
};
use tensorcause::io::{read_dataset, write_dataset, ModelFile};
use tensorcause::mixture::{
    align_exact, fit_multiview, fit_symmetric_spectral, posteriors_from_densities, scree, scree_discrete,
    KernelSpec, MixtureEstimate, PosteriorFlavor, PRIOR_FLOOR,
};
use tensorcause::rng;
use tensorcause::spectral::{build_whitener, robust_power_method, whitened_third_moment, Moment2, PowerConfig, SymTensor3};

struct Report {
    failed: usize,
}

impl Report {
    fn check(&mut self, name: &str, ok: bool, detail: String, started: Instant) {
        let secs = started.elapsed().as_secs_f64();
        println!("{} {name}: {detail} ({secs:.1}s)", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed += 1;
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn rows_for<'a>(rows: &'a [BenchRow], n: usize, parameter: &'a str) -> impl Iterator<Item = &'a BenchRow> {
    rows.iter().filter(move |r| r.n == n && r.parameter == parameter)
}

const PROXY_TRUTH: [f64; 3] = [2.5, -1.0, 4.0];
const TRIALS: usize = 20;

fn proxy_reproduction(rows: &[BenchRow], r: &mut Report, t0: Instant) {
    let failed = rows.iter().filter(|x| x.n == 4000 && !x.error.is_empty()).count();
    let mut medians = Vec::new();
    let mut within = [true; TRIALS];
    for (u, truth) in PROXY_TRUTH.iter().enumerate() {
        let sel: Vec<&BenchRow> = rows_for(rows, 4000, "beta[a]").filter(|x| x.component == Some(u)).collect();
        let mut est: Vec<f64> = sel.iter().filter_map(|x| x.estimate).collect();
        for x in &sel {
            if (x.estimate.unwrap() - truth).abs() > 0.5 {
                within[x.trial] = false;
            }
        }
        medians.push(if est.is_empty() { f64::NAN } else { median(&mut est) });
    }
    for x in rows.iter().filter(|x| x.n == 4000 && !x.error.is_empty()) {
        within[x.trial] = false;
    }
    let good = within.iter().filter(|&&w| w).count();
    let medians_ok = medians.iter().zip(PROXY_TRUTH).all(|(m, t)| (m - t).abs() <= 0.35);
    let ok = failed == 0 && medians_ok && good * 10 >= TRIALS * 9;
    r.check(
        "proxy design reproduction (n=4000, 20 trials)",
        ok,
        format!("median slopes {medians:.3?} vs {PROXY_TRUTH:?}; {good}/{TRIALS} trials within 0.5"),
        t0,
    );
}

fn convergence_trend(rows: &[BenchRow], ns: &[usize], r: &mut Report, t0: Instant) {
    let mut ok = rows.iter().all(|x| x.error.is_empty());
    let mut per_u = Vec::new();
    for u in 0..3 {
        let meds: Vec<f64> = ns
            .iter()
            .map(|&n| {
                let mut e: Vec<f64> = rows_for(rows, n, "beta[a]")
                    .filter(|x| x.component == Some(u))
                    .filter_map(|x| x.aligned_abs_error)
                    .collect();
                median(&mut e)
            })
            .collect();
        ok &= meds.windows(2).all(|w| w[1] <= 1.2 * w[0]);
        per_u.push(meds);
    }
    r.check(
        "convergence trend over n = 500..4000",
        ok,
        format!("median slope errors per component {per_u:.3?}"),
        t0,
    );
}

fn treatment_reproduction(r: &mut Report) {
    let t0 = Instant::now();
    let rows = run_benchmark(&BenchConfig::new(BenchScenario::Treatment, vec![5000], TRIALS, 72)).unwrap();
    let truth = [2.784, 2.211];
    let mut good = 0;
    for trial in 0..TRIALS {
        let norms: Vec<f64> = rows
            .iter()
            .filter(|x| x.trial == trial && x.parameter == "gamma_norm")
            .filter_map(|x| x.estimate)
            .collect();
        if norms.len() == 2 && norms.iter().zip(truth).all(|(e, t)| (e - t).abs() <= 0.25) {
            good += 1;
        }
    }
    let mut meds = Vec::new();
    for u in 0..2 {
        let mut v: Vec<f64> = rows_for(&rows, 5000, "gamma_norm")
            .filter(|x| x.component == Some(u))
            .filter_map(|x| x.estimate)
            .collect();
        meds.push(median(&mut v));
    }
    r.check(
        "categorical treatment design (n=5000, 20 trials)",
        good * 10 >= TRIALS * 9,
        format!("{good}/{TRIALS} trials with both norms within 0.25 of {truth:?}; medians {meds:.3?}"),
        t0,
    );
}

/// Identically distributed Gaussian views, two classes.
fn planted_views(n: usize, seed: u64, priors: [f64; 2], means: [[f64; 2]; 2], sigma: f64) -> [Points; 3] {
    let mut g = rng::stream(seed, rng::streams::SIMULATION);
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut v: [Vec<f64>; 3] = Default::default();
    for _ in 0..n {
        let u = usize::from(g.random::<f64>() >= priors[0]);
        for x in v.iter_mut() {
            for c in 0..2 {
                x.push(means[u][c] + noise.sample(&mut g));
            }
        }
    }
    v.map(|x| Points::new(2, x).unwrap())
}

fn prior_recovery(r: &mut Report) {
    let t0 = Instant::now();
    let priors = [0.3, 0.7];
    let means = [[0.0, 0.0], [2.5, 2.5]];
    let truth = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.5, 2.5]);
    let results: Vec<Option<f64>> = thread_pool().unwrap().install(|| {
        use rayon::prelude::*;
        (0..TRIALS as u64)
            .into_par_iter()
            .map(|trial| {
                let v = planted_views(10_000, 500 + trial, priors, means, 0.8);
                let m = fit_multiview([&v[0], &v[1], &v[2]], 2, &KernelSpec::default(), &PowerConfig::default(), trial).ok()?;
                let perm = align_exact(&m.component_means.as_ref()?[0], &truth).ok()?.perm;
                Some((0..2).map(|j| (m.priors[perm[j]] - priors[j]).abs()).fold(0.0, f64::max))
            })
            .collect()
    });
    let good = results.iter().filter(|e| e.is_some_and(|e| e <= 0.05)).count();
    let worst = results.iter().map(|e| e.unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
    r.check(
        "prior recovery (planted two-class mixture, n=10000)",
        good * 100 >= TRIALS * 95,
        format!("{good}/{TRIALS} trials within 0.05; worst error {worst:.4}"),
        t0,
    );
}

/// Raw priors equal `lambda^-2` and the stored priors are their clamped
/// renormalization.
fn lambda_contract_error(m: &MixtureEstimate) -> f64 {
    let mut worst: f64 = 0.0;
    for (l, raw) in m.lambdas.iter().zip(&m.raw_priors) {
        worst = worst.max((l.powi(-2) - raw).abs());
    }
    let clamped: Vec<f64> = m.raw_priors.iter().map(|p| p.clamp(PRIOR_FLOOR, 1.0)).collect();
    let total: f64 = clamped.iter().sum();
    for (c, p) in clamped.iter().zip(&m.priors) {
        worst = worst.max((c / total - p).abs());
    }
    worst
}

fn lambda_contract(r: &mut Report) {
    let t0 = Instant::now();
    let s1 = MultiProxyScenario::three_component();
    let s2 = MultiTreatmentScenario::two_component();
    let mut worst: f64 = 0.0;
    let mut fits = 0;
    for seed in 0..3 {
        let (d, _) = simulate_multiproxy(&s1, 1500, seed).unwrap();
        let v = [&d.views[0], &d.views[1], &d.views[2]];
        let spec = KernelSpec::fixed(1.0);
        // the symmetric learner assumes exchangeable views
        let p = planted_views(1500, 900 + seed, [0.3, 0.7], [[0.0, 0.0], [2.5, 2.5]], 0.8);
        let pv = [&p[0], &p[1], &p[2]];
        for m in [
            fit_multiview(v, 3, &spec, &PowerConfig::default(), seed).unwrap(),
            fit_symmetric_spectral(pv, 2, &KernelSpec::default(), &PowerConfig::default(), seed).unwrap(),
        ] {
            worst = worst.max(lambda_contract_error(&m));
            fits += 1;
        }
        let (t, _) = simulate_multitreatment(&s2, 3000, seed).unwrap();
        let fit = fit_multitreatment(&t, 2, &s2.xi, &PowerConfig::default(), seed).unwrap();
        worst = worst.max(lambda_contract_error(&fit.mixture));
        let m = &fit.model;
        for (l, raw) in m.lambdas.iter().zip(&m.raw_priors) {
            worst = worst.max((l.powi(-2) - raw).abs());
        }
        fits += 1;
    }
    r.check(
        "priors reconstruct from stored lambdas",
        worst <= 1e-12,
        format!("{fits} fits, worst deviation {worst:.2e}"),
        t0,
    );
}

fn gaussian_pdf(x: &[f64], mu: &[f64], s: f64) -> f64 {
    let d2: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * s * s)).exp() / (2.0 * std::f64::consts::PI * s * s).powf(x.len() as f64 / 2.0)
}

fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    x.clone().svd(true, true).solve(y, 1e-14).unwrap()
}

fn oracle_suite(r: &mut Report) {
    let t0 = Instant::now();
    let s = MultiProxyScenario::three_component();
    let (d, labels) = simulate_multiproxy(&s, 400, 9).unwrap();

    // posterior formula against Bayes' rule written out directly
    let dens = true_view_densities(&s, &d);
    let w = posteriors_from_densities(&s.priors, [&dens[0], &dens[1], &dens[2]], 1e-300);
    let oracle = oracle_posteriors(&s, &d, PosteriorFlavor::ProxyOnly);
    let mut post_err: f64 = 0.0;
    for i in 0..d.len() {
        let z = d.proxies(i);
        let joint: Vec<f64> = (0..s.k)
            .map(|u| s.priors[u] * (0..3).map(|v| gaussian_pdf(z[v], &s.means[v][u], s.proxy_sigma)).product::<f64>())
            .collect();
        let total: f64 = joint.iter().sum();
        for u in 0..s.k {
            let direct = joint[u] / total;
            post_err = post_err.max((w.weights[(i, u)] - direct).abs());
            post_err = post_err.max((oracle.weights[(i, u)] - direct).abs());
        }
    }

    // one-hot stacked regression against separate per-group least squares
    let psi = FeatureMap::treatment_proxy_linear(0, s.d);
    let x = DMatrix::from_fn(d.len(), psi.len(), |i, j| psi.eval(&[d.treatment[i]], &d.proxies(i))[j]);
    let onehot = DMatrix::from_fn(d.len(), s.k, |i, u| f64::from(u8::from(labels[i] == u)));
    let fit = stacked_least_squares(&onehot, &x, &d.outcome, 0.0, "check").unwrap();
    let mut ols_err: f64 = 0.0;
    for u in 0..s.k {
        let rows: Vec<usize> = (0..d.len()).filter(|&i| labels[i] == u).collect();
        let xu = x.select_rows(&rows);
        let yu = DVector::from_iterator(rows.len(), rows.iter().map(|&i| d.outcome[i]));
        let b = ols(&xu, &yu);
        for j in 0..psi.len() {
            ols_err = ols_err.max((fit.coef[(u, j)] - b[j]).abs());
        }
    }

    // tensor contraction and symmetric third moment against plain loops
    let mut g = rng::stream(3, 99);
    let mut tensor_err: f64 = 0.0;
    for _ in 0..100 {
        let k = g.random_range(1..=6);
        let n = g.random_range(1..=8);
        let xs: Vec<DMatrix<f64>> = (0..3).map(|_| DMatrix::from_fn(n, k, |_, _| g.random::<f64>() - 0.5)).collect();
        let t = whitened_third_moment(&xs[0], &xs[1], &xs[2]).unwrap();
        let v = DVector::from_fn(k, |_, _| g.random::<f64>() - 0.5);
        let c = t.contract(&v).unwrap();
        for i in 0..k {
            let mut direct = 0.0;
            for j in 0..k {
                for l in 0..k {
                    let mut e = 0.0;
                    for row in 0..n {
                        let (a, b, cc) = (xs[0].row(row), xs[1].row(row), xs[2].row(row));
                        e += a[i] * b[j] * cc[l] + a[i] * cc[j] * b[l] + b[i] * a[j] * cc[l]
                            + b[i] * cc[j] * a[l] + cc[i] * a[j] * b[l] + cc[i] * b[j] * a[l];
                    }
                    e /= 6.0 * n as f64;
                    tensor_err = tensor_err.max((t.get(i, j, l) - e).abs());
                    direct += e * v[j] * v[l];
                }
            }
            tensor_err = tensor_err.max((c[i] - direct).abs());
        }
    }
    r.check(
        "oracle equivalence",
        post_err <= 1e-12 && ols_err <= 1e-10 && tensor_err <= 1e-12,
        format!("posteriors {post_err:.1e}, per-group OLS {ols_err:.1e}, tensor loops {tensor_err:.1e}"),
        t0,
    );
}

fn invariant_suite(r: &mut Report) {
    let t0 = Instant::now();
    let s = MultiProxyScenario::three_component();
    let (d, _) = simulate_multiproxy(&s, 1500, 4).unwrap();
    let mut cfg = MultiProxyConfig::new(3, 3);
    cfg.kernel = KernelSpec::fixed(1.0);
    cfg.seed = 4;
    let fit = fit_multiproxy(&d, &cfg).unwrap();

    let rows_err = [&fit.posteriors, &fit.updated]
        .iter()
        .flat_map(|p| p.weights.row_iter().map(|row| (row.sum() - 1.0).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    let nonneg = fit.posteriors.weights.iter().chain(fit.updated.weights.iter()).all(|&x| x >= 0.0);

    let mut g = rng::stream(5, 98);
    let a = DMatrix::from_fn(12, 12, |_, _| g.random::<f64>() - 0.5);
    let m2 = Moment2::new(&a * a.transpose(), 12).unwrap();
    let wh = build_whitener(&m2, 4).unwrap();
    let id = wh.map().transpose() * m2.matrix() * wh.map();
    let whiten_err = (id - DMatrix::identity(4, 4)).abs().max();

    let mut rank1_err: f64 = 0.0;
    for trial in 0..20 {
        let k = 2 + trial % 5;
        let v = DVector::from_fn(k, |_, _| g.random::<f64>() - 0.5).normalize();
        let lambda = 0.1 + 5.0 * g.random::<f64>();
        let t = SymTensor3::rank_one(lambda, &v);
        let e = robust_power_method(&t, 1, &PowerConfig::default(), trial as u64).unwrap();
        rank1_err = rank1_err.max((e.lambdas[0] - lambda).abs());
        rank1_err = rank1_err.max(1.0 - e.vectors[0].dot(&v).abs());
    }

    let perm = [2, 0, 1];
    let moved = fit_stages(&d, fit.mixture.permuted(&perm).unwrap(), &cfg).unwrap();
    let mut perm_err: f64 = 0.0;
    for (j, &p) in perm.iter().enumerate() {
        for c in 0..fit.outcome().beta.ncols() {
            perm_err = perm_err.max((moved.outcome().beta[(j, c)] - fit.outcome().beta[(p, c)]).abs());
        }
        for c in 0..fit.treatment.alpha.ncols() {
            perm_err = perm_err.max((moved.treatment.alpha[(j, c)] - fit.treatment.alpha[(p, c)]).abs());
        }
    }
    perm_err = perm_err.max((moved.causal.ate(1.3) - fit.causal.ate(1.3)).abs());

    let (t0v, t1v, t2v) = (fit.causal.ate(0.0), fit.causal.ate(1.0), fit.causal.ate(3.5));
    let affine_err = ((t2v - t0v) / 3.5 - (t1v - t0v)).abs();

    let ok = rows_err <= 1e-12 && nonneg && whiten_err <= 1e-8 && rank1_err <= 1e-9 && perm_err <= 1e-10 && affine_err <= 1e-10;
    r.check(
        "invariant suite",
        ok,
        format!(
            "row sums {rows_err:.1e}, whitener {whiten_err:.1e}, rank-1 {rank1_err:.1e}, permutation {perm_err:.1e}, ATE affinity {affine_err:.1e}"
        ),
        t0,
    );
}

fn rank_selection(r: &mut Report) {
    let t0 = Instant::now();
    let s = MultiProxyScenario::three_component();
    let mut proxy_hits = 0;
    for seed in 0..10 {
        let (d, _) = simulate_multiproxy(&s, 2000, seed).unwrap();
        let sc = scree([&d.views[0], &d.views[1], &d.views[2]], 10, &KernelSpec::default(), seed).unwrap();
        proxy_hits += usize::from(sc.select_rank().unwrap() == 3);
    }
    let s2 = MultiTreatmentScenario::two_component();
    let mut treat_hits = 0;
    for seed in 0..10 {
        let (d, _) = simulate_multitreatment(&s2, 5000, seed).unwrap();
        let t = &d.treatments;
        treat_hits += usize::from(scree_discrete([&t[0], &t[1], &t[2]], d.levels, 10).unwrap().select_rank().unwrap() == 2);
    }
    r.check(
        "rank selection",
        proxy_hits >= 9 && treat_hits == 10,
        format!("K=3 on {proxy_hits}/10 proxy datasets, K=2 on {treat_hits}/10 categorical datasets"),
        t0,
    );
}

fn round_trip(r: &mut Report) {
    let t0 = Instant::now();
    let s = MultiProxyScenario::three_component();
    let (d, _) = simulate_multiproxy(&s, 800, 11).unwrap();
    let mut cfg = MultiProxyConfig::new(3, 3);
    cfg.kernel = KernelSpec::fixed(1.0);
    cfg.method = MixtureMethod::Multiview;
    cfg.seed = 11;
    let fit = fit_multiproxy(&d, &cfg).unwrap();
    let model = ModelFile::from_multiproxy(&fit, &cfg.kernel, 11);
    let text = model.to_json().unwrap();
    let loaded = ModelFile::from_json(&text).unwrap();
    let bytes_equal = loaded.to_json().unwrap() == text;

    let mut pred_err: f64 = 0.0;
    for a in [-1.0, 0.0, 2.5] {
        pred_err = pred_err.max((loaded.ate(&[a]).unwrap().value - fit.causal.ate(a)).abs());
        for u in 0..3 {
            let z: Vec<Vec<f64>> = d.proxies(u).iter().map(|v| v.to_vec()).collect();
            let here = model.cate(u, &[a], &z).unwrap().value;
            pred_err = pred_err.max((loaded.cate(u, &[a], &z).unwrap().value - here).abs());
        }
    }
    let w = loaded.mixture().unwrap().posteriors_points([&d.views[0], &d.views[1], &d.views[2]]).unwrap();
    pred_err = pred_err.max((w.weights - &fit.posteriors.weights).abs().max());

    let s2 = MultiTreatmentScenario::two_component();
    let (t, _) = simulate_multitreatment(&s2, 2000, 11).unwrap();
    let tfit = fit_multitreatment(&t, 2, &s2.xi, &PowerConfig::default(), 11).unwrap();
    let tm = ModelFile::from_multitreatment(&tfit, 11);
    let tl = ModelFile::from_json(&tm.to_json().unwrap()).unwrap();
    let bytes_equal = bytes_equal && tl.to_json().unwrap() == tm.to_json().unwrap();
    pred_err = pred_err.max((tl.ate(&[1.0, 2.0, 3.0]).unwrap().value - tm.ate(&[1.0, 2.0, 3.0]).unwrap().value).abs());

    let mut exact = true;
    for data in [Dataset::MultiProxy(d), Dataset::MultiTreatment(t)] {
        let mut buf = Vec::new();
        write_dataset(&mut buf, &data).unwrap();
        let levels = match &data {
            Dataset::MultiTreatment(t) => Some(t.levels),
            _ => None,
        };
        exact &= read_dataset(buf.as_slice(), levels).unwrap() == data;
    }
    r.check(
        "persistence round trip",
        bytes_equal && pred_err <= 1e-12 && exact,
        format!("model text identical: {bytes_equal}, prediction difference {pred_err:.1e}, datasets exact: {exact}"),
        t0,
    );
}

fn main() -> ExitCode {
    let mut r = Report { failed: 0 };
    let t0 = Instant::now();
    let ns = [500, 1000, 2000, 4000];
    let rows = thread_pool()
        .unwrap()
        .install(|| run_benchmark(&BenchConfig::new(BenchScenario::Proxy, ns.to_vec(), TRIALS, 71)))
        .unwrap();
    proxy_reproduction(&rows, &mut r, t0);
    convergence_trend(&rows, &ns, &mut r, t0);
    thread_pool().unwrap().install(|| treatment_reproduction(&mut r));
    prior_recovery(&mut r);
    lambda_contract(&mut r);
    oracle_suite(&mut r);
    invariant_suite(&mut r);
    rank_selection(&mut r);
    round_trip(&mut r);
    println!("{} of 9 criteria failed", r.failed);
    if r.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

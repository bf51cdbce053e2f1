//! Library routines checked against brute-force computations from the true
//! generating parameters.

use nalgebra::{DMatrix, DVector};

use tensorcause::causal::{fit_gamma, update_posteriors, FeatureMap, TreatmentFamily, TreatmentModel};
use tensorcause::datagen::{
    oracle_ate, oracle_posteriors, simulate_multiproxy, simulate_multitreatment, true_ate_slope, true_view_densities,
    MultiProxyScenario, MultiTreatmentScenario,
};
use tensorcause::io::ModelFile;
use tensorcause::mixture::{fit_discrete_multiview, posteriors_from_densities, PosteriorFlavor, PosteriorMatrix};
use tensorcause::spectral::PowerConfig;

fn true_treatment_model(s: &MultiProxyScenario) -> TreatmentModel {
    TreatmentModel {
        alpha: DMatrix::from_fn(s.k, s.phi.len(), |u, j| s.alpha[u][j]),
        sigma2: s.sigma2.clone(),
        family: TreatmentFamily::Gaussian,
        feature_map: s.phi.clone(),
        ridge: 0.0,
        clamped_variances: 0,
    }
}

#[test]
fn proxy_posteriors_match_the_oracle() {
    let s = MultiProxyScenario::three_component();
    let (d, _) = simulate_multiproxy(&s, 300, 21).unwrap();
    let dens = true_view_densities(&s, &d);
    let w = posteriors_from_densities(&s.priors, [&dens[0], &dens[1], &dens[2]], 1e-300);
    let o = oracle_posteriors(&s, &d, PosteriorFlavor::ProxyOnly);
    assert!((w.weights - o.weights).abs().max() <= 1e-12);
}

#[test]
fn treatment_update_matches_the_oracle() {
    let s = MultiProxyScenario::three_component();
    let (d, _) = simulate_multiproxy(&s, 300, 22).unwrap();
    let dens = true_view_densities(&s, &d);
    let w = posteriors_from_densities(&s.priors, [&dens[0], &dens[1], &dens[2]], 1e-300);
    let updated = update_posteriors(&w, &true_treatment_model(&s), &d).unwrap();
    assert_eq!(updated.flavor, PosteriorFlavor::TreatmentUpdated);
    let o = oracle_posteriors(&s, &d, PosteriorFlavor::TreatmentUpdated);
    assert!((updated.weights - o.weights).abs().max() <= 1e-12);
}

#[test]
fn truth_model_ate_agrees_with_monte_carlo() {
    let s = MultiProxyScenario::three_component();
    let m = ModelFile::from_scenario(&s, 0).unwrap();
    for a in [-1.0, 0.5, 2.0] {
        let (mc, se) = oracle_ate(&s, a, 200_000, 5).unwrap();
        let exact = m.ate(&[a]).unwrap().value;
        assert!((mc - exact).abs() <= 4.0 * se, "a={a}: {mc} vs {exact} (se {se})");
    }
    let slope = m.ate(&[1.0]).unwrap().value - m.ate(&[0.0]).unwrap().value;
    assert!((slope - true_ate_slope(&s).unwrap()).abs() < 1e-12);
}

#[test]
fn one_hot_gamma_regression_is_per_group_least_squares() {
    let s = MultiTreatmentScenario::two_component();
    let (d, labels) = simulate_multitreatment(&s, 3000, 4).unwrap();
    let w = PosteriorMatrix::one_hot(&labels, 2, PosteriorFlavor::ProxyOnly);
    let xi = FeatureMap::treatments_linear(3);
    let fit = fit_gamma(&d, &w, &xi, 0.0).unwrap();
    for u in 0..2 {
        let rows: Vec<usize> = (0..d.len()).filter(|&i| labels[i] == u).collect();
        let x = DMatrix::from_fn(rows.len(), 4, |r, j| xi.eval(&d.treatment_vector(rows[r]), &[])[j]);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| d.outcome[i]));
        let b = x.clone().svd(true, true).solve(&y, 1e-14).unwrap();
        for j in 0..4 {
            assert!((fit.coef[(u, j)] - b[j]).abs() <= 1e-10);
        }
    }
}

#[test]
fn deterministic_emissions_are_recovered() {
    // each class emits a single level per view
    let s = MultiTreatmentScenario {
        k: 2,
        levels: 3,
        priors: vec![0.5, 0.5],
        emissions: std::array::from_fn(|_| vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]),
        xi: FeatureMap::treatments_linear(3),
        gamma: vec![vec![0.0; 4], vec![0.0; 4]],
        outcome_sigma: 1.0,
    };
    let (d, _) = simulate_multitreatment(&s, 2000, 8).unwrap();
    let t = &d.treatments;
    let m = fit_discrete_multiview([&t[0], &t[1], &t[2]], 3, 2, &PowerConfig::default(), 8).unwrap();
    let e = m.emissions().unwrap();
    // class labels are arbitrary: match on the level with mass
    let first = if e[0][(0, 0)] > 0.5 { [0, 1] } else { [1, 0] };
    for v in 0..3 {
        for (u, &level) in first.iter().enumerate() {
            for l in 0..3 {
                let want = if l == level { 1.0 } else { 0.0 };
                assert!((e[v][(l, u)] - want).abs() <= 0.05, "view {v}: {}", e[v]);
            }
        }
    }
    for p in &m.priors {
        assert!((p - 0.5).abs() <= 0.05);
    }
}

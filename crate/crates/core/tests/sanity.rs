use lfi::models::pcfg::{pcfg_model, GnfGrammar};
use lfi::models::random_list::random_list_model;
use lfi::sanity::sample_estimate;
use lfi::{run_depth, AnytimeOptions, Registry, Value};

#[test]
fn sampler_agrees_with_random_list_conditional() {
    let mut reg = Registry::new();
    let m = random_list_model(&mut reg).unwrap();
    let est = sample_estimate(&mut reg, m.query, &Value::Bool(true), 200, 200_000, 1).unwrap();
    assert!((est.estimate - 3.0 / 7.0).abs() < 0.01, "{est:?}");
    // roughly half of all lists have no 'a
    let rejected = est.num_rejected as f64 / est.num_samples as f64;
    assert!((rejected - 0.625).abs() < 0.01, "{rejected}");
}

#[test]
fn sampler_lands_inside_finite_grammar_bounds() {
    let mut reg = Registry::new();
    let m = pcfg_model(&mut reg, &GnfGrammar::finite(), "de", "a").unwrap();
    let est = sample_estimate(&mut reg, m.query, &Value::Bool(true), 200, 50_000, 3).unwrap();
    let (lo, hi) = run_depth(&mut reg, m.query, 20, &AnytimeOptions::ve())
        .unwrap()
        .bounds
        .get(&Value::Bool(true));
    let se = est.standard_error();
    assert!(lo - 3.0 * se <= est.estimate && est.estimate <= hi + 3.0 * se, "[{lo}, {hi}] vs {est:?}");
}


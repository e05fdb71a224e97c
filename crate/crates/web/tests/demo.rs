use isoaffine_web::{affine_curves_json, demo_params, evolve_slice_json, frames_json};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn curves_are_finite_and_energy_is_kept() {
    let c = parse(affine_curves_json(1.5, 0.4, 0.1, 200.0).unwrap());
    let t = floats(&c["t"]);
    assert_eq!(t.len(), 200);
    assert!(t.windows(2).all(|w| w[1] > w[0]));
    assert!(floats(&c["growth"]).iter().all(|g| g.is_finite() && *g > 0.0));
    let temps = floats(&c["temperature"]);
    assert!(temps.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    assert!(floats(&c["energy_drift"]).iter().all(|e| *e < 1e-6));
}

#[test]
fn frames_have_unit_determinant_lambda() {
    let f = parse(frames_json(2.0, 0.5, 0.2, 1.0, 5.0).unwrap());
    let eig = f["eig"].as_array().unwrap();
    assert_eq!(eig.len(), 121);
    for e in eig {
        let d = floats(e);
        assert!(d.iter().all(|x| *x > 0.0));
        assert!((d.iter().product::<f64>() - 1.0).abs() < 1e-8, "{d:?}");
    }
}

#[test]
fn evolve_slice_is_square() {
    let s = parse(evolve_slice_json(25, 0.5, 1e-4).unwrap());
    assert_eq!(s["status"], "completed");
    assert_eq!(floats(&s["theta"]).len(), 25 * 25);
    assert!(floats(&s["sup"]).windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn bad_input_is_an_error() {
    assert!(demo_params(0.0, 0.5, 0.1).is_err());
    assert!(affine_curves_json(1.5, -1.0, 0.1, 100.0).is_err());
    assert!(frames_json(1.5, 0.5, 0.1, 5.0, 5.0).is_err());
}

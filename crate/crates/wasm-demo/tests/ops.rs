use affine_lift_wasm_demo::call;
use serde_json::Value;

fn op(name: &str, input: &str) -> Value {
    serde_json::from_str(&call(name, input).unwrap()).unwrap()
}

#[test]
fn skew_and_parallel_lines() {
    let v = op(
        "closest_points",
        r#"{"a": {"origin": [0,0,0], "directions": [[2,0,0]]}, "b": {"origin": [0,0,1], "directions": [[0,1,0]]}}"#,
    );
    assert!((v["distance"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((v["dual_distance"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(v["y_star"][2].as_f64().unwrap(), 1.0);
    let v = op(
        "closest_points",
        r#"{"a": {"origin": [0,0,0], "directions": [[1,0,0]]}, "b": {"origin": [5,2,0], "directions": [[-3,0,0]]}}"#,
    );
    assert!((v["distance"].as_f64().unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn point_cases() {
    let v = op("closest_points", r#"{"a": {"origin": [0,3,4]}, "b": {"origin": [0,0,0], "directions": [[1,0,0]]}}"#);
    assert!((v["distance"].as_f64().unwrap() - 5.0).abs() < 1e-12);
    assert_eq!(v["dims"], serde_json::json!([0, 1]));
    let v = op("closest_points", r#"{"a": {"origin": [1,0,0], "directions": [[0,1,0],[0,0,1]]}, "b": {"origin": [4,4,4]}}"#);
    assert!((v["distance"].as_f64().unwrap() - 3.0).abs() < 1e-12);
    let v = op("closest_points", r#"{"a": {"origin": [0,0,0]}, "b": {"origin": [3,4,0]}}"#);
    assert_eq!(v["distance"].as_f64().unwrap(), 5.0);
}

#[test]
fn bad_input_is_an_error_not_a_panic() {
    assert!(call("closest_points", r#"{"a": {"origin": [0,0]}, "b": {"origin": [0,0,0]}}"#).is_err());
    assert!(call("closest_points", "not json").is_err());
    assert!(call("collision_curve", r#"{"entries": 64, "subdatabases": 1, "m": 2, "per_image": [4], "seeds": 2}"#).is_err());
    assert!(call("nope", "{}").is_err());
}

#[test]
fn collision_curve_tracks_expectation() {
    let v = op(
        "collision_curve",
        r#"{"entries": 640, "subdatabases": 4, "m": 2, "per_image": [10, 40], "seeds": 20}"#,
    );
    let pts = v.as_array().unwrap();
    assert_eq!(pts.len(), 2);
    for p in pts {
        let (shared, expected) = (p["shared"].as_f64().unwrap(), p["expected"].as_f64().unwrap());
        assert!((shared - expected).abs() < 0.03, "{p}");
        assert_eq!(p["disjoint"].as_f64().unwrap(), 0.0);
    }
    assert!((pts[1]["nominal"].as_f64().unwrap() - 0.125).abs() < 1e-12);
}

#[test]
fn attack_demo_random_vs_sub_hybrid() {
    let random = op("attack_demo", r#"{"n": 32, "m": 2, "strategy": "random", "targets": 100, "ks": [1, 8]}"#);
    let hidden = op("attack_demo", r#"{"n": 32, "m": 2, "strategy": "sub_hybrid", "targets": 100, "ks": [1, 8]}"#);
    assert_eq!(random.as_array().unwrap().len(), 2);
    assert!(random[0]["top1_rate"].as_f64().unwrap() > hidden[0]["top1_rate"].as_f64().unwrap());
    // More candidates never recover worse.
    assert!(hidden[1]["mean_dist"].as_f64().unwrap() <= hidden[0]["mean_dist"].as_f64().unwrap());
}

use serde_json::Value;

use strat_anytime_wasm::{oracle_report, point_mass_run, Audit};

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn oracle_report_has_stopping_time() {
    let v = parse(&oracle_report(0.4, 0.8, 0.05).unwrap());
    assert!(v["optimal"]["tau"].as_u64().unwrap() >= 1);
    assert!(v["note"].is_null());
    let v = parse(&oracle_report(0.2, 0.6, 0.05).unwrap());
    assert!(v["optimal"].is_null());
    assert!(v["note"].is_string());
}

#[test]
fn point_mass_run_stops_near_the_oracle() {
    let oracle = parse(&oracle_report(0.4, 0.8, 0.05).unwrap());
    let tau = oracle["optimal"]["tau"].as_u64().unwrap() as usize;
    let v = parse(&point_mass_run(0.4, 0.8, 10, "kelly", "round_robin", 2000).unwrap());
    assert_eq!(v["rejected"], true);
    let p: Vec<f64> = v["p_values"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(p.len(), v["tau"].as_u64().unwrap() as usize);
    assert!(*p.last().unwrap() <= 0.05);
    // the oracle time is a floor for any bet and selection
    assert!(p.len() >= tau, "{} < {tau}", p.len());
    assert!(point_mass_run(0.4, 0.8, 10, "nope", "round_robin", 100).is_err());
    assert!(point_mass_run(0.4, 0.8, 10, "agrapa", "nope", 100).is_err());
}

#[test]
fn hand_driven_audit() {
    let setup = r#"{"sizes":[50,50],"method":{"strategy":"banded","G":10,"bets":{"rule":"agrapa","c":0.75},"selection":"round_robin"}}"#;
    let mut a = Audit::new(setup).unwrap();
    assert_eq!(a.directive(), Some(2));
    assert!(a.submit(1.5).is_err());
    let mut last = parse(&a.state().unwrap());
    assert_eq!(last["p_value"], 1.0);
    while a.directive().is_some() {
        last = parse(&a.submit(1.0).unwrap());
    }
    assert_eq!(last["rejected"], true);
    assert!(a.submit(1.0).is_err());
    assert_eq!(last["steps"].as_array().unwrap().len(), last["t"].as_u64().unwrap() as usize);
    assert!(Audit::new("{}").is_err());
}

use mrreuse::workloads::{Q1, Q2};
use mrreuse_web::{explain, injection_points, rewrite};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn explain_splits_q2_into_two_jobs() {
    let v = parse(explain(Q2));
    assert_eq!(v["jobs"].as_array().unwrap().len(), 2);
    assert_eq!(v["jobs"][1]["output"], "L3_out");
}

#[test]
fn errors_come_back_as_json() {
    let v = parse(explain("A = load"));
    assert!(v["error"].as_str().unwrap().contains("1:"));
    let v = parse(injection_points(Q1, "sometimes"));
    assert!(v["error"].is_string());
}

#[test]
fn conservative_points_are_the_projections() {
    let v = parse(injection_points(Q1, "conservative"));
    assert_eq!(v["points"].as_array().unwrap().len(), 2);
    let v = parse(injection_points(Q1, "aggressive"));
    assert_eq!(v["points"].as_array().unwrap().len(), 3);
}

#[test]
fn q2_reads_q1_output() {
    let v = parse(rewrite(Q1, Q2));
    assert_eq!(v["matches"].as_array().unwrap().len(), 1);
    assert_eq!(v["matches"][0]["whole_job"], true);
    let after = v["after"].as_array().unwrap();
    assert_eq!(after.len(), 1);
    assert!(after[0]["plan"].as_str().unwrap().contains("path=L2_out"));
    assert!(v["ops_after"].as_u64() < v["ops_before"].as_u64());
}

#[test]
fn unrelated_scripts_do_not_match() {
    let other = "A = load 'x' as (a, b);\nB = filter A by a > 1;\nstore B into 'y';\n";
    let v = parse(rewrite(other, Q2));
    assert!(v["matches"].as_array().unwrap().is_empty());
    assert_eq!(v["after"], v["before"]);
}

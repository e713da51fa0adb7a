mod common;

use cadd_service::router;
use common::conformance::*;

const SUITE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/conformance.json");

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn recorded_exchanges() {
    let suite = load_suite(std::path::Path::new(SUITE));
    let fx = common::Fixture::new(2);
    let app = router(fx.start());
    let failures = run_suite(&app, &suite).await;
    assert!(failures.is_empty(), "{} of {} steps failed:\n{}", failures.len(), suite.steps.len(), failures.join("\n"));
}

#[test]
fn matcher_is_strict() {
    let exp = serde_json::json!({ "a": "<number>", "b": ["x", "<any>"] });
    assert!(matches(&exp, &serde_json::json!({ "a": 1, "b": ["x", null] }), "").is_ok());
    assert!(matches(&exp, &serde_json::json!({ "a": "1", "b": ["x", 2] }), "").is_err());
    assert!(matches(&exp, &serde_json::json!({ "a": 1, "b": ["x", 2], "c": 0 }), "").is_err());
    assert!(matches(&exp, &serde_json::json!({ "a": 1, "b": ["x"] }), "").is_err());

    let vars: Vars = [("id".to_string(), serde_json::json!("j1")), ("obj".to_string(), serde_json::json!({ "k": 1 }))].into();
    assert_eq!(substitute(&serde_json::json!("{{obj}}"), &vars), serde_json::json!({ "k": 1 }));
    assert_eq!(substitute_str("/jobs/{{id}}/x", &vars), "/jobs/j1/x");
}

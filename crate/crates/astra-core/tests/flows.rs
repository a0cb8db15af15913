//! Cross-flow properties: the semantic gate only ever removes permissions,
//! transcripts replay deterministically offline, and the reasoning matcher
//! (over the mock backend) reproduces the attack mitigation end to end.

use std::sync::Arc;

use astra_core::clock::ManualClock;
use astra_core::domain::MatcherId;
use astra_core::e2e::{self, fig1_attack_preset, preset_by_name, EnvConfig, TestEnv};
use astra_core::gateway::MockGateway;
use astra_core::matchers::{LlmResMatcher, MockScopeMatcher};

fn deny_matcher() -> Arc<MockScopeMatcher> {
    Arc::new(MockScopeMatcher::denying(["azure:subscription-list"]))
}

fn golden(name: &str) -> serde_json::Value {
    let path = format!(
        "{}/tests/fixtures/golden/{name}",
        env!("CARGO_MANIFEST_DIR")
    );
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[tokio::test]
async fn enhanced_grants_are_subset_of_baseline_grants() {
    let preset = fig1_attack_preset();

    let baseline_env =
        TestEnv::spawn(EnvConfig::new(deny_matcher(), ManualClock::new(1_000)).static_mode()).await;
    let mut baseline_flow_env = baseline_env.flow_env(3);
    baseline_flow_env.proxy_base = None;
    let baseline = e2e::run_baseline_flow(
        &baseline_flow_env,
        &baseline_env.registry,
        &preset.prompt,
        &preset.requested_scopes(),
    )
    .await;
    baseline_env.shutdown();

    let enhanced_env =
        TestEnv::spawn(EnvConfig::new(deny_matcher(), ManualClock::new(1_000))).await;
    let enhanced = e2e::run_enhanced_flow(
        &enhanced_env.flow_env(3),
        &enhanced_env.registry,
        &preset.prompt,
        &preset.requested_scopes(),
        None,
    )
    .await;
    enhanced_env.shutdown();

    assert!(baseline.failed_step.is_none());
    assert!(enhanced.failed_step.is_none());
    // The static baseline grants the whole over-scoped request...
    assert_eq!(baseline.granted_set().len(), 2);
    assert!(baseline.access_results.iter().all(|(_, s)| *s == 200));
    // ...and the semantic gate only removes permissions.
    assert!(enhanced.granted_set().is_subset(&baseline.granted_set()));
    assert!(enhanced.granted_set().len() < baseline.granted_set().len());

    // Cross-module consistency: both transcripts carry the exact discovery
    // payloads the server tests pin.
    for transcript in [&baseline, &enhanced] {
        assert_eq!(
            transcript.step("as_metadata").unwrap().response_body,
            golden("as_metadata.json")
        );
        assert_eq!(
            transcript.step("resource_metadata").unwrap().response_body,
            golden("rs_metadata_resource1.json")
        );
    }
}

#[tokio::test]
async fn baseline_denies_scopes_outside_static_policy() {
    let mut cfg = EnvConfig::new(deny_matcher(), ManualClock::new(1_000));
    cfg.mode = astra_core::authz::AuthzMode::Static {
        allowed_scopes: ["azure:search-service-list".to_string()].into(),
    };
    let env = TestEnv::spawn(cfg).await;
    let mut flow_env = env.flow_env(3);
    flow_env.proxy_base = None;
    let preset = fig1_attack_preset();
    let transcript = e2e::run_baseline_flow(
        &flow_env,
        &env.registry,
        &preset.prompt,
        &preset.requested_scopes(),
    )
    .await;
    env.shutdown();
    assert_eq!(transcript.failed_step.as_deref(), Some("authorize"));
    let authorize = transcript.step("authorize").unwrap();
    assert_eq!(authorize.status, 400);
    assert_eq!(authorize.response_body["error"], "invalid_scope");
}

fn normalize(transcript: &e2e::FlowTranscript, env: &TestEnv) -> String {
    serde_json::to_string_pretty(transcript)
        .unwrap()
        .replace(&env.as_base, "{AS}")
        .replace(&env.rs_base, "{RS}")
        .replace(&env.proxy_base, "{PROXY}")
}

#[tokio::test]
async fn enhanced_transcript_replays_deterministically() {
    let preset = fig1_attack_preset();
    let mut normalized = Vec::new();
    for _ in 0..2 {
        let env = TestEnv::spawn(EnvConfig::new(deny_matcher(), ManualClock::new(1_000))).await;
        let transcript = e2e::run_enhanced_flow(
            &env.flow_env(11),
            &env.registry,
            &preset.prompt,
            &preset.requested_scopes(),
            None,
        )
        .await;
        normalized.push(normalize(&transcript, &env));
        env.shutdown();
    }
    assert_eq!(
        normalized[0], normalized[1],
        "transcripts differ across identical replays"
    );
}

#[tokio::test]
async fn llmres_over_mock_backend_blocks_the_fig1_attack() {
    let gateway = Arc::new(MockGateway::new(7));
    let matcher = Arc::new(LlmResMatcher::new(gateway));
    let env = TestEnv::spawn(EnvConfig::new(matcher, ManualClock::new(1_000))).await;
    let preset = fig1_attack_preset();
    let transcript = e2e::run_enhanced_flow(
        &env.flow_env(5),
        &env.registry,
        &preset.prompt,
        &preset.requested_scopes(),
        None,
    )
    .await;
    env.shutdown();

    assert!(transcript.failed_step.is_none(), "{transcript:?}");
    assert_eq!(transcript.granted_scopes, vec!["azure:search-service-list"]);
    assert_eq!(
        transcript.access_results,
        vec![
            ("azure:search-service-list".to_string(), 200),
            ("azure:subscription-list".to_string(), 403),
        ]
    );
}

#[tokio::test]
async fn tampered_prompt_does_not_change_the_grant() {
    let preset = preset_by_name("fig1-attack-tampered").unwrap();
    assert!(preset.tamper_prompt.is_some());
    let audit = astra_core::audit::AuditLog::in_memory();
    let mut cfg = EnvConfig::new(deny_matcher(), ManualClock::new(1_000));
    cfg.proxy_audit = audit.clone();
    let env = TestEnv::spawn(cfg).await;
    let transcript = e2e::run_enhanced_flow(
        &env.flow_env(5),
        &env.registry,
        &preset.prompt,
        &preset.requested_scopes(),
        preset.tamper_prompt.as_deref(),
    )
    .await;
    env.shutdown();

    // The grant reflects the stored prompt's task, not the tampered one.
    assert_eq!(transcript.granted_scopes, vec!["azure:search-service-list"]);
    // And the tamper attempt is observable in the proxy audit log.
    let tampered = audit
        .records()
        .iter()
        .any(|r| r["event"] == "prompt_tamper_attempt");
    assert!(tampered, "tamper attempt missing from audit log");
}

#[tokio::test]
async fn honest_request_with_all_scopes_approved_is_fully_usable() {
    let matcher = Arc::new(MockScopeMatcher::default());
    let env = TestEnv::spawn(EnvConfig::new(matcher, ManualClock::new(1_000))).await;
    let scopes = vec![
        "azure:search-service-list".to_string(),
        "azure:storage-account-keys".to_string(),
    ];
    let transcript = e2e::run_enhanced_flow(
        &env.flow_env(5),
        &env.registry,
        "check search capacity and rotate the storage keys",
        &scopes,
        None,
    )
    .await;
    env.shutdown();

    assert_eq!(transcript.granted_set().len(), 2);
    assert!(transcript.access_results.iter().all(|(_, s)| *s == 200));
    assert!(transcript
        .post_finalize_results
        .iter()
        .all(|(_, s)| *s == 401));
}

#[tokio::test]
async fn matcher_indecision_denies_only_that_scope_in_flow() {
    let matcher = Arc::new(MockScopeMatcher {
        deny_scopes: Default::default(),
        error_scopes: ["azure:vm-start".to_string()].into(),
    });
    let env = TestEnv::spawn(EnvConfig::new(matcher, ManualClock::new(1_000))).await;
    let scopes = vec![
        "azure:search-service-list".to_string(),
        "azure:vm-start".to_string(),
    ];
    let transcript = e2e::run_enhanced_flow(
        &env.flow_env(5),
        &env.registry,
        "look at search services and start the build vm",
        &scopes,
        None,
    )
    .await;
    env.shutdown();

    assert_eq!(transcript.granted_scopes, vec!["azure:search-service-list"]);
    assert_eq!(
        transcript.access_results,
        vec![
            ("azure:search-service-list".to_string(), 200),
            ("azure:vm-start".to_string(), 403),
        ]
    );
}

#[tokio::test]
async fn audit_log_records_per_scope_verdicts_with_matcher_identity() {
    let audit = astra_core::audit::AuditLog::in_memory();
    let mut cfg = EnvConfig::new(deny_matcher(), ManualClock::new(1_000));
    cfg.authz_audit = audit.clone();
    let env = TestEnv::spawn(cfg).await;
    let preset = fig1_attack_preset();
    let transcript = e2e::run_enhanced_flow(
        &env.flow_env(5),
        &env.registry,
        &preset.prompt,
        &preset.requested_scopes(),
        None,
    )
    .await;
    env.shutdown();
    assert!(transcript.failed_step.is_none());

    let records = audit.records();
    let inspection = records
        .iter()
        .find(|r| r["event"] == "inspection")
        .expect("inspection record");
    let per_scope = inspection["per_scope"].as_array().unwrap();
    assert_eq!(per_scope.len(), 2);
    assert_eq!(per_scope[0]["scope"], "azure:search-service-list");
    assert_eq!(per_scope[0]["appropriate"], true);
    assert_eq!(per_scope[1]["appropriate"], false);
    assert_eq!(
        per_scope[0]["matcher_id"],
        serde_json::to_value(MatcherId::Mock).unwrap()
    );
    // The denial body seen by the client, meanwhile, carries no rationale:
    // checked in the authorization server unit tests.
}

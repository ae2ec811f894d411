use polartrace_api::config::{GridSection, ModelName};
use polartrace_api::dto::{ErrorKind, SolveRequest};
use polartrace_api::RunConfig;
use polartrace_client::{Client, ClientError};

fn small() -> RunConfig {
    let mut c = RunConfig::default();
    c.grid = GridSection { n: 24, nx: None, nz: None };
    c.layers = 3;
    c.model.kind = ModelName::Smooth;
    c
}

async fn client() -> Client {
    let addr = polartrace_service::spawn("127.0.0.1:0").await.unwrap();
    Client::new(format!("http://{addr}"))
}

#[tokio::test]
async fn session_lifecycle() {
    let c = client().await;
    assert_eq!(c.health().await.unwrap().sessions, 0);
    let info = c.create_session(&small()).await.unwrap();
    assert_eq!(info.offline.layers, 3);
    assert_eq!(c.health().await.unwrap().sessions, 1);
    assert_eq!(c.session(&info.id).await.unwrap(), info);

    // offline state is reused: two solves against one session
    let req = SolveRequest { sources: None, oracle: Some(true), include_fields: false };
    let a = c.solve(&info.id, &req).await.unwrap();
    let b = c.solve(&info.id, &req).await.unwrap();
    assert_eq!(a.rows[0].iterations, b.rows[0].iterations);
    assert!(a.rows[0].succeeded());
    assert!(a.rows[0].oracle_error.unwrap() < 1e-5);

    c.delete_session(&info.id).await.unwrap();
    let err = c.session(&info.id).await.unwrap_err();
    assert_eq!(err.kind(), ErrorKind::NotFound);
    assert!(matches!(c.delete_session(&info.id).await, Err(ClientError::Api { status: 404, .. })));
}

#[tokio::test]
async fn invalid_configuration_is_a_config_error() {
    let c = client().await;
    let mut cfg = small();
    cfg.layers = 1;
    let err = c.create_session(&cfg).await.unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Config, "{err}");

    let mut cfg = small();
    cfg.model.kind = ModelName::File;
    cfg.model.path = Some("/nonexistent/model.vm2d".into());
    let err = c.create_session(&cfg).await.unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Config, "{err}");
    assert!(err.to_string().contains("/nonexistent/model.vm2d"));
}

#[tokio::test]
async fn malformed_body_is_rejected_as_config() {
    let addr = polartrace_service::spawn("127.0.0.1:0").await.unwrap();
    let url = format!("http://{addr}/sessions");
    let resp = reqwest::Client::new()
        .post(&url)
        .header("content-type", "application/json")
        .body(r#"{"config": {"layers": "many"}}"#)
        .send()
        .await
        .unwrap();
    assert!(resp.status().is_client_error());
}

#[tokio::test]
async fn spectrum_and_checks_over_http() {
    let c = client().await;
    let mut cfg = small();
    cfg.grid.n = 16;
    cfg.plr.enabled = false;
    let info = c.create_session(&cfg).await.unwrap();
    let sp = c.spectrum(&info.id).await.unwrap();
    assert_eq!(sp.summary.dimension, sp.eigenvalues.len());
    assert_eq!(sp.mu.len() * 2, sp.eigenvalues.len());

    let oracle = c.oracle_check(&cfg).await.unwrap();
    assert!(oracle.rows.iter().all(|r| r.pass), "{:?}", oracle.rows);

    cfg.sweep.n = vec![16];
    cfg.sweep.layers = vec![2, 3];
    let sw = c.sweep(&cfg).await.unwrap();
    assert_eq!(sw.rows.len(), 2);
    assert!(sw.rows.iter().all(|r| r.status == "ok"));
}

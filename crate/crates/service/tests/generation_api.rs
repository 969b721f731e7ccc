use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::routing::post;
use axum::Router;
use seasynth_core::generation::{HttpBackend, MockBackend, MockOptions};
use seasynth_core::generation::{GenerationBackend, GenerationRequest};
use seasynth_core::mask::build_mask;
use seasynth_core::pipeline::{run_pipeline, PipelineConfig};
use seasynth_core::texture::write_fixture_sources;
use seasynth_core::Error;
use seasynth_service::{generation_router, spawn};

/// Runs `router` on its own runtime thread so blocking callers can use it.
fn start(router: Router) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let (addr, task) = spawn("127.0.0.1:0".parse().unwrap(), router).await.unwrap();
            tx.send(addr).unwrap();
            let _ = task.await;
        });
    });
    rx.recv().unwrap()
}

fn mock_endpoint(options: MockOptions) -> String {
    let backend: Arc<dyn GenerationBackend> = Arc::new(MockBackend::new(options));
    format!("http://{}", start(generation_router(backend)))
}

#[test]
fn http_adapter_matches_in_process_backend() {
    let dir = tempfile::tempdir().unwrap();
    let sources = write_fixture_sources(dir.path(), 1, 40, 30, 2).unwrap();
    let src = &sources[0];
    let img = src.load_pixels().unwrap();
    let mask = build_mask(src, 0);
    let req = GenerationRequest {
        source: src,
        image: &img,
        mask: &mask,
        prompt: "calm".into(),
        seed: 100,
        batch_size: 3,
    };
    let local = MockBackend::default().generate(&req).unwrap();
    let endpoint = mock_endpoint(MockOptions::default());
    for invert in [false, true] {
        let remote = HttpBackend::new("http", &endpoint, Duration::from_secs(10), invert, None)
            .unwrap()
            .generate(&req)
            .unwrap();
        assert_eq!(remote.len(), 3);
        for (a, b) in local.iter().zip(&remote) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.seed, b.seed);
            assert_eq!(a.pixels, b.pixels);
            assert_eq!(b.backend_name, "http");
        }
    }
}

#[test]
fn server_side_failure_is_generation_failed() {
    let dir = tempfile::tempdir().unwrap();
    let sources = write_fixture_sources(dir.path(), 1, 32, 32, 2).unwrap();
    let src = &sources[0];
    let img = src.load_pixels().unwrap();
    let mask = build_mask(src, 0);
    let endpoint = mock_endpoint(MockOptions {
        fail_every: Some(1),
        ..Default::default()
    });
    let err = HttpBackend::new("http", &endpoint, Duration::from_secs(10), false, None)
        .unwrap()
        .generate(&GenerationRequest {
            source: src,
            image: &img,
            mask: &mask,
            prompt: "p".into(),
            seed: 4,
            batch_size: 1,
        })
        .unwrap_err();
    match err {
        Error::GenerationFailed { request_id, .. } => assert_eq!(request_id, "src000-4"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn slow_service_times_out() {
    let slow = Router::new().route(
        "/generate",
        post(|| async {
            tokio::time::sleep(Duration::from_secs(5)).await;
            "late"
        }),
    );
    let endpoint = format!("http://{}", start(slow));
    let dir = tempfile::tempdir().unwrap();
    let sources = write_fixture_sources(dir.path(), 1, 16, 16, 2).unwrap();
    let src = &sources[0];
    let img = src.load_pixels().unwrap();
    let mask = build_mask(src, 0);
    let started = std::time::Instant::now();
    let err = HttpBackend::new("http", &endpoint, Duration::from_millis(300), false, None)
        .unwrap()
        .generate(&GenerationRequest {
            source: src,
            image: &img,
            mask: &mask,
            prompt: "p".into(),
            seed: 0,
            batch_size: 1,
        })
        .unwrap_err();
    assert!(matches!(err, Error::Timeout(_)), "{err:?}");
    assert!(started.elapsed() < Duration::from_secs(3));
}

#[test]
fn pipeline_over_http_equals_local_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let sources = write_fixture_sources(&dir.path().join("src"), 3, 48, 48, 8).unwrap();
    let endpoint = mock_endpoint(MockOptions::default());
    let local = PipelineConfig {
        images_per_source: 4,
        seed: 3,
        output_root: dir.path().join("local"),
        ..Default::default()
    };
    let mut remote = PipelineConfig {
        output_root: dir.path().join("remote"),
        ..local.clone()
    };
    remote.backend.name = "http".into();
    remote.backend.endpoint = Some(endpoint);
    remote.backend.batch_size = 2;
    let a = run_pipeline(&sources, &local).unwrap();
    let b = run_pipeline(&sources, &remote).unwrap();
    assert_eq!(a.records_total, 12);
    assert_eq!(a.per_state, b.per_state);
    assert_eq!(a.kept_total, b.kept_total);
    assert_eq!(b.failed_items, 0);
}

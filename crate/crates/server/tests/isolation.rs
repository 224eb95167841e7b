//! Interleaving requests across sessions never changes what any one session
//! returns.

use axum::body::{Body, Bytes};
use axum::http::{Request, StatusCode};
use axum::Router;
use blemish::chromophore::MixingMatrix;
use blemish::png_io::encode_png;
use blemish::synth::blemish_fixture;
use blemish_studio::{router, store, StudioConfig};
use proptest::prelude::*;
use serde_json::json;
use tower::ServiceExt;

#[derive(Debug, Clone)]
enum Op {
    Fit { roi: usize, sigma: Option<f64> },
    Preview { roi: usize, m: f64 },
    Export { roi: usize, m: f64 },
}

const ROIS: [[usize; 4]; 2] = [[32, 32, 64, 64], [40, 36, 40, 40]];

fn op() -> impl Strategy<Value = Op> {
    let roi = 0..ROIS.len();
    let gain = prop::sample::select(vec![0.0, -0.5, -1.0, 1.0]);
    prop_oneof![
        (roi.clone(), prop::option::of(prop::sample::select(vec![2.0, 3.0])))
            .prop_map(|(roi, sigma)| Op::Fit { roi, sigma }),
        (roi.clone(), gain.clone()).prop_map(|(roi, m)| Op::Preview { roi, m }),
        (roi, gain).prop_map(|(roi, m)| Op::Export { roi, m }),
    ]
}

fn app() -> Router {
    let cfg = StudioConfig::default();
    router(&cfg, store(&cfg))
}

async fn send(app: &Router, uri: String, body: Vec<u8>) -> (StatusCode, Bytes) {
    let res = app
        .clone()
        .oneshot(Request::post(uri).body(Body::from(body)).unwrap())
        .await
        .unwrap();
    let status = res.status();
    (status, axum::body::to_bytes(res.into_body(), usize::MAX).await.unwrap())
}

async fn open(app: &Router, fixture: u64) -> String {
    let img = blemish_fixture(fixture).0.render(&MixingMatrix::bundled());
    let (_, body) = send(app, "/session".into(), encode_png(&img).unwrap()).await;
    serde_json::from_slice::<serde_json::Value>(&body).unwrap()["id"]
        .as_str()
        .unwrap()
        .to_string()
}

async fn apply(app: &Router, id: &str, op: &Op) -> (StatusCode, Bytes) {
    let (path, body) = match *op {
        Op::Fit { roi, sigma } => ("fit", json!({ "roi": ROIS[roi], "sigma": sigma })),
        Op::Preview { roi, m } => ("preview", json!({ "roi": ROIS[roi], "alpha": { "m": m } })),
        Op::Export { roi, m } => ("export", json!({ "roi": ROIS[roi], "schedule": [{ "m": m }] })),
    };
    send(app, format!("/session/{id}/{path}"), body.to_string().into_bytes()).await
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn sessions_do_not_interfere(ops in prop::collection::vec((0usize..2, op()), 1..10)) {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async {
            let shared = app();
            let ids = [open(&shared, 0).await, open(&shared, 4).await];
            let mut interleaved: [Vec<(StatusCode, Bytes)>; 2] = Default::default();
            for (s, op) in &ops {
                interleaved[*s].push(apply(&shared, &ids[*s], op).await);
            }
            for (s, fixture) in [(0, 0), (1, 4)] {
                let alone = app();
                let id = open(&alone, fixture).await;
                let mut expected = Vec::new();
                for (_, op) in ops.iter().filter(|(t, _)| *t == s) {
                    expected.push(apply(&alone, &id, op).await);
                }
                prop_assert_eq!(&interleaved[s], &expected);
            }
            Ok(())
        })?;
    }
}

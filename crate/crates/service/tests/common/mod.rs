#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use arsentinel::api::AnalyzeRequest;
use arsentinel::backend_server::backend_router;
use arsentinel::server::{self, AppState};
use arsentinel::ServiceConfig;
use arsentinel_core::backend::wire::{WireImage, WireMask};
use arsentinel_core::backend::{NoiseProfile, OracleBackend, SidecarIndex};
use arsentinel_core::eval::load_manifest;
use arsentinel_core::mask::rle_encode;
use arsentinel_core::model::ScenePair;
use arsentinel_core::synth::{synthesize, LabelMix, SynthSpec};
use tokio::sync::oneshot;

pub fn dataset(dir: &Path, seed: u64, count: usize, mix: LabelMix) -> Vec<ScenePair> {
    let manifest = synthesize(&SynthSpec::new(seed, count, mix), dir).unwrap();
    load_manifest(&manifest).unwrap()
}

pub fn request_body(pair: &ScenePair, with_id: bool) -> AnalyzeRequest {
    AnalyzeRequest {
        id: with_id.then(|| pair.id.clone()),
        raw: WireImage::from_png(&pair.raw.png_bytes().unwrap()),
        ar: WireImage::from_png(&pair.ar.png_bytes().unwrap()),
        content_mask: WireMask {
            rle: rle_encode(&pair.content_mask),
        },
    }
}

/// A running server; dropping it triggers graceful shutdown.
pub struct Running {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    pub handle: tokio::task::JoinHandle<()>,
}

impl Running {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        let _ = tokio::time::timeout(Duration::from_secs(10), &mut self.handle).await;
    }
}

impl Drop for Running {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
    }
}

pub async fn start_service(config: ServiceConfig) -> Running {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let state = Arc::new(AppState::new(config).unwrap());
    let (tx, rx) = oneshot::channel::<()>();
    let handle = tokio::spawn(async move {
        server::serve(listener, state, async {
            let _ = rx.await;
        })
        .await
        .unwrap();
    });
    Running {
        addr,
        stop: Some(tx),
        handle,
    }
}

pub async fn start_router(router: axum::Router) -> Running {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = oneshot::channel::<()>();
    let handle = tokio::spawn(async move {
        axum::serve(listener, router)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
            .unwrap();
    });
    Running {
        addr,
        stop: Some(tx),
        handle,
    }
}

/// Oracle backend over `dir` served on the wire protocol.
pub async fn start_oracle_backend(dir: &Path, noise: NoiseProfile) -> Running {
    let index = Arc::new(SidecarIndex::open(dir).unwrap());
    let backend = Arc::new(OracleBackend::new(index, noise, Duration::ZERO));
    start_router(backend_router(backend)).await
}

/// A loopback port with nothing listening on it.
pub async fn closed_port() -> u16 {
    let l = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    l.local_addr().unwrap().port()
}

pub fn client() -> reqwest::Client {
    reqwest::Client::builder().timeout(Duration::from_secs(60)).build().unwrap()
}

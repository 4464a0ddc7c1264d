#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;

use advisor_core::market::{generate_universe, MarketConfig, Regime};
use advisor_core::Universe;
use advisor_service::{AdvisoryService, ServiceSettings};
use serde_json::{json, Value};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub fn market_config() -> MarketConfig {
    MarketConfig {
        n_assets: 3,
        n_steps: 400,
        regimes: vec![Regime {
            drift: 0.0003,
            volatility: 0.01,
            mean_duration: 50.0,
        }],
        correlation: 0.2,
        seed: 7,
        initial_price: 100.0,
        asset_drift: Some(vec![0.0, 0.0002, 0.0004]),
        asset_vol_scale: Some(vec![0.5, 1.0, 2.0]),
    }
}

pub fn universe() -> Arc<Universe> {
    Arc::new(generate_universe(&market_config()).unwrap())
}

pub fn settings() -> ServiceSettings {
    let mut s = ServiceSettings::new(universe());
    s.window = 10;
    s
}

/// Run config small enough for jobs to finish in a second or two.
pub fn tiny_run_config() -> Value {
    json!({
        "market": {"synthetic": serde_json::to_value(market_config()).unwrap()},
        "env": {"window": 10, "episode_len": 32},
        "ppo": {"max_updates": 4, "episodes_per_update": 2, "hidden": [8], "minibatch_size": 32,
                "optimizer": "adam", "learning_rate": 0.003},
        "risk": {"cohort": [0.2, 0.8]},
        "backtest": {"estimation_window": 30},
        "train_fraction": 0.7
    })
}

pub struct Server {
    pub base: String,
    pub service: Arc<AdvisoryService>,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl Server {
    pub async fn start(settings: ServiceSettings) -> Self {
        let service = Arc::new(AdvisoryService::open(settings).unwrap());
        Self::with_service(service).await
    }

    pub async fn with_service(service: Arc<AdvisoryService>) -> Self {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr: SocketAddr = listener.local_addr().unwrap();
        let (tx, rx) = oneshot::channel();
        let task = tokio::spawn(advisor_service::http::serve(listener, service.clone(), async move {
            let _ = rx.await;
        }));
        Self {
            base: format!("http://{addr}"),
            service,
            stop: Some(tx),
            task,
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    /// Graceful stop.
    pub async fn stop(mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        self.task.await.unwrap().unwrap();
    }

    /// Abrupt stop: the server task is aborted without any shutdown work.
    pub fn kill(self) -> Arc<AdvisoryService> {
        self.task.abort();
        self.service
    }
}

/// One parsed server-sent event.
#[derive(Debug, Clone, PartialEq)]
pub struct SseEvent {
    pub id: Option<String>,
    pub event: Option<String>,
    pub data: String,
}

pub fn parse_sse(body: &str) -> Vec<SseEvent> {
    body.split("\n\n")
        .filter_map(|frame| {
            let mut ev = SseEvent {
                id: None,
                event: None,
                data: String::new(),
            };
            let mut any = false;
            for line in frame.lines() {
                if let Some(v) = line.strip_prefix("id:") {
                    ev.id = Some(v.trim().to_string());
                    any = true;
                } else if let Some(v) = line.strip_prefix("event:") {
                    ev.event = Some(v.trim().to_string());
                    any = true;
                } else if let Some(v) = line.strip_prefix("data:") {
                    ev.data.push_str(v.trim_start());
                    any = true;
                }
            }
            any.then_some(ev)
        })
        .collect()
}

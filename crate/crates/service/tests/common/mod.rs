#![allow(dead_code)]

use std::fs::File;
use std::path::Path;
use std::sync::Arc;

use learnpath_core::concept_map::write_arcs;
use learnpath_core::ingest::write_question_bank;
use learnpath_core::sim::chain_benchmark;
use learnpath_service::{router, AppState, ServiceConfig};
use reqwest::StatusCode;
use serde_json::Value;
use tempfile::TempDir;
use tokio::net::TcpListener;

/// Writes the three-concept chain topic (`chain`, 12 questions) plus a UI stub.
pub fn write_fixture(dir: &Path) {
    let (bank, map) = chain_benchmark(4);
    write_question_bank(bank.questions(), File::create(dir.join("bank.csv")).unwrap()).unwrap();
    let mut nodes = String::from("concept_id,question_ids\n");
    for c in map.concepts() {
        let ids: Vec<&str> = c.question_ids.iter().map(|q| q.as_str()).collect();
        nodes.push_str(&format!("{},{}\n", c.id, ids.join(";")));
    }
    std::fs::write(dir.join("concept_nodes.csv"), nodes).unwrap();
    write_arcs(map.arcs(), File::create(dir.join("concept_arcs.csv")).unwrap()).unwrap();
    std::fs::create_dir_all(dir.join("ui")).unwrap();
    std::fs::write(dir.join("ui/index.html"), "<!doctype html><title>quiz</title>").unwrap();
}

pub struct TestServer {
    pub base: String,
    pub state: Arc<AppState>,
    pub client: reqwest::Client,
    pub dir: TempDir,
    task: tokio::task::JoinHandle<()>,
}

impl Drop for TestServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

pub async fn start(tweak: impl FnOnce(&mut ServiceConfig)) -> TestServer {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    start_in(dir, tweak).await
}

/// Serves the data in `dir` on an ephemeral port.
pub async fn start_in(dir: TempDir, tweak: impl FnOnce(&mut ServiceConfig)) -> TestServer {
    let mut config = ServiceConfig {
        data_dir: dir.path().to_owned(),
        bind: "127.0.0.1:0".into(),
        ..ServiceConfig::default()
    };
    tweak(&mut config);
    let state = Arc::new(tokio::task::spawn_blocking(move || AppState::load(config)).await.unwrap().unwrap());
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let app = router(Arc::clone(&state));
    let task = tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    TestServer {
        base,
        state,
        client: reqwest::Client::new(),
        dir,
        task,
    }
}

impl TestServer {
    pub async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let res = self.client.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap();
        let status = res.status();
        (status, res.json().await.unwrap())
    }

    pub async fn get(&self, path: &str) -> (StatusCode, Value) {
        let res = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
        let status = res.status();
        (status, res.json().await.unwrap())
    }

    pub async fn get_text(&self, path: &str) -> (StatusCode, String) {
        let res = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
        (res.status(), res.text().await.unwrap())
    }

    /// The index of a wrong option for `question_id`, read from the bank.
    pub fn wrong_choice(&self, question_id: &str) -> usize {
        let q = self.state.bank.get(&question_id.into()).unwrap();
        (q.correct_index + 1) % q.options.len()
    }

    pub fn correct_choice(&self, question_id: &str) -> usize {
        self.state.bank.get(&question_id.into()).unwrap().correct_index
    }
}

/// Every object key anywhere in `v`.
pub fn keys(v: &Value) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![v];
    while let Some(v) = stack.pop() {
        match v {
            Value::Object(m) => {
                for (k, child) in m {
                    out.push(k.clone());
                    stack.push(child);
                }
            }
            Value::Array(xs) => stack.extend(xs),
            _ => {}
        }
    }
    out
}

/// True when `v` carries no field that could reveal the answer key.
pub fn free_of_answer_key(v: &Value) -> bool {
    keys(v).iter().all(|k| !matches!(k.as_str(), "correct_index" | "correct_answer" | "answer_key" | "correct"))
}

use std::sync::Arc;
use std::time::Duration;

use spanguard_core::datasets::{generate_synthetic, SyntheticConfig};
use spanguard_core::text::tokenize_example;
use spanguard_core::{
    detect, DetectionResult, Document, LexicalOverlapScorer, RagExample, ScorerError, SupportScorer, Tokenizer,
    WindowInput,
};
use spanguard_service::{start, DetectRequest, DetectResponse, Engine, ServiceConfig};

const L: usize = 128;

fn config() -> ServiceConfig {
    ServiceConfig {
        max_sequence_length: L,
        max_wait_ms: 2,
        max_batch_windows: 16,
        ..Default::default()
    }
}

async fn serve_with(config: ServiceConfig, scorer: Arc<dyn SupportScorer>) -> (String, Arc<Engine>) {
    let engine = Arc::new(Engine::new(config, scorer));
    let (addr, _) = start(engine.clone(), "127.0.0.1:0").await.unwrap();
    (format!("http://{addr}"), engine)
}

async fn serve(config: ServiceConfig) -> (String, Arc<Engine>) {
    let scorer = config.build_scorer().unwrap();
    serve_with(config, scorer).await
}

async fn post(client: &reqwest::Client, base: &str, body: &serde_json::Value) -> (u16, serde_json::Value) {
    let r = client.post(format!("{base}/v1/detect")).json(body).send().await.unwrap();
    let status = r.status().as_u16();
    (status, r.json().await.unwrap())
}

fn filler(n: usize) -> String {
    (0..n)
        .map(|i| format!("Filler clause {i} mentions nothing relevant here."))
        .collect::<Vec<_>>()
        .join(" ")
}

fn example(context: String, response: &str) -> RagExample {
    RagExample {
        id: "x".into(),
        context: vec![Document::new("d0", context)],
        question: "What happened to the bridge?".into(),
        response: response.into(),
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn served_results_match_offline() {
    let config = config();
    let (base, engine) = serve(config.clone()).await;
    let records = generate_synthetic(&SyntheticConfig {
        records: 40,
        context_tokens: 100..1500,
        seed: 5,
        ..Default::default()
    });
    let client = reqwest::Client::new();
    let posts = records.iter().map(|r| {
        let body = serde_json::to_value(DetectRequest::from_example(&r.example)).unwrap();
        let (client, base) = (client.clone(), base.clone());
        async move { post(&client, &base, &body).await }
    });
    let replies = futures_join(posts).await;
    for (rec, (status, body)) in records.iter().zip(replies) {
        assert_eq!(status, 200, "{body}");
        let served: DetectResponse = serde_json::from_value(body).unwrap();
        let offline = detect(&rec.example, &**engine.scorer(), engine.detector_config()).unwrap();
        assert_eq!(served.result, offline.result);
        assert_eq!(served.latency.window_count, offline.window_count);
        assert_eq!(served.hallucinated, offline.result.hallucination_probability >= 0.5);
    }
    assert!(engine.metrics().batches() > 0);
}

/// Runs the futures concurrently on the current runtime.
async fn futures_join<F, T>(futs: impl IntoIterator<Item = F>) -> Vec<T>
where
    F: std::future::Future<Output = T> + Send + 'static,
    T: Send + 'static,
{
    let handles: Vec<_> = futs.into_iter().map(tokio::spawn).collect();
    let mut out = Vec::with_capacity(handles.len());
    for h in handles {
        out.push(h.await.unwrap());
    }
    out
}

#[tokio::test]
async fn scattered_support_is_found() {
    let (base, _) = serve(config()).await;
    let client = reqwest::Client::new();
    let context = format!(
        "The bridge opened in 1932. {} Its deck was painted green.",
        filler(80)
    );
    let supported = example(context.clone(), "The bridge opened in 1932. Its deck was painted green.");
    let (status, body) = post(&client, &base, &serde_json::to_value(DetectRequest::from_example(&supported)).unwrap()).await;
    assert_eq!(status, 200);
    let r: DetectResponse = serde_json::from_value(body).unwrap();
    assert!(r.latency.window_count > 2);
    assert!(r.result.hallucination_probability < 0.5);
    assert!(r.result.hallucinated_spans.is_empty());
    assert!(!r.hallucinated);

    let response = "Penguins migrate across frozen tundra.";
    let unrelated = example(context, response);
    let (_, body) = post(&client, &base, &serde_json::to_value(DetectRequest::from_example(&unrelated)).unwrap()).await;
    let r: DetectionResult = serde_json::from_value(body).unwrap();
    assert!(r.hallucination_probability > 0.5);
    assert_eq!(r.hallucinated_spans.len(), 1);
    let span = r.hallucinated_spans[0].char_span;
    assert_eq!((span.start, span.end), (0, response.len()));
}

#[tokio::test]
async fn long_context_window_count() {
    let (base, engine) = serve(ServiceConfig { max_sequence_length: 512, ..config() }).await;
    let ex = example(filler(2000), "The bridge opened in 1932.");
    let t = tokenize_example(&ex, engine.scorer().tokenizer()).unwrap();
    let c = t.context_len();
    assert!(c >= 16_000, "{c}");
    let l = 512 - t.question_len() - t.response_len();
    let (status, body) = post(&reqwest::Client::new(), &base, &serde_json::to_value(DetectRequest::from_example(&ex)).unwrap()).await;
    assert_eq!(status, 200);
    let r: DetectResponse = serde_json::from_value(body).unwrap();
    assert_eq!(r.latency.window_count, c.div_ceil(l));
    assert_eq!(r.latency.input_token_count, c + t.question_len() + t.response_len());
}

#[tokio::test]
async fn bad_requests() {
    let (base, _) = serve(ServiceConfig { max_request_tokens: 200, ..config() }).await;
    let client = reqwest::Client::new();

    let r = client
        .post(format!("{base}/v1/detect"))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status().as_u16(), 400);

    let missing = serde_json::json!({"context": [{"text": "a"}], "question": "q"});
    assert_eq!(post(&client, &base, &missing).await.0, 400);

    let empty = serde_json::json!({"context": [{"text": "Some text."}], "question": "q", "response": "  "});
    let (status, body) = post(&client, &base, &empty).await;
    assert_eq!(status, 400);
    assert!(body["request_id"].is_string());

    let big = serde_json::to_value(DetectRequest::from_example(&example(filler(40), "Yes."))).unwrap();
    let (status, body) = post(&client, &base, &big).await;
    assert_eq!(status, 413, "{body}");

    let long_answer = "word ".repeat(150);
    let overflow = serde_json::json!({"context": [{"text": "Short."}], "question": "q", "response": long_answer});
    let (status, body) = post(&client, &base, &overflow).await;
    assert_eq!(status, 400, "{body}");
    assert!(body["error"].as_str().unwrap().contains("max sequence length"));
}

/// Lexical scorer that takes a while per window.
struct Slow(LexicalOverlapScorer);

impl SupportScorer for Slow {
    fn max_sequence_length(&self) -> usize {
        self.0.max_sequence_length()
    }
    fn tokenizer(&self) -> &dyn Tokenizer {
        self.0.tokenizer()
    }
    fn score_window(&self, input: WindowInput<'_>) -> Result<Vec<f64>, ScorerError> {
        std::thread::sleep(Duration::from_millis(150));
        self.0.score_window(input)
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn saturation_sheds_load() {
    let config = ServiceConfig {
        max_concurrent_requests: 1,
        queue_capacity: 1,
        ..config()
    };
    let (base, engine) = serve_with(config, Arc::new(Slow(LexicalOverlapScorer::new(L)))).await;
    let client = reqwest::Client::new();
    let body = serde_json::to_value(DetectRequest::from_example(&example("The bridge opened.".into(), "It opened."))).unwrap();
    let posts = (0..6).map(|_| {
        let (client, base, body) = (client.clone(), base.clone(), body.clone());
        async move { post(&client, &base, &body).await.0 }
    });
    let statuses = futures_join(posts).await;
    let ok = statuses.iter().filter(|&&s| s == 200).count();
    let shed = statuses.iter().filter(|&&s| s == 503).count();
    assert_eq!(ok + shed, 6, "{statuses:?}");
    assert!(ok >= 2 && shed >= 1, "{statuses:?}");
    assert_eq!(engine.metrics().responses(503), shed as u64);

    // capacity frees up once the burst is over
    assert_eq!(post(&client, &base, &body).await.0, 200);
}

#[tokio::test]
async fn health_and_metrics() {
    let (base, _) = serve(config()).await;
    let client = reqwest::Client::new();
    let h: serde_json::Value = client.get(format!("{base}/v1/health")).send().await.unwrap().json().await.unwrap();
    assert_eq!(h["status"], "ok");
    assert_eq!(h["max_sequence_length"], L);

    let ok = serde_json::to_value(DetectRequest::from_example(&example("The bridge opened.".into(), "It opened."))).unwrap();
    assert_eq!(post(&client, &base, &ok).await.0, 200);
    assert_eq!(post(&client, &base, &serde_json::json!({})).await.0, 400);

    let text = client.get(format!("{base}/v1/metrics")).send().await.unwrap().text().await.unwrap();
    assert!(text.contains("spanguard_requests_total{status=\"200\"} 1"), "{text}");
    assert!(text.contains("spanguard_requests_total{status=\"400\"} 1"));
    assert!(text.contains("spanguard_phase_latency_ms_count{phase=\"score\"} 1"));
    assert!(text.contains("spanguard_windows_scored_total 1"));
}

//! HTTP client for a multimodal scoring backend.
//!
//! Request body: `{"prompt": str, "images": [base64 png], "ids": [str]}`.
//! Response body: `{"scores": [{"id", "naturalness", "physical_plausibility",
//! "human_likeness", "preference", "explanation"}]}`. Image ids are
//! `"<candidate>:<view>"`.

use std::time::Duration;

use base64::Engine;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Criteria, Result, ScoreRecord, SelectionError, BACKEND_MLLM};

pub const ENV_ENDPOINT: &str = "DEXKIT_MLLM_ENDPOINT";
pub const ENV_KEY: &str = "DEXKIT_MLLM_KEY";

const CRITERIA: [&str; 4] = ["naturalness", "physical_plausibility", "human_likeness", "preference"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MllmConfig {
    /// Overridden by `DEXKIT_MLLM_ENDPOINT` when set.
    pub endpoint: Option<String>,
    pub timeout_s: f64,
    /// Extra attempts after a failed request.
    pub retries: usize,
    /// Images per request.
    pub batch_size: usize,
    /// Requests in flight at once.
    pub max_in_flight: usize,
}

impl Default for MllmConfig {
    fn default() -> Self {
        Self { endpoint: None, timeout_s: 60.0, retries: 2, batch_size: 10, max_in_flight: 4 }
    }
}

impl MllmConfig {
    pub fn resolved_endpoint(&self) -> Option<String> {
        std::env::var(ENV_ENDPOINT).ok().filter(|s| !s.is_empty()).or_else(|| self.endpoint.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MllmRequest {
    pub prompt: String,
    /// Base64-encoded PNG images.
    pub images: Vec<String>,
    /// One id per image.
    pub ids: Vec<String>,
    pub endpoint: String,
    pub timeout_s: f64,
    pub retries: usize,
    /// Sent as a bearer token when present.
    pub api_key: Option<String>,
}

impl MllmRequest {
    pub fn validate(&self) -> Result<()> {
        if self.images.is_empty() {
            return Err(SelectionError::Request("request needs at least one image".into()));
        }
        if self.images.len() != self.ids.len() {
            return Err(SelectionError::Request(format!("{} images but {} ids", self.images.len(), self.ids.len())));
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(SelectionError::Request("timeout must be positive".into()));
        }
        self.ids.iter().try_for_each(|s| parse_id(s).map(|_| ()))
    }
}

fn parse_id(s: &str) -> Result<(usize, usize)> {
    let bad = || SelectionError::Request(format!("image id {s:?} is not <candidate>:<view>"));
    let (c, v) = s.split_once(':').ok_or_else(bad)?;
    Ok((c.parse().map_err(|_| bad())?, v.parse().map_err(|_| bad())?))
}

/// Splits `(candidate, view, png)` images into requests of `batch_size`.
pub fn build_requests(images: &[(usize, usize, Vec<u8>)], config: &MllmConfig, prompt: &str) -> Result<Vec<MllmRequest>> {
    if config.batch_size == 0 {
        return Err(SelectionError::Request("batch_size must be positive".into()));
    }
    let endpoint = config.resolved_endpoint().ok_or_else(|| SelectionError::Request(format!("no endpoint configured and {ENV_ENDPOINT} unset")))?;
    let api_key = std::env::var(ENV_KEY).ok().filter(|s| !s.is_empty());
    let b64 = base64::engine::general_purpose::STANDARD;
    let reqs: Vec<MllmRequest> = images
        .chunks(config.batch_size)
        .map(|chunk| MllmRequest {
            prompt: prompt.to_string(),
            images: chunk.iter().map(|(_, _, png)| b64.encode(png)).collect(),
            ids: chunk.iter().map(|(c, v, _)| format!("{c}:{v}")).collect(),
            endpoint: endpoint.clone(),
            timeout_s: config.timeout_s,
            retries: config.retries,
            api_key: api_key.clone(),
        })
        .collect();
    reqs.iter().try_for_each(MllmRequest::validate)?;
    Ok(reqs)
}

/// Sends every request with at most `max_in_flight` outstanding and returns
/// one record per image id, in request then image order. Transport failures
/// and malformed replies become error records; scores are clamped to `[0, 10]`.
pub fn score_mllm(requests: &[MllmRequest], max_in_flight: usize) -> Result<Vec<ScoreRecord>> {
    requests.iter().try_for_each(MllmRequest::validate)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .map_err(|e| SelectionError::Request(e.to_string()))?;
    let per: Vec<Vec<ScoreRecord>> = pool.install(|| requests.par_iter().map(score_one).collect());
    Ok(per.into_iter().flatten().collect())
}

fn score_one(req: &MllmRequest) -> Vec<ScoreRecord> {
    let keys: Vec<(usize, usize)> = req.ids.iter().map(|s| parse_id(s).expect("validated")).collect();
    match post(req) {
        Ok(body) => parse_response(&body, &req.ids, &keys),
        Err((msg, raw)) => keys.iter().map(|&(c, v)| ScoreRecord::failed(c, Some(v), msg.clone(), raw.clone(), BACKEND_MLLM)).collect(),
    }
}

fn post(req: &MllmRequest) -> std::result::Result<String, (String, Option<String>)> {
    let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs_f64(req.timeout_s)).build();
    let body = serde_json::json!({ "prompt": req.prompt, "images": req.images, "ids": req.ids });
    let mut last = (String::new(), None);
    for attempt in 0..=req.retries {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(50 << attempt.min(6)));
        }
        let mut r = agent.post(&req.endpoint);
        if let Some(k) = &req.api_key {
            r = r.set("Authorization", &format!("Bearer {k}"));
        }
        match r.send_json(&body) {
            Ok(resp) => match resp.into_string() {
                Ok(s) => return Ok(s),
                Err(e) => last = (format!("reading response: {e}"), None),
            },
            Err(ureq::Error::Status(code, resp)) => last = (format!("http status {code}"), resp.into_string().ok()),
            Err(e) => last = (format!("transport: {e}"), None),
        }
        log::warn!("scoring request to {} failed (attempt {}): {}", req.endpoint, attempt + 1, last.0);
    }
    Err(last)
}

/// Parses one response body against the requested ids.
pub(crate) fn parse_response(body: &str, ids: &[String], keys: &[(usize, usize)]) -> Vec<ScoreRecord> {
    let all_failed = |msg: &str| keys.iter().map(|&(c, v)| ScoreRecord::failed(c, Some(v), msg.into(), Some(body.into()), BACKEND_MLLM)).collect();
    let Ok(v) = serde_json::from_str::<Value>(body) else {
        return all_failed("response is not JSON");
    };
    let Some(entries) = v.get("scores").and_then(Value::as_array) else {
        return all_failed("response has no scores array");
    };
    ids.iter()
        .zip(keys)
        .map(|(id, &(c, view))| {
            let Some(e) = entries.iter().find(|e| e.get("id").and_then(Value::as_str) == Some(id.as_str())) else {
                return ScoreRecord::failed(c, Some(view), format!("no score for image {id}"), None, BACKEND_MLLM);
            };
            let mut vals = [0.0; 4];
            let mut warnings = Vec::new();
            for (slot, name) in vals.iter_mut().zip(CRITERIA) {
                let Some(x) = e.get(name).and_then(Value::as_f64) else {
                    return ScoreRecord::failed(c, Some(view), format!("image {id}: missing or non-numeric {name}"), Some(e.to_string()), BACKEND_MLLM);
                };
                let clamped = x.clamp(0.0, 10.0);
                if clamped != x {
                    warnings.push(format!("{name} {x} clamped to {clamped}"));
                }
                *slot = clamped;
            }
            let crit = Criteria { naturalness: vals[0], physical_plausibility: vals[1], human_likeness: vals[2], preference: vals[3] };
            let explanation = e.get("explanation").and_then(Value::as_str).unwrap_or_default().to_string();
            let mut r = ScoreRecord::new(c, Some(view), crit, explanation, BACKEND_MLLM);
            r.warnings = warnings;
            r
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::mock::{MockBehavior, MockServer};
    use super::*;

    fn images(n: usize) -> Vec<(usize, usize, Vec<u8>)> {
        (0..n).map(|i| (i / 2, i % 2, vec![i as u8; 8])).collect()
    }

    fn requests(server: &MockServer, n: usize) -> Vec<MllmRequest> {
        let cfg = MllmConfig { endpoint: Some(server.url()), timeout_s: 5.0, retries: 0, batch_size: 3, max_in_flight: 2 };
        build_requests(&images(n), &cfg, "rate").unwrap()
    }

    #[test]
    fn fixed_scores_round_trip() {
        let server = MockServer::start(MockBehavior::Fixed([7.0, 8.0, 6.0, 7.0])).unwrap();
        let reqs = requests(&server, 7);
        assert_eq!(reqs.iter().map(|r| r.images.len()).collect::<Vec<_>>(), vec![3, 3, 1]);
        let recs = score_mllm(&reqs, 2).unwrap();
        assert_eq!(recs.len(), 7);
        for (i, r) in recs.iter().enumerate() {
            assert_eq!((r.id, r.view), (i / 2, Some(i % 2)));
            assert_eq!(r.error, None);
            assert_eq!(r.total, 7.0);
            assert_eq!(r.criteria().values(), [7.0, 8.0, 6.0, 7.0]);
        }
    }

    #[test]
    fn out_of_range_is_clamped_with_warning() {
        let server = MockServer::start(MockBehavior::Fixed([15.0, 8.0, -2.0, 7.0])).unwrap();
        let recs = score_mllm(&requests(&server, 2), 1).unwrap();
        assert_eq!(recs[0].naturalness, 10.0);
        assert_eq!(recs[0].human_likeness, 0.0);
        assert_eq!(recs[0].warnings.len(), 2);
        assert_eq!(recs[0].total, 25.0 / 4.0);
    }

    #[test]
    fn garbage_and_missing_criterion_become_error_records() {
        let server = MockServer::start(MockBehavior::Garbage).unwrap();
        let recs = score_mllm(&requests(&server, 4), 2).unwrap();
        assert_eq!(recs.len(), 4);
        for r in &recs {
            assert!(r.error.is_some());
            assert_eq!(r.raw.as_deref(), Some(super::super::mock::GARBAGE_BODY));
            assert_eq!(r.total, 0.0);
        }
        let server = MockServer::start(MockBehavior::MissingCriterion).unwrap();
        let recs = score_mllm(&requests(&server, 4), 2).unwrap();
        assert!(recs.iter().all(|r| r.error.as_deref().unwrap().contains("preference")));
    }

    #[test]
    fn unreachable_endpoint_fails_per_image() {
        let req = MllmRequest {
            prompt: "p".into(),
            images: vec!["AA==".into()],
            ids: vec!["4:0".into()],
            endpoint: "http://127.0.0.1:9/".into(),
            timeout_s: 1.0,
            retries: 1,
            api_key: None,
        };
        let recs = score_mllm(&[req.clone()], 1).unwrap();
        assert_eq!(recs[0].id, 4);
        assert!(recs[0].error.as_deref().unwrap().starts_with("transport"));
        assert!(score_mllm(&[MllmRequest { images: vec![], ids: vec![], ..req.clone() }], 1).is_err());
        assert!(score_mllm(&[MllmRequest { timeout_s: 0.0, ..req }], 1).is_err());
    }

    #[test]
    fn parse_handles_partial_replies() {
        let ids = vec!["0:0".to_string(), "1:0".to_string()];
        let body = r#"{"scores":[{"id":"1:0","naturalness":1,"physical_plausibility":2,"human_likeness":3,"preference":4,"explanation":"ok"}]}"#;
        let recs = parse_response(body, &ids, &[(0, 0), (1, 0)]);
        assert!(recs[0].error.is_some());
        assert_eq!((recs[1].total, recs[1].explanation.as_str()), (2.5, "ok"));
        assert!(parse_response("{}", &ids, &[(0, 0), (1, 0)]).iter().all(|r| r.error.is_some()));
    }
}

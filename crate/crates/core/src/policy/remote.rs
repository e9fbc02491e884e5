use super::{first_stop, GenerationRequest, GenerationResult, Policy, PolicyError, StopReason, TokenLogprob};
use crate::tagproto::TagSet;
use serde::Deserialize;
use serde_json::json;
use std::time::Duration;

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "CTM_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Full URL of the completions route.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    /// Per-attempt timeout.
    pub timeout: Duration,
    /// Extra attempts after the first failure.
    pub retries: u32,
    /// Delay before the first retry; doubled each time.
    pub backoff: Duration,
    pub logprobs: bool,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(120),
            retries: 3,
            backoff: Duration::from_millis(500),
            logprobs: false,
        }
    }
}

/// Client for an OpenAI-style `/v1/completions` endpoint.
///
/// Servers differ on whether the matched stop string is echoed. When it is
/// missing the client restores it, choosing the marker from the server's
/// `stop_reason` field if present and otherwise from the tag state (an open
/// code cell implies the code-close marker). A restored marker is given
/// log-probability 0 since the server scored no token for it.
pub struct RemotePolicy {
    config: RemoteConfig,
    tags: TagSet,
    agent: ureq::Agent,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
    /// vLLM extension: the matched stop string, a stop token id, or null.
    /// Absent and explicit null must stay distinct, hence the helper.
    #[serde(default, deserialize_with = "present")]
    stop_reason: Option<serde_json::Value>,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

fn present<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<serde_json::Value>, D::Error> {
    serde_json::Value::deserialize(d).map(Some)
}

#[derive(Debug, Deserialize)]
struct ChoiceLogprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
}

impl RemotePolicy {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, tags: TagSet::default(), agent }
    }

    pub fn with_tags(mut self, tags: TagSet) -> Self {
        self.tags = tags;
        self
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<CompletionResponse, (bool, String)> {
        let mut req = self.agent.post(&self.config.endpoint).header("Content-Type", "application/json");
        if let Some(k) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send_json(body).map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let retryable = status == 429 || status >= 500;
            let detail = resp.body_mut().read_to_string().unwrap_or_default();
            return Err((retryable, format!("HTTP {status}: {}", detail.chars().take(200).collect::<String>())));
        }
        resp.body_mut().read_json::<CompletionResponse>().map_err(|e| (false, format!("bad response body: {e}")))
    }
}

impl Policy for RemotePolicy {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, PolicyError> {
        if req.max_new_tokens <= 0 {
            return Err(PolicyError::BudgetExceeded);
        }
        let mut body = json!({
            "model": self.config.model,
            "prompt": req.prefix,
            "stop": req.stop_sequences,
            "max_tokens": req.max_new_tokens,
            "temperature": req.temperature,
            "include_stop_str_in_output": true,
        });
        if self.config.logprobs {
            body["logprobs"] = json!(1);
        }
        let mut delay = self.config.backoff;
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay = delay.saturating_mul(2);
            }
            match self.attempt(&body) {
                Ok(resp) => {
                    let choice = resp
                        .choices
                        .into_iter()
                        .next()
                        .ok_or_else(|| PolicyError::RemoteUnavailable("response has no choices".into()))?;
                    return Ok(interpret(choice, req, &self.tags));
                }
                Err((retryable, why)) => {
                    log::warn!("completion attempt {} failed: {why}", attempt + 1);
                    last = why;
                    if !retryable {
                        break;
                    }
                }
            }
        }
        Err(PolicyError::RemoteUnavailable(last))
    }
}

/// Guesses which stop ended a generation when the server did not say.
fn guess_stop<'s>(prefix: &str, text: &str, stops: &'s [String], tags: &TagSet) -> Option<&'s str> {
    if stops.len() == 1 {
        return Some(&stops[0]);
    }
    let hay = format!("{prefix}{text}");
    let code_open = hay.rfind(&tags.code_open) > hay.rfind(&tags.code_close);
    if code_open {
        if let Some(s) = stops.iter().find(|s| **s == tags.code_close) {
            return Some(s);
        }
    }
    stops.iter().find(|s| **s != tags.code_close).map(String::as_str)
}

fn interpret(choice: Choice, req: &GenerationRequest, tags: &TagSet) -> GenerationResult {
    let stops = &req.stop_sequences;
    let mut text = choice.text;
    let mut tokens: Option<Vec<TokenLogprob>> = choice.logprobs.and_then(|lp| {
        if lp.tokens.len() != lp.token_logprobs.len() {
            return None;
        }
        lp.tokens
            .into_iter()
            .zip(lp.token_logprobs)
            .map(|(token, l)| l.map(|logprob| TokenLogprob { token, logprob: logprob.min(0.0) }))
            .collect()
    });
    if let Some(t) = &tokens {
        if t.iter().map(|t| t.token.as_str()).collect::<String>() != text {
            log::warn!("server logprob tokens do not cover the text; dropping them");
            tokens = None;
        }
    }
    let stop_reason = if let Some((end, m)) = first_stop(&text, stops) {
        text.truncate(end);
        if let Some(t) = tokens.as_mut() {
            // keep tokens up to the cut; drop them if the cut splits a token
            let mut len = 0;
            let keep = t.iter().take_while(|x| {
                let fits = len < end;
                len += x.token.len();
                fits
            });
            let n = keep.count();
            if t[..n].iter().map(|x| x.token.len()).sum::<usize>() == end {
                t.truncate(n);
            } else {
                tokens = None;
            }
        }
        StopReason::StopSequence(m.to_string())
    } else {
        match choice.finish_reason.as_deref() {
            Some("length") => StopReason::Length,
            Some("stop") => {
                let named = match &choice.stop_reason {
                    Some(serde_json::Value::String(s)) => stops.iter().find(|x| *x == s).map(String::as_str),
                    // a token id or explicit null means end of sequence
                    Some(_) => None,
                    None => guess_stop(&req.prefix, &text, stops, tags),
                };
                match named {
                    Some(m) => {
                        text.push_str(m);
                        if let Some(t) = tokens.as_mut() {
                            t.push(TokenLogprob { token: m.to_string(), logprob: 0.0 });
                        }
                        StopReason::StopSequence(m.to_string())
                    }
                    None => StopReason::EndOfSequence,
                }
            }
            _ => StopReason::EndOfSequence,
        }
    };
    GenerationResult { text, stop_reason, token_logprobs: tokens }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ConversationKey;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn req(prefix: &str) -> GenerationRequest {
        GenerationRequest {
            conversation: ConversationKey::new("p", 0),
            prefix: prefix.into(),
            stop_sequences: vec!["</code>".into(), "</think>".into()],
            max_new_tokens: 64,
            temperature: 0.0,
        }
    }

    fn choice(v: serde_json::Value) -> Choice {
        serde_json::from_value(v).unwrap()
    }

    /// Serves canned HTTP responses in order, one per connection, and
    /// counts requests.
    fn stub(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/completions", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let h = hits.clone();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let Ok((mut s, _)) = listener.accept() else { return };
                h.fetch_add(1, Ordering::SeqCst);
                let mut r = BufReader::new(s.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    r.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                r.read_exact(&mut buf).unwrap();
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                s.write_all(reply.as_bytes()).unwrap();
            }
        });
        (url, hits)
    }

    fn config(url: &str, retries: u32) -> RemoteConfig {
        RemoteConfig {
            retries,
            backoff: Duration::from_millis(5),
            timeout: Duration::from_secs(5),
            ..RemoteConfig::new(url, "m")
        }
    }

    #[test]
    fn restores_a_stripped_stop_marker() {
        let tags = TagSet::default();
        let c = choice(json!({"text": "plan<code>print(1)", "finish_reason": "stop"}));
        let r = interpret(c, &req("Q<think>"), &tags);
        assert_eq!(r.text, "plan<code>print(1)</code>");
        assert_eq!(r.stop_reason, StopReason::StopSequence("</code>".into()));
        let c = choice(json!({"text": "so 4", "finish_reason": "stop"}));
        assert_eq!(interpret(c, &req("Q<think>"), &tags).stop_reason, StopReason::StopSequence("</think>".into()));
        let c = choice(json!({"text": "so 4", "finish_reason": "stop", "stop_reason": null}));
        assert_eq!(interpret(c, &req("Q<think>"), &tags).stop_reason, StopReason::EndOfSequence);
        let c = choice(json!({"text": "so", "finish_reason": "stop", "stop_reason": "</think>"}));
        assert_eq!(interpret(c, &req("Q<think><code>"), &tags).text, "so</think>");
    }

    #[test]
    fn echoed_stop_is_cut_and_logprobs_follow() {
        let tags = TagSet::default();
        let c = choice(json!({
            "text": "a</think>zz",
            "finish_reason": "stop",
            "logprobs": {"tokens": ["a", "</think>", "zz"], "token_logprobs": [-0.5, -0.1, -2.0]}
        }));
        let r = interpret(c, &req("Q<think>"), &tags);
        assert_eq!(r.text, "a</think>");
        let lp = r.token_logprobs.unwrap();
        assert_eq!(lp.len(), 2);
        assert_eq!(lp[1].logprob, -0.1);
        let c = choice(json!({"text": "abc", "finish_reason": "length"}));
        assert_eq!(interpret(c, &req("Q<think>"), &tags).stop_reason, StopReason::Length);
    }

    #[test]
    fn posts_and_parses_a_completion() {
        let body = json!({"choices": [{"text": "x<code>1", "finish_reason": "stop", "stop_reason": "</code>"}]});
        let (url, hits) = stub(vec![(200, body.to_string())]);
        let p = RemotePolicy::new(config(&url, 0));
        let r = p.generate(&req("Q<think>")).unwrap();
        assert_eq!(r.text, "x<code>1</code>");
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn server_errors_are_retried() {
        let ok = json!({"choices": [{"text": "done</think>", "finish_reason": "stop"}]});
        let (url, hits) = stub(vec![(503, "{}".into()), (500, "{}".into()), (200, ok.to_string())]);
        let r = RemotePolicy::new(config(&url, 2)).generate(&req("Q<think>")).unwrap();
        assert_eq!(r.stop_reason, StopReason::StopSequence("</think>".into()));
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, hits) = stub(vec![(400, "{\"error\":\"bad\"}".into()), (200, "{}".into())]);
        let err = RemotePolicy::new(config(&url, 3)).generate(&req("Q<think>")).unwrap_err();
        assert!(matches!(err, PolicyError::RemoteUnavailable(ref m) if m.contains("400")), "{err:?}");
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn endpoint_down_is_unavailable() {
        // bind then drop to get a port nobody listens on
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let p = RemotePolicy::new(config(&format!("http://127.0.0.1:{port}/v1/completions"), 2));
        assert!(matches!(p.generate(&req("Q<think>")), Err(PolicyError::RemoteUnavailable(_))));
        assert_eq!(p.generate(&GenerationRequest { max_new_tokens: 0, ..req("Q") }), Err(PolicyError::BudgetExceeded));
    }
}

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{Generated, PolicyGenError, PolicyGenerator, PromptBundle};
use crate::policy::{parse_policy, validate, PolicyError, PolicyOrigin, RangeTable};

pub const ENV_URL: &str = "COPILOT_SIM_LLM_URL";
pub const ENV_KEY: &str = "COPILOT_SIM_LLM_KEY";
pub const ENV_MODEL: &str = "COPILOT_SIM_LLM_MODEL";

const FORMAT_REMINDER: &str = "Your previous reply did not contain a usable policy. Reply with only the JSON \
object {\"pid\":{\"kp\":..,\"ki\":..,\"kd\":..},\"mpc\":{\"w_l\":..,\"w_h\":..,\"w_s\":..}} with numeric values.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteClientConfig {
    /// Full URL of the chat-completion endpoint.
    pub url: String,
    pub model: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_secs: f64,
    pub temperature: f64,
    /// Maximum concurrent in-flight requests.
    pub max_in_flight: usize,
}

impl RemoteClientConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: "default".into(),
            api_key: None,
            timeout_secs: 10.0,
            temperature: 0.0,
            max_in_flight: 2,
        }
    }

    pub fn from_env() -> Result<Self, PolicyGenError> {
        let url = std::env::var(ENV_URL).map_err(|_| PolicyGenError::Config(format!("{ENV_URL} is not set")))?;
        let mut cfg = Self::new(url);
        cfg.api_key = std::env::var(ENV_KEY).ok().filter(|k| !k.is_empty());
        if let Ok(m) = std::env::var(ENV_MODEL) {
            cfg.model = m;
        }
        Ok(cfg)
    }
}

/// Counting semaphore for the in-flight cap.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("limiter lock poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("limiter lock poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("limiter lock poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// Chat-completion client that asks a hosted model for the action matrix.
#[derive(Debug)]
pub struct RemoteBackend {
    cfg: RemoteClientConfig,
    table: RangeTable,
    agent: ureq::Agent,
    limiter: Limiter,
}

impl RemoteBackend {
    pub fn new(cfg: RemoteClientConfig, table: RangeTable) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let limiter = Limiter::new(cfg.max_in_flight);
        Self {
            cfg,
            table,
            agent,
            limiter,
        }
    }

    pub fn config(&self) -> &RemoteClientConfig {
        &self.cfg
    }

    /// One POST; returns the first choice's message text.
    fn complete(&self, system: &str, user: &str) -> Result<String, PolicyGenError> {
        let body = json!({
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.cfg.temperature,
        });
        let mut req = self.agent.post(&self.cfg.url).header("Content-Type", "application/json");
        if let Some(key) = &self.cfg.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send(body.to_string()).map_err(transport)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(PolicyGenError::Http(status));
        }
        let text = resp.body_mut().read_to_string().map_err(transport)?;
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| PolicyGenError::Transport(format!("response is not JSON: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| PolicyGenError::Transport("response has no choices[0].message.content".into()))
    }
}

fn transport(e: ureq::Error) -> PolicyGenError {
    match e {
        ureq::Error::Timeout(_) => PolicyGenError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => PolicyGenError::Timeout,
        other => PolicyGenError::Transport(other.to_string()),
    }
}

impl PolicyGenerator for RemoteBackend {
    /// Retries once, with a format reminder, when the reply holds no usable
    /// policy or the server answers 5xx. Latency covers both attempts.
    fn generate(&self, bundle: &PromptBundle, _seed: u64) -> Result<Generated, PolicyGenError> {
        let _permit = self.limiter.acquire();
        let start = Instant::now();
        let system = bundle.system.render();
        let user = bundle.user_content();
        let mut attempts = 0;
        loop {
            attempts += 1;
            let prompt = if attempts == 1 { user.clone() } else { format!("{user}\n{FORMAT_REMINDER}") };
            let retryable = match self.complete(&system, &prompt) {
                Ok(text) => match parse_policy(&text) {
                    Ok(mut policy) => {
                        validate(&policy, &self.table.envelope)?;
                        policy.origin = PolicyOrigin::RemoteBackend;
                        let digest = hex::encode(Sha256::digest(text.as_bytes()));
                        policy.id = format!("remote-{}", &digest[..12]);
                        return Ok(Generated {
                            policy,
                            latency: Some(start.elapsed().as_secs_f64()),
                            attempts,
                        });
                    }
                    Err(e @ (PolicyError::NoPolicyFound | PolicyError::MalformedPolicy(_))) => e.into(),
                    Err(e) => return Err(e.into()),
                },
                Err(e @ PolicyGenError::Http(500..=599)) => e,
                Err(e) => return Err(e),
            };
            if attempts >= 2 {
                return Err(retryable);
            }
        }
    }

    fn origin(&self) -> PolicyOrigin {
        PolicyOrigin::RemoteBackend
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policygen::{build_system_message, Road, SceneDescriptor, Traffic, Weather};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    const POLICY: &str = r#"{"pid":{"kp":1.2,"ki":0.08,"kd":0.2},"mpc":{"w_l":8.0,"w_h":12.0,"w_s":0.4}}"#;

    /// Serves the scripted `(status, content)` replies in order, one per
    /// connection, and records request bodies.
    fn mock(replies: Vec<(u16, String)>, delay: Duration) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        std::thread::spawn(move || {
            for (status, content) in replies {
                let Ok((mut sock, _)) = listener.accept() else { return };
                let mut reader = BufReader::new(sock.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                log.lock().unwrap().push(String::from_utf8(body).unwrap());
                std::thread::sleep(delay);
                let payload = json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string();
                let _ = write!(
                    sock,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                );
            }
        });
        (url, seen)
    }

    fn bundle() -> PromptBundle {
        PromptBundle::new(
            build_system_message("u", &RangeTable::default()),
            "go faster",
            SceneDescriptor::new(Weather::Sunny, Traffic::Free, Road::Straight),
            vec![],
            8000,
        )
        .unwrap()
    }

    fn backend(url: String, timeout: f64) -> RemoteBackend {
        let mut cfg = RemoteClientConfig::new(url);
        cfg.timeout_secs = timeout;
        RemoteBackend::new(cfg, RangeTable::default())
    }

    #[test]
    fn fixed_policy_round_trip() {
        let (url, seen) = mock(vec![(200, POLICY.into())], Duration::ZERO);
        let g = backend(url, 5.0).generate(&bundle(), 0).unwrap();
        assert_eq!((g.policy.pid.kp, g.policy.mpc.w_s), (1.2, 0.4));
        assert_eq!(g.policy.origin, PolicyOrigin::RemoteBackend);
        assert_eq!(g.attempts, 1);
        assert!(g.latency.unwrap() > 0.0);
        let req: Value = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
        assert_eq!(req["messages"][0]["role"], "system");
        assert_eq!(req["messages"][1]["role"], "user");
        assert!(req["messages"][1]["content"].as_str().unwrap().contains("go faster"));
        assert!(req.get("temperature").is_some());
    }

    #[test]
    fn prose_then_fenced_policy() {
        let reply = format!("Given the clear weather I'd go sporty.\n```json\n{POLICY}\n```\n");
        let (url, _) = mock(vec![(200, reply)], Duration::ZERO);
        assert_eq!(backend(url, 5.0).generate(&bundle(), 0).unwrap().policy.pid.kd, 0.2);
    }

    #[test]
    fn retries_once_after_refusal() {
        let (url, seen) = mock(vec![(200, "I cannot help with that.".into()), (200, POLICY.into())], Duration::ZERO);
        let g = backend(url, 5.0).generate(&bundle(), 0).unwrap();
        assert_eq!(g.attempts, 2);
        assert!(seen.lock().unwrap()[1].contains("did not contain a usable policy"));
    }

    #[test]
    fn server_error_twice() {
        let (url, _) = mock(vec![(500, String::new()), (500, String::new())], Duration::ZERO);
        assert_eq!(backend(url, 5.0).generate(&bundle(), 0).unwrap_err(), PolicyGenError::Http(500));
    }

    #[test]
    fn refusal_twice() {
        let (url, _) = mock(vec![(200, "no".into()), (200, "still no".into())], Duration::ZERO);
        assert_eq!(backend(url, 5.0).generate(&bundle(), 0).unwrap_err(), PolicyGenError::NoPolicyFound);
    }

    #[test]
    fn out_of_envelope_is_validation_error() {
        let bad = POLICY.replace("\"kp\":1.2", "\"kp\":9.0");
        let (url, _) = mock(vec![(200, bad)], Duration::ZERO);
        assert!(matches!(backend(url, 5.0).generate(&bundle(), 0), Err(PolicyGenError::Validation(_))));
    }

    #[test]
    fn slow_server_times_out() {
        let (url, _) = mock(vec![(200, POLICY.into())], Duration::from_millis(1500));
        assert_eq!(backend(url, 0.3).generate(&bundle(), 0).unwrap_err(), PolicyGenError::Timeout);
    }

    #[test]
    fn client_error_not_retried() {
        let (url, seen) = mock(vec![(404, String::new()), (200, POLICY.into())], Duration::ZERO);
        assert_eq!(backend(url, 5.0).generate(&bundle(), 0).unwrap_err(), PolicyGenError::Http(404));
        assert_eq!(seen.lock().unwrap().len(), 1);
    }
}

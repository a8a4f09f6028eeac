//! Blocking JSON-over-HTTP helper shared by the remote embedder and the
//! remote generator.

use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    max_retries: u32,
    backoff: Duration,
}

impl JsonClient {
    pub fn new(timeout: Duration, max_retries: u32) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            agent,
            max_retries,
            backoff: Duration::from_millis(50),
        }
    }

    /// POSTs `body` to `url` and decodes the JSON reply. Connection failures,
    /// 5xx and 429 are retried; other non-200 statuses fail immediately.
    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, url: &str, body: &Req) -> Result<Resp> {
        let mut attempt = 0u32;
        loop {
            let outcome = self
                .agent
                .post(url)
                .send_json(body)
                .and_then(|resp| resp.into_body().read_json::<Resp>());
            match outcome {
                Ok(r) => return Ok(r),
                Err(e) => {
                    let retryable = match &e {
                        ureq::Error::StatusCode(code) => *code == 429 || *code >= 500,
                        ureq::Error::Json(_) => false,
                        _ => true,
                    };
                    if !retryable || attempt >= self.max_retries {
                        return Err(Error::Transport {
                            retries: attempt,
                            message: format!("POST {url}: {e}"),
                        });
                    }
                    attempt += 1;
                    thread::sleep(self.backoff * attempt);
                }
            }
        }
    }
}

impl Default for JsonClient {
    fn default() -> Self {
        Self::new(Duration::from_secs(60), 2)
    }
}

pub fn join_url(endpoint: &str, route: &str) -> String {
    format!("{}/{}", endpoint.trim_end_matches('/'), route)
}

//! Blocking JSON POST with bounded retries, shared by the remote embedder and LLM client.

use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Clone)]
pub(crate) struct HttpSettings {
    pub url: String,
    pub bearer_token: Option<String>,
    pub timeout: Duration,
    /// Extra attempts after the first one.
    pub retries: u32,
    pub backoff: Duration,
}

#[derive(Debug)]
pub(crate) struct HttpFailure {
    pub attempts: u32,
    pub status: Option<u16>,
    pub message: String,
}

pub(crate) fn build_client(settings: &HttpSettings) -> Result<reqwest::blocking::Client, String> {
    reqwest::blocking::Client::builder()
        .timeout(settings.timeout)
        .build()
        .map_err(|e| e.to_string())
}

/// POST `body` and decode the JSON reply. 5xx, 429 and transport errors are
/// retried with exponential backoff; other 4xx responses fail immediately.
pub(crate) fn post_json<B: Serialize, R: DeserializeOwned>(
    client: &reqwest::blocking::Client,
    settings: &HttpSettings,
    body: &B,
) -> Result<R, HttpFailure> {
    let mut attempt = 0;
    loop {
        attempt += 1;
        let mut req = client.post(&settings.url).json(body);
        if let Some(token) = &settings.bearer_token {
            req = req.bearer_auth(token);
        }
        let (retryable, status, message) = match req.send() {
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    return resp.json::<R>().map_err(|e| HttpFailure {
                        attempts: attempt,
                        status: Some(status.as_u16()),
                        message: format!("invalid response body: {e}"),
                    });
                }
                let retryable = status.is_server_error() || status.as_u16() == 429;
                (retryable, Some(status.as_u16()), format!("HTTP {status}"))
            }
            Err(e) => (true, None, e.to_string()),
        };
        if !retryable || attempt > settings.retries {
            return Err(HttpFailure {
                attempts: attempt,
                status,
                message,
            });
        }
        log::warn!("POST {} failed ({message}); retry {attempt}/{}", settings.url, settings.retries);
        thread::sleep(settings.backoff * 2u32.saturating_pow(attempt - 1));
    }
}

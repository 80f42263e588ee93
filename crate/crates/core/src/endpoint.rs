//! Blocking JSON-over-HTTP client shared by the external validator, teacher
//! and model adapters.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_timeout() -> u64 {
    60
}

fn default_retries() -> u32 {
    2
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        EndpointConfig {
            url: url.into(),
            timeout_secs: default_timeout(),
            retries: default_retries(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct JsonEndpoint {
    config: EndpointConfig,
    agent: ureq::Agent,
}

impl JsonEndpoint {
    pub fn new(config: EndpointConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        JsonEndpoint { config, agent }
    }

    pub fn url(&self) -> &str {
        &self.config.url
    }

    /// POSTs `body` and decodes the JSON response, retrying up to the
    /// configured count. The error string describes the last failure.
    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp, String> {
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            match self.agent.post(&self.config.url).send_json(body) {
                Ok(mut resp) => match resp.body_mut().read_json::<Resp>() {
                    Ok(v) => return Ok(v),
                    Err(e) => last = format!("bad response from {}: {e}", self.config.url),
                },
                Err(e) => last = format!("request to {} failed: {e}", self.config.url),
            }
            log::debug!("attempt {attempt} failed: {last}");
        }
        Err(last)
    }
}

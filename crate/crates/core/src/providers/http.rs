use std::time::Duration;

use reqwest::blocking::Client;

use super::{Backend, ProviderError, ProviderReply, ProviderRequest};

/// Environment variable holding the API key for `provider_id`:
/// `MTLOOP_PROVIDER_<ID>_KEY` with the id upper-cased and non-alphanumerics
/// replaced by `_`.
pub fn api_key_env_var(provider_id: &str) -> String {
    let id: String = provider_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect();
    format!("MTLOOP_PROVIDER_{id}_KEY")
}

/// JSON-over-HTTP provider. Requests are POSTed to a fixed endpoint with an
/// optional bearer key read from the environment at construction.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: Client,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(provider_id: &str, endpoint: &str, timeout: Duration) -> Result<Self, ProviderError> {
        let client = Client::builder().timeout(timeout).build().map_err(|e| ProviderError::Transport {
            provider: provider_id.to_string(),
            message: e.to_string(),
        })?;
        Ok(Self {
            client,
            endpoint: endpoint.to_string(),
            api_key: std::env::var(api_key_env_var(provider_id)).ok().filter(|k| !k.is_empty()),
        })
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }
}

impl Backend for HttpBackend {
    fn call(&self, provider_id: &str, request: &ProviderRequest) -> Result<ProviderReply, ProviderError> {
        let mut rb = self.client.post(&self.endpoint).json(request);
        if let Some(key) = &self.api_key {
            rb = rb.bearer_auth(key);
        }
        let resp = rb.send().map_err(|e| {
            if e.is_timeout() {
                ProviderError::Timeout {
                    provider: provider_id.to_string(),
                }
            } else {
                ProviderError::Transport {
                    provider: provider_id.to_string(),
                    message: e.to_string(),
                }
            }
        })?;
        let code = resp.status();
        if !code.is_success() {
            return Err(ProviderError::Status {
                provider: provider_id.to_string(),
                status: code.as_u16(),
            });
        }
        resp.json::<ProviderReply>().map_err(|e| {
            if e.is_timeout() {
                ProviderError::Timeout {
                    provider: provider_id.to_string(),
                }
            } else {
                ProviderError::MalformedResponse(e.to_string())
            }
        })
    }
}

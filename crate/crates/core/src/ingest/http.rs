use std::time::Duration;

use super::transport::{Request, Response, Transport};
use crate::error::{Error, Result};

/// Blocking HTTPS transport. Wikimedia etiquette requires a descriptive
/// user agent with contact details.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(user_agent: &str) -> Result<Self> {
        if user_agent.trim().is_empty() {
            return Err(Error::Config("a user agent is required for live requests".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .user_agent(user_agent)
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(HttpTransport { client })
    }
}

impl Transport for HttpTransport {
    fn get(&self, req: &Request) -> std::result::Result<Response, String> {
        let resp = self
            .client
            .get(&req.endpoint)
            .query(&req.query)
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.bytes().map_err(|e| e.to_string())?.to_vec();
        Ok(Response { status, body })
    }
}

//! Async client for the review service.

use reqwest::{Response, StatusCode};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use seasynth_core::review::{
    CreateSession, GoodImageRate, ItemView, ReviewVerdict, Session, SessionStats, VerdictSubmission,
};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    /// The service answered with an error body.
    #[error("{status} {kind}: {message}")]
    Api {
        status: StatusCode,
        kind: String,
        message: String,
    },
}

impl ClientError {
    /// The service's error kind, e.g. `duplicate_verdict`.
    pub fn kind(&self) -> Option<&str> {
        match self {
            ClientError::Api { kind, .. } => Some(kind),
            ClientError::Transport(_) => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Deserialize)]
struct ErrorEnvelope {
    error: ErrorBody,
}

#[derive(Deserialize)]
struct ErrorBody {
    kind: String,
    message: String,
}

#[derive(Debug, Clone)]
pub struct ReviewClient {
    base: String,
    http: reqwest::Client,
}

impl ReviewClient {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub async fn create_session(&self, req: &CreateSession) -> Result<Session> {
        decode(self.http.post(self.url("/api/session")).json(req).send().await?).await
    }

    pub async fn next_item(&self, session_id: &str) -> Result<ItemView> {
        let url = self.url(&format!("/api/session/{session_id}/next"));
        decode(self.http.get(url).send().await?).await
    }

    pub async fn submit_verdict(&self, session_id: &str, sub: &VerdictSubmission) -> Result<ReviewVerdict> {
        let url = self.url(&format!("/api/session/{session_id}/verdict"));
        decode(self.http.post(url).json(sub).send().await?).await
    }

    pub async fn session_stats(&self, session_id: &str) -> Result<SessionStats> {
        let url = self.url(&format!("/api/session/{session_id}/stats"));
        decode(self.http.get(url).send().await?).await
    }

    /// Aggregate over `session_ids`, or over every session when empty.
    pub async fn good_image_rate(&self, session_ids: &[String]) -> Result<GoodImageRate> {
        let mut req = self.http.get(self.url("/api/stats"));
        if !session_ids.is_empty() {
            req = req.query(&[("sessions", session_ids.join(","))]);
        }
        decode(req.send().await?).await
    }

    /// PNG bytes of an edited image, or of its source when `source` is set.
    pub async fn image(&self, edited_id: &str, source: bool) -> Result<Vec<u8>> {
        let mut req = self.http.get(self.url(&format!("/api/image/{edited_id}")));
        if source {
            req = req.query(&[("variant", "source")]);
        }
        let resp = check(req.send().await?).await?;
        Ok(resp.bytes().await?.to_vec())
    }
}

async fn check(resp: Response) -> Result<Response> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let text = resp.text().await.unwrap_or_default();
    Err(match serde_json::from_str::<ErrorEnvelope>(&text) {
        Ok(env) => ClientError::Api {
            status,
            kind: env.error.kind,
            message: env.error.message,
        },
        Err(_) => ClientError::Api {
            status,
            kind: "http".into(),
            message: text,
        },
    })
}

async fn decode<T: DeserializeOwned>(resp: Response) -> Result<T> {
    Ok(check(resp).await?.json().await?)
}

use serde::{Deserialize, Serialize};

use super::{check_logits, check_tokens, LanguageModel, LmError, TokenId};
use crate::remote::{HttpClient, RemoteConfig, RemoteError};

#[derive(Serialize)]
struct LogitsRequest<'a> {
    source: &'a [TokenId],
    prefix: &'a [TokenId],
}

#[derive(Deserialize)]
struct LogitsResponse {
    logits: Vec<f64>,
}

/// Logits served over HTTP (`POST /v1/logits`).
///
/// Responses are checked for length and finiteness; a violation is a
/// protocol error, not a model error.
#[derive(Debug, Clone)]
pub struct RemoteLm {
    client: HttpClient,
    vocab_size: usize,
    max_len: usize,
}

impl RemoteLm {
    pub fn new(config: RemoteConfig, vocab_size: usize, max_len: usize) -> Self {
        Self {
            client: HttpClient::new(config),
            vocab_size,
            max_len,
        }
    }
}

impl LanguageModel for RemoteLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn logits(&self, source: &[TokenId], prefix: &[TokenId]) -> Result<Vec<f64>, LmError> {
        check_tokens(source, self.vocab_size)?;
        check_tokens(prefix, self.vocab_size)?;
        if prefix.len() >= self.max_len {
            return Err(LmError::PrefixTooLong {
                len: prefix.len(),
                max_len: self.max_len,
            });
        }
        let response: LogitsResponse = self
            .client
            .post("/v1/logits", &LogitsRequest { source, prefix })?;
        check_logits(&response.logits, self.vocab_size).map_err(|e| {
            LmError::Remote(RemoteError::protocol(&self.client.url("/v1/logits"), e.to_string()))
        })?;
        Ok(response.logits)
    }
}

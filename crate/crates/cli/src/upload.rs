use std::path::Path;
use std::time::Duration;

use anyhow::{Context, Result};
use homescope_core::daemon::{UploadError, Uploader};
use homescope_core::identity::LabelRules;
use homescope_core::store::Store;
use homescope_core::wire::{IngestAck, UploadBatch};

/// Posts batches to a running collector.
pub struct HttpUploader {
    base: String,
    agent: ureq::Agent,
}

impl HttpUploader {
    pub fn new(base: &str) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(15)).build();
        HttpUploader { base: base.trim_end_matches('/').to_string(), agent }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub fn agent(&self) -> &ureq::Agent {
        &self.agent
    }
}

impl Uploader for HttpUploader {
    fn upload(&mut self, batch: &UploadBatch) -> Result<IngestAck, UploadError> {
        match self.agent.post(&self.url("/v1/batch")).send_json(batch) {
            Ok(resp) => resp.into_json().map_err(|e| UploadError::Unreachable(format!("bad ack: {e}"))),
            // The collector may recover from its own errors; only 4xx is final.
            Err(ureq::Error::Status(code, resp)) if (400..500).contains(&code) => {
                Err(UploadError::Rejected(format!("{code}: {}", resp.into_string().unwrap_or_default())))
            }
            Err(e) => Err(UploadError::Unreachable(e.to_string())),
        }
    }
}

/// Ingests straight into a store file; for offline replays.
pub struct StoreUploader {
    store: Store,
    rules: LabelRules,
}

impl StoreUploader {
    pub fn open(path: &Path) -> Result<Self> {
        let store = Store::open(path).with_context(|| format!("opening store {}", path.display()))?;
        Ok(StoreUploader { store, rules: LabelRules::bundled() })
    }
}

impl Uploader for StoreUploader {
    fn upload(&mut self, batch: &UploadBatch) -> Result<IngestAck, UploadError> {
        let ack = self.store.data_mut().ingest(batch, &self.rules).map_err(|e| UploadError::Rejected(e.to_string()))?;
        self.store.save().map_err(|e| UploadError::Unreachable(e.to_string()))?;
        Ok(ack)
    }
}

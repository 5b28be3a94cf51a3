//! Drives the real gateway and engine against a [`MockForge`]: every forge
//! change is rendered as a provider payload, signed, ingested and dispatched.

use std::sync::Arc;

use chrono::Duration;

use crate::client::{ForgeError, ForgePort};
use crate::clock::{Clock, ManualClock};
use crate::config::Config;
use crate::engine::{Engine, Transcript};
use crate::gateway::{
    sign, Admission, Channel, DecodeError, Gateway, GatewaySecrets, RawDelivery, GITHUB_SIGNATURE_HEADER,
    GITLAB_TOKEN_HEADER,
};
use crate::model::Timestamp;

use super::payloads::render;
use super::state::ForgeState;
use super::MockForge;

/// Upper bound on notifications processed by one [`Harness::pump`]; a
/// workflow that keeps reacting to its own effects trips it.
pub const MAX_CASCADE: usize = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("forge rejected the operation: {0}")]
    Forge(#[from] ForgeError),
    #[error("payload could not be decoded: {0}")]
    Decode(#[from] DecodeError),
    #[error("delivery {0} was not authenticated")]
    Unauthorized(String),
    #[error("more than {MAX_CASCADE} notifications in one cascade")]
    Runaway,
}

const WEBHOOK_SECRET: &[u8] = b"harness-webhook-secret";
const GITLAB_TOKEN: &[u8] = b"harness-gitlab-token";
const RUNNER_SECRET: &[u8] = b"harness-runner-secret";

pub struct Harness {
    forge: Arc<MockForge>,
    gateway: Gateway,
    engine: Engine,
    clock: ManualClock,
    deliveries: u64,
    duplicate_deliveries: bool,
    duplicates_dropped: u64,
}

impl Harness {
    pub fn new(config: Config, state: ForgeState) -> Self {
        let start = state.now;
        let gateway = Gateway::new(
            GatewaySecrets {
                github_webhook: WEBHOOK_SECRET.to_vec(),
                gitlab_token: GITLAB_TOKEN.to_vec(),
                runner: RUNNER_SECRET.to_vec(),
            },
            config.all_repos(),
            config.ledger_capacity,
        );
        let forge = Arc::new(MockForge::new(state));
        let engine = Engine::new(Arc::new(config), Arc::clone(&forge) as Arc<dyn ForgePort>, start);
        Harness {
            forge,
            gateway,
            engine,
            clock: ManualClock::new(start),
            deliveries: 0,
            duplicate_deliveries: false,
            duplicates_dropped: 0,
        }
    }

    /// Sends every delivery twice with the same id.
    pub fn with_duplicate_deliveries(mut self, on: bool) -> Self {
        self.duplicate_deliveries = on;
        self
    }

    pub fn forge(&self) -> &MockForge {
        &self.forge
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn duplicates_dropped(&self) -> u64 {
        self.duplicates_dropped
    }

    /// Performs a user operation on the forge and lets the bot react to it.
    pub fn act<R>(&mut self, op: impl FnOnce(&mut ForgeState) -> Result<R, ForgeError>) -> Result<R, HarnessError> {
        let out = op(&mut self.forge.state())?;
        self.pump()?;
        Ok(out)
    }

    /// Moves time forward, fires due schedules and delivers what follows.
    pub fn advance(&mut self, by: Duration) -> Result<(), HarnessError> {
        let now = self.clock.advance(by);
        self.forge.set_now(now);
        self.engine.tick(now);
        self.pump()
    }

    /// Delivers an externally built (unsigned) payload, then its cascade.
    pub fn deliver(&mut self, delivery: RawDelivery) -> Result<Admission, HarnessError> {
        let admission = self.deliver_one(delivery)?;
        self.pump()?;
        Ok(admission)
    }

    /// Drains the forge outbox until quiescent.
    pub fn pump(&mut self) -> Result<(), HarnessError> {
        let mut processed = 0;
        loop {
            let batch = self.forge.take_outbox();
            if batch.is_empty() {
                return Ok(());
            }
            for notification in batch {
                processed += 1;
                if processed > MAX_CASCADE {
                    return Err(HarnessError::Runaway);
                }
                self.deliveries += 1;
                let id = format!("mock-{:06}", self.deliveries);
                self.deliver_one(render(&notification, &id, self.clock.now()))?;
            }
        }
    }

    fn deliver_one(&mut self, delivery: RawDelivery) -> Result<Admission, HarnessError> {
        let delivery = sign_delivery(delivery);
        let admission = self.gateway.ingest(&delivery)?;
        match &admission {
            Admission::Accepted(event) => {
                self.engine.dispatch(event, self.clock.now());
            }
            Admission::Unauthorized => return Err(HarnessError::Unauthorized(delivery.delivery_id())),
            Admission::Duplicate => self.duplicates_dropped += 1,
            Admission::Ignored => {}
        }
        if self.duplicate_deliveries {
            match self.gateway.ingest(&delivery)? {
                Admission::Accepted(event) => {
                    self.engine.dispatch(&event, self.clock.now());
                }
                Admission::Duplicate => self.duplicates_dropped += 1,
                _ => {}
            }
        }
        Ok(admission)
    }

    pub fn transcript(&self) -> Transcript {
        self.engine.transcript()
    }

    /// The transcript with the final forge digest filled in.
    pub fn finish(&self) -> Transcript {
        let mut transcript = self.engine.transcript();
        transcript.final_state_digest = Some(self.forge.digest());
        transcript
    }

    pub fn config(&self) -> &Config {
        self.engine.config()
    }
}

/// Adds the credential the gateway expects for the delivery's channel.
pub fn sign_delivery(mut delivery: RawDelivery) -> RawDelivery {
    match delivery.channel {
        Channel::GitHub => {
            let sig = sign(WEBHOOK_SECRET, &delivery.body);
            delivery.headers.insert(GITHUB_SIGNATURE_HEADER.to_owned(), sig);
        }
        Channel::GitLab => {
            delivery.headers.insert(GITLAB_TOKEN_HEADER.to_owned(), String::from_utf8_lossy(GITLAB_TOKEN).into_owned());
        }
        Channel::Runner => {
            let sig = sign(RUNNER_SECRET, &delivery.body);
            delivery.headers.insert(GITHUB_SIGNATURE_HEADER.to_owned(), sig);
        }
    }
    delivery
}

//! Process plumbing for forgebot: the webhook server and secret loading.

pub mod server;

use forgebot::config::SecretRefs;
use forgebot::gateway::GatewaySecrets;

/// Credentials read from the environment variables named in the configuration.
pub struct Credentials {
    pub gateway: GatewaySecrets,
    pub github_token: String,
    pub gitlab_token: String,
}

/// Reads the secrets named by `refs` through `lookup`. The webhook secret is
/// required; it also authenticates GitLab hooks and runner callbacks.
pub fn load_credentials(refs: &SecretRefs, lookup: impl Fn(&str) -> Option<String>) -> anyhow::Result<Credentials> {
    let webhook = lookup(&refs.webhook_secret_env).filter(|s| !s.is_empty());
    let Some(webhook) = webhook else {
        anyhow::bail!("environment variable {} (webhook secret) is not set", refs.webhook_secret_env);
    };
    let token = |name: &str| {
        let value = lookup(name).unwrap_or_default();
        if value.is_empty() {
            tracing::warn!(var = name, "API token not set; forge calls will be unauthenticated");
        }
        value
    };
    Ok(Credentials {
        gateway: GatewaySecrets {
            github_webhook: webhook.clone().into_bytes(),
            gitlab_token: webhook.clone().into_bytes(),
            runner: webhook.into_bytes(),
        },
        github_token: token(&refs.github_token_env),
        gitlab_token: token(&refs.gitlab_token_env),
    })
}

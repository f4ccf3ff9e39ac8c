use std::sync::Arc;

use redline_core::prompt::PromptTemplate;
use redline_core::provider::{RemoteConfig, RemoteProvider};
use redline_core::{FileStore, Provider, ScriptedProvider, TemplateSet};
use redline_service::{router, spawn_background, AppState, Config};

fn provider(config: &Config) -> Result<Arc<dyn Provider>, String> {
    if let Some(dir) = &config.fixtures {
        return Ok(Arc::new(ScriptedProvider::from_dir(dir).map_err(|e| e.to_string())?));
    }
    let remote = RemoteConfig::from_env()
        .ok_or("set REDLINE_PROVIDER_URL for a model endpoint or REDLINE_FIXTURES for scripted answers")?;
    Ok(Arc::new(RemoteProvider::new(remote).map_err(|e| e.to_string())?))
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run() {
        log::error!("{e}");
        std::process::exit(1);
    }
}

fn run() -> Result<(), String> {
    let config = Config::from_env()?;
    // the blocking HTTP client must be built outside the async runtime
    let provider = provider(&config)?;
    let mut templates = TemplateSet::default();
    if let Some(path) = &config.perturbed_template {
        templates = templates.with_perturbed(PromptTemplate::load(path).map_err(|e| e.to_string())?);
    }
    let store = FileStore::open(&config.store).map_err(|e| e.to_string())?;
    let addr = config.addr.clone();
    let state = AppState::new(store, provider, templates, config);

    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| format!("bind {addr}: {e}"))?;
        log::info!("listening on {addr}");
        spawn_background(state.clone());
        axum::serve(listener, router(state)).await.map_err(|e| e.to_string())
    })
}

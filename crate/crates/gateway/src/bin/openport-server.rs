use std::net::SocketAddr;
use std::path::PathBuf;

use clap::Parser;
use openport_gateway::{router, GatewayConfig, Runtime};
use tracing_subscriber::EnvFilter;

/// OpenPort reference runtime over the demo accounting domain.
#[derive(Debug, Parser)]
#[command(name = "openport-server", version)]
struct Args {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long, env = "OPENPORT_ADMIN_TOKEN")]
    admin_token: Option<String>,
    #[arg(long)]
    rate_window_seconds: Option<u64>,
    #[arg(long)]
    rate_limit: Option<u32>,
    #[arg(long)]
    preflight_ttl_seconds: Option<u64>,
    #[arg(long)]
    trust_forwarded_for: bool,
    /// Create a demo app in this tenant and print its one-time token.
    #[arg(long, value_name = "TENANT")]
    bootstrap: Option<String>,
}

fn load_config(args: &Args) -> Result<GatewayConfig, Box<dyn std::error::Error>> {
    let mut cfg = match &args.config {
        Some(path) => serde_json::from_slice(&std::fs::read(path)?)?,
        None => GatewayConfig::default(),
    };
    if let Some(v) = &args.listen {
        cfg.listen_address = v.clone();
    }
    if let Some(v) = &args.admin_token {
        cfg.admin_token = v.clone();
    }
    if let Some(v) = args.rate_window_seconds {
        cfg.rate_window_seconds = v;
    }
    if let Some(v) = args.rate_limit {
        cfg.rate_limit = v;
    }
    if let Some(v) = args.preflight_ttl_seconds {
        cfg.preflight_ttl_seconds = v;
    }
    cfg.trust_forwarded_for |= args.trust_forwarded_for;
    Ok(cfg)
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    tracing_subscriber::fmt().with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into())).init();
    let args = Args::parse();
    let cfg = load_config(&args)?;
    let addr: SocketAddr = cfg.listen_address.parse()?;
    let rt = Runtime::reference(cfg);

    if let Some(tenant) = &args.bootstrap {
        let (app, token) = rt.bootstrap_app("demo-agent", tenant)?;
        println!("app_id={}", app.id);
        println!("token={token}");
    }

    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "openport gateway listening");
    axum::serve(listener, router(rt).into_make_service_with_connect_info::<SocketAddr>())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

use std::net::IpAddr;
use std::path::PathBuf;
use std::time::Duration;

use blemish::chromophore::MixingMatrix;
use blemish_studio::StudioConfig;
use clap::Parser;

#[derive(Debug, Parser)]
#[command(name = "blemish-studio", version, about = "Serve the retouching studio and its JSON API")]
struct Args {
    #[arg(long, default_value = "127.0.0.1")]
    addr: IpAddr,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Directory with the built studio UI, served at `/`.
    #[arg(long = "static-dir", value_name = "DIR")]
    static_dir: Option<PathBuf>,
    /// Mixing matrix JSON; defaults to the bundled matrix.
    #[arg(long = "mixing-matrix", value_name = "JSON")]
    mixing_matrix: Option<PathBuf>,
    /// Idle session lifetime in seconds.
    #[arg(long = "session-ttl", default_value_t = 1800)]
    session_ttl: u64,
}

#[tokio::main]
async fn main() {
    let args = Args::parse();
    let mixing = match &args.mixing_matrix {
        Some(p) => match std::fs::read_to_string(p).map_err(blemish::Error::from).and_then(|s| MixingMatrix::from_json(&s)) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("error: {}: {e}", p.display());
                std::process::exit(2);
            }
        },
        None => MixingMatrix::bundled(),
    };
    let cfg = StudioConfig {
        mixing,
        ttl: Duration::from_secs(args.session_ttl),
        static_dir: args.static_dir,
        ..StudioConfig::default()
    };
    let listener = match tokio::net::TcpListener::bind((args.addr, args.port)).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot bind {}:{}: {e}", args.addr, args.port);
            std::process::exit(3);
        }
    };
    eprintln!("listening on http://{}", listener.local_addr().expect("bound address"));
    if let Err(e) = blemish_studio::serve(listener, cfg).await {
        eprintln!("error: {e}");
        std::process::exit(3);
    }
}

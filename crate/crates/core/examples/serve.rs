//! Starts the HTTP game server on 127.0.0.1:8080 with 200-rollout MCTS agents.
//!
//! ```text
//! cargo run --release --example serve
//! curl -X POST localhost:8080/api/game -H 'content-type: application/json' \
//!      -d '{"game":"connect3x3","humanSeats":[0]}'
//! ```

use multizero::server::{serve, ServerConfig};

#[tokio::main]
async fn main() -> std::io::Result<()> {
    let addr = "127.0.0.1:8080".parse().expect("valid address");
    let config = ServerConfig {
        default_rollouts: 200,
        ..ServerConfig::default()
    };
    println!("listening on http://{addr}");
    serve(config, addr).await
}

//! Runs a small gauntlet: a subject agent against pairs of MCTS opponents
//! with growing rollout budgets. With a checkpoint the subject is AlphaZero,
//! otherwise a 50-rollout MCTS control.
//!
//! ```text
//! cargo run --release --example gauntlet -- [checkpoint_dir]
//! ```

use std::path::Path;
use std::sync::Arc;

use multizero::arena::{run_gauntlet, GauntletConfig};
use multizero::cli::resolve_checkpoint;
use multizero::game::GameDescriptor;
use multizero::mcts::SearchConfig;
use multizero::network::Parameters;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = match std::env::args().nth(1) {
        Some(p) => Some(Arc::new(Parameters::load(&resolve_checkpoint(Path::new(&p))?)?)),
        None => None,
    };
    let game = match &params {
        Some(p) => GameDescriptor::by_name(&p.config().game)?,
        None => GameDescriptor::TIC_TAC_MO,
    };
    let config = GauntletConfig {
        opponent_rollout_ladder: vec![25, 50, 100],
        control: params.is_none(),
        ..GauntletConfig::default()
    };
    let subject = config.subject(params);
    println!("{} subject {:?} on {}", subject.kind_name(), subject.kind, game.name);
    let report = run_gauntlet(&subject, &config, &game, &SearchConfig::default(), 0)?;
    print!("{}", report.summary_csv());
    Ok(())
}

//! Initialises a network, evaluates a position, trains a few steps on a
//! hand-made sample and saves/reloads the checkpoint.
//!
//! ```text
//! cargo run --release --example network_checkpoint -- [out_dir]
//! ```

use std::path::PathBuf;

use multizero::game::{GameDescriptor, Move, ScoreVector};
use multizero::mcts::MoveDistribution;
use multizero::network::{forward, init_parameters, NetworkConfig, Parameters};
use multizero::training::{train_step, AdamState, TrainConfig, TrainingSample};
use multizero::util::seeded_rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("multizero-net"));
    let game = GameDescriptor::CONNECT_3X3;
    let mut params = init_parameters(NetworkConfig::desk(&game), &mut seeded_rng(0));
    println!("desk network for {}: {} learnable parameters", game.name, params.learnable_count());

    let state = game.initial_state().apply_move(Move(3))?;
    let before = forward(&params, &[state.encode()])?.remove(0);
    println!("value before training {}", before.value);

    let sample = TrainingSample {
        tensor: state.encode(),
        pi: MoveDistribution::new(vec![(Move(3), 1.0)]).to_dense(game.action_space_size()),
        z: ScoreVector::win(3, 1),
    };
    let mut opt = AdamState::new(&params);
    let config = TrainConfig::default();
    for step in 0..100 {
        let terms = train_step(&mut params, &mut opt, std::slice::from_ref(&sample), &config)?;
        if step % 25 == 0 {
            println!("step {step:>3}: mse {:.4} ce {:.4} total {:.4}", terms.value_mse, terms.policy_ce, terms.total);
        }
    }
    let after = forward(&params, &[state.encode()])?.remove(0);
    println!("value after training {}", after.value);

    params.save(&out)?;
    let loaded = Parameters::load(&out)?;
    let again = forward(&loaded, &[state.encode()])?.remove(0);
    println!("reloaded from {}: outputs identical = {}", out.display(), again == after);
    Ok(())
}

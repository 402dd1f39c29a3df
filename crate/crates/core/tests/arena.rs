use std::sync::{Arc, Mutex};

use multizero::arena::{
    run_gauntlet, run_match, score_difference, AgentSpec, ArenaError, GauntletConfig, MoveSource,
};
use multizero::game::{GameDescriptor, GameState, Move};
use multizero::mcts::SearchConfig;
use multizero::network::{init_parameters, NetworkConfig};
use multizero::util::seeded_rng;

#[test]
fn random_agent_loses_to_search() {
    let game = GameDescriptor::TIC_TAC_MO;
    let agents = [
        AgentSpec::random().labelled("random"),
        AgentSpec::mcts(200).labelled("a"),
        AgentSpec::mcts(200).labelled("b"),
    ];
    let result = run_match(&agents, &game, &SearchConfig::default(), 3).unwrap();
    assert!(score_difference(&result, "random").unwrap() < 0.0, "{:?}", result.totals);
}

#[test]
fn match_totals_add_up_per_game() {
    let game = GameDescriptor::CONNECT_3X3;
    let agents = [
        AgentSpec::random().labelled("r"),
        AgentSpec::mcts(8).labelled("m"),
        AgentSpec::alphazero(Arc::new(init_parameters(NetworkConfig::tiny(&game), &mut seeded_rng(1))), 8)
            .labelled("az"),
    ];
    let result = run_match(&agents, &game, &SearchConfig::default(), 11).unwrap();
    assert_eq!(result.games.len(), 6);
    let mut totals = [0.0f64; 3];
    for g in &result.games {
        let mut state = game.initial_state();
        for &mv in &g.moves {
            state = state.apply_move(mv).unwrap();
        }
        assert_eq!(state.terminal_scores(), Some(g.scores));
        for (seat, &a) in g.seats.iter().enumerate() {
            totals[a] += f64::from(g.scores[seat]);
        }
    }
    assert_eq!(result.totals, totals);
    let again = run_match(&agents, &game, &SearchConfig::default(), 11).unwrap();
    assert_eq!(again, result);
}

#[test]
fn two_player_match_plays_both_seatings() {
    let game = GameDescriptor::TIC_TAC_TOE;
    let agents = [AgentSpec::mcts(30).labelled("a"), AgentSpec::random().labelled("b")];
    let result = run_match(&agents, &game, &SearchConfig::default(), 0).unwrap();
    assert_eq!(result.games.len(), 2);
    assert_eq!(result.games[0].seats, vec![0, 1]);
    assert_eq!(result.games[1].seats, vec![1, 0]);
}

#[test]
fn wrong_agent_count_is_rejected() {
    let agents = [AgentSpec::random(), AgentSpec::random()];
    let err = run_match(&agents, &GameDescriptor::TIC_TAC_MO, &SearchConfig::default(), 0).unwrap_err();
    assert!(matches!(err, ArenaError::WrongAgentCount { expected: 3, got: 2 }));
}

struct Recorder(Mutex<Vec<usize>>);

impl MoveSource for Recorder {
    fn choose(&self, state: &GameState) -> Option<Move> {
        self.0.lock().unwrap().push(state.move_count());
        state.legal_moves().last().copied()
    }
}

#[test]
fn human_proxy_is_consulted_on_its_turns() {
    let game = GameDescriptor::TIC_TAC_MO;
    let recorder = Arc::new(Recorder(Mutex::new(Vec::new())));
    let agents = [
        AgentSpec::human(recorder.clone()).labelled("human"),
        AgentSpec::random().labelled("a"),
        AgentSpec::random().labelled("b"),
    ];
    let result = run_match(&agents, &game, &SearchConfig::default(), 4).unwrap();
    let expected: usize = result
        .games
        .iter()
        .map(|g| {
            let seat = g.seats.iter().position(|&a| a == 0).unwrap();
            (0..g.moves.len()).filter(|&k| k % 3 == seat).count()
        })
        .sum();
    assert_eq!(recorder.0.lock().unwrap().len(), expected);
}

#[test]
fn gauntlet_reports_one_row_per_rung() {
    let game = GameDescriptor::TIC_TAC_MO;
    let config = GauntletConfig {
        subject_rollouts: 4,
        opponent_rollout_ladder: vec![2, 4, 8],
        matches_per_rung: 2,
        control: true,
    };
    let subject = config.subject(None);
    let report = run_gauntlet(&subject, &config, &game, &SearchConfig::default(), 5).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report.matches.len(), 6);
    for row in &report.rows {
        assert_eq!(row.score_difference, row.subject_total - row.opp_mean_total);
    }
    let csv = report.results_csv();
    assert_eq!(csv.lines().count(), 1 + 6 * 6);
    assert!(csv.starts_with("game,match_id,opponent_rollouts,permutation,seat0,seat1,seat2,score_seat0"));
    assert_eq!(report.summary_csv().lines().count(), 4);

    let bad = GauntletConfig {
        opponent_rollout_ladder: vec![8, 4],
        ..config
    };
    assert!(matches!(
        run_gauntlet(&subject, &bad, &game, &SearchConfig::default(), 5),
        Err(ArenaError::BadLadder)
    ));
}

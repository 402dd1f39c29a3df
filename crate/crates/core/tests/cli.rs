use std::path::Path;
use std::process::Command;

use clap::Parser;
use multizero::cli::{self, Cli, CliError, CHECKPOINT_DIR_ENV};

const TIE_SEQUENCE: [usize; 15] = [1, 0, 2, 3, 6, 5, 4, 7, 10, 8, 9, 12, 14, 11, 13];

fn run(args: &[&str], input: &str) -> (Result<(), CliError>, String) {
    let cli = Cli::try_parse_from(std::iter::once("multizero").chain(args.iter().copied())).expect("arguments parse");
    let mut reader = input.as_bytes();
    let mut out = Vec::new();
    let result = cli::run(cli, &mut reader, &mut out);
    (result, String::from_utf8(out).unwrap())
}

fn tiny_train(out: &Path, iterations: &str, seed: &str) -> String {
    let (result, text) = run(
        &[
            "train", "--game", "tictacmo", "--preset", "tiny", "--iterations", iterations, "--games", "2", "--steps",
            "2", "--rollouts", "6", "--out", out.to_str().unwrap(), "--seed", seed,
        ],
        "",
    );
    result.unwrap();
    text
}

#[test]
fn train_writes_checkpoints_logs_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let text = tiny_train(&out, "2", "1");
    assert!(text.starts_with("iteration,games,buffer_size,value_mse,policy_ce,total\n"));
    for f in ["config.json", "training_log.csv", "games.jsonl", "replay.jsonl"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    for i in 0..=2 {
        let ck = out.join("checkpoints").join(format!("iter_{i:04}"));
        for f in ["network.json", "network.bin", "optimizer.json", "optimizer.bin"] {
            assert!(ck.join(f).is_file(), "{}", ck.join(f).display());
        }
    }
    let log = std::fs::read_to_string(out.join("training_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let games = std::fs::read_to_string(out.join("games.jsonl")).unwrap();
    assert_eq!(games.lines().count(), 4);
    assert_eq!(
        cli::resolve_checkpoint(&out).unwrap(),
        out.join("checkpoints").join("iter_0002")
    );
}

#[test]
fn resume_continues_iteration_numbering() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    tiny_train(&out, "1", "2");
    let (result, text) = run(
        &[
            "train", "--game", "tictacmo", "--preset", "tiny", "--iterations", "1", "--games", "2", "--steps", "2",
            "--rollouts", "6", "--out", out.to_str().unwrap(), "--resume", out.to_str().unwrap(), "--seed", "2",
        ],
        "",
    );
    result.unwrap();
    assert!(text.contains("at iteration 1"));
    let log = std::fs::read_to_string(out.join("training_log.csv")).unwrap();
    let iterations: Vec<&str> = log.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(iterations, ["1", "2"]);
    assert!(out.join("checkpoints/iter_0002/network.json").is_file());
}

#[test]
fn missing_or_unknown_game_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let (result, _) = run(&["train", "--out", out.to_str().unwrap()], "");
    assert!(matches!(result, Err(CliError::Usage(_))));
    let (result, _) = run(&["train", "--game", "go", "--out", out.to_str().unwrap()], "");
    assert!(matches!(result, Err(CliError::Usage(_))));

    let status = Command::new(env!("CARGO_BIN_EXE_multizero"))
        .args(["train", "--out", out.to_str().unwrap()])
        .env_remove(CHECKPOINT_DIR_ENV)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&status.stderr).contains("missing game"));
}

#[test]
fn play_a_full_tie_between_three_humans() {
    let input: String = TIE_SEQUENCE.iter().map(|m| format!("{m}\n")).collect();
    let (result, text) = run(&["play", "--game", "tictacmo", "--seats", "0,1,2"], &input);
    result.unwrap();
    assert!(text.contains("tie\nscores: [0, 0, 0]"), "{text}");
}

#[test]
fn play_reprompts_on_invalid_input_and_handles_eof() {
    let (result, text) = run(&["play", "--game", "tictacmo", "--seats", "0,1,2"], "banana\n99\n4\n4\n");
    result.unwrap();
    assert!(text.contains("'banana' is not a legal move"));
    assert!(text.contains("'99' is not a legal move"));
    assert_eq!(text.matches("is not a legal move").count(), 3);
    assert!(text.ends_with("input closed; game abandoned\n"));
}

#[test]
fn play_against_agents_from_a_later_seat() {
    let (result, text) = run(
        &["play", "--game", "connect3x3", "--seats", "1", "--opponents", "random", "--seed", "4"],
        &"0\n1\n2\n3\n4\n5\n6\n".repeat(6),
    );
    result.unwrap();
    let first_agent = text.find("(seat 0, random) plays").unwrap();
    let first_prompt = text.find("(seat 1) to move").unwrap();
    assert!(first_agent < first_prompt);
    assert!(text.contains("scores: ["));
}

#[test]
fn play_with_alphazero_needs_a_checkpoint() {
    let (result, _) = run(&["play", "--game", "tictacmo"], "");
    assert!(matches!(result, Err(CliError::Failed(_))));
}

#[test]
fn gauntlet_writes_csvs_and_charts() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    tiny_train(&run_dir, "1", "3");
    let out = dir.path().join("g");
    let (result, text) = run(
        &[
            "gauntlet", "--checkpoint", run_dir.to_str().unwrap(), "--ladder", "2,4,8", "--subject-rollouts", "4",
            "--out", out.to_str().unwrap(), "--seed", "1",
        ],
        "",
    );
    result.unwrap();
    assert!(text.starts_with("opponent_rollouts,subject_total,opp_mean_total,score_difference\n"));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    let results = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 3 * 6);
    assert!(results.lines().nth(1).unwrap().starts_with("tictacmo,0,2,0-1-2,subject,mcts2_1,mcts2_2,"));
    for f in ["scores.svg", "score_difference.svg"] {
        assert!(std::fs::read_to_string(out.join(f)).unwrap().starts_with("<svg"));
    }

    let control = dir.path().join("c");
    let (result, _) = run(
        &[
            "gauntlet", "--control", "--game", "connect3x3", "--ladder", "2", "--subject-rollouts", "2", "--out",
            control.to_str().unwrap(),
        ],
        "",
    );
    result.unwrap();
    let results = std::fs::read_to_string(control.join("results.csv")).unwrap();
    assert!(results.lines().nth(1).unwrap().starts_with("connect3x3,0,2,"));

    let plots = dir.path().join("plots");
    let az = format!("AlphaZero={}", out.join("summary.csv").display());
    let mc = format!("MCTS control={}", control.join("summary.csv").display());
    let (result, text) = run(&["plot", "--summary", &az, "--summary", &mc, "--out", plots.to_str().unwrap()], "");
    result.unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(plots.join("scores_mcts_control.svg").is_file());
    assert!(plots.join("score_difference.svg").is_file());
}

#[test]
fn gauntlet_without_checkpoint_or_control_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (result, _) = run(
        &["gauntlet", "--game", "tictacmo", "--out", dir.path().to_str().unwrap()],
        "",
    );
    assert!(matches!(result, Err(CliError::Failed(_))));
    let (result, _) = run(&["gauntlet", "--control", "--ladder", "4,2", "--game", "tictacmo"], "");
    assert!(matches!(result, Err(CliError::Usage(_))));
}

#[test]
fn checkpoint_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    tiny_train(&run_dir, "1", "5");
    let out = Command::new(env!("CARGO_BIN_EXE_multizero"))
        .args(["play", "--seats", "0", "--rollouts", "4"])
        .env(CHECKPOINT_DIR_ENV, &run_dir)
        .stdin(std::process::Stdio::null())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("moves are cell numbers"));
    assert!(text.contains("input closed; game abandoned"));
}

#[test]
fn same_seed_gives_identical_training_logs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    tiny_train(&a, "2", "7");
    tiny_train(&b, "2", "7");
    tiny_train(&c, "2", "8");
    let read = |p: &Path| std::fs::read(p.join("training_log.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert_eq!(
        std::fs::read(a.join("checkpoints/iter_0002/network.bin")).unwrap(),
        std::fs::read(b.join("checkpoints/iter_0002/network.bin")).unwrap()
    );
}

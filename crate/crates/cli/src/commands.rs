//! The subcommands. Each returns an [`Output`] and performs no I/O besides
//! reading its inputs, so a run is a pure function of its [`RunConfig`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bioauth_core::adversary::{run_attack, Attack, AttackOutcome, Claim, GameConfig};
use bioauth_core::biohash::{BioHashKey, BioHasher, DistanceSample};
use bioauth_core::dolev_yao::search::DEFAULT_MAX_STATES;
use bioauth_core::dolev_yao::{
    corpus_spec, replay_concretely, search_attacks, Scenario, SearchConfig, Violation,
};
use bioauth_core::metrics::{
    build_security_matrix, cost_table, costs_to_csv, costs_to_markdown, expected_success,
    SecurityMatrix,
};
use bioauth_core::primitives::Rng;
use bioauth_core::registry::{Capture, ProtocolKey};
use rand::RngCore;
use serde::Serialize;

use crate::config::{Command, OutputFormat, RunConfig};
use crate::enrollment::{deploy, enroll, Enrollment};
use crate::error::{CliError, EXIT_OK, EXIT_UNEXPECTED};

/// What a command produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Output {
    pub stdout: String,
    pub files: Vec<(PathBuf, Vec<u8>)>,
    /// False when the result contradicts the expected security outcome.
    pub success: bool,
}

impl Output {
    pub fn exit_code(&self) -> i32 {
        if self.success {
            EXIT_OK
        } else {
            EXIT_UNEXPECTED
        }
    }

    pub fn write_files(&self) -> Result<(), CliError> {
        for (path, bytes) in &self.files {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
            }
            std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
        }
        Ok(())
    }
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("outputs serialize");
    s.push('\n');
    s
}

pub fn execute(cfg: &RunConfig, command: &Command) -> Result<Output, CliError> {
    match command {
        Command::Register { count } => cmd_register(cfg, *count),
        Command::Auth { db, tag, impostor } => cmd_auth(cfg, db, *tag, *impostor),
        Command::Attack {
            name,
            sessions,
            bogus,
        } => cmd_attack(cfg, name, *sessions, *bogus),
        Command::Tables { sessions, bogus } => cmd_tables(cfg, *sessions, *bogus),
        Command::Rates {
            epsilons,
            population,
        } => cmd_rates(cfg, epsilons, *population),
    }
}

pub fn cmd_register(cfg: &RunConfig, count: usize) -> Result<Output, CliError> {
    let path = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::usage("register needs --out <file>"))?;
    let mut rng = Rng::from_seed(cfg.seed);
    let db = enroll(cfg.protocol, &cfg.params, count, &mut rng)?;
    let summary = serde_json::json!({
        "protocol": cfg.protocol,
        "path": path.display().to_string(),
        "records": db.records.len(),
        "l": db.l,
    });
    let stdout = match cfg.format {
        OutputFormat::Json => json(&summary),
        _ => format!(
            "{} records written to {}\n",
            db.records.len(),
            path.display()
        ),
    };
    Ok(Output {
        stdout,
        files: vec![(path, db.to_text().into_bytes())],
        success: true,
    })
}

pub fn cmd_auth(
    cfg: &RunConfig,
    db_path: &Path,
    tag: usize,
    impostor: bool,
) -> Result<Output, CliError> {
    let text = std::fs::read_to_string(db_path).map_err(|e| CliError::io(db_path, e))?;
    let db = Enrollment::parse(&text)?;
    if tag >= db.records.len() {
        return Err(CliError::usage(format!(
            "tag index {tag} out of range; the database holds {} tags",
            db.records.len()
        )));
    }
    let mut rng = Rng::from_seed(cfg.seed);
    let mut d = deploy(cfg.protocol, &cfg.params, &db, &mut rng)?;
    let sensor = if impostor {
        Capture::Impostor {
            subject_seed: rng.substream("impostor").next_u64(),
            noise_sigma: cfg.noise_sigma,
        }
    } else {
        Capture::Genuine {
            noise_sigma: cfg.noise_sigma,
        }
    };
    let mut ch = bioauth_core::channel::Channel::new(cfg.protocol.name(), cfg.seed);
    let outcome = d.run_session(Some(tag), &sensor, &mut ch, &mut rng)?;
    let accepted = d.session_complete(&outcome);
    let report = serde_json::json!({
        "protocol": cfg.protocol,
        "tag": tag,
        "impostor": impostor,
        "accepted": accepted,
        "outcome": outcome,
    });
    let stdout = match cfg.format {
        OutputFormat::Json => json(&report),
        _ => format!(
            "{} session on tag {tag}: {}\n",
            cfg.protocol,
            if accepted { "accepted" } else { "rejected" }
        ),
    };
    let files = cfg
        .out
        .clone()
        .map(|p| vec![(p, json(&report).into_bytes())])
        .unwrap_or_default();
    Ok(Output {
        stdout,
        files,
        success: accepted,
    })
}

pub fn cmd_attack(
    cfg: &RunConfig,
    name: &str,
    sessions: usize,
    bogus: usize,
) -> Result<Output, CliError> {
    let attack = Attack::parse(name).ok_or_else(|| {
        let known: Vec<&str> = Attack::ALL.iter().map(|a| a.name()).collect();
        CliError::usage(format!(
            "unknown attack `{name}`; expected one of {}",
            known.join(", ")
        ))
    })?;
    if !cfg.protocol.is_executable() {
        return Err(CliError::usage(format!(
            "{} is reference data only",
            cfg.protocol
        )));
    }
    let mut rng = Rng::from_seed(cfg.seed);
    let (record, transcript, expected) = if attack == Attack::DySearch {
        dy_search(cfg, sessions, &mut rng)?
    } else {
        let games = GameConfig {
            trials: cfg.trials,
            bogus_sessions: bogus,
        };
        let outcome = run_attack(attack, cfg.protocol, &cfg.params, games, &mut rng)?;
        let expected = expected_success(attack, cfg.protocol).expect("executable protocol");
        let as_expected = outcome.succeeded == expected;
        let record = annotate(&outcome, cfg.out.is_some(), expected);
        (record, Some(outcome.trace.to_jsonl()), as_expected)
    };
    let stdout = match cfg.format {
        OutputFormat::Json => json(&record),
        _ => format!(
            "{} against {}: {} ({})\n",
            attack,
            cfg.protocol,
            if record["succeeded"] == true {
                "succeeded"
            } else {
                "failed"
            },
            if expected { "expected" } else { "UNEXPECTED" }
        ),
    };
    let mut files = Vec::new();
    if let Some(dir) = &cfg.out {
        files.push((dir.join("outcome.json"), json(&record).into_bytes()));
        if let Some(t) = transcript {
            files.push((dir.join("trace.jsonl"), t.into_bytes()));
        }
    }
    Ok(Output {
        stdout,
        files,
        success: expected,
    })
}

fn annotate(outcome: &AttackOutcome, with_trace: bool, expected: bool) -> serde_json::Value {
    let mut v = outcome.to_json(with_trace.then_some("trace.jsonl"));
    v["expected_success"] = expected.into();
    v
}

/// Symbolic search plus concrete replay of whatever it finds. Only the
/// proposed protocol is expected to come out clean.
fn dy_search(
    cfg: &RunConfig,
    sessions: usize,
    rng: &mut Rng,
) -> Result<(serde_json::Value, Option<String>, bool), CliError> {
    let spec = corpus_spec(cfg.protocol.name())
        .map_err(|_| CliError::usage(format!("no symbolic model for {}", cfg.protocol)))?;
    let scenario =
        Scenario::for_sessions(&spec, sessions).map_err(|e| CliError::usage(e.to_string()))?;
    let result = search_attacks(
        &spec,
        &scenario,
        SearchConfig {
            depth: cfg.depth,
            max_states: DEFAULT_MAX_STATES,
        },
    )?;
    let cross = match &result.trace {
        Some(t) => Some(replay_concretely(&spec, &scenario, t, &cfg.params, rng)?),
        None => None,
    };
    let claim = result.trace.as_ref().map(|t| match &t.violation {
        Violation::Secrecy { .. } => Claim::LearnedSecret,
        Violation::Agreement { role, .. } if *role == spec.roles[1] => Claim::ImpersonatedTag,
        Violation::Agreement { .. } => Claim::ImpersonatedReader,
    });
    let succeeded = result.trace.is_some();
    let expect_attack = cfg.protocol != ProtocolKey::Proposed;
    let as_expected = if expect_attack {
        succeeded && cross.as_ref().is_some_and(|c| c.reproduced)
    } else {
        !succeeded && !result.incomplete
    };
    let transcript = cross.as_ref().map(|c| c.transcript.to_jsonl());
    let record = serde_json::json!({
        "protocol": cfg.protocol,
        "attack": Attack::DySearch,
        "succeeded": succeeded,
        "claim": claim,
        "seed": cfg.seed,
        "trace_ref": (cfg.out.is_some() && transcript.is_some()).then_some("trace.jsonl"),
        "detail": { "search": result, "cross_check": cross },
        "expected_success": expect_attack,
    });
    Ok((record, transcript, as_expected))
}

pub fn cmd_tables(cfg: &RunConfig, sessions: usize, bogus: usize) -> Result<Output, CliError> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("tables"));
    let mut rng = Rng::from_seed(cfg.seed);
    let games = GameConfig {
        trials: cfg.trials,
        bogus_sessions: bogus,
    };
    let matrix = build_security_matrix(&cfg.params, games, &mut rng)?;
    let costs = cost_table(&cfg.params, sessions, &mut rng)?;
    let mut files = vec![
        (dir.join("table1.csv"), matrix.to_csv().into_bytes()),
        (dir.join("table1.md"), matrix.to_markdown().into_bytes()),
        (dir.join("table2.csv"), costs_to_csv(&costs).into_bytes()),
        (
            dir.join("table2.md"),
            costs_to_markdown(&costs).into_bytes(),
        ),
    ];
    if cfg.format == OutputFormat::Json {
        files.push((dir.join("table1.json"), json(&matrix).into_bytes()));
        files.push((dir.join("table2.json"), json(&costs).into_bytes()));
    }
    let disagreements = matrix.disagreements();
    let stdout = match cfg.format {
        OutputFormat::Json => json(&serde_json::json!({
            "directory": dir.display().to_string(),
            "files": files.iter().map(|(p, _)| p.display().to_string()).collect::<Vec<_>>(),
            "disagreements": disagreements,
        })),
        OutputFormat::Csv => format!("{}\n{}", matrix.to_csv(), costs_to_csv(&costs)),
        OutputFormat::Text => text_tables(&matrix, &costs_to_markdown(&costs)),
    };
    Ok(Output {
        stdout,
        files,
        success: disagreements.is_empty(),
    })
}

fn text_tables(matrix: &SecurityMatrix, costs: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{}", matrix.to_markdown());
    s.push_str(costs);
    s
}

#[derive(Debug, Serialize)]
struct RateRow {
    epsilon: usize,
    far: f64,
    frr: f64,
}

pub fn cmd_rates(
    cfg: &RunConfig,
    epsilons: &[usize],
    population: usize,
) -> Result<Output, CliError> {
    let rng = Rng::from_seed(cfg.seed);
    let hasher = BioHasher::new(BioHashKey::from_params(&cfg.params), &cfg.params);
    let sample = DistanceSample::collect(population, cfg.noise_sigma, &hasher, &cfg.params, &rng)?;
    let rows: Vec<RateRow> = epsilons
        .iter()
        .map(|&epsilon| {
            let r = sample.rates(epsilon);
            RateRow {
                epsilon,
                far: r.far,
                frr: r.frr,
            }
        })
        .collect();
    let mut csv = String::from("epsilon,far,frr\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{}", r.epsilon, r.far, r.frr);
    }
    let stdout = match cfg.format {
        OutputFormat::Json => json(&rows),
        _ => csv.clone(),
    };
    let files = cfg
        .out
        .clone()
        .map(|p| vec![(p, csv.into_bytes())])
        .unwrap_or_default();
    Ok(Output {
        stdout,
        files,
        success: true,
    })
}

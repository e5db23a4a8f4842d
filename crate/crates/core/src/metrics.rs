//! Cost accounting and the two comparison tables.

use std::fmt::Write as _;

use rand::RngCore;
use serde::Serialize;

use crate::adversary::{
    algebraic_replay, desync_test, dos_flood_test, replay_attack, trace_game, Attack, GameConfig,
    HONEST_CAPTURE, TRACE_ADVANTAGE_BOUND,
};
use crate::channel::{Channel, Direction, StepLabel};
use crate::error::{Error, Result};
use crate::primitives::{Rng, SystemParams};
use crate::registry::{deployment, ProtocolKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Measured,
    Executed,
    /// Published reference data, never executed here.
    #[serde(rename = "paper")]
    Reference,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Measured => "measured",
            Source::Executed => "executed",
            Source::Reference => "paper",
        }
    }
}

/// Raw bit counts behind a measured cost row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BitCounts {
    pub reader_to_tag: usize,
    pub tag_to_reader: usize,
    /// The reader's opening challenge, left out of `reader_to_tag`.
    pub challenge: usize,
}

/// One row of the performance table. Lengths are in units of `l`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub protocol: String,
    /// Tag-side operations per session, counted in `op_unit`.
    pub tag_ops: u32,
    /// `h` for hash evaluations, `g` for a pseudo-random generator call.
    pub op_unit: char,
    pub storage: f64,
    /// `None` when the reader sends nothing besides its challenge.
    pub reader_to_tag: Option<f64>,
    pub tag_to_reader: f64,
    pub total: f64,
    pub source: Source,
    pub bits: Option<BitCounts>,
}

const fn reference_row(
    protocol: &'static str,
    ops: u32,
    unit: char,
    storage: f64,
    r2t: Option<f64>,
    t2r: f64,
    total: f64,
) -> ReferenceCost {
    ReferenceCost {
        protocol,
        ops,
        unit,
        storage,
        r2t,
        t2r,
        total,
    }
}

struct ReferenceCost {
    protocol: &'static str,
    ops: u32,
    unit: char,
    storage: f64,
    r2t: Option<f64>,
    t2r: f64,
    total: f64,
}

const REFERENCE_COSTS: [ReferenceCost; 8] = [
    reference_row("ch", 1, 'g', 2.0, Some(0.5), 1.5, 2.0),
    reference_row("rhls", 1, 'h', 1.0, None, 2.0, 2.0),
    reference_row("lcap", 2, 'h', 1.0, Some(1.0), 2.0, 3.0),
    reference_row("lhyc", 4, 'h', 2.0, Some(1.0), 2.0, 3.0),
    reference_row("khan_card", 4, 'h', 3.0, Some(2.0), 3.0, 5.0),
    reference_row("li_hwang_card", 4, 'h', 3.0, Some(2.0), 3.0, 5.0),
    reference_row("lai_card", 3, 'h', 4.0, Some(2.0), 3.0, 5.0),
    reference_row("proposed", 2, 'h', 2.0, Some(0.5), 2.5, 3.0),
];

/// Published cost rows, in table order.
pub fn reference_costs() -> Vec<CostReport> {
    REFERENCE_COSTS
        .iter()
        .map(|p| CostReport {
            protocol: p.protocol.to_string(),
            tag_ops: p.ops,
            op_unit: p.unit,
            storage: p.storage,
            reader_to_tag: p.r2t,
            tag_to_reader: p.t2r,
            total: p.total,
            source: Source::Reference,
            bits: None,
        })
        .collect()
}

/// Runs `sessions` honest sessions on tag 0 and reads the counters.
///
/// The reader's challenge is excluded from the reader-to-tag length and
/// reported separately in `bits.challenge`.
pub fn measure_costs(
    key: ProtocolKey,
    sessions: usize,
    params: &SystemParams,
    rng: &mut Rng,
) -> Result<CostReport> {
    if !key.is_executable() {
        return Err(Error::NotExecutable(key.name().to_string()));
    }
    if sessions == 0 {
        return Err(Error::Precondition("need at least one session".into()));
    }
    let mut d = deployment(key, params)?;
    for _ in 0..params.n {
        let subject = rng.next_u64();
        d.register(subject, rng)?;
    }
    let mut ch = Channel::new(key.name(), params.rng_seed);
    let mut per_session: Option<(u64, BitCounts)> = None;
    for _ in 0..sessions {
        d.reset_counters();
        d.run_session(Some(0), &HONEST_CAPTURE, &mut ch, rng)?;
        let s = ch.session();
        let mut bits = BitCounts {
            reader_to_tag: 0,
            tag_to_reader: 0,
            challenge: 0,
        };
        for e in ch.observe().session(s) {
            match (e.direction, e.step) {
                (Direction::ReaderToTag, StepLabel::Challenge) => bits.challenge += e.bit_width(),
                (Direction::ReaderToTag, _) => bits.reader_to_tag += e.bit_width(),
                (Direction::TagToReader, _) => bits.tag_to_reader += e.bit_width(),
            }
        }
        let this = (d.tag_hash_count(0), bits);
        match per_session {
            None => per_session = Some(this),
            Some(prev) if prev != this => {
                return Err(Error::Precondition(format!(
                    "{} costs vary between sessions: {prev:?} then {this:?}",
                    key.name()
                )))
            }
            Some(_) => {}
        }
    }
    let (hashes, bits) = per_session.expect("at least one session");
    let l = params.l as f64;
    let r2t = bits.reader_to_tag as f64 / l;
    let t2r = bits.tag_to_reader as f64 / l;
    Ok(CostReport {
        protocol: key.name().to_string(),
        tag_ops: hashes as u32,
        op_unit: 'h',
        storage: d.tag_storage_bits() as f64 / l,
        reader_to_tag: (bits.reader_to_tag > 0).then_some(r2t),
        tag_to_reader: t2r,
        total: r2t + t2r,
        source: Source::Measured,
        bits: Some(bits),
    })
}

// ---------------------------------------------------------------------------
// Security matrix

pub const PROPERTIES: [&str; 5] = [
    "mutual_auth",
    "replay_prevention",
    "nontraceability",
    "dos_prevention",
    "desync_resistance",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub holds: bool,
    pub source: Source,
    /// Outcome of the game when it was run, even if the cell itself is
    /// taken from the published table.
    pub game: Option<bool>,
}

impl Cell {
    pub fn symbol(&self) -> char {
        if self.holds {
            '+'
        } else {
            '-'
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixRow {
    pub protocol: ProtocolKey,
    /// In [`PROPERTIES`] order.
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecurityMatrix {
    pub rows: Vec<MatrixRow>,
}

/// Published security analysis, in [`PROPERTIES`] order.
pub const REFERENCE_MATRIX: [(ProtocolKey, [bool; 5]); 5] = [
    (ProtocolKey::Rhls, [true, false, false, false, true]),
    (ProtocolKey::Lcap, [true, true, true, false, true]),
    (ProtocolKey::Ch, [true, false, true, true, true]),
    (ProtocolKey::Lhyc, [true, true, true, true, true]),
    (ProtocolKey::Proposed, [true, true, true, true, true]),
];

/// Cells the generic games cannot decide; the published value is used and
/// the game outcome is kept alongside.
const REFERENCE_OVERRIDES: [(ProtocolKey, usize); 2] = [(ProtocolKey::Rhls, 2), (ProtocolKey::Rhls, 3)];

/// Honest sessions behind the mutual-authentication cell.
pub const COMPLETENESS_SESSIONS: usize = 100;

pub fn reference_matrix_row(key: ProtocolKey) -> Option<[bool; 5]> {
    REFERENCE_MATRIX
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
}

/// Game outcomes for one executable protocol, in [`PROPERTIES`] order.
pub fn executed_properties(
    key: ProtocolKey,
    params: &SystemParams,
    cfg: GameConfig,
    rng: &Rng,
) -> Result<[bool; 5]> {
    let mut r = rng.substream(&format!("matrix-{}", key.name()));
    let mut d = deployment(key, params)?;
    for _ in 0..params.n {
        let subject = r.next_u64();
        d.register(subject, &mut r)?;
    }
    let mut ch = Channel::new(key.name(), params.rng_seed);
    let mut complete = true;
    for i in 0..COMPLETENESS_SESSIONS {
        let out = d.run_session(Some(i % params.n), &HONEST_CAPTURE, &mut ch, &mut r)?;
        complete &= d.session_complete(&out);
    }
    let replayed = replay_attack(key, params, &mut r.substream("replay"))?.succeeded
        || algebraic_replay(key, params, &mut r.substream("algebraic"))?.succeeded;
    let trace = trace_game(key, cfg.trials, params, &mut r.substream("trace"))?;
    let dos = dos_flood_test(key, cfg.bogus_sessions, params, &mut r.substream("dos"))?;
    let points = d.interruption_points();
    let desync = desync_test(key, &points, params, &mut r.substream("desync"))?;
    Ok([
        complete,
        !replayed,
        trace.advantage <= TRACE_ADVANTAGE_BOUND,
        dos.passed,
        desync.passed,
    ])
}

/// Executes every game for the runnable protocols and fills the rest of the
/// table from the published analysis.
pub fn build_security_matrix(
    params: &SystemParams,
    cfg: GameConfig,
    rng: &mut Rng,
) -> Result<SecurityMatrix> {
    let base = rng.substream("security-matrix");
    let order = [
        ProtocolKey::Rhls,
        ProtocolKey::Lcap,
        ProtocolKey::Ch,
        ProtocolKey::Lhyc,
        ProtocolKey::Proposed,
        ProtocolKey::ClearId,
    ];
    let mut rows = Vec::new();
    for key in order {
        let cells = if key.is_executable() {
            let game = executed_properties(key, params, cfg, &base)?;
            let reference = reference_matrix_row(key);
            (0..PROPERTIES.len())
                .map(|i| match reference {
                    Some(p) if REFERENCE_OVERRIDES.contains(&(key, i)) => Cell {
                        holds: p[i],
                        source: Source::Reference,
                        game: Some(game[i]),
                    },
                    _ => Cell {
                        holds: game[i],
                        source: Source::Executed,
                        game: Some(game[i]),
                    },
                })
                .collect()
        } else {
            let p = reference_matrix_row(key).expect("reference rows are published");
            p.iter()
                .map(|&holds| Cell {
                    holds,
                    source: Source::Reference,
                    game: None,
                })
                .collect()
        };
        rows.push(MatrixRow {
            protocol: key,
            cells,
        });
    }
    Ok(SecurityMatrix { rows })
}

impl SecurityMatrix {
    pub fn row(&self, key: ProtocolKey) -> Option<&MatrixRow> {
        self.rows.iter().find(|r| r.protocol == key)
    }

    /// Executed cells that differ from the published table.
    pub fn disagreements(&self) -> Vec<(ProtocolKey, &'static str)> {
        let mut out = Vec::new();
        for row in &self.rows {
            if let Some(p) = reference_matrix_row(row.protocol) {
                for (i, c) in row.cells.iter().enumerate() {
                    if c.source == Source::Executed && c.holds != p[i] {
                        out.push((row.protocol, PROPERTIES[i]));
                    }
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("protocol");
        for p in PROPERTIES {
            let _ = write!(s, ",{p},{p}_source");
        }
        s.push('\n');
        for row in &self.rows {
            s.push_str(row.protocol.name());
            for c in &row.cells {
                let _ = write!(s, ",{},{}", c.symbol(), c.source.name());
            }
            s.push('\n');
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Property |");
        for row in &self.rows {
            let _ = write!(s, " {} |", row.protocol.name());
        }
        s.push_str("\n|---|");
        for _ in &self.rows {
            s.push_str("---|");
        }
        s.push('\n');
        for (i, p) in PROPERTIES.iter().enumerate() {
            let _ = write!(s, "| {p} |");
            for row in &self.rows {
                let c = &row.cells[i];
                let _ = write!(s, " {} ({}) |", c.symbol(), c.source.name());
            }
            s.push('\n');
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Cost table rendering

/// Plain decimal: `3`, `0.5`, `2.5`.
pub fn fmt_units(x: f64) -> String {
    format!("{x}")
}

/// Table notation: `½l`, `2½l`, `3l`.
fn fmt_l(x: f64) -> String {
    let whole = x.trunc();
    let half = (x - whole - 0.5).abs() < 1e-9;
    match (whole as u64, half) {
        (0, true) => "½l".into(),
        (w, true) => format!("{w}½l"),
        (w, false) if (x - whole).abs() < 1e-9 => format!("{w}l"),
        _ => format!("{x}l"),
    }
}

pub const COST_CSV_HEADER: &str =
    "protocol,tag_ops,storage_l,reader_to_tag_l,tag_to_reader_l,total_l,op_unit,source,reader_to_tag_bits,tag_to_reader_bits,challenge_bits";

impl CostReport {
    pub fn csv_row(&self) -> String {
        let r2t = self.reader_to_tag.map_or("-".into(), fmt_units);
        let bits = self.bits.map_or(",,".into(), |b| {
            format!("{},{},{}", b.reader_to_tag, b.tag_to_reader, b.challenge)
        });
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.protocol,
            self.tag_ops,
            fmt_units(self.storage),
            r2t,
            fmt_units(self.tag_to_reader),
            fmt_units(self.total),
            self.op_unit,
            self.source.name(),
            bits
        )
    }
}

pub fn costs_to_csv(rows: &[CostReport]) -> String {
    let mut s = format!("{COST_CSV_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn costs_to_markdown(rows: &[CostReport]) -> String {
    let mut s = String::from("| Protocol | Tag computation | Storage | R->T | T->R | Total | Source |\n|---|---|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {}{} | {} | {} | {} | {} | {} |",
            r.protocol,
            r.tag_ops,
            r.op_unit,
            fmt_l(r.storage),
            r.reader_to_tag.map_or("-".into(), fmt_l),
            fmt_l(r.tag_to_reader),
            fmt_l(r.total),
            r.source.name()
        );
    }
    s
}

/// Measured rows for every executable protocol followed by the published
/// rows.
pub fn cost_table(
    params: &SystemParams,
    sessions: usize,
    rng: &mut Rng,
) -> Result<Vec<CostReport>> {
    let mut rows = Vec::new();
    for key in ProtocolKey::EXECUTABLE {
        let mut r = rng.substream(&format!("costs-{}", key.name()));
        rows.push(measure_costs(key, sessions, params, &mut r)?);
    }
    rows.extend(reference_costs());
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Attack expectations

/// Whether `attack` is expected to succeed against `key` in this model.
/// Only the proposed protocol is expected to resist everything; `None` for
/// the symbolic search and reference-only protocols.
pub fn expected_success(attack: Attack, key: ProtocolKey) -> Option<bool> {
    use ProtocolKey::*;
    if !key.is_executable() {
        return None;
    }
    match attack {
        Attack::Replay => Some(matches!(key, Rhls | ClearId)),
        Attack::ChAlgebraic | Attack::Mitm => Some(key != Proposed),
        Attack::Trace => Some(key == ClearId),
        Attack::Desync | Attack::Dos => Some(false),
        Attack::DySearch => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SystemParams {
        SystemParams::default()
    }

    #[test]
    fn proposed_costs_match_the_published_row() {
        let r = measure_costs(ProtocolKey::Proposed, 5, &params(), &mut Rng::from_seed(3)).unwrap();
        assert_eq!(r.tag_ops, 2);
        assert_eq!(r.storage, 2.0);
        assert_eq!(r.reader_to_tag, Some(0.5));
        assert_eq!(r.tag_to_reader, 2.5);
        assert_eq!(r.total, 3.0);
        let b = r.bits.unwrap();
        assert_eq!(b.tag_to_reader, 320);
        assert_eq!(b.reader_to_tag, 64);
        assert_eq!(b.challenge, 128);
        let reference = reference_costs()
            .into_iter()
            .find(|p| p.protocol == "proposed")
            .unwrap();
        assert_eq!(
            r.csv_row().split(',').take(6).collect::<Vec<_>>(),
            reference.csv_row().split(',').take(6).collect::<Vec<_>>()
        );
    }

    #[test]
    fn baseline_costs() {
        let rhls = measure_costs(ProtocolKey::Rhls, 3, &params(), &mut Rng::from_seed(4)).unwrap();
        assert_eq!(
            (
                rhls.tag_ops,
                rhls.storage,
                rhls.reader_to_tag,
                rhls.tag_to_reader
            ),
            (1, 1.0, None, 2.0)
        );
        let ch = measure_costs(ProtocolKey::Ch, 3, &params(), &mut Rng::from_seed(4)).unwrap();
        assert_eq!(
            (ch.reader_to_tag, ch.tag_to_reader, ch.total),
            (Some(0.5), 1.5, 2.0)
        );
    }

    #[test]
    fn counts_do_not_depend_on_seed() {
        let a = measure_costs(ProtocolKey::Proposed, 2, &params(), &mut Rng::from_seed(1)).unwrap();
        for seed in 2..6 {
            assert_eq!(
                a,
                measure_costs(
                    ProtocolKey::Proposed,
                    2,
                    &params(),
                    &mut Rng::from_seed(seed)
                )
                .unwrap()
            );
        }
    }

    #[test]
    fn reference_protocols_are_not_measured() {
        assert!(matches!(
            measure_costs(ProtocolKey::Lhyc, 1, &params(), &mut Rng::from_seed(0)),
            Err(Error::NotExecutable(_))
        ));
    }

    #[test]
    fn totals_add_up() {
        for r in reference_costs() {
            assert_eq!(
                r.total,
                r.reader_to_tag.unwrap_or(0.0) + r.tag_to_reader,
                "{}",
                r.protocol
            );
        }
    }

    #[test]
    fn unit_formatting() {
        assert_eq!(fmt_units(0.5), "0.5");
        assert_eq!(fmt_units(3.0), "3");
        assert_eq!(fmt_l(0.5), "½l");
        assert_eq!(fmt_l(2.5), "2½l");
        assert_eq!(fmt_l(3.0), "3l");
    }

    #[test]
    fn matrix_cells() {
        let cfg = GameConfig {
            bogus_sessions: 50,
            ..GameConfig::default()
        };
        let m = build_security_matrix(&params(), cfg, &mut Rng::from_seed(0)).unwrap();
        let proposed = m.row(ProtocolKey::Proposed).unwrap();
        assert!(
            proposed
                .cells
                .iter()
                .all(|c| c.holds && c.source == Source::Executed),
            "{proposed:?}"
        );
        let rhls = m.row(ProtocolKey::Rhls).unwrap();
        assert!(!rhls.cells[1].holds && rhls.cells[1].source == Source::Executed);
        assert_eq!(
            m.row(ProtocolKey::Lhyc).unwrap().cells[0].source,
            Source::Reference
        );
        let csv = m.to_csv();
        assert_eq!(csv.lines().count(), 7);
        assert!(csv
            .lines()
            .nth(5)
            .unwrap()
            .starts_with("proposed,+,executed"));
    }
}

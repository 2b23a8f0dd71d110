//! Per-iteration trace with a stable CSV/JSON schema.
//!
//! Serialized columns are fixed as
//! `k,phase,f,residual,step_len,descent_ok,residual_ineq_ok`; the JSON form
//! mirrors the same fields. The in-memory rows additionally carry the iterate
//! and the raw KKT residual norm for test oracles; those are not serialized.

use nalgebra::DVector;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Gpa,
    Newton,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Gpa => write!(f, "gpa"),
            Phase::Newton => write!(f, "newton"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub k: usize,
    pub phase: Phase,
    pub f: f64,
    /// Stationarity residual ||P_{T_x} f'(x)||; in the Newton phase this is
    /// evaluated at the reprojection of the (possibly infeasible) iterate.
    pub residual: f64,
    pub step_len: f64,
    /// Whether the Theorem-1 descent inequality held for the step that
    /// produced this iterate (GPA phase only, absent for the start row).
    pub descent_ok: Option<bool>,
    /// Whether ||P_T f'|| <= (1/gamma + L1)||dx|| held (GPA phase only).
    pub residual_ineq_ok: Option<bool>,
    /// Iterate (x part). Not serialized.
    #[serde(skip)]
    pub x: DVector<f64>,
    /// Raw ||F(z_k)|| in the Newton phase. Not serialized.
    #[serde(skip)]
    pub kkt_norm: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct IterationTrace {
    pub rows: Vec<TraceRow>,
}

impl IterationTrace {
    pub fn new() -> Self {
        Self { rows: Vec::new() }
    }

    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Rows belonging to one phase.
    pub fn phase_rows(&self, phase: Phase) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(move |r| r.phase == phase)
    }

    /// Append another trace, renumbering `k` to continue after this one.
    /// When `skip_first` is set the other trace's start row (a duplicate of
    /// the current last iterate) is dropped.
    pub fn extend_renumbered(&mut self, other: IterationTrace, skip_first: bool) {
        let mut next_k = self.rows.last().map(|r| r.k + 1).unwrap_or(0);
        for (i, mut row) in other.rows.into_iter().enumerate() {
            if skip_first && i == 0 {
                continue;
            }
            row.k = next_k;
            next_k += 1;
            self.rows.push(row);
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,phase,f,residual,step_len,descent_ok,residual_ineq_ok\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.k,
                r.phase,
                r.f,
                r.residual,
                r.step_len,
                opt_bool(r.descent_ok),
                opt_bool(r.residual_ineq_ok),
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rows).expect("trace rows serialize")
    }
}

fn opt_bool(b: Option<bool>) -> &'static str {
    match b {
        Some(true) => "true",
        Some(false) => "false",
        None => "",
    }
}

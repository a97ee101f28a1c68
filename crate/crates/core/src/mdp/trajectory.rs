use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::StateVec;

/// One transition `(S_t, A_t, R_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based step index.
    pub t: usize,
    pub state: StateVec,
    pub action: usize,
    pub reward: f64,
}

/// A sample path `S_1, A_1, R_1, ..., S_T, A_T, R_T, S_{T+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    num_actions: usize,
    steps: Vec<StepRecord>,
    terminal_state: StateVec,
}

impl Trajectory {
    pub fn new(dim: usize, num_actions: usize, steps: Vec<StepRecord>, terminal_state: StateVec) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::invalid("trajectory needs at least one step"));
        }
        if num_actions == 0 {
            return Err(Error::invalid("trajectory needs at least one action"));
        }
        for (i, step) in steps.iter().enumerate() {
            if step.t != i + 1 {
                return Err(Error::invalid(format!("step {} has index {}, expected {}", i, step.t, i + 1)));
            }
            step.state.check_dim(dim)?;
            if step.action >= num_actions {
                return Err(Error::invalid(format!(
                    "step {} uses action {} but only {num_actions} exist",
                    step.t, step.action
                )));
            }
            if !step.reward.is_finite() {
                return Err(Error::invalid(format!("step {} has non-finite reward", step.t)));
            }
        }
        terminal_state.check_dim(dim)?;
        Ok(Trajectory { dim, num_actions, steps, terminal_state })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Number of steps `T`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn step(&self, t: usize) -> &StepRecord {
        &self.steps[t - 1]
    }

    pub fn terminal_state(&self) -> &StateVec {
        &self.terminal_state
    }

    /// `S_t` for `t` in `1..=T+1`.
    pub fn state(&self, t: usize) -> &StateVec {
        if t == self.steps.len() + 1 {
            &self.terminal_state
        } else {
            &self.steps[t - 1].state
        }
    }

    /// `S_{t+1}`.
    pub fn next_state(&self, t: usize) -> &StateVec {
        self.state(t + 1)
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.reward)
    }

    /// Writes `t,s0,...,s{d-1},a,r` rows and a final `T+1` row holding the
    /// terminal state with empty action and reward.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(csv_header(self.dim))?;
        for step in &self.steps {
            let mut row = Vec::with_capacity(self.dim + 3);
            row.push(step.t.to_string());
            row.extend(step.state.iter().map(f64::to_string));
            row.push(step.action.to_string());
            row.push(step.reward.to_string());
            out.write_record(&row)?;
        }
        let mut last = Vec::with_capacity(self.dim + 3);
        last.push((self.steps.len() + 1).to_string());
        last.extend(self.terminal_state.iter().map(f64::to_string));
        last.push(String::new());
        last.push(String::new());
        out.write_record(&last)?;
        out.flush()?;
        Ok(())
    }

    /// Reads the CSV produced by [`Trajectory::write_csv`].
    ///
    /// The number of actions is `num_actions` when given, otherwise one more
    /// than the largest action id in the file.
    pub fn read_csv<R: Read>(r: R, num_actions: Option<usize>) -> Result<Self> {
        let mut stream = StepStream::new(r)?;
        let dim = stream.dim();
        let mut steps = Vec::new();
        let mut terminal = None;
        while let Some((step, next)) = stream.next_transition()? {
            steps.push(step);
            terminal = Some(next);
        }
        let terminal = terminal.ok_or_else(|| Error::invalid("trajectory file has no steps"))?;
        let inferred = steps.iter().map(|s| s.action + 1).max().unwrap_or(1);
        let num_actions = num_actions.unwrap_or(inferred);
        Trajectory::new(dim, num_actions, steps, terminal)
    }
}

fn csv_header(dim: usize) -> Vec<String> {
    let mut header = vec!["t".to_string()];
    header.extend((0..dim).map(|i| format!("s{i}")));
    header.push("a".into());
    header.push("r".into());
    header
}

/// Incremental reader over a trajectory CSV yielding `(step, S_{t+1})` pairs
/// with one row of lookahead.
pub struct StepStream<R: Read> {
    rows: csv::StringRecordsIntoIter<R>,
    dim: usize,
    pending: Option<Row>,
    finished: bool,
}

struct Row {
    t: usize,
    state: StateVec,
    action: Option<usize>,
    reward: Option<f64>,
}

impl<R: Read> StepStream<R> {
    pub fn new(r: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = reader.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        let dim = cols.len().saturating_sub(3);
        if dim == 0 || cols != csv_header(dim).iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::invalid(format!("unexpected trajectory header {cols:?}")));
        }
        Ok(StepStream { rows: reader.into_records(), dim, pending: None, finished: false })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn read_row(&mut self) -> Result<Option<Row>> {
        let Some(rec) = self.rows.next() else {
            return Ok(None);
        };
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let t: usize = field(0).parse().map_err(|_| Error::invalid(format!("bad step index {:?}", field(0))))?;
        let coords = (1..=self.dim)
            .map(|i| {
                field(i).parse::<f64>().map_err(|_| Error::invalid(format!("bad coordinate {:?} at t={t}", field(i))))
            })
            .collect::<Result<Vec<_>>>()?;
        let a = field(self.dim + 1);
        let r = field(self.dim + 2);
        let action = if a.is_empty() {
            None
        } else {
            Some(a.parse().map_err(|_| Error::invalid(format!("bad action {a:?} at t={t}")))?)
        };
        let reward = if r.is_empty() {
            None
        } else {
            Some(r.parse().map_err(|_| Error::invalid(format!("bad reward {r:?} at t={t}")))?)
        };
        Ok(Some(Row { t, state: StateVec::new(coords)?, action, reward }))
    }

    /// Next `(S_t, A_t, R_t)` together with `S_{t+1}`, or `None` after the
    /// terminal row.
    pub fn next_transition(&mut self) -> Result<Option<(StepRecord, StateVec)>> {
        if self.finished {
            return Ok(None);
        }
        let current = match self.pending.take() {
            Some(row) => row,
            None => match self.read_row()? {
                Some(row) => row,
                None => return Err(Error::invalid("empty trajectory file")),
            },
        };
        let (Some(action), Some(reward)) = (current.action, current.reward) else {
            // the terminal row: nothing follows it
            if self.read_row()?.is_some() {
                return Err(Error::invalid(format!("rows after terminal row t={}", current.t)));
            }
            self.finished = true;
            return Ok(None);
        };
        let next =
            self.read_row()?.ok_or_else(|| Error::invalid(format!("missing terminal row after t={}", current.t)))?;
        if next.t != current.t + 1 {
            return Err(Error::invalid(format!("step {} followed by step {}", current.t, next.t)));
        }
        let next_state = next.state.clone();
        self.pending = Some(next);
        Ok(Some((StepRecord { t: current.t, state: current.state, action, reward }, next_state)))
    }
}

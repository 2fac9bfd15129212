//! CSV and report emission.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;

use crate::error::Result;
use crate::geometry::{restricted_energy, wrapped_configuration, AdmissibleState, SystemModel};
use crate::pmp::{fourth_order_derivative, running_cost, NewtonRecord, PmpTrajectory, TrackingProblem};
use crate::varint::{DiagnosticRow, DiscreteTrajectory};

/// Formats numbers with a fixed number of significant digits in scientific notation.
#[derive(Clone, Copy, Debug)]
pub struct NumberFormat {
    pub digits: usize,
}

impl NumberFormat {
    pub fn new(digits: usize) -> Self {
        Self { digits: digits.clamp(1, 17) }
    }

    pub fn fmt(&self, x: f64) -> String {
        format!("{:.*e}", self.digits - 1, x)
    }
}

/// A CSV table built in memory.
#[derive(Clone, Debug)]
pub struct Csv {
    header: Vec<String>,
    body: String,
    format: NumberFormat,
}

impl Csv {
    pub fn new(header: Vec<String>, format: NumberFormat) -> Self {
        Self {
            header,
            body: String::new(),
            format,
        }
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    /// Appends a row; `None` cells are left empty.
    pub fn row(&mut self, cells: impl IntoIterator<Item = Option<f64>>) {
        let line: Vec<String> = cells.into_iter().map(|c| c.map(|x| self.format.fmt(x)).unwrap_or_default()).collect();
        debug_assert_eq!(line.len(), self.header.len());
        self.body.push_str(&line.join(","));
        self.body.push('\n');
    }

    pub fn render(&self) -> String {
        format!("{}\n{}", self.header.join(","), self.body)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

fn names(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}{i}"))
}

fn cells(v: &DVector<f64>) -> impl Iterator<Item = Option<f64>> + '_ {
    v.iter().map(|&x| Some(x))
}

fn blanks(count: usize) -> impl Iterator<Item = Option<f64>> {
    std::iter::repeat_n(None, count)
}

/// `t, q…, v…, u…, lambda…, mu…` on the flow grid.
pub fn pmp_trajectory_csv(model: &dyn SystemModel, traj: &PmpTrajectory, format: NumberFormat) -> Csv {
    let (n, r) = (model.dim(), model.rank());
    let header = std::iter::once("t".to_string())
        .chain(names("q", n))
        .chain(names("v", r))
        .chain(names("u", r))
        .chain(names("lambda", n))
        .chain(names("mu", r))
        .collect();
    let mut csv = Csv::new(header, format);
    for (k, t) in traj.times.iter().enumerate() {
        let s = &traj.states[k];
        let c = &traj.costates[k];
        csv.row(std::iter::once(Some(*t)).chain(cells(&s.q)).chain(cells(&s.v)).chain(cells(&traj.controls[k])).chain(cells(&c.lambda)).chain(cells(&c.mu)));
    }
    csv
}

/// `t, q…, v…, u…, lambda…` per node; interval columns are blank at the last node.
pub fn del_trajectory_csv(model: &dyn SystemModel, traj: &DiscreteTrajectory, format: NumberFormat) -> Csv {
    let (n, r) = (model.dim(), model.rank());
    let header = std::iter::once("t".to_string())
        .chain(names("q", n))
        .chain(names("v", r))
        .chain(names("u", r))
        .chain(names("lambda", n))
        .collect();
    let mut csv = Csv::new(header, format);
    let steps = traj.steps();
    for (k, z) in traj.nodes.iter().enumerate() {
        let row = std::iter::once(Some(traj.grid.time(k))).chain(cells(&z.q)).chain(cells(&z.v));
        if k < steps {
            csv.row(row.chain(cells(&traj.controls[k])).chain(cells(&traj.multipliers[k])));
        } else {
            csv.row(row.chain(blanks(r + n)));
        }
    }
    csv
}

pub const DIAGNOSTICS_HEADER: [&str; 5] = ["t", "cost", "action", "energy", "constraint_residual"];

fn diagnostics_table(format: NumberFormat) -> Csv {
    Csv::new(DIAGNOSTICS_HEADER.iter().map(|s| s.to_string()).collect(), format)
}

/// Diagnostics of a discrete solution.
pub fn del_diagnostics_csv(rows: &[DiagnosticRow], format: NumberFormat) -> Csv {
    let mut csv = diagnostics_table(format);
    for r in rows {
        csv.row([Some(r.t), Some(r.running_cost), Some(r.action), Some(r.energy), r.constraint_residual]);
    }
    csv
}

/// Diagnostics of a shooting solution: running cost, its cumulative
/// trapezoidal integral, restricted energy and the pointwise constraint residual.
pub fn pmp_diagnostics_csv(model: &dyn SystemModel, problem: &TrackingProblem, traj: &PmpTrajectory, format: NumberFormat) -> Result<Csv> {
    let mut csv = diagnostics_table(format);
    let qs: Vec<&DVector<f64>> = traj.states.iter().map(|s| &s.q).collect();
    let qdots = fourth_order_derivative(&qs, &traj.times)?;
    let mut action = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for (k, t) in traj.times.iter().enumerate() {
        let s = &traj.states[k];
        let cost = running_cost(model, problem, *t, s, &traj.controls[k])?;
        if let Some((tp, cp)) = prev {
            action += 0.5 * (t - tp) * (cost + cp);
        }
        prev = Some((*t, cost));
        let residual = (model.annihilator(&s.q) * &qdots[k]).amax();
        csv.row([Some(*t), Some(cost), Some(action), Some(restricted_energy(model, s)), Some(residual)]);
    }
    Ok(csv)
}

/// Side-by-side discrete nodes and their re-integration at the node times.
pub fn comparison_csv(model: &dyn SystemModel, traj: &DiscreteTrajectory, reintegrated: &[AdmissibleState], format: NumberFormat) -> Csv {
    let (n, r) = (model.dim(), model.rank());
    let header = std::iter::once("t".to_string())
        .chain(names("q", n))
        .chain(names("v", r))
        .chain(names("q_rk4_", n))
        .chain(names("v_rk4_", r))
        .chain(["energy".to_string(), "energy_rk4".to_string(), "distance".to_string()])
        .collect();
    let mut csv = Csv::new(header, format);
    for (k, (z, w)) in traj.nodes.iter().zip(reintegrated).enumerate() {
        let dist = crate::varint::state_distance(model, z, w);
        csv.row(
            std::iter::once(Some(traj.grid.time(k)))
                .chain(cells(&z.q))
                .chain(cells(&z.v))
                .chain(cells(&w.q))
                .chain(cells(&w.v))
                .chain([Some(restricted_energy(model, z)), Some(restricted_energy(model, w)), Some(dist)]),
        );
    }
    csv
}

/// Plain-text report assembled section by section.
#[derive(Clone, Debug, Default)]
pub struct Report {
    text: String,
}

impl Report {
    pub fn section(&mut self, title: &str) {
        if !self.text.is_empty() {
            self.text.push('\n');
        }
        let _ = writeln!(self.text, "== {title} ==");
    }

    pub fn line(&mut self, line: impl AsRef<str>) {
        self.text.push_str(line.as_ref());
        self.text.push('\n');
    }

    pub fn field(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.text, "{key:<28} {value}");
    }

    pub fn newton_log(&mut self, log: &[NewtonRecord], format: NumberFormat) {
        self.line("iteration  residual_norm            step                     levenberg");
        for r in log {
            let _ = writeln!(self.text, "{:>9}  {:<23}  {:<23}  {}", r.iteration, format.fmt(r.residual_norm), format.fmt(r.step), format.fmt(r.levenberg));
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, &self.text)?;
        Ok(())
    }
}

/// Configuration with angle coordinates wrapped to `[0, 2π)`, for reporting.
pub fn display_configuration(model: &dyn SystemModel, q: &DVector<f64>, format: NumberFormat) -> String {
    let q = wrapped_configuration(model, q);
    format!("[{}]", q.iter().map(|&x| format.fmt(x)).collect::<Vec<_>>().join(", "))
}

pub fn display_vector(v: &DVector<f64>, format: NumberFormat) -> String {
    format!("[{}]", v.iter().map(|&x| format.fmt(x)).collect::<Vec<_>>().join(", "))
}

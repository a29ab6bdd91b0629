//! Verification campaigns, counterexample reproductions and report output.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::duality::{check_nupbr, dual_from_primal, solve_dual_at, solve_primal, verify_deflator};
use crate::error::{Error, Result};
use crate::instances;
use crate::market::MarketModel;
use crate::process::PredictableProcess;
use crate::risk_tolerance::{gkw_decompose, hessian_from_gkw, recovery_residuals, risk_tolerance};
use crate::sensitivity::{check_identities, expand, ExpansionReport};
use crate::strategy::{SelectOptions, StrategyFamily};
use crate::tree::EventTree;
use crate::utility::Utility;

pub mod anchors {
    pub const DUALITY: &str = "conjugate-duality";
    pub const ENVELOPE: &str = "envelope-theorem";
    pub const EXPANSION: &str = "quadratic-expansion";
    pub const IDENTITIES: &str = "auxiliary-identities";
    pub const NEAR_OPTIMAL: &str = "nearly-optimal-wealth";
    pub const PROPORTIONS: &str = "perturbed-proportions";
    pub const RISK_TOLERANCE: &str = "risk-tolerance-decomposition";
    pub const BOUNDED_JUMPS: &str = "bounded-jumps-counterexample";
    pub const INTEGRABILITY: &str = "integrability-counterexample";
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRecord {
    pub name: String,
    pub anchor: String,
    pub computed: f64,
    pub reference: f64,
    pub residual: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub metadata: Vec<(String, String)>,
    pub records: Vec<CheckRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Format(format!("unknown report format '{other}'"))),
        }
    }
}

fn num(v: f64, json: bool) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if json {
        "null".into()
    } else {
        format!("{v}")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization")
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.metadata.push((key.into(), value.to_string()));
    }

    pub fn push(
        &mut self,
        name: impl Into<String>,
        anchor: &str,
        computed: f64,
        reference: f64,
        residual: f64,
        pass: bool,
    ) {
        self.records.push(CheckRecord {
            name: name.into(),
            anchor: anchor.into(),
            computed,
            reference,
            residual,
            pass,
        });
    }

    /// Records `|computed - reference| <= tol`.
    pub fn check(&mut self, name: impl Into<String>, anchor: &str, computed: f64, reference: f64, tol: f64) {
        let r = (computed - reference).abs();
        self.push(name, anchor, computed, reference, r, r <= tol);
    }

    /// Records `computed <= bound`.
    pub fn check_below(&mut self, name: impl Into<String>, anchor: &str, computed: f64, bound: f64) {
        self.push(name, anchor, computed, bound, computed, computed <= bound);
    }

    pub fn all_pass(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRecord> {
        self.records.iter().filter(|r| !r.pass)
    }

    pub fn extend(&mut self, prefix: &str, other: Report) {
        for (k, v) in other.metadata {
            self.metadata.push((format!("{prefix}.{k}"), v));
        }
        for mut r in other.records {
            r.name = format!("{prefix}.{}", r.name);
            self.records.push(r);
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,anchor,computed,reference,residual,pass\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                csv_field(&r.name),
                csv_field(&r.anchor),
                num(r.computed, false),
                num(r.reference, false),
                num(r.residual, false),
                r.pass
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = String::from("{\n  \"metadata\": {");
        for (i, (k, v)) in self.metadata.iter().enumerate() {
            let sep = if i == 0 { "" } else { "," };
            let _ = write!(s, "{sep}\n    {}: {}", json_str(k), json_str(v));
        }
        s.push_str(if self.metadata.is_empty() { "},\n" } else { "\n  },\n" });
        s.push_str("  \"records\": [");
        for (i, r) in self.records.iter().enumerate() {
            let sep = if i == 0 { "" } else { "," };
            let _ = write!(
                s,
                "{sep}\n    {{\"name\": {}, \"anchor\": {}, \"computed\": {}, \"reference\": {}, \"residual\": {}, \"pass\": {}}}",
                json_str(&r.name),
                json_str(&r.anchor),
                num(r.computed, true),
                num(r.reference, true),
                num(r.residual, true),
                r.pass
            );
        }
        s.push_str(if self.records.is_empty() { "]\n}\n" } else { "\n  ]\n}\n" });
        s
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }

    pub fn emit(&self, path: &Path, format: Format) -> Result<()> {
        std::fs::write(path, self.render(format))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Pointwise identity checks.
    pub check: f64,
    /// Minimum residual decay per halving of the expansion grid.
    pub expansion_decay: f64,
    /// Minimum residual decay per halving of the strategy grid.
    pub strategy_decay: f64,
    /// Absolute accuracy of exact value re-solves, relative to `max(1, |u|)`.
    pub value_floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { check: 1e-8, expansion_decay: 1.8, strategy_decay: 2.0, value_floor: 1e-14 }
    }
}

#[derive(Debug, Clone)]
pub struct Campaign {
    pub model: MarketModel,
    pub utility: Utility,
    pub x: f64,
    pub dx_grid: Vec<f64>,
    pub eps_grid: Vec<f64>,
    pub n_budget: usize,
    pub tol: Tolerances,
}

/// `(2^-k, 2^-k)` for `k = 3..=10`.
pub fn dyadic_grid() -> Vec<f64> {
    (3..=10).map(|k| 0.5f64.powi(k)).collect()
}

impl Campaign {
    pub fn new(model: MarketModel, utility: Utility, x: f64) -> Self {
        Self {
            model,
            utility,
            x,
            dx_grid: dyadic_grid(),
            eps_grid: dyadic_grid(),
            n_budget: SelectOptions::default().n_max,
            tol: Tolerances::default(),
        }
    }

    /// Grid points, pairing the two grids entrywise (a single entry broadcasts).
    pub fn points(&self) -> Result<Vec<(f64, f64)>> {
        let (a, b) = (&self.dx_grid, &self.eps_grid);
        let n = a.len().max(b.len());
        if a.is_empty() || b.is_empty() || (a.len() != n && a.len() != 1) || (b.len() != n && b.len() != 1) {
            return Err(Error::Format(format!("grids of lengths {} and {} cannot be paired", a.len(), b.len())));
        }
        let t = &self.tol;
        if !(t.check > 0.0 && t.expansion_decay > 0.0 && t.strategy_decay > 0.0 && t.value_floor > 0.0) {
            return Err(Error::Format("tolerances must be positive".into()));
        }
        Ok((0..n).map(|i| (a[if a.len() == 1 { 0 } else { i }], b[if b.len() == 1 { 0 } else { i }])).collect())
    }

    fn feasible(&self, dx: f64, eps: f64) -> bool {
        self.x + dx > 0.0 && eps.abs() < self.model.eps0()
    }
}

/// Appends one decay record per consecutive pair of a residual sequence.
///
/// `seq` holds `(radius, residual, floor)`; pairs where either residual is
/// at or below its floor pass without a ratio test.
pub fn decay_records(report: &mut Report, name: &str, anchor: &str, seq: &[(f64, f64, f64)], min_factor: f64) {
    for k in 1..seq.len() {
        let (h0, r0, f0) = seq[k - 1];
        let (h1, r1, f1) = seq[k];
        if !(h1 < h0) {
            continue;
        }
        let label = format!("{name}[{k}]");
        if r0 <= f0 || r1 <= f1 {
            report.push(label, anchor, r1, f1, 0.0, true);
            continue;
        }
        let factor = (r0 / r1).powf(1.0 / (h0 / h1).log2());
        report.push(label, anchor, factor, min_factor, (min_factor - factor).max(0.0), factor >= min_factor);
    }
}

pub fn run_solve(m: &MarketModel, u: &Utility, x: f64, eps: f64, tol: f64) -> Result<Report> {
    let mut rep = Report::new();
    rep.meta("x", x);
    rep.meta("eps", eps);
    check_nupbr(m)?;
    let p = solve_primal(m, u, x, eps)?;
    let d = dual_from_primal(m, u, &p)?;
    rep.push("u", anchors::DUALITY, p.value, f64::NAN, 0.0, p.value.is_finite());
    rep.push("y", anchors::DUALITY, d.y, f64::NAN, 0.0, d.y > 0.0);
    rep.push("v", anchors::DUALITY, d.value, f64::NAN, 0.0, d.value.is_finite());
    rep.check_below("first_order_residual", anchors::DUALITY, p.foc_residual, tol);
    let gap = p.value - (d.value + x * d.y);
    rep.check("conjugacy_gap", anchors::DUALITY, gap, 0.0, tol * p.value.abs().max(1.0));
    let defl = verify_deflator(m, eps, &d.deflator)?;
    rep.check_below("deflator_violation", anchors::DUALITY, defl.max_violation, tol);
    let tree = m.tree();
    let mut marg: f64 = 0.0;
    for (l, xt) in tree.leaves().zip(p.terminal(m)) {
        marg = marg.max((d.deflator.value(l) - u.evaluate(xt)?.du).abs() / d.y);
    }
    rep.check_below("terminal_marginal_utility", anchors::DUALITY, marg, tol);
    Ok(rep)
}

fn expansion_base_records(rep: &mut Report, m: &MarketModel, u: &Utility, e: &ExpansionReport, tol: f64) -> Result<()> {
    let tree = m.tree();
    let id = check_identities(tree, &e.base, &e.aux);
    rep.meta("u", e.base.primal.value);
    rep.meta("y", e.base.y);
    rep.meta("primal_dim", e.basis.primal_dim());
    rep.meta("dual_dim", e.basis.dual_dim());
    rep.check("axx_byy", anchors::IDENTITIES, id.axx_byy, 0.0, tol);
    rep.check("axe_byy", anchors::IDENTITIES, id.axe_byy, 0.0, tol);
    rep.check("cross_identity", anchors::IDENTITIES, id.cross, 0.0, tol);
    rep.check_below("primal_relations", anchors::IDENTITIES, id.primal_relations, tol);
    rep.check_below("dual_relations", anchors::IDENTITIES, id.dual_relations, tol);
    rep.check_below("product_martingales", anchors::IDENTITIES, id.products, tol);
    let h = 1e-4;
    let x = e.base.x;
    let up = solve_primal(m, u, x, h)?.value;
    let dn = solve_primal(m, u, x, -h)?.value;
    let cd = (up - dn) / (2.0 * h);
    rep.check("gradient_eps", anchors::ENVELOPE, e.gradient_u[1], cd, 1e-6 * cd.abs().max(1.0));
    Ok(())
}

pub fn run_expansion_campaign(c: &Campaign) -> Result<Report> {
    let pts = c.points()?;
    let (m, u, x) = (&c.model, &c.utility, c.x);
    let e = expand(m, u, x)?;
    let mut rep = Report::new();
    rep.meta("campaign", "expansion");
    rep.meta("x", x);
    expansion_base_records(&mut rep, m, u, &e, c.tol.check)?;
    let y = e.base.y;
    let results: Vec<Option<Result<(f64, f64)>>> = pts
        .par_iter()
        .map(|&(dx, eps)| {
            if !c.feasible(dx, eps) {
                return None;
            }
            let dy = dx * y / x;
            Some((|| {
                let ue = solve_primal(m, u, x + dx, eps)?.value;
                let ve = solve_dual_at(m, u, y + dy, eps)?.value;
                Ok((ue, ve))
            })())
        })
        .collect();
    let mut su = Vec::new();
    let mut sv = Vec::new();
    for (k, (&(dx, eps), res)) in pts.iter().zip(results).enumerate() {
        let Some(res) = res else {
            rep.meta(format!("skipped[{k}]"), format!("({dx}, {eps}) outside the admissible region"));
            continue;
        };
        let (ue, ve) = res?;
        let dy = dx * y / x;
        let (nu, nv) = (dx * dx + eps * eps, dy * dy + eps * eps);
        let qu = e.quadratic_u(dx, eps);
        let qv = e.quadratic_v(dy, eps);
        let (ru, rv) = ((ue - qu).abs() / nu, (ve - qv).abs() / nv);
        let fu = c.tol.value_floor * ue.abs().max(1.0) / nu;
        let fv = c.tol.value_floor * ve.abs().max(1.0) / nv;
        rep.push(format!("u_residual[{k}]"), anchors::EXPANSION, ue, qu, ru, ru.is_finite());
        rep.push(format!("v_residual[{k}]"), anchors::EXPANSION, ve, qv, rv, rv.is_finite());
        su.push((dx.hypot(eps), ru, fu));
        sv.push((dy.hypot(eps), rv, fv));
    }
    decay_records(&mut rep, "u_decay", anchors::EXPANSION, &su, c.tol.expansion_decay);
    decay_records(&mut rep, "v_decay", anchors::EXPANSION, &sv, c.tol.expansion_decay);
    Ok(rep)
}

pub fn run_strategy_campaign(c: &Campaign) -> Result<Report> {
    let pts = c.points()?;
    let (m, u, x) = (&c.model, &c.utility, c.x);
    let e = expand(m, u, x)?;
    let fam = StrategyFamily::new(m, u, &e)?;
    let opts = SelectOptions { n_max: c.n_budget, ..SelectOptions::default() };
    let mut rep = Report::new();
    rep.meta("campaign", "strategy");
    rep.meta("x", x);
    let exact: Vec<Option<Result<f64>>> = pts
        .par_iter()
        .map(|&(dx, eps)| c.feasible(dx, eps).then(|| solve_primal(m, u, x + dx, eps).map(|p| p.value)))
        .collect();
    let mut seq = Vec::new();
    let mut prev_n: Option<(f64, usize)> = None;
    let mut monotone = true;
    for (k, (&(dx, eps), ue)) in pts.iter().zip(exact).enumerate() {
        let Some(ue) = ue else {
            rep.meta(format!("skipped[{k}]"), format!("({dx}, {eps}) outside the admissible region"));
            continue;
        };
        let ue = ue?;
        let sel = fam.select_n(dx, eps, &opts)?;
        let lvl = fam.level(sel.n)?;
        let eu = fam.expected_utility(&lvl, dx, eps)?;
        let h2 = dx * dx + eps * eps;
        let r = (ue - eu) / h2;
        let floor = c.tol.value_floor * ue.abs().max(1.0) / h2;
        let h = dx.hypot(eps);
        if let Some((hp, np)) = prev_n {
            if h < hp && sel.n < np {
                monotone = false;
            }
        }
        prev_n = Some((h, sel.n));
        rep.push(format!("selected_n[{k}]"), anchors::NEAR_OPTIMAL, sel.n as f64, sel.m_n, 0.0, true);
        rep.push(format!("residual[{k}]"), anchors::NEAR_OPTIMAL, ue, eu, r, r >= -floor);
        rep.check_below(format!("transport[{k}]"), anchors::NEAR_OPTIMAL, fam.transport_residual(&lvl, dx, eps)?, 1e-10);
        rep.check_below(
            format!("proportions_round_trip[{k}]"),
            anchors::PROPORTIONS,
            fam.proportion_round_trip(&lvl, dx, eps)?,
            1e-10,
        );
        seq.push((h, r.abs(), floor));
    }
    rep.push("selected_n_monotone", anchors::NEAR_OPTIMAL, monotone as u8 as f64, 1.0, 0.0, monotone);
    decay_records(&mut rep, "residual_decay", anchors::NEAR_OPTIMAL, &seq, c.tol.strategy_decay);
    Ok(rep)
}

pub fn run_risk_tolerance(m: &MarketModel, u: &Utility, x: f64, tol: f64) -> Result<Report> {
    let e = expand(m, u, x)?;
    let rt = risk_tolerance(m, u, &e.base)?;
    let mut rep = Report::new();
    rep.meta("x", x);
    rep.meta("exists", rt.exists);
    rep.push("replication_distance", anchors::RISK_TOLERANCE, rt.certificate, 0.0, rt.certificate, true);
    if !rt.exists {
        return Ok(rep);
    }
    rep.push("initial", anchors::RISK_TOLERANCE, rt.initial, f64::NAN, 0.0, rt.initial > 0.0);
    let dec = gkw_decompose(m, &e.base, &rt)?;
    let h = hessian_from_gkw(m, &dec, &e.base);
    rep.check_below("orthogonality", anchors::RISK_TOLERANCE, dec.orthogonality, tol);
    rep.check("a_xx", anchors::RISK_TOLERANCE, h.a_xx, e.aux.a_xx.value, tol);
    rep.check("a_ee", anchors::RISK_TOLERANCE, h.a_ee, e.aux.a_ee.value, tol);
    rep.check("b_ee", anchors::RISK_TOLERANCE, h.b_ee, e.aux.b_ee.value, tol);
    rep.check("a_xe", anchors::RISK_TOLERANCE, h.a_xe, e.aux.a_xe, tol);
    rep.check("b_ye", anchors::RISK_TOLERANCE, h.b_ye, e.aux.b_ye, tol);
    let (ra, rb) = recovery_residuals(&e.base, &rt, &dec, &e.aux.a_ee.process, &e.aux.b_ee.process);
    rep.check_below("recovery_m1", anchors::RISK_TOLERANCE, ra, tol);
    rep.check_below("recovery_n1", anchors::RISK_TOLERANCE, rb, tol);
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Counterexample {
    UnboundedJumps,
    Integrability,
}

impl std::str::FromStr for Counterexample {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unbounded-jumps" | "unbounded_jumps" => Ok(Self::UnboundedJumps),
            "integrability" => Ok(Self::Integrability),
            other => Err(Error::Format(format!("unknown counterexample '{other}'"))),
        }
    }
}

/// Three-date model: a flat first step, then `theta^1 = n` with probability
/// `2^-n` (the last branch takes the remaining mass) and a `+-1/2` return.
pub fn unbounded_jumps_model(n_max: usize) -> Result<MarketModel> {
    if n_max < 1 {
        return Err(Error::InvalidModel("n_max must be at least 1".into()));
    }
    let mut parents = vec![None];
    let mut probs = vec![1.0];
    for n in 1..=n_max {
        parents.push(Some(0));
        probs.push(if n < n_max { 0.5f64.powi(n as i32) } else { 0.5f64.powi(n_max as i32 - 1) });
    }
    for n in 1..=n_max {
        parents.extend([Some(n), Some(n)]);
        probs.extend([0.5, 0.5]);
    }
    let tree = EventTree::from_parents(&parents, &probs)?;
    let inc: Vec<Vec<f64>> = (0..tree.len())
        .map(|k| match tree.time(k) {
            2 => vec![if (k - n_max - 1).is_multiple_of(2) { 0.5 } else { -0.5 }],
            _ => vec![0.0],
        })
        .collect();
    let theta = PredictableProcess::from_fn(&tree, 2, |k| {
        let t = if k == 0 { 0.0 } else { k as f64 };
        vec![1.0 - t, t]
    })?;
    MarketModel::from_increments(tree, &inc, theta, None)
}

/// Symmetric random walk with `depth` steps of size `1/sqrt(depth)` and a
/// perturbation whose terminal value is `|W_T|^{2+delta} sign(W_T)`.
pub fn integrability_model(depth: usize, delta: f64) -> Result<MarketModel> {
    let tree = EventTree::uniform(depth, &[0.5, 0.5])?;
    let step = 1.0 / (depth as f64).sqrt();
    let inc: Vec<Vec<f64>> = (0..tree.len())
        .map(|k| match tree.parent(k) {
            None => vec![0.0],
            Some(p) => vec![if k == tree.children(p).start { step } else { -step }],
        })
        .collect();
    let mut w = vec![0.0; tree.len()];
    for k in 1..tree.len() {
        w[k] = w[tree.parent(k).unwrap()] + inc[k][0];
    }
    let payoff: Vec<f64> = tree.leaves().map(|l| w[l].abs().powf(2.0 + delta) * w[l].signum()).collect();
    let rbar = tree.expectation_process(&payoff);
    let theta = PredictableProcess::from_fn(&tree, 2, |k| {
        let up = tree.children(k).start;
        let t = -(rbar[up] - rbar[k]) / step;
        vec![1.0 - t, t]
    })?;
    MarketModel::from_increments(tree, &inc, theta, None)
}

#[derive(Debug, Clone)]
pub struct CounterexampleOptions {
    pub eps_grid: Vec<f64>,
    pub n_max: usize,
    pub depths: Vec<usize>,
    pub x: f64,
    pub p: f64,
    pub delta: f64,
    pub c: f64,
}

impl Default for CounterexampleOptions {
    fn default() -> Self {
        Self {
            eps_grid: vec![-1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0],
            n_max: 16,
            depths: vec![6, 8, 10],
            x: 1.0,
            p: 0.5,
            delta: 1.0,
            c: 1.0,
        }
    }
}

fn min_numeraire(m: &MarketModel, eps: f64) -> (usize, f64) {
    let n = m.numeraire_unchecked(eps);
    (0..n.len()).map(|k| (k, n.value(k))).fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
}

pub fn run_counterexample(which: Counterexample, o: &CounterexampleOptions) -> Result<Report> {
    let mut rep = Report::new();
    match which {
        Counterexample::UnboundedJumps => {
            let m = unbounded_jumps_model(o.n_max)?;
            rep.meta("counterexample", "unbounded jumps");
            rep.meta("n_max", o.n_max);
            for &eps in &o.eps_grid {
                let (node, v) = min_numeraire(&m, eps);
                if eps == 0.0 {
                    rep.push("min_numeraire[eps=0]", anchors::BOUNDED_JUMPS, v, 0.0, 0.0, v > 0.0);
                    continue;
                }
                if v >= 0.0 {
                    return Err(Error::Domain(format!(
                        "no negative numeraire at eps = {eps} with n_max = {}; increase n_max",
                        o.n_max
                    )));
                }
                // first branch that breaks positivity
                let tree = m.tree();
                let first = (1..tree.len())
                    .filter(|k| tree.time(*k) == 2)
                    .find(|k| m.numeraire_unchecked(eps).value(*k) < 0.0)
                    .unwrap_or(node);
                let theta = m.theta().at_node(tree.parent(first).unwrap())[1];
                let nv = m.numeraire_unchecked(eps).value(first);
                rep.meta(format!("violation[eps={eps}]"), format!("theta={theta} dR={}", m.dr(first)[1]));
                rep.push(format!("numeraire[eps={eps}]"), anchors::BOUNDED_JUMPS, nv, 0.0, nv, nv < 0.0);
            }
        }
        Counterexample::Integrability => {
            rep.meta("counterexample", "integrability (divergence trend on truncated trees)");
            let u = Utility::power(o.p)?;
            let models = o.depths.iter().map(|d| integrability_model(*d, o.delta)).collect::<Result<Vec<_>>>()?;
            let eps = 0.5 * models.iter().map(|m| m.eps0()).fold(f64::INFINITY, f64::min);
            rep.meta("eps", eps);
            rep.meta("c", o.c);
            let rows = models
                .par_iter()
                .map(|m| {
                    let stats = m.perturbation_statistics();
                    let moment = stats.exp_moment(&m.tree().leaf_probs(), o.c);
                    solve_primal(m, &u, o.x, eps).map(|p| (moment, p.value))
                })
                .collect::<Result<Vec<_>>>()?;
            for (d, (moment, value)) in o.depths.iter().zip(&rows) {
                rep.push(format!("moment[L={d}]"), anchors::INTEGRABILITY, *moment, f64::NAN, 0.0, moment.is_finite());
                rep.push(format!("u[L={d}]"), anchors::INTEGRABILITY, *value, f64::NAN, 0.0, value.is_finite());
            }
            for k in 1..rows.len() {
                let g = rows[k].0 / rows[k - 1].0;
                rep.push(format!("moment_growth[{k}]"), anchors::INTEGRABILITY, g, 1.5, 0.0, g > 1.5);
                let du = rows[k].1 - rows[k - 1].1;
                rep.push(format!("u_increase[{k}]"), anchors::INTEGRABILITY, du, 0.0, 0.0, du > 0.0);
            }
        }
    }
    Ok(rep)
}

/// Every campaign on the built-in instances.
pub fn verify_all() -> Result<Report> {
    let mut rep = Report::new();
    let tol = Tolerances::default().check;
    let mix = instances::mixture_utility();
    rep.extend("solve.t1", run_solve(&instances::t1(1.0), &Utility::log(), 1.0, 0.1, tol)?);
    rep.extend("solve.trinomial2", run_solve(&instances::trinomial_two_period(), &mix, 1.0, 0.2, tol)?);
    let tri = Campaign::new(instances::trinomial_two_period(), mix.clone(), 1.0);
    rep.extend("expansion.trinomial2", run_expansion_campaign(&tri)?);
    rep.extend("strategy.trinomial2", run_strategy_campaign(&tri)?);
    let two = Campaign::new(instances::two_asset_two_period(), mix, 1.0);
    rep.extend("expansion.two_asset", run_expansion_campaign(&two)?);
    rep.extend(
        "risk_tolerance.asymmetric",
        run_risk_tolerance(&instances::asymmetric_trinomial(1.0), &Utility::power(0.5)?, 1.0, tol)?,
    );
    let o = CounterexampleOptions::default();
    rep.extend("counterexample.jumps", run_counterexample(Counterexample::UnboundedJumps, &o)?);
    rep.extend("counterexample.integrability", run_counterexample(Counterexample::Integrability, &o)?);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_is_header_only() {
        let r = Report::new();
        assert_eq!(r.to_csv(), "name,anchor,computed,reference,residual,pass\n");
        assert!(serde_json::from_str::<serde_json::Value>(&r.to_json()).is_ok());
    }

    #[test]
    fn json_output_parses() {
        let mut r = Report::new();
        r.meta("x", 1.0);
        r.check("a", "anchor", 1.0, 1.0 + 1e-12, 1e-10);
        r.push("b", "anchor", f64::NAN, 0.0, 0.0, false);
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["records"][0]["pass"], true);
        assert!(v["records"][1]["computed"].is_null());
        assert!(!r.all_pass());
    }

    #[test]
    fn hand_value_of_unbounded_jumps() {
        let m = unbounded_jumps_model(8).unwrap();
        let n = m.numeraire_unchecked(0.5);
        let node = (0..n.len()).find(|k| n.value(*k) < 0.0).unwrap();
        assert_eq!(m.theta().at_node(m.tree().parent(node).unwrap())[1], 5.0);
        assert_eq!(n.value(node), -0.25);
        assert!(m.numeraire_unchecked(0.0).values().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn too_small_n_max_is_reported() {
        let o = CounterexampleOptions { n_max: 4, ..Default::default() };
        let err = run_counterexample(Counterexample::UnboundedJumps, &o).unwrap_err();
        assert!(err.to_string().contains("increase n_max"));
    }
}

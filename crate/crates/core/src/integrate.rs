//! Fixed-step RK4 and variable-step fourth-order Adams-Bashforth-Moulton integration.
//!
//! Both integrators force step boundaries at reporting times and at scheduled
//! discontinuities. The ABM method restarts from an RK4 bootstrap after each
//! discontinuity; reporting times only clip the step.

use crate::error::{AttError, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Rk4,
    Abm,
}

/// Integrator settings; `abs_tol = None` selects `rel_tol * 1e-3`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub kind: SolverKind,
    #[serde(default = "defaults::step")]
    pub step: f64,
    #[serde(default = "defaults::max_step")]
    pub max_step: f64,
    #[serde(default = "defaults::min_step")]
    pub min_step: f64,
    #[serde(default = "defaults::initial_step")]
    pub initial_step: f64,
    #[serde(default = "defaults::rel_tol")]
    pub rel_tol: f64,
    #[serde(default)]
    pub abs_tol: Option<f64>,
}

mod defaults {
    pub fn step() -> f64 {
        0.01
    }
    pub fn max_step() -> f64 {
        0.01
    }
    pub fn min_step() -> f64 {
        1e-4
    }
    pub fn initial_step() -> f64 {
        0.01
    }
    pub fn rel_tol() -> f64 {
        1e-5
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::abm()
    }
}

impl SolverConfig {
    /// Adaptive ABM at the common settings: steps 1e-4..0.01, initial 0.01, rel-tol 1e-5.
    pub fn abm() -> Self {
        Self {
            kind: SolverKind::Abm,
            step: defaults::step(),
            max_step: defaults::max_step(),
            min_step: defaults::min_step(),
            initial_step: defaults::initial_step(),
            rel_tol: defaults::rel_tol(),
            abs_tol: None,
        }
    }

    pub fn rk4(step: f64) -> Self {
        Self {
            kind: SolverKind::Rk4,
            step,
            ..Self::abm()
        }
    }

    pub fn abs_tol(&self) -> f64 {
        self.abs_tol.unwrap_or(self.rel_tol * 1e-3)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AttError::InvalidInput(format!("solver settings: {m}")));
        match self.kind {
            SolverKind::Rk4 => {
                if !(self.step > 0.0 && self.step.is_finite()) {
                    return bad("fixed step must be positive");
                }
            }
            SolverKind::Abm => {
                if !(self.min_step > 0.0 && self.min_step <= self.initial_step && self.initial_step <= self.max_step) {
                    return bad("require 0 < min_step <= initial_step <= max_step");
                }
                if !(self.rel_tol > 0.0 && self.abs_tol() > 0.0) {
                    return bad("tolerances must be positive");
                }
            }
        }
        Ok(())
    }
}

/// Integration interval, reporting grid and known discontinuity times.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub t0: f64,
    pub tf: f64,
    /// Reporting interval; `None` records every accepted step.
    pub report_dt: Option<f64>,
    pub breakpoints: Vec<f64>,
}

impl Schedule {
    pub fn new(t0: f64, tf: f64, report_dt: Option<f64>) -> Self {
        Self {
            t0,
            tf,
            report_dt,
            breakpoints: Vec::new(),
        }
    }

    pub fn with_breakpoints(mut self, mut bps: Vec<f64>) -> Self {
        bps.retain(|&b| b > self.t0 && b < self.tf);
        bps.sort_by(f64::total_cmp);
        bps.dedup();
        self.breakpoints = bps;
        self
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolverStats {
    pub steps: usize,
    pub rejected: usize,
    pub evaluations: usize,
    pub min_step_used: f64,
    pub max_step_used: f64,
}

/// States sampled on the reporting grid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub stats: SolverStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn last(&self) -> Option<(f64, &[f64])> {
        Some((*self.t.last()?, self.x.last()?.as_slice()))
    }

    /// Sample nearest to time `t`.
    pub fn at(&self, t: f64) -> Option<&[f64]> {
        let i = self.t.partition_point(|&s| s < t);
        let cand = [i.saturating_sub(1), i.min(self.t.len().saturating_sub(1))];
        cand.iter()
            .filter(|&&k| k < self.t.len())
            .min_by(|&&a, &&b| (self.t[a] - t).abs().total_cmp(&(self.t[b] - t).abs()))
            .map(|&k| self.x[k].as_slice())
    }
}

/// Time-ordered targets the integrator must land on exactly.
struct Targets {
    report: Option<(f64, f64)>,
    k: u64,
    bps: Vec<f64>,
    ib: usize,
    tf: f64,
}

impl Targets {
    fn new(s: &Schedule) -> Self {
        Self {
            report: s.report_dt.map(|d| (s.t0, d)),
            k: 1,
            bps: s.breakpoints.clone(),
            ib: 0,
            tf: s.tf,
        }
    }

    fn next_report(&self) -> f64 {
        match self.report {
            Some((t0, d)) => (t0 + self.k as f64 * d).min(self.tf),
            None => self.tf,
        }
    }

    fn next_break(&self) -> f64 {
        self.bps.get(self.ib).copied().unwrap_or(self.tf)
    }

    fn next(&self) -> f64 {
        self.next_report().min(self.next_break())
    }

    /// Time at which a step's right end is evaluated: just left of a discontinuity it lands on.
    fn end_eval(&self, t: f64, h: f64, hit: bool, target: f64) -> f64 {
        if hit && target == self.next_break() && target < self.tf {
            target.next_down()
        } else {
            t + h
        }
    }

    /// Advances past `t`; returns `(is_report, is_breakpoint)`.
    fn pass(&mut self, t: f64) -> (bool, bool) {
        let mut rep = false;
        let mut brk = false;
        while self.report.is_some() && self.next_report() <= t && self.next_report() < self.tf {
            self.k += 1;
            rep = true;
        }
        while self.ib < self.bps.len() && self.bps[self.ib] <= t {
            self.ib += 1;
            brk = true;
        }
        if t >= self.tf {
            rep = true;
        }
        (rep, brk)
    }
}

/// Clips a proposed step so it lands on `target` without leaving a sliver.
fn clip(t: f64, h: f64, target: f64) -> (f64, bool) {
    let rem = target - t;
    let eps = 1e-12 * target.abs().max(1.0);
    if h >= rem - eps {
        (rem, true)
    } else if h > 0.75 * rem {
        (0.5 * rem, false)
    } else {
        (h, false)
    }
}

fn check_finite(t: f64, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(AttError::NonFinite { t })
    }
}

struct Eval<F> {
    f: F,
    count: usize,
}

impl<F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>> Eval<F> {
    fn call(&mut self, t: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        self.count += 1;
        (self.f)(t, y, out)?;
        check_finite(t, out)
    }
}

fn rk4_step<F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>>(
    ev: &mut Eval<F>,
    t: f64,
    y: &[f64],
    k1: &[f64],
    h: f64,
    t_end: f64,
    out: &mut [f64],
) -> Result<()> {
    let n = y.len();
    let mut tmp = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    ev.call(t + 0.5 * h, &tmp, &mut k2)?;
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    ev.call(t + 0.5 * h, &tmp, &mut k3)?;
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    ev.call(t_end, &tmp, &mut k4)?;
    for i in 0..n {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(())
}

/// Integrates `y' = f(t, y)` over the schedule.
pub fn integrate<F>(f: F, x0: &[f64], sched: &Schedule, cfg: &SolverConfig) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    cfg.validate()?;
    if !(sched.tf >= sched.t0) {
        return Err(AttError::InvalidInput("integration end precedes start".into()));
    }
    if let Some(d) = sched.report_dt {
        if !(d > 0.0) {
            return Err(AttError::InvalidInput("reporting interval must be positive".into()));
        }
    }
    check_finite(sched.t0, x0)?;
    let mut ev = Eval { f, count: 0 };
    let mut traj = match cfg.kind {
        SolverKind::Rk4 => run_rk4(&mut ev, x0, sched, cfg)?,
        SolverKind::Abm => run_abm(&mut ev, x0, sched, cfg)?,
    };
    traj.stats.evaluations = ev.count;
    Ok(traj)
}

fn record(traj: &mut Trajectory, t: f64, y: &[f64]) {
    traj.t.push(t);
    traj.x.push(y.to_vec());
}

fn note_step(stats: &mut SolverStats, h: f64) {
    stats.steps += 1;
    if stats.min_step_used == 0.0 || h < stats.min_step_used {
        stats.min_step_used = h;
    }
    stats.max_step_used = stats.max_step_used.max(h);
}

fn run_rk4<F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>>(
    ev: &mut Eval<F>,
    x0: &[f64],
    sched: &Schedule,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    let n = x0.len();
    let mut traj = Trajectory::default();
    let mut tg = Targets::new(sched);
    let mut t = sched.t0;
    let mut y = x0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut next = vec![0.0; n];
    record(&mut traj, t, &y);
    while t < sched.tf {
        let target = tg.next();
        let (h, hit) = clip(t, cfg.step, target);
        let te = tg.end_eval(t, h, hit, target);
        ev.call(t, &y, &mut k1)?;
        rk4_step(ev, t, &y, &k1, h, te, &mut next)?;
        std::mem::swap(&mut y, &mut next);
        t = if hit { target } else { t + h };
        note_step(&mut traj.stats, h);
        let (rep, _) = tg.pass(t);
        if rep || sched.report_dt.is_none() {
            record(&mut traj, t, &y);
        }
    }
    Ok(traj)
}

const GL3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

/// Weights `w_j = int_{t}^{t+h} L_j(s) ds` of the Lagrange basis on `nodes`.
fn lagrange_weights(nodes: &[f64; 4], t: f64, h: f64) -> [f64; 4] {
    let mut w = [0.0; 4];
    for &(xi, wi) in &GL3 {
        let s = t + 0.5 * h * (1.0 + xi);
        for j in 0..4 {
            let mut l = 1.0;
            for m in 0..4 {
                if m != j {
                    l *= (s - nodes[m]) / (nodes[j] - nodes[m]);
                }
            }
            w[j] += 0.5 * h * wi * l;
        }
    }
    w
}

fn err_norm(y: &[f64], yn: &[f64], e: &[f64], rtol: f64, atol: f64) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..y.len() {
        let sc = atol + rtol * y[i].abs().max(yn[i].abs());
        m = m.max(e[i].abs() / sc);
    }
    m
}

fn run_abm<F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>>(
    ev: &mut Eval<F>,
    x0: &[f64],
    sched: &Schedule,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    let n = x0.len();
    let rtol = cfg.rel_tol;
    let atol = cfg.abs_tol();
    let mut traj = Trajectory::default();
    let mut tg = Targets::new(sched);
    let mut t = sched.t0;
    let mut y = x0.to_vec();
    let mut h = cfg.initial_step;
    // history, newest first: times and derivatives
    let mut ht: Vec<f64> = Vec::with_capacity(4);
    let mut hf: Vec<Vec<f64>> = Vec::with_capacity(4);
    let mut f0 = vec![0.0; n];
    let mut yp = vec![0.0; n];
    let mut yc = vec![0.0; n];
    let mut fp = vec![0.0; n];
    let mut fc = vec![0.0; n];
    let mut half = vec![0.0; n];
    let mut full = vec![0.0; n];
    let mut e = vec![0.0; n];
    let mut fh = vec![0.0; n];
    record(&mut traj, t, &y);
    ev.call(t, &y, &mut f0)?;
    ht.push(t);
    hf.push(f0.clone());
    while t < sched.tf {
        let target = tg.next();
        let (hs, hit) = clip(t, h, target);
        let te = tg.end_eval(t, hs, hit, target);
        let bootstrap = ht.len() < 4;
        let err;
        if bootstrap {
            // RK4 step doubling
            let fcur = hf[0].clone();
            rk4_step(ev, t, &y, &fcur, hs, te, &mut full)?;
            rk4_step(ev, t, &y, &fcur, 0.5 * hs, t + 0.5 * hs, &mut half)?;
            ev.call(t + 0.5 * hs, &half, &mut fh)?;
            rk4_step(ev, t + 0.5 * hs, &half, &fh, 0.5 * hs, te, &mut yc)?;
            for i in 0..n {
                e[i] = (yc[i] - full[i]) / 15.0;
            }
            err = err_norm(&y, &yc, &e, rtol, atol);
        } else {
            let nodes = [ht[0], ht[1], ht[2], ht[3]];
            let wp = lagrange_weights(&nodes, t, hs);
            for i in 0..n {
                yp[i] = y[i] + wp[0] * hf[0][i] + wp[1] * hf[1][i] + wp[2] * hf[2][i] + wp[3] * hf[3][i];
            }
            ev.call(te, &yp, &mut fp)?;
            let cnodes = [t + hs, ht[0], ht[1], ht[2]];
            let wc = lagrange_weights(&cnodes, t, hs);
            for i in 0..n {
                yc[i] = y[i] + wc[0] * fp[i] + wc[1] * hf[0][i] + wc[2] * hf[1][i] + wc[3] * hf[2][i];
                e[i] = 19.0 / 270.0 * (yc[i] - yp[i]);
            }
            err = err_norm(&y, &yc, &e, rtol, atol);
        }
        if !err.is_finite() {
            return Err(AttError::NonFinite { t: t + hs });
        }
        if err > 1.0 {
            traj.stats.rejected += 1;
            let fac = (0.9 * err.powf(-0.2)).clamp(0.1, 0.5);
            let hn = hs * fac;
            if hn < cfg.min_step {
                return Err(AttError::StepUnderflow { t, h: hn });
            }
            h = hn;
            continue;
        }
        // accept
        let tn = if hit { target } else { t + hs };
        ev.call(if te < tn { te } else { tn }, &yc, &mut fc)?;
        std::mem::swap(&mut y, &mut yc);
        t = tn;
        note_step(&mut traj.stats, hs);
        ht.insert(0, t);
        hf.insert(0, fc.clone());
        ht.truncate(4);
        hf.truncate(4);
        let fac = if err == 0.0 { 2.0 } else { (0.9 * err.powf(-0.2)).clamp(0.1, 2.0) };
        // a step shortened by a target keeps the nominal size unless the error asks for less
        h = if hs < h {
            if fac < 1.0 {
                hs * fac
            } else {
                h
            }
        } else {
            hs * fac
        };
        h = h.clamp(cfg.min_step, cfg.max_step);
        let (rep, brk) = tg.pass(t);
        if rep || sched.report_dt.is_none() {
            record(&mut traj, t, &y);
        }
        if brk {
            ht.clear();
            hf.clear();
            ev.call(t, &y, &mut f0)?;
            ht.push(t);
            hf.push(f0.clone());
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn decay(_t: f64, y: &[f64], o: &mut [f64]) -> Result<()> {
        o[0] = -y[0];
        Ok(())
    }

    #[test]
    fn rk4_exponential() {
        let tr = integrate(decay, &[1.0], &Schedule::new(0.0, 1.0, Some(0.1)), &SolverConfig::rk4(0.01)).unwrap();
        assert_eq!(tr.len(), 11);
        assert_relative_eq!(tr.t[10], 1.0);
        assert!((tr.x[10][0] - (-1.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn rk4_order() {
        let errs: Vec<f64> = [0.04, 0.02, 0.01]
            .iter()
            .map(|&h| {
                let tr = integrate(decay, &[1.0], &Schedule::new(0.0, 2.0, None), &SolverConfig::rk4(h)).unwrap();
                (tr.last().unwrap().1[0] - (-2.0f64).exp()).abs()
            })
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 3.9, "measured order {order}");
        }
    }

    #[test]
    fn zero_derivative_is_bit_exact() {
        let x0 = [0.1234567890123, -7.0, 1e-300];
        for cfg in [SolverConfig::rk4(0.01), SolverConfig::abm()] {
            let tr = integrate(
                |_t, _y: &[f64], o: &mut [f64]| {
                    o.fill(0.0);
                    Ok(())
                },
                &x0,
                &Schedule::new(0.0, 5.0, Some(1.0)),
                &cfg,
            )
            .unwrap();
            for x in &tr.x {
                assert_eq!(x.as_slice(), &x0);
            }
        }
    }

    #[test]
    fn abm_exponential_and_oscillator() {
        let tr = integrate(decay, &[1.0], &Schedule::new(0.0, 5.0, Some(0.5)), &SolverConfig::abm()).unwrap();
        assert!((tr.x.last().unwrap()[0] - (-5.0f64).exp()).abs() < 1e-7);
        let osc = |_t: f64, y: &[f64], o: &mut [f64]| {
            o[0] = y[1];
            o[1] = -4.0 * y[0];
            Ok(())
        };
        let cfg = SolverConfig {
            rel_tol: 1e-10,
            ..SolverConfig::abm()
        };
        let tr = integrate(osc, &[1.0, 0.0], &Schedule::new(0.0, 20.0, Some(1.0)), &cfg).unwrap();
        for (t, x) in tr.t.iter().zip(&tr.x) {
            assert!(
                (x[0] - (2.0 * t).cos()).abs() < 2e-7,
                "t = {t} err {} stats {:?}",
                (x[0] - (2.0 * t).cos()).abs(),
                tr.stats
            );
        }
    }

    #[test]
    fn abm_with_breakpoint_localizes_step() {
        // y' = 1 on [0, 0.5), 0 afterwards; the kink must not cost accuracy
        let f = |t: f64, _y: &[f64], o: &mut [f64]| {
            o[0] = if t < 0.5 { 1.0 } else { 0.0 };
            Ok(())
        };
        let s = Schedule::new(0.0, 1.0, Some(0.25)).with_breakpoints(vec![0.5]);
        let tr = integrate(f, &[0.0], &s, &SolverConfig::abm()).unwrap();
        assert!((tr.x.last().unwrap()[0] - 0.5).abs() < 1e-13);
        let tr = integrate(f, &[0.0], &s, &SolverConfig::rk4(0.03)).unwrap();
        assert!((tr.x.last().unwrap()[0] - 0.5).abs() < 1e-13);
    }

    #[test]
    fn variable_coefficients_are_exact_for_cubics() {
        let nodes = [0.0, -0.1, -0.35, -0.4];
        let w = lagrange_weights(&nodes, 0.0, 0.2);
        let f = |s: f64| 3.0 * s * s * s - s + 2.0;
        let approx: f64 = (0..4).map(|j| w[j] * f(nodes[j])).sum();
        let exact = 0.75 * 0.2f64.powi(4) - 0.5 * 0.04 + 0.4;
        assert_relative_eq!(approx, exact, epsilon = 1e-15);
    }

    #[test]
    fn errors_are_reported() {
        let nan = |_t: f64, _y: &[f64], o: &mut [f64]| {
            o[0] = f64::NAN;
            Ok(())
        };
        let e = integrate(nan, &[1.0], &Schedule::new(0.0, 1.0, None), &SolverConfig::rk4(0.1)).unwrap_err();
        assert!(matches!(e, AttError::NonFinite { .. }));
        let stiff = |_t: f64, y: &[f64], o: &mut [f64]| {
            o[0] = -1e7 * (y[0] - 1.0) + 1e6;
            Ok(())
        };
        let e = integrate(stiff, &[0.0], &Schedule::new(0.0, 1.0, None), &SolverConfig::abm()).unwrap_err();
        assert!(matches!(e, AttError::StepUnderflow { .. }), "{e:?}");
        let bad = SolverConfig {
            min_step: 1.0,
            ..SolverConfig::abm()
        };
        assert!(integrate(decay, &[1.0], &Schedule::new(0.0, 1.0, None), &bad).is_err());
    }

    #[test]
    fn trajectory_lookup() {
        let tr = integrate(decay, &[1.0], &Schedule::new(0.0, 1.0, Some(0.1)), &SolverConfig::rk4(0.01)).unwrap();
        let v = tr.at(0.52).unwrap()[0];
        assert_relative_eq!(v, (-0.5f64).exp(), epsilon = 1e-9);
    }
}

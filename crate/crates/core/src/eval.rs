//! Evaluation harness: per-instance power, CV and latency, the `r_test`
//! selection rule, and the aggregates reported for every method.

use std::time::Instant;

use crate::baselines::ccp::{ccp_solve, CcpConfig};
use crate::baselines::zf::zf_init;
use crate::decoder;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::qos::{self, Beamformer};
use crate::scenario::{watt_to_dbm, ChannelInstance, MODEL_POWER_UNIT_W};

/// Mean CV below which the smallest sufficient `r_test` is accepted.
pub const TARGET_CV: f64 = 0.01;
/// Instances with CV at or below this enter the mean-power aggregate.
pub const REPORT_CV: f64 = 0.05;
/// Instances with CV at or below this count as feasible.
pub const FEASIBLE_CV: f64 = 1e-3;
pub const DEFAULT_R_MAX: usize = 500;

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceRow {
    pub index: usize,
    pub power_w: f64,
    pub cv: f64,
    /// Wallclock of the method on this instance, excluding I/O.
    pub ms: f64,
}

impl InstanceRow {
    pub fn power_dbm(&self) -> f64 {
        watt_to_dbm(self.power_w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub rows: Vec<InstanceRow>,
    /// Constraint steps used at inference (zero for baselines).
    pub r_test: usize,
    /// Whether the mean-CV target was met by the chosen `r_test`.
    pub target_met: bool,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "index,power_w,power_dbm,cv,ms";
    pub const SUMMARY_HEADER: &'static str =
        "method,instances,r_test,target_met,mean_power_w,mean_power_dbm,mean_cv,feasible_rate,reported,median_ms";

    /// Mean power in watts over instances with CV ≤ [`REPORT_CV`], `NaN` if
    /// there are none.
    pub fn mean_power_w(&self) -> f64 {
        let kept: Vec<f64> = self.rows.iter().filter(|r| r.cv <= REPORT_CV).map(|r| r.power_w).collect();
        if kept.is_empty() {
            f64::NAN
        } else {
            kept.iter().sum::<f64>() / kept.len() as f64
        }
    }

    pub fn reported(&self) -> usize {
        self.rows.iter().filter(|r| r.cv <= REPORT_CV).count()
    }

    pub fn mean_cv(&self) -> f64 {
        self.rows.iter().map(|r| r.cv).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn feasible_rate(&self) -> f64 {
        self.rows.iter().filter(|r| r.cv <= FEASIBLE_CV).count() as f64 / self.rows.len().max(1) as f64
    }

    pub fn median_ms(&self) -> f64 {
        median(self.rows.iter().map(|r| r.ms).collect())
    }

    pub fn row_csv(r: &InstanceRow) -> String {
        format!("{},{},{},{},{}", r.index, r.power_w, r.power_dbm(), r.cv, r.ms)
    }

    pub fn summary_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.method,
            self.rows.len(),
            self.r_test,
            self.target_met,
            self.mean_power_w(),
            watt_to_dbm(self.mean_power_w()),
            self.mean_cv(),
            self.feasible_rate(),
            self.reported(),
            self.median_ms()
        )
    }
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Power (watts) and CV after every number of constraint steps.
#[derive(Clone, Debug)]
pub struct StepCurve {
    /// `power_w[r][i]` for instance `i` after `r` steps.
    pub power_w: Vec<Vec<f64>>,
    pub cv: Vec<Vec<f64>>,
}

impl StepCurve {
    pub fn mean_cv(&self, r: usize) -> f64 {
        let c = &self.cv[r];
        c.iter().sum::<f64>() / c.len().max(1) as f64
    }

    pub fn r_max(&self) -> usize {
        self.cv.len() - 1
    }

    /// Smallest `r` with mean CV below `target`; otherwise the `r` with the
    /// lowest mean CV, flagged as not meeting the target.
    pub fn select(&self, min_r: usize, target: f64) -> (usize, bool) {
        for r in min_r..=self.r_max() {
            if self.mean_cv(r) < target {
                return (r, true);
            }
        }
        let best = (min_r..=self.r_max())
            .min_by(|&a, &b| self.mean_cv(a).total_cmp(&self.mean_cv(b)))
            .unwrap_or(min_r);
        (best, false)
    }
}

fn check_instances(model: &Model, insts: &[ChannelInstance]) -> Result<()> {
    if insts.is_empty() {
        return Err(Error::Dataset("no instances to evaluate".into()));
    }
    for inst in insts {
        if inst.antennas() != model.antennas() {
            return Err(Error::InvalidInstance(format!(
                "checkpoint expects {} antennas, dataset has {}",
                model.antennas(),
                inst.antennas()
            )));
        }
    }
    Ok(())
}

/// Runs every instance from the network output through `r_max` constraint
/// steps, recording power and CV after each.
pub fn step_curve(model: &Model, insts: &[ChannelInstance], r_max: usize) -> Result<StepCurve> {
    check_instances(model, insts)?;
    let mut power_w = vec![Vec::with_capacity(insts.len()); r_max + 1];
    let mut cv = vec![Vec::with_capacity(insts.len()); r_max + 1];
    for inst in insts {
        let m = inst.to_model_units();
        let w0 = model.run_model_units(&m, 0)?;
        decoder::trajectory(&m, w0, model.decoder.eta, r_max, |r, w| {
            power_w[r].push(qos::total_power(w) * MODEL_POWER_UNIT_W);
            cv[r].push(qos::cv(&m, w)?);
            Ok(true)
        })?;
    }
    Ok(StepCurve { power_w, cv })
}

/// Evaluates a trained model: picks `r_test` (at least the training depth,
/// at most `r_max`) and reports per-instance results at that depth, with
/// wallclock timing of the full feed-forward pass.
pub fn evaluate_model(model: &Model, insts: &[ChannelInstance], r_max: usize) -> Result<EvalReport> {
    let min_r = model.decoder.r_train.min(r_max);
    let curve = step_curve(model, insts, r_max)?;
    let (r_test, target_met) = curve.select(min_r, TARGET_CV);
    if !target_met {
        log::warn!(
            "mean CV target {TARGET_CV} not reached within {r_max} steps; best {:.4} at r = {r_test}",
            curve.mean_cv(r_test)
        );
    }
    evaluate_model_at(model, insts, r_test, target_met, Some(&curve))
}

/// Report at a fixed number of constraint steps.
pub fn evaluate_model_at(
    model: &Model,
    insts: &[ChannelInstance],
    r_test: usize,
    target_met: bool,
    curve: Option<&StepCurve>,
) -> Result<EvalReport> {
    check_instances(model, insts)?;
    let mut rows = Vec::with_capacity(insts.len());
    for (i, inst) in insts.iter().enumerate() {
        let start = Instant::now();
        let w = model.infer(inst, r_test)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        let (power_w, cv) = match curve {
            Some(c) if r_test <= c.r_max() => (c.power_w[r_test][i], c.cv[r_test][i]),
            _ => (qos::total_power(&w), qos::cv(inst, &w)?),
        };
        rows.push(InstanceRow { index: i, power_w, cv, ms });
    }
    Ok(EvalReport {
        method: model.kind().to_string(),
        rows,
        r_test,
        target_met,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    Zf,
    Ccp,
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zf" => Ok(Baseline::Zf),
            "ccp" => Ok(Baseline::Ccp),
            _ => Err(Error::InvalidConfig(format!("unknown baseline {s:?} (expected zf or ccp)"))),
        }
    }
}

/// Solves one raw instance with a baseline; returns the beamformer in watts.
pub fn solve_baseline(which: Baseline, inst: &ChannelInstance, ccp: &CcpConfig) -> Result<Beamformer> {
    let m = inst.to_model_units();
    let zf = zf_init(&m)?;
    let w = match which {
        Baseline::Zf => zf.w,
        Baseline::Ccp => ccp_solve(&m, &zf.w, ccp)?.w,
    };
    Ok(w.model_to_watts())
}

pub fn evaluate_baseline(which: Baseline, insts: &[ChannelInstance], ccp: &CcpConfig) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(insts.len());
    for (i, inst) in insts.iter().enumerate() {
        let start = Instant::now();
        let w = solve_baseline(which, inst, ccp)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        rows.push(InstanceRow {
            index: i,
            power_w: qos::total_power(&w),
            cv: qos::cv(inst, &w)?,
            ms,
        });
    }
    Ok(EvalReport {
        method: match which {
            Baseline::Zf => "zf",
            Baseline::Ccp => "ccp",
        }
        .to_string(),
        rows,
        r_test: 0,
        target_met: true,
    })
}

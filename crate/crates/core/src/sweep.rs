//! Generalization sweeps: one trained checkpoint evaluated while the number
//! of users, the number of groups or the SINR target varies.

use crate::error::{Error, Result};
use crate::eval::{evaluate_model, EvalReport};
use crate::model::Model;
use crate::scenario::{db_to_lin, sample_instance, ChannelInstance, ScenarioConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Total users, split as evenly as possible over the base groups.
    Users,
    /// Number of groups, each with the base scenario's first group size.
    Groups,
    /// Common SINR target in dB, applied to the base scenario's channels.
    Gamma,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K" | "k" | "users" => Ok(Axis::Users),
            "M" | "m" | "groups" => Ok(Axis::Groups),
            "gamma" | "sinr" => Ok(Axis::Gamma),
            _ => Err(Error::InvalidConfig(format!("unknown sweep axis {s:?} (expected K, M or gamma)"))),
        }
    }
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Users => "K",
            Axis::Groups => "M",
            Axis::Gamma => "gamma_db",
        }
    }
}

fn count(axis: Axis, value: f64) -> Result<usize> {
    if value.fract() != 0.0 || value < 1.0 {
        return Err(Error::InvalidConfig(format!("{} must be a positive integer, got {value}", axis.name())));
    }
    Ok(value as usize)
}

/// Scenario at one sweep point. For [`Axis::Gamma`] the channels stay those
/// of `base`; only the targets change, see [`sweep_instances`].
pub fn scenario_at(base: &ScenarioConfig, axis: Axis, value: f64) -> Result<ScenarioConfig> {
    let mut cfg = base.clone();
    match axis {
        Axis::Users => {
            let k = count(axis, value)?;
            let m = base.groups();
            if k < m {
                return Err(Error::InvalidConfig(format!("K = {k} cannot fill {m} groups")));
            }
            cfg.group_sizes = (0..m).map(|g| k / m + usize::from(g < k % m)).collect();
        }
        Axis::Groups => {
            let m = count(axis, value)?;
            let per = *base.group_sizes.first().ok_or_else(|| Error::InvalidConfig("base scenario has no groups".into()))?;
            let target = *base.sinr_target_db.first().unwrap_or(&10.0);
            cfg.group_sizes = vec![per; m];
            cfg.sinr_target_db = vec![target; m];
        }
        Axis::Gamma => {
            if !value.is_finite() {
                return Err(Error::InvalidConfig(format!("SINR target must be finite, got {value}")));
            }
            cfg.sinr_target_db = vec![value; base.groups()];
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The `n` instances evaluated at one sweep point, in raw units.
pub fn sweep_instances(base: &ScenarioConfig, axis: Axis, value: f64, n: usize) -> Result<Vec<ChannelInstance>> {
    let cfg = scenario_at(base, axis, value)?;
    (0..n as u64)
        .map(|i| match axis {
            Axis::Gamma => {
                let inst = sample_instance(base, i)?;
                inst.with_gamma(vec![db_to_lin(value); inst.groups()])
            }
            _ => sample_instance(&cfg, i),
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub value: f64,
    pub report: EvalReport,
}

impl SweepRow {
    pub fn header(axis: Axis) -> String {
        format!("{},{}", axis.name(), EvalReport::SUMMARY_HEADER)
    }

    pub fn csv(&self) -> String {
        format!("{},{}", self.value, self.report.summary_csv())
    }
}

/// Evaluates `model` at every value of the axis on `n` instances each.
pub fn sweep(
    model: &Model,
    base: &ScenarioConfig,
    axis: Axis,
    values: &[f64],
    n: usize,
    r_max: usize,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() || n == 0 {
        return Err(Error::InvalidConfig("sweep needs at least one value and one instance".into()));
    }
    values
        .iter()
        .map(|&value| {
            let insts = sweep_instances(base, axis, value, n)?;
            Ok(SweepRow {
                value,
                report: evaluate_model(model, &insts, r_max)?,
            })
        })
        .collect()
}

/// Parses `a..b` (inclusive, step 1), `a..b:step`, or a comma list.
pub fn parse_values(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidConfig(format!("bad sweep range {spec:?}"));
    if let Some((lo, rest)) = spec.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((h, s)) => (h, s.trim().parse::<f64>().map_err(|_| bad())?),
            None => (rest, 1.0),
        };
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        if !(step > 0.0) || hi < lo {
            return Err(bad());
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| lo + step * i as f64).collect());
    }
    spec.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| bad())).collect()
}

use abx_core::cramer_rao::ModelFamily;
use abx_core::{
    example_sign_inconsistent_alt_with, example_sign_inconsistent_null_with, logit_scenario,
    meanfield_family, LogitFamily, LogitLimits, LogitParams, MeanFieldFamily, PlatformModel,
    Scaling, TauShape, ValidationMode,
};

use crate::args::{ScalingArg, ScenarioArgs, ScenarioId, TauArg};
use crate::error::{invalid, CliError};

pub const DEFAULT_A: f64 = 0.5;

fn tau_shape(t: TauArg) -> TauShape {
    match t {
        TauArg::Linear => TauShape::Linear,
        TauArg::Constant => TauShape::Constant,
    }
}

fn scaling(s: ScalingArg) -> Scaling {
    match s {
        ScalingArg::Fixed => Scaling::Fixed,
        ScalingArg::PerListing => Scaling::PerListing,
    }
}

impl ScenarioArgs {
    pub fn allocation(&self) -> f64 {
        self.a.unwrap_or(DEFAULT_A)
    }

    /// Scenario label for output metadata.
    pub fn label(&self, fallback: ScenarioId) -> String {
        match (&self.model, self.scenario) {
            (Some(p), _) => p.display().to_string(),
            (None, id) => format!("{:?}", id.unwrap_or(fallback)).to_lowercase(),
        }
    }

    fn reject_unused(&self, id: &str, names: &[&str]) -> Result<(), CliError> {
        for &name in names {
            let set = match name {
                "lambda-bar" => self.lambda_bar.is_some(),
                "tau" => self.tau.is_some(),
                "tau-bar" => self.tau_bar.is_some(),
                "v0" => self.v0.is_some(),
                "delta" => self.delta.is_some(),
                "eps-bar" => self.eps_bar.is_some(),
                "arrivals" => self.arrivals.is_some(),
                "outside-option" => self.outside_option.is_some(),
                "K" => self.k.is_some(),
                _ => false,
            };
            if set {
                return invalid(format!("--{name} does not apply to {id}"));
            }
        }
        Ok(())
    }

    fn logit_params(&self) -> LogitParams {
        let d = LogitParams::default();
        LogitParams {
            k: self.k.unwrap_or(d.k),
            lambda_bar: self.lambda_bar.unwrap_or(d.lambda_bar),
            tau: self.tau.map(tau_shape).unwrap_or(d.tau),
            tau_bar: self.tau_bar.unwrap_or(d.tau_bar),
            v0: self.v0.unwrap_or(d.v0),
            delta: self.delta.unwrap_or(d.delta),
            eps_bar: self.eps_bar.unwrap_or(d.eps_bar),
            a: self.allocation(),
            arrivals: self.arrivals.map(scaling).unwrap_or(d.arrivals),
            outside_option: self.outside_option.map(scaling).unwrap_or(d.outside_option),
        }
    }

    fn logit_limits(&self) -> Result<LogitLimits, CliError> {
        self.reject_unused("meanfield", &["tau", "arrivals", "outside-option"])?;
        let d = LogitLimits::default();
        Ok(LogitLimits {
            lambda_bar: self.lambda_bar.unwrap_or(d.lambda_bar),
            tau_bar: self.tau_bar.unwrap_or(d.tau_bar),
            v0: self.v0.unwrap_or(d.v0),
            delta: self.delta.unwrap_or(d.delta),
            eps_bar: self.eps_bar.unwrap_or(d.eps_bar),
        })
    }

    /// Builds the platform model; `fallback` is used when neither a scenario
    /// nor a model document is given.
    pub fn build(&self, fallback: ScenarioId) -> Result<PlatformModel, CliError> {
        let model = match (&self.model, self.scenario.unwrap_or(fallback)) {
            (Some(path), _) => {
                self.reject_unused(
                    "a model document",
                    &[
                        "K",
                        "lambda-bar",
                        "tau",
                        "tau-bar",
                        "v0",
                        "delta",
                        "eps-bar",
                        "arrivals",
                        "outside-option",
                    ],
                )?;
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Validation(format!("cannot read model {}: {e}", path.display()))
                })?;
                PlatformModel::from_json(&text)?
            }
            (None, ScenarioId::Logit) => logit_scenario(&self.logit_params())?,
            (None, ScenarioId::Example1) => {
                self.reject_unused(
                    "example1",
                    &[
                        "lambda-bar",
                        "tau-bar",
                        "v0",
                        "delta",
                        "eps-bar",
                        "arrivals",
                        "outside-option",
                    ],
                )?;
                let tau = self.tau.map(tau_shape).unwrap_or(TauShape::Constant);
                example_sign_inconsistent_null_with(self.k.unwrap_or(100), tau)?
            }
            (None, ScenarioId::Example2) => {
                self.reject_unused(
                    "example2",
                    &[
                        "lambda-bar",
                        "tau-bar",
                        "v0",
                        "delta",
                        "eps-bar",
                        "arrivals",
                        "outside-option",
                    ],
                )?;
                if let Some(k) = self.k {
                    if k != 30 {
                        return invalid(format!(
                            "example2 is defined for K = 30 only, got K = {k}"
                        ));
                    }
                }
                example_sign_inconsistent_alt_with(
                    self.tau.map(tau_shape).unwrap_or(TauShape::Constant),
                )?
            }
            (None, ScenarioId::Meanfield) => {
                meanfield_family(&self.logit_limits()?, self.k.unwrap_or(200))?
            }
        };
        let model = if self.aa { model.to_aa() } else { model };
        if self.strict {
            model.validate(ValidationMode::Strict)?;
        }
        Ok(model)
    }

    /// Family indexed by `K`, for the growth figures.
    pub fn family(&self, fallback: ScenarioId) -> Result<Box<dyn ModelFamily>, CliError> {
        if self.model.is_some() {
            return invalid("K sweeps need a built-in scenario, not a model document");
        }
        if self.aa {
            return invalid("--aa is not supported for K sweeps");
        }
        match self.scenario.unwrap_or(fallback) {
            ScenarioId::Logit => {
                let p = self.logit_params();
                // fail early on bad parameters
                logit_scenario(&LogitParams { k: 1, ..p })?;
                Ok(Box::new(LogitFamily(p)))
            }
            ScenarioId::Meanfield => Ok(Box::new(MeanFieldFamily::new(self.logit_limits()?)?)),
            other => invalid(
                format!("K sweeps are defined for logit and meanfield, not {other:?}")
                    .to_lowercase(),
            ),
        }
    }

    /// Logit parameters with flags applied, for parameter sweeps.
    pub fn sweep_base(&self) -> Result<LogitParams, CliError> {
        match (
            self.model.is_some(),
            self.scenario.unwrap_or(ScenarioId::Logit),
        ) {
            (false, ScenarioId::Logit) => Ok(self.logit_params()),
            _ => invalid("parameter sweeps are defined for the logit scenario only"),
        }
    }
}

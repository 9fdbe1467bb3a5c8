//! Flat key = value run configuration with strict unknown-key rejection.

use std::fmt;

use pdd_ssca::apps::{CmacInstance, ThpInstance};
use pdd_ssca::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Cmac,
    Thp,
    Toy,
}

impl Experiment {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "cmac" => Ok(Experiment::Cmac),
            "thp" => Ok(Experiment::Thp),
            "toy" => Ok(Experiment::Toy),
            other => Err(ConfigError(format!(
                "unknown experiment '{other}' (expected cmac, thp, or toy)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::Cmac => "cmac",
            Experiment::Thp => "thp",
            Experiment::Toy => "toy",
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Fully resolved run configuration; every field has a default.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub solver: SolverConfig,
    pub cmac_users: usize,
    /// Shared per-user average power cap P (linear scale).
    pub cmac_power_cap: f64,
    pub cmac_interference_cap: f64,
    pub thp_antennas: usize,
    pub thp_rf_chains: usize,
    pub thp_users: usize,
    pub thp_paths: usize,
    pub thp_rate_target: f64,
    /// Unrolled layers J of the short-term solver (thp and toy).
    pub layers: usize,
    pub toy_dim: usize,
    pub run_baselines: bool,
    pub emit_plot_data: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let cmac = CmacInstance::default();
        let thp = ThpInstance::reduced();
        RunConfig {
            experiment: Experiment::Cmac,
            solver: SolverConfig::default(),
            cmac_users: cmac.users,
            cmac_power_cap: cmac.power_caps[0],
            cmac_interference_cap: cmac.interference_cap,
            thp_antennas: thp.antennas,
            thp_rf_chains: thp.rf_chains,
            thp_users: thp.users,
            thp_paths: thp.paths,
            thp_rate_target: thp.rate_targets[0],
            layers: 5,
            toy_dim: 2,
            run_baselines: false,
            emit_plot_data: true,
        }
    }
}

impl RunConfig {
    pub fn cmac_instance(&self) -> CmacInstance {
        CmacInstance {
            users: self.cmac_users,
            power_caps: vec![self.cmac_power_cap; self.cmac_users],
            interference_cap: self.cmac_interference_cap,
            ..CmacInstance::default()
        }
    }

    pub fn thp_instance(&self) -> ThpInstance {
        ThpInstance {
            antennas: self.thp_antennas,
            rf_chains: self.thp_rf_chains,
            users: self.thp_users,
            paths: self.thp_paths,
            rate_targets: vec![self.thp_rate_target; self.thp_users],
        }
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
            value
                .parse()
                .map_err(|_| ConfigError(format!("invalid value '{value}' for key '{key}'")))
        }
        match key {
            "experiment" => self.experiment = Experiment::parse(value)?,
            "solver.batch_size" => self.solver.batch_size = num(key, value)?,
            "solver.max_iters" => self.solver.max_iters = num(key, value)?,
            "solver.feas_tolerance" => self.solver.feas_tolerance = num(key, value)?,
            "solver.stop_tolerance" => self.solver.stop_tolerance = num(key, value)?,
            "solver.seed" => self.solver.seed = num(key, value)?,
            "solver.tau" => self.solver.tau = num(key, value)?,
            "solver.eval_batch" => self.solver.eval_batch = num(key, value)?,
            "schedule.rho_scale" => self.solver.schedule.rho_scale = num(key, value)?,
            "schedule.rho_shift" => self.solver.schedule.rho_shift = num(key, value)?,
            "schedule.rho_exponent" => self.solver.schedule.rho_exponent = num(key, value)?,
            "schedule.gamma_scale" => self.solver.schedule.gamma_scale = num(key, value)?,
            "schedule.gamma_shift" => self.solver.schedule.gamma_shift = num(key, value)?,
            "cmac.users" => self.cmac_users = num(key, value)?,
            "cmac.power_cap" => self.cmac_power_cap = num(key, value)?,
            "cmac.interference_cap" => self.cmac_interference_cap = num(key, value)?,
            "thp.antennas" => self.thp_antennas = num(key, value)?,
            "thp.rf_chains" => self.thp_rf_chains = num(key, value)?,
            "thp.users" => self.thp_users = num(key, value)?,
            "thp.paths" => self.thp_paths = num(key, value)?,
            "thp.rate_target" => self.thp_rate_target = num(key, value)?,
            "solver.layers" => self.layers = num(key, value)?,
            "toy.dim" => self.toy_dim = num(key, value)?,
            "run.baselines" => self.run_baselines = num(key, value)?,
            "run.emit_plot_data" => self.emit_plot_data = num(key, value)?,
            other => return Err(ConfigError(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Canonical key = value listing of the resolved configuration; this is
    /// the hashed provenance record and the `report` subcommand's input.
    pub fn resolved_pairs(&self) -> Vec<(String, String)> {
        let s = &self.solver;
        let pairs: Vec<(&str, String)> = vec![
            ("experiment", self.experiment.as_str().into()),
            ("solver.batch_size", s.batch_size.to_string()),
            ("solver.max_iters", s.max_iters.to_string()),
            ("solver.feas_tolerance", s.feas_tolerance.to_string()),
            ("solver.stop_tolerance", s.stop_tolerance.to_string()),
            ("solver.seed", s.seed.to_string()),
            ("solver.tau", s.tau.to_string()),
            ("solver.eval_batch", s.eval_batch.to_string()),
            ("schedule.rho_scale", s.schedule.rho_scale.to_string()),
            ("schedule.rho_shift", s.schedule.rho_shift.to_string()),
            ("schedule.rho_exponent", s.schedule.rho_exponent.to_string()),
            ("schedule.gamma_scale", s.schedule.gamma_scale.to_string()),
            ("schedule.gamma_shift", s.schedule.gamma_shift.to_string()),
            ("cmac.users", self.cmac_users.to_string()),
            ("cmac.power_cap", self.cmac_power_cap.to_string()),
            ("cmac.interference_cap", self.cmac_interference_cap.to_string()),
            ("thp.antennas", self.thp_antennas.to_string()),
            ("thp.rf_chains", self.thp_rf_chains.to_string()),
            ("thp.users", self.thp_users.to_string()),
            ("thp.paths", self.thp_paths.to_string()),
            ("thp.rate_target", self.thp_rate_target.to_string()),
            ("solver.layers", self.layers.to_string()),
            ("toy.dim", self.toy_dim.to_string()),
            ("run.baselines", self.run_baselines.to_string()),
            ("run.emit_plot_data", self.emit_plot_data.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

/// Parse a flat config file: `key = value` lines, '#' comments, blank lines.
pub fn parse_config(text: &str, config: &mut RunConfig) -> Result<(), ConfigError> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("line {}: expected 'key = value'", lineno + 1)))?;
        config.apply(key.trim(), value.trim())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects() {
        let mut c = RunConfig::default();
        parse_config("experiment = thp\nsolver.batch_size = 8 # comment\n", &mut c).unwrap();
        assert_eq!(c.experiment, Experiment::Thp);
        assert_eq!(c.solver.batch_size, 8);
        let err = parse_config("bogus.key = 1\n", &mut c).unwrap_err();
        assert!(err.0.contains("bogus.key"), "{err}");
    }
}

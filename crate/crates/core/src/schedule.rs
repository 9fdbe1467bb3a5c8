use crate::error::Error;

/// Diminishing step-size pair
///   ρ^t = rho_scale / (rho_shift + t)^rho_exponent
///   γ^t = gamma_scale / (gamma_shift + t)
/// each clipped into (0, 1]. With the defaults γ^t/ρ^t → 0 as t → ∞.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSchedule {
    pub rho_scale: f64,
    pub rho_shift: f64,
    pub rho_exponent: f64,
    pub gamma_scale: f64,
    pub gamma_shift: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule {
            rho_scale: 10.0,
            rho_shift: 10.0,
            rho_exponent: 0.9,
            gamma_scale: 15.0,
            gamma_shift: 15.0,
        }
    }
}

impl StepSchedule {
    pub fn validate(&self) -> Result<(), Error> {
        let ok = self.rho_scale > 0.0
            && self.rho_shift > 0.0
            && self.rho_exponent > 0.0
            && self.gamma_scale > 0.0
            && self.gamma_shift > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("schedule parameters must be strictly positive".into()))
        }
    }

    /// (ρ^t, γ^t) after clipping. Raw values above 1 clip to 1; ρ = 1 simply
    /// resets the surrogate tracker to the current batch average.
    pub fn step_values(&self, t: usize) -> (f64, f64) {
        let t = t as f64;
        let rho = self.rho_scale / (self.rho_shift + t).powf(self.rho_exponent);
        let gamma = self.gamma_scale / (self.gamma_shift + t);
        (rho.min(1.0), gamma.min(1.0))
    }
}

//! Two-timescale hybrid precoding. A BS with M antennas and S RF chains
//! serves K single-antenna users through F(θ)·g_k, where the analog phases θ
//! adapt to channel statistics (long-term) and the digital precoder G to the
//! instantaneous channel (short-term). Transmit power E[Tr(F G Gᴴ Fᴴ)] is
//! minimized subject to per-user ergodic rate targets E[r_k] ≥ γ_k, with
//!   r_k = log d_k − log(d_k − |t_kk|²),  t_ki = (Fᴴh_k)ᴴ g_i,
//!   d_k = Σ_i |t_ki|² + 1.
//! Channels follow an L-path geometric model over a half-wavelength ULA.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::apps::normal_pair;
use crate::problem::{BoxDomain, GEval, ProblemDefinition, State};
use crate::shortterm::wmmse::{pack_g, theta_grad, unpack_channels, unpack_f, unpack_g};

type CVec = nalgebra::DVector<Complex64>;

#[derive(Debug, Clone)]
pub struct ThpInstance {
    pub antennas: usize,
    pub rf_chains: usize,
    pub users: usize,
    pub paths: usize,
    /// Per-user ergodic rate targets γ_k (nats).
    pub rate_targets: Vec<f64>,
}

impl ThpInstance {
    /// M = 16, S = K = 2, L = 3, γ_k = 1.
    pub fn reduced() -> Self {
        ThpInstance { antennas: 16, rf_chains: 2, users: 2, paths: 3, rate_targets: vec![1.0; 2] }
    }
}

pub struct ThpProblem {
    instance: ThpInstance,
}

pub fn thp_problem(instance: ThpInstance) -> ThpProblem {
    assert_eq!(instance.users, instance.rate_targets.len());
    ThpProblem { instance }
}

impl ThpProblem {
    pub fn instance(&self) -> &ThpInstance {
        &self.instance
    }
}

/// Stacked real gradient [∂/∂Re; ∂/∂Im] from complex cotangent columns c_k
/// under df = 2 Re(c_kᴴ dg_k).
fn pack_real_grad(cols: &[CVec]) -> Vec<f64> {
    let doubled: Vec<CVec> = cols.iter().map(|c| c * Complex64::new(2.0, 0.0)).collect();
    pack_g(&doubled)
}

/// Per-user rates r_k at (θ, G, h).
pub fn thp_rates(instance: &ThpInstance, theta: &[f64], y: &[f64], xi: &State) -> Vec<f64> {
    let f = unpack_f(theta, instance.antennas, instance.rf_chains);
    let h = unpack_channels(xi, instance.users, instance.antennas);
    let g = unpack_g(y, instance.rf_chains, instance.users);
    (0..instance.users)
        .map(|k| {
            let q = f.adjoint() * &h[k];
            let t: Vec<Complex64> = g.iter().map(|gi| q.dotc(gi)).collect();
            let d = t.iter().map(|v| v.norm_sqr()).sum::<f64>() + 1.0;
            let e = d - t[k].norm_sqr();
            d.ln() - e.ln()
        })
        .collect()
}

impl ProblemDefinition for ThpProblem {
    fn dim_x(&self) -> usize {
        self.instance.antennas * self.instance.rf_chains
    }

    fn dim_y(&self) -> usize {
        2 * self.instance.rf_chains * self.instance.users
    }

    fn num_long(&self) -> usize {
        self.instance.users
    }

    fn domain_x(&self) -> BoxDomain {
        let four_pi = 4.0 * std::f64::consts::PI;
        BoxDomain::uniform(self.dim_x(), -four_pi, four_pi)
    }

    fn domain_y(&self) -> BoxDomain {
        BoxDomain::uniform(self.dim_y(), -1e3, 1e3)
    }

    fn sample_g(&self, i: usize, x: &[f64], y: &[f64], xi: &State) -> GEval {
        let inst = &self.instance;
        let f = unpack_f(x, inst.antennas, inst.rf_chains);
        let h = unpack_channels(xi, inst.users, inst.antennas);
        let g = unpack_g(y, inst.rf_chains, inst.users);
        if i == 0 {
            // transmit power Σ_k ‖F g_k‖²
            let value: f64 = g.iter().map(|gk| (&f * gk).norm_squared()).sum();
            let fhf = f.adjoint() * &f;
            let cols: Vec<CVec> = g.iter().map(|gk| &fhf * gk).collect();
            // F̄ = 2 F G Gᴴ under dL = Re tr(F̄ᴴ dF)
            let mut fbar = nalgebra::DMatrix::<Complex64>::zeros(inst.antennas, inst.rf_chains);
            for gk in &g {
                fbar += (&f * gk) * gk.adjoint() * Complex64::new(2.0, 0.0);
            }
            GEval { value, grad_x: theta_grad(&fbar, &f), grad_y: pack_real_grad(&cols) }
        } else {
            let k = i - 1;
            let q = f.adjoint() * &h[k];
            let t: Vec<Complex64> = g.iter().map(|gi| q.dotc(gi)).collect();
            let d = t.iter().map(|v| v.norm_sqr()).sum::<f64>() + 1.0;
            let e = d - t[k].norm_sqr();
            let value = inst.rate_targets[k] - (d.ln() - e.ln());
            // dr = 2 Re(t̄_i^* dt_i): t̄_k = t_k/d, t̄_i = t_i (1/d − 1/e)
            let tbar: Vec<Complex64> = (0..inst.users)
                .map(|ii| {
                    if ii == k {
                        t[k] / Complex64::new(d, 0.0)
                    } else {
                        t[ii] * Complex64::new(1.0 / d - 1.0 / e, 0.0)
                    }
                })
                .collect();
            // t_i = qᴴ g_i: ḡ_i = −q t̄_i, q̄ = −Σ_i g_i t̄_i^*
            let cols: Vec<CVec> = tbar.iter().map(|tb| &q * (-tb)).collect();
            let mut qbar = CVec::zeros(inst.rf_chains);
            for (gi, tb) in g.iter().zip(&tbar) {
                qbar += gi * (-tb.conj());
            }
            // q = Fᴴ h_k: F̄ = 2 h_k q̄ᴴ
            let fbar = &h[k] * qbar.adjoint() * Complex64::new(2.0, 0.0);
            GEval { value, grad_x: theta_grad(&fbar, &f), grad_y: pack_real_grad(&cols) }
        }
    }

    fn draw_state(&self, rng: &mut ChaCha8Rng) -> State {
        let inst = &self.instance;
        let (m, k, l) = (inst.antennas, inst.users, inst.paths);
        let mut xi = vec![0.0; 2 * k * m];
        let scale = 1.0 / (l as f64).sqrt();
        for kk in 0..k {
            let mut h = vec![Complex64::new(0.0, 0.0); m];
            for _ in 0..l {
                let (re, im) = normal_pair(rng);
                let alpha = Complex64::new(re, im) / Complex64::new(2.0_f64.sqrt(), 0.0);
                let phi: f64 = rng.gen::<f64>() * std::f64::consts::PI - std::f64::consts::FRAC_PI_2;
                let psi = std::f64::consts::PI * phi.sin();
                for (mm, hm) in h.iter_mut().enumerate() {
                    *hm += alpha * Complex64::from_polar(scale, psi * mm as f64);
                }
            }
            for mm in 0..m {
                xi[kk * m + mm] = h[mm].re;
                xi[k * m + kk * m + mm] = h[mm].im;
            }
        }
        xi
    }
}

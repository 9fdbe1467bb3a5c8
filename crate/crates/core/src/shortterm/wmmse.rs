//! WMMSE block sweeps for the hybrid-beamforming short-term problem
//!   min_G  Tr(F G Gᴴ Fᴴ) − Σ_k λ_k r_k(θ, G, H),
//! via the weighted-MMSE reformulation
//!   min_{w,u,G}  Tr(F G Gᴴ Fᴴ) + Σ_k λ_k (w_k e_k − log w_k).
//!
//! One layer performs exactly one block sweep u → w → G, each block being the
//! exact minimizer of the reformulated objective given the other blocks, so
//! the objective is nonincreasing per sweep and fixed points are stationary
//! for the original problem. All complex quantities cross the layer boundary
//! as stacked reals [Re; Im]; the reverse pass is hand-derived, including the
//! Hermitian-solve adjoint of the G update.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::Error;
use crate::problem::State;
use crate::shortterm::ShortTermSolver;
use crate::unroll::{AdjointSeeds, LayerAdjoint};

type CMat = DMatrix<Complex64>;
type CVec = DVector<Complex64>;

/// F from the phase vector: F_{m,s} = e^{jθ_{m,s}}, θ indexed m·S + s.
pub(crate) fn unpack_f(theta: &[f64], m: usize, s: usize) -> CMat {
    CMat::from_fn(m, s, |mm, ss| Complex64::from_polar(1.0, theta[mm * s + ss]))
}

/// Per-user channels h_k from the stacked state [Re row-major; Im row-major],
/// H being K×M with rows h_kᴴ's conjugates... rows store h_k directly.
pub(crate) fn unpack_channels(xi: &[f64], k: usize, m: usize) -> Vec<CVec> {
    (0..k)
        .map(|kk| {
            CVec::from_fn(m, |mm, _| {
                Complex64::new(xi[kk * m + mm], xi[k * m + kk * m + mm])
            })
        })
        .collect()
}

/// Digital precoder columns g_k from stacked y = [Re col-major; Im col-major].
pub(crate) fn unpack_g(y: &[f64], s: usize, k: usize) -> Vec<CVec> {
    (0..k)
        .map(|kk| {
            CVec::from_fn(s, |ss, _| Complex64::new(y[kk * s + ss], y[s * k + kk * s + ss]))
        })
        .collect()
}

pub(crate) fn pack_g(g: &[CVec]) -> Vec<f64> {
    let (k, s) = (g.len(), g[0].len());
    let mut y = vec![0.0; 2 * s * k];
    for (kk, col) in g.iter().enumerate() {
        for ss in 0..s {
            y[kk * s + ss] = col[ss].re;
            y[s * k + kk * s + ss] = col[ss].im;
        }
    }
    y
}

/// θ-gradient from an F-cotangent under dL = Re tr(F̄ᴴ dF), dF = iF ∘ dθ.
pub(crate) fn theta_grad(fbar: &CMat, f: &CMat) -> Vec<f64> {
    let (m, s) = (f.nrows(), f.ncols());
    let mut out = vec![0.0; m * s];
    for mm in 0..m {
        for ss in 0..s {
            out[mm * s + ss] = -(fbar[(mm, ss)].conj() * f[(mm, ss)]).im;
        }
    }
    out
}

/// Hermitian positive-definite solve with an ε-ridge fallback.
fn hermitian_solve(mat: &CMat, rhs: &CVec) -> CVec {
    if let Some(chol) = mat.clone().cholesky() {
        return chol.solve(rhs);
    }
    let mut ridged = mat.clone();
    let mut eps = 1e-12;
    loop {
        for i in 0..ridged.nrows() {
            ridged[(i, i)] += Complex64::new(eps, 0.0);
        }
        if let Some(chol) = ridged.clone().cholesky() {
            return chol.solve(rhs);
        }
        eps *= 10.0;
        if eps > 1.0 {
            return rhs.clone() * Complex64::new(0.0, 0.0);
        }
    }
}

/// One full block sweep at fixed (F, h, λ) from the previous G.
struct Sweep {
    q: Vec<CVec>,       // q_k = Fᴴ h_k
    t: Vec<Vec<Complex64>>, // t_{k,i} = q_kᴴ g_i^{prev}
    d: Vec<f64>,        // Σ_i |t_{k,i}|² + 1
    u: Vec<Complex64>,
    w: Vec<f64>,
    mmat: CMat,         // FᴴF + Σ_m λ_m w_m |u_m|² q_m q_mᴴ
    g: Vec<CVec>,       // updated columns
}

fn forward_sweep(f: &CMat, h: &[CVec], lambda: &[f64], g_prev: &[CVec]) -> Sweep {
    let k = h.len();
    let s = f.ncols();
    let q: Vec<CVec> = h.iter().map(|hk| f.adjoint() * hk).collect();
    let t: Vec<Vec<Complex64>> =
        (0..k).map(|kk| (0..k).map(|i| q[kk].dotc(&g_prev[i])).collect()).collect();
    let d: Vec<f64> =
        (0..k).map(|kk| t[kk].iter().map(|v| v.norm_sqr()).sum::<f64>() + 1.0).collect();
    let u: Vec<Complex64> = (0..k).map(|kk| t[kk][kk] / d[kk]).collect();
    let w: Vec<f64> = (0..k).map(|kk| 1.0 / (1.0 - (u[kk].conj() * t[kk][kk]).re)).collect();
    let mut mmat = f.adjoint() * f;
    for m in 0..k {
        let c = lambda[m] * w[m] * u[m].norm_sqr();
        mmat += &q[m] * q[m].adjoint() * Complex64::new(c, 0.0);
    }
    let g: Vec<CVec> = (0..k)
        .map(|kk| {
            let b = &q[kk] * (Complex64::new(lambda[kk] * w[kk], 0.0) * u[kk]);
            if lambda[kk] == 0.0 {
                CVec::zeros(s)
            } else {
                hermitian_solve(&mmat, &b)
            }
        })
        .collect();
    Sweep { q, t, d, u, w, mmat, g }
}

/// The WMMSE-reformulated objective at an explicit (u, w, G) triple.
pub fn wmmse_objective(
    f: &CMat,
    lambda: &[f64],
    h: &[CVec],
    g: &[CVec],
    u: &[Complex64],
    w: &[f64],
) -> f64 {
    let k = h.len();
    let mut obj: f64 = g.iter().map(|gk| (f * gk).norm_squared()).sum();
    for kk in 0..k {
        let q = f.adjoint() * &h[kk];
        let t: Vec<Complex64> = g.iter().map(|gi| q.dotc(gi)).collect();
        let d = t.iter().map(|v| v.norm_sqr()).sum::<f64>() + 1.0;
        let e = u[kk].norm_sqr() * d - 2.0 * (u[kk].conj() * t[kk]).re + 1.0;
        obj += lambda[kk] * (w[kk] * e - w[kk].ln());
    }
    obj
}

/// Objective value after each of `sweeps` block sweeps, starting from the
/// matched-filter initializer. Used by the monotonicity checks.
pub fn wmmse_sweep_objectives(
    theta: &[f64],
    lambda: &[f64],
    xi: &State,
    antennas: usize,
    rf_chains: usize,
    users: usize,
    sweeps: usize,
) -> Vec<f64> {
    let f = unpack_f(theta, antennas, rf_chains);
    let h = unpack_channels(xi, users, antennas);
    let mut g = matched_filter(&f, &h).0;
    let mut values = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        let sw = forward_sweep(&f, &h, lambda, &g);
        g = sw.g.clone();
        values.push(wmmse_objective(&f, lambda, &h, &g, &sw.u, &sw.w));
    }
    values
}

/// Matched-filter initializer g⁰_k = Fᴴh_k/‖Fᴴh_k‖; columns with vanishing
/// gain are zeroed. Returns the columns and the cached (q_k, ‖q_k‖) pairs.
fn matched_filter(f: &CMat, h: &[CVec]) -> (Vec<CVec>, Vec<(CVec, f64)>) {
    let mut cache = Vec::with_capacity(h.len());
    let g = h
        .iter()
        .map(|hk| {
            let q = f.adjoint() * hk;
            let n = q.norm();
            cache.push((q.clone(), n));
            if n < 1e-12 {
                CVec::zeros(f.ncols())
            } else {
                q / Complex64::new(n, 0.0)
            }
        })
        .collect();
    (g, cache)
}

pub struct WmmseSolver {
    pub antennas: usize,
    pub rf_chains: usize,
    pub users: usize,
    pub layers: usize,
}

struct WmmseInitAdjoint {
    f: CMat,
    h: Vec<CVec>,
    cache: Vec<(CVec, f64)>,
    users: usize,
}

impl LayerAdjoint for WmmseInitAdjoint {
    fn pull_back(&self, cotangent: &[f64]) -> AdjointSeeds {
        let s = self.f.ncols();
        let gbar = unpack_g(cotangent, s, self.users);
        let mut fbar = CMat::zeros(self.f.nrows(), s);
        for kk in 0..self.users {
            let (q, n) = &self.cache[kk];
            if *n < 1e-12 {
                continue;
            }
            // g = q/‖q‖: q̄ = ḡ/n − (Re(ḡᴴq)/n³) q
            let inner = gbar[kk].dotc(q).re;
            let qbar = &gbar[kk] / Complex64::new(*n, 0.0)
                - q * Complex64::new(inner / (n * n * n), 0.0);
            fbar += &self.h[kk] * qbar.adjoint();
        }
        AdjointSeeds {
            y_prev: vec![],
            x: theta_grad(&fbar, &self.f),
            lambda: vec![0.0; self.users],
        }
    }
}

struct WmmseLayerAdjoint {
    f: CMat,
    h: Vec<CVec>,
    lambda: Vec<f64>,
    g_prev: Vec<CVec>,
    sweep: Sweep,
}

impl LayerAdjoint for WmmseLayerAdjoint {
    fn pull_back(&self, cotangent: &[f64]) -> AdjointSeeds {
        let k = self.h.len();
        let s = self.f.ncols();
        let sw = &self.sweep;
        let gbar_out = unpack_g(cotangent, s, k);

        let mut qbar: Vec<CVec> = (0..k).map(|_| CVec::zeros(s)).collect();
        let mut ubar = vec![Complex64::new(0.0, 0.0); k];
        let mut wbar = vec![0.0_f64; k];
        let mut lbar = vec![0.0_f64; k];
        let mut mbar = CMat::zeros(s, s);

        // G step: g_k = M⁻¹ b_k with b_k = λ_k w_k u_k q_k, M Hermitian
        for kk in 0..k {
            if self.lambda[kk] == 0.0 {
                // forward returned exactly zero; no dependence except on λ_k,
                // where the one-sided derivative also vanishes at λ_k = 0
                continue;
            }
            let sk = hermitian_solve(&sw.mmat, &gbar_out[kk]);
            mbar -= &sk * sw.g[kk].adjoint();
            // b_k = c'_k q_k, c'_k = λ_k w_k u_k
            let cp = Complex64::new(self.lambda[kk] * sw.w[kk], 0.0) * sw.u[kk];
            let cpbar = sw.q[kk].dotc(&sk);
            qbar[kk] += &sk * cp.conj();
            lbar[kk] += (cpbar.conj() * sw.u[kk]).re * sw.w[kk];
            wbar[kk] += (cpbar.conj() * sw.u[kk]).re * self.lambda[kk];
            ubar[kk] += cpbar * self.lambda[kk] * sw.w[kk];
        }

        // M = FᴴF + Σ_m c_m q_m q_mᴴ, c_m = λ_m w_m |u_m|²
        let msym = &mbar + mbar.adjoint();
        let mut fbar = &self.f * msym.clone();
        for m in 0..k {
            let cbar = (sw.q[m].adjoint() * mbar.adjoint() * &sw.q[m])[(0, 0)].re;
            let usq = sw.u[m].norm_sqr();
            lbar[m] += cbar * sw.w[m] * usq;
            wbar[m] += cbar * self.lambda[m] * usq;
            ubar[m] += Complex64::new(cbar * self.lambda[m] * sw.w[m] * 2.0, 0.0) * sw.u[m];
            let c = self.lambda[m] * sw.w[m] * usq;
            qbar[m] += &msym * &sw.q[m] * Complex64::new(c, 0.0);
        }

        // w step: w_k = 1/(1 − Re(u_k* t_kk))
        let mut tbar = vec![vec![Complex64::new(0.0, 0.0); k]; k];
        for kk in 0..k {
            let betabar = wbar[kk] * sw.w[kk] * sw.w[kk];
            ubar[kk] += Complex64::new(betabar, 0.0) * sw.t[kk][kk];
            tbar[kk][kk] += Complex64::new(betabar, 0.0) * sw.u[kk];
        }

        // u step: u_k = t_kk/d_k, d_k = Σ_i |t_ki|² + 1
        for kk in 0..k {
            tbar[kk][kk] += ubar[kk] / Complex64::new(sw.d[kk], 0.0);
            let dbar = -(ubar[kk].conj() * sw.t[kk][kk]).re / (sw.d[kk] * sw.d[kk]);
            for i in 0..k {
                tbar[kk][i] += Complex64::new(2.0 * dbar, 0.0) * sw.t[kk][i];
            }
        }

        // t step: t_ki = q_kᴴ g_i^{prev}
        let mut gprev_bar: Vec<CVec> = (0..k).map(|_| CVec::zeros(s)).collect();
        for kk in 0..k {
            for i in 0..k {
                gprev_bar[i] += &sw.q[kk] * tbar[kk][i];
                qbar[kk] += &self.g_prev[i] * tbar[kk][i].conj();
            }
        }

        // q step: q_k = Fᴴ h_k
        for kk in 0..k {
            fbar += &self.h[kk] * qbar[kk].adjoint();
        }

        AdjointSeeds {
            y_prev: pack_g(&gprev_bar),
            x: theta_grad(&fbar, &self.f),
            lambda: lbar,
        }
    }
}

impl ShortTermSolver for WmmseSolver {
    fn kind(&self) -> &'static str {
        "wmmse"
    }

    fn num_layers(&self) -> usize {
        self.layers
    }

    fn dim_x(&self) -> usize {
        self.antennas * self.rf_chains
    }

    fn dim_lambda(&self) -> usize {
        self.users
    }

    fn init(
        &self,
        x: &[f64],
        _lambda: &[f64],
        xi: &State,
    ) -> Result<(Vec<f64>, Box<dyn LayerAdjoint>), Error> {
        let f = unpack_f(x, self.antennas, self.rf_chains);
        let h = unpack_channels(xi, self.users, self.antennas);
        let (g, cache) = matched_filter(&f, &h);
        let adj = WmmseInitAdjoint { f, h, cache, users: self.users };
        Ok((pack_g(&g), Box::new(adj)))
    }

    fn layer(
        &self,
        _j: usize,
        y_prev: &[f64],
        x: &[f64],
        lambda: &[f64],
        xi: &State,
    ) -> Result<(Vec<f64>, Box<dyn LayerAdjoint>), Error> {
        let f = unpack_f(x, self.antennas, self.rf_chains);
        let h = unpack_channels(xi, self.users, self.antennas);
        let g_prev = unpack_g(y_prev, self.rf_chains, self.users);
        let sweep = forward_sweep(&f, &h, lambda, &g_prev);
        let y = pack_g(&sweep.g);
        let adj = WmmseLayerAdjoint { f, h, lambda: lambda.to_vec(), g_prev, sweep };
        Ok((y, Box::new(adj)))
    }
}

//! Gradient projection: y^j = Proj_{𝒴(ξ)}[y^{j−1} − α_j ∘ ∂_y g_s].
//!
//! The feasible set is the box 𝒴 intersected with the problem's short-term
//! constraints, which this solver requires to be affine in y. Projection onto
//! the intersection uses Dykstra's alternating scheme; the reverse pass maps
//! cotangents through the projection's active face (frozen from the forward
//! pass) and through the gradient step via second-order products. Diminishing
//! step sizes are treated as constants by the reverse pass.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::problem::{short_term_objective, SecondOrder, State};
use crate::shortterm::ShortTermSolver;
use crate::unroll::{AdjointSeeds, ConstantAdjoint, LayerAdjoint};

/// Step-size rule of the GP layers.
#[derive(Debug, Clone)]
pub enum GpStepRule {
    /// α_j = α₀/√j; α₀ defaults to 1/L̂ with L̂ a power-iteration estimate of
    /// the short-term Hessian norm at y^0.
    Diminishing { alpha0: Option<f64> },
    /// Per-layer vector step sizes read from the tail of x. The problem's
    /// dim_x must equal base_dim_x + J·n_y and its sample functions must not
    /// depend on the tail block.
    Trainable { base_dim_x: usize },
}

pub struct GpSolver<P: SecondOrder> {
    problem: Arc<P>,
    layers: usize,
    step: GpStepRule,
}

impl<P: SecondOrder> GpSolver<P> {
    pub fn new(problem: Arc<P>, layers: usize, step: GpStepRule) -> Self {
        GpSolver { problem, layers, step }
    }

    fn alpha_for_layer(&self, j: usize, x: &[f64], lambda: &[f64], xi: &State) -> Vec<f64> {
        let n_y = self.problem.dim_y();
        match &self.step {
            GpStepRule::Diminishing { alpha0 } => {
                let a0 = alpha0.unwrap_or_else(|| {
                    let l = estimate_lipschitz(self.problem.as_ref(), x, lambda, xi);
                    if l > 1e-12 {
                        1.0 / l
                    } else {
                        1.0
                    }
                });
                vec![a0 / (j as f64).sqrt(); n_y]
            }
            GpStepRule::Trainable { base_dim_x } => {
                let off = base_dim_x + (j - 1) * n_y;
                x[off..off + n_y].to_vec()
            }
        }
    }

    fn affine_constraints(&self, xi: &State) -> Vec<(Vec<f64>, f64)> {
        // h_j affine: the gradient is the constant normal a_j and the offset
        // follows from the value at any probe point.
        let probe = self.problem.domain_y().center();
        (1..=self.problem.num_short())
            .map(|j| {
                let h = self.problem.sample_h(j, &probe, xi);
                let dot: f64 = h.grad_y.iter().zip(&probe).map(|(a, p)| a * p).sum();
                (h.grad_y, dot - h.value) // a_jᵀy ≤ r_j
            })
            .collect()
    }
}

/// Power-iteration estimate of ‖∂²_y g_s‖ at the domain center.
fn estimate_lipschitz<P: SecondOrder>(problem: &P, x: &[f64], lambda: &[f64], xi: &State) -> f64 {
    let n_y = problem.dim_y();
    let y0 = problem.domain_y().center();
    let hvp = |v: &[f64]| -> Vec<f64> {
        let (mut hy, _) = problem.g_hvp(0, x, &y0, xi, v);
        for i in 1..=problem.num_long() {
            let (hyi, _) = problem.g_hvp(i, x, &y0, xi, v);
            for (a, b) in hy.iter_mut().zip(&hyi) {
                *a += lambda[i - 1] * b;
            }
        }
        hy
    };
    let mut v = vec![1.0 / (n_y as f64).sqrt(); n_y];
    v[0] += 1e-3;
    let mut norm = 0.0;
    for _ in 0..50 {
        let hv = hvp(&v);
        norm = hv.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return 0.0;
        }
        v = hv.iter().map(|a| a / norm).collect();
    }
    norm
}

/// Result of one projection onto box ∩ {a_jᵀy ≤ r_j}.
struct Projection {
    y: Vec<f64>,
    /// Coordinates pinned at a box face.
    box_active: Vec<bool>,
    /// Indices of halfspaces active at the projected point.
    active_halfspaces: Vec<usize>,
}

fn project_feasible(
    domain: &crate::problem::BoxDomain,
    halfspaces: &[(Vec<f64>, f64)],
    z: &[f64],
) -> Result<Projection, Error> {
    let y = if halfspaces.is_empty() {
        domain.project(z)
    } else {
        dykstra(domain, halfspaces, z)?
    };
    let box_active: Vec<bool> = y
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            (v - domain.lower()[k]).abs() <= 1e-9 || (domain.upper()[k] - v).abs() <= 1e-9
        })
        .collect();
    let active_halfspaces = halfspaces
        .iter()
        .enumerate()
        .filter(|(_, (a, r))| {
            let val: f64 = a.iter().zip(&y).map(|(ai, yi)| ai * yi).sum();
            let scale = a.iter().map(|ai| ai * ai).sum::<f64>().sqrt().max(1.0);
            (val - r).abs() <= 1e-8 * scale
        })
        .map(|(j, _)| j)
        .collect();
    Ok(Projection { y, box_active, active_halfspaces })
}

fn dykstra(
    domain: &crate::problem::BoxDomain,
    halfspaces: &[(Vec<f64>, f64)],
    z: &[f64],
) -> Result<Vec<f64>, Error> {
    let n = z.len();
    let sets = halfspaces.len() + 1;
    let mut p = z.to_vec();
    let mut corrections = vec![vec![0.0; n]; sets];
    for _ in 0..500 {
        let mut moved = 0.0_f64;
        for s in 0..sets {
            let shifted: Vec<f64> =
                p.iter().zip(&corrections[s]).map(|(a, c)| a + c).collect();
            let projected = if s == 0 {
                domain.project(&shifted)
            } else {
                let (a, r) = &halfspaces[s - 1];
                project_halfspace(&shifted, a, *r)
            };
            for k in 0..n {
                corrections[s][k] = shifted[k] - projected[k];
                moved = moved.max((projected[k] - p[k]).abs());
            }
            p = projected;
        }
        if moved < 1e-13 {
            break;
        }
    }
    // infeasibility check: all constraints must hold at the limit point
    for (a, r) in halfspaces {
        let val: f64 = a.iter().zip(&p).map(|(ai, yi)| ai * yi).sum();
        let scale = a.iter().map(|ai| ai * ai).sum::<f64>().sqrt().max(1.0);
        if val - r > 1e-7 * scale {
            return Err(Error::ProjectionInfeasible);
        }
    }
    Ok(p)
}

fn project_halfspace(v: &[f64], a: &[f64], r: f64) -> Vec<f64> {
    let dot: f64 = a.iter().zip(v).map(|(ai, vi)| ai * vi).sum();
    if dot <= r {
        return v.to_vec();
    }
    let nrm2: f64 = a.iter().map(|ai| ai * ai).sum();
    let scale = (dot - r) / nrm2;
    v.iter().zip(a).map(|(vi, ai)| vi - scale * ai).collect()
}

/// Applies the orthogonal projector onto the active face's tangent space:
/// zero on pinned box coordinates, then orthogonal to active normals.
fn face_project(d: &[f64], box_active: &[bool], normals: &[Vec<f64>]) -> Vec<f64> {
    let n = d.len();
    let mut out: Vec<f64> =
        d.iter().zip(box_active).map(|(&v, &a)| if a { 0.0 } else { v }).collect();
    if normals.is_empty() {
        return out;
    }
    // normals restricted to free coordinates
    let restricted: Vec<Vec<f64>> = normals
        .iter()
        .map(|a| {
            a.iter().zip(box_active).map(|(&v, &act)| if act { 0.0 } else { v }).collect()
        })
        .collect();
    let k = restricted.len();
    let mut gram = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            gram[(i, j)] = restricted[i].iter().zip(&restricted[j]).map(|(a, b)| a * b).sum();
        }
        gram[(i, i)] += 1e-12;
    }
    let rhs = DVector::from_iterator(
        k,
        restricted.iter().map(|a| a.iter().zip(&out).map(|(ai, di)| ai * di).sum::<f64>()),
    );
    if let Some(mu) = gram.lu().solve(&rhs) {
        for (i, a) in restricted.iter().enumerate() {
            for kk in 0..n {
                out[kk] -= mu[i] * a[kk];
            }
        }
    }
    out
}

struct GpAdjoint<P: SecondOrder> {
    problem: Arc<P>,
    x: Vec<f64>,
    lambda: Vec<f64>,
    xi: State,
    y_prev: Vec<f64>,
    alpha: Vec<f64>,
    box_active: Vec<bool>,
    active_normals: Vec<Vec<f64>>,
    /// Tail slot of x holding this layer's trainable step sizes, if any.
    trainable_offset: Option<usize>,
}

impl<P: SecondOrder> LayerAdjoint for GpAdjoint<P> {
    fn pull_back(&self, cotangent: &[f64]) -> AdjointSeeds {
        let p = self.problem.as_ref();
        let (m, n_x) = (p.num_long(), p.dim_x());
        // through the projection's active face
        let z_bar = face_project(cotangent, &self.box_active, &self.active_normals);
        let w: Vec<f64> = self.alpha.iter().zip(&z_bar).map(|(a, v)| a * v).collect();
        // through the gradient step z = y_prev − α ∘ ∇_y g_s(y_prev)
        let (hy0, hx0) = p.g_hvp(0, &self.x, &self.y_prev, &self.xi, &w);
        let mut hy = hy0;
        let mut hx = hx0;
        let mut bar_lambda = vec![0.0; m];
        for i in 1..=m {
            let (hyi, hxi) = p.g_hvp(i, &self.x, &self.y_prev, &self.xi, &w);
            let li = self.lambda[i - 1];
            for (a, b) in hy.iter_mut().zip(&hyi) {
                *a += li * b;
            }
            for (a, b) in hx.iter_mut().zip(&hxi) {
                *a += li * b;
            }
            let gi = p.sample_g(i, &self.x, &self.y_prev, &self.xi);
            bar_lambda[i - 1] = -w.iter().zip(&gi.grad_y).map(|(a, b)| a * b).sum::<f64>();
        }
        let bar_y_prev: Vec<f64> = z_bar.iter().zip(&hy).map(|(z, h)| z - h).collect();
        let mut bar_x: Vec<f64> = hx.iter().map(|h| -h).collect();
        bar_x.resize(n_x, 0.0);
        if let Some(off) = self.trainable_offset {
            let (_, gs) = short_term_objective(p, &self.x, &self.lambda, &self.y_prev, &self.xi);
            for k in 0..p.dim_y() {
                bar_x[off + k] = -z_bar[k] * gs[k];
            }
        }
        AdjointSeeds { y_prev: bar_y_prev, x: bar_x, lambda: bar_lambda }
    }
}

impl<P: SecondOrder + 'static> ShortTermSolver for GpSolver<P> {
    fn kind(&self) -> &'static str {
        "gradient-projection"
    }

    fn num_layers(&self) -> usize {
        self.layers
    }

    fn dim_x(&self) -> usize {
        self.problem.dim_x()
    }

    fn dim_lambda(&self) -> usize {
        self.problem.num_long()
    }

    fn init(
        &self,
        _x: &[f64],
        _lambda: &[f64],
        _xi: &State,
    ) -> Result<(Vec<f64>, Box<dyn LayerAdjoint>), Error> {
        let y0 = self.problem.domain_y().center();
        let adj = ConstantAdjoint {
            dim_y_prev: y0.len(),
            dim_x: self.problem.dim_x(),
            dim_lambda: self.problem.num_long(),
        };
        Ok((y0, Box::new(adj)))
    }

    fn layer(
        &self,
        j: usize,
        y_prev: &[f64],
        x: &[f64],
        lambda: &[f64],
        xi: &State,
    ) -> Result<(Vec<f64>, Box<dyn LayerAdjoint>), Error> {
        let alpha = self.alpha_for_layer(j, x, lambda, xi);
        let (_, grad) = short_term_objective(self.problem.as_ref(), x, lambda, y_prev, xi);
        let z: Vec<f64> = y_prev
            .iter()
            .zip(alpha.iter().zip(&grad))
            .map(|(&y, (&a, &g))| y - a * g)
            .collect();
        let halfspaces = self.affine_constraints(xi);
        let proj = project_feasible(&self.problem.domain_y(), &halfspaces, &z)?;
        let active_normals: Vec<Vec<f64>> =
            proj.active_halfspaces.iter().map(|&idx| halfspaces[idx].0.clone()).collect();
        let trainable_offset = match &self.step {
            GpStepRule::Trainable { base_dim_x } => {
                Some(base_dim_x + (j - 1) * self.problem.dim_y())
            }
            GpStepRule::Diminishing { .. } => None,
        };
        let adj = GpAdjoint {
            problem: Arc::clone(&self.problem),
            x: x.to_vec(),
            lambda: lambda.to_vec(),
            xi: xi.clone(),
            y_prev: y_prev.to_vec(),
            alpha,
            box_active: proj.box_active,
            active_normals,
            trainable_offset,
        };
        Ok((proj.y, Box::new(adj)))
    }

    fn provides_multipliers(&self) -> bool {
        self.problem.num_short() > 0
    }

    /// Active-set multipliers at the final iterate: nonnegative least squares
    /// of ∂_y g_s against the active constraint normals on free coordinates;
    /// zero for inactive constraints.
    fn multipliers(
        &self,
        y: &[f64],
        x: &[f64],
        lambda: &[f64],
        xi: &State,
    ) -> Result<Option<Vec<f64>>, Error> {
        let n = self.problem.num_short();
        if n == 0 {
            return Ok(None);
        }
        let halfspaces = self.affine_constraints(xi);
        let domain = self.problem.domain_y();
        let box_active: Vec<bool> = y
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                (v - domain.lower()[k]).abs() <= 1e-9 || (domain.upper()[k] - v).abs() <= 1e-9
            })
            .collect();
        let active: Vec<usize> = halfspaces
            .iter()
            .enumerate()
            .filter(|(_, (a, r))| {
                let val: f64 = a.iter().zip(y).map(|(ai, yi)| ai * yi).sum();
                let scale = a.iter().map(|ai| ai * ai).sum::<f64>().sqrt().max(1.0);
                (val - r).abs() <= 1e-7 * scale
            })
            .map(|(jdx, _)| jdx)
            .collect();
        let mut nu = vec![0.0; n];
        if active.is_empty() {
            return Ok(Some(nu));
        }
        let (_, gs) = short_term_objective(self.problem.as_ref(), x, lambda, y, xi);
        let restrict = |v: &[f64]| -> Vec<f64> {
            v.iter().zip(&box_active).map(|(&a, &act)| if act { 0.0 } else { a }).collect()
        };
        let g_free = restrict(&gs);
        let normals: Vec<Vec<f64>> =
            active.iter().map(|&jdx| restrict(&halfspaces[jdx].0)).collect();
        let k = normals.len();
        let mut gram = DMatrix::zeros(k, k);
        for i in 0..k {
            for jj in 0..k {
                gram[(i, jj)] = normals[i].iter().zip(&normals[jj]).map(|(a, b)| a * b).sum();
            }
            gram[(i, i)] += 1e-12;
        }
        let rhs = DVector::from_iterator(
            k,
            normals.iter().map(|a| -a.iter().zip(&g_free).map(|(ai, gi)| ai * gi).sum::<f64>()),
        );
        if let Some(sol) = gram.lu().solve(&rhs) {
            for (slot, &jdx) in active.iter().enumerate() {
                nu[jdx] = sol[slot].max(0.0);
            }
        }
        Ok(Some(nu))
    }
}

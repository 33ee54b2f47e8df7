//! Gradient-descent refinement of per-view depth and normal fields.
//!
//! The objective is
//! `λ_data · Σ_views mean|z − z_obs| + Σ_views ℒ_svgeo + λ3 · Σ_pairs ℒ_mvgeo`,
//! where for each view `D = z`, `N_d = normal_from_depth(z)` and `D̂` is the mean over
//! the 4-neighbors `q` of the depth at which the plane through `q` (normal `n_q`)
//! crosses the ray of `p`. With two or more views every view is paired with the next
//! one (cyclically) as its neighbor.
//!
//! Depth is stored as `u = ln z`. A step moves `u` by `−η · (∂ℒ/∂z) / z`, so to first
//! order the depth takes a plain gradient step while staying positive. Normals take a
//! plain step and are renormalized.
//!
//! In [`GradientMode::Analytic`] the weight map, regions, mv samples and accepted
//! patches are frozen at the current state. The single-view terms and the `D̂` chain are
//! differentiated in closed form; the dependence of `N_d` on depth and of the patch
//! normals on depth use local central differences, since each depth value only touches
//! a few stencils. [`GradientMode::FiniteDifference`] differentiates the full objective
//! by central differences in every parameter.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{check_dims, Image, ScalarField, Vec3, VectorField};
use crate::geom::{backproject_depth, normal_from_depth, point_normal, Camera, GRAZING_EPS};
use crate::mv_loss::{
    mv_sampling, mvgeo_loss, neighbor_points_in_current, patch_pair_term, MvConfig, MvView, SampleSet,
};
use crate::sum::{mean, KahanSum};
use crate::sv_loss::{discrepancy_field, sign, SvConfig, SvInputs, SvProblem};
use crate::synth::ViewBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    FiniteDifference,
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub step_size: f64,
    /// Multiplier on `step_size` for the normal update.
    pub normal_step_scale: f64,
    pub iterations: usize,
    pub lambda_data: f64,
    pub mode: GradientMode,
    /// Finite-difference step, relative: applied to `ln z` and to unit normal components.
    pub fd_step: f64,
    /// Include `ℒ_svgeo`. It has no overall weight of its own, so this is how it is ablated.
    pub single_view: bool,
    /// Include `λ3 · ℒ_mvgeo`.
    pub multi_view: bool,
    pub sv: SvConfig,
    pub mv: MvConfig,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            step_size: 1.0,
            normal_step_scale: 3.0,
            iterations: 200,
            lambda_data: 0.5,
            mode: GradientMode::Analytic,
            fd_step: 1e-4,
            single_view: true,
            multi_view: true,
            sv: SvConfig::default(),
            mv: MvConfig::default(),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::param("step_size", "must be positive and finite"));
        }
        if !(self.normal_step_scale >= 0.0 && self.normal_step_scale.is_finite()) {
            return Err(Error::param("normal_step_scale", "must be >= 0 and finite"));
        }
        if self.iterations == 0 {
            return Err(Error::param("iterations", "must be >= 1"));
        }
        if !(self.lambda_data >= 0.0 && self.lambda_data.is_finite()) {
            return Err(Error::param("lambda_data", "must be >= 0 and finite"));
        }
        if !(self.fd_step > 0.0 && self.fd_step < 1.0) {
            return Err(Error::param("fd_step", "must lie in (0, 1)"));
        }
        self.sv.validate()?;
        self.mv.validate()
    }
}

/// Observed (possibly corrupted) inputs for one view. The optimizer never sees ground truth.
#[derive(Debug, Clone)]
pub struct Observation {
    pub image: Image,
    pub depth: ScalarField,
    pub normals: VectorField,
    pub cam: Camera,
}

impl From<&ViewBundle> for Observation {
    fn from(b: &ViewBundle) -> Self {
        Self {
            image: b.rgb.clone(),
            depth: b.depth.clone(),
            normals: b.normals.clone(),
            cam: b.cam,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: usize,
    pub total: f64,
    /// Unweighted data term, summed over views.
    pub data: f64,
    /// `ℒ_svn` (including its `λ1 · ℒ_cross` part), summed over views.
    pub svn: f64,
    pub cross: f64,
    pub tv: f64,
    pub svgeo: f64,
    /// Unweighted `ℒ_mvgeo`, summed over view pairs.
    pub mvgeo: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "iteration,total,data,svn,cross,tv,mvgeo";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iteration, self.total, self.data, self.svn, self.cross, self.tv, self.mvgeo
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub log_depth: Vec<ScalarField>,
    pub normals: Vec<VectorField>,
    pub iteration: usize,
    /// Loss before each completed step.
    pub history: Vec<LossReport>,
}

impl OptimState {
    /// Starts from the observed depth and normals.
    pub fn from_observations(obs: &[Observation]) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::param("views", "at least one view is required"));
        }
        let mut log_depth = Vec::with_capacity(obs.len());
        for o in obs {
            check_dims(o.cam.dims(), o.depth.dims())?;
            check_dims(o.cam.dims(), o.normals.dims())?;
            check_dims(o.cam.dims(), o.image.dims())?;
            let (w, h) = o.depth.dims();
            for i in 0..h {
                for j in 0..w {
                    let d = o.depth.get(i, j);
                    if d <= 0.0 {
                        return Err(Error::NonPositiveDepth { i, j, value: d });
                    }
                }
            }
            log_depth.push(o.depth.map(f64::ln));
        }
        Ok(Self {
            log_depth,
            normals: obs.iter().map(|o| o.normals.clone()).collect(),
            iteration: 0,
            history: Vec::new(),
        })
    }

    pub fn depth(&self, view: usize) -> ScalarField {
        self.log_depth[view].map(f64::exp)
    }

    pub fn depths(&self) -> Vec<ScalarField> {
        (0..self.log_depth.len()).map(|k| self.depth(k)).collect()
    }

    fn check(&self, obs: &[Observation]) -> Result<()> {
        if self.log_depth.len() != obs.len() || self.normals.len() != obs.len() {
            return Err(Error::param("views", "state and observations differ in view count"));
        }
        for (k, o) in obs.iter().enumerate() {
            check_dims(o.depth.dims(), self.log_depth[k].dims())?;
            check_dims(o.depth.dims(), self.normals[k].dims())?;
        }
        Ok(())
    }
}

/// `D̂` from the planes of the 4-neighbors. A neighbor whose plane is (nearly) parallel
/// to the ray of `p` is skipped; with no usable neighbor `D̂ = z`.
pub fn neighbor_plane_depth(z: &ScalarField, normals: &VectorField, cam: &Camera) -> Result<ScalarField> {
    check_dims(cam.dims(), z.dims())?;
    check_dims(cam.dims(), normals.dims())?;
    let (w, h) = z.dims();
    Ok(ScalarField::from_fn(w, h, |i, j| {
        let rp = cam.ray(i, j);
        let mut acc = KahanSum::new();
        let mut count = 0usize;
        for (qi, qj) in four_neighbors(i, j, w, h) {
            let nq = normals.get(qi, qj);
            let denom = nq.dot(&rp);
            if denom.abs() >= GRAZING_EPS {
                acc.add(z.get(qi, qj) * nq.dot(&cam.ray(qi, qj)) / denom);
                count += 1;
            }
        }
        if count == 0 {
            z.get(i, j)
        } else {
            acc.value() / count as f64
        }
    }))
}

fn four_neighbors(i: usize, j: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    let up = (i > 0).then(|| (i - 1, j));
    let down = (i + 1 < h).then(|| (i + 1, j));
    let left = (j > 0).then(|| (i, j - 1));
    let right = (j + 1 < w).then(|| (i, j + 1));
    up.into_iter().chain(down).chain(left).chain(right)
}

struct Derived {
    z: ScalarField,
    depth_normals: VectorField,
    unbiased: ScalarField,
}

fn derive(z: ScalarField, normals: &VectorField, cam: &Camera) -> Result<Derived> {
    let depth_normals = normal_from_depth(&z, cam)?.normals;
    let unbiased = neighbor_plane_depth(&z, normals, cam)?;
    Ok(Derived {
        z,
        depth_normals,
        unbiased,
    })
}

fn neighbor_of(view: usize, n_views: usize) -> Option<usize> {
    (n_views >= 2).then(|| (view + 1) % n_views)
}

fn evaluate(
    depths: &[ScalarField],
    normals: &[VectorField],
    obs: &[Observation],
    cfg: &OptimConfig,
) -> Result<LossReport> {
    let derived = depths
        .iter()
        .zip(normals)
        .zip(obs)
        .map(|((z, n), o)| derive(z.clone(), n, &o.cam))
        .collect::<Result<Vec<_>>>()?;
    let mut r = LossReport::default();
    for (k, (d, o)) in derived.iter().zip(obs).enumerate() {
        r.data += mean(d.z.data().iter().zip(o.depth.data()).map(|(a, b)| (a - b).abs()));
        if !cfg.single_view {
            continue;
        }
        let inputs = SvInputs {
            image: &o.image,
            depth: &d.z,
            unbiased: &d.unbiased,
            normals: &normals[k],
            depth_normals: &d.depth_normals,
        };
        let sv = SvProblem::new(&inputs, &cfg.sv)?.evaluate(&normals[k], &discrepancy_field(&d.z, &d.unbiased)?)?;
        r.svn += sv.l_svn;
        r.cross += sv.l_cross;
        r.tv += sv.tv_normal;
        r.svgeo += sv.l_svgeo;
    }
    for (c, dc) in derived.iter().enumerate() {
        if !cfg.multi_view {
            break;
        }
        let Some(n) = neighbor_of(c, obs.len()) else { break };
        let dn = &derived[n];
        let out = mvgeo_loss(
            &mv_view(dc, &obs[c].cam),
            &mv_view(dn, &obs[n].cam),
            &cfg.mv,
        )?;
        r.mvgeo += out.report.loss;
    }
    r.total = cfg.lambda_data * r.data + r.svgeo + cfg.mv.lambda3 * r.mvgeo;
    Ok(r)
}

fn mv_view<'a>(d: &'a Derived, cam: &'a Camera) -> MvView<'a> {
    MvView {
        depth: &d.z,
        rendered: &d.z,
        unbiased: &d.unbiased,
        cam,
    }
}

/// Objective and per-term breakdown at `state`.
pub fn total_loss(state: &OptimState, obs: &[Observation], cfg: &OptimConfig) -> Result<LossReport> {
    state.check(obs)?;
    let mut r = evaluate(&state.depths(), &state.normals, obs, cfg)?;
    r.iteration = state.iteration;
    Ok(r)
}

/// `∂ℒ/∂z` and `∂ℒ/∂N` per view.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub depth: Vec<ScalarField>,
    pub normals: Vec<VectorField>,
}

/// Gradient in the configured mode, together with the loss at `state`.
pub fn gradients(state: &OptimState, obs: &[Observation], cfg: &OptimConfig) -> Result<(LossReport, Gradients)> {
    let report = total_loss(state, obs, cfg)?;
    let g = match cfg.mode {
        GradientMode::Analytic => analytic_gradients(state, obs, cfg)?,
        GradientMode::FiniteDifference => fd_gradients(state, obs, cfg)?,
    };
    Ok((report, g))
}

fn analytic_gradients(state: &OptimState, obs: &[Observation], cfg: &OptimConfig) -> Result<Gradients> {
    let depths = state.depths();
    let derived = depths
        .iter()
        .zip(&state.normals)
        .zip(obs)
        .map(|((z, n), o)| derive(z.clone(), n, &o.cam))
        .collect::<Result<Vec<_>>>()?;
    let mut g_z: Vec<ScalarField> = Vec::with_capacity(obs.len());
    let mut g_n: Vec<VectorField> = Vec::with_capacity(obs.len());

    for (k, (d, o)) in derived.iter().zip(obs).enumerate() {
        let (w, h) = d.z.dims();
        let normals = &state.normals[k];
        let inv_hw = 1.0 / (w * h) as f64;
        let mut gz = ScalarField::from_fn(w, h, |i, j| {
            cfg.lambda_data * sign(d.z.get(i, j) - o.depth.get(i, j)) * inv_hw
        });
        if !cfg.single_view {
            g_z.push(gz);
            g_n.push(VectorField::filled(w, h, Vec3::zeros()));
            continue;
        }

        let inputs = SvInputs {
            image: &o.image,
            depth: &d.z,
            unbiased: &d.unbiased,
            normals,
            depth_normals: &d.depth_normals,
        };
        let problem = SvProblem::new(&inputs, &cfg.sv)?;
        let delta = discrepancy_field(&d.z, &d.unbiased)?;
        let sv = problem.gradients(normals, &delta)?;
        let mut gn = sv.normals;

        chain_delta(&sv.delta, &d.z, normals, &o.cam, &mut gz, &mut gn);

        // ∂ℒ/∂N_d on the frozen rich ∩ trust region, pushed through N_d(z).
        let m = problem.regions.rich_trust.count();
        if m > 0 {
            let inv_m = 1.0 / m as f64;
            let g_nd = VectorField::from_fn(w, h, |i, j| {
                if problem.regions.rich_trust.get(i, j) {
                    (d.depth_normals.get(i, j) - normals.get(i, j)).map(sign) * (problem.regions.weights.get(i, j) * inv_m)
                } else {
                    Vec3::zeros()
                }
            });
            chain_depth_normals(&g_nd, &d.z, &o.cam, &mut gz)?;
        }
        g_z.push(gz);
        g_n.push(gn);
    }

    if cfg.multi_view && cfg.mv.lambda3 != 0.0 && cfg.mv.s > 0 {
        for c in 0..obs.len() {
            let Some(n) = neighbor_of(c, obs.len()) else { break };
            let (gc, gnb) = mv_depth_gradients(&derived[c], &derived[n], &obs[c].cam, &obs[n].cam, &cfg.mv)?;
            add_into(&mut g_z[c], &gc, cfg.mv.lambda3);
            add_into(&mut g_z[n], &gnb, cfg.mv.lambda3);
        }
    }
    Ok(Gradients {
        depth: g_z,
        normals: g_n,
    })
}

fn add_into(dst: &mut ScalarField, src: &ScalarField, scale: f64) {
    for (a, b) in dst.data_mut().iter_mut().zip(src.data()) {
        *a += scale * b;
    }
}

/// Pushes `∂ℒ/∂δ` through `δ_p = z_p − D̂_p(z, N)`.
fn chain_delta(
    g_delta: &ScalarField,
    z: &ScalarField,
    normals: &VectorField,
    cam: &Camera,
    gz: &mut ScalarField,
    gn: &mut VectorField,
) {
    let (w, h) = z.dims();
    for i in 0..h {
        for j in 0..w {
            let gd = g_delta.get(i, j);
            if gd == 0.0 {
                continue;
            }
            gz.set(i, j, gz.get(i, j) + gd);
            let rp = cam.ray(i, j);
            let used: Vec<(usize, usize)> = four_neighbors(i, j, w, h)
                .filter(|&(qi, qj)| normals.get(qi, qj).dot(&rp).abs() >= GRAZING_EPS)
                .collect();
            if used.is_empty() {
                // D̂ = z here, so δ ≡ 0 locally.
                gz.set(i, j, gz.get(i, j) - gd);
                continue;
            }
            let c = gd / used.len() as f64;
            for (qi, qj) in used {
                let nq = normals.get(qi, qj);
                let rq = cam.ray(qi, qj);
                let a = nq.dot(&rq);
                let b = nq.dot(&rp);
                let zq = z.get(qi, qj);
                gz.set(qi, qj, gz.get(qi, qj) - c * a / b);
                let dn = (rq * b - rp * a) * (zq / (b * b));
                gn.set(qi, qj, gn.get(qi, qj) - dn * c);
            }
        }
    }
}

/// Adds `Σ_p g_nd[p] · ∂N_d[p]/∂z_k` to `gz[k]` by central differences in `z_k`.
fn chain_depth_normals(g_nd: &VectorField, z: &ScalarField, cam: &Camera, gz: &mut ScalarField) -> Result<()> {
    let (w, h) = z.dims();
    let mut points = backproject_depth(z, cam)?;
    for i in 0..h {
        for j in 0..w {
            let affected: Vec<(usize, usize)> = std::iter::once((i, j))
                .chain(four_neighbors(i, j, w, h))
                .filter(|&(a, b)| g_nd.get(a, b) != Vec3::zeros())
                .collect();
            if affected.is_empty() {
                continue;
            }
            let zk = z.get(i, j);
            let hstep = 1e-6 * zk;
            let ray = cam.ray(i, j);
            let eval = |pts: &VectorField| -> f64 {
                affected
                    .iter()
                    .map(|&(a, b)| point_normal(pts, a, b).map_or(0.0, |n| n.dot(&g_nd.get(a, b))))
                    .sum()
            };
            points.set(i, j, ray * (zk + hstep));
            let plus = eval(&points);
            points.set(i, j, ray * (zk - hstep));
            let minus = eval(&points);
            points.set(i, j, ray * zk);
            gz.set(i, j, gz.get(i, j) + (plus - minus) / (2.0 * hstep));
        }
    }
    Ok(())
}

/// Depth gradients of the pair loss with the sample set frozen.
fn mv_depth_gradients(
    cur: &Derived,
    nb: &Derived,
    cam_c: &Camera,
    cam_n: &Camera,
    cfg: &MvConfig,
) -> Result<(ScalarField, ScalarField)> {
    let (w, h) = cur.z.dims();
    let mut gc = ScalarField::filled(w, h, 0.0);
    let mut gn = ScalarField::filled(w, h, 0.0);
    let mut points_c = backproject_depth(&cur.z, cam_c)?;
    let sampling = mv_sampling(&mv_view(cur, cam_c), &mv_view(nb, cam_n), &points_c, cfg)?;
    let points_n = backproject_depth(&nb.z, cam_n)?;
    let mut points_n_in_c = neighbor_points_in_current(&points_n, cam_c, cam_n);
    let to_current = cam_c.extrinsic().compose(&cam_n.pose);

    let accepted: Vec<(usize, usize)> = accepted_pixels(&points_c, &points_n_in_c, &sampling.samples);
    if accepted.is_empty() {
        return Ok((gc, gn));
    }
    let inv = 1.0 / accepted.len() as f64;
    let term = |pc: &VectorField, pn: &VectorField, px| patch_pair_term(pc, pn, px).map_or(0.0, |t| t.0);
    for &(pi, pj) in &accepted {
        for i in pi - 1..=pi + 1 {
            for j in pj - 1..=pj + 1 {
                let ray_c = cam_c.ray(i, j);
                let zc = cur.z.get(i, j);
                let hc = 1e-6 * zc;
                points_c.set(i, j, ray_c * (zc + hc));
                let plus = term(&points_c, &points_n_in_c, (pi, pj));
                points_c.set(i, j, ray_c * (zc - hc));
                let minus = term(&points_c, &points_n_in_c, (pi, pj));
                points_c.set(i, j, ray_c * zc);
                gc.set(i, j, gc.get(i, j) + inv * (plus - minus) / (2.0 * hc));

                let ray_n = cam_n.ray(i, j);
                let zn = nb.z.get(i, j);
                let hn = 1e-6 * zn;
                let saved = points_n_in_c.get(i, j);
                points_n_in_c.set(i, j, to_current.transform_point(&(ray_n * (zn + hn))));
                let plus = term(&points_c, &points_n_in_c, (pi, pj));
                points_n_in_c.set(i, j, to_current.transform_point(&(ray_n * (zn - hn))));
                let minus = term(&points_c, &points_n_in_c, (pi, pj));
                points_n_in_c.set(i, j, saved);
                gn.set(i, j, gn.get(i, j) + inv * (plus - minus) / (2.0 * hn));
            }
        }
    }
    Ok((gc, gn))
}

fn accepted_pixels(points_c: &VectorField, points_n_in_c: &VectorField, samples: &SampleSet) -> Vec<(usize, usize)> {
    samples
        .pixels
        .iter()
        .copied()
        .filter(|&px| patch_pair_term(points_c, points_n_in_c, px).is_some())
        .collect()
}

fn fd_gradients(state: &OptimState, obs: &[Observation], cfg: &OptimConfig) -> Result<Gradients> {
    let h = cfg.fd_step;
    let depths = state.depths();
    // Parameter index: (view, pixel, component); component 3 is log-depth.
    let params: Vec<(usize, usize, usize)> = (0..obs.len())
        .flat_map(|k| {
            let n = depths[k].len();
            (0..n).flat_map(move |p| (0..4).map(move |c| (k, p, c)))
        })
        .collect();
    let probe = |&(k, p, c): &(usize, usize, usize)| -> Result<f64> {
        let eval = |sgn: f64| -> Result<f64> {
            let mut d = depths.clone();
            let mut n = state.normals.clone();
            if c == 3 {
                d[k].data_mut()[p] = (state.log_depth[k].data()[p] + sgn * h).exp();
            } else {
                n[k].data_mut()[p][c] += sgn * h;
            }
            Ok(evaluate(&d, &n, obs, cfg)?.total)
        };
        let g = (eval(1.0)? - eval(-1.0)?) / (2.0 * h);
        // ∂ℒ/∂u = z ∂ℒ/∂z for the log-depth parameter.
        Ok(if c == 3 { g / depths[k].data()[p] } else { g })
    };
    let values: Vec<f64> = params.par_iter().map(probe).collect::<Result<_>>()?;
    let mut g_z: Vec<ScalarField> = depths.iter().map(|d| ScalarField::filled(d.width(), d.height(), 0.0)).collect();
    let mut g_n: Vec<VectorField> = depths
        .iter()
        .map(|d| VectorField::filled(d.width(), d.height(), Vec3::zeros()))
        .collect();
    for (&(k, p, c), v) in params.iter().zip(values) {
        if c == 3 {
            g_z[k].data_mut()[p] = v;
        } else {
            g_n[k].data_mut()[p][c] = v;
        }
    }
    Ok(Gradients {
        depth: g_z,
        normals: g_n,
    })
}

/// One descent step. The pre-step loss is appended to the history.
pub fn step(state: &OptimState, obs: &[Observation], cfg: &OptimConfig) -> Result<OptimState> {
    cfg.validate()?;
    let (mut report, g) = gradients(state, obs, cfg)?;
    if !report.total.is_finite() {
        return Err(Error::Divergence {
            iteration: state.iteration,
        });
    }
    report.iteration = state.iteration;
    let eta = cfg.step_size;
    let eta_n = eta * cfg.normal_step_scale;
    let mut next = state.clone();
    for k in 0..obs.len() {
        for (u, gz) in next.log_depth[k].data_mut().iter_mut().zip(g.depth[k].data()) {
            let z = u.exp();
            *u -= eta * gz / z;
        }
        for (n, gn) in next.normals[k].data_mut().iter_mut().zip(g.normals[k].data()) {
            let moved = *n - gn * eta_n;
            let norm = moved.norm();
            if norm > 0.0 && norm.is_finite() {
                *n = moved / norm;
            }
        }
        // exp(u) must stay a positive finite depth.
        if next.log_depth[k].data().iter().any(|u| !(u.exp() > 0.0 && u.exp().is_finite()))
            || next.normals[k].data().iter().any(|n| !n.iter().all(|c| c.is_finite()))
        {
            return Err(Error::Divergence {
                iteration: state.iteration,
            });
        }
    }
    next.iteration += 1;
    next.history.push(report);
    Ok(next)
}

/// Runs `cfg.iterations` steps from `state`. Returns the final state and its loss.
pub fn run(state: OptimState, obs: &[Observation], cfg: &OptimConfig) -> Result<(OptimState, LossReport)> {
    run_with(state, obs, cfg, |_| {})
}

/// [`run`] with a callback after each step.
pub fn run_with(
    mut state: OptimState,
    obs: &[Observation],
    cfg: &OptimConfig,
    mut on_step: impl FnMut(&OptimState),
) -> Result<(OptimState, LossReport)> {
    cfg.validate()?;
    for _ in 0..cfg.iterations {
        state = step(&state, obs, cfg)?;
        on_step(&state);
    }
    let last = total_loss(&state, obs, cfg)?;
    if !last.total.is_finite() {
        return Err(Error::Divergence {
            iteration: state.iteration,
        });
    }
    Ok((state, last))
}

/// Root-mean-square angle in degrees between corresponding normals of all views.
pub fn rms_angular_error_deg(estimate: &[VectorField], truth: &[VectorField]) -> f64 {
    let sq = estimate.iter().zip(truth).flat_map(|(e, t)| {
        e.data().iter().zip(t.data()).map(|(a, b)| {
            let c = a.dot(b) / (a.norm() * b.norm());
            c.clamp(-1.0, 1.0).acos().to_degrees().powi(2)
        })
    });
    mean(sq).sqrt()
}

/// Root-mean-square depth difference over all views.
pub fn rms_depth_error(estimate: &[ScalarField], truth: &[ScalarField]) -> f64 {
    let sq = estimate
        .iter()
        .zip(truth)
        .flat_map(|(e, t)| e.data().iter().zip(t.data()).map(|(a, b)| (a - b).powi(2)));
    mean(sq).sqrt()
}
